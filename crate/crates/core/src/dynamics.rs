//! Gradient flow on the localized loss.
//!
//! Two integrators are provided: plain RK4 on `∂_t θ = -∇ℒ₀(θ)` and the
//! reparametrized flow in `s`-time, where the direction `θ̄` follows projected
//! gradient flow on the unit sphere and the norm obeys
//! `∂_s log‖θ‖ = -L·ℒ₀(θ̄)`. Closed-form norm growth along a fixed escape
//! direction and its inverse (the escape time) live here as well.

use crate::error::{Error, Result};
use crate::network::{loss_and_grad, param_norm, Dataset, NetworkParams};

pub const DEFAULT_DT: f64 = 1e-4;
pub const DEFAULT_DS: f64 = 1e-3;
pub const DEFAULT_BLOW_UP_NORM: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clock {
    /// Original gradient-flow time `t`.
    T,
    /// Reparametrized time `s` with `dt/ds = ‖θ‖^{2-L}`.
    S,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowStatus {
    Completed,
    /// Norm crossed the blow-up guard or became non-finite.
    Diverged,
    /// Zero loss and zero gradient: nothing moves.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub time: f64,
    pub param_norm: f64,
    pub loss: f64,
    /// Angle between `θ̄` and the initial `θ̄`, in radians.
    pub direction_drift: f64,
    pub snapshot: Option<NetworkParams>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub clock: Clock,
    pub depth: usize,
    pub samples: Vec<Sample>,
    pub status: FlowStatus,
    pub final_params: NetworkParams,
}

impl Trajectory {
    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectory has an initial sample")
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.time).collect()
    }

    pub fn norms(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.param_norm).collect()
    }

    pub fn max_drift(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| s.direction_drift)
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct FlowOptions {
    pub blow_up_norm: f64,
    /// Store a copy of the parameters every `n` steps.
    pub snapshot_every: Option<usize>,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            blow_up_norm: DEFAULT_BLOW_UP_NORM,
            snapshot_every: None,
        }
    }
}

/// Angle between two directions, stable near zero.
fn angle_between(a: &NetworkParams, a_norm: f64, b: &NetworkParams, b_norm: f64) -> f64 {
    if a_norm == 0.0 || b_norm == 0.0 {
        return 0.0;
    }
    let mut diff = a.scaled(1.0 / a_norm);
    diff.axpy(-1.0 / b_norm, b);
    let chord = diff.norm_sq().sqrt();
    2.0 * (0.5 * chord).min(1.0).asin()
}

fn rk4_step(
    theta: &NetworkParams,
    h: f64,
    mut field: impl FnMut(&NetworkParams) -> Result<NetworkParams>,
) -> Result<NetworkParams> {
    let k1 = field(theta)?;
    let k2 = field(&theta.add_scaled(0.5 * h, &k1))?;
    let k3 = field(&theta.add_scaled(0.5 * h, &k2))?;
    let k4 = field(&theta.add_scaled(h, &k3))?;
    let mut next = theta.clone();
    next.axpy(h / 6.0, &k1);
    next.axpy(h / 3.0, &k2);
    next.axpy(h / 3.0, &k3);
    next.axpy(h / 6.0, &k4);
    Ok(next)
}

fn check_step(step: f64, name: &str) -> Result<()> {
    if step > 0.0 && step.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name} must be positive, got {step}")))
    }
}

pub fn integrate_gf_t(
    params0: &NetworkParams,
    data: &Dataset,
    dt: f64,
    steps: usize,
) -> Result<Trajectory> {
    integrate_gf_t_with(params0, data, dt, steps, &FlowOptions::default())
}

/// Fixed-step RK4 on `∂_t θ = -∇ℒ₀(θ)`, sampled after every step.
pub fn integrate_gf_t_with(
    params0: &NetworkParams,
    data: &Dataset,
    dt: f64,
    steps: usize,
    opts: &FlowOptions,
) -> Result<Trajectory> {
    check_step(dt, "dt")?;
    let norm0 = param_norm(params0);
    let snapshot = |k: usize, p: &NetworkParams| {
        opts.snapshot_every
            .filter(|&n| n > 0 && k.is_multiple_of(n))
            .map(|_| p.clone())
    };

    let (loss0, _) = loss_and_grad(params0, data)?;
    let mut samples = vec![Sample {
        time: 0.0,
        param_norm: norm0,
        loss: loss0,
        direction_drift: 0.0,
        snapshot: snapshot(0, params0),
    }];
    let mut theta = params0.clone();
    let mut status = FlowStatus::Completed;

    for k in 1..=steps {
        let next = rk4_step(&theta, dt, |p| {
            let (_, g) = loss_and_grad(p, data)?;
            Ok(g.scaled(-1.0))
        })?;
        let norm = param_norm(&next);
        if !next.is_finite() || !norm.is_finite() || norm > opts.blow_up_norm {
            status = FlowStatus::Diverged;
            break;
        }
        theta = next;
        let (loss, _) = loss_and_grad(&theta, data)?;
        samples.push(Sample {
            time: k as f64 * dt,
            param_norm: norm,
            loss,
            direction_drift: angle_between(&theta, norm, params0, norm0),
            snapshot: snapshot(k, &theta),
        });
    }

    Ok(Trajectory {
        clock: Clock::T,
        depth: params0.depth(),
        samples,
        status,
        final_params: theta,
    })
}

pub fn integrate_gf_s(
    params0: &NetworkParams,
    data: &Dataset,
    ds: f64,
    steps: usize,
) -> Result<Trajectory> {
    integrate_gf_s_with(params0, data, ds, steps, &FlowOptions::default())
}

/// RK4 in `s`-time on the augmented state `(θ̄, log‖θ‖)` with
/// `∂_s θ̄ = -(I - θ̄θ̄ᵀ)∇ℒ₀(θ̄)` and `∂_s log‖θ‖ = -L·ℒ₀(θ̄)`.
/// `θ̄` is renormalized after every step. Sample times are `s` values; the
/// recorded loss is `ℒ₀(θ) = ‖θ‖^L ℒ₀(θ̄)`.
pub fn integrate_gf_s_with(
    params0: &NetworkParams,
    data: &Dataset,
    ds: f64,
    steps: usize,
    opts: &FlowOptions,
) -> Result<Trajectory> {
    check_step(ds, "ds")?;
    let norm0 = param_norm(params0);
    if norm0 == 0.0 {
        return Err(Error::Degenerate(
            "s-time flow needs a nonzero starting point".into(),
        ));
    }
    let depth = params0.depth() as f64;
    let snapshot = |k: usize, p: &NetworkParams, n: f64| {
        opts.snapshot_every
            .filter(|&e| e > 0 && k.is_multiple_of(e))
            .map(|_| p.scaled(n))
    };

    // Right-hand side: tangential descent direction and d(log norm)/ds.
    let field = |dir: &NetworkParams| -> Result<(NetworkParams, f64, f64, f64)> {
        let (loss, grad) = loss_and_grad(dir, data)?;
        let n2 = dir.norm_sq();
        let radial = dir.dot(&grad) / n2;
        let mut tangent = grad.scaled(-1.0);
        tangent.axpy(radial, dir);
        Ok((tangent, -depth * loss, loss, grad.norm_sq()))
    };

    let mut dir = params0.scaled(1.0 / norm0);
    let mut log_norm = norm0.ln();
    let (_, _, loss0, grad0) = field(&dir)?;
    let mut samples = vec![Sample {
        time: 0.0,
        param_norm: norm0,
        loss: loss0 * norm0.powf(depth),
        direction_drift: 0.0,
        snapshot: snapshot(0, &dir, norm0),
    }];
    if loss0 == 0.0 && grad0 == 0.0 {
        return Ok(Trajectory {
            clock: Clock::S,
            depth: params0.depth(),
            samples,
            status: FlowStatus::Stalled,
            final_params: params0.clone(),
        });
    }

    let mut status = FlowStatus::Completed;
    for k in 1..=steps {
        let (k1, l1, _, _) = field(&dir)?;
        let (k2, l2, _, _) = field(&dir.add_scaled(0.5 * ds, &k1))?;
        let (k3, l3, _, _) = field(&dir.add_scaled(0.5 * ds, &k2))?;
        let (k4, l4, _, _) = field(&dir.add_scaled(ds, &k3))?;
        let mut next = dir.clone();
        next.axpy(ds / 6.0, &k1);
        next.axpy(ds / 3.0, &k2);
        next.axpy(ds / 3.0, &k3);
        next.axpy(ds / 6.0, &k4);
        let next_log = log_norm + ds / 6.0 * (l1 + 2.0 * l2 + 2.0 * l3 + l4);

        let n = param_norm(&next);
        if n == 0.0 || !next.is_finite() || !next_log.is_finite() {
            status = FlowStatus::Diverged;
            break;
        }
        next.scale_mut(1.0 / n);
        let norm = next_log.exp();
        if !norm.is_finite() || norm > opts.blow_up_norm {
            status = FlowStatus::Diverged;
            break;
        }
        dir = next;
        log_norm = next_log;

        let (_, _, loss, grad) = field(&dir)?;
        samples.push(Sample {
            time: k as f64 * ds,
            param_norm: norm,
            loss: loss * norm.powf(depth),
            direction_drift: angle_between(&dir, 1.0, params0, norm0),
            snapshot: snapshot(k, &dir, norm),
        });
        if loss == 0.0 && grad == 0.0 {
            status = FlowStatus::Stalled;
            break;
        }
    }

    Ok(Trajectory {
        clock: Clock::S,
        depth: params0.depth(),
        samples,
        status,
        final_params: dir.scaled(log_norm.exp()),
    })
}

/// Time at which `dR/dt = L·rate·R^{L-1}` started from `norm0` diverges.
/// `None` for `L ≤ 2`, where growth is at most exponential.
pub fn blow_up_time(norm0: f64, rate: f64, depth: usize) -> Option<f64> {
    if depth <= 2 {
        return None;
    }
    let l = depth as f64;
    Some(norm0.powf(2.0 - l) / ((l - 2.0) * l * rate))
}

fn check_closed_form_args(norm0: f64, rate: f64, depth: usize) -> Result<()> {
    if !(norm0 > 0.0 && norm0.is_finite()) {
        return Err(Error::InvalidInput(format!("norm0 must be positive, got {norm0}")));
    }
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::InvalidInput(format!("rate must be positive, got {rate}")));
    }
    if depth == 0 {
        return Err(Error::InvalidInput("depth must be at least 1".into()));
    }
    Ok(())
}

/// Norm after `delta_t` of gradient flow along a fixed escape direction:
/// the solution of `dR/dt = L·rate·R^{L-1}`, `R(0) = norm0`.
///
/// `rate` is `-ℒ₀(θ̄)` for the *unit* direction `θ̄`. For an escape direction
/// `ρ` on the radius-`√L` sphere with speed `s`, use [`unit_sphere_rate`].
pub fn norm_closed_form(norm0: f64, rate: f64, depth: usize, delta_t: f64) -> Result<f64> {
    check_closed_form_args(norm0, rate, depth)?;
    if delta_t < 0.0 {
        return Err(Error::InvalidInput(format!("delta_t must be ≥ 0, got {delta_t}")));
    }
    let l = depth as f64;
    if depth == 2 {
        return Ok(norm0 * (2.0 * rate * delta_t).exp());
    }
    if let Some(t_star) = blow_up_time(norm0, rate, depth) {
        if delta_t >= t_star {
            return Err(Error::BlowUp {
                blow_up_time: t_star,
                delta_t,
            });
        }
    }
    let base = norm0.powf(2.0 - l) + (2.0 - l) * l * rate * delta_t;
    Ok(base.powf(1.0 / (2.0 - l)))
}

/// First time the closed-form norm reaches `r`; exact inverse of
/// [`norm_closed_form`].
pub fn escape_time(norm0: f64, r: f64, depth: usize, rate: f64) -> Result<f64> {
    check_closed_form_args(norm0, rate, depth)?;
    if r.is_nan() || r <= norm0 {
        return Err(Error::InvalidInput(format!(
            "target norm {r} must exceed the starting norm {norm0}"
        )));
    }
    let l = depth as f64;
    if depth == 2 {
        return Ok((r / norm0).ln() / (2.0 * rate));
    }
    Ok((norm0.powf(2.0 - l) - r.powf(2.0 - l)) / ((l - 2.0) * l * rate))
}

/// Unit-direction loss rate `-ℒ₀(θ̄)` of an escape direction with speed
/// `speed` on the radius-`√L` sphere: `speed · L^{-L/2}`.
pub fn unit_sphere_rate(speed: f64, depth: usize) -> f64 {
    let l = depth as f64;
    speed * l.powf(-0.5 * l)
}

/// Convert an `s`-time trajectory to `t`-time via the cumulative trapezoidal
/// integral of `‖θ(s)‖^{2-L}`.
pub fn s_to_t(trajectory: &Trajectory) -> Result<Vec<f64>> {
    if trajectory.samples.is_empty() {
        return Err(Error::InvalidInput("empty trajectory".into()));
    }
    if trajectory.clock != Clock::S {
        return Err(Error::InvalidInput("trajectory is not in s-time".into()));
    }
    let exponent = 2.0 - trajectory.depth as f64;
    let speed = |norm: f64| if exponent == 0.0 { 1.0 } else { norm.powf(exponent) };
    let mut out = Vec::with_capacity(trajectory.samples.len());
    let mut t = trajectory.samples[0].time;
    out.push(t);
    for w in trajectory.samples.windows(2) {
        let h = w[1].time - w[0].time;
        t += 0.5 * h * (speed(w[0].param_norm) + speed(w[1].param_norm));
        out.push(t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use approx::assert_relative_eq;

    fn s_trajectory(norms: &[f64], depth: usize, ds: f64) -> Trajectory {
        Trajectory {
            clock: Clock::S,
            depth,
            samples: norms
                .iter()
                .enumerate()
                .map(|(i, &n)| Sample {
                    time: i as f64 * ds,
                    param_norm: n,
                    loss: 0.0,
                    direction_drift: 0.0,
                    snapshot: None,
                })
                .collect(),
            status: FlowStatus::Completed,
            final_params: NetworkParams::zeros(&[1, 1]).unwrap(),
        }
    }

    #[test]
    fn closed_form_depth_two_is_exponential() {
        let r = norm_closed_form(1.0, 0.5, 2, 1.0).unwrap();
        assert_relative_eq!(r, std::f64::consts::E, max_relative = 1e-12);
    }

    #[test]
    fn depth_three_blow_up_time() {
        let t = blow_up_time(1.0, 0.5, 3).unwrap();
        assert_relative_eq!(t, 2.0 / 3.0, max_relative = 1e-15);
        match norm_closed_form(1.0, 0.5, 3, 0.7) {
            Err(Error::BlowUp { blow_up_time, .. }) => {
                assert_relative_eq!(blow_up_time, 2.0 / 3.0, max_relative = 1e-15)
            }
            other => panic!("expected blow-up, got {other:?}"),
        }
        assert!(blow_up_time(1.0, 0.5, 2).is_none());
    }

    #[test]
    fn closed_form_matches_scalar_rk4() {
        // Oracle: RK4 on dR/dt = L s R^{L-1} with a fine step.
        let (l, s, r0, horizon) = (4usize, 1.0, 0.1, 10.0);
        let f = |r: f64| l as f64 * s * r.powi(l as i32 - 1);
        let steps = 20_000;
        let h = horizon / steps as f64;
        let mut r = r0;
        for _ in 0..steps {
            let k1 = f(r);
            let k2 = f(r + 0.5 * h * k1);
            let k3 = f(r + 0.5 * h * k2);
            let k4 = f(r + h * k3);
            r += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        let closed = norm_closed_form(r0, s, l, horizon).unwrap();
        assert_relative_eq!(closed, r, max_relative = 1e-6);
    }

    #[test]
    fn escape_time_examples() {
        assert_relative_eq!(
            escape_time(1.0, std::f64::consts::E, 2, 0.5).unwrap(),
            1.0,
            max_relative = 1e-12
        );
        assert_relative_eq!(escape_time(1.0, 1e12, 3, 0.5).unwrap(), 2.0 / 3.0, max_relative = 1e-11);
        assert!(matches!(escape_time(1.0, 1.0, 3, 0.5), Err(Error::InvalidInput(_))));
        assert!(escape_time(2.0, 1.0, 2, 0.5).is_err());
    }

    #[test]
    fn escape_time_round_trips() {
        for &l in &[1usize, 2, 3, 4, 6, 10] {
            for &(n0, r, s) in &[(1.0, 3.0, 0.5), (0.1, 2.0, 0.3), (0.5, 0.75, 2.0)] {
                let t = escape_time(n0, r, l, s).unwrap();
                let back = norm_closed_form(n0, s, l, t).unwrap();
                assert_relative_eq!(back, r, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn unit_rate_conversion() {
        assert_relative_eq!(unit_sphere_rate(0.5, 3), 0.5 / 27f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(unit_sphere_rate(1.0, 2), 0.5, max_relative = 1e-15);
    }

    #[test]
    fn s_to_t_constant_norm_is_identity() {
        let traj = s_trajectory(&[1.0; 11], 3, 0.1);
        for (t, s) in s_to_t(&traj).unwrap().iter().zip(traj.times()) {
            assert_relative_eq!(*t, s, max_relative = 1e-12, epsilon = 1e-15);
        }
    }

    #[test]
    fn s_to_t_depth_two_ignores_norm() {
        let traj = s_trajectory(&[1.0, 5.0, 0.2, 7.0], 2, 0.25);
        assert_eq!(s_to_t(&traj).unwrap(), vec![0.0, 0.25, 0.5, 0.75]);
    }

    #[test]
    fn s_to_t_rejects_empty_and_t_clock() {
        let mut traj = s_trajectory(&[], 3, 0.1);
        assert!(s_to_t(&traj).is_err());
        traj = s_trajectory(&[1.0], 3, 0.1);
        traj.clock = Clock::T;
        assert!(s_to_t(&traj).is_err());
    }

    #[test]
    fn origin_stays_put() {
        let p = NetworkParams::zeros(&[2, 3, 1]).unwrap();
        let data = Dataset::new(
            Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            Matrix::from_row_slice(1, 2, &[1.0, -1.0]),
        )
        .unwrap();
        let traj = integrate_gf_t(&p, &data, 1e-3, 10).unwrap();
        assert_eq!(traj.samples.len(), 11);
        assert!(traj.samples.iter().all(|s| s.param_norm == 0.0 && s.loss == 0.0));
        assert!(integrate_gf_s(&p, &data, 1e-3, 10).is_err());
    }

    #[test]
    fn non_positive_steps_are_rejected() {
        let p = NetworkParams::zeros(&[1, 1]).unwrap();
        let data = Dataset::new(Matrix::zeros(1, 1), Matrix::zeros(1, 1)).unwrap();
        assert!(integrate_gf_t(&p, &data, 0.0, 1).is_err());
        assert!(integrate_gf_s(&p, &data, -1.0, 1).is_err());
    }

    #[test]
    fn dead_network_stalls_in_s_time() {
        let p = NetworkParams::new(vec![
            Matrix::from_row_slice(1, 1, &[-1.0]),
            Matrix::from_row_slice(1, 1, &[1.0]),
        ])
        .unwrap();
        let data = Dataset::new(
            Matrix::from_row_slice(1, 2, &[1.0, 2.0]),
            Matrix::from_row_slice(1, 2, &[1.0, -1.0]),
        )
        .unwrap();
        let traj = integrate_gf_s(&p, &data, 1e-3, 10).unwrap();
        assert_eq!(traj.status, FlowStatus::Stalled);
    }
}
