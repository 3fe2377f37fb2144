//! Escape directions: speed, criticality residual, and their search by
//! projected gradient descent on the radius-`√L` sphere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::analysis::{prop4_check, Prop4Check};
use crate::error::{Error, Result};
use crate::network::{localized_loss, loss_and_grad, param_norm, sphere_project, Dataset, NetworkParams};

/// Tolerance on `|‖θ‖ - √L|` for a point to count as on the sphere.
pub const SPHERE_TOL: f64 = 1e-8;
/// Largest accepted increase of `ℒ₀` per projected step under
/// [`StepRule::Backtrack`].
pub const MONOTONE_TOL: f64 = 1e-8;
pub const DEFAULT_STEP_SIZE: f64 = 1e-2;
pub const DEFAULT_RESIDUAL_TOL: f64 = 1e-8;

/// Escape speed `s = -ℒ₀(ρ)` of a point on the radius-`√L` sphere.
pub fn escape_speed(params: &NetworkParams, data: &Dataset) -> Result<f64> {
    let radius = (params.depth() as f64).sqrt();
    let norm = param_norm(params);
    if (norm - radius).abs() > SPHERE_TOL {
        return Err(Error::Precondition(format!(
            "‖θ‖ = {norm} is off the radius-√L sphere ({radius})"
        )));
    }
    Ok(-localized_loss(params, data)?)
}

/// Relative size of the tangential gradient,
/// `‖∇ℒ₀ - (⟨θ,∇ℒ₀⟩/‖θ‖²)θ‖ / max(‖∇ℒ₀‖, 1e-12)`. Zero at critical points
/// of `ℒ₀` restricted to the sphere; invariant under `θ ↦ λθ`.
pub fn escape_residual(params: &NetworkParams, data: &Dataset) -> Result<f64> {
    let (_, grad) = loss_and_grad(params, data)?;
    residual_from_grad(params, &grad)
}

fn residual_from_grad(params: &NetworkParams, grad: &NetworkParams) -> Result<f64> {
    let n2 = params.norm_sq();
    if n2 == 0.0 {
        return Err(Error::Degenerate("residual is undefined at θ = 0".into()));
    }
    let mut tangent = grad.clone();
    tangent.axpy(-params.dot(grad) / n2, params);
    Ok(tangent.norm_sq().sqrt() / grad.norm_sq().sqrt().max(1e-12))
}

/// Weak-control check run on every eligible iterate of a search.
#[derive(Debug, Clone, PartialEq)]
pub struct Prop4Guard {
    pub s0: f64,
    pub p_grid: Vec<f64>,
}

impl Default for Prop4Guard {
    fn default() -> Self {
        Self {
            s0: 0.1,
            p_grid: vec![0.25, 0.5, 0.75],
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Prop4Tally {
    /// Iterates where the preconditions held and the check ran.
    pub checked: usize,
    pub violations: usize,
}

/// How each projected step chooses its length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepRule {
    /// Always the configured step size. Iterates may oscillate across ReLU
    /// kinks, so `ℒ₀` is not monotone.
    #[default]
    Fixed,
    /// Start from the configured step and halve until `ℒ₀` rises by at most
    /// [`MONOTONE_TOL`]. Monotone, but stalls where the optimum sits on a kink.
    Backtrack,
}

#[derive(Debug, Clone)]
pub struct EscapeReport {
    pub direction: NetworkParams,
    pub speed: f64,
    pub residual: f64,
    pub iterations: usize,
    pub seed: u64,
    pub restart: usize,
    pub final_step_size: f64,
    /// Accepted steps that raised `ℒ₀` by more than [`MONOTONE_TOL`].
    pub loss_increases: usize,
    /// Zero gradient at initialization: the restart never moved.
    pub stalled: bool,
    pub prop4: Prop4Tally,
}

#[derive(Debug, Clone)]
pub struct SearchConfig {
    pub depth: usize,
    /// Hidden widths `n_1 … n_{L-1}`; must have `depth - 1` entries.
    pub hidden_widths: Vec<usize>,
    pub restarts: usize,
    pub steps: usize,
    pub step_size: f64,
    pub step_rule: StepRule,
    pub seed: u64,
    pub residual_tol: f64,
    /// Always on by default; `None` disables the per-iterate check.
    pub prop4: Option<Prop4Guard>,
    /// Record `(iteration, speed)` every this many steps (0 disables).
    pub trace_every: usize,
}

impl SearchConfig {
    pub fn new(depth: usize, width: usize) -> Self {
        Self {
            depth,
            hidden_widths: vec![width; depth.saturating_sub(1)],
            restarts: 1,
            steps: 5000,
            step_size: DEFAULT_STEP_SIZE,
            step_rule: StepRule::Fixed,
            seed: 0,
            residual_tol: DEFAULT_RESIDUAL_TOL,
            prop4: Some(Prop4Guard::default()),
            trace_every: 0,
        }
    }

    fn validate(&self, data: &Dataset) -> Result<Vec<usize>> {
        if self.depth == 0 {
            return Err(Error::InvalidInput("depth must be ≥ 1".into()));
        }
        if self.hidden_widths.len() + 1 != self.depth {
            return Err(Error::InvalidInput(format!(
                "depth {} needs {} hidden widths, got {}",
                self.depth,
                self.depth - 1,
                self.hidden_widths.len()
            )));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidInput("need at least one restart".into()));
        }
        let mut widths = vec![data.d_in()];
        widths.extend(&self.hidden_widths);
        widths.push(data.d_out());
        Ok(widths)
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best: EscapeReport,
    pub reports: Vec<EscapeReport>,
    /// Per restart, `(iteration, speed)` samples when tracing is enabled.
    pub traces: Vec<Vec<(usize, f64)>>,
}

/// RNG for restart `restart` of a search seeded with `seed`.
pub fn restart_rng(seed: u64, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    rng
}

fn prop4_step(guard: &Prop4Guard, theta: &NetworkParams, data: &Dataset, tally: &mut Prop4Tally) -> Result<()> {
    if let check @ Prop4Check::Checked { .. } = prop4_check(theta, data, guard.s0, &guard.p_grid)? {
        tally.checked += 1;
        if !check.passed() {
            tally.violations += 1;
            return Err(Error::InvariantViolation(format!(
                "weak-control count failed at an iterate: {check:?}"
            )));
        }
    }
    Ok(())
}

/// One projected gradient descent run from a Gaussian start.
pub fn run_restart(
    data: &Dataset,
    cfg: &SearchConfig,
    restart: usize,
) -> Result<(EscapeReport, Vec<(usize, f64)>)> {
    let widths = cfg.validate(data)?;
    let radius = (cfg.depth as f64).sqrt();
    let mut rng = restart_rng(cfg.seed, restart);
    let init = NetworkParams::gaussian(&widths, 1.0, &mut rng)?;
    let mut theta = sphere_project(&init, radius)?;
    let mut step = cfg.step_size;
    let mut tally = Prop4Tally::default();
    let mut trace = Vec::new();

    let (mut loss, mut grad) = loss_and_grad(&theta, data)?;
    let stalled = grad.is_zero();
    let mut residual = if stalled { 0.0 } else { residual_from_grad(&theta, &grad)? };
    let mut iterations = 0;
    let mut loss_increases = 0;

    if let Some(guard) = &cfg.prop4 {
        prop4_step(guard, &theta, data, &mut tally)?;
    }

    if !stalled {
        while iterations < cfg.steps && residual >= cfg.residual_tol {
            step = cfg.step_size;
            let (next, next_loss) = loop {
                let candidate = sphere_project(&theta.add_scaled(-step, &grad), radius)?;
                let candidate_loss = localized_loss(&candidate, data)?;
                let accept = match cfg.step_rule {
                    StepRule::Fixed => true,
                    StepRule::Backtrack => candidate_loss <= loss + MONOTONE_TOL || step < 1e-300,
                };
                if accept {
                    break (candidate, candidate_loss);
                }
                step *= 0.5;
            };
            if next_loss > loss + MONOTONE_TOL {
                loss_increases += 1;
            }
            theta = next;
            iterations += 1;
            let (l, g) = loss_and_grad(&theta, data)?;
            debug_assert!((l - next_loss).abs() <= 1e-12 * (1.0 + l.abs()));
            loss = l;
            grad = g;
            if grad.is_zero() {
                residual = 0.0;
                break;
            }
            residual = residual_from_grad(&theta, &grad)?;
            if let Some(guard) = &cfg.prop4 {
                prop4_step(guard, &theta, data, &mut tally)?;
            }
            if cfg.trace_every > 0 && iterations % cfg.trace_every == 0 {
                trace.push((iterations, -loss));
            }
        }
    }

    Ok((
        EscapeReport {
            speed: -loss,
            direction: theta,
            residual,
            iterations,
            seed: cfg.seed,
            restart,
            final_step_size: step,
            loss_increases,
            stalled,
            prop4: tally,
        },
        trace,
    ))
}

/// Projected gradient descent on `‖θ‖² = L` from `cfg.restarts` independent
/// Gaussian starts, in parallel. The best report has the largest speed; ties
/// go to the lowest restart index. Results depend only on `(seed, restart)`.
pub fn search_optimal_escape(data: &Dataset, cfg: &SearchConfig) -> Result<SearchOutcome> {
    cfg.validate(data)?;
    let runs: Vec<(EscapeReport, Vec<(usize, f64)>)> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| run_restart(data, cfg, r))
        .collect::<Result<_>>()?;
    let (reports, traces): (Vec<_>, Vec<_>) = runs.into_iter().unzip();

    let best = reports
        .iter()
        .filter(|r| !r.stalled)
        .fold(None::<&EscapeReport>, |acc, r| match acc {
            Some(b) if b.speed >= r.speed => Some(b),
            _ => Some(r),
        })
        .cloned()
        .ok_or_else(|| Error::NoEscapeFound("every restart stalled at a zero gradient".into()))?;
    Ok(SearchOutcome {
        best,
        reports,
        traces,
    })
}

/// Fraction of independent runs per width whose final speed exceeds
/// `threshold`. Each width uses `runs_per_width` restarts of `template` with
/// all hidden layers set to that width.
pub fn success_fraction(
    data: &Dataset,
    widths: &[usize],
    runs_per_width: usize,
    threshold: f64,
    template: &SearchConfig,
) -> Result<Vec<(usize, f64)>> {
    if runs_per_width == 0 {
        return Err(Error::InvalidInput("runs_per_width must be ≥ 1".into()));
    }
    widths
        .iter()
        .map(|&w| {
            let cfg = SearchConfig {
                hidden_widths: vec![w; template.depth.saturating_sub(1)],
                restarts: runs_per_width,
                ..template.clone()
            };
            cfg.validate(data)?;
            let reports: Vec<EscapeReport> = (0..runs_per_width)
                .into_par_iter()
                .map(|r| run_restart(data, &cfg, r).map(|(rep, _)| rep))
                .collect::<Result<_>>()?;
            let hits = reports.iter().filter(|r| r.speed > threshold).count();
            Ok((w, hits as f64 / runs_per_width as f64))
        })
        .collect()
}
