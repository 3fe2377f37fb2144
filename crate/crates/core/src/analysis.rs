//! Per-layer low-rank and linearity metrics and the quantitative bounds they
//! are compared against.

use log::warn;

use crate::error::{Error, Result};
use crate::linalg::{frobenius_norm, singular_values, tail_energy_ratio, Matrix};
use crate::network::{forward, localized_loss, Dataset, NetworkParams};

/// Slack for floating-point comparisons against a bound.
pub const BOUND_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerRank {
    /// Layer index `ℓ`, counted from 1.
    pub layer: usize,
    /// `Σ_{i≥2} s_i²(W_ℓ) / Σ_i s_i²(W_ℓ)`.
    pub weight_tail_ratio: f64,
    /// Same ratio for the post-activation `Z^σ_ℓ`. The output layer has no
    /// ReLU, so at `ℓ = L` it is computed on `Z_L` itself.
    pub activation_tail_ratio: f64,
    /// `‖Z^σ_ℓ - Z_ℓ‖_F² / ‖Z_ℓ‖_F²`; identically zero at the output layer.
    pub linearity_defect: f64,
    /// `Z_ℓ = 0` (or `W_ℓ = 0`): ratios are reported as 0.
    pub degenerate: bool,
}

impl LayerRank {
    pub fn max_ratio(&self) -> f64 {
        self.weight_tail_ratio
            .max(self.activation_tail_ratio)
            .max(self.linearity_defect)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankProfile {
    pub layers: Vec<LayerRank>,
}

impl RankProfile {
    pub fn max_ratio(&self) -> f64 {
        self.layers.iter().map(LayerRank::max_ratio).fold(0.0, f64::max)
    }

    pub fn mean_weight_tail_ratio(&self, layers: impl IntoIterator<Item = usize>) -> f64 {
        let vals: Vec<f64> = layers
            .into_iter()
            .map(|l| self.layers[l - 1].weight_tail_ratio)
            .collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

pub fn rank_profile(params: &NetworkParams, x: &Matrix) -> Result<RankProfile> {
    let acts = forward(params, x)?;
    let depth = params.depth();
    let mut layers = Vec::with_capacity(depth);
    for l in 1..=depth {
        let z = acts.preactivation(l);
        let z_sigma = if l < depth {
            acts.post_activation(l)
        } else {
            z
        };
        let z_norm2 = frobenius_norm(z).powi(2);
        let w_ratio = tail_energy_ratio(&singular_values(params.layer(l))?);
        let a_ratio = tail_energy_ratio(&singular_values(z_sigma)?);
        let degenerate = z_norm2 == 0.0 || w_ratio.is_none();
        let linearity_defect = if l == depth || z_norm2 == 0.0 {
            0.0
        } else {
            // ⟨Z^σ, Z - Z^σ⟩ = 0, so this equals ‖Z^σ - Z‖²/‖Z‖².
            (1.0 - frobenius_norm(z_sigma).powi(2) / z_norm2).clamp(0.0, 1.0)
        };
        layers.push(LayerRank {
            layer: l,
            weight_tail_ratio: w_ratio.unwrap_or(0.0),
            activation_tail_ratio: if degenerate { 0.0 } else { a_ratio.unwrap_or(0.0) },
            linearity_defect,
            degenerate,
        });
    }
    Ok(RankProfile { layers })
}

/// Outcome of the weak-control check for one ratio `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prop4Outcome {
    pub p: f64,
    /// `2·log(‖X‖_F‖G‖_F/s0) / (pL)`.
    pub bound: f64,
    /// `⌈(1-p)L⌉`.
    pub required: usize,
    /// Layers among `Z^σ_0 … Z^σ_{L-1}` whose tail ratio is within the bound.
    pub count: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prop4Check {
    /// Preconditions (`‖θ‖² ≤ L`, `-ℒ₀ ≥ s0 > 0`) do not hold; nothing to check.
    NotApplicable(String),
    Checked {
        /// Tail ratios of `Z^σ_0 = X, Z^σ_1, …, Z^σ_{L-1}`.
        tail_ratios: Vec<f64>,
        outcomes: Vec<Prop4Outcome>,
    },
}

impl Prop4Check {
    pub fn passed(&self) -> bool {
        match self {
            Prop4Check::NotApplicable(_) => true,
            Prop4Check::Checked { outcomes, .. } => outcomes.iter().all(|o| o.pass),
        }
    }

    pub fn is_applicable(&self) -> bool {
        matches!(self, Prop4Check::Checked { .. })
    }
}

/// Weak control: with `‖θ‖² ≤ L` and `ℒ₀(θ) ≤ -s0`, for every `p ∈ (0,1)` at
/// least `(1-p)L` of the representations `Z^σ_0, …, Z^σ_{L-1}` satisfy
/// `tail ratio ≤ 2·log(‖X‖_F‖G‖_F/s0)/(pL)`.
pub fn prop4_check(
    params: &NetworkParams,
    data: &Dataset,
    s0: f64,
    p_grid: &[f64],
) -> Result<Prop4Check> {
    if let Some(p) = p_grid.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
        return Err(Error::InvalidInput(format!("p = {p} is outside (0, 1)")));
    }
    let depth = params.depth();
    let l = depth as f64;
    if !(s0 > 0.0) {
        return Ok(Prop4Check::NotApplicable(format!("s0 = {s0} is not positive")));
    }
    let norm2 = params.norm_sq();
    if norm2 > l + 1e-9 {
        return Ok(Prop4Check::NotApplicable(format!("‖θ‖² = {norm2} exceeds L = {depth}")));
    }
    let acts = forward(params, data.x())?;
    let loss = acts.output().dot(data.g());
    if -loss < s0 {
        return Ok(Prop4Check::NotApplicable(format!("speed {} is below s0 = {s0}", -loss)));
    }

    let log_term = (frobenius_norm(data.x()) * frobenius_norm(data.g()) / s0).ln();
    let mut tail_ratios = Vec::with_capacity(depth);
    for z in &acts.post {
        match tail_energy_ratio(&singular_values(z)?) {
            Some(r) => tail_ratios.push(r),
            None => {
                warn!("zero representation excluded from the weak-control count");
                tail_ratios.push(f64::INFINITY);
            }
        }
    }
    let outcomes = p_grid
        .iter()
        .map(|&p| {
            let bound = 2.0 * log_term / (p * l);
            let required = ((1.0 - p) * l - 1e-9).ceil().max(0.0) as usize;
            let count = tail_ratios.iter().filter(|&&r| r <= bound + BOUND_SLACK).count();
            Prop4Outcome {
                p,
                bound,
                required,
                count,
                pass: count >= required,
            }
        })
        .collect();
    Ok(Prop4Check::Checked {
        tail_ratios,
        outcomes,
    })
}

/// Strong-control bound `8‖G‖_F·ε / (s* - ‖G‖_F·ε)` for inputs `uvᵀ + X`
/// with `u, v ≥ 0` and `‖X‖_F ≤ ε`.
pub fn prop3_bound(g: &Matrix, s_star: f64, eps: f64) -> Result<f64> {
    if eps < 0.0 {
        return Err(Error::InvalidInput(format!("eps must be ≥ 0, got {eps}")));
    }
    let g_norm = frobenius_norm(g);
    let denom = s_star - g_norm * eps;
    if !(denom > 0.0) {
        return Err(Error::BoundInvalid(format!(
            "s* = {s_star} must exceed ‖G‖_F·ε = {}",
            g_norm * eps
        )));
    }
    Ok(8.0 * g_norm * eps / denom)
}

/// Measured ratios at a direction against a theoretical bound.
#[derive(Debug, Clone)]
pub struct BoundComparison {
    pub bound: f64,
    pub profile: RankProfile,
    pub max_ratio: f64,
    pub within_bound: bool,
}

impl BoundComparison {
    fn new(bound: f64, profile: RankProfile) -> Self {
        let max_ratio = profile.max_ratio();
        Self {
            bound,
            within_bound: max_ratio <= bound + BOUND_SLACK,
            max_ratio,
            profile,
        }
    }
}

/// Evaluate all three ratios of `params` on `input = uvᵀ + X` against the
/// strong-control bound.
pub fn prop3_compare(
    params: &NetworkParams,
    input: &Matrix,
    g: &Matrix,
    s_star: f64,
    eps: f64,
) -> Result<BoundComparison> {
    let bound = prop3_bound(g, s_star, eps)?;
    Ok(BoundComparison::new(bound, rank_profile(params, input)?))
}

/// Both algebraic forms of the depth bound at layer `ℓ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem1Forms {
    /// `c = √2‖X‖_F‖G‖_F·√(log‖X‖_F + log‖G‖_F - log s*)`.
    pub c: f64,
    /// `c' = c / s*`.
    pub c_prime: f64,
    /// `8c/(s* - c·ℓ^{-1/2})·ℓ^{-1/2}`.
    pub appendix_form: f64,
    /// `8c'/(1 - c'·ℓ^{-1/2})·ℓ^{-1/2}`.
    pub main_text_form: f64,
}

const FORMS_TOL: f64 = 1e-12;

/// Evaluate the bound from Frobenius norms. A non-positive denominator makes
/// the bound vacuous and both forms are `+∞`.
pub fn theorem1_forms(x_norm: f64, g_norm: f64, s_star: f64, ell: usize) -> Result<Theorem1Forms> {
    if !(s_star > 0.0) {
        return Err(Error::InvalidInput(format!("s* must be positive, got {s_star}")));
    }
    if ell == 0 {
        return Err(Error::InvalidInput("layer index must be ≥ 1".into()));
    }
    let ratio = x_norm * g_norm / s_star;
    if !(ratio > 1.0) {
        return Err(Error::BoundInvalid(format!(
            "‖X‖_F‖G‖_F/s* = {ratio} must exceed 1"
        )));
    }
    let log_term = x_norm.ln() + g_norm.ln() - s_star.ln();
    let c = 2f64.sqrt() * x_norm * g_norm * log_term.sqrt();
    let c_prime = ratio * (2.0 * ratio.ln()).sqrt();
    let x = (ell as f64).powf(-0.5);

    let appendix_denom = s_star - c * x;
    let main_denom = 1.0 - c_prime * x;
    let (appendix_form, main_text_form) = if appendix_denom <= 0.0 || main_denom <= 0.0 {
        (f64::INFINITY, f64::INFINITY)
    } else {
        (8.0 * c / appendix_denom * x, 8.0 * c_prime / main_denom * x)
    };
    let forms = Theorem1Forms {
        c,
        c_prime,
        appendix_form,
        main_text_form,
    };
    if appendix_form.is_finite() {
        let rel = (appendix_form - main_text_form).abs() / appendix_form.abs().max(1e-300);
        if rel > FORMS_TOL {
            return Err(Error::InvariantViolation(format!(
                "bound forms disagree: {appendix_form} vs {main_text_form}"
            )));
        }
    }
    Ok(forms)
}

/// Bound on all three ratios at layer `ℓ` of an optimal escape direction.
/// Returns `+∞` when the bound is vacuous.
pub fn theorem1_bound(x: &Matrix, g: &Matrix, s_star: f64, ell: usize) -> Result<f64> {
    Ok(theorem1_forms(frobenius_norm(x), frobenius_norm(g), s_star, ell)?.appendix_form)
}

/// Per-layer comparison of a direction against the depth bound, using the
/// direction's own speed for `s*`.
pub fn theorem1_compare(params: &NetworkParams, data: &Dataset) -> Result<Vec<(usize, f64, f64)>> {
    let speed = -localized_loss(params, data)?;
    let profile = rank_profile(params, data.x())?;
    profile
        .layers
        .iter()
        .map(|lr| {
            let bound = match theorem1_bound(data.x(), data.g(), speed, lr.layer) {
                Ok(b) => b,
                Err(Error::BoundInvalid(_)) | Err(Error::InvalidInput(_)) => f64::INFINITY,
                Err(e) => return Err(e),
            };
            Ok((lr.layer, bound, lr.max_ratio()))
        })
        .collect()
}
