//! Minibatch gradient descent on the softmax cross-entropy with the dynamic
//! learning rate `lr = c/‖θ‖⁴`.

use log::{debug, error};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::experiments::mnist::cross_entropy_and_grad;
use crate::linalg::{singular_values, tail_energy_ratio, Matrix};
use crate::network::{backprop, forward, NetworkParams};

pub const TOP_SINGULAR_VALUES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// `n_0 … n_L`.
    pub widths: Vec<usize>,
    pub init_sigma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_numerator: f64,
    /// Upper bound on the learning rate; `None` leaves `c/‖θ‖⁴` untouched.
    pub lr_clamp: Option<f64>,
    /// Log every this many steps; step 0 and the last step are always logged.
    pub log_every: usize,
    /// Stop at the first logged loss at least this far below the initial one.
    pub stop_after_drop: Option<f64>,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return Err(Error::Config(format!("invalid widths {:?}", self.widths)));
        }
        if !(self.init_sigma > 0.0 && self.init_sigma.is_finite()) {
            return Err(Error::Config(format!("init_sigma must be positive, got {}", self.init_sigma)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.log_every == 0 {
            return Err(Error::Config("epochs, batch_size and log_every must be positive".into()));
        }
        if !(self.lr_numerator >= 0.0 && self.lr_numerator.is_finite()) {
            return Err(Error::Config(format!("lr_numerator must be ≥ 0, got {}", self.lr_numerator)));
        }
        if let Some(c) = self.lr_clamp {
            if !(c > 0.0) {
                return Err(Error::Config(format!("lr_clamp must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub step: usize,
    pub epoch: usize,
    /// Cross-entropy over the whole training set.
    pub loss: f64,
    pub param_norm: f64,
    /// Learning rate the next step will use.
    pub lr: f64,
    /// Per layer, the largest [`TOP_SINGULAR_VALUES`] singular values.
    pub top_singular_values: Vec<Vec<f64>>,
    /// Per layer, `Σ_{i≥2} s_i² / Σ s_i²` (NaN for a zero matrix).
    pub weight_tail_ratios: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainingLog {
    pub entries: Vec<LogEntry>,
    pub final_params: NetworkParams,
    pub steps: usize,
}

impl TrainingLog {
    pub fn losses(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.loss).collect()
    }
}

fn learning_rate(cfg: &TrainConfig, norm: f64) -> Result<f64> {
    if cfg.lr_numerator == 0.0 {
        return Ok(0.0);
    }
    let lr = cfg.lr_numerator / norm.powi(4);
    match cfg.lr_clamp {
        Some(c) => Ok(lr.min(c)),
        None if lr.is_finite() => Ok(lr),
        None => Err(Error::Numerical(format!(
            "learning rate is infinite at ‖θ‖ = {norm}; set lr_clamp"
        ))),
    }
}

fn full_loss(params: &NetworkParams, x: &Matrix, labels: &[usize]) -> Result<f64> {
    let acts = forward(params, x)?;
    Ok(cross_entropy_and_grad(acts.output(), labels)?.0)
}

fn log_entry(
    params: &NetworkParams,
    x: &Matrix,
    labels: &[usize],
    cfg: &TrainConfig,
    step: usize,
    epoch: usize,
) -> Result<LogEntry> {
    let loss = full_loss(params, x, labels)?;
    let norm = params.norm_sq().sqrt();
    if !loss.is_finite() {
        error!(
            "loss is {loss} at step {step} (‖θ‖ = {norm}); the dynamic learning rate \
             c/‖θ‖⁴ may be too large here, consider setting lr_clamp"
        );
        return Err(Error::Numerical(format!("non-finite training loss at step {step}")));
    }
    let mut top = Vec::with_capacity(params.depth());
    let mut tails = Vec::with_capacity(params.depth());
    for w in params.weights() {
        let s = singular_values(w)?;
        tails.push(tail_energy_ratio(&s).unwrap_or(f64::NAN));
        top.push(s.into_iter().take(TOP_SINGULAR_VALUES).collect());
    }
    Ok(LogEntry {
        step,
        epoch,
        loss,
        param_norm: norm,
        lr: learning_rate(cfg, norm)?,
        top_singular_values: top,
        weight_tail_ratios: tails,
    })
}

/// Train from `𝒩(0, σ₀²)` weights on `(x, labels)`, one column per example.
/// Each epoch visits the examples in a fresh order drawn from the seed.
pub fn train_full_loss(x: &Matrix, labels: &[usize], cfg: &TrainConfig) -> Result<TrainingLog> {
    cfg.validate()?;
    if x.nrows() != cfg.widths[0] {
        return Err(Error::ShapeMismatch(format!(
            "inputs have {} rows, network expects {}",
            x.nrows(),
            cfg.widths[0]
        )));
    }
    let n = x.ncols();
    if labels.len() != n || n == 0 {
        return Err(Error::ShapeMismatch(format!("{} labels for {n} examples", labels.len())));
    }

    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    init_rng.set_stream(0);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);

    let mut params = NetworkParams::gaussian(&cfg.widths, cfg.init_sigma, &mut init_rng)?;
    let mut entries = vec![log_entry(&params, x, labels, cfg, 0, 0)?];
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0;
    let stop_below = cfg.stop_after_drop.map(|d| entries[0].loss - d);

    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(cfg.batch_size) {
            let xb = x.select_columns(batch);
            let yb: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let acts = forward(&params, &xb)?;
            let (_, g) = cross_entropy_and_grad(acts.output(), &yb)?;
            let lr = learning_rate(cfg, params.norm_sq().sqrt())?;
            if lr > 0.0 {
                let grad = backprop(&params, &acts, &g);
                params.axpy(-lr, &grad);
            }
            step += 1;
            if step % cfg.log_every == 0 {
                let entry = log_entry(&params, x, labels, cfg, step, epoch)?;
                debug!("step {step} epoch {epoch} loss {:.6} ‖θ‖ {:.4e}", entry.loss, entry.param_norm);
                let stop = matches!(stop_below, Some(t) if entry.loss <= t);
                entries.push(entry);
                if stop {
                    break 'epochs;
                }
            }
        }
    }
    if entries.last().map(|e| e.step) != Some(step) {
        entries.push(log_entry(&params, x, labels, cfg, step, cfg.epochs)?);
    }
    Ok(TrainingLog {
        entries,
        final_params: params,
        steps: step,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauCriteria {
    /// Largest distance below the initial loss that still counts as plateau.
    pub plateau_tol: f64,
    /// How far below the initial loss counts as a drop.
    pub drop: f64,
    /// Fewest logged points the plateau must span (initial point included).
    pub min_plateau: usize,
}

impl Default for PlateauCriteria {
    fn default() -> Self {
        Self {
            plateau_tol: 0.01,
            drop: 0.1,
            min_plateau: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlateauDrop {
    /// Last index of the initial plateau.
    pub plateau_end: usize,
    /// First index at or below `loss₀ - drop`.
    pub drop_index: usize,
}

/// Locate an initial plateau followed by a drop in a logged loss curve.
pub fn detect_plateau_drop(losses: &[f64], criteria: &PlateauCriteria) -> Option<PlateauDrop> {
    let &l0 = losses.first()?;
    let plateau_len = losses
        .iter()
        .take_while(|&&l| l >= l0 - criteria.plateau_tol)
        .count();
    if plateau_len < criteria.min_plateau.max(1) {
        return None;
    }
    let drop_index = losses
        .iter()
        .enumerate()
        .skip(plateau_len)
        .find(|(_, &l)| l <= l0 - criteria.drop)?
        .0;
    Some(PlateauDrop {
        plateau_end: plateau_len - 1,
        drop_index,
    })
}
