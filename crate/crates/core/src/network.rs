//! Bias-free ReLU networks, the localized loss `Tr[Gᵀ Y_θ]` and its gradient.
//!
//! A network of depth `L` maps `X` (`d_in × N`) through
//! `Z_ℓ = W_ℓ · Z^σ_{ℓ-1}`, `Z^σ_ℓ = max(Z_ℓ, 0)`, with `Z^σ_0 = X`. No ReLU
//! is applied after the last layer, so the output is `Y = Z_L`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::{ensure_finite, frobenius_norm, Matrix};

/// Ordered chain of weight matrices `W_1 … W_L`; `W_ℓ` is `n_ℓ × n_{ℓ-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    weights: Vec<Matrix>,
}

impl NetworkParams {
    pub fn new(weights: Vec<Matrix>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidInput("network needs at least one layer".into()));
        }
        for (i, w) in weights.iter().enumerate() {
            if w.is_empty() {
                return Err(Error::InvalidInput(format!("layer {} is empty", i + 1)));
            }
            ensure_finite(w, &format!("W_{}", i + 1))?;
        }
        for (i, pair) in weights.windows(2).enumerate() {
            if pair[1].ncols() != pair[0].nrows() {
                return Err(Error::ShapeMismatch(format!(
                    "W_{} is {}×{} but W_{} has {} columns",
                    i + 1,
                    pair[0].nrows(),
                    pair[0].ncols(),
                    i + 2,
                    pair[1].ncols()
                )));
            }
        }
        Ok(Self { weights })
    }

    /// All-zero parameters for widths `n_0 … n_L`.
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        check_widths(widths)?;
        Ok(Self {
            weights: widths
                .windows(2)
                .map(|w| Matrix::zeros(w[1], w[0]))
                .collect(),
        })
    }

    /// I.i.d. `N(0, sigma²)` entries for widths `n_0 … n_L`.
    pub fn gaussian<R: Rng + ?Sized>(widths: &[usize], sigma: f64, rng: &mut R) -> Result<Self> {
        check_widths(widths)?;
        let normal = Normal::new(0.0, sigma)
            .map_err(|e| Error::InvalidInput(format!("init sigma {sigma}: {e}")))?;
        Ok(Self {
            weights: widths
                .windows(2)
                .map(|w| Matrix::from_fn(w[1], w[0], |_, _| normal.sample(rng)))
                .collect(),
        })
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    /// Widths `n_0 … n_L`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.weights[0].ncols()];
        w.extend(self.weights.iter().map(|m| m.nrows()));
        w
    }

    pub fn d_in(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn d_out(&self) -> usize {
        self.weights[self.weights.len() - 1].nrows()
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    /// Layer `ℓ` counted from 1.
    pub fn layer(&self, l: usize) -> &Matrix {
        &self.weights[l - 1]
    }

    pub fn into_weights(self) -> Vec<Matrix> {
        self.weights
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum()
    }

    /// Concatenation of all entries, layer by layer (column-major within a layer).
    pub fn flatten(&self) -> Vec<f64> {
        self.weights.iter().flat_map(|w| w.iter().copied()).collect()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.weights.len() == other.weights.len()
            && self
                .weights
                .iter()
                .zip(&other.weights)
                .all(|(a, b)| a.shape() == b.shape())
    }

    /// Euclidean inner product of the flattened parameter vectors.
    pub fn dot(&self, other: &Self) -> f64 {
        debug_assert!(self.same_shape(other));
        self.weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| a.dot(b))
            .sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.weights.iter().map(|w| w.norm_squared()).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|&x| x == 0.0))
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|x| x.is_finite()))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            weights: self.weights.iter().map(|w| w * factor).collect(),
        }
    }

    pub fn scale_mut(&mut self, factor: f64) {
        for w in &mut self.weights {
            w.scale_mut(factor);
        }
    }

    /// `self += alpha · other`.
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.zip_apply(b, |x, y| *x += alpha * y);
        }
    }

    /// `self + alpha · other` as a new value.
    pub fn add_scaled(&self, alpha: f64, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(alpha, other);
        out
    }
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 {
        return Err(Error::InvalidInput(
            "need widths n_0 … n_L with L ≥ 1".into(),
        ));
    }
    if widths.contains(&0) {
        return Err(Error::InvalidInput("widths must be positive".into()));
    }
    Ok(())
}

/// Inputs `X` (`d_in × N`) and loss gradient `G = ∇C(0)` (`d_out × N`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Matrix,
    g: Matrix,
}

impl Dataset {
    pub fn new(x: Matrix, g: Matrix) -> Result<Self> {
        if x.ncols() == 0 || x.nrows() == 0 || g.nrows() == 0 {
            return Err(Error::InvalidInput("dataset must be non-empty".into()));
        }
        if x.ncols() != g.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "X has {} columns but G has {}",
                x.ncols(),
                g.ncols()
            )));
        }
        ensure_finite(&x, "X")?;
        ensure_finite(&g, "G")?;
        Ok(Self { x, g })
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn g(&self) -> &Matrix {
        &self.g
    }

    pub fn n_samples(&self) -> usize {
        self.x.ncols()
    }

    pub fn d_in(&self) -> usize {
        self.x.nrows()
    }

    pub fn d_out(&self) -> usize {
        self.g.nrows()
    }

    pub fn with_g(&self, g: Matrix) -> Result<Self> {
        Self::new(self.x.clone(), g)
    }
}

/// Forward-pass record. `pre[ℓ-1] = Z_ℓ` for `ℓ = 1 … L` and
/// `post[ℓ] = Z^σ_ℓ` for `ℓ = 0 … L-1` (so `post[0] = X`).
#[derive(Debug, Clone)]
pub struct Activations {
    pub pre: Vec<Matrix>,
    pub post: Vec<Matrix>,
}

impl Activations {
    /// Network output `Y_θ = Z_L`.
    pub fn output(&self) -> &Matrix {
        self.pre.last().expect("depth ≥ 1")
    }

    /// `Z_ℓ` for `ℓ = 1 … L`.
    pub fn preactivation(&self, l: usize) -> &Matrix {
        &self.pre[l - 1]
    }

    /// `Z^σ_ℓ` for `ℓ = 0 … L-1`.
    pub fn post_activation(&self, l: usize) -> &Matrix {
        &self.post[l]
    }
}

pub fn relu(m: &Matrix) -> Matrix {
    m.map(|x| x.max(0.0))
}

pub fn forward(params: &NetworkParams, x: &Matrix) -> Result<Activations> {
    if x.nrows() != params.d_in() {
        return Err(Error::ShapeMismatch(format!(
            "input has {} rows but the network expects {}",
            x.nrows(),
            params.d_in()
        )));
    }
    let depth = params.depth();
    let mut pre = Vec::with_capacity(depth);
    let mut post = Vec::with_capacity(depth);
    post.push(x.clone());
    for (l, w) in params.weights().iter().enumerate() {
        let z = w * &post[l];
        if l + 1 < depth {
            post.push(relu(&z));
        }
        pre.push(z);
    }
    Ok(Activations { pre, post })
}

fn check_output_shape(params: &NetworkParams, data: &Dataset) -> Result<()> {
    if params.d_out() != data.d_out() {
        return Err(Error::ShapeMismatch(format!(
            "network outputs {} rows but G has {}",
            params.d_out(),
            data.d_out()
        )));
    }
    Ok(())
}

/// Localized loss `ℒ₀(θ) = Tr[Gᵀ Y_θ]`.
pub fn localized_loss(params: &NetworkParams, data: &Dataset) -> Result<f64> {
    check_output_shape(params, data)?;
    let acts = forward(params, data.x())?;
    Ok(acts.output().dot(data.g()))
}

/// Backpropagate `∂C/∂Y` through a recorded forward pass. The ReLU
/// derivative at zero is taken to be zero.
pub fn backprop(params: &NetworkParams, acts: &Activations, output_grad: &Matrix) -> NetworkParams {
    let depth = params.depth();
    let mut grads: Vec<Matrix> = Vec::with_capacity(depth);
    let mut delta = output_grad.clone();
    for l in (0..depth).rev() {
        grads.push(&delta * acts.post[l].transpose());
        if l > 0 {
            let mut back = params.weights()[l].tr_mul(&delta);
            back.zip_apply(&acts.pre[l - 1], |d, z| {
                if z <= 0.0 {
                    *d = 0.0;
                }
            });
            delta = back;
        }
    }
    grads.reverse();
    NetworkParams { weights: grads }
}

/// `ℒ₀(θ)` together with `∇ℒ₀(θ)`.
pub fn loss_and_grad(params: &NetworkParams, data: &Dataset) -> Result<(f64, NetworkParams)> {
    check_output_shape(params, data)?;
    let acts = forward(params, data.x())?;
    let loss = acts.output().dot(data.g());
    Ok((loss, backprop(params, &acts, data.g())))
}

pub fn grad_localized_loss(params: &NetworkParams, data: &Dataset) -> Result<NetworkParams> {
    Ok(loss_and_grad(params, data)?.1)
}

/// `‖θ‖ = (Σ_ℓ ‖W_ℓ‖_F²)^{1/2}`.
pub fn param_norm(params: &NetworkParams) -> f64 {
    params.norm_sq().sqrt()
}

/// Rescale every layer by `radius / ‖θ‖`.
pub fn sphere_project(params: &NetworkParams, radius: f64) -> Result<NetworkParams> {
    let norm = param_norm(params);
    if norm == 0.0 {
        return Err(Error::Degenerate("cannot project zero parameters".into()));
    }
    if !(radius.is_finite() && radius >= 0.0) {
        return Err(Error::InvalidInput(format!("radius {radius}")));
    }
    Ok(params.scaled(radius / norm))
}

/// Per-layer Frobenius norms.
pub fn layer_norms(params: &NetworkParams) -> Vec<f64> {
    params.weights().iter().map(frobenius_norm).collect()
}

/// Smallest `|Z_ℓ|` entry over all layers; used to keep finite-difference
/// and homogeneity checks away from ReLU kinks.
pub fn min_preactivation_magnitude(params: &NetworkParams, x: &Matrix) -> Result<f64> {
    let acts = forward(params, x)?;
    Ok(acts.pre[..acts.pre.len() - 1]
        .iter()
        .flat_map(|z| z.iter())
        .fold(f64::INFINITY, |m, z| m.min(z.abs())))
}
