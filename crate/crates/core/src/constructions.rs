//! Explicit datasets and parameter constructions: the alternating unit-circle
//! dataset, its rank-one speed curve and rank-two escape direction, depth
//! extension that never slows escape, and the aligned optimum for rank-one
//! inputs.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use crate::error::{Error, Result};
use crate::linalg::{frobenius_norm, Matrix, Vector};
use crate::network::{forward, localized_loss, Dataset, NetworkParams};

/// `N` points `x_j = (sin(2πj/N), cos(2πj/N))`, `j = 1 … N`, with loss
/// gradients `G_j = (-1)^j`.
pub fn circle_dataset(n: usize) -> Result<Dataset> {
    if n < 2 || !n.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!(
            "circle dataset needs an even N ≥ 2, got {n}"
        )));
    }
    let mut x = Matrix::zeros(2, n);
    let mut g = Matrix::zeros(1, n);
    for col in 0..n {
        let j = col + 1;
        let angle = 2.0 * PI * j as f64 / n as f64;
        x[(0, col)] = angle.sin();
        x[(1, col)] = angle.cos();
        g[(0, col)] = if j % 2 == 0 { 1.0 } else { -1.0 };
    }
    Dataset::new(x, g)
}

/// Closed-form speed of the best-signed width-one network at angle `phi` on
/// `circle_dataset(8)`:
/// `|cos(ξ+π/4) - cos ξ + cos(ξ-π/4) - cos(ξ-π/2)|` with `ξ = phi mod π/4`.
pub fn rank_one_speed_closed_form(phi: f64) -> f64 {
    let xi = phi.rem_euclid(FRAC_PI_4);
    ((xi + FRAC_PI_4).cos() - xi.cos() + (xi - FRAC_PI_4).cos() - (xi - FRAC_PI_2).cos()).abs()
}

/// Depth-3 width-one network `W_1 = [cos φ, sin φ]`, `W_2 = [1]`, `W_3 = [sign]`.
pub fn rank_one_params(phi: f64, sign: f64) -> NetworkParams {
    NetworkParams::new(vec![
        Matrix::from_row_slice(1, 2, &[phi.cos(), phi.sin()]),
        Matrix::from_element(1, 1, 1.0),
        Matrix::from_element(1, 1, sign),
    ])
    .expect("fixed shapes chain")
}

/// Speed of the best-signed width-one network at angle `phi`, by direct
/// evaluation on a 2-D input dataset with scalar loss gradients.
pub fn rank_one_speed(phi: f64, data: &Dataset) -> Result<f64> {
    if data.d_in() != 2 || data.d_out() != 1 {
        return Err(Error::InvalidInput(
            "rank-one angle sweep needs 2-D inputs and scalar outputs".into(),
        ));
    }
    let plus = -localized_loss(&rank_one_params(phi, 1.0), data)?;
    let minus = -localized_loss(&rank_one_params(phi, -1.0), data)?;
    Ok(plus.max(minus))
}

/// Grid search over `φ ∈ [0, 2π)` at spacing `≤ grid_resolution`, followed
/// by golden-section refinement around the best grid point. Returns
/// `(φ*, s*)`; ties go to the smallest angle.
pub fn rank_one_max_speed(data: &Dataset, grid_resolution: f64) -> Result<(f64, f64)> {
    if !(grid_resolution > 0.0) {
        return Err(Error::InvalidInput("grid resolution must be positive".into()));
    }
    let n = (2.0 * PI / grid_resolution).ceil() as usize;
    let h = 2.0 * PI / n as f64;
    let mut best = (0.0, f64::NEG_INFINITY);
    for k in 0..n {
        let phi = k as f64 * h;
        let s = rank_one_speed(phi, data)?;
        if s > best.1 {
            best = (phi, s);
        }
    }

    // Golden-section search on [φ-h, φ+h]; keep the grid point unless beaten.
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (best.0 - h, best.0 + h);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = rank_one_speed(c, data)?;
    let mut fd = rank_one_speed(d, data)?;
    for _ in 0..100 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = rank_one_speed(c, data)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = rank_one_speed(d, data)?;
        }
        if b - a < 1e-14 {
            break;
        }
    }
    let mid = 0.5 * (a + b);
    let fm = rank_one_speed(mid, data)?;
    if fm > best.1 {
        best = (mid.rem_euclid(2.0 * PI), fm);
    }
    Ok(best)
}

/// Depth-3 rank-two escape direction on `circle_dataset(8)` with speed `½`,
/// embedded into hidden width `width` (active neurons first, zeros elsewhere).
///
/// The output weight is `-1`: with `G_j = (-1)^j` the `+1` output gives
/// `ℒ₀ = +½`, i.e. a direction of ascent.
pub fn counterexample_params(width: usize) -> Result<NetworkParams> {
    if width < 4 {
        return Err(Error::InvalidInput(format!(
            "counterexample needs hidden width ≥ 4, got {width}"
        )));
    }
    let mut w1 = Matrix::zeros(width, 2);
    w1[(0, 0)] = 0.5;
    w1[(1, 1)] = 0.5;
    w1[(2, 0)] = -0.5;
    w1[(3, 1)] = -0.5;
    let mut w2 = Matrix::zeros(width, width);
    for (j, v) in [0.5, -0.5, 0.5, -0.5].into_iter().enumerate() {
        w2[(0, j)] = v;
    }
    let mut w3 = Matrix::zeros(1, width);
    w3[(0, 0)] = -1.0;
    NetworkParams::new(vec![w1, w2, w3])
}

/// Deepen a network by `k` layers without increasing `ℒ₀` or exceeding
/// `‖θ'‖² ≤ L + k`.
///
/// The last two layers are collapsed onto the single hidden neuron `i*` with
/// the most negative normalized contribution
/// `Tr[Gᵀ W̄_{L,·i} σ(W̄_{L-1,i·} Z^σ_{L-2})]`, rescaled by
/// `√(Σ_i ‖W_{L,·i}‖‖W_{L-1,i·}‖)`, and `k` copies of `e₁e₁ᵀ` are inserted
/// between them. Ties pick the smallest index.
pub fn extend_depth(params: &NetworkParams, data: &Dataset, k: usize) -> Result<NetworkParams> {
    let depth = params.depth();
    if depth < 2 {
        return Err(Error::Precondition("depth extension needs L ≥ 2".into()));
    }
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let loss = localized_loss(params, data)?;
    if !(loss < 0.0) {
        return Err(Error::Precondition(format!("ℒ₀(θ) = {loss} must be negative")));
    }
    let norm2 = params.norm_sq();
    if norm2 > depth as f64 + 1e-9 {
        return Err(Error::Precondition(format!("‖θ‖² = {norm2} exceeds L = {depth}")));
    }

    let acts = forward(params, data.x())?;
    let input = acts.post_activation(depth - 2);
    let w_prev = params.layer(depth - 1);
    let w_last = params.layer(depth);
    let width = w_prev.nrows();

    let mut scale = 0.0;
    let mut best: Option<(usize, f64)> = None;
    for i in 0..width {
        let row = w_prev.row(i);
        let col = w_last.column(i);
        let (rn, cn) = (row.norm(), col.norm());
        if rn == 0.0 || cn == 0.0 {
            continue;
        }
        scale += rn * cn;
        let hidden = (row / rn * input).map(|z| z.max(0.0));
        let out = (col / cn) * hidden;
        let contribution = out.dot(data.g());
        if best.is_none_or(|(_, b)| contribution < b) {
            best = Some((i, contribution));
        }
    }
    let (i_star, contribution) = best
        .filter(|_| scale > 0.0)
        .ok_or_else(|| Error::ConstructionDegenerate("every neuron contribution vanishes".into()))?;
    if contribution == 0.0 {
        return Err(Error::ConstructionDegenerate(
            "best neuron contribution is zero".into(),
        ));
    }

    let root = scale.sqrt();
    let row = w_prev.row(i_star);
    let col = w_last.column(i_star);
    let mut first = Matrix::zeros(width, w_prev.ncols());
    first.set_row(0, &(row * (root / row.norm())));
    let mut last = Matrix::zeros(w_last.nrows(), width);
    last.set_column(0, &(col * (root / col.norm())));
    let mut pass = Matrix::zeros(width, width);
    pass[(0, 0)] = 1.0;

    let mut weights: Vec<Matrix> = params.weights()[..depth - 2].to_vec();
    weights.push(first);
    weights.extend(std::iter::repeat_n(pass, k));
    weights.push(last);
    NetworkParams::new(weights)
}

/// Depth-`L` chain attaining `ℒ₀ = -‖Gv‖·‖u‖` on the rank-one input `uvᵀ`:
/// `W_1 = e₁ûᵀ`, `W_ℓ = e₁e₁ᵀ`, `W_L = -(Gv/‖Gv‖)e₁ᵀ`, all hidden layers of
/// width `hidden_width`.
pub fn aligned_rank_one_optimum(
    u: &Vector,
    v: &Vector,
    g: &Matrix,
    depth: usize,
    hidden_width: usize,
) -> Result<NetworkParams> {
    if depth < 2 || hidden_width == 0 {
        return Err(Error::InvalidInput(
            "aligned optimum needs depth ≥ 2 and a positive hidden width".into(),
        ));
    }
    if u.iter().chain(v.iter()).any(|&x| x < 0.0) {
        return Err(Error::Precondition("u and v must be entrywise non-negative".into()));
    }
    if g.ncols() != v.len() {
        return Err(Error::ShapeMismatch(format!(
            "G has {} columns but v has length {}",
            g.ncols(),
            v.len()
        )));
    }
    let u_norm = u.norm();
    if u_norm == 0.0 || v.norm() == 0.0 {
        return Err(Error::InvalidInput("u and v must be nonzero".into()));
    }
    let gv = g * v;
    let gv_norm = gv.norm();
    if gv_norm == 0.0 {
        return Err(Error::NoDescent("Gv = 0: the loss is flat on this input".into()));
    }

    let mut first = Matrix::zeros(hidden_width, u.len());
    first.set_row(0, &(u / u_norm).transpose());
    let mut pass = Matrix::zeros(hidden_width, hidden_width);
    pass[(0, 0)] = 1.0;
    let mut last = Matrix::zeros(g.nrows(), hidden_width);
    last.set_column(0, &(-(&gv / gv_norm)));

    let mut weights = vec![first];
    weights.extend(std::iter::repeat_n(pass, depth - 2));
    weights.push(last);
    NetworkParams::new(weights)
}

/// `uvᵀ` plus an optional perturbation.
pub fn rank_one_input(u: &Vector, v: &Vector, perturbation: Option<&Matrix>) -> Matrix {
    let base = u * v.transpose();
    match perturbation {
        Some(p) => base + p,
        None => base,
    }
}

/// Column-norm utility for reporting: `‖W_ℓ‖_F` for every layer.
pub fn layer_frobenius_norms(params: &NetworkParams) -> Vec<f64> {
    params.weights().iter().map(frobenius_norm).collect()
}
