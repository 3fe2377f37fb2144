//! Generators and checks shared by the integration and acceptance suites.
#![allow(dead_code)]

use escape_core::network::{forward, grad_localized_loss, localized_loss, min_preactivation_magnitude};
use escape_core::{Dataset, Matrix, NetworkParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// A random network (depth ≤ 5, hidden widths ≤ 8) and dataset drawn from
/// `seed`, redrawn until no preactivation lies within `margin` of zero.
pub fn generic_case(seed: u64, margin: f64) -> (NetworkParams, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.random_range(1..=5);
    let d_in = rng.random_range(1..=4);
    let d_out = rng.random_range(1..=3);
    let n = rng.random_range(1..=6);
    let mut widths = vec![d_in];
    widths.extend((1..depth).map(|_| rng.random_range(1..=8)));
    widths.push(d_out);
    loop {
        let x = gaussian(d_in, n, &mut rng);
        let g = gaussian(d_out, n, &mut rng);
        let params = NetworkParams::gaussian(&widths, 1.0, &mut rng).unwrap();
        if min_preactivation_magnitude(&params, &x).unwrap() >= margin {
            return (params, Dataset::new(x, g).unwrap());
        }
    }
}

pub fn check_homogeneity(params: &NetworkParams, data: &Dataset) -> Result<(), String> {
    let l = params.depth() as i32;
    let base = localized_loss(params, data).unwrap();
    for lambda in [0.5, 2.0, 3.0] {
        let scaled = localized_loss(&params.scaled(lambda), data).unwrap();
        let lam_l = f64::powi(lambda, l);
        let err = (scaled - lam_l * base).abs();
        if err > 1e-9 * base.abs().max(1.0) * lam_l {
            return Err(format!("λ = {lambda}: |ℒ₀(λθ) - λ^L ℒ₀(θ)| = {err:e}"));
        }
    }
    Ok(())
}

pub fn check_euler(params: &NetworkParams, data: &Dataset) -> Result<(), String> {
    let loss = localized_loss(params, data).unwrap();
    let grad = grad_localized_loss(params, data).unwrap();
    let err = (params.dot(&grad) - params.depth() as f64 * loss).abs();
    if err > 1e-8 * (1.0 + loss.abs()) {
        return Err(format!("|⟨θ, ∇ℒ₀⟩ - Lℒ₀| = {err:e}"));
    }
    Ok(())
}

/// Central differences with step `h = 1e-6`; relative error of the whole
/// gradient vector must stay below `1e-5`.
pub fn check_gradient(params: &NetworkParams, data: &Dataset) -> Result<(), String> {
    let h = 1e-6;
    let grad = grad_localized_loss(params, data).unwrap();
    let mut weights = params.weights().to_vec();
    let mut err2 = 0.0;
    let mut ref2 = 0.0;
    for l in 0..weights.len() {
        for idx in 0..weights[l].len() {
            let orig = weights[l][idx];
            weights[l][idx] = orig + h;
            let plus = localized_loss(&NetworkParams::new(weights.clone()).unwrap(), data).unwrap();
            weights[l][idx] = orig - h;
            let minus = localized_loss(&NetworkParams::new(weights.clone()).unwrap(), data).unwrap();
            weights[l][idx] = orig;
            let fd = (plus - minus) / (2.0 * h);
            let g = grad.layer(l + 1)[idx];
            err2 += (fd - g).powi(2);
            ref2 += g * g;
        }
    }
    let rel = err2.sqrt() / ref2.sqrt().max(1e-12);
    if rel >= 1e-5 && err2.sqrt() > 1e-9 {
        return Err(format!("finite-difference relative error {rel:e}"));
    }
    Ok(())
}

pub fn check_post_activations(params: &NetworkParams, data: &Dataset) -> Result<(), String> {
    let acts = forward(params, data.x()).unwrap();
    for l in 1..params.depth() {
        if acts.post_activation(l).iter().any(|&z| z < 0.0) {
            return Err(format!("negative post-activation at layer {l}"));
        }
    }
    Ok(())
}

/// A random depth-2…4 network on the radius-`√L` sphere with `ℒ₀ < 0`,
/// together with its dataset.
pub fn extension_case(seed: u64) -> (NetworkParams, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.random_range(2..=4);
    let d_in = rng.random_range(1..=4);
    let d_out = rng.random_range(1..=3);
    let n = rng.random_range(2..=8);
    let mut widths = vec![d_in];
    widths.extend((1..depth).map(|_| rng.random_range(1..=6)));
    widths.push(d_out);
    loop {
        let data = Dataset::new(gaussian(d_in, n, &mut rng), gaussian(d_out, n, &mut rng)).unwrap();
        let raw = NetworkParams::gaussian(&widths, 1.0, &mut rng).unwrap();
        let mut params = escape_core::network::sphere_project(&raw, (depth as f64).sqrt()).unwrap();
        let loss = localized_loss(&params, &data).unwrap();
        if loss == 0.0 {
            continue;
        }
        if loss > 0.0 {
            let mut w = params.into_weights();
            let last = w.len() - 1;
            w[last] = -&w[last];
            params = NetworkParams::new(w).unwrap();
        }
        return (params, data);
    }
}

/// Every guarantee of the depth extension by `k` layers.
pub fn check_extension(params: &NetworkParams, data: &Dataset, k: usize) -> Result<(), String> {
    use escape_core::constructions::extend_depth;
    use escape_core::linalg::{singular_values, tail_energy_ratio};
    let depth = params.depth();
    let speed = -localized_loss(params, data).unwrap();
    let ext = extend_depth(params, data, k).map_err(|e| e.to_string())?;
    let ext_speed = -localized_loss(&ext, data).unwrap();
    if ext_speed < speed - 1e-12 {
        return Err(format!("k = {k}: speed fell from {speed} to {ext_speed}"));
    }
    let n2 = ext.norm_sq();
    if n2 > (depth + k) as f64 + 1e-9 {
        return Err(format!("k = {k}: ‖θ'‖² = {n2} exceeds {}", depth + k));
    }
    // Rebuilt layers: the collapsed pair plus the k inserted ones.
    for l in depth - 1..=depth + k {
        let ratio = tail_energy_ratio(&singular_values(ext.layer(l)).unwrap()).unwrap_or(0.0);
        if ratio > 1e-24 {
            return Err(format!("k = {k}: layer {l} has tail ratio {ratio:e}"));
        }
    }
    let acts = forward(&ext, data.x()).unwrap();
    for l in depth..depth + k {
        if acts.preactivation(l).iter().any(|&z| z < 0.0) {
            return Err(format!("k = {k}: negative preactivation in inserted layer {l}"));
        }
    }
    Ok(())
}
