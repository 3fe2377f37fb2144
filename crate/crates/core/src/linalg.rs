//! Dense small-matrix primitives: norms, singular value decomposition and the
//! non-negative top singular pair of an entrywise non-negative matrix.

use nalgebra::{DMatrix, DVector, SVD};

use crate::error::{Error, Result};

/// Dense real matrix used for weights, activations and datasets.
pub type Matrix = DMatrix<f64>;

/// Dense real column vector.
pub type Vector = DVector<f64>;

/// Thin singular value decomposition `M = U · diag(S) · Vᵀ`.
///
/// For an `m × n` matrix with `k = min(m, n)`, `u` is `m × k`, `v` is `n × k`
/// and `singular_values` has length `k`, sorted descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub v: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for (j, s) in self.singular_values.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * self.v.transpose()
    }
}

pub fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} has non-finite entries")))
    }
}

/// Thin SVD with singular values sorted in descending order.
pub fn svd(m: &Matrix) -> Result<Svd> {
    ensure_finite(m, "matrix")?;
    let k = m.nrows().min(m.ncols());
    if k == 0 {
        return Ok(Svd {
            u: Matrix::zeros(m.nrows(), 0),
            singular_values: Vec::new(),
            v: Matrix::zeros(m.ncols(), 0),
        });
    }
    let dec = SVD::try_new(m.clone(), true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let u = dec.u.expect("requested U");
    let v_t = dec.v_t.expect("requested Vᵀ");

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| dec.singular_values[b].total_cmp(&dec.singular_values[a]));

    let mut su = Matrix::zeros(m.nrows(), k);
    let mut sv = Matrix::zeros(m.ncols(), k);
    let mut s = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        su.set_column(dst, &u.column(src));
        sv.set_column(dst, &v_t.row(src).transpose());
        s.push(dec.singular_values[src].max(0.0));
    }
    Ok(Svd {
        u: su,
        singular_values: s,
        v: sv,
    })
}

/// Singular values only, sorted descending.
pub fn singular_values(m: &Matrix) -> Result<Vec<f64>> {
    ensure_finite(m, "matrix")?;
    if m.nrows().min(m.ncols()) == 0 {
        return Ok(Vec::new());
    }
    let dec = SVD::try_new(m.clone(), false, false, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let mut s: Vec<f64> = dec.singular_values.iter().map(|x| x.max(0.0)).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

pub fn frobenius_norm(m: &Matrix) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Largest singular value.
pub fn operator_norm(m: &Matrix) -> Result<f64> {
    Ok(singular_values(m)?.first().copied().unwrap_or(0.0))
}

/// Share of spectral energy outside the leading singular value,
/// `Σ_{i≥2} s_i² / Σ_i s_i²`. Zero for an exactly rank-one matrix; `None`
/// for the zero matrix.
pub fn tail_energy_ratio(singular_values: &[f64]) -> Option<f64> {
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    if total <= 0.0 {
        return None;
    }
    let lead = singular_values.first().map(|s| s * s).unwrap_or(0.0);
    Some(((total - lead) / total).clamp(0.0, 1.0))
}

/// Leading singular triple of a non-negative matrix with non-negative
/// singular vectors: `M·u = s1·v`, `Mᵀ·v = s1·u`, `u, v ≥ 0`.
#[derive(Debug, Clone)]
pub struct TopPair {
    pub s1: f64,
    /// Right singular vector (length = columns of `M`).
    pub u: Vector,
    /// Left singular vector (length = rows of `M`).
    pub v: Vector,
}

const POWER_MAX_ITERS: usize = 200_000;
const POWER_TOL: f64 = 1e-15;

/// Non-negative top singular pair of an entrywise non-negative matrix.
///
/// Runs power iteration on `MᵀM` from the all-ones vector. Every iterate is
/// non-negative, so the limit is a Perron eigenvector; `v` is then `M·u/s1`.
/// When the top singular value is repeated any non-negative pair in its
/// eigenspace may be returned.
pub fn nonneg_top_pair(m: &Matrix) -> Result<TopPair> {
    ensure_finite(m, "matrix")?;
    if let Some(neg) = m.iter().find(|&&x| x < 0.0) {
        return Err(Error::Precondition(format!(
            "matrix must be entrywise non-negative (found {neg})"
        )));
    }
    if m.iter().all(|&x| x == 0.0) || m.is_empty() {
        return Err(Error::Degenerate("zero matrix has no top pair".into()));
    }

    let gram = m.tr_mul(m);
    let n = m.ncols();
    let mut u = Vector::from_element(n, 1.0 / (n as f64).sqrt());
    for _ in 0..POWER_MAX_ITERS {
        let mut next = &gram * &u;
        let norm = next.norm();
        if norm == 0.0 {
            return Err(Error::Degenerate("power iteration collapsed".into()));
        }
        next /= norm;
        let delta = (&next - &u).norm();
        u = next;
        if delta < POWER_TOL {
            break;
        }
    }
    let mu = m * &u;
    let s1 = mu.norm();
    let v = mu / s1;
    Ok(TopPair { s1, u, v })
}
