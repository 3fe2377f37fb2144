//! MNIST preprocessing and the softmax cross-entropy loss.

use std::path::Path;

use crate::error::{Error, Result};
use crate::experiments::idx::{parse_idx_as, IdxKind};
use crate::linalg::Matrix;

/// `x ↦ (x/255 - μ)/σ` with `μ`, `σ` the mean and (population) standard
/// deviation of `x/255` over every pixel of every image.
pub fn normalize_mnist(images: &Matrix) -> Result<Matrix> {
    if images.is_empty() {
        return Err(Error::InvalidInput("no images".into()));
    }
    if let Some(v) = images.iter().find(|v| !(0.0..=255.0).contains(*v)) {
        return Err(Error::InvalidInput(format!("pixel value {v} outside [0, 255]")));
    }
    let scaled = images / 255.0;
    let n = scaled.len() as f64;
    let mean = scaled.sum() / n;
    let var = scaled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var <= 0.0 {
        return Err(Error::Degenerate("images have zero pixel variance".into()));
    }
    let std = var.sqrt();
    Ok(scaled.map(|v| (v - mean) / std))
}

pub fn labels_from_matrix(m: &Matrix) -> Result<Vec<usize>> {
    m.iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::InvalidInput(format!("label {v} is not a non-negative integer")))
            }
        })
        .collect()
}

/// Mean softmax cross-entropy over the columns of `y` and its gradient with
/// respect to `y`, `(softmax(y) - onehot)/N`.
pub fn cross_entropy_and_grad(y: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (classes, n) = y.shape();
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {n} output columns",
            labels.len()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidInput("no examples".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&c| c >= classes) {
        return Err(Error::InvalidInput(format!("label {bad} outside [0, {classes})")));
    }
    let mut grad = Matrix::zeros(classes, n);
    let mut loss = 0.0;
    for (j, &label) in labels.iter().enumerate() {
        let col = y.column(j);
        let max = col.max();
        let sum: f64 = col.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - col[label];
        for i in 0..classes {
            grad[(i, j)] = (col[i] - log_z).exp();
        }
        grad[(label, j)] -= 1.0;
    }
    let n = n as f64;
    grad /= n;
    Ok((loss / n, grad))
}

/// First `subset` examples of an IDX image/label pair: normalized images
/// (`784 × subset`) and integer labels.
pub fn load_subset(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    subset: usize,
) -> Result<(Matrix, Vec<usize>)> {
    let x = parse_idx_as(images, IdxKind::Images)?;
    let y = parse_idx_as(labels, IdxKind::Labels)?;
    if x.ncols() != y.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "{} images but {} labels",
            x.ncols(),
            y.ncols()
        )));
    }
    if subset == 0 || subset > x.ncols() {
        return Err(Error::InvalidInput(format!(
            "subset size {subset} outside [1, {}]",
            x.ncols()
        )));
    }
    let x = normalize_mnist(&x.columns(0, subset).into_owned())?;
    let labels = labels_from_matrix(&y.columns(0, subset).into_owned())?;
    Ok((x, labels))
}
