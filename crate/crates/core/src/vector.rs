//! Dense parameter vectors and the few reductions the algorithms share.
//!
//! Every reduction over clients walks them in ascending index order so that
//! sequential and parallel executions produce bit-identical sums.

use ndarray::Array1;

use crate::error::{Error, Result};

/// Dense p-dimensional parameter vector (`x`, `z`, `y`, `c`, gradients).
pub type ModelVector = Array1<f64>;

pub fn zeros(p: usize) -> ModelVector {
    Array1::zeros(p)
}

pub fn norm_sq(v: &ModelVector) -> f64 {
    v.iter().map(|a| a * a).sum()
}

pub fn norm(v: &ModelVector) -> f64 {
    norm_sq(v).sqrt()
}

pub fn dist(a: &ModelVector, b: &ModelVector) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn check_dim(v: &ModelVector, p: usize) -> Result<()> {
    if v.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: v.len(),
        });
    }
    Ok(())
}

/// Sum of `vs` in index order. Panics on an empty slice.
pub fn ordered_sum(vs: &[ModelVector]) -> ModelVector {
    let mut acc = vs[0].clone();
    for v in &vs[1..] {
        acc += v;
    }
    acc
}

/// Mean of `vs` in index order. Panics on an empty slice.
pub fn ordered_mean(vs: &[ModelVector]) -> ModelVector {
    let mut acc = ordered_sum(vs);
    acc /= vs.len() as f64;
    acc
}

pub fn is_finite(v: &ModelVector) -> bool {
    v.iter().all(|a| a.is_finite())
}
