//! Gradient-descent convergence bound under aggregation error, and the exact
//! constants of the quadratic task it is checked on.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use super::model::LossFamily;
use super::task::Federation;
use crate::linalg::eigen_extremes;
use crate::{Error, Result};

/// `B(T) = Σ_{t≤T} (1 − μ/ω)^{T−t} ‖e_t‖² + gap0 (1 − μ/ω)^{T+1}` for every
/// `T` covered by `error_sq`. It bounds `F(w_{T+1}) − F*` for gradient steps
/// of size `1/ω` when `ω ≥ 1/2`.
pub fn convergence_bound(mu: f64, omega: f64, error_sq: &[f64], gap0: f64) -> Result<Vec<f64>> {
    if !(mu > 0.0) {
        return Err(Error::invalid("mu", "strong convexity constant must be positive"));
    }
    if !(omega >= mu) || !omega.is_finite() {
        return Err(Error::invalid("omega", "smoothness constant must be at least mu"));
    }
    let rate = 1.0 - mu / omega;
    let mut acc = 0.0;
    let mut decay = gap0;
    Ok(error_sq
        .iter()
        .map(|e| {
            acc = rate * acc + e;
            decay *= rate;
            acc + decay
        })
        .collect())
}

/// Curvature extremes and the minimizer of the global quadratic loss.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticConstants {
    pub mu: f64,
    pub omega: f64,
    pub optimum: DVector<f64>,
    pub optimal_loss: f64,
}

/// Exact constants for a federation with the quadratic loss family. The
/// Hessian is block diagonal with one copy of
/// `A = Σ_m b_m X̃_mᵀX̃_m / n_m + λI` per class.
pub fn quadratic_constants(fed: &Federation) -> Result<QuadraticConstants> {
    let model = fed.task.model;
    if model.family != LossFamily::Quadratic {
        return Err(Error::invalid("learning.loss", "exact constants need the quadratic family"));
    }
    let (p, c) = (model.features, model.classes);
    let mut a = DMatrix::zeros(p + 1, p + 1);
    let mut rhs = DMatrix::zeros(p + 1, c);
    for (shard, &b) in fed.shards().iter().zip(fed.weights()) {
        let xa = shard.features().clone().insert_column(p, 1.0);
        let y = DMatrix::from_fn(shard.len(), c, |i, k| f64::from(u8::from(shard.labels()[i] == k)));
        let n = shard.len() as f64;
        a += xa.transpose() * &xa * (b / n);
        rhs += xa.transpose() * y * (b / n);
    }
    for i in 0..=p {
        a[(i, i)] += model.ridge;
    }
    let (mu, omega) = eigen_extremes(&a);
    if !(mu > 0.0) {
        return Err(Error::Singular("quadratic task curvature"));
    }
    let w = a
        .cholesky()
        .ok_or(Error::Singular("quadratic task curvature"))?
        .solve(&rhs);
    let optimum = DVector::from_column_slice(w.as_slice());
    let optimal_loss = fed.global_loss(&optimum)?;
    Ok(QuadraticConstants {
        mu,
        omega,
        optimum,
        optimal_loss,
    })
}
