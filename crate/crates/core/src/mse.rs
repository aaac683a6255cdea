//! Analytic aggregation error.
//!
//! With `r = υ − Kζ`, the expected squared reconstruction error of one round is
//!
//! ```text
//! E‖e‖² = D rᵀ ρ r + (D σ² / 2) ζᵀζ
//! ```
//!
//! where `ρ` is the second-moment matrix of the normalized gradient rows and
//! `υ_m = b_m √υ_m`. The optimizer works with the per-dimension objective
//! (the same value divided by `D`).

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
#[allow(unused_imports)] // inherent float methods shadow it when std is linked
use num_traits::Float;
use rand_distr::{Distribution, StandardNormal};

use crate::airphy::NormalizedBatch;
use crate::geometry::GainMatrix;
use crate::linalg;
use crate::rng::{self, stream};
use crate::{pairwise_sum, Error, Result};

/// Symmetric positive semidefinite gradient correlation matrix `ρ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix(DMatrix<f64>);

impl CorrelationMatrix {
    /// Symmetrizes, checks positive semidefiniteness up to round-off, and
    /// clamps any tiny negative eigenvalues to zero.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                context: "correlation matrix",
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("correlation", "entries must be finite"));
        }
        let sym = if m == m.transpose() { m } else { linalg::symmetrize(&m) };
        let scale = sym.norm();
        let (floored, min) = linalg::floor_eigenvalues(sym);
        if min < -linalg::PSD_TOLERANCE * scale {
            return Err(Error::NotPositiveSemidefinite { min_eigenvalue: min });
        }
        Ok(Self(floored))
    }

    pub fn identity(m: usize) -> Self {
        Self(DMatrix::identity(m, m))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }
}

/// `υ = [b_1 √υ_1, …, b_M √υ_M]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedStds(DVector<f64>);

impl WeightedStds {
    pub fn new(v: DVector<f64>) -> Result<Self> {
        if v.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(Error::invalid("weighted stds", "entries must be finite and non-negative"));
        }
        Ok(Self(v))
    }

    pub fn from_batch(batch: &NormalizedBatch, weights: &[f64]) -> Result<Self> {
        Error::check_len("device weights", batch.devices(), weights.len())?;
        Self::new(DVector::from_iterator(
            weights.len(),
            weights.iter().zip(&batch.stds).map(|(b, s)| b * s),
        ))
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-slot global combining weights `ζ`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationWeights(DVector<f64>);

impl AggregationWeights {
    pub fn new(v: DVector<f64>) -> Result<Self> {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("zeta", "entries must be finite"));
        }
        Ok(Self(v))
    }

    pub fn zeros(n: usize) -> Self {
        Self(DVector::zeros(n))
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `ρ̂ = G̃ᵀG̃ / D`, symmetrized and with round-off negative eigenvalues removed.
pub fn estimate_correlation(batch: &NormalizedBatch) -> Result<CorrelationMatrix> {
    let g = &batch.normalized;
    let d = g.nrows().max(1) as f64;
    CorrelationMatrix::new(g.transpose() * g / d)
}

fn check_dims(
    stds: &WeightedStds,
    corr: &CorrelationMatrix,
    gains: &GainMatrix,
    zeta: &AggregationWeights,
) -> Result<()> {
    Error::check_len("correlation size", stds.len(), corr.dim())?;
    Error::check_len("gain matrix rows", stds.len(), gains.devices())?;
    Error::check_len("aggregation weights", gains.slots(), zeta.len())
}

/// `rᵀρr + (σ²/2) ζᵀζ`: the per-dimension objective.
pub fn objective(
    stds: &WeightedStds,
    corr: &CorrelationMatrix,
    gains: &GainMatrix,
    zeta: &AggregationWeights,
    noise_power: f64,
) -> Result<f64> {
    check_dims(stds, corr, gains, zeta)?;
    let r = stds.vector() - gains.matrix() * zeta.vector();
    let signal = r.dot(&(corr.matrix() * &r));
    Ok(signal + 0.5 * noise_power * zeta.vector().norm_squared())
}

/// `D rᵀρr + (Dσ²/2) ζᵀζ`.
pub fn mse(
    stds: &WeightedStds,
    corr: &CorrelationMatrix,
    gains: &GainMatrix,
    zeta: &AggregationWeights,
    noise_power: f64,
    dim: usize,
) -> Result<f64> {
    Ok(dim as f64 * objective(stds, corr, gains, zeta, noise_power)?)
}

/// Gradient of [`objective`] with respect to `ζ`: `σ²ζ − 2Kᵀρ(υ − Kζ)`.
pub fn objective_gradient(
    stds: &WeightedStds,
    corr: &CorrelationMatrix,
    gains: &GainMatrix,
    zeta: &AggregationWeights,
    noise_power: f64,
) -> Result<DVector<f64>> {
    check_dims(stds, corr, gains, zeta)?;
    let k = gains.matrix();
    let r = stds.vector() - k * zeta.vector();
    Ok(zeta.vector() * noise_power - (k.transpose() * (corr.matrix() * r)) * 2.0)
}

/// Behavior of [`optimal_zeta`] when the noiseless normal equations are singular.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SingularFallback {
    #[default]
    Error,
    MinimumNorm,
}

/// Relative eigenvalue cut below which a noiseless system counts as singular.
const SINGULAR_CUT: f64 = 1e-12;

/// `ζ* = ((σ²/2) I + KᵀρK)⁻¹ Kᵀρυ`.
pub fn optimal_zeta(
    gains: &GainMatrix,
    corr: &CorrelationMatrix,
    stds: &WeightedStds,
    noise_power: f64,
    fallback: SingularFallback,
) -> Result<AggregationWeights> {
    Error::check_len("correlation size", stds.len(), corr.dim())?;
    Error::check_len("gain matrix rows", stds.len(), gains.devices())?;
    if !(noise_power >= 0.0) {
        return Err(Error::invalid("noise_power", "must be non-negative"));
    }
    let k = gains.matrix();
    let rk = corr.matrix() * k;
    let gram = linalg::symmetrize(&(k.transpose() * &rk));
    let rhs = rk.transpose() * stds.vector();
    let n = gram.nrows();

    if noise_power > 0.0 {
        let system = &gram + DMatrix::identity(n, n) * (0.5 * noise_power);
        if let Some(x) = linalg::solve_spd(&system, &rhs) {
            return AggregationWeights::new(x);
        }
        // The regularizer is below the Gram matrix's round-off; solve in its
        // eigenbasis where the shift is applied exactly.
        let eig = SymmetricEigen::new(gram);
        let proj = eig.eigenvectors.transpose() * &rhs;
        let scaled = DVector::from_fn(n, |i, _| proj[i] / (eig.eigenvalues[i].max(0.0) + 0.5 * noise_power));
        return AggregationWeights::new(&eig.eigenvectors * scaled);
    }

    let max_diag = gram.diagonal().amax();
    let (lo, hi) = if n == 0 { (1.0, 1.0) } else { linalg::eigen_extremes(&gram) };
    let singular = max_diag == 0.0 || lo <= SINGULAR_CUT * hi;
    if !singular {
        if let Some(x) = linalg::solve_spd(&gram, &rhs) {
            return AggregationWeights::new(x);
        }
    }
    match fallback {
        SingularFallback::Error => Err(Error::Singular("optimal zeta (noiseless KᵀρK)")),
        SingularFallback::MinimumNorm => {
            AggregationWeights::new(linalg::solve_symmetric_pinv(&gram, &rhs, SINGULAR_CUT))
        }
    }
}

/// Monte-Carlo estimate of `E‖e‖²` by direct simulation: rows of the
/// normalized gradient matrix are drawn as `N(0, ρ)` and every slot gets fresh
/// receiver noise. Only the first two moments of the rows enter the analytic
/// value, so any row distribution with those moments would do.
#[derive(Debug, Clone)]
pub struct MonteCarloOracle {
    root: DMatrix<f64>,
    residual: DVector<f64>,
    zeta: Vec<f64>,
    noise_std: f64,
    dim: usize,
    seed: u64,
}

impl MonteCarloOracle {
    pub fn new(
        stds: &WeightedStds,
        corr: &CorrelationMatrix,
        gains: &GainMatrix,
        zeta: &AggregationWeights,
        noise_power: f64,
        dim: usize,
        seed: u64,
    ) -> Result<Self> {
        check_dims(stds, corr, gains, zeta)?;
        if dim == 0 {
            return Err(Error::invalid("dim", "must be at least 1"));
        }
        let root = linalg::psd_root(corr.matrix())?;
        Ok(Self {
            root,
            residual: stds.vector() - gains.matrix() * zeta.vector(),
            zeta: zeta.as_slice().to_vec(),
            noise_std: (0.5 * noise_power).sqrt(),
            dim,
            seed,
        })
    }

    /// `‖e‖²` for one independently seeded trial.
    pub fn trial(&self, index: u64) -> f64 {
        let mut rng = rng::derive_rng(self.seed, &[stream::MONTE_CARLO, index]);
        let m = self.residual.len();
        let mut x = DVector::<f64>::zeros(m);
        let mut err = alloc::vec![0.0; self.dim];
        for e in err.iter_mut() {
            for xi in x.iter_mut() {
                *xi = StandardNormal.sample(&mut rng);
            }
            let row = &self.root * &x;
            *e = row.dot(&self.residual);
        }
        if self.noise_std > 0.0 {
            for &z in &self.zeta {
                for e in err.iter_mut() {
                    let w: f64 = StandardNormal.sample(&mut rng);
                    *e -= z * self.noise_std * w;
                }
            }
        }
        err.iter().map(|e| e * e).sum()
    }

    pub fn estimate(&self, trials: usize) -> Result<f64> {
        if trials == 0 {
            return Err(Error::invalid("trials", "must be at least 1"));
        }
        let samples: Vec<f64> = (0..trials as u64).map(|t| self.trial(t)).collect();
        Ok(pairwise_sum(&samples) / trials as f64)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn mse_monte_carlo(
    stds: &WeightedStds,
    corr: &CorrelationMatrix,
    gains: &GainMatrix,
    zeta: &AggregationWeights,
    noise_power: f64,
    dim: usize,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    MonteCarloOracle::new(stds, corr, gains, zeta, noise_power, dim, seed)?.estimate(trials)
}

impl core::fmt::Display for CorrelationMatrix {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(&format!("{}", self.0))
    }
}
