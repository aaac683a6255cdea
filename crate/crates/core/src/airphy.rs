//! Signal-level simulation of one hierarchical over-the-air aggregation round:
//! normalization, modulation, per-slot superposition with receiver noise,
//! weighted global combining, and gradient reconstruction.

use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
#[allow(unused_imports)] // inherent float methods shadow it when std is linked
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::geometry::{gain_matrix, GainMatrix, Trajectory};
use crate::rng::{self, stream};
use crate::{Error, Result, Scenario};

/// Local gradients as the columns of a `D × M` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBatch {
    g: DMatrix<f64>,
}

impl GradientBatch {
    pub fn new(g: DMatrix<f64>) -> Result<Self> {
        if g.ncols() == 0 {
            return Err(Error::invalid("gradients", "at least one device is required"));
        }
        if g.nrows() == 0 || g.nrows() % 2 != 0 {
            return Err(Error::OddDimension(g.nrows()));
        }
        Ok(Self { g })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn dim(&self) -> usize {
        self.g.nrows()
    }

    pub fn devices(&self) -> usize {
        self.g.ncols()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NormalizeOptions {
    /// Map constant gradients to an all-zero normalized column with zero
    /// standard deviation instead of failing.
    pub allow_constant: bool,
}

/// Zero-mean, unit-variance columns together with the per-device mean and
/// standard deviation needed for reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedBatch {
    pub normalized: DMatrix<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl NormalizedBatch {
    pub fn dim(&self) -> usize {
        self.normalized.nrows()
    }

    pub fn devices(&self) -> usize {
        self.normalized.ncols()
    }
}

/// Normalizes each column by its population mean and standard deviation.
pub fn normalize_gradients(batch: &GradientBatch, opts: NormalizeOptions) -> Result<NormalizedBatch> {
    let g = batch.matrix();
    let d = g.nrows() as f64;
    let mut normalized = DMatrix::zeros(g.nrows(), g.ncols());
    let mut means = Vec::with_capacity(g.ncols());
    let mut stds = Vec::with_capacity(g.ncols());
    for (m, col) in g.column_iter().enumerate() {
        let mean = col.sum() / d;
        let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d;
        let scale = col.amax();
        // Variance at the level of the mean's own rounding error is noise.
        let constant = !(var > (4.0 * f64::EPSILON * scale).powi(2));
        if constant {
            if !opts.allow_constant {
                return Err(Error::ZeroVariance { column: m });
            }
            means.push(mean);
            stds.push(0.0);
            continue;
        }
        let std = var.sqrt();
        for (dst, x) in normalized.column_mut(m).iter_mut().zip(col.iter()) {
            *dst = (x - mean) / std;
        }
        means.push(mean);
        stds.push(std);
    }
    Ok(NormalizedBatch {
        normalized,
        means,
        stds,
    })
}

/// First half as real parts, second half as imaginary parts.
pub fn modulate(g: &[f64]) -> Result<Vec<Complex64>> {
    if g.len() % 2 != 0 {
        return Err(Error::OddDimension(g.len()));
    }
    let c = g.len() / 2;
    Ok((0..c).map(|i| Complex64::new(g[i], g[c + i])).collect())
}

/// Inverse of [`modulate`]: real parts stacked over imaginary parts.
pub fn demodulate(r: &[Complex64]) -> Vec<f64> {
    r.iter().map(|z| z.re).chain(r.iter().map(|z| z.im)).collect()
}

/// Channel phases `θ_m[n]` seen during a round. Transmitters pre-rotate by the
/// conjugate phase, so the phases cancel in the received signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelPhases {
    Aligned,
    Random { seed: u64 },
}

impl ChannelPhases {
    fn draw(&self, m: usize, n: usize) -> f64 {
        match *self {
            ChannelPhases::Aligned => 0.0,
            ChannelPhases::Random { seed } => {
                let mut r = rng::derive_rng(seed, &[stream::PHASE, m as u64, n as u64]);
                2.0 * PI * r.random::<f64>()
            }
        }
    }
}

/// Received superpositions `y[n]`, one length-`C` vector per slot.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedSlots {
    pub slots: Vec<Vec<Complex64>>,
}

impl ReceivedSlots {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

/// Seed of the receiver noise in slot `n` of a round.
pub fn slot_noise_seed(noise_seed: u64, slot: usize) -> u64 {
    rng::derive_seed(noise_seed, &[stream::SLOT, slot as u64])
}

/// `y[n] = Σ_m K_{m,n} r_m + n[n]` with circularly symmetric Gaussian noise of
/// variance `noise_power` per entry.
pub fn simulate_partial_aggregation(
    batch: &NormalizedBatch,
    gains: &GainMatrix,
    noise_power: f64,
    noise_seed: u64,
    phases: ChannelPhases,
) -> Result<ReceivedSlots> {
    Error::check_len("gain matrix rows", batch.devices(), gains.devices())?;
    if !(noise_power >= 0.0) {
        return Err(Error::invalid("noise_power", "must be non-negative"));
    }
    let signals: Vec<Vec<Complex64>> = batch
        .normalized
        .column_iter()
        .map(|c| modulate(c.as_slice()))
        .collect::<Result<_>>()?;
    let c = batch.dim() / 2;
    let noise_std = (noise_power / 2.0).sqrt();

    let slots = (0..gains.slots())
        .map(|n| {
            let mut y = alloc::vec![Complex64::new(0.0, 0.0); c];
            for (m, r) in signals.iter().enumerate() {
                let k = gains.get(m, n);
                if k == 0.0 {
                    continue;
                }
                // |h β| = K, and the transmit pre-rotation undoes the channel phase.
                let theta = phases.draw(m, n);
                let coeff = Complex64::from_polar(k, theta + (-theta));
                for (acc, s) in y.iter_mut().zip(r) {
                    *acc += coeff * s;
                }
            }
            if noise_std > 0.0 {
                let mut rng = rng::rng_from(slot_noise_seed(noise_seed, n));
                for acc in y.iter_mut() {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    *acc += Complex64::new(noise_std * re, noise_std * im);
                }
            }
            y
        })
        .collect();
    Ok(ReceivedSlots { slots })
}

/// `ĝ = [Re a; Im a] + ḡ 1` with `a = Σ_n ζ[n] y[n]` and `ḡ = Σ_m b_m ḡ_m`.
pub fn global_aggregate_and_reconstruct(
    slots: &ReceivedSlots,
    zeta: &[f64],
    means: &[f64],
    weights: &[f64],
) -> Result<Vec<f64>> {
    Error::check_len("aggregation weights", slots.len(), zeta.len())?;
    Error::check_len("device means", weights.len(), means.len())?;
    let c = slots.slots.first().map_or(0, |s| s.len());
    let mut a = alloc::vec![Complex64::new(0.0, 0.0); c];
    for (y, &z) in slots.slots.iter().zip(zeta) {
        Error::check_len("received slot", c, y.len())?;
        for (acc, v) in a.iter_mut().zip(y) {
            *acc += v * z;
        }
    }
    let offset: f64 = weights.iter().zip(means).map(|(b, g)| b * g).sum();
    let mut out = demodulate(&a);
    for v in out.iter_mut() {
        *v += offset;
    }
    Ok(out)
}

/// `Σ_m b_m g_m`, the aggregate an error-free server would compute.
pub fn ideal_aggregate(batch: &GradientBatch, weights: &[f64]) -> Result<DVector<f64>> {
    Error::check_len("device weights", batch.devices(), weights.len())?;
    Ok(batch.matrix() * DVector::from_column_slice(weights))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutput {
    /// Reconstructed global gradient `ĝ`.
    pub estimate: Vec<f64>,
    /// `e = Σ_m b_m g_m − ĝ`.
    pub error: Vec<f64>,
    pub normalized: NormalizedBatch,
}

impl RoundOutput {
    pub fn error_sq_norm(&self) -> f64 {
        self.error.iter().map(|e| e * e).sum()
    }
}

/// Full round for an explicit gain matrix.
#[allow(clippy::too_many_arguments)]
pub fn simulate_round_with_gains(
    batch: &GradientBatch,
    gains: &GainMatrix,
    zeta: &[f64],
    weights: &[f64],
    noise_power: f64,
    noise_seed: u64,
    phases: ChannelPhases,
    opts: NormalizeOptions,
) -> Result<RoundOutput> {
    let normalized = normalize_gradients(batch, opts)?;
    let received = simulate_partial_aggregation(&normalized, gains, noise_power, noise_seed, phases)?;
    let estimate = global_aggregate_and_reconstruct(&received, zeta, &normalized.means, weights)?;
    let ideal = ideal_aggregate(batch, weights)?;
    let error = ideal.iter().zip(&estimate).map(|(g, h)| g - h).collect();
    Ok(RoundOutput {
        estimate,
        error,
        normalized,
    })
}

/// Full round along a trajectory, with channel phases drawn from the round's
/// noise seed.
pub fn simulate_round(
    batch: &GradientBatch,
    traj: &Trajectory,
    zeta: &[f64],
    scenario: &Scenario,
    noise_seed: u64,
) -> Result<RoundOutput> {
    let gains = gain_matrix(traj, scenario);
    simulate_round_with_gains(
        batch,
        &gains,
        zeta,
        scenario.weights(),
        scenario.channel.noise_power,
        noise_seed,
        ChannelPhases::Random { seed: noise_seed },
        NormalizeOptions::default(),
    )
}
