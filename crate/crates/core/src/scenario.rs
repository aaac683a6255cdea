//! Experiment configuration: device layout, per-device weights, channel and
//! UAV parameters, and the optimizer settings.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::Vector2;
#[allow(unused_imports)] // inherent float methods shadow it when std is linked
use num_traits::Float;
use rand::Rng;

use crate::geometry::Trajectory;
use crate::rng;
use crate::sca::TangentFormula;
use crate::{Error, Result};

/// Horizontal position in meters.
pub type Point = Vector2<f64>;

/// Weights whose sum is within this distance of one are renormalized on load.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-6;

/// Relative slack allowed on the per-slot speed constraint.
pub const SPEED_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelParams {
    /// Linear channel power gain at the 1 m reference distance.
    pub ref_gain: f64,
    /// Receiver noise power in watts.
    pub noise_power: f64,
    /// Device transmit power in watts.
    pub tx_power: f64,
}

impl ChannelParams {
    /// `√(ϱ P0)`, the numerator of every uplink gain.
    pub fn amplitude(&self) -> f64 {
        (self.ref_gain * self.tx_power).sqrt()
    }
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            ref_gain: 1e-6,
            noise_power: 1e-12,
            tx_power: 0.32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UavParams {
    /// Flight altitude `z` in meters.
    pub altitude: f64,
    /// Maximum speed in m/s.
    pub max_speed: f64,
    /// Slot duration `δ` in seconds.
    pub slot_duration: f64,
    /// Number of slots `N` per flight.
    pub slots: usize,
    /// Start and end point of every flight.
    pub start: Point,
    /// Coverage radius `d_thr` in meters.
    pub coverage_radius: f64,
}

impl UavParams {
    /// Longest allowed displacement between consecutive slots, `V_max δ`.
    pub fn max_step(&self) -> f64 {
        self.max_speed * self.slot_duration
    }
}

impl Default for UavParams {
    fn default() -> Self {
        Self {
            altitude: 50.0,
            max_speed: 50.0,
            slot_duration: 1.0,
            slots: 120,
            start: Point::new(885.0, -10.0),
            coverage_radius: 158.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerParams {
    /// Stop once the fractional objective decrease falls below this.
    pub tolerance: f64,
    pub max_outer_iters: usize,
    /// Tangent refreshes (subproblem solves) per outer iteration.
    pub sca_refreshes: usize,
    pub tangent: TangentFormula,
    /// Accept a minimum-norm `ζ` when the noiseless normal equations are singular.
    pub min_norm_fallback: bool,
    /// Relative duality-gap target of the subproblem solver.
    pub kkt_tolerance: f64,
}

impl Default for OptimizerParams {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            max_outer_iters: 100,
            sca_refreshes: 1,
            tangent: TangentFormula::Exact,
            min_norm_fallback: false,
            kkt_tolerance: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    devices: Vec<Point>,
    weights: Vec<f64>,
    pub channel: ChannelParams,
    pub uav: UavParams,
    pub optimizer: OptimizerParams,
    pub seed: u64,
}

fn positive(field: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("must be positive and finite, got {v}")))
    }
}

impl Scenario {
    /// Validates every parameter and renormalizes the weights.
    pub fn new(
        devices: Vec<Point>,
        weights: Vec<f64>,
        channel: ChannelParams,
        uav: UavParams,
        optimizer: OptimizerParams,
        seed: u64,
    ) -> Result<Self> {
        if devices.is_empty() {
            return Err(Error::invalid("devices", "at least one device is required"));
        }
        if devices.iter().any(|d| !d.x.is_finite() || !d.y.is_finite()) {
            return Err(Error::invalid("devices", "positions must be finite"));
        }
        Error::check_len("device weights", devices.len(), weights.len())?;
        let weights = normalize_weights(weights)?;

        positive("channel.ref_gain", channel.ref_gain)?;
        positive("channel.tx_power", channel.tx_power)?;
        if !(channel.noise_power >= 0.0) || !channel.noise_power.is_finite() {
            return Err(Error::invalid("channel.noise_power", "must be non-negative and finite"));
        }
        positive("uav.altitude", uav.altitude)?;
        positive("uav.max_speed", uav.max_speed)?;
        positive("uav.slot_duration", uav.slot_duration)?;
        positive("uav.coverage_radius", uav.coverage_radius)?;
        if uav.slots == 0 {
            return Err(Error::invalid("uav.slots", "must be at least 1"));
        }
        if !uav.start.x.is_finite() || !uav.start.y.is_finite() {
            return Err(Error::invalid("uav.start", "must be finite"));
        }
        positive("optimizer.tolerance", optimizer.tolerance)?;
        positive("optimizer.kkt_tolerance", optimizer.kkt_tolerance)?;
        if optimizer.sca_refreshes == 0 {
            return Err(Error::invalid("optimizer.sca_refreshes", "must be at least 1"));
        }

        Ok(Self {
            devices,
            weights,
            channel,
            uav,
            optimizer,
            seed,
        })
    }

    /// The default experiment: twenty devices in four clusters over a
    /// 2 km × 2 km area, with uniform weights.
    pub fn paper_default() -> Self {
        let devices = generate_clustered_devices(4, 5, 1000.0, 80.0, 7).expect("valid layout");
        let m = devices.len();
        Self::new(
            devices,
            alloc::vec![1.0 / m as f64; m],
            ChannelParams::default(),
            UavParams::default(),
            OptimizerParams::default(),
            2023,
        )
        .expect("default scenario is valid")
    }

    pub fn devices(&self) -> &[Point] {
        &self.devices
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn num_devices(&self) -> usize {
        self.devices.len()
    }

    /// Same scenario with a different weight vector (e.g. `Q_m / Q` from a
    /// data partition).
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Error::check_len("device weights", self.devices.len(), weights.len())?;
        let mut s = self.clone();
        s.weights = normalize_weights(weights)?;
        Ok(s)
    }

    pub fn with_devices(&self, devices: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        Self::new(
            devices,
            weights,
            self.channel.clone(),
            self.uav.clone(),
            self.optimizer.clone(),
            self.seed,
        )
    }
}

fn normalize_weights(weights: Vec<f64>) -> Result<Vec<f64>> {
    if let Some((m, w)) = weights.iter().enumerate().find(|(_, w)| !(**w > 0.0) || !w.is_finite()) {
        return Err(Error::invalid(
            "devices.weights",
            format!("weight {m} must be positive, got {w}"),
        ));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(Error::invalid(
            "devices.weights",
            format!("weights sum to {sum}, expected 1 within {WEIGHT_SUM_TOLERANCE:e}"),
        ));
    }
    Ok(weights.into_iter().map(|w| w / sum).collect())
}

/// Devices in groups: cluster centers uniform in the square shrunk by
/// `spread`, members uniform in a disk of radius `spread` around their center.
pub fn generate_clustered_devices(
    n_clusters: usize,
    per_cluster: usize,
    area_half_width: f64,
    cluster_spread: f64,
    seed: u64,
) -> Result<Vec<Point>> {
    if n_clusters == 0 {
        return Err(Error::invalid("n_clusters", "must be at least 1"));
    }
    if per_cluster == 0 {
        return Err(Error::invalid("per_cluster", "must be at least 1"));
    }
    positive("area_half_width", area_half_width)?;
    if !(cluster_spread >= 0.0) || cluster_spread >= area_half_width {
        return Err(Error::invalid(
            "cluster_spread",
            format!("must lie in [0, {area_half_width}), got {cluster_spread}"),
        ));
    }
    let mut rng = rng::derive_rng(seed, &[rng::stream::LAYOUT]);
    let inner = area_half_width - cluster_spread;
    let mut out = Vec::with_capacity(n_clusters * per_cluster);
    for _ in 0..n_clusters {
        let center = Point::new(
            rng.random_range(-inner..=inner),
            rng.random_range(-inner..=inner),
        );
        for _ in 0..per_cluster {
            let r = cluster_spread * rng.random::<f64>().sqrt();
            let theta = 2.0 * PI * rng.random::<f64>();
            let p = center + Point::new(r * theta.cos(), r * theta.sin());
            out.push(Point::new(
                p.x.clamp(-area_half_width, area_half_width),
                p.y.clamp(-area_half_width, area_half_width),
            ));
        }
    }
    Ok(out)
}

/// `Σ_m b_m v_m`.
pub fn barycenter(devices: &[Point], weights: &[f64]) -> Result<Point> {
    Error::check_len("barycenter weights", devices.len(), weights.len())?;
    Ok(devices
        .iter()
        .zip(weights)
        .fold(Point::zeros(), |acc, (v, &b)| acc + v * b))
}

/// Largest circle radius whose per-slot chord fits the speed limit.
pub fn max_circle_radius(uav: &UavParams) -> f64 {
    let half = (PI / uav.slots as f64).sin();
    if half <= 0.0 {
        f64::INFINITY
    } else {
        uav.max_step() / (2.0 * half)
    }
}

/// `N + 1` points evenly spaced on a circle. The loop starts at `u_start`
/// when it lies on the circle and at angle zero otherwise.
pub fn circular_trajectory(center: Point, radius: f64, uav: &UavParams) -> Result<Trajectory> {
    if !(radius >= 0.0) || !radius.is_finite() {
        return Err(Error::invalid("radius", format!("must be non-negative, got {radius}")));
    }
    let n = uav.slots;
    let chord = 2.0 * radius * (PI / n as f64).sin();
    let limit = uav.max_step();
    if chord > limit * (1.0 + SPEED_SLACK) {
        return Err(Error::SpeedInfeasible { step: chord, limit });
    }
    let offset = uav.start - center;
    let on_circle = (offset.norm() - radius).abs() <= 1e-9 * radius.max(1.0);
    let phase0 = if on_circle && radius > 0.0 {
        offset.y.atan2(offset.x)
    } else {
        0.0
    };
    let mut points: Vec<Point> = (0..n)
        .map(|k| {
            let a = phase0 + 2.0 * PI * k as f64 / n as f64;
            center + Point::new(radius * a.cos(), radius * a.sin())
        })
        .collect();
    if on_circle {
        points[0] = uav.start;
    }
    points.push(points[0]);
    Trajectory::new(points, limit)
}
