//! Trajectories, coverage, the line-of-sight channel and the effective gain
//! matrix `K`.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use num_complex::Complex64;
#[allow(unused_imports)] // inherent float methods shadow it when std is linked
use num_traits::Float;

use crate::scenario::{Point, Scenario, SPEED_SLACK};
use crate::{Error, Result};

/// UAV path `u[0..=N]` with `u[0] == u[N]` and every step within the speed
/// limit.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    points: Vec<Point>,
}

impl Trajectory {
    pub fn new(points: Vec<Point>, max_step: f64) -> Result<Self> {
        let t = Self { points };
        t.check(max_step)?;
        Ok(t)
    }

    /// Stationary flight at `at` for `slots` slots.
    pub fn hover(at: Point, slots: usize) -> Self {
        Self {
            points: alloc::vec![at; slots + 1],
        }
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    /// Number of slots `N`.
    pub fn slots(&self) -> usize {
        self.points.len() - 1
    }

    /// Position during slot `n` for `n` in `1..=N`.
    pub fn slot(&self, n: usize) -> Point {
        self.points[n]
    }

    pub fn start(&self) -> Point {
        self.points[0]
    }

    /// Longest step between consecutive points.
    pub fn max_step_len(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1] - w[0]).norm())
            .fold(0.0, f64::max)
    }

    /// Largest amount by which any step exceeds `max_step` (zero if none).
    pub fn speed_violation(&self, max_step: f64) -> f64 {
        (self.max_step_len() - max_step).max(0.0)
    }

    pub fn check(&self, max_step: f64) -> Result<()> {
        if self.points.len() < 2 {
            return Err(Error::InfeasibleTrajectory("needs at least two points".into()));
        }
        if self.points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::InfeasibleTrajectory("non-finite point".into()));
        }
        if self.points[0] != self.points[self.points.len() - 1] {
            return Err(Error::InfeasibleTrajectory("first and last points differ".into()));
        }
        let limit_sq = max_step * max_step * (1.0 + SPEED_SLACK);
        for (n, w) in self.points.windows(2).enumerate() {
            let d2 = (w[1] - w[0]).norm_squared();
            if d2 > limit_sq {
                return Err(Error::InfeasibleTrajectory(format!(
                    "step {n} has length {:.6} m, limit {max_step:.6} m",
                    d2.sqrt()
                )));
            }
        }
        Ok(())
    }

    /// Same path shifted by `offset`.
    pub fn translated(&self, offset: Point) -> Self {
        Self {
            points: self.points.iter().map(|p| p + offset).collect(),
        }
    }
}

/// True when `v` is within `d_thr` of `u` (boundary included).
pub fn coverage_indicator(u: Point, v: Point, d_thr: f64) -> bool {
    (u - v).norm() <= d_thr
}

/// Free-space LoS channel `√(ϱ / (z² + ‖u − v‖²)) e^{jθ}`.
pub fn channel_coefficient(u: Point, v: Point, altitude: f64, ref_gain: f64, phase: f64) -> Complex64 {
    let mag = (ref_gain / (altitude * altitude + (u - v).norm_squared())).sqrt();
    Complex64::from_polar(mag, phase)
}

/// Effective uplink gains `K` (devices × slots), zero where a device is out of
/// coverage.
#[derive(Debug, Clone, PartialEq)]
pub struct GainMatrix {
    k: DMatrix<f64>,
}

impl GainMatrix {
    pub fn from_matrix(k: DMatrix<f64>) -> Result<Self> {
        if let Some(bad) = k.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("gains", format!("entries must be finite and non-negative, got {bad}")));
        }
        Ok(Self { k })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.k
    }

    pub fn devices(&self) -> usize {
        self.k.nrows()
    }

    pub fn slots(&self) -> usize {
        self.k.ncols()
    }

    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.k[(m, n)]
    }
}

fn in_coverage_gain(amplitude: f64, altitude: f64, dist_sq: f64) -> f64 {
    amplitude / (altitude * altitude + dist_sq).sqrt()
}

/// `K_{m,n} = α_m[n] √(ϱP0) / √(z² + ‖u[n] − v_m‖²)` over slots `n = 1..=N`.
pub fn gain_matrix(traj: &Trajectory, scenario: &Scenario) -> GainMatrix {
    let devices = scenario.devices();
    let amp = scenario.channel.amplitude();
    let z = scenario.uav.altitude;
    let d_thr = scenario.uav.coverage_radius;
    let n_slots = traj.slots();
    let k = DMatrix::from_fn(devices.len(), n_slots, |m, n| {
        let u = traj.slot(n + 1);
        if coverage_indicator(u, devices[m], d_thr) {
            in_coverage_gain(amp, z, (u - devices[m]).norm_squared())
        } else {
            0.0
        }
    });
    GainMatrix { k }
}

/// Coverage pattern `α_m[n]` matching [`gain_matrix`].
pub fn coverage_matrix(traj: &Trajectory, scenario: &Scenario) -> DMatrix<u8> {
    let devices = scenario.devices();
    let d_thr = scenario.uav.coverage_radius;
    DMatrix::from_fn(devices.len(), traj.slots(), |m, n| {
        coverage_indicator(traj.slot(n + 1), devices[m], d_thr) as u8
    })
}

/// Gains of a parameter server hovering at `at` with coverage waived: every
/// device is served in every slot.
pub fn waived_coverage_gains(at: Point, scenario: &Scenario) -> GainMatrix {
    let amp = scenario.channel.amplitude();
    let z = scenario.uav.altitude;
    let devices = scenario.devices();
    let k = DMatrix::from_fn(devices.len(), scenario.uav.slots, |m, _| {
        in_coverage_gain(amp, z, (at - devices[m]).norm_squared())
    });
    GainMatrix { k }
}
