//! Relaxed coverage bound and its first-order (tangent) lower bound.
//!
//! Replacing the binary coverage `α` by `d_thr² / (d_thr² + s)` turns the gain
//! equality into `K ≤ f(s)` with
//!
//! ```text
//! f(s) = d_thr² √(ϱP0) / ((d_thr² + s) √(z² + s)),   s = ‖u − v‖²
//! ```
//!
//! `f` is convex and decreasing in `s`, so its tangent at any expansion point
//! is a global lower bound and `K ≤ tangent(‖u − v‖²)` is a convex constraint
//! in `u`.

#[allow(unused_imports)] // inherent float methods shadow it when std is linked
use num_traits::Float;

use crate::Scenario;

/// Which derivative expression to use for the tangent slope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TangentFormula {
    /// The true derivative of the relaxed bound.
    #[default]
    Exact,
    /// The expression with `1` in place of `z²` and `√s` in place of `s`.
    /// Not a derivative of `f`; kept only to compare against.
    Printed,
}

/// Constants of the relaxed bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlackParams {
    pub coverage_radius: f64,
    pub altitude: f64,
    /// `√(ϱ P0)`.
    pub amplitude: f64,
}

impl SlackParams {
    pub fn from_scenario(s: &Scenario) -> Self {
        Self {
            coverage_radius: s.uav.coverage_radius,
            altitude: s.uav.altitude,
            amplitude: s.channel.amplitude(),
        }
    }
}

/// `f(s)`, the gain bound after relaxing binary coverage.
pub fn coverage_bound(s: f64, p: &SlackParams) -> f64 {
    let d2 = p.coverage_radius * p.coverage_radius;
    let z2 = p.altitude * p.altitude;
    d2 * p.amplitude / ((d2 + s) * (z2 + s).sqrt())
}

/// `f'(s)`.
pub fn coverage_bound_slope(s: f64, p: &SlackParams) -> f64 {
    let d2 = p.coverage_radius * p.coverage_radius;
    let z2 = p.altitude * p.altitude;
    let a = d2 + s;
    let b = z2 + s;
    -d2 * p.amplitude * (z2 + 0.5 * d2 + 1.5 * s) / (a * a * b * b.sqrt())
}

fn printed_slope(s: f64, p: &SlackParams) -> f64 {
    let d2 = p.coverage_radius * p.coverage_radius;
    let z2 = p.altitude * p.altitude;
    let a = d2 + s;
    let b = z2 + s;
    -d2 * (1.0 + 0.5 * d2 + 1.5 * s.sqrt()) * p.amplitude / (a * a * b * b.sqrt())
}

/// Tangent of `f` at an expansion point: `Ψ + Ψ′ (s − s̃)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tangent {
    /// Squared distance the tangent was taken at.
    pub expansion: f64,
    /// `Ψ = f(s̃)`.
    pub value: f64,
    /// `Ψ′`.
    pub slope: f64,
}

impl Tangent {
    pub fn at(&self, s: f64) -> f64 {
        self.value + self.slope * (s - self.expansion)
    }

    /// Largest squared distance at which the tangent is still non-negative.
    pub fn zero_crossing(&self) -> f64 {
        self.expansion + self.value / -self.slope
    }
}

pub fn tangent_coefficients(expansion: f64, p: &SlackParams, formula: TangentFormula) -> Tangent {
    let slope = match formula {
        TangentFormula::Exact => coverage_bound_slope(expansion, p),
        TangentFormula::Printed => printed_slope(expansion, p),
    };
    Tangent {
        expansion,
        value: coverage_bound(expansion, p),
        slope,
    }
}
