//! The convex subproblem solved once per tangent refresh.
//!
//! For fixed combining weights `ζ̃` the gains enter the objective only through
//! `w = Kζ̃ ∈ ℝ^M`. With every `K_{m,n}` ranging independently over
//! `[0, B_{m,n}(u[n])]`, where `B` is the tangent bound, the reachable set of
//! `w_m` is exactly the interval `[−Q_m(u), P_m(u)]` with
//!
//! ```text
//! P_m(u) = Σ_{ζ̃_n > 0}  ζ̃_n B_{m,n}(u[n]),   Q_m(u) = Σ_{ζ̃_n < 0} |ζ̃_n| B_{m,n}(u[n])
//! ```
//!
//! Both are concave in `u`, so the problem over `(u, w)` is convex with
//! `2(N−1) + M` variables. It is solved with a log-barrier Newton method and
//! a gain matrix realizing the optimal `w` is read off afterwards.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)] // inherent float methods shadow it when std is linked
use num_traits::Float;

use crate::geometry::{GainMatrix, Trajectory};
use crate::linalg;
use crate::mse::{AggregationWeights, CorrelationMatrix, WeightedStds};
use crate::sca::{tangent_coefficients, SlackParams, TangentFormula};
use crate::scenario::{OptimizerParams, Point, Scenario};
use crate::{Error, Result};

/// Tangent data around an expansion trajectory with the weights held fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemSpec {
    expansion: Trajectory,
    zeta: DVector<f64>,
    devices: Vec<Point>,
    /// `Ψ_{m,n}`, column `n − 1` for slot `n`.
    value: DMatrix<f64>,
    /// `Ψ′_{m,n}`.
    slope: DMatrix<f64>,
    /// `‖ũ[n] − v_m‖²`.
    expansion_sq: DMatrix<f64>,
    max_step: f64,
}

impl SubproblemSpec {
    pub fn new(
        expansion: &Trajectory,
        zeta: &AggregationWeights,
        scenario: &Scenario,
        formula: TangentFormula,
    ) -> Result<Self> {
        let p = SlackParams::from_scenario(scenario);
        let devices = scenario.devices().to_vec();
        let n = expansion.slots();
        let mut value = DMatrix::zeros(devices.len(), n);
        let mut slope = DMatrix::zeros(devices.len(), n);
        for (m, v) in devices.iter().enumerate() {
            for j in 0..n {
                let s = (expansion.slot(j + 1) - v).norm_squared();
                let t = tangent_coefficients(s, &p, formula);
                value[(m, j)] = t.value;
                slope[(m, j)] = t.slope;
            }
        }
        Self::from_tangents(
            expansion.clone(),
            zeta,
            devices,
            value,
            slope,
            scenario.uav.max_step(),
        )
    }

    /// Builds from explicit coefficients. A zero slope makes that bound
    /// independent of the trajectory.
    pub fn from_tangents(
        expansion: Trajectory,
        zeta: &AggregationWeights,
        devices: Vec<Point>,
        value: DMatrix<f64>,
        slope: DMatrix<f64>,
        max_step: f64,
    ) -> Result<Self> {
        let n = expansion.slots();
        Error::check_len("subproblem zeta", n, zeta.len())?;
        Error::check_len("tangent value rows", devices.len(), value.nrows())?;
        Error::check_len("tangent value columns", n, value.ncols())?;
        Error::check_len("tangent slope rows", devices.len(), slope.nrows())?;
        Error::check_len("tangent slope columns", n, slope.ncols())?;
        if value.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid("tangent value", "must be positive and finite"));
        }
        if slope.iter().any(|v| !(*v <= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("tangent slope", "must be non-positive and finite"));
        }
        if !(max_step > 0.0) {
            return Err(Error::invalid("max_step", "must be positive"));
        }
        expansion.check(max_step)?;
        let expansion_sq = DMatrix::from_fn(devices.len(), n, |m, j| {
            (expansion.slot(j + 1) - devices[m]).norm_squared()
        });
        Ok(Self {
            expansion,
            zeta: zeta.vector().clone(),
            devices,
            value,
            slope,
            expansion_sq,
            max_step,
        })
    }

    pub fn expansion(&self) -> &Trajectory {
        &self.expansion
    }

    pub fn zeta(&self) -> &DVector<f64> {
        &self.zeta
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.value
    }

    pub fn slopes(&self) -> &DMatrix<f64> {
        &self.slope
    }

    pub fn devices(&self) -> &[Point] {
        &self.devices
    }

    pub fn max_step(&self) -> f64 {
        self.max_step
    }

    /// Tangent bound `B_{m,n}(u)` for slot `n` in `1..=N`.
    pub fn bound(&self, m: usize, n: usize, u: Point) -> f64 {
        let j = n - 1;
        let s = (u - self.devices[m]).norm_squared();
        self.value[(m, j)] + self.slope[(m, j)] * (s - self.expansion_sq[(m, j)])
    }

    /// `B_{m,n}(u[n])` for every device and slot.
    pub fn bounds(&self, traj: &Trajectory) -> DMatrix<f64> {
        DMatrix::from_fn(self.devices.len(), traj.slots(), |m, j| {
            self.bound(m, j + 1, traj.slot(j + 1))
        })
    }
}

/// `ζ̃ᵀKᵀρKζ̃ − 2υᵀρKζ̃`, the part of the objective that depends on `K`.
pub fn subproblem_objective(
    gains: &GainMatrix,
    zeta: &DVector<f64>,
    corr: &CorrelationMatrix,
    stds: &WeightedStds,
) -> f64 {
    let w = gains.matrix() * zeta;
    reduced_objective(&w, corr.matrix(), stds.vector())
}

fn reduced_objective(w: &DVector<f64>, rho: &DMatrix<f64>, ups: &DVector<f64>) -> f64 {
    let rw = rho * w;
    w.dot(&rw) - 2.0 * ups.dot(&rw)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierSettings {
    /// Target duality gap relative to the warm start's objective magnitude.
    pub gap_tolerance: f64,
    /// Barrier parameter multiplier between centering stages.
    pub growth: f64,
    /// Newton steps allowed over all stages.
    pub max_newton_steps: usize,
    /// Newton steps allowed per centering stage.
    pub max_stage_steps: usize,
    /// Centering stops once half the squared Newton decrement is below this.
    pub centering_tolerance: f64,
}

impl Default for BarrierSettings {
    fn default() -> Self {
        Self {
            gap_tolerance: 1e-7,
            growth: 10.0,
            max_newton_steps: 1500,
            max_stage_steps: 50,
            centering_tolerance: 1e-5,
        }
    }
}

impl BarrierSettings {
    pub fn from_params(p: &OptimizerParams) -> Self {
        Self {
            gap_tolerance: p.kkt_tolerance,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemSolution {
    pub gains: GainMatrix,
    pub trajectory: Trajectory,
    /// [`subproblem_objective`] at the returned point.
    pub objective: f64,
    pub warm_objective: f64,
    /// False when the warm start was returned unchanged.
    pub improved: bool,
    /// Whether the duality-gap target was met.
    pub converged: bool,
    pub newton_steps: usize,
    /// Final duality-gap bound in objective units.
    pub duality_gap: f64,
}

/// Solves the subproblem starting from the expansion trajectory and the warm
/// gains `K̃`, which must satisfy `0 ≤ K̃ ≤ Ψ`.
pub fn solve_subproblem(
    spec: &SubproblemSpec,
    corr: &CorrelationMatrix,
    stds: &WeightedStds,
    warm: &GainMatrix,
    settings: &BarrierSettings,
) -> Result<SubproblemSolution> {
    let m_dev = spec.devices.len();
    let n = spec.expansion.slots();
    Error::check_len("correlation size", m_dev, corr.dim())?;
    Error::check_len("weighted stds", m_dev, stds.len())?;
    Error::check_len("warm gain rows", m_dev, warm.devices())?;
    Error::check_len("warm gain columns", n, warm.slots())?;
    for m in 0..m_dev {
        for j in 0..n {
            let k = warm.get(m, j);
            let cap = spec.value[(m, j)];
            if k > cap * (1.0 + 1e-9) {
                return Err(Error::InfeasibleStart(alloc::format!(
                    "warm gain ({m}, {}) = {k:e} exceeds its bound {cap:e}",
                    j + 1
                )));
            }
        }
    }

    let warm_objective = subproblem_objective(warm, &spec.zeta, corr, stds);
    let keep_warm = |converged: bool| SubproblemSolution {
        gains: warm.clone(),
        trajectory: spec.expansion.clone(),
        objective: warm_objective,
        warm_objective,
        improved: false,
        converged,
        newton_steps: 0,
        duality_gap: 0.0,
    };

    let ups = stds.vector();
    let rho = corr.matrix();
    let w_warm = warm.matrix() * &spec.zeta;
    // Gap tolerances are relative to the size of the objective the warm
    // start actually attains, not to `υᵀρυ`, which can be far out of reach.
    let mut scale = warm_objective.abs() + w_warm.dot(&(rho * &w_warm));
    if !(scale > 0.0) {
        scale = ups.dot(&(rho * ups));
    }
    if spec.zeta.iter().all(|z| *z == 0.0) || !(scale > 0.0) {
        return Ok(keep_warm(true));
    }

    let problem = Barrier::new(spec, rho, ups, scale);
    let Some(x0) = problem.strict_start() else {
        return Err(Error::InfeasibleStart(
            "no strictly feasible point near the expansion trajectory".into(),
        ));
    };
    let (x, steps, gap, converged) = problem.run(x0, settings);

    let traj = problem.trajectory(&x)?;
    let w = x.rows(problem.w_offset(), m_dev).into_owned();
    let gains = problem.recover_gains(&traj, &w)?;
    let objective = subproblem_objective(&gains, &spec.zeta, corr, stds);
    if !(objective < warm_objective) {
        let mut out = keep_warm(converged);
        out.newton_steps = steps;
        return Ok(out);
    }
    Ok(SubproblemSolution {
        gains,
        trajectory: traj,
        objective,
        warm_objective,
        improved: true,
        converged,
        newton_steps: steps,
        duality_gap: gap * scale,
    })
}

struct Barrier<'a> {
    spec: &'a SubproblemSpec,
    /// `ρ / scale` and `ρυ / scale`, so the objective is of order one.
    rho: DMatrix<f64>,
    rho_ups: DVector<f64>,
    zeta_pos: Vec<f64>,
    zeta_neg: Vec<f64>,
    /// `|Ψ′| / Ψ`; the disk constraint is `κ (s − s̃) − 1 < 0`.
    kappa: DMatrix<f64>,
    free: usize,
    devices: usize,
    step_sq: f64,
    start: Point,
    constraints: usize,
}

impl<'a> Barrier<'a> {
    fn new(spec: &'a SubproblemSpec, rho: &DMatrix<f64>, ups: &DVector<f64>, scale: f64) -> Self {
        let n = spec.expansion.slots();
        let devices = spec.devices.len();
        let free = n - 1;
        let kappa = DMatrix::from_fn(devices, n, |m, j| -spec.slope[(m, j)] / spec.value[(m, j)]);
        let disks = (0..free)
            .map(|j| (0..devices).filter(|&m| kappa[(m, j)] > 0.0).count())
            .sum::<usize>();
        let speeds = if free > 0 { n } else { 0 };
        Self {
            spec,
            rho: rho / scale,
            rho_ups: (rho * ups) / scale,
            zeta_pos: spec.zeta.iter().map(|z| z.max(0.0)).collect(),
            zeta_neg: spec.zeta.iter().map(|z| (-z).max(0.0)).collect(),
            kappa,
            free,
            devices,
            step_sq: spec.max_step * spec.max_step,
            start: spec.expansion.start(),
            constraints: disks + speeds + 2 * devices,
        }
    }

    fn w_offset(&self) -> usize {
        2 * self.free
    }

    fn vars(&self) -> usize {
        2 * self.free + self.devices
    }

    fn point(&self, x: &DVector<f64>, i: usize) -> Point {
        if i == 0 || i > self.free {
            self.start
        } else {
            Point::new(x[2 * (i - 1)], x[2 * (i - 1) + 1])
        }
    }

    fn trajectory(&self, x: &DVector<f64>) -> Result<Trajectory> {
        let pts = (0..=self.free + 1).map(|i| self.point(x, i)).collect();
        Trajectory::new(pts, self.spec.max_step)
    }

    /// `(P_m, Q_m)` at the trajectory encoded in `x`.
    fn envelope(&self, x: &DVector<f64>, m: usize) -> (f64, f64) {
        let mut p = 0.0;
        let mut q = 0.0;
        for j in 0..=self.free {
            if self.zeta_pos[j] == 0.0 && self.zeta_neg[j] == 0.0 {
                continue;
            }
            let b = self.spec.bound(m, j + 1, self.point(x, j + 1));
            p += self.zeta_pos[j] * b;
            q += self.zeta_neg[j] * b;
        }
        (p, q)
    }

    fn objective(&self, w: &DVector<f64>) -> f64 {
        w.dot(&(&self.rho * w)) - 2.0 * w.dot(&self.rho_ups)
    }

    /// Shrinks the expansion trajectory toward `u_start` until every speed
    /// constraint is strict, and puts `w` at the middle of its interval.
    fn strict_start(&self) -> Option<DVector<f64>> {
        let traj = &self.spec.expansion;
        let worst = traj
            .points()
            .windows(2)
            .map(|w| (w[1] - w[0]).norm_squared() / self.step_sq)
            .fold(0.0, f64::max);
        let mut theta = if worst > 1.0 - 1e-6 {
            ((1.0 - 1e-6) / worst).sqrt()
        } else {
            1.0
        };
        for _ in 0..40 {
            let mut x = DVector::zeros(self.vars());
            for i in 1..=self.free {
                let u = self.start + (traj.points()[i] - self.start) * theta;
                x[2 * (i - 1)] = u.x;
                x[2 * (i - 1) + 1] = u.y;
            }
            let off = self.w_offset();
            for m in 0..self.devices {
                let (p, q) = self.envelope(&x, m);
                x[off + m] = 0.5 * (p - q);
            }
            if self.barrier_value(&x, 1.0).is_some() {
                return Some(x);
            }
            theta *= 0.5;
        }
        None
    }

    /// `t · objective − Σ log(−g_i)`, or `None` outside the strict interior.
    fn barrier_value(&self, x: &DVector<f64>, t: f64) -> Option<f64> {
        let mut log_sum = 0.0;
        for i in 1..=self.free {
            let u = self.point(x, i);
            for m in 0..self.devices {
                let k = self.kappa[(m, i - 1)];
                if k == 0.0 {
                    continue;
                }
                let s = (u - self.spec.devices[m]).norm_squared();
                let g = k * (s - self.spec.expansion_sq[(m, i - 1)]) - 1.0;
                if !(g < 0.0) {
                    return None;
                }
                log_sum += (-g).ln();
            }
        }
        if self.free > 0 {
            for i in 1..=self.free + 1 {
                let d = self.point(x, i) - self.point(x, i - 1);
                let g = d.norm_squared() / self.step_sq - 1.0;
                if !(g < 0.0) {
                    return None;
                }
                log_sum += (-g).ln();
            }
        }
        let off = self.w_offset();
        for m in 0..self.devices {
            let (p, q) = self.envelope(x, m);
            let w = x[off + m];
            let up = p - w;
            let lo = q + w;
            if !(up > 0.0 && lo > 0.0) {
                return None;
            }
            log_sum += up.ln() + lo.ln();
        }
        let w = x.rows(off, self.devices).into_owned();
        let v = t * self.objective(&w) - log_sum;
        v.is_finite().then_some(v)
    }

    fn add_block(h: &mut DMatrix<f64>, i: usize, v: f64) {
        let a = 2 * (i - 1);
        h[(a, a)] += v;
        h[(a + 1, a + 1)] += v;
    }

    fn gradient_hessian(&self, x: &DVector<f64>, t: f64) -> (DVector<f64>, DMatrix<f64>) {
        let nv = self.vars();
        let off = self.w_offset();
        let mut grad = DVector::zeros(nv);
        let mut hess = DMatrix::zeros(nv, nv);

        let w = x.rows(off, self.devices).into_owned();
        let gw = (&self.rho * &w - &self.rho_ups) * (2.0 * t);
        grad.rows_mut(off, self.devices).copy_from(&gw);
        hess.view_mut((off, off), (self.devices, self.devices))
            .copy_from(&(&self.rho * (2.0 * t)));

        for i in 1..=self.free {
            let u = self.point(x, i);
            let a = 2 * (i - 1);
            for m in 0..self.devices {
                let k = self.kappa[(m, i - 1)];
                if k == 0.0 {
                    continue;
                }
                let d = u - self.spec.devices[m];
                let neg = 1.0 - k * (d.norm_squared() - self.spec.expansion_sq[(m, i - 1)]);
                let gx = 2.0 * k * d.x;
                let gy = 2.0 * k * d.y;
                grad[a] += gx / neg;
                grad[a + 1] += gy / neg;
                let n2 = neg * neg;
                hess[(a, a)] += gx * gx / n2 + 2.0 * k / neg;
                hess[(a + 1, a + 1)] += gy * gy / n2 + 2.0 * k / neg;
                hess[(a, a + 1)] += gx * gy / n2;
                hess[(a + 1, a)] += gx * gy / n2;
            }
        }

        if self.free > 0 {
            for i in 1..=self.free + 1 {
                let d = self.point(x, i) - self.point(x, i - 1);
                let neg = 1.0 - d.norm_squared() / self.step_sq;
                let g = [2.0 * d.x / self.step_sq, 2.0 * d.y / self.step_sq];
                let curv = 2.0 / self.step_sq / neg;
                // Gradient entries: +g for point i, −g for point i − 1.
                let mut idx: [(usize, f64); 4] = [(usize::MAX, 0.0); 4];
                if i <= self.free {
                    idx[0] = (2 * (i - 1), g[0]);
                    idx[1] = (2 * (i - 1) + 1, g[1]);
                }
                if i >= 2 {
                    idx[2] = (2 * (i - 2), -g[0]);
                    idx[3] = (2 * (i - 2) + 1, -g[1]);
                }
                for &(r, vr) in &idx {
                    if r == usize::MAX {
                        continue;
                    }
                    grad[r] += vr / neg;
                    for &(c, vc) in &idx {
                        if c != usize::MAX {
                            hess[(r, c)] += vr * vc / (neg * neg);
                        }
                    }
                }
                if i <= self.free {
                    Self::add_block(&mut hess, i, curv);
                }
                if i >= 2 {
                    Self::add_block(&mut hess, i - 1, curv);
                }
                if i <= self.free && i >= 2 {
                    let (p, q) = (2 * (i - 1), 2 * (i - 2));
                    hess[(p, q)] -= curv;
                    hess[(q, p)] -= curv;
                    hess[(p + 1, q + 1)] -= curv;
                    hess[(q + 1, p + 1)] -= curv;
                }
            }
        }

        let mut gv = DVector::zeros(nv);
        for m in 0..self.devices {
            let (p, q) = self.envelope(x, m);
            let wm = x[off + m];
            for (sign, weights, slack) in [(1.0, &self.zeta_pos, p - wm), (-1.0, &self.zeta_neg, q + wm)] {
                gv.fill(0.0);
                gv[off + m] = sign;
                for i in 1..=self.free {
                    let z = weights[i - 1];
                    if z == 0.0 {
                        continue;
                    }
                    let c = -2.0 * z * self.spec.slope[(m, i - 1)];
                    let d = self.point(x, i) - self.spec.devices[m];
                    gv[2 * (i - 1)] = c * d.x;
                    gv[2 * (i - 1) + 1] = c * d.y;
                    Self::add_block(&mut hess, i, c / slack);
                }
                grad.axpy(1.0 / slack, &gv, 1.0);
                hess.ger(1.0 / (slack * slack), &gv, &gv, 1.0);
            }
        }
        (grad, hess)
    }

    fn run(&self, mut x: DVector<f64>, settings: &BarrierSettings) -> (DVector<f64>, usize, f64, bool) {
        let count = self.constraints as f64;
        let mut t = count.max(1.0);
        let mut steps = 0usize;
        loop {
            let mut value = self.barrier_value(&x, t).expect("iterate stays interior");
            for _ in 0..settings.max_stage_steps {
                if steps >= settings.max_newton_steps {
                    return (x, steps, count / t, false);
                }
                let (grad, hess) = self.gradient_hessian(&x, t);
                let Some(dx) = linalg::solve_spd(&hess, &(-&grad)) else { break };
                let decrement = -grad.dot(&dx);
                steps += 1;
                if !(0.5 * decrement > settings.centering_tolerance) {
                    break;
                }
                let mut s = 1.0;
                let mut accepted = false;
                while s > 1e-16 {
                    let trial = &x + &dx * s;
                    if let Some(v) = self.barrier_value(&trial, t) {
                        if v <= value - 0.25 * s * decrement {
                            x = trial;
                            value = v;
                            accepted = true;
                            break;
                        }
                    }
                    s *= 0.5;
                }
                if !accepted {
                    break;
                }
            }
            let gap = count / t;
            if gap <= settings.gap_tolerance {
                return (x, steps, gap, true);
            }
            t *= settings.growth;
        }
    }

    /// Gains `K` with `Kζ̃ = w`: on each device one sign class of slots runs at
    /// its bound and the other is scaled by a common factor.
    fn recover_gains(&self, traj: &Trajectory, w: &DVector<f64>) -> Result<GainMatrix> {
        let n = traj.slots();
        let bounds = self.spec.bounds(traj);
        let mut k = DMatrix::zeros(self.devices, n);
        for m in 0..self.devices {
            let mut p = 0.0;
            let mut q = 0.0;
            for j in 0..n {
                p += self.zeta_pos[j] * bounds[(m, j)];
                q += self.zeta_neg[j] * bounds[(m, j)];
            }
            let wm = w[m].clamp(-q, p);
            let (pos, neg) = if wm >= p - q {
                (1.0, if q > 0.0 { (p - wm) / q } else { 1.0 })
            } else {
                (if p > 0.0 { (wm + q) / p } else { 1.0 }, 1.0)
            };
            for j in 0..n {
                let b = bounds[(m, j)].max(0.0);
                let z = self.spec.zeta[j];
                let f = if z > 0.0 {
                    pos
                } else if z < 0.0 {
                    neg
                } else {
                    1.0
                };
                k[(m, j)] = f.clamp(0.0, 1.0) * b;
            }
        }
        GainMatrix::from_matrix(k)
    }
}
