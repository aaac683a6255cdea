//! CSV files written by the commands. All files carry a header row and use LF
//! line endings.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use uavfl_core::learning::{RoundLog, SummaryRow};
use uavfl_core::mse::AggregationWeights;
use uavfl_core::optimizer::TraceRow;
use uavfl_core::{Point, Scenario, Trajectory};

pub const TRAJECTORY: &str = "trajectory.csv";
pub const ZETA: &str = "zeta.csv";
pub const TRACE: &str = "trace.csv";
pub const COVERAGE: &str = "coverage.csv";
pub const DEVICES: &str = "devices.csv";
pub const SUMMARY: &str = "summary.csv";
pub const BASELINES: &str = "baselines.csv";

pub fn round_log_name(trial: usize) -> String {
    format!("rounds_trial{trial:03}.csv")
}

/// Output directory, created on demand.
#[derive(Debug, Clone)]
pub struct OutDir(PathBuf);

impl OutDir {
    pub fn create(path: &Path) -> Result<Self> {
        fs::create_dir_all(path).with_context(|| format!("cannot create output directory {}", path.display()))?;
        Ok(Self(path.to_path_buf()))
    }

    pub fn path(&self) -> &Path {
        &self.0
    }

    pub fn join(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    pub fn write_rows<T: Serialize>(&self, name: &str, rows: impl IntoIterator<Item = T>) -> Result<()> {
        let path = self.join(name);
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(&path)
            .with_context(|| format!("cannot write {}", path.display()))?;
        for row in rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<()> {
        let path = self.join(name);
        let mut f = File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
        f.write_all(text.as_bytes())?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRow {
    pub n: usize,
    pub x: f64,
    pub y: f64,
}

pub fn trajectory_rows(traj: &Trajectory) -> Vec<PointRow> {
    traj.points()
        .iter()
        .enumerate()
        .map(|(n, p)| PointRow { n, x: p.x, y: p.y })
        .collect()
}

/// Slot index `n` runs from 1 to `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZetaRow {
    pub n: usize,
    pub zeta: f64,
}

pub fn zeta_rows(zeta: &AggregationWeights) -> Vec<ZetaRow> {
    zeta.as_slice()
        .iter()
        .enumerate()
        .map(|(j, &z)| ZetaRow { n: j + 1, zeta: z })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceCsvRow {
    pub outer_iter: usize,
    pub objective: f64,
    pub max_constraint_violation: f64,
    pub zeta_norm: f64,
}

impl From<&TraceRow> for TraceCsvRow {
    fn from(r: &TraceRow) -> Self {
        Self {
            outer_iter: r.outer_iter,
            objective: r.objective,
            max_constraint_violation: r.max_constraint_violation,
            zeta_norm: r.zeta_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceRow {
    pub m: usize,
    pub x: f64,
    pub y: f64,
    pub weight: f64,
}

pub fn device_rows(scenario: &Scenario) -> Vec<DeviceRow> {
    scenario
        .devices()
        .iter()
        .zip(scenario.weights())
        .enumerate()
        .map(|(m, (p, &weight))| DeviceRow {
            m,
            x: p.x,
            y: p.y,
            weight,
        })
        .collect()
}

/// Device `m` covered in slot `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub m: usize,
    pub n: usize,
    pub covered: u8,
}

pub fn coverage_rows(coverage: &DMatrix<u8>) -> Vec<CoverageRow> {
    let mut rows = Vec::new();
    for m in 0..coverage.nrows() {
        for j in 0..coverage.ncols() {
            rows.push(CoverageRow {
                m,
                n: j + 1,
                covered: coverage[(m, j)],
            });
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLogRow {
    pub trial: usize,
    pub round: usize,
    pub scheme: String,
    pub accuracy: f64,
    pub train_loss: f64,
    pub error_sq_norm: f64,
    pub analytic_mse: f64,
    pub optimizer_iters: usize,
}

impl From<&RoundLog> for RoundLogRow {
    fn from(l: &RoundLog) -> Self {
        Self {
            trial: l.trial,
            round: l.round,
            scheme: l.scheme.name().to_string(),
            accuracy: l.accuracy,
            train_loss: l.train_loss,
            error_sq_norm: l.error_sq_norm,
            analytic_mse: l.analytic_mse,
            optimizer_iters: l.optimizer_iters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryCsvRow {
    pub scheme: String,
    pub round: usize,
    pub trials: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub train_loss_mean: f64,
    pub error_sq_norm_mean: f64,
    pub analytic_mse_mean: f64,
}

impl From<&SummaryRow> for SummaryCsvRow {
    fn from(r: &SummaryRow) -> Self {
        Self {
            scheme: r.scheme.name().to_string(),
            round: r.round,
            trials: r.trials,
            accuracy_mean: r.accuracy_mean,
            accuracy_std: r.accuracy_std,
            train_loss_mean: r.train_loss_mean,
            error_sq_norm_mean: r.error_sq_norm_mean,
            analytic_mse_mean: r.analytic_mse_mean,
        }
    }
}

/// One reference scheme; `radius` is empty for the static server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub scheme: String,
    pub center_x: f64,
    pub center_y: f64,
    pub radius: Option<f64>,
    pub objective: f64,
    pub mse: f64,
}

pub fn point_row(n: usize, p: &Point) -> PointRow {
    PointRow { n, x: p.x, y: p.y }
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let rows = r
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .with_context(|| format!("malformed {}", path.display()))?;
    Ok(rows)
}
