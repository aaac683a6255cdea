//! Plot-ready tables assembled from earlier run directories. Nothing here
//! recomputes a result; it only reads CSV files and reshapes them.

use std::path::Path;

use anyhow::{bail, Result};
use serde::{Deserialize, Serialize};

use crate::output::{self, BaselineRow, DeviceRow, OutDir, PointRow, SummaryCsvRow};

pub const TRAJECTORY_MAP: &str = "trajectory_map.csv";
pub const ACCURACY_CURVES: &str = "accuracy_curves.csv";
pub const CIRCULAR_TRAJECTORY: &str = "circular_trajectory.csv";

/// One point of a map layer: a device, a path vertex, or a server location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapRow {
    pub source: String,
    pub series: String,
    pub index: usize,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub source: String,
    pub scheme: String,
    pub round: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub train_loss_mean: f64,
    pub error_sq_norm_mean: f64,
}

fn source_name(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

fn path_layer(rows: &mut Vec<MapRow>, source: &str, series: &str, points: Vec<PointRow>) {
    rows.extend(points.into_iter().map(|p| MapRow {
        source: source.to_string(),
        series: series.to_string(),
        index: p.n,
        x: p.x,
        y: p.y,
    }));
}

/// Layers found in one run directory.
pub fn map_rows(dir: &Path) -> Result<Vec<MapRow>> {
    let source = source_name(dir);
    let mut rows = Vec::new();
    let devices = dir.join(output::DEVICES);
    if devices.exists() {
        for d in output::read_rows::<DeviceRow>(&devices)? {
            rows.push(MapRow {
                source: source.clone(),
                series: "devices".into(),
                index: d.m,
                x: d.x,
                y: d.y,
            });
        }
    }
    let traj = dir.join(output::TRAJECTORY);
    if traj.exists() {
        path_layer(&mut rows, &source, "optimized", output::read_rows(&traj)?);
    }
    let circle = dir.join(CIRCULAR_TRAJECTORY);
    if circle.exists() {
        path_layer(&mut rows, &source, "circular", output::read_rows(&circle)?);
    }
    let baselines = dir.join(output::BASELINES);
    if baselines.exists() {
        for b in output::read_rows::<BaselineRow>(&baselines)? {
            if b.radius.is_none() {
                rows.push(MapRow {
                    source: source.clone(),
                    series: b.scheme,
                    index: 0,
                    x: b.center_x,
                    y: b.center_y,
                });
            }
        }
    }
    Ok(rows)
}

pub fn curve_rows(dir: &Path) -> Result<Vec<CurveRow>> {
    let summary = dir.join(output::SUMMARY);
    if !summary.exists() {
        return Ok(Vec::new());
    }
    let source = source_name(dir);
    Ok(output::read_rows::<SummaryCsvRow>(&summary)?
        .into_iter()
        .map(|r| CurveRow {
            source: source.clone(),
            scheme: r.scheme,
            round: r.round,
            accuracy_mean: r.accuracy_mean,
            accuracy_std: r.accuracy_std,
            train_loss_mean: r.train_loss_mean,
            error_sq_norm_mean: r.error_sq_norm_mean,
        })
        .collect())
}

/// Writes the map and curve tables for `sources`, in the order given.
pub fn plot_data(sources: &[&Path], out: &OutDir) -> Result<(usize, usize)> {
    let mut map = Vec::new();
    let mut curves = Vec::new();
    for dir in sources {
        if !dir.is_dir() {
            bail!("{} is not a run directory", dir.display());
        }
        map.extend(map_rows(dir)?);
        curves.extend(curve_rows(dir)?);
    }
    if map.is_empty() && curves.is_empty() {
        bail!("no run outputs found in the given directories");
    }
    out.write_rows(TRAJECTORY_MAP, &map)?;
    out.write_rows(ACCURACY_CURVES, &curves)?;
    Ok((map.len(), curves.len()))
}
