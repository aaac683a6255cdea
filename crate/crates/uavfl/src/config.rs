//! TOML experiment configuration.
//!
//! Every section is optional except `[devices]`; missing keys take the
//! defaults of the reference experiment. Powers may be given linearly or with a
//! `_db` / `_dbm` suffix, never both.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use uavfl_core::baseline::CircleSearch;
use uavfl_core::learning::{
    CorrelationSource, ExperimentConfig, LearningTask, LossFamily, MixtureSpec, Model, Partition, Reoptimize, Scheme,
    UpdateMode,
};
use uavfl_core::sca::TangentFormula;
use uavfl_core::scenario::generate_clustered_devices;
use uavfl_core::{rng, ChannelParams, OptimizerParams, Point, Scenario, UavParams};

/// Name accepted by `--config` for the bundled reference configuration.
pub const PAPER_DEFAULT: &str = "paper_default";

const PAPER_DEFAULT_TOML: &str = include_str!("../configs/paper_default.toml");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid `{field}`: {reason}")]
    Field { field: &'static str, reason: String },
    #[error(transparent)]
    Core(#[from] uavfl_core::Error),
}

fn field(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    pub devices: DevicesSection,
    #[serde(default)]
    pub channel: ChannelSection,
    #[serde(default)]
    pub uav: UavSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub learning: LearningSection,
}

/// Either explicit `positions` or a clustered layout.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DevicesSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<[f64; 2]>>,
    /// Defaults to uniform. Commands that train a model replace them with the
    /// data fractions of the partition.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clusters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_cluster: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub area_half_width: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cluster_spread: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layout_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ref_gain: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ref_gain_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_power: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_power_dbm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tx_power: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tx_power_dbm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UavSection {
    pub altitude: f64,
    pub max_speed: f64,
    pub slot_duration: f64,
    pub slots: usize,
    pub start: [f64; 2],
    pub coverage_radius: f64,
}

impl Default for UavSection {
    fn default() -> Self {
        let u = UavParams::default();
        Self {
            altitude: u.altitude,
            max_speed: u.max_speed,
            slot_duration: u.slot_duration,
            slots: u.slots,
            start: [u.start.x, u.start.y],
            coverage_radius: u.coverage_radius,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TangentChoice {
    Exact,
    Printed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReoptimizeChoice {
    Once,
    Every,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub tolerance: f64,
    pub max_outer_iters: usize,
    pub sca_refreshes: usize,
    pub tangent: TangentChoice,
    pub min_norm_fallback: bool,
    pub kkt_tolerance: f64,
    pub reoptimize: ReoptimizeChoice,
    pub reoptimize_every: usize,
    /// Start-anchored circles tried as the initial trajectory.
    pub anchor_directions: usize,
    pub anchor_radii: usize,
    /// Search grid of the circular baseline.
    pub circle_centers_per_axis: usize,
    pub circle_radii: usize,
    pub circle_refine_samples: usize,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let o = OptimizerParams::default();
        let c = CircleSearch::default();
        Self {
            tolerance: o.tolerance,
            max_outer_iters: o.max_outer_iters,
            sca_refreshes: o.sca_refreshes,
            tangent: TangentChoice::Exact,
            min_norm_fallback: o.min_norm_fallback,
            kkt_tolerance: o.kkt_tolerance,
            reoptimize: ReoptimizeChoice::Every,
            reoptimize_every: 1,
            anchor_directions: 16,
            anchor_radii: 8,
            circle_centers_per_axis: c.centers_per_axis,
            circle_radii: c.radii,
            circle_refine_samples: c.refine_samples,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossChoice {
    Quadratic,
    Logistic,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionChoice {
    Iid,
    LabelSkew,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeChoice {
    PureGradient,
    LocalSgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrelationChoice {
    Current,
    Stale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub classes: usize,
    pub features: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub separation: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        let m = MixtureSpec::default();
        Self {
            classes: m.classes,
            features: m.features,
            train_per_class: m.train_per_class,
            test_per_class: m.test_per_class,
            separation: m.separation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningSection {
    pub loss: LossChoice,
    pub hidden: usize,
    pub ridge: f64,
    pub partition: PartitionChoice,
    pub classes_per_device: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub mode: ModeChoice,
    pub local_steps: usize,
    pub batch_size: usize,
    pub rounds: usize,
    pub trials: usize,
    pub schemes: Vec<String>,
    pub correlation: CorrelationChoice,
    pub data: DataSection,
}

impl Default for LearningSection {
    fn default() -> Self {
        Self {
            loss: LossChoice::Logistic,
            hidden: 16,
            ridge: 0.0,
            partition: PartitionChoice::Iid,
            classes_per_device: 5,
            learning_rate: 0.05,
            momentum: 0.5,
            mode: ModeChoice::LocalSgd,
            local_steps: 5,
            batch_size: 32,
            rounds: 100,
            trials: 10,
            schemes: Scheme::ALL.iter().map(|s| s.name().to_string()).collect(),
            correlation: CorrelationChoice::Current,
            data: DataSection::default(),
        }
    }
}

/// Everything the commands need, built from a [`Config`].
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub scenario: Scenario,
    pub task: LearningTask,
    pub experiment: ExperimentConfig,
}

fn one_of(name: &'static str, linear: Option<f64>, log: Option<f64>, to_linear: fn(f64) -> f64, default: f64) -> Result<f64, ConfigError> {
    match (linear, log) {
        (Some(_), Some(_)) => Err(field(name, "give either the linear value or the logarithmic one, not both")),
        (Some(v), None) => Ok(v),
        (None, Some(v)) => Ok(to_linear(v)),
        (None, None) => Ok(default),
    }
}

fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: Config = toml::from_str(text)?;
        config.resolve()?;
        Ok(config)
    }

    /// `paper_default` or a file path.
    pub fn load(name_or_path: &str) -> Result<Self, ConfigError> {
        if name_or_path == PAPER_DEFAULT {
            return Self::from_toml(PAPER_DEFAULT_TOML);
        }
        Self::load_path(Path::new(name_or_path))
    }

    pub fn load_path(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn paper_default() -> Self {
        Self::from_toml(PAPER_DEFAULT_TOML).expect("bundled config is valid")
    }

    /// Channel powers in linear units, dB keys dropped.
    pub fn channel_params(&self) -> Result<ChannelParams, ConfigError> {
        let c = &self.channel;
        let d = ChannelParams::default();
        Ok(ChannelParams {
            ref_gain: one_of("channel.ref_gain", c.ref_gain, c.ref_gain_db, db_to_linear, d.ref_gain)?,
            noise_power: one_of("channel.noise_power", c.noise_power, c.noise_power_dbm, dbm_to_watts, d.noise_power)?,
            tx_power: one_of("channel.tx_power", c.tx_power, c.tx_power_dbm, dbm_to_watts, d.tx_power)?,
        })
    }

    fn device_layout(&self) -> Result<(Vec<Point>, Vec<f64>), ConfigError> {
        let d = &self.devices;
        let clustered = [d.clusters.is_some(), d.per_cluster.is_some(), d.area_half_width.is_some(), d.cluster_spread.is_some()];
        let positions = match &d.positions {
            Some(p) => {
                if clustered.iter().any(|&c| c) || d.layout_seed.is_some() {
                    return Err(field("devices.positions", "explicit positions exclude the clustered-layout keys"));
                }
                p.iter().map(|&[x, y]| Point::new(x, y)).collect()
            }
            None => {
                if !clustered.iter().all(|&c| c) {
                    return Err(field(
                        "devices",
                        "give `positions`, or all of `clusters`, `per_cluster`, `area_half_width` and `cluster_spread`",
                    ));
                }
                generate_clustered_devices(
                    d.clusters.unwrap_or_default(),
                    d.per_cluster.unwrap_or_default(),
                    d.area_half_width.unwrap_or_default(),
                    d.cluster_spread.unwrap_or_default(),
                    d.layout_seed.unwrap_or(self.seed),
                )?
            }
        };
        let m = positions.len();
        let weights = d.weights.clone().unwrap_or_else(|| vec![1.0 / m as f64; m]);
        Ok((positions, weights))
    }

    pub fn scenario(&self) -> Result<Scenario, ConfigError> {
        let (devices, weights) = self.device_layout()?;
        let u = &self.uav;
        let o = &self.optimizer;
        let uav = UavParams {
            altitude: u.altitude,
            max_speed: u.max_speed,
            slot_duration: u.slot_duration,
            slots: u.slots,
            start: Point::new(u.start[0], u.start[1]),
            coverage_radius: u.coverage_radius,
        };
        let optimizer = OptimizerParams {
            tolerance: o.tolerance,
            max_outer_iters: o.max_outer_iters,
            sca_refreshes: o.sca_refreshes,
            tangent: match o.tangent {
                TangentChoice::Exact => TangentFormula::Exact,
                TangentChoice::Printed => TangentFormula::Printed,
            },
            min_norm_fallback: o.min_norm_fallback,
            kkt_tolerance: o.kkt_tolerance,
        };
        Ok(Scenario::new(devices, weights, self.channel_params()?, uav, optimizer, self.seed)?)
    }

    pub fn task(&self) -> Result<LearningTask, ConfigError> {
        let l = &self.learning;
        let family = match l.loss {
            LossChoice::Quadratic => LossFamily::Quadratic,
            LossChoice::Logistic => LossFamily::Logistic,
            LossChoice::Mlp => LossFamily::Mlp { hidden: l.hidden },
        };
        let task = LearningTask {
            model: Model::new(family, l.data.features, l.data.classes, l.ridge)?,
            partition: match l.partition {
                PartitionChoice::Iid => Partition::Iid,
                PartitionChoice::LabelSkew => Partition::LabelSkew {
                    classes_per_device: l.classes_per_device,
                },
            },
            learning_rate: l.learning_rate,
            momentum: l.momentum,
            mode: match l.mode {
                ModeChoice::PureGradient => UpdateMode::PureGradient,
                ModeChoice::LocalSgd => UpdateMode::LocalSgd {
                    steps: l.local_steps,
                    batch_size: l.batch_size,
                },
            },
            rounds: l.rounds,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn experiment(&self) -> Result<ExperimentConfig, ConfigError> {
        let l = &self.learning;
        let o = &self.optimizer;
        let schemes = l
            .schemes
            .iter()
            .map(|s| s.parse::<Scheme>())
            .collect::<Result<Vec<_>, _>>()?;
        let d = &l.data;
        let config = ExperimentConfig {
            trials: l.trials,
            seed: self.seed,
            schemes,
            reoptimize: match o.reoptimize {
                ReoptimizeChoice::Once => Reoptimize::Once,
                ReoptimizeChoice::Every => Reoptimize::Every(o.reoptimize_every),
            },
            correlation: match l.correlation {
                CorrelationChoice::Current => CorrelationSource::Current,
                CorrelationChoice::Stale => CorrelationSource::Stale,
            },
            circle_search: CircleSearch {
                centers_per_axis: o.circle_centers_per_axis,
                radii: o.circle_radii,
                refine_samples: o.circle_refine_samples,
                seed: rng::derive_seed(self.seed, &[rng::stream::SEARCH]),
            },
            anchor_directions: o.anchor_directions,
            anchor_radii: o.anchor_radii,
            mixture: MixtureSpec {
                classes: d.classes,
                features: d.features,
                train_per_class: d.train_per_class,
                test_per_class: d.test_per_class,
                separation: d.separation,
            },
        };
        config.validate()?;
        Ok(config)
    }

    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        let scenario = self.scenario()?;
        let task = self.task()?;
        let experiment = self.experiment()?;
        if task.model.features != experiment.mixture.features || task.model.classes != experiment.mixture.classes {
            return Err(field("learning.data", "model and data shapes disagree"));
        }
        Ok(Resolved {
            scenario,
            task,
            experiment,
        })
    }

    /// The configuration with channel powers in linear units, serialized with
    /// every default spelled out. Its digest identifies a run.
    pub fn resolved_toml(&self) -> Result<String, ConfigError> {
        let ch = self.channel_params()?;
        let mut c = self.clone();
        c.channel = ChannelSection {
            ref_gain: Some(ch.ref_gain),
            noise_power: Some(ch.noise_power),
            tx_power: Some(ch.tx_power),
            ..ChannelSection::default()
        };
        Ok(toml::to_string(&c).expect("config serializes"))
    }
}
