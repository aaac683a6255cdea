//! Local training on each device's shard.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;

use super::data::{partition, Dataset, Partition};
use super::model::Model;
use crate::airphy::GradientBatch;
use crate::rng::{self, stream};
use crate::{Error, Result};

/// What a device sends each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateMode {
    /// The full local gradient `∇F_m(w)`.
    PureGradient,
    /// `(w − w_local) / η` after `steps` momentum-SGD mini-batch steps from `w`.
    LocalSgd { steps: usize, batch_size: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearningTask {
    pub model: Model,
    pub partition: Partition,
    pub learning_rate: f64,
    /// Heavy-ball coefficient of the local optimizer; its buffer starts at
    /// zero every round. Ignored in pure-gradient mode.
    pub momentum: f64,
    pub mode: UpdateMode,
    pub rounds: usize,
}

impl LearningTask {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning.learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("learning.momentum", "must lie in [0, 1)"));
        }
        if self.rounds == 0 {
            return Err(Error::invalid("learning.rounds", "must be at least 1"));
        }
        if let UpdateMode::LocalSgd { steps, batch_size } = self.mode {
            if steps == 0 || batch_size == 0 {
                return Err(Error::invalid("learning.local_steps", "steps and batch size must be at least 1"));
            }
        }
        if self.model.dim() % 2 != 0 {
            return Err(Error::OddDimension(self.model.dim()));
        }
        Ok(())
    }
}

/// A task together with each device's local data and the weights
/// `b_m = Q_m / Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct Federation {
    pub task: LearningTask,
    shards: Vec<Dataset>,
    weights: Vec<f64>,
    test: Dataset,
}

impl Federation {
    /// Splits `train` over `devices` according to the task's partition plan.
    pub fn new(task: LearningTask, train: &Dataset, test: Dataset, devices: usize, seed: u64) -> Result<Self> {
        let idx = partition(train, devices, task.partition, seed)?;
        let shards = idx.iter().map(|i| train.subset(i)).collect();
        Self::from_shards(task, shards, test)
    }

    pub fn from_shards(task: LearningTask, shards: Vec<Dataset>, test: Dataset) -> Result<Self> {
        task.validate()?;
        if shards.is_empty() {
            return Err(Error::invalid("devices", "at least one shard is required"));
        }
        if let Some(m) = shards.iter().position(Dataset::is_empty) {
            return Err(Error::EmptyDataset(m));
        }
        let total: usize = shards.iter().map(Dataset::len).sum();
        let weights = shards.iter().map(|s| s.len() as f64 / total as f64).collect();
        Ok(Self {
            task,
            shards,
            weights,
            test,
        })
    }

    pub fn devices(&self) -> usize {
        self.shards.len()
    }

    pub fn shards(&self) -> &[Dataset] {
        &self.shards
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn test(&self) -> &Dataset {
        &self.test
    }

    pub fn dim(&self) -> usize {
        self.task.model.dim()
    }

    pub fn local_gradient(&self, m: usize, w: &DVector<f64>) -> Result<DVector<f64>> {
        let mut g = DVector::zeros(self.dim());
        self.task.model.loss_grad(w, &self.shards[m], Some(&mut g))?;
        Ok(g)
    }

    /// `F(w) = Σ_m b_m F_m(w)`.
    pub fn global_loss(&self, w: &DVector<f64>) -> Result<f64> {
        let mut total = 0.0;
        for (s, b) in self.shards.iter().zip(&self.weights) {
            total += b * self.task.model.loss_grad(w, s, None)?;
        }
        Ok(total)
    }

    pub fn test_accuracy(&self, w: &DVector<f64>) -> f64 {
        self.task.model.accuracy(w, &self.test)
    }

    /// One column per device: the local gradient, or the scaled local-SGD
    /// displacement. Mini-batches are drawn from `round_seed` and the device
    /// index only.
    pub fn compute_local_updates(&self, w: &DVector<f64>, round_seed: u64) -> Result<GradientBatch> {
        let d = self.dim();
        let mut g = DMatrix::zeros(d, self.devices());
        for m in 0..self.devices() {
            let col = match self.task.mode {
                UpdateMode::PureGradient => self.local_gradient(m, w)?,
                UpdateMode::LocalSgd { steps, batch_size } => {
                    let shard = &self.shards[m];
                    let eta = self.task.learning_rate;
                    let mut rng = rng::derive_rng(round_seed, &[stream::MINIBATCH, m as u64]);
                    let mut local = w.clone();
                    let mut velocity = DVector::zeros(d);
                    let mut step_grad = DVector::zeros(d);
                    for _ in 0..steps {
                        if batch_size >= shard.len() {
                            self.task.model.loss_grad(&local, shard, Some(&mut step_grad))?;
                        } else {
                            let pick = index::sample(&mut rng, shard.len(), batch_size).into_vec();
                            let batch = shard.subset(&pick);
                            self.task.model.loss_grad(&local, &batch, Some(&mut step_grad))?;
                        }
                        velocity *= self.task.momentum;
                        velocity += &step_grad;
                        local.axpy(-eta, &velocity, 1.0);
                    }
                    (w - local) / eta
                }
            };
            g.set_column(m, &col);
        }
        GradientBatch::new(g)
    }
}
