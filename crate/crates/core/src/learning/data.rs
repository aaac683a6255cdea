//! Synthetic classification data and its split across devices.

use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::rng::{self, stream};
use crate::{Error, Result};

/// Feature rows with integer labels in `0..classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: DMatrix<f64>,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    pub fn new(features: DMatrix<f64>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        Error::check_len("dataset labels", features.nrows(), labels.len())?;
        if classes == 0 {
            return Err(Error::invalid("classes", "must be at least 1"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid("labels", alloc::format!("label {bad} out of range 0..{classes}")));
        }
        Ok(Self {
            features,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let features = DMatrix::from_fn(indices.len(), self.features.ncols(), |i, j| self.features[(indices[i], j)]);
        Self {
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    /// Concatenation of `parts`, which must agree on feature width and classes.
    pub fn concat(parts: &[Dataset]) -> Result<Self> {
        let first = parts.first().ok_or(Error::EmptyDataset(0))?;
        let rows: usize = parts.iter().map(Dataset::len).sum();
        let cols = first.feature_dim();
        let mut features = DMatrix::zeros(rows, cols);
        let mut labels = Vec::with_capacity(rows);
        let mut at = 0;
        for p in parts {
            Error::check_len("concatenated feature width", cols, p.feature_dim())?;
            features.rows_mut(at, p.len()).copy_from(&p.features);
            labels.extend_from_slice(&p.labels);
            at += p.len();
        }
        Self::new(features, labels, first.classes)
    }
}

/// Isotropic Gaussian classes around random means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureSpec {
    pub classes: usize,
    pub features: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Standard deviation of the class means; samples have unit noise.
    pub separation: f64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            features: 20,
            train_per_class: 300,
            test_per_class: 100,
            separation: 0.6,
        }
    }
}

/// Train and test sets drawn from the same mixture.
pub fn gaussian_mixture(spec: &MixtureSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    if spec.classes == 0 || spec.train_per_class == 0 {
        return Err(Error::invalid("mixture", "classes and train_per_class must be at least 1"));
    }
    if !(spec.separation >= 0.0) {
        return Err(Error::invalid("mixture.separation", "must be non-negative"));
    }
    let mut rng = rng::derive_rng(seed, &[stream::DATA]);
    let p = spec.features;
    let means = DMatrix::from_fn(spec.classes, p, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        spec.separation * z
    });
    let draw = |per_class: usize, rng: &mut rng::SimRng| {
        let n = per_class * spec.classes;
        let labels: Vec<usize> = (0..n).map(|i| i % spec.classes).collect();
        let features = DMatrix::from_fn(n, p, |i, j| {
            let noise: f64 = StandardNormal.sample(rng);
            means[(labels[i], j)] + noise
        });
        Dataset::new(features, labels, spec.classes)
    };
    let train = draw(spec.train_per_class, &mut rng)?;
    let test = draw(spec.test_per_class, &mut rng)?;
    Ok((train, test))
}

/// How training samples are assigned to devices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Partition {
    #[default]
    Iid,
    /// Each device draws this many distinct classes and an equal quota of
    /// `Q / (k M)` samples from each.
    LabelSkew { classes_per_device: usize },
}

/// Indices of the training samples held by each device.
pub fn partition(data: &Dataset, devices: usize, plan: Partition, seed: u64) -> Result<Vec<Vec<usize>>> {
    if devices == 0 {
        return Err(Error::invalid("devices", "must be at least 1"));
    }
    let mut rng = rng::derive_rng(seed, &[stream::PARTITION]);
    let q = data.len();
    let shards = match plan {
        Partition::Iid => {
            let mut idx: Vec<usize> = (0..q).collect();
            idx.shuffle(&mut rng);
            let base = q / devices;
            let extra = q % devices;
            let mut out = Vec::with_capacity(devices);
            let mut at = 0;
            for m in 0..devices {
                let len = base + usize::from(m < extra);
                out.push(idx[at..at + len].to_vec());
                at += len;
            }
            out
        }
        Partition::LabelSkew { classes_per_device: k } => {
            let c = data.classes();
            if k == 0 || k > c {
                return Err(Error::invalid(
                    "learning.classes_per_device",
                    alloc::format!("must lie in 1..={c}, got {k}"),
                ));
            }
            let quota = q / (k * devices);
            let mut pools: Vec<Vec<usize>> = alloc::vec![Vec::new(); c];
            for (i, &l) in data.labels().iter().enumerate() {
                pools[l].push(i);
            }
            for pool in pools.iter_mut() {
                pool.shuffle(&mut rng);
            }
            let mut cursor = alloc::vec![0usize; c];
            let mut out = Vec::with_capacity(devices);
            for _ in 0..devices {
                let mut classes: Vec<usize> = (0..c).collect();
                let (chosen, _) = classes.partial_shuffle(&mut rng, k);
                let mut mine = Vec::with_capacity(quota * k);
                for &cls in chosen.iter() {
                    let pool = &pools[cls];
                    if pool.is_empty() {
                        continue;
                    }
                    // Pools are reused cyclically once exhausted.
                    for _ in 0..quota {
                        mine.push(pool[cursor[cls] % pool.len()]);
                        cursor[cls] += 1;
                    }
                }
                out.push(mine);
            }
            out
        }
    };
    if let Some(m) = shards.iter().position(Vec::is_empty) {
        return Err(Error::EmptyDataset(m));
    }
    Ok(shards)
}
