//! Loss families over a flat parameter vector.

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)] // inherent float methods shadow it when std is linked
use num_traits::Float;
use rand_distr::{Distribution, Normal};

use super::data::Dataset;
use crate::rng::{self, stream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossFamily {
    /// Least squares on one-hot targets with a linear map.
    Quadratic,
    /// Multinomial logistic regression.
    #[default]
    Logistic,
    /// One `tanh` hidden layer followed by softmax.
    Mlp { hidden: usize },
}

/// A loss family bound to feature and class counts, plus an `ℓ2` penalty
/// `(λ/2)‖w‖²` added to every local loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Model {
    pub family: LossFamily,
    pub features: usize,
    pub classes: usize,
    pub ridge: f64,
}

impl Model {
    pub fn new(family: LossFamily, features: usize, classes: usize, ridge: f64) -> Result<Self> {
        if classes < 2 && !matches!(family, LossFamily::Quadratic) {
            return Err(Error::invalid("classes", "softmax models need at least two classes"));
        }
        if let LossFamily::Mlp { hidden: 0 } = family {
            return Err(Error::invalid("learning.hidden", "must be at least 1"));
        }
        if !(ridge >= 0.0) {
            return Err(Error::invalid("learning.ridge", "must be non-negative"));
        }
        let m = Self {
            family,
            features,
            classes,
            ridge,
        };
        if m.dim() % 2 != 0 {
            return Err(Error::OddDimension(m.dim()));
        }
        Ok(m)
    }

    /// Number of parameters `D`.
    pub fn dim(&self) -> usize {
        let (p, c) = (self.features, self.classes);
        match self.family {
            LossFamily::Quadratic | LossFamily::Logistic => (p + 1) * c,
            LossFamily::Mlp { hidden: h } => p * h + h + h * c + c,
        }
    }

    /// Zeros for the linear families; small Gaussian weights for the MLP.
    pub fn init(&self, seed: u64) -> DVector<f64> {
        match self.family {
            LossFamily::Quadratic | LossFamily::Logistic => DVector::zeros(self.dim()),
            LossFamily::Mlp { .. } => {
                let mut rng = rng::derive_rng(seed, &[stream::INIT]);
                let scale = 1.0 / (self.features.max(1) as f64).sqrt();
                let normal = Normal::new(0.0, scale).expect("finite scale");
                DVector::from_fn(self.dim(), |_, _| normal.sample(&mut rng))
            }
        }
    }

    fn augmented(x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut a = x.clone().insert_column(x.ncols(), 1.0);
        if a.ncols() == 0 {
            a = DMatrix::from_element(x.nrows(), 1, 1.0);
        }
        a
    }

    fn one_hot(&self, labels: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(labels.len(), self.classes, |i, c| f64::from(u8::from(labels[i] == c)))
    }

    /// Row-wise softmax in place; returns the summed negative log-likelihood.
    fn softmax_nll(scores: &mut DMatrix<f64>, labels: &[usize]) -> f64 {
        let mut nll = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let mut row = scores.row_mut(i);
            let max = row.max();
            row.apply(|v| *v = (*v - max).exp());
            let sum = row.sum();
            row /= sum;
            nll -= row[y].max(f64::MIN_POSITIVE).ln();
        }
        nll
    }

    /// Mean loss over the rows of `data` plus the penalty; fills `grad` when given.
    pub fn loss_grad(&self, w: &DVector<f64>, data: &Dataset, grad: Option<&mut DVector<f64>>) -> Result<f64> {
        Error::check_len("model parameters", self.dim(), w.len())?;
        Error::check_len("feature width", self.features, data.feature_dim())?;
        if data.is_empty() {
            return Err(Error::EmptyDataset(0));
        }
        let n = data.len() as f64;
        let penalty = 0.5 * self.ridge * w.norm_squared();
        let (p, c) = (self.features, self.classes);
        let labels = data.labels();
        match self.family {
            LossFamily::Quadratic | LossFamily::Logistic => {
                let xa = Self::augmented(data.features());
                let wm = DMatrix::from_column_slice(p + 1, c, w.as_slice());
                let mut s = &xa * &wm;
                let y = self.one_hot(labels);
                let loss = if self.family == LossFamily::Quadratic {
                    s -= &y;
                    0.5 * s.norm_squared() / n
                } else {
                    let nll = Self::softmax_nll(&mut s, labels);
                    s -= &y;
                    nll / n
                };
                if let Some(g) = grad {
                    let gm = xa.transpose() * &s / n;
                    g.copy_from_slice(gm.as_slice());
                    g.axpy(self.ridge, w, 1.0);
                }
                Ok(loss + penalty)
            }
            LossFamily::Mlp { hidden: h } => {
                let (w1, b1, w2, b2) = self.split(w);
                let mut z = data.features() * &w1;
                for mut row in z.row_iter_mut() {
                    row += b1.transpose();
                }
                let act = z.map(|v| v.tanh());
                let mut s = &act * &w2;
                for mut row in s.row_iter_mut() {
                    row += b2.transpose();
                }
                let nll = Self::softmax_nll(&mut s, labels);
                if let Some(g) = grad {
                    let ds = (s - self.one_hot(labels)) / n;
                    let gw2 = act.transpose() * &ds;
                    let gb2 = ds.row_sum().transpose();
                    let mut dz = &ds * w2.transpose();
                    dz.zip_apply(&act, |d, a| *d *= 1.0 - a * a);
                    let gw1 = data.features().transpose() * &dz;
                    let gb1 = dz.row_sum().transpose();
                    let mut at = 0;
                    for part in [gw1.as_slice(), gb1.as_slice(), gw2.as_slice(), gb2.as_slice()] {
                        g.rows_mut(at, part.len()).copy_from_slice(part);
                        at += part.len();
                    }
                    debug_assert_eq!(at, p * h + h + h * c + c);
                    g.axpy(self.ridge, w, 1.0);
                }
                Ok(nll / n + penalty)
            }
        }
    }

    fn split(&self, w: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>) {
        let LossFamily::Mlp { hidden: h } = self.family else {
            unreachable!("split is only used by the MLP")
        };
        let (p, c) = (self.features, self.classes);
        let s = w.as_slice();
        let w1 = DMatrix::from_column_slice(p, h, &s[..p * h]);
        let b1 = DVector::from_column_slice(&s[p * h..p * h + h]);
        let off = p * h + h;
        let w2 = DMatrix::from_column_slice(h, c, &s[off..off + h * c]);
        let b2 = DVector::from_column_slice(&s[off + h * c..]);
        (w1, b1, w2, b2)
    }

    fn scores(&self, w: &DVector<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
        match self.family {
            LossFamily::Quadratic | LossFamily::Logistic => {
                Self::augmented(x) * DMatrix::from_column_slice(self.features + 1, self.classes, w.as_slice())
            }
            LossFamily::Mlp { .. } => {
                let (w1, b1, w2, b2) = self.split(w);
                let mut z = x * &w1;
                for mut row in z.row_iter_mut() {
                    row += b1.transpose();
                }
                let mut s = z.map(|v| v.tanh()) * &w2;
                for mut row in s.row_iter_mut() {
                    row += b2.transpose();
                }
                s
            }
        }
    }

    /// Fraction of rows whose highest score is the true label.
    pub fn accuracy(&self, w: &DVector<f64>, data: &Dataset) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let s = self.scores(w, data.features());
        let hits = data
            .labels()
            .iter()
            .enumerate()
            .filter(|(i, &y)| s.row(*i).transpose().argmax().0 == y)
            .count();
        hits as f64 / data.len() as f64
    }
}
