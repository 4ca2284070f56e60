//! The cache adapter.
//!
//! Keys `W1` (`C x M`) hold one cached feature per column and are the only
//! trainable tensor. Values `W2` (`classes x M`) are the one-hot labels of
//! those features and never change. For a batch of features `F`:
//!
//! ```text
//! zero_shot = F W_text^T
//! affinity  = exp(-beta (1 - F W1))        (elementwise)
//! adapter   = affinity W2^T
//! fused     = zero_shot + alpha * adapter
//! ```
//!
//! Checkpoints use the `CFM1` layout (little-endian): magic, `u32` version,
//! `u32` C, `u32` M, `u32` classes, `f64` alpha, `f64` beta, `W1` as `C x M`
//! row-major `f64`, then the `M` value labels as `u32`.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::features::{argmax, FeatureDataset, TextHead};
use crate::io::{self, ByteReader};
use crate::numerics::{self, Matrix};
use crate::rng::{self, tag};

pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_BETA: f64 = 1.0;

const MAGIC: &[u8; 4] = b"CFM1";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CacheModel {
    w1: Matrix,
    w2: Matrix,
    value_labels: Vec<usize>,
    alpha: f64,
    beta: f64,
}

impl CacheModel {
    /// Builds a model from keys and the class of each key column.
    pub fn from_parts(
        w1: Matrix,
        value_labels: Vec<usize>,
        num_classes: usize,
        alpha: f64,
        beta: f64,
    ) -> Result<Self> {
        if w1.cols() != value_labels.len() {
            return Err(Error::shape(
                "CacheModel::from_parts",
                format!("{} key columns but {} value labels", w1.cols(), value_labels.len()),
            ));
        }
        if let Some(&bad) = value_labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Label {
                label: bad,
                num_classes,
            });
        }
        for (name, v) in [("alpha", alpha), ("beta", beta)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        let w2 = Matrix::from_fn(num_classes, value_labels.len(), |c, j| {
            if value_labels[j] == c {
                1.0
            } else {
                0.0
            }
        });
        Ok(CacheModel {
            w1,
            w2,
            value_labels,
            alpha,
            beta,
        })
    }

    pub fn with_fusion(mut self, alpha: f64, beta: f64) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("beta", beta)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        self.alpha = alpha;
        self.beta = beta;
        Ok(self)
    }

    /// Same values and fusion weights, keys replaced by random unit vectors.
    pub fn with_random_keys(&self, seed: u64) -> CacheModel {
        let mut r = rng::stream(seed, &[tag::RANDOM_CACHE]);
        let (c, m) = self.w1.shape();
        let mut cols: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..c).map(|_| r.sample(StandardNormal)).collect())
            .collect();
        for col in &mut cols {
            numerics::normalize(col).expect("gaussian draw is non-zero");
        }
        CacheModel {
            w1: Matrix::from_fn(c, m, |i, j| cols[j][i]),
            ..self.clone()
        }
    }

    /// Same model with different keys. `W2` and the fusion weights are kept.
    pub fn with_keys(&self, w1: Matrix) -> Result<CacheModel> {
        self.w1.same_shape(&w1, "CacheModel::with_keys")?;
        Ok(CacheModel {
            w1,
            ..self.clone()
        })
    }

    pub fn w1(&self) -> &Matrix {
        &self.w1
    }

    pub fn w2(&self) -> &Matrix {
        &self.w2
    }

    pub fn value_labels(&self) -> &[usize] {
        &self.value_labels
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn feature_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn cache_size(&self) -> usize {
        self.w1.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.w2.rows()
    }

    /// Cached samples per class (the row sums of `W2`).
    pub fn shots_per_class(&self) -> Vec<f64> {
        (0..self.num_classes())
            .map(|c| self.w2.row(c).iter().sum())
            .collect()
    }
}

/// Builds the cache from a class-balanced dataset: key column `j` is the
/// feature of sample `j`, value column `j` its one-hot label.
pub fn init_cache(balanced: &FeatureDataset) -> Result<CacheModel> {
    let counts = balanced.class_counts();
    if balanced.is_empty() || counts.iter().any(|&c| c != counts[0]) {
        return Err(Error::Imbalanced { counts });
    }
    CacheModel::from_parts(
        balanced.features().transpose(),
        balanced.labels().to_vec(),
        balanced.num_classes(),
        DEFAULT_ALPHA,
        DEFAULT_BETA,
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogitsBundle {
    pub zero_shot: Matrix,
    pub adapter: Matrix,
    pub fused: Matrix,
}

struct Forward {
    logits: LogitsBundle,
    affinity: Matrix,
}

fn check_shapes(model: &CacheModel, head: &TextHead, batch: &Matrix) -> Result<()> {
    let c = model.feature_dim();
    if batch.cols() != c || head.feature_dim() != c {
        return Err(Error::shape(
            "compute_logits",
            format!(
                "batch has {} features, keys {c}, text head {}",
                batch.cols(),
                head.feature_dim()
            ),
        ));
    }
    if head.num_classes() != model.num_classes() {
        return Err(Error::shape(
            "compute_logits",
            format!(
                "text head has {} classes, cache values {}",
                head.num_classes(),
                model.num_classes()
            ),
        ));
    }
    Ok(())
}

fn forward(model: &CacheModel, head: &TextHead, batch: &Matrix) -> Result<Forward> {
    check_shapes(model, head, batch)?;
    let zero_shot = numerics::matmul(batch, &head.weights().transpose())?;
    let beta = model.beta;
    let affinity = numerics::matmul(batch, &model.w1)?.map(|s| (-beta * (1.0 - s)).exp());
    affinity.ensure_finite("affinity")?;
    let adapter = numerics::matmul(&affinity, &model.w2.transpose())?;
    let mut fused = zero_shot.clone();
    fused.scaled_add_assign(model.alpha, &adapter)?;
    Ok(Forward {
        logits: LogitsBundle {
            zero_shot,
            adapter,
            fused,
        },
        affinity,
    })
}

pub fn compute_logits(model: &CacheModel, head: &TextHead, batch: &Matrix) -> Result<LogitsBundle> {
    forward(model, head, batch).map(|f| f.logits)
}

/// Cross-entropy of the fused logits and its exact gradient with respect
/// to `W1`, everything else held fixed.
///
/// With `D = (softmax(fused) - onehot) / batch` the chain is
/// `dA = alpha * D W2`, then `dW1 = beta * F^T (A ⊙ dA)`.
pub fn loss_and_grad_w1(
    model: &CacheModel,
    head: &TextHead,
    batch: &Matrix,
    labels: &[usize],
) -> Result<(f64, Matrix)> {
    let fwd = forward(model, head, batch)?;
    let (loss, d_fused) = numerics::softmax_cross_entropy(&fwd.logits.fused, labels)?;
    let d_affinity = numerics::matmul(&d_fused, &model.w2)?;
    let alpha = model.alpha;
    let weighted = Matrix::from_fn(d_affinity.rows(), d_affinity.cols(), |i, j| {
        alpha * d_affinity.get(i, j) * fwd.affinity.get(i, j)
    });
    let grad = numerics::matmul_tn(batch, &weighted)?.scale(model.beta);
    Ok((loss, grad))
}

/// Loss of the fused logits only.
pub fn loss(model: &CacheModel, head: &TextHead, batch: &Matrix, labels: &[usize]) -> Result<f64> {
    let fused = compute_logits(model, head, batch)?.fused;
    Ok(numerics::softmax_cross_entropy(&fused, labels)?.0)
}

/// `W1 <- W1 - lr * grad`; values and fusion weights are carried over as is.
pub fn sgd_step(model: &CacheModel, grad_w1: &Matrix, lr: f64) -> Result<CacheModel> {
    model.w1.same_shape(grad_w1, "sgd_step")?;
    let mut w1 = model.w1.clone();
    w1.scaled_add_assign(-lr, grad_w1)?;
    Ok(CacheModel {
        w1,
        ..model.clone()
    })
}

/// Fraction of samples whose fused-logit argmax (lowest index on ties)
/// equals the label.
pub fn evaluate(model: &CacheModel, head: &TextHead, test: &FeatureDataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Degenerate("empty test set".into()));
    }
    Ok(predict(model, head, test.features())?
        .iter()
        .zip(test.labels())
        .filter(|(p, y)| p == y)
        .count() as f64
        / test.len() as f64)
}

pub fn predict(model: &CacheModel, head: &TextHead, batch: &Matrix) -> Result<Vec<usize>> {
    let fused = compute_logits(model, head, batch)?.fused;
    Ok((0..fused.rows()).map(|i| argmax(fused.row(i))).collect())
}

pub fn encode_checkpoint(model: &CacheModel) -> Vec<u8> {
    let (c, m) = model.w1.shape();
    let mut out = Vec::with_capacity(36 + 8 * c * m + 4 * m);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(c as u32).to_le_bytes());
    out.extend_from_slice(&(m as u32).to_le_bytes());
    out.extend_from_slice(&(model.num_classes() as u32).to_le_bytes());
    out.extend_from_slice(&model.alpha.to_le_bytes());
    out.extend_from_slice(&model.beta.to_le_bytes());
    for v in model.w1.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &y in &model.value_labels {
        out.extend_from_slice(&(y as u32).to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<CacheModel> {
    let mut r = ByteReader::new(bytes);
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "bad magic, expected \"CFM1\""));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let c = r.u32("C")? as usize;
    let m = r.u32("M")? as usize;
    let classes = r.u32("num_classes")? as usize;
    let alpha = r.f64("alpha")?;
    let beta = r.f64("beta")?;
    let mut w1 = Vec::with_capacity(c * m);
    for _ in 0..c * m {
        let at = r.offset();
        let v = r.f64("W1 entry")?;
        if !v.is_finite() {
            return Err(Error::format(at, "non-finite key entry"));
        }
        w1.push(v);
    }
    let mut labels = Vec::with_capacity(m);
    for _ in 0..m {
        let at = r.offset();
        let y = r.u32("value label")? as usize;
        if y >= classes {
            return Err(Error::format(at, format!("value label {y} out of range")));
        }
        labels.push(y);
    }
    if r.remaining() != 0 {
        return Err(Error::format(r.offset(), "trailing bytes"));
    }
    CacheModel::from_parts(Matrix::new(c, m, w1)?, labels, classes, alpha, beta)
}

pub fn save_checkpoint(path: &Path, model: &CacheModel) -> Result<()> {
    io::write_atomic(path, &encode_checkpoint(model))
}

pub fn load_checkpoint(path: &Path) -> Result<CacheModel> {
    decode_checkpoint(&io::read_bytes(path)?)
}
