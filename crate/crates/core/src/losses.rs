//! Reference values for the two training losses. No gradients are computed.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{PsrError, Result};

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` before taking logs.
pub const BCE_EPS: f64 = 1e-7;
pub const UNIT_NORM_TOL: f64 = 1e-6;
pub const SUPCON_TEMPERATURE: f64 = 0.07;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    vectors: Vec<Vec<f64>>,
    labels: Vec<u32>,
    temperature: f64,
}

impl EmbeddingBatch {
    pub fn new(vectors: Vec<Vec<f64>>, labels: Vec<u32>, temperature: f64) -> Result<Self> {
        if vectors.len() < 2 {
            return Err(PsrError::arg("vectors", format!("need at least 2 embeddings, got {}", vectors.len())));
        }
        if vectors.len() != labels.len() {
            return Err(PsrError::arg("labels", format!("{} labels for {} embeddings", labels.len(), vectors.len())));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(PsrError::arg("temperature", format!("must be positive, got {temperature}")));
        }
        let dim = vectors[0].len();
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(PsrError::arg("vectors", format!("row {i} has dimension {}, expected {dim}", v.len())));
            }
            let norm = libm::sqrt(v.iter().map(|x| x * x).sum());
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(PsrError::arg("vectors", format!("row {i} has norm {norm}, expected unit norm")));
            }
        }
        Ok(EmbeddingBatch { vectors, labels, temperature })
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }
}

/// Where the `1/|P(i)|` average sits relative to the logarithm.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupConVariant {
    /// `-log( mean_p exp(s_ip) / sum_a exp(s_ia) )`.
    #[default]
    InsideLog,
    /// `-mean_p log( exp(s_ip) / sum_a exp(s_ia) )`.
    OutsideLog,
}

/// Supervised contrastive loss summed over anchors.
///
/// The contrast set of anchor `i` is every other sample in the batch and its
/// positives are the other samples sharing its label. Anchors without
/// positives contribute nothing; a batch where no anchor has a positive is
/// an error.
pub fn supcon_loss(batch: &EmbeddingBatch, variant: SupConVariant) -> Result<f64> {
    let n = batch.vectors.len();
    let tau = batch.temperature;
    let mut total = 0.0;
    let mut used = 0usize;
    let mut logits = Vec::with_capacity(n);
    for i in 0..n {
        logits.clear();
        logits.extend((0..n).filter(|&a| a != i).map(|a| (a, dot(&batch.vectors[i], &batch.vectors[a]) / tau)));
        let positives: Vec<f64> =
            logits.iter().filter(|(a, _)| batch.labels[*a] == batch.labels[i]).map(|&(_, s)| s).collect();
        if positives.is_empty() {
            log::debug!("supcon: anchor {i} has no positive, excluded");
            continue;
        }
        used += 1;
        let all: Vec<f64> = logits.iter().map(|&(_, s)| s).collect();
        let log_denom = log_sum_exp(&all);
        let term = match variant {
            SupConVariant::InsideLog => {
                let log_num = log_sum_exp(&positives) - libm::log(positives.len() as f64);
                log_denom - log_num
            }
            SupConVariant::OutsideLog => positives.iter().map(|s| log_denom - s).sum::<f64>() / positives.len() as f64,
        };
        total += term;
    }
    if used == 0 {
        return Err(PsrError::UndefinedLoss("no anchor has a positive partner"));
    }
    Ok(total.max(0.0))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + libm::log(xs.iter().map(|x| libm::exp(x - m)).sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbBatch {
    predictions: Vec<Vec<f64>>,
    targets: Vec<Vec<bool>>,
}

impl ProbBatch {
    pub fn new(predictions: Vec<Vec<f64>>, targets: Vec<Vec<bool>>) -> Result<Self> {
        if predictions.is_empty() {
            return Err(PsrError::arg("predictions", "batch is empty"));
        }
        if predictions.len() != targets.len() {
            return Err(PsrError::arg(
                "targets",
                format!("{} target rows for {} predictions", targets.len(), predictions.len()),
            ));
        }
        let c = predictions[0].len();
        for (i, (p, t)) in predictions.iter().zip(&targets).enumerate() {
            if p.len() != c || t.len() != c {
                return Err(PsrError::arg("predictions", format!("row {i} does not have {c} columns")));
            }
            if let Some(x) = p.iter().find(|x| !(0.0..=1.0).contains(*x)) {
                return Err(PsrError::arg("predictions", format!("row {i} has probability {x} outside [0, 1]")));
            }
        }
        Ok(ProbBatch { predictions, targets })
    }

    pub fn predictions(&self) -> &[Vec<f64>] {
        &self.predictions
    }

    pub fn targets(&self) -> &[Vec<bool>] {
        &self.targets
    }
}

/// Multi-label binary cross-entropy, summed over classes and averaged over samples.
pub fn multilabel_bce(batch: &ProbBatch) -> f64 {
    let n = batch.predictions.len() as f64;
    let mut total = 0.0;
    for (p_row, t_row) in batch.predictions.iter().zip(&batch.targets) {
        for (&p, &t) in p_row.iter().zip(t_row) {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            total += if t { libm::log(p) } else { libm::log(1.0 - p) };
        }
    }
    -total / n
}
