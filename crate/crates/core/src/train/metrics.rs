use serde::{Deserialize, Serialize};

use crate::autodiff::bce_with_logit;
use crate::error::ShapeError;
use crate::tensor::Tensor;

fn check_same(a: &Tensor, b: &Tensor, what: &str) -> Result<(), ShapeError> {
    if a.shape() != b.shape() || a.rank() != 2 {
        return Err(ShapeError::new(format!("{what}: shapes {:?} and {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `Σ_ij w_j·BCE(sigmoid(x_ij), c_ij)`, summed over all entries.
pub fn weighted_bce(logits: &Tensor, targets: &Tensor, weights: &[f64]) -> Result<f64, ShapeError> {
    check_same(logits, targets, "weighted_bce")?;
    if weights.len() != logits.cols() {
        return Err(ShapeError::new(format!("{} weights for {} columns", weights.len(), logits.cols())));
    }
    let mut total = 0.0;
    for i in 0..logits.rows() {
        for (j, w) in weights.iter().enumerate() {
            total += w * bce_with_logit(logits.at(i, j), targets.at(i, j));
        }
    }
    Ok(total)
}

/// 1 where the logit is positive (probability above one half).
pub fn threshold(logits: &Tensor) -> Tensor {
    logits.map(|x| if x > 0.0 { 1.0 } else { 0.0 })
}

/// Mean column cosine with zero columns scored `both_zero` when both sides
/// are silent and 0 when only one is.
pub fn cosine_similarity_with(pred: &Tensor, target: &Tensor, both_zero: f64) -> Result<f64, ShapeError> {
    check_same(pred, target, "cosine_similarity")?;
    let cols = pred.cols();
    if cols == 0 {
        return Err(ShapeError::new("cosine similarity of an empty matrix"));
    }
    let mut total = 0.0;
    for j in 0..cols {
        let (p, t) = (pred.column(j), target.column(j));
        let dot: f64 = p.iter().zip(&t).map(|(a, b)| a * b).sum();
        let np = p.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nt = t.iter().map(|x| x * x).sum::<f64>().sqrt();
        total += match (np == 0.0, nt == 0.0) {
            (true, true) => both_zero,
            (true, false) | (false, true) => 0.0,
            _ => (dot / (np * nt)).min(1.0),
        };
    }
    Ok(total / cols as f64)
}

pub fn cosine_similarity(pred: &Tensor, target: &Tensor) -> Result<f64, ShapeError> {
    cosine_similarity_with(pred, target, 1.0)
}

/// Fraction of columns that match exactly.
pub fn exact_accuracy(pred: &Tensor, target: &Tensor) -> Result<f64, ShapeError> {
    check_same(pred, target, "exact_accuracy")?;
    let cols = pred.cols();
    if cols == 0 {
        return Err(ShapeError::new("accuracy of an empty matrix"));
    }
    let hits = (0..cols).filter(|&j| pred.column(j) == target.column(j)).count();
    Ok(hits as f64 / cols as f64)
}

/// Metrics averaged over pieces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Summed loss divided by the piece's step count.
    pub weighted_bce: f64,
    /// Summed loss divided by 12·T.
    pub weighted_bce_per_entry: f64,
    pub cosine_similarity: f64,
    pub exact_accuracy: f64,
    pub pieces: usize,
    pub steps: usize,
}

/// Per-piece scores combined by [`EvalReport::average`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PieceScore {
    pub loss: f64,
    pub steps: usize,
    pub cosine_similarity: f64,
    pub exact_accuracy: f64,
}

impl PieceScore {
    pub fn compute(logits: &Tensor, targets: &Tensor, weights: &[f64]) -> Result<Self, ShapeError> {
        let pred = threshold(logits);
        Ok(Self {
            loss: weighted_bce(logits, targets, weights)?,
            steps: logits.cols(),
            cosine_similarity: cosine_similarity(&pred, targets)?,
            exact_accuracy: exact_accuracy(&pred, targets)?,
        })
    }
}

impl EvalReport {
    /// `None` for an empty list.
    pub fn average(scores: &[PieceScore]) -> Option<Self> {
        if scores.is_empty() {
            return None;
        }
        let n = scores.len() as f64;
        let mean = |f: &dyn Fn(&PieceScore) -> f64| scores.iter().map(f).sum::<f64>() / n;
        Some(Self {
            weighted_bce: mean(&|s| s.loss / s.steps as f64),
            weighted_bce_per_entry: mean(&|s| s.loss / (12 * s.steps) as f64),
            cosine_similarity: mean(&|s| s.cosine_similarity),
            exact_accuracy: mean(&|s| s.exact_accuracy),
            pieces: scores.len(),
            steps: scores.iter().map(|s| s.steps).sum(),
        })
    }
}
