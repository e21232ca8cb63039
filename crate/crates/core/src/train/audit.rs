//! Checks on a model: group equivariance, finite-difference gradients, and
//! gradient growth under repeated optimizer steps.

use rayon::prelude::*;
use serde::Serialize;

use crate::embed::PieceTensor;
use crate::error::TrainError;
use crate::group::GroupElement;
use crate::nn::Model;
use crate::tensor::Tensor;
use crate::train::optim::{Adam, AdamConfig};
use crate::train::trainer::{batch_gradients, max_abs_gradient};

#[derive(Clone, Debug, Serialize)]
pub struct ElementResidual {
    pub element: String,
    /// `max |f(g.M) − g.f(M)|`
    pub output: f64,
    /// `max |A(g.M) − A(M)|` over all score matrices
    pub scores: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EquivarianceReport {
    pub max_output_residual: f64,
    pub max_score_residual: f64,
    pub elements: Vec<ElementResidual>,
}

pub fn equivariance(model: &Model, melody: &Tensor) -> Result<EquivarianceReport, TrainError> {
    let base = model.forward(melody)?;
    let base_scores = model.attention_scores(melody)?;
    let elements = GroupElement::all()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&g| -> Result<ElementResidual, TrainError> {
            let moved = g.permute_rows(melody);
            let output = model.forward(&moved)?.max_abs_diff(&g.permute_rows(&base));
            let scores = model
                .attention_scores(&moved)?
                .iter()
                .zip(&base_scores)
                .map(|(a, b)| a.max_abs_diff(b))
                .fold(0.0, f64::max);
            Ok(ElementResidual { element: g.to_string(), output, scores })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EquivarianceReport {
        max_output_residual: elements.iter().map(|e| e.output).fold(0.0, f64::max),
        max_score_residual: elements.iter().map(|e| e.scores).fold(0.0, f64::max),
        elements,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub loss: f64,
    pub max_rel_error: f64,
    pub worst_param: String,
    pub params: Vec<ParamCheck>,
}

/// `|a − b| / max(|a|, |b|, floor)`
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Denominator floor per unit of loss. Central-difference roundoff grows
/// with `|L|`, so the floor does too.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Compares every parameter gradient entry with the central difference
/// `(L(θ+h) − L(θ−h)) / 2h` of the summed loss, using
/// [`relative_error`] with floor `REL_ERROR_FLOOR·max(1, |L|)`.
pub fn gradcheck(model: &Model, piece: &PieceTensor, h: f64) -> Result<GradCheckReport, TrainError> {
    let (loss, grads) = model.loss_and_grads(piece)?;
    let floor = REL_ERROR_FLOOR * loss.abs().max(1.0);
    let params = (0..model.params.len())
        .into_par_iter()
        .map(|k| -> Result<ParamCheck, TrainError> {
            let mut probe = model.clone();
            let n = probe.params.entries[k].tensor.len();
            let (mut rel, mut abs) = (0.0f64, 0.0f64);
            for i in 0..n {
                let orig = probe.params.entries[k].tensor.data()[i];
                probe.params.entries[k].tensor.data_mut()[i] = orig + h;
                let plus = probe.loss(piece)?;
                probe.params.entries[k].tensor.data_mut()[i] = orig - h;
                let minus = probe.loss(piece)?;
                probe.params.entries[k].tensor.data_mut()[i] = orig;
                let numeric = (plus - minus) / (2.0 * h);
                let analytic = grads[k].data()[i];
                let r = relative_error(analytic, numeric, floor);
                rel = if r.is_nan() { f64::NAN } else { rel.max(r) };
                abs = abs.max((analytic - numeric).abs());
            }
            Ok(ParamCheck {
                name: model.params.entries[k].name.clone(),
                entries: n,
                max_rel_error: rel,
                max_abs_error: abs,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let worst = params
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .map(|p| (p.name.clone(), p.max_rel_error))
        .unwrap_or_default();
    Ok(GradCheckReport { step: h, loss, max_rel_error: worst.1, worst_param: worst.0, params })
}

#[derive(Clone, Debug, Serialize)]
pub struct GrowthStep {
    pub step: usize,
    pub loss: f64,
    /// NaN when any gradient entry is non-finite.
    pub max_grad: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GrowthReport {
    pub threshold: f64,
    pub steps: Vec<GrowthStep>,
    /// First step whose gradient is non-finite or above `threshold`.
    pub exploded_at: Option<usize>,
}

/// Full-batch Adam steps on `pieces`, recording the largest gradient entry
/// per step. Stops early at the first non-finite loss or gradient.
pub fn gradient_growth(
    mut model: Model,
    pieces: &[PieceTensor],
    steps: usize,
    adam: AdamConfig,
    threshold: f64,
) -> Result<GrowthReport, TrainError> {
    if pieces.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let batch: Vec<&PieceTensor> = pieces.iter().collect();
    let mut opt = Adam::new(adam, model.params.tensors());
    let mut log = Vec::with_capacity(steps);
    let mut exploded_at = None;
    for step in 0..steps {
        let (loss, grads) = batch_gradients(&model, &batch)?;
        let max_grad = max_abs_gradient(&grads);
        log.push(GrowthStep { step, loss, max_grad });
        let finite = loss.is_finite() && max_grad.is_finite();
        if exploded_at.is_none() && (!finite || max_grad > threshold) {
            exploded_at = Some(step);
        }
        if !finite {
            break;
        }
        opt.update(model.params.tensors_mut(), &grads);
    }
    Ok(GrowthReport { threshold, steps: log, exploded_at })
}
