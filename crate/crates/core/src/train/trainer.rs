use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::PieceTensor;
use crate::error::TrainError;
use crate::nn::{Model, ModelConfig};
use crate::tensor::Tensor;
use crate::train::metrics::{EvalReport, PieceScore};
use crate::train::optim::{Adam, AdamConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Stop once training-set exact accuracy reaches this value.
    pub target_train_accuracy: Option<f64>,
    /// Hard cap on optimizer steps.
    pub max_steps: Option<usize>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 8,
            adam: AdamConfig::default(),
            seed: 0,
            target_train_accuracy: None,
            max_steps: None,
        }
    }
}

/// One JSON-lines metrics entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub split: String,
    pub wbce: f64,
    pub cossim: f64,
    pub acc: f64,
}

impl MetricsRecord {
    fn new(epoch: usize, split: &str, r: &EvalReport) -> Self {
        Self {
            epoch,
            split: split.to_string(),
            wbce: r.weighted_bce,
            cossim: r.cosine_similarity,
            acc: r.exact_accuracy,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the best validation accuracy (lowest loss on ties);
    /// the final parameters when there is no validation set.
    pub best: Model,
    pub best_epoch: usize,
    pub last: Model,
    pub history: Vec<MetricsRecord>,
    pub steps: usize,
    /// Per-step summed batch loss.
    pub losses: Vec<f64>,
}

/// Forward pass and metrics for every piece, averaged.
pub fn evaluate(model: &Model, pieces: &[PieceTensor]) -> Result<EvalReport, TrainError> {
    let scores = pieces
        .par_iter()
        .map(|p| {
            let logits = model.forward(&p.melody)?;
            PieceScore::compute(&logits, &p.chords, &p.weights)
        })
        .collect::<Result<Vec<_>, _>>()?;
    EvalReport::average(&scores).ok_or(TrainError::EmptyDataset)
}

/// Summed loss and gradients over a batch, reduced in batch order.
pub fn batch_gradients(model: &Model, batch: &[&PieceTensor]) -> Result<(f64, Vec<Tensor>), TrainError> {
    let results = batch.par_iter().map(|p| model.loss_and_grads(p)).collect::<Result<Vec<_>, _>>()?;
    let mut iter = results.into_iter();
    let (mut loss, mut grads) = iter.next().ok_or(TrainError::EmptyDataset)?;
    for (l, g) in iter {
        loss += l;
        for (acc, x) in grads.iter_mut().zip(&g) {
            acc.add_assign(x);
        }
    }
    Ok((loss, grads))
}

pub fn max_abs_gradient(grads: &[Tensor]) -> f64 {
    let mut max = 0.0f64;
    for x in grads.iter().flat_map(|g| g.data()) {
        if !x.is_finite() {
            return f64::NAN;
        }
        max = max.max(x.abs());
    }
    max
}

/// Initializes from `opts.seed` and trains.
pub fn train(
    config: &ModelConfig,
    train_set: &[PieceTensor],
    val_set: &[PieceTensor],
    opts: &TrainOptions,
    on_epoch: &mut dyn FnMut(&MetricsRecord),
) -> Result<TrainOutcome, TrainError> {
    let model = Model::new(config.clone(), opts.seed)?;
    train_model(model, train_set, val_set, opts, on_epoch)
}

/// Trains an existing model. Epoch 0 reports the starting parameters.
pub fn train_model(
    mut model: Model,
    train_set: &[PieceTensor],
    val_set: &[PieceTensor],
    opts: &TrainOptions,
    on_epoch: &mut dyn FnMut(&MetricsRecord),
) -> Result<TrainOutcome, TrainError> {
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let batch_size = opts.batch_size.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(opts.adam, model.params.tensors());
    let mut history = Vec::new();
    let mut losses = Vec::new();
    let mut steps = 0;

    let mut record = |epoch: usize,
                      model: &Model,
                      history: &mut Vec<MetricsRecord>|
     -> Result<(EvalReport, Option<EvalReport>), TrainError> {
        let tr = evaluate(model, train_set)?;
        let entry = MetricsRecord::new(epoch, "train", &tr);
        on_epoch(&entry);
        history.push(entry);
        let va = if val_set.is_empty() {
            None
        } else {
            let va = evaluate(model, val_set)?;
            let entry = MetricsRecord::new(epoch, "val", &va);
            on_epoch(&entry);
            history.push(entry);
            Some(va)
        };
        Ok((tr, va))
    };

    let (mut train_report, val_report) = record(0, &model, &mut history)?;
    let better = |candidate: &EvalReport, best: &EvalReport| {
        candidate.exact_accuracy > best.exact_accuracy
            || (candidate.exact_accuracy == best.exact_accuracy && candidate.weighted_bce < best.weighted_bce)
    };
    let mut best = (model.clone(), 0, val_report);
    let reached = |r: &EvalReport| opts.target_train_accuracy.is_some_and(|t| r.exact_accuracy >= t);
    let out_of_steps = |steps: usize| opts.max_steps.is_some_and(|m| steps >= m);

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=opts.epochs {
        if reached(&train_report) || out_of_steps(steps) {
            break;
        }
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            if out_of_steps(steps) {
                break;
            }
            let batch: Vec<&PieceTensor> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, grads) = batch_gradients(&model, &batch)?;
            let max_grad = max_abs_gradient(&grads);
            if !loss.is_finite() || !max_grad.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, step: steps, loss, max_grad });
            }
            adam.update(model.params.tensors_mut(), &grads);
            losses.push(loss);
            steps += 1;
        }
        let (tr, va) = record(epoch, &model, &mut history)?;
        train_report = tr;
        if let Some(va) = va {
            if best.2.as_ref().is_none_or(|b| better(&va, b)) {
                best = (model.clone(), epoch, Some(va));
            }
        }
    }
    let (best_model, best_epoch) =
        if val_set.is_empty() { (model.clone(), history.last().map_or(0, |r| r.epoch)) } else { (best.0, best.1) };
    Ok(TrainOutcome { best: best_model, best_epoch, last: model, history, steps, losses })
}
