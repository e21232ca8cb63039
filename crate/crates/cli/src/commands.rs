use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use d12_core::embed::{chord_spans_from_matrix, parse_pieces, Piece, PieceTensor};
use d12_core::group::{channels, decompose_perm_rep, ConjugacyClass, GroupElement, IrrepLabel};
use d12_core::ingest::annotation::{UnknownPolicy, CHORD_TABLE_VERSION};
use d12_core::ingest::{ingest_dirs, split_dataset};
use d12_core::nn::{checkpoint, Model, ModelConfig, ModelMode, Nonlinearity};
use d12_core::synthetic::{corpus, SyntheticOptions};
use d12_core::tensor::Tensor;
use d12_core::train::audit::{equivariance, gradcheck, gradient_growth};
use d12_core::train::{evaluate, exact_accuracy, threshold, train, EvalReport, TrainOptions};
use d12_core::Gate;

use crate::args::{
    AuditArgs, AuditMode, Command, EvalArgs, IngestArgs, PredictArgs, TrainArgs, TransformArgs, Unknown,
};
use crate::report::{read_input, write_output, CliError, Context};

pub fn run(ctx: &Context, command: &Command) -> Result<(), CliError> {
    match command {
        Command::Irreps => irreps(ctx),
        Command::Ingest(a) => ingest(ctx, a),
        Command::Train(a) => train_cmd(ctx, a),
        Command::Eval(a) => eval(ctx, a),
        Command::Predict(a) => predict(ctx, a),
        Command::Transform(a) => transform(ctx, a),
        Command::Audit(a) => audit(ctx, a),
    }
}

/// The `--config` file. Both sections are optional; `model` fields
/// override the default equivariant configuration one by one.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    model: Option<Value>,
    train: TrainOptions,
}

fn load_config(ctx: &Context) -> Result<(ModelConfig, TrainOptions), CliError> {
    let Some(path) = &ctx.global.config else {
        return Ok((ModelConfig::default(), TrainOptions::default()));
    };
    let text = read_input(path)?;
    let invalid = |e: serde_json::Error| CliError::Validation(format!("{}: {e}", path.display()));
    let cfg: RunConfig = serde_json::from_str(&text).map_err(invalid)?;
    let mut model = serde_json::to_value(ModelConfig::default()).map_err(|e| CliError::Runtime(e.to_string()))?;
    if let Some(overrides) = cfg.model {
        let Value::Object(fields) = overrides else {
            return Err(CliError::Validation(format!("{}: `model` must be an object", path.display())));
        };
        if let Value::Object(base) = &mut model {
            base.extend(fields);
        }
    }
    let model: ModelConfig = serde_json::from_value(model).map_err(invalid)?;
    Ok((model, cfg.train))
}

fn validated(config: ModelConfig) -> Result<ModelConfig, CliError> {
    config.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    Ok(config)
}

fn read_pieces(path: &Path) -> Result<Vec<Piece>, CliError> {
    let pieces =
        parse_pieces(&read_input(path)?).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    if pieces.is_empty() {
        return Err(CliError::Validation(format!("{}: no pieces", path.display())));
    }
    Ok(pieces)
}

fn tensors(pieces: &[Piece]) -> Result<Vec<PieceTensor>, CliError> {
    pieces.iter().map(|p| p.to_tensor().map_err(|e| CliError::Validation(format!("piece {}: {e}", p.id)))).collect()
}

fn json_lines<T: Serialize>(items: &[T]) -> Result<Vec<u8>, CliError> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| CliError::Runtime(e.to_string()))?;
        out.push(b'\n');
    }
    Ok(out)
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn load_model(path: &Path) -> Result<Model, CliError> {
    checkpoint::load(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn irreps(ctx: &Context) -> Result<(), CliError> {
    let classes: Vec<Value> = ConjugacyClass::ALL
        .iter()
        .map(|c| json!({ "name": c.name(), "size": c.size(), "representative": c.representative().to_string() }))
        .collect();
    let characters: BTreeMap<IrrepLabel, Vec<f64>> =
        IrrepLabel::ALL.iter().map(|&l| (l, ConjugacyClass::ALL.iter().map(|&c| l.character(c)).collect())).collect();
    let chans: Vec<Value> = channels()
        .iter()
        .map(|c| {
            json!({
                "label": c.label,
                "dim": c.dim(),
                "u": rows(&c.u),
                "intertwiner_residual": c.intertwiner_residual(),
                "orthonormality_residual": c.orthonormality_residual(),
            })
        })
        .collect();
    let worst = |f: fn(&d12_core::group::ChangeOfBasis) -> f64| channels().iter().map(f).fold(0.0, f64::max);
    let report = json!({
        "classes": classes,
        "characters": characters,
        "multiplicities": decompose_perm_rep(),
        "channels": chans,
        "max_intertwiner_residual": worst(|c| c.intertwiner_residual()),
        "max_orthonormality_residual": worst(|c| c.orthonormality_residual()),
    });
    if let Some(out) = &ctx.global.out {
        write_output(out, report.to_string().as_bytes())?;
    }
    ctx.emit("irreps", report)
}

fn ingest(ctx: &Context, a: &IngestArgs) -> Result<(), CliError> {
    let out = ctx.global.out.as_ref().ok_or_else(|| CliError::Validation("ingest needs --out FILE".into()))?;
    if !a.u.is_finite() || a.u <= 0.0 {
        return Err(CliError::Validation(format!("--u must be positive, got {}", a.u)));
    }
    let policy = match a.unknown {
        Unknown::Skip => UnknownPolicy::Skip,
        Unknown::Fail => UnknownPolicy::Fail,
        Unknown::RootGuess => UnknownPolicy::RootGuess,
    };
    let (pieces, warnings) = ingest_dirs(&a.midi_dir, &a.chord_dir, &a.beat_dir, a.u, policy)?;
    for w in &warnings {
        eprintln!("{}", serde_json::to_string(w).map_err(|e| CliError::Runtime(e.to_string()))?);
    }
    write_output(out, &json_lines(&pieces)?)?;
    ctx.log(&format!("wrote {} pieces to {}", pieces.len(), out.display()));
    ctx.emit(
        "ingest",
        json!({
            "pieces": pieces.len(),
            "warnings": warnings.len(),
            "u": a.u,
            "chord_table_version": CHORD_TABLE_VERSION,
            "out": out.display().to_string(),
        }),
    )
}

fn train_cmd(ctx: &Context, a: &TrainArgs) -> Result<(), CliError> {
    let dir = ctx.global.out.clone().ok_or_else(|| CliError::Validation("train needs --out DIR".into()))?;
    let (mut model_config, mut opts) = load_config(ctx)?;
    if a.plain {
        model_config.mode = ModelMode::Plain;
    }
    let model_config = validated(model_config)?;
    opts.seed = ctx.global.seed;
    if let Some(e) = a.epochs {
        opts.epochs = e;
    }
    if let Some(b) = a.batch_size {
        opts.batch_size = b;
    }
    if let Some(lr) = a.lr {
        opts.adam.lr = lr;
    }
    if a.max_steps.is_some() {
        opts.max_steps = a.max_steps;
    }
    if a.target_accuracy.is_some() {
        opts.target_train_accuracy = a.target_accuracy;
    }

    let all = tensors(&read_pieces(&a.corpus)?)?;
    let (train_set, val_set, test_set) = if a.split {
        let s = split_dataset(&all, ctx.global.seed)?;
        (s.train, s.val, s.test)
    } else {
        let val = match &a.val {
            Some(p) => tensors(&read_pieces(p)?)?,
            None => Vec::new(),
        };
        (all, val, Vec::new())
    };
    ctx.log(&format!(
        "training on {} pieces ({} val, {} test), {} epochs",
        train_set.len(),
        val_set.len(),
        test_set.len(),
        opts.epochs
    ));

    let mut metrics = Vec::new();
    let outcome = train(&model_config, &train_set, &val_set, &opts, &mut |r| {
        ctx.log(&format!("epoch {} {}: wbce {:.4} cossim {:.4} acc {:.4}", r.epoch, r.split, r.wbce, r.cossim, r.acc));
        metrics.push(r.clone());
    });
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => {
            // keep the partial metrics for diagnosis
            if fs::create_dir_all(&dir).is_ok() {
                let _ = fs::write(dir.join("metrics.jsonl"), json_lines(&metrics)?);
            }
            return Err(e.into());
        }
    };

    fs::create_dir_all(&dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    let best_path = dir.join("model.ckpt");
    let last_path = dir.join("last.ckpt");
    let save =
        |m: &Model, p: &PathBuf| checkpoint::save(m, p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())));
    save(&outcome.best, &best_path)?;
    save(&outcome.last, &last_path)?;
    write_output(&dir.join("metrics.jsonl"), &json_lines(&outcome.history)?)?;

    let score = |set: &[PieceTensor]| -> Result<Option<EvalReport>, CliError> {
        if set.is_empty() {
            Ok(None)
        } else {
            Ok(Some(evaluate(&outcome.best, set)?))
        }
    };
    ctx.emit(
        "train",
        json!({
            "mode": model_config.mode,
            "params": outcome.best.param_count(),
            "best_epoch": outcome.best_epoch,
            "steps": outcome.steps,
            "train": score(&train_set)?,
            "val": score(&val_set)?,
            "test": score(&test_set)?,
            "checkpoint": best_path.display().to_string(),
            "last_checkpoint": last_path.display().to_string(),
            "metrics": dir.join("metrics.jsonl").display().to_string(),
        }),
    )
}

fn eval(ctx: &Context, a: &EvalArgs) -> Result<(), CliError> {
    let model = load_model(&a.checkpoint)?;
    let pieces = tensors(&read_pieces(&a.corpus)?)?;
    let report = evaluate(&model, &pieces)?;
    let value = json!({ "params": model.param_count(), "mode": model.config().mode, "metrics": report });
    if let Some(out) = &ctx.global.out {
        write_output(out, value.to_string().as_bytes())?;
    }
    ctx.emit("eval", value)
}

fn predict(ctx: &Context, a: &PredictArgs) -> Result<(), CliError> {
    let model = load_model(&a.checkpoint)?;
    let pieces = read_pieces(&a.piece)?;
    let mut predicted = Vec::with_capacity(pieces.len());
    let mut entries = Vec::with_capacity(pieces.len());
    for (piece, t) in pieces.iter().zip(tensors(&pieces)?) {
        let logits = model.forward(&t.melody).map_err(|e| CliError::Runtime(e.to_string()))?;
        let chords = threshold(&logits);
        let accuracy = if piece.chords.is_empty() {
            None
        } else {
            Some(exact_accuracy(&chords, &t.chords).map_err(|e| CliError::Runtime(e.to_string()))?)
        };
        let out = Piece { chords: chord_spans_from_matrix(&chords, piece.u_beats), ..piece.clone() };
        entries.push(json!({
            "id": piece.id,
            "chord_matrix": rows(&chords),
            "exact_accuracy": accuracy,
            "piece": out,
        }));
        predicted.push(out);
    }
    if let Some(path) = &ctx.global.out {
        write_output(path, &json_lines(&predicted)?)?;
    }
    ctx.emit("predict", json!({ "predictions": entries }))
}

fn transform(ctx: &Context, a: &TransformArgs) -> Result<(), CliError> {
    let g: GroupElement = a.element.parse().map_err(|e: d12_core::GroupError| CliError::Validation(e.to_string()))?;
    let moved: Vec<Piece> = read_pieces(&a.piece)?.iter().map(|p| p.transformed(g)).collect();
    if let Some(path) = &ctx.global.out {
        write_output(path, &json_lines(&moved)?)?;
    }
    ctx.emit("transform", json!({ "element": g.to_string(), "pieces": moved }))
}

fn audit(ctx: &Context, a: &AuditArgs) -> Result<(), CliError> {
    let (mut config, opts) = load_config(ctx)?;
    let model = match &a.checkpoint {
        Some(path) => load_model(path)?,
        None => {
            if a.plain {
                config.mode = ModelMode::Plain;
            }
            if a.norm_gated {
                config.nonlinearity = Nonlinearity::NormGated(Gate::Sigmoid);
            }
            Model::new(validated(config)?, ctx.global.seed).map_err(|e| CliError::Validation(e.to_string()))?
        }
    };
    let pieces = match &a.piece {
        Some(path) => read_pieces(path)?,
        None => {
            let mut pieces = corpus(2, ctx.global.seed, &SyntheticOptions::default());
            if a.silent {
                let mut silent = pieces[0].clone();
                silent.id = format!("{}-silent", silent.id);
                silent.melody_notes.clear();
                pieces.insert(0, silent);
            }
            pieces
        }
    };
    let pieces = tensors(&pieces)?;
    let mode = model.config().mode;
    let report = match a.mode {
        AuditMode::Equivariance => {
            let reports = pieces.iter().map(|p| equivariance(&model, &p.melody)).collect::<Result<Vec<_>, _>>()?;
            json!({
                "mode": "equivariance",
                "model": mode,
                "max_output_residual": reports.iter().map(|r| r.max_output_residual).fold(0.0, f64::max),
                "max_score_residual": reports.iter().map(|r| r.max_score_residual).fold(0.0, f64::max),
                "pieces": reports,
            })
        }
        AuditMode::Gradcheck => {
            let reports = pieces.iter().map(|p| gradcheck(&model, p, a.step)).collect::<Result<Vec<_>, _>>()?;
            json!({
                "mode": "gradcheck",
                "model": mode,
                "max_rel_error": reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max),
                "pieces": reports,
            })
        }
        AuditMode::GradientGrowth => {
            let report = gradient_growth(model, &pieces, a.steps, opts.adam, a.threshold)?;
            json!({
                "mode": "gradient_growth",
                "model": mode,
                "exploded": report.exploded_at.is_some(),
                "report": report,
            })
        }
    };
    if let Some(out) = &ctx.global.out {
        write_output(out, report.to_string().as_bytes())?;
    }
    ctx.emit("audit", report)
}
