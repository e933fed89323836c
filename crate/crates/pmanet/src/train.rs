//! Training loop with the published hyperparameters, evaluation, and the
//! layer-count ablation harness.
//!
//! Batches are processed as independent per-sample graphs. Gradient
//! accumulation splits each batch into fixed-size chunks that run in
//! parallel but are summed in chunk order, so results are bit-identical
//! regardless of thread count.

use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, Metrics};
use crate::model::{forward_sample, Bound, ModelParams};
use crate::optim::AdamW;
use crate::rng::Rng;
use crate::tape::Tape;
use crate::tensor::{Real, Tensor};
use crate::tokenizer::{TokenSequence, Vocab};
use rayon::prelude::*;
use serde::Serialize;
use std::path::{Path, PathBuf};

/// Fixed accumulation chunk size; summation order never depends on the
/// worker count.
const CHUNK: usize = 8;

/// Which label mapping the task uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Binary,
    MultiClass,
}

impl Task {
    pub fn classes(self) -> usize {
        match self {
            Task::Binary => 2,
            Task::MultiClass => 4,
        }
    }

    pub fn label_index(self, label: crate::data::Label) -> usize {
        match self {
            Task::Binary => label.binary_index(),
            Task::MultiClass => label.multi_index(),
        }
    }
}

/// Optimization hyperparameters.
#[derive(Debug, Clone, Serialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Validation cadence in steps; None means twice per epoch.
    pub eval_every: Option<usize>,
    /// Optional per-class loss weights (defaults off).
    pub class_weights: Option<Vec<f64>>,
    pub verbose: bool,
}

impl TrainConfig {
    /// Published fine-tuning settings: batch 64, lr 2e-5, decay 1e-4,
    /// 5 epochs.
    pub fn paper(seed: u64) -> Self {
        TrainConfig {
            batch_size: 64,
            lr: 2e-5,
            weight_decay: 1e-4,
            epochs: 5,
            seed,
            eval_every: None,
            class_weights: None,
            verbose: false,
        }
    }

    /// Desk-scale settings: same schedule but lr 1e-3, suited to the
    /// narrow from-scratch configuration.
    pub fn desk(seed: u64) -> Self {
        TrainConfig {
            lr: 1e-3,
            ..TrainConfig::paper(seed)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalRecord {
    pub step: usize,
    pub val_loss: f64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
    pub best_step: Option<usize>,
    pub best_val_loss: f64,
    pub best_checkpoint: Option<PathBuf>,
}

/// Encode records for a task; labels become class indices.
pub fn tokenize_records(
    vocab: &Vocab,
    records: &[crate::data::UrlRecord],
    max_len: usize,
    task: Task,
) -> Result<Vec<(TokenSequence, usize)>> {
    records
        .iter()
        .map(|r| Ok((vocab.encode(&r.url, max_len)?, task.label_index(r.label))))
        .collect()
}

/// Evaluation output: metrics over the malicious-vs-benign view plus raw
/// per-sample probabilities for downstream multi-class reporting.
#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub metrics: Metrics,
    /// P(not benign) per sample.
    pub scores: Vec<f64>,
    pub mean_loss: f64,
    pub probs: Vec<Vec<f64>>,
}

/// Forward a whole dataset in eval mode (dropout off), in parallel.
pub fn evaluate<T: Real>(
    params: &ModelParams<T>,
    data: &[(TokenSequence, usize)],
) -> Result<EvalOutput> {
    if data.is_empty() {
        return Err(Error::DataEmpty);
    }
    crate::init_threads();
    let chunks: Vec<&[(TokenSequence, usize)]> = data.chunks(CHUNK).collect();
    type SampleOut = (Vec<f64>, f64);
    let results: Vec<Result<Vec<SampleOut>>> = chunks
        .par_iter()
        .map(|chunk| {
            let mut out = Vec::with_capacity(chunk.len());
            for (seq, label) in *chunk {
                let mut tape = Tape::new();
                let bound = Bound::new(&mut tape, params, false);
                let mut rng = Rng::new(0);
                let logits = forward_sample(&mut tape, &bound, seq, false, &mut rng)?;
                let loss = tape.cross_entropy_with_logits(logits, &[*label])?;
                let probs = tape.softmax(logits, 1)?;
                out.push((
                    tape.value(probs).to_f64_vec(),
                    tape.value(loss).data()[0].as_f64(),
                ));
            }
            Ok(out)
        })
        .collect();
    let mut probs = Vec::with_capacity(data.len());
    let mut losses = Vec::with_capacity(data.len());
    for r in results {
        for (p, l) in r? {
            probs.push(p);
            losses.push(l);
        }
    }
    let scores: Vec<f64> = probs.iter().map(|p| 1.0 - p[0]).collect();
    let labels: Vec<bool> = data.iter().map(|(_, l)| *l != 0).collect();
    let metrics = compute_metrics(&scores, &labels, 0.5)?;
    let mean_loss = losses.iter().sum::<f64>() / losses.len() as f64;
    Ok(EvalOutput {
        metrics,
        scores,
        mean_loss,
        probs,
    })
}

/// Sum of per-sample gradients and losses over one batch, deterministic
/// in chunk order.
fn batch_grads<T: Real>(
    params: &ModelParams<T>,
    batch: &[(TokenSequence, usize)],
    step: usize,
    seed: u64,
    class_weights: Option<&[f64]>,
) -> Result<(Vec<Tensor<T>>, f64)> {
    let drop_root = Rng::new(seed).derive("dropout").derive_index(step as u64);
    let chunk_results: Vec<Result<(Vec<Tensor<T>>, f64)>> = batch
        .chunks(CHUNK)
        .collect::<Vec<_>>()
        .par_iter()
        .enumerate()
        .map(|(ci, chunk)| {
            let mut acc: Vec<Tensor<T>> =
                params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
            let mut loss_sum = 0.0f64;
            for (si, (seq, label)) in chunk.iter().enumerate() {
                let sample_index = (ci * CHUNK + si) as u64;
                let mut rng = drop_root.derive_index(sample_index);
                let mut tape = Tape::new();
                let bound = Bound::new(&mut tape, params, true);
                let logits = forward_sample(&mut tape, &bound, seq, true, &mut rng)?;
                let mut loss = tape.cross_entropy_with_logits(logits, &[*label])?;
                if let Some(weights) = class_weights {
                    loss = tape.scale(loss, weights[*label])?;
                }
                let mut grads = tape.backward(loss)?;
                loss_sum += tape.value(loss).data()[0].as_f64();
                for (i, var) in bound.vars().iter().enumerate() {
                    if let Some(g) = grads.take(*var) {
                        let a = acc[i].data_mut();
                        for (av, gv) in a.iter_mut().zip(g.data()) {
                            *av = *av + *gv;
                        }
                    }
                }
            }
            Ok((acc, loss_sum))
        })
        .collect();
    let mut total: Vec<Tensor<T>> =
        params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
    let mut loss_sum = 0.0f64;
    for r in chunk_results {
        let (acc, l) = r?;
        loss_sum += l;
        for (t, a) in total.iter_mut().zip(acc) {
            let td = t.data_mut();
            for (tv, av) in td.iter_mut().zip(a.data()) {
                *tv = *tv + *av;
            }
        }
    }
    let inv = T::of(1.0 / batch.len() as f64);
    for t in &mut total {
        for v in t.data_mut() {
            *v = *v * inv;
        }
    }
    Ok((total, loss_sum / batch.len() as f64))
}

/// Train with AdamW, shuffled epochs, periodic validation, and retention
/// of the best-validation-loss checkpoint.
pub fn fit<T: Real>(
    params: &mut ModelParams<T>,
    train_data: &[(TokenSequence, usize)],
    val_data: &[(TokenSequence, usize)],
    cfg: &TrainConfig,
    checkpoint_path: Option<&Path>,
) -> Result<TrainLog> {
    if train_data.is_empty() {
        return Err(Error::DataEmpty);
    }
    crate::init_threads();
    let steps_per_epoch = train_data.len().div_ceil(cfg.batch_size);
    let eval_every = cfg
        .eval_every
        .unwrap_or_else(|| (steps_per_epoch / 2).max(1));
    let mut opt = AdamW::new(&params.shapes(), cfg.lr, cfg.weight_decay);
    let mut log = TrainLog {
        best_val_loss: f64::INFINITY,
        ..TrainLog::default()
    };
    let shuffle_root = Rng::new(cfg.seed).derive("shuffle");
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let mut rng = shuffle_root.derive_index(epoch as u64);
        rng.shuffle(&mut order);
        for batch_ids in order.chunks(cfg.batch_size) {
            let batch: Vec<(TokenSequence, usize)> = batch_ids
                .iter()
                .map(|&i| train_data[i].clone())
                .collect();
            step += 1;
            let (grads, loss) =
                batch_grads(params, &batch, step, cfg.seed, cfg.class_weights.as_deref())?;
            if !loss.is_finite() {
                return Err(Error::DivergenceDetected { step });
            }
            opt.step(params.tensors_mut(), &grads)?;
            if cfg.verbose {
                println!("step={step} loss={loss:.6} lr={}", cfg.lr);
            }
            log.steps.push(StepRecord {
                step,
                loss,
                lr: cfg.lr,
            });
            if !val_data.is_empty() && step.is_multiple_of(eval_every) {
                run_validation(params, val_data, step, checkpoint_path, &mut log, cfg)?;
            }
        }
    }
    // make sure training always ends with a validation record
    if !val_data.is_empty() && !step.is_multiple_of(eval_every) {
        run_validation(params, val_data, step, checkpoint_path, &mut log, cfg)?;
    }
    Ok(log)
}

fn run_validation<T: Real>(
    params: &ModelParams<T>,
    val_data: &[(TokenSequence, usize)],
    step: usize,
    checkpoint_path: Option<&Path>,
    log: &mut TrainLog,
    cfg: &TrainConfig,
) -> Result<()> {
    let eval = evaluate(params, val_data)?;
    if cfg.verbose {
        println!(
            "eval step={step} val_loss={:.6} acc={:.4} auc={:.4}",
            eval.mean_loss, eval.metrics.accuracy, eval.metrics.auc
        );
    }
    if eval.mean_loss < log.best_val_loss {
        log.best_val_loss = eval.mean_loss;
        log.best_step = Some(step);
        if let Some(path) = checkpoint_path {
            params.save(path)?;
            log.best_checkpoint = Some(path.to_path_buf());
        }
    }
    log.evals.push(EvalRecord {
        step,
        val_loss: eval.mean_loss,
        metrics: eval.metrics,
    });
    Ok(())
}

/// One row of the layer-count ablation report.
#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub layers: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
}

/// Train one model per stack depth (the last k layer outputs feed the
/// head) and evaluate each on the test split.
pub fn layer_ablation<T: Real>(
    base_config: &crate::model::ModelConfig,
    train_data: &[(TokenSequence, usize)],
    val_data: &[(TokenSequence, usize)],
    test_data: &[(TokenSequence, usize)],
    layer_counts: &[usize],
    cfg: &TrainConfig,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(layer_counts.len());
    for &k in layer_counts {
        let mut model_cfg = base_config.clone();
        model_cfg.stack_layers = if k == model_cfg.n_layers { None } else { Some(k) };
        let mut params = ModelParams::<T>::init(model_cfg, &Rng::new(cfg.seed))?;
        fit(&mut params, train_data, val_data, cfg, None)?;
        let eval = evaluate(&params, test_data)?;
        rows.push(AblationRow {
            layers: k,
            accuracy: eval.metrics.accuracy,
            precision: eval.metrics.precision,
            recall: eval.metrics.recall,
            f1: eval.metrics.f1,
            auc: eval.metrics.auc,
        });
    }
    Ok(rows)
}
