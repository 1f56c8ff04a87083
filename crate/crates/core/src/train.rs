//! Mini-batch SGD with momentum and batch scoring.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{self, CheckpointMeta};
use crate::error::{Error, Result};
use crate::model::{Model, BONAFIDE_CLASS, PA_CLASS};
use crate::nn;
use crate::par;
use crate::synthdata::{IrisClass, Sample};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Write `epoch_NNN.ckpt` every this many epochs; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    /// Where checkpoints go; `None` keeps everything in memory.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            momentum: 0.9,
            batch_size: 20,
            epochs: 50,
            seed: 0,
            checkpoint_every: 0,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config(format!("learning rate {} must be finite and >= 0", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::config("batch_size and epochs must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,mean_loss,train_accuracy,wall_seconds\n");
        for r in &self.epochs {
            writeln!(out, "{},{},{},{:.3}", r.epoch, r.mean_loss, r.train_accuracy, r.wall_seconds).unwrap();
        }
        out
    }
}

/// Heavy-ball SGD: `v ← m·v − lr·g`, `θ ← θ + v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64, params: &[&Tensor]) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }

    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.velocity.len());
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.velocity) {
            for ((pv, gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vv = self.momentum * *vv - self.learning_rate * gv;
                *pv += *vv;
            }
        }
    }
}

/// Seed of the shuffle for one epoch.
fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn stack_inputs(samples: &[&Sample]) -> Result<Tensor> {
    let inputs: Vec<&Tensor> = samples.iter().map(|s| &s.input).collect();
    Tensor::stack(&inputs)
}

pub fn train(model: Model, dataset: &[Sample], config: &TrainConfig) -> Result<(Model, TrainLog)> {
    train_with_progress(model, dataset, config, |_| {})
}

/// Trains in place of [`train`], reporting each finished epoch to `progress`.
pub fn train_with_progress(
    mut model: Model,
    dataset: &[Sample],
    config: &TrainConfig,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<(Model, TrainLog)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    let has = |label| dataset.iter().any(|s| s.label() == label);
    if !has(BONAFIDE_CLASS) || !has(PA_CLASS) {
        return Err(Error::config("training set must contain both bonafide and PA samples"));
    }
    if let Some(dir) = &config.checkpoint_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut sgd = {
        let params: Vec<&Tensor> = model.parameters().into_iter().map(|(_, t)| t).collect();
        Sgd::new(config.learning_rate, config.momentum, &params)
    };
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    for epoch in 1..=config.epochs {
        let start = Instant::now();
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(config.seed, epoch)));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &dataset[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|s| s.label()).collect();
            let cache = model.forward_batch(&stack_inputs(&batch)?)?;
            let ce = nn::softmax_cross_entropy(cache.logits(), &labels)?;
            if !ce.loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch}, batch {b}"
                )));
            }
            loss_sum += ce.loss * batch.len() as f64;
            correct += ce
                .probs
                .data()
                .chunks_exact(2)
                .zip(&labels)
                .filter(|(p, &l)| usize::from(p[PA_CLASS] > p[BONAFIDE_CLASS]) == l)
                .count();
            let grads = model.backward(&cache, &ce.grad_logits)?;
            sgd.step(model.parameters_mut(), &grads.params);
        }
        let record = EpochRecord {
            epoch,
            mean_loss: loss_sum / dataset.len() as f64,
            train_accuracy: correct as f64 / dataset.len() as f64,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        progress(&record);
        log.epochs.push(record);
        if let Some(dir) = &config.checkpoint_dir {
            let meta = CheckpointMeta { epoch, seed: config.seed };
            if config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 {
                checkpoint::save_checkpoint(&model, meta, dir.join(format!("epoch_{epoch:03}.ckpt")))?;
            }
            if epoch == config.epochs {
                checkpoint::save_checkpoint(&model, meta, dir.join("final.ckpt"))?;
            }
        }
    }
    Ok((model, log))
}

/// One scored sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSample {
    pub id: String,
    pub class: IrisClass,
    pub label: usize,
    pub score: f64,
}

const EVAL_BATCH: usize = 32;

/// Scores every sample in input order; `jobs` worker threads share the batches.
pub fn evaluate_scores(model: &Model, dataset: &[Sample], jobs: usize) -> Result<Vec<ScoredSample>> {
    let s = model.config().input_size;
    if let Some(bad) = dataset.iter().find(|x| x.input.shape() != [1, 1, s, s]) {
        return Err(Error::shape(format!(
            "sample {} has shape {:?}, model expects [1, 1, {s}, {s}]",
            bad.id,
            bad.input.shape()
        )));
    }
    let batches: Vec<&[Sample]> = dataset.chunks(EVAL_BATCH).collect();
    let scored = par::map_ordered(&batches, jobs, |batch| -> Result<Vec<f64>> {
        let refs: Vec<&Sample> = batch.iter().collect();
        model.scores(&stack_inputs(&refs)?)
    });
    let mut out = Vec::with_capacity(dataset.len());
    for (batch, scores) in batches.iter().zip(scored) {
        for (sample, score) in batch.iter().zip(scores?) {
            out.push(ScoredSample {
                id: sample.id.clone(),
                class: sample.class,
                label: sample.label(),
                score,
            });
        }
    }
    Ok(out)
}

pub fn scores_csv(scores: &[ScoredSample]) -> String {
    let mut out = String::from("path_or_seed,class,label,score\n");
    for s in scores {
        writeln!(out, "{},{},{},{}", s.id, s.class, s.label, s.score).unwrap();
    }
    out
}

pub fn write_scores_csv(scores: &[ScoredSample], path: &Path) -> Result<()> {
    fs::write(path, scores_csv(scores)).map_err(|e| Error::io(path, e))
}
