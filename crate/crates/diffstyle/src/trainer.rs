//! Training loop: deterministic batching, AdamW, warmup, gradient clipping,
//! checkpointing and resume.
//!
//! Every source of randomness is a named stream from [`derive_rng`]:
//! `"shuffle"` indexed by epoch orders the training data, `"batch"` indexed
//! by step draws timesteps and noise, `"drop"` indexed by step drives
//! dropout, and `"valid"` (index 0) fixes the validation corruption so
//! validation losses are comparable across evaluations. Because streams are
//! derived from `(seed, name, index)` rather than drawn from one sequential
//! generator, a resumed run consumes exactly the randomness the
//! uninterrupted run would have, and reproduces it bitwise.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::corpus::ConditionedPair;
use crate::denoiser::{
    loss_and_gradients, DenoiserConfig, DenoiserError, DenoiserParams, DiffusionBatch,
};
use crate::diffusion::NoiseSchedule;
use crate::rng::derive_rng;
use crate::scalar::Scalar;
use crate::tokenizer::{TokenizerError, Vocabulary, PAD_ID};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Denoiser(#[from] DenoiserError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Encode(#[from] TokenizerError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("non-finite value in gradient tensor {tensor} at step {step}")]
    NonFinite { tensor: String, step: usize },
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("bad train config: {0}")]
    BadConfig(String),
}

/// Id-encoded dataset: one row per pair, padded to fixed lengths.
#[derive(Debug, Clone)]
pub struct EncodedDataset {
    pub cond: Array2<u32>,
    pub target: Array2<u32>,
}

impl EncodedDataset {
    /// Encode conditioned pairs with a vocabulary. Conditions are padded to
    /// `max_cond_len`, targets to `max_target_len`; both get a closing `EOS`.
    pub fn encode(
        pairs: &[ConditionedPair],
        vocab: &Vocabulary,
        max_cond_len: usize,
        max_target_len: usize,
    ) -> Result<Self, TokenizerError> {
        let n = pairs.len();
        let mut cond = Array2::from_elem((n, max_cond_len), PAD_ID);
        let mut target = Array2::from_elem((n, max_target_len), PAD_ID);
        for (i, pair) in pairs.iter().enumerate() {
            let c = vocab.encode(&pair.condition, max_cond_len, true)?;
            let t = vocab.encode(&pair.target, max_target_len, true)?;
            for (j, id) in c.into_iter().enumerate() {
                cond[[i, j]] = id;
            }
            for (j, id) in t.into_iter().enumerate() {
                target[[i, j]] = id;
            }
        }
        Ok(EncodedDataset { cond, target })
    }

    pub fn len(&self) -> usize {
        self.cond.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Optimization hyperparameters and loop control.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    /// Linear warmup length in steps; 0 disables warmup.
    pub warmup: usize,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub clip: f64,
    /// Decoupled weight decay coefficient.
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    /// Periodic checkpoint interval in steps; 0 writes only the final one.
    pub ckpt_every: usize,
    /// Validation interval in steps; 0 disables validation.
    pub valid_every: usize,
    /// Stop as soon as a step's training loss falls to this value or below;
    /// 0 disables early stopping.
    pub target_loss: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            warmup: 500,
            clip: 1.0,
            weight_decay: 0.0,
            batch_size: 32,
            max_steps: 10_000,
            ckpt_every: 0,
            valid_every: 0,
            target_loss: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Reject unusable hyperparameters (non-positive or non-finite knobs).
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(TrainError::BadConfig(format!("lr {} must be positive", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(TrainError::BadConfig("batch_size must be nonzero".into()));
        }
        if self.clip < 0.0 || self.weight_decay < 0.0 || self.target_loss < 0.0 {
            return Err(TrainError::BadConfig(
                "clip, weight_decay and target_loss must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Scale all gradients so their global L2 norm is at most `clip`. The norm
/// is accumulated in f64 regardless of element type. Returns the pre-clip
/// norm; `clip = 0` disables scaling.
pub(crate) fn clip_gradients<F: Scalar>(grads: &mut DenoiserParams<F>, clip: f64) -> f64 {
    let mut sumsq = 0.0f64;
    for (_, t) in grads.tensors() {
        for v in t.as_slice() {
            let x = v.into_f64();
            sumsq += x * x;
        }
    }
    let norm = sumsq.sqrt();
    if clip > 0.0 && norm > clip {
        let scale = F::from_f64(clip / norm);
        for (_, mut t) in grads.tensors_mut() {
            for v in t.as_slice_mut() {
                *v = *v * scale;
            }
        }
    }
    norm
}

/// One fitted run's outcome.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub steps_run: usize,
    pub final_step: usize,
    pub final_train_loss: Option<f64>,
    /// `(step, loss)` of the best validation evaluation, if any ran.
    pub best_valid: Option<(usize, f64)>,
    pub stopped_early: bool,
    /// `(step, train_loss, valid_loss)` per step, in order.
    pub history: Vec<(usize, f64, Option<f64>)>,
}

/// Model parameters plus optimizer state and the step counter — everything
/// that changes during training, and exactly what a checkpoint captures.
pub struct Trainer<F> {
    pub params: DenoiserParams<F>,
    m: DenoiserParams<F>,
    v: DenoiserParams<F>,
    step: usize,
    dcfg: DenoiserConfig,
    schedule: NoiseSchedule,
    cfg: TrainConfig,
}

impl<F: Scalar> Trainer<F> {
    pub fn new(
        params: DenoiserParams<F>,
        dcfg: DenoiserConfig,
        schedule: NoiseSchedule,
        cfg: TrainConfig,
    ) -> Result<Self, TrainError> {
        cfg.validate()?;
        dcfg.validate()?;
        let vocab = params.vocab_size();
        Ok(Trainer {
            m: DenoiserParams::zeros(&dcfg, vocab)?,
            v: DenoiserParams::zeros(&dcfg, vocab)?,
            params,
            step: 0,
            dcfg,
            schedule,
            cfg,
        })
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn denoiser_config(&self) -> &DenoiserConfig {
        &self.dcfg
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.cfg.batch_size)
    }

    /// Deterministically assemble the batch for a given (1-based) step:
    /// the epoch's shuffled order partitioned into consecutive batches, with
    /// timesteps and noise from the step's own stream. The final batch of an
    /// epoch may be short.
    pub fn make_batch(&self, data: &EncodedDataset, step: usize) -> DiffusionBatch<F> {
        let n = data.len();
        let spe = self.steps_per_epoch(n);
        let epoch = (step - 1) / spe;
        let slot = (step - 1) % spe;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut derive_rng(self.cfg.seed, "shuffle", epoch as u64));
        let lo = slot * self.cfg.batch_size;
        let hi = ((slot + 1) * self.cfg.batch_size).min(n);
        let picks = &order[lo..hi];
        let b = picks.len();
        let (ls, lt, d) = (
            self.dcfg.max_cond_len,
            self.dcfg.max_target_len,
            self.dcfg.model_dim,
        );
        let mut cond = Array2::from_elem((b, ls), PAD_ID);
        let mut target = Array2::from_elem((b, lt), PAD_ID);
        for (row, &idx) in picks.iter().enumerate() {
            cond.row_mut(row).assign(&data.cond.row(idx));
            target.row_mut(row).assign(&data.target.row(idx));
        }
        let mut rng = derive_rng(self.cfg.seed, "batch", step as u64);
        let t: Vec<usize> = (0..b)
            .map(|_| rng.random_range(1..=self.schedule.steps()))
            .collect();
        let noise = Array3::from_shape_fn((b, lt, d), |_| F::standard_normal(&mut rng));
        DiffusionBatch {
            cond_ids: cond,
            target_ids: target,
            t,
            noise,
        }
    }

    /// Clip, schedule the learning rate, and apply one AdamW update. `grads`
    /// is consumed conceptually (mutated by clipping). Advances the step
    /// counter; the bias-correction exponent is the post-increment step.
    pub fn apply_update(&mut self, grads: &mut DenoiserParams<F>) -> Result<(), TrainError> {
        let step = self.step + 1;
        for (name, t) in grads.tensors() {
            if t.as_slice().iter().any(|v| !v.into_f64().is_finite()) {
                return Err(TrainError::NonFinite {
                    tensor: name,
                    step,
                });
            }
        }
        clip_gradients(grads, self.cfg.clip);
        let lr = if self.cfg.warmup > 0 && step < self.cfg.warmup {
            self.cfg.lr * step as f64 / self.cfg.warmup as f64
        } else {
            self.cfg.lr
        };
        let bc1 = 1.0 - ADAM_BETA1.powi(step as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(step as i32);
        let b1 = F::from_f64(ADAM_BETA1);
        let b2 = F::from_f64(ADAM_BETA2);
        let one_m_b1 = F::from_f64(1.0 - ADAM_BETA1);
        let one_m_b2 = F::from_f64(1.0 - ADAM_BETA2);
        let inv_bc1 = F::from_f64(1.0 / bc1);
        let inv_bc2 = F::from_f64(1.0 / bc2);
        let eps = F::from_f64(ADAM_EPS);
        let lr_f = F::from_f64(lr);
        let decay = F::from_f64(lr * self.cfg.weight_decay);
        let mut pts = self.params.tensors_mut();
        let mut mts = self.m.tensors_mut();
        let mut vts = self.v.tensors_mut();
        let gts = grads.tensors();
        for (((pt, mt), vt), gt) in pts
            .iter_mut()
            .zip(mts.iter_mut())
            .zip(vts.iter_mut())
            .zip(gts.iter())
        {
            debug_assert_eq!(pt.0, gt.0);
            let p = pt.1.as_slice_mut();
            let m = mt.1.as_slice_mut();
            let v = vt.1.as_slice_mut();
            let g = gt.1.as_slice();
            for i in 0..p.len() {
                m[i] = b1 * m[i] + one_m_b1 * g[i];
                v[i] = b2 * v[i] + one_m_b2 * g[i] * g[i];
                let mhat = m[i] * inv_bc1;
                let vhat = v[i] * inv_bc2;
                p[i] = p[i] - lr_f * mhat / (vhat.sqrt() + eps) - decay * p[i];
            }
        }
        self.step = step;
        Ok(())
    }

    /// One full training step at the trainer's current position. Returns the
    /// (pre-update) training loss of the batch.
    pub fn train_step(&mut self, data: &EncodedDataset) -> Result<f64, TrainError> {
        if data.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let step = self.step + 1;
        let batch = self.make_batch(data, step);
        let mut drop_rng = derive_rng(self.cfg.seed, "drop", step as u64);
        let dropout = if self.dcfg.dropout > 0.0 {
            Some(&mut drop_rng)
        } else {
            None
        };
        let (loss, mut grads) =
            loss_and_gradients(&self.params, &self.dcfg, &self.schedule, &batch, dropout)?;
        self.apply_update(&mut grads)?;
        Ok(loss)
    }

    /// Evaluation-mode loss over a whole dataset with corruption drawn from
    /// the `"valid"` stream, identical on every call — losses from different
    /// points of the run are directly comparable.
    pub fn valid_loss(&self, data: &EncodedDataset) -> Result<f64, TrainError> {
        if data.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let mut rng = derive_rng(self.cfg.seed, "valid", 0);
        let n = data.len();
        let (lt, d) = (self.dcfg.max_target_len, self.dcfg.model_dim);
        let mut total = 0.0f64;
        let mut lo = 0usize;
        while lo < n {
            let hi = (lo + self.cfg.batch_size).min(n);
            let b = hi - lo;
            let t: Vec<usize> = (0..b)
                .map(|_| rng.random_range(1..=self.schedule.steps()))
                .collect();
            let noise = Array3::from_shape_fn((b, lt, d), |_| F::standard_normal(&mut rng));
            let batch = DiffusionBatch {
                cond_ids: data.cond.slice(ndarray::s![lo..hi, ..]).to_owned(),
                target_ids: data.target.slice(ndarray::s![lo..hi, ..]).to_owned(),
                t,
                noise,
            };
            let loss = crate::denoiser::loss(&self.params, &self.dcfg, &self.schedule, &batch)?;
            total += loss * b as f64;
            lo = hi;
        }
        Ok(total / n as f64)
    }

    /// Save parameters, optimizer moments and the step counter.
    pub fn save_checkpoint(&self, stem: &Path) -> Result<(), TrainError> {
        let mut ck = Checkpoint::new();
        ck.set_meta("step", self.step)?;
        ck.set_meta("seed", self.cfg.seed)?;
        ck.set_meta("schedule_steps", self.schedule.steps())?;
        ck.add_params("", &self.params)?;
        ck.add_params("opt.m.", &self.m)?;
        ck.add_params("opt.v.", &self.v)?;
        ck.save(stem)?;
        Ok(())
    }

    /// Rebuild a trainer from a checkpoint written by
    /// [`save_checkpoint`](Self::save_checkpoint). Continuing a resumed run
    /// reproduces the uninterrupted run bitwise.
    pub fn resume(
        stem: &Path,
        vocab_size: usize,
        dcfg: DenoiserConfig,
        schedule: NoiseSchedule,
        cfg: TrainConfig,
    ) -> Result<Self, TrainError> {
        let ck = Checkpoint::load(stem)?;
        let mut trainer = Trainer::new(
            DenoiserParams::zeros(&dcfg, vocab_size)?,
            dcfg,
            schedule,
            cfg,
        )?;
        ck.load_params_into("", &mut trainer.params)?;
        ck.load_params_into("opt.m.", &mut trainer.m)?;
        ck.load_params_into("opt.v.", &mut trainer.v)?;
        trainer.step = ck.meta_parsed("step")?;
        Ok(trainer)
    }

    /// Run the loop up to `max_steps`, writing checkpoints and `loss.csv`
    /// under `out_dir`. `ckpt-final` is always written (for `max_steps = 0`
    /// it holds the untouched initial state); `ckpt-best` tracks the lowest
    /// validation loss; `ckpt-<step>` appears every `ckpt_every` steps.
    pub fn fit(
        &mut self,
        train: &EncodedDataset,
        valid: Option<&EncodedDataset>,
        out_dir: &Path,
    ) -> Result<FitReport, TrainError> {
        if train.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        fs::create_dir_all(out_dir).map_err(|source| TrainError::Io {
            path: out_dir.to_path_buf(),
            source,
        })?;
        let start = self.step;
        let mut history = Vec::new();
        let mut best_valid: Option<(usize, f64)> = None;
        let mut stopped_early = false;
        let mut last_loss = None;
        while self.step < self.cfg.max_steps {
            let loss = self.train_step(train)?;
            last_loss = Some(loss);
            let step = self.step;
            let mut vloss = None;
            let is_last = step == self.cfg.max_steps
                || (self.cfg.target_loss > 0.0 && loss <= self.cfg.target_loss);
            if let Some(vdata) = valid {
                if self.cfg.valid_every > 0 && (step % self.cfg.valid_every == 0 || is_last) {
                    let vl = self.valid_loss(vdata)?;
                    vloss = Some(vl);
                    if best_valid.map_or(true, |(_, best)| vl < best) {
                        best_valid = Some((step, vl));
                        self.save_checkpoint(&out_dir.join("ckpt-best"))?;
                    }
                }
            }
            history.push((step, loss, vloss));
            if self.cfg.ckpt_every > 0 && step % self.cfg.ckpt_every == 0 {
                self.save_checkpoint(&out_dir.join(format!("ckpt-{step}")))?;
            }
            if self.cfg.target_loss > 0.0 && loss <= self.cfg.target_loss {
                stopped_early = true;
                break;
            }
        }
        self.save_checkpoint(&out_dir.join("ckpt-final"))?;
        let mut csv = String::from("step,train_loss,valid_loss\n");
        for (step, tr, va) in &history {
            match va {
                Some(v) => writeln!(csv, "{step},{tr},{v}").unwrap(),
                None => writeln!(csv, "{step},{tr},").unwrap(),
            }
        }
        let csv_path = out_dir.join("loss.csv");
        fs::write(&csv_path, csv).map_err(|source| TrainError::Io {
            path: csv_path,
            source,
        })?;
        Ok(FitReport {
            steps_run: self.step - start,
            final_step: self.step,
            final_train_loss: last_loss,
            best_valid,
            stopped_early,
            history,
        })
    }
}
