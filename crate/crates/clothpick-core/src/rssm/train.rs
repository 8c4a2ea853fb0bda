//! Offline training loop: subsequence sampling, augmentation, loss,
//! gradient clipping and the adaptive-moment update, with per-step CSV
//! logging and periodic checkpoints.
//!
//! Every random draw derives from (seed, step), so resuming from a
//! checkpoint reproduces an uninterrupted run exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};
use crate::rssm::augment::{augment_batch, AugmentConfig, GridSeq};
use crate::rssm::loss::{rssm_loss_with_grads, KlMode, LossBreakdown, LossConfig, LossWeights, SeqSample};
use crate::rssm::model::RssmModel;
use crate::rssm::tape::{Grads, Tensor};
use crate::rssm::checkpoint::save_model;

/// Anything that can serve length-L grid subsequences for training.
pub trait SequenceSource: Sync {
    fn episode_count(&self) -> usize;
    /// Observations per episode (steps + 1).
    fn frames_per_episode(&self) -> usize;
    /// Subsequence of `len` frames starting at `start`, with the
    /// episode-start convention applied (zero action/reward at the first
    /// frame of the subsequence).
    fn grid_seq(&self, episode: usize, start: usize, len: usize) -> GridSeq;
}

/// Full training hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub alpha: f64,
    pub kl_balanced: bool,
    pub free_nats: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub sequence_length: usize,
    pub grad_clip_norm: f64,
    pub augment: AugmentConfig,
    pub weights: LossWeights,
    pub steps: u64,
    pub checkpoint_every: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            alpha: 0.8,
            kl_balanced: true,
            free_nats: 3.0,
            learning_rate: 3e-4,
            batch_size: 16,
            sequence_length: 10,
            grad_clip_norm: 100.0,
            augment: AugmentConfig::default(),
            weights: LossWeights::default(),
            steps: 5000,
            checkpoint_every: 1000,
        }
    }
}

impl TrainingConfig {
    pub fn from_config(cfg: &Config) -> Result<TrainingConfig> {
        let tc = TrainingConfig {
            alpha: cfg.get_f64("train.alpha")?,
            kl_balanced: cfg.get_bool("train.kl_balanced")?,
            free_nats: cfg.get_f64("train.free_nats")?,
            learning_rate: cfg.get_f64("train.learning_rate")?,
            batch_size: cfg.get_usize("train.batch_size")?,
            sequence_length: cfg.get_usize("train.sequence_length")?,
            grad_clip_norm: cfg.get_f64("train.grad_clip_norm")?,
            augment: AugmentConfig {
                rotate: cfg.get_bool("train.augment_rotate")?,
                vflip: cfg.get_bool("train.augment_vflip")?,
                obs_noise_std: cfg.get_f64("train.obs_noise_std")?,
            },
            weights: LossWeights {
                obs: cfg.get_f64("train.w_obs")?,
                reward: cfg.get_f64("train.w_reward")?,
                kl: cfg.get_f64("train.w_kl")?,
                prior_reward: cfg.get_f64("train.w_prior_reward")?,
            },
            steps: cfg.get_u64("train.steps")?,
            checkpoint_every: cfg.get_u64("train.checkpoint_every")?,
        };
        tc.validate()?;
        Ok(tc)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config("train.alpha must be in [0, 1]".into()));
        }
        if self.sequence_length < 2 {
            return Err(Error::Config("train.sequence_length must be >= 2".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            kl_mode: if self.kl_balanced {
                KlMode::Balanced { alpha: self.alpha }
            } else {
                KlMode::Plain
            },
            free_nats: self.free_nats,
            weights: self.weights,
        }
    }
}

/// Adaptive moment estimation state.
#[derive(Debug, Clone)]
pub struct Adam {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    pub fn new(model: &RssmModel) -> Adam {
        let zeros: Vec<Tensor> = model
            .params
            .iter()
            .map(|(_, t)| Tensor::zeros(t.rows, t.cols))
            .collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One bias-corrected update (`t` counts from 1).
    pub fn apply(&mut self, model: &mut RssmModel, grads: &Grads, lr: f64, t: u64) {
        let bc1 = 1.0 - ADAM_BETA1.powi(t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(t as i32);
        for id in 0..model.params.len() {
            let g = &grads.tensors[id].data;
            let m = &mut self.m[id].data;
            let v = &mut self.v[id].data;
            let p = &mut model.params.get_mut(id).data;
            for i in 0..p.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }

    /// Optimizer tensors for checkpointing, named adam.m.* / adam.v.*.
    pub fn to_named(&self, model: &RssmModel) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (id, (name, _)) in model.params.iter().enumerate() {
            out.push((format!("adam.m.{name}"), self.m[id].clone()));
            out.push((format!("adam.v.{name}"), self.v[id].clone()));
        }
        out
    }

    pub fn from_named(model: &RssmModel, extra: &[(String, Tensor)]) -> Option<Adam> {
        let mut adam = Adam::new(model);
        for (id, (name, _)) in model.params.iter().enumerate() {
            let m = extra.iter().find(|(n, _)| n == &format!("adam.m.{name}"))?;
            let v = extra.iter().find(|(n, _)| n == &format!("adam.v.{name}"))?;
            adam.m[id] = m.1.clone();
            adam.v[id] = v.1.clone();
        }
        Some(adam)
    }
}

/// Per-step training record (mirrors one CSV row).
#[derive(Debug, Clone, Copy)]
pub struct StepLog {
    pub step: u64,
    pub breakdown: LossBreakdown,
}

pub const LOSS_CSV_HEADER: &str = "step,obs_loss,reward_loss,prior_reward_loss,kl_loss,total";

/// Where training writes its artifacts.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    /// First step index (non-zero when resuming).
    pub start_step: u64,
}

impl TrainRun {
    pub fn new(seed: u64) -> TrainRun {
        TrainRun {
            seed,
            out_dir: None,
            start_step: 0,
        }
    }

    pub fn with_out_dir(mut self, dir: &Path) -> TrainRun {
        self.out_dir = Some(dir.to_path_buf());
        self
    }

    pub fn starting_at(mut self, step: u64) -> TrainRun {
        self.start_step = step;
        self
    }
}

/// Assemble one training batch for a given step, deterministically.
fn assemble_batch(
    model: &RssmModel,
    source: &dyn SequenceSource,
    cfg: &TrainingConfig,
    step_seed: u64,
) -> Result<Vec<SeqSample>> {
    let mut rng = rng_from_seed(derive_seed(step_seed, 0));
    let frames = source.frames_per_episode();
    if frames < cfg.sequence_length {
        return Err(Error::Contract(format!(
            "episodes have {frames} frames, need >= sequence_length {}",
            cfg.sequence_length
        )));
    }
    let mut grid_seqs: Vec<GridSeq> = (0..cfg.batch_size)
        .map(|_| {
            let episode = rng.gen_range(0..source.episode_count());
            let start = rng.gen_range(0..=frames - cfg.sequence_length);
            source.grid_seq(episode, start, cfg.sequence_length)
        })
        .collect();

    augment_batch(&mut grid_seqs, &cfg.augment, derive_seed(step_seed, 1))?;

    let mut noise_rng = rng_from_seed(derive_seed(step_seed, 2));
    let z = model.cfg.z_dim;
    grid_seqs
        .into_iter()
        .map(|seq| {
            let mut obs_input = Vec::with_capacity(seq.frames.len());
            let mut obs_target = Vec::with_capacity(seq.frames.len());
            for frame in &seq.frames {
                let pick = |wanted: &[crate::env::Channel]| -> Result<Vec<f64>> {
                    let mut flat = Vec::new();
                    for ch in wanted {
                        let idx = seq
                            .channels
                            .iter()
                            .position(|c| c == ch)
                            .ok_or_else(|| {
                                Error::Contract(format!(
                                    "dataset lacks channel `{}` required by the model",
                                    ch.name()
                                ))
                            })?;
                        flat.extend_from_slice(&frame[idx]);
                    }
                    Ok(flat)
                };
                obs_input.push(pick(&model.cfg.input_channels)?);
                obs_target.push(pick(&model.cfg.output_channels)?);
            }
            let len = seq.frames.len();
            let sample_noise = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<Vec<f64>> {
                (0..len)
                    .map(|_| (0..z).map(|_| rng.sample(StandardNormal)).collect())
                    .collect()
            };
            Ok(SeqSample {
                obs_input,
                obs_target,
                actions: seq.actions.iter().map(|a| a.as_array()).collect(),
                rewards: seq.rewards.clone(),
                post_noise: sample_noise(&mut noise_rng),
                prior_noise: sample_noise(&mut noise_rng),
            })
        })
        .collect()
}

/// Run the training loop, mutating the model in place. Returns per-step logs.
pub fn train(
    model: &mut RssmModel,
    adam: &mut Adam,
    source: &dyn SequenceSource,
    cfg: &TrainingConfig,
    run: &TrainRun,
    snapshot: &Config,
) -> Result<Vec<StepLog>> {
    if source.episode_count() == 0 {
        return Err(Error::Contract("training dataset is empty".into()));
    }
    cfg.validate()?;
    let loss_cfg = cfg.loss_config();

    let mut csv: Option<BufWriter<File>> = match &run.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join("loss.csv");
            let fresh = run.start_step == 0 || !path.exists();
            let file = if fresh {
                let mut f = BufWriter::new(File::create(&path)?);
                writeln!(f, "{LOSS_CSV_HEADER}")?;
                f
            } else {
                BufWriter::new(File::options().append(true).open(&path)?)
            };
            Some(file)
        }
        None => None,
    };

    let mut logs = Vec::with_capacity(cfg.steps.saturating_sub(run.start_step) as usize);
    for step in run.start_step..cfg.steps {
        let step_seed = derive_seed(run.seed, step);
        let batch = assemble_batch(model, source, cfg, step_seed)?;
        let (breakdown, mut grads) = rssm_loss_with_grads(model, &batch, &loss_cfg)?;

        let norm = grads.global_norm();
        if norm > cfg.grad_clip_norm && norm > 0.0 {
            grads.scale(cfg.grad_clip_norm / norm);
        }
        adam.apply(model, &grads, cfg.learning_rate, step + 1);

        if let Some(csv) = csv.as_mut() {
            writeln!(
                csv,
                "{},{},{},{},{},{}",
                step,
                breakdown.obs_loss,
                breakdown.reward_loss,
                breakdown.prior_reward_loss,
                breakdown.kl_loss,
                breakdown.total
            )?;
        }
        logs.push(StepLog { step, breakdown });

        if let Some(dir) = &run.out_dir {
            let finished = step + 1 == cfg.steps;
            if finished || (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) {
                let name = if finished {
                    "model_final.rssm".to_string()
                } else {
                    format!("model_step_{:07}.rssm", step + 1)
                };
                save_checkpoint_with_state(&dir.join(name), model, adam, snapshot, step + 1)?;
            }
        }
    }
    if let Some(csv) = csv.as_mut() {
        csv.flush()?;
    }
    Ok(logs)
}

/// Model + optimizer + step counter in one checkpoint.
pub fn save_checkpoint_with_state(
    path: &Path,
    model: &RssmModel,
    adam: &Adam,
    snapshot: &Config,
    step: u64,
) -> Result<()> {
    let mut extra = adam.to_named(model);
    extra.push(("train.step".to_string(), Tensor::vector(vec![step as f64])));
    save_model(path, model, snapshot, &extra)
}

/// Restore (model, adam, step, config) from a checkpoint.
pub fn load_checkpoint_with_state(path: &Path) -> Result<(RssmModel, Adam, u64, Config)> {
    let (model, config, extra) = crate::rssm::checkpoint::load_model(path)?;
    let adam = Adam::from_named(&model, &extra).unwrap_or_else(|| Adam::new(&model));
    let step = extra
        .iter()
        .find(|(n, _)| n == "train.step")
        .map(|(_, t)| t.data[0] as u64)
        .unwrap_or(0);
    Ok((model, adam, step, config))
}

#[cfg(test)]
mod tests;
