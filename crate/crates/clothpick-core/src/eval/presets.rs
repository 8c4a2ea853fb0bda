//! Experiment presets: reward study, component ablation, planner sweep and
//! the KL-balancing study. Each preset reads its scale from the run config
//! (data.*, train.*, plan.*, eval.*) and writes its own CSV set.

use std::path::{Path, PathBuf};

use crate::config::Config;
use crate::datagen::{generate_dataset, read_dataset, Dataset, MixtureSpec};
use crate::env::ClothEnv;
use crate::error::{Error, Result};
use crate::planner::{CemConfig, MaskSource, RewardHead, RssmPlanner};
use crate::rng::{derive_seed, rng_from_seed};
use crate::rssm::{
    kl_diag_value, Adam, GridSeq, LatentState, ModelConfig, RssmModel, SequenceSource, TrainRun,
    TrainingConfig,
};
use crate::rssm::train::{load_checkpoint_with_state, train};
use rand::Rng;

use super::{evaluate_grid, tier_report, PlannerAgent, TierReport};

/// The preset registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetName {
    RewardStudy,
    Ablation,
    PlannerSweep,
    KlStudy,
}

pub const ALL_PRESETS: [PresetName; 4] = [
    PresetName::RewardStudy,
    PresetName::Ablation,
    PresetName::PlannerSweep,
    PresetName::KlStudy,
];

impl PresetName {
    pub fn parse(s: &str) -> Result<PresetName> {
        match s {
            "reward_study" => Ok(PresetName::RewardStudy),
            "ablation" => Ok(PresetName::Ablation),
            "planner_sweep" => Ok(PresetName::PlannerSweep),
            "kl_study" => Ok(PresetName::KlStudy),
            other => Err(Error::Config(format!("unknown preset `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PresetName::RewardStudy => "reward_study",
            PresetName::Ablation => "ablation",
            PresetName::PlannerSweep => "planner_sweep",
            PresetName::KlStudy => "kl_study",
        }
    }
}

/// Reward targets used during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardVariant {
    /// The shaped reward stored in the dataset.
    Full,
    /// Raw normalised coverage of the next state.
    RawNc,
    /// Coverage delta only.
    DeltaNc,
}

impl RewardVariant {
    pub fn name(&self) -> &'static str {
        match self {
            RewardVariant::Full => "full",
            RewardVariant::RawNc => "raw_nc",
            RewardVariant::DeltaNc => "delta_nc",
        }
    }
}

/// Wraps a dataset, overriding reward targets from the stored NC series.
pub struct RewardOverrideSource<'a> {
    pub inner: &'a Dataset,
    pub variant: RewardVariant,
}

impl SequenceSource for RewardOverrideSource<'_> {
    fn episode_count(&self) -> usize {
        self.inner.episode_count()
    }

    fn frames_per_episode(&self) -> usize {
        self.inner.frames_per_episode()
    }

    fn grid_seq(&self, episode: usize, start: usize, len: usize) -> GridSeq {
        let mut seq = self.inner.grid_seq(episode, start, len);
        if self.variant != RewardVariant::Full {
            let ep = &self.inner.episodes[episode];
            for t in 1..len {
                let idx = start + t;
                seq.rewards[t] = match self.variant {
                    RewardVariant::RawNc => ep.nc[idx] as f64,
                    RewardVariant::DeltaNc => (ep.nc[idx] - ep.nc[idx - 1]) as f64,
                    RewardVariant::Full => unreachable!(),
                };
            }
        }
        seq
    }
}

/// First `count` episodes of a dataset (the small-data ablation).
pub struct SubsetSource<'a> {
    pub inner: &'a Dataset,
    pub count: usize,
}

impl SequenceSource for SubsetSource<'_> {
    fn episode_count(&self) -> usize {
        self.count.min(self.inner.episode_count())
    }

    fn frames_per_episode(&self) -> usize {
        self.inner.frames_per_episode()
    }

    fn grid_seq(&self, episode: usize, start: usize, len: usize) -> GridSeq {
        self.inner.grid_seq(episode, start, len)
    }
}

/// Ablation axes from the component study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationVariant {
    Full,
    NoMask,
    NoKlBalancing,
    NoPriorReward,
    NoAugmentation,
    SmallData,
}

pub const ALL_ABLATIONS: [AblationVariant; 6] = [
    AblationVariant::Full,
    AblationVariant::NoMask,
    AblationVariant::NoKlBalancing,
    AblationVariant::NoPriorReward,
    AblationVariant::NoAugmentation,
    AblationVariant::SmallData,
];

impl AblationVariant {
    pub fn name(&self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::NoMask => "no_mask",
            AblationVariant::NoKlBalancing => "no_kl_balancing",
            AblationVariant::NoPriorReward => "no_prior_reward",
            AblationVariant::NoAugmentation => "no_augmentation",
            AblationVariant::SmallData => "small_data",
        }
    }
}

/// Training config for an ablation variant. `Full` and the eval-only
/// `NoMask` variant leave the configuration untouched.
pub fn ablation_config(base: &Config, variant: AblationVariant) -> Result<Config> {
    let mut cfg = base.clone();
    match variant {
        AblationVariant::Full | AblationVariant::NoMask | AblationVariant::SmallData => {}
        AblationVariant::NoKlBalancing => {
            cfg.set("train.kl_balanced", "false")?;
        }
        AblationVariant::NoPriorReward => {
            cfg.set("train.w_prior_reward", "0.0")?;
        }
        AblationVariant::NoAugmentation => {
            cfg.set("train.augment_rotate", "false")?;
            cfg.set("train.augment_vflip", "false")?;
            cfg.set("train.obs_noise_std", "0.0")?;
        }
    }
    Ok(cfg)
}

/// Generate (or reuse) the preset dataset under `out_dir`.
pub fn ensure_dataset(cfg: &Config, out_dir: &Path, seed: u64) -> Result<(PathBuf, Dataset)> {
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join("dataset.cpds");
    let spec = MixtureSpec::from_config(cfg)?;
    let manifest = generate_dataset(&spec, cfg, seed, &path)?;
    std::fs::write(out_dir.join("dataset_manifest.csv"), manifest.to_csv())?;
    let dataset = read_dataset(&path)?;
    Ok((path, dataset))
}

/// Train a model from a config and source, writing artifacts under `dir`.
pub fn train_variant(
    cfg: &Config,
    source: &dyn SequenceSource,
    dir: &Path,
    seed: u64,
) -> Result<RssmModel> {
    std::fs::create_dir_all(dir)?;
    let model_cfg = ModelConfig::from_config(cfg)?;
    let train_cfg = TrainingConfig::from_config(cfg)?;
    let mut model = RssmModel::init(model_cfg, derive_seed(seed, 1));
    let mut adam = Adam::new(&model);
    cfg.write_snapshot(&dir.join("config.txt"))?;
    let run = TrainRun::new(derive_seed(seed, 2)).with_out_dir(dir);
    train(&mut model, &mut adam, source, &train_cfg, &run, cfg)?;
    Ok(model)
}

/// Evaluate a model with the given mask source over the configured grid.
pub fn eval_model(
    model: &RssmModel,
    cfg: &Config,
    mask_source: MaskSource,
    reward_head: RewardHead,
    seed: u64,
) -> Result<TierReport> {
    let env = ClothEnv::new(cfg)?;
    let threshold = env.obs_config.depth_threshold();
    let cem = CemConfig {
        mask_source,
        ..CemConfig::from_config(cfg)?
    };
    let tiers: Vec<u8> = cfg
        .get_list("eval.tiers")
        .iter()
        .map(|t| t.parse::<u8>().map_err(|_| Error::Config("bad tier".into())))
        .collect::<Result<_>>()?;
    let seeds_per_tier = cfg.get_usize("eval.seeds_per_tier")?;
    let record_steps: Vec<usize> = cfg
        .get_list("eval.record_steps")
        .iter()
        .map(|s| s.parse::<usize>().map_err(|_| Error::Config("bad record step".into())))
        .collect::<Result<_>>()?;

    let traces = evaluate_grid(
        || PlannerAgent::new(RssmPlanner::new(model, cem.clone(), threshold).with_reward_head(reward_head)),
        cfg,
        &tiers,
        seeds_per_tier,
        seed,
    )?;
    Ok(tier_report(&traces, &record_steps))
}

fn write_report(dir: &Path, label: &str, report: &TierReport) -> Result<()> {
    std::fs::write(dir.join(format!("{label}_tier_report.csv")), report.to_csv())?;
    std::fs::write(
        dir.join(format!("{label}_summary.txt")),
        report.to_table(label),
    )?;
    Ok(())
}

fn reward_study(cfg: &Config, out_dir: &Path, seed: u64) -> Result<()> {
    let (_, dataset) = ensure_dataset(cfg, out_dir, derive_seed(seed, 0))?;
    for (i, variant) in [RewardVariant::Full, RewardVariant::RawNc, RewardVariant::DeltaNc]
        .iter()
        .enumerate()
    {
        let dir = out_dir.join(variant.name());
        let source = RewardOverrideSource {
            inner: &dataset,
            variant: *variant,
        };
        let model = train_variant(cfg, &source, &dir, derive_seed(seed, 10 + i as u64))?;
        let report = eval_model(&model, cfg, MaskSource::Environment, RewardHead::Prior, derive_seed(seed, 20 + i as u64))?;
        write_report(out_dir, variant.name(), &report)?;
    }
    Ok(())
}

fn ablation(cfg: &Config, out_dir: &Path, seed: u64) -> Result<()> {
    let (_, dataset) = ensure_dataset(cfg, out_dir, derive_seed(seed, 0))?;
    let mut full_model: Option<RssmModel> = None;
    for (i, variant) in ALL_ABLATIONS.iter().enumerate() {
        let vcfg = ablation_config(cfg, *variant)?;
        let dir = out_dir.join(variant.name());
        let model = match variant {
            AblationVariant::NoMask => match &full_model {
                Some(m) => m.clone(),
                None => {
                    return Err(Error::Contract(
                        "ablation order requires full before no_mask".into(),
                    ))
                }
            },
            AblationVariant::SmallData => {
                let quarter = (dataset.episode_count() / 4).max(1);
                let source = SubsetSource {
                    inner: &dataset,
                    count: quarter,
                };
                train_variant(&vcfg, &source, &dir, derive_seed(seed, 10 + i as u64))?
            }
            _ => train_variant(&vcfg, &dataset, &dir, derive_seed(seed, 10 + i as u64))?,
        };
        let mask = if *variant == AblationVariant::NoMask {
            MaskSource::None
        } else {
            MaskSource::Environment
        };
        let head = if *variant == AblationVariant::NoPriorReward {
            RewardHead::Posterior
        } else {
            RewardHead::Prior
        };
        let report = eval_model(&model, &vcfg, mask, head, derive_seed(seed, 20 + i as u64))?;
        write_report(out_dir, variant.name(), &report)?;
        if *variant == AblationVariant::Full {
            full_model = Some(model);
        }
    }
    Ok(())
}

pub const PLANNER_SWEEP_CSV_HEADER: &str =
    "population,iterations,horizon,tier,step,episodes,nc_mean,ni_mean";

/// The (population, iterations, horizon) grid evaluated by the sweep.
pub fn sweep_combos(base_population: usize, base_iterations: usize) -> Vec<(usize, usize, usize)> {
    vec![
        (base_population, base_iterations, 1),
        (base_population, base_iterations, 2),
        (base_population, base_iterations, 3),
        ((base_population / 4).max(8), base_iterations, 1),
        (base_population, (base_iterations / 4).max(1), 1),
    ]
}

/// Run the planner hyper-parameter sweep on an existing model, returning the
/// CSV rows that were written.
pub fn planner_sweep_on_model(
    model: &RssmModel,
    cfg: &Config,
    out_dir: &Path,
    seed: u64,
) -> Result<Vec<String>> {
    std::fs::create_dir_all(out_dir)?;
    let base = CemConfig::from_config(cfg)?;
    let env = ClothEnv::new(cfg)?;
    let threshold = env.obs_config.depth_threshold();
    let tiers: Vec<u8> = cfg
        .get_list("eval.tiers")
        .iter()
        .map(|t| t.parse::<u8>().unwrap_or(3))
        .collect();
    let seeds_per_tier = cfg.get_usize("eval.seeds_per_tier")?;
    let record_steps: Vec<usize> = cfg
        .get_list("eval.record_steps")
        .iter()
        .filter_map(|s| s.parse::<usize>().ok())
        .collect();

    let mut rows = Vec::new();
    for (population, iterations, horizon) in sweep_combos(base.population, base.iterations) {
        let cem = CemConfig {
            population,
            iterations,
            horizon,
            ..base.clone()
        };
        let traces = evaluate_grid(
            || PlannerAgent::new(RssmPlanner::new(model, cem.clone(), threshold)),
            cfg,
            &tiers,
            seeds_per_tier,
            derive_seed(seed, (population * 31 + iterations * 7 + horizon) as u64),
        )?;
        let report = tier_report(&traces, &record_steps);
        for (tier, step, cell) in &report.cells {
            let tier_label = if *tier == super::ALL_TIERS {
                "all".to_string()
            } else {
                tier.to_string()
            };
            rows.push(format!(
                "{population},{iterations},{horizon},{tier_label},{step},{},{},{}",
                cell.episodes, cell.nc_mean, cell.ni_mean
            ));
        }
    }
    let mut csv = String::from(PLANNER_SWEEP_CSV_HEADER);
    csv.push('\n');
    for row in &rows {
        csv.push_str(row);
        csv.push('\n');
    }
    std::fs::write(out_dir.join("planner_sweep.csv"), csv)?;
    Ok(rows)
}

fn planner_sweep(cfg: &Config, out_dir: &Path, seed: u64) -> Result<()> {
    let (_, dataset) = ensure_dataset(cfg, out_dir, derive_seed(seed, 0))?;
    let model = train_variant(cfg, &dataset, &out_dir.join("model"), derive_seed(seed, 1))?;
    planner_sweep_on_model(&model, cfg, out_dir, derive_seed(seed, 2))?;
    Ok(())
}

pub const KL_STUDY_CSV_HEADER: &str = "checkpoint_step,variant,post_obs_mse,prior_obs_mse,post_reward_mse,prior_reward_mse,post_entropy,prior_entropy,avg_kl";

/// Posterior/prior prediction quality and latent statistics on held-out
/// episodes.
#[derive(Debug, Clone, Copy)]
pub struct ModelEvalMetrics {
    pub post_obs_mse: f64,
    pub prior_obs_mse: f64,
    pub post_reward_mse: f64,
    pub prior_reward_mse: f64,
    pub post_entropy: f64,
    pub prior_entropy: f64,
    pub avg_kl: f64,
}

fn gaussian_entropy(std: &[f64]) -> f64 {
    std.iter()
        .map(|s| 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * s * s).ln())
        .sum()
}

/// Evaluate one model over sampled held-out subsequences.
pub fn model_eval_metrics(
    model: &RssmModel,
    dataset: &Dataset,
    episodes: std::ops::Range<usize>,
    sequences: usize,
    seq_len: usize,
    seed: u64,
) -> Result<ModelEvalMetrics> {
    if episodes.is_empty() {
        return Err(Error::Contract("no held-out episodes".into()));
    }
    let mut rng = rng_from_seed(seed);
    let frames = dataset.frames_per_episode();
    let mut acc = ModelEvalMetrics {
        post_obs_mse: 0.0,
        prior_obs_mse: 0.0,
        post_reward_mse: 0.0,
        prior_reward_mse: 0.0,
        post_entropy: 0.0,
        prior_entropy: 0.0,
        avg_kl: 0.0,
    };
    let mut count = 0usize;
    for s in 0..sequences {
        let episode = rng.gen_range(episodes.clone());
        let start = rng.gen_range(0..=frames - seq_len);
        let seq = dataset.grid_seq(episode, start, seq_len);
        let mut state = LatentState::zero(&model.cfg);
        for t in 0..seq_len {
            let frame = &seq.frames[t];
            let pick = |wanted: &[crate::env::Channel]| -> Result<Vec<f64>> {
                let mut flat = Vec::new();
                for ch in wanted {
                    let idx = seq
                        .channels
                        .iter()
                        .position(|c| c == ch)
                        .ok_or_else(|| Error::Contract(format!("missing channel {}", ch.name())))?;
                    flat.extend_from_slice(&frame[idx]);
                }
                Ok(flat)
            };
            let obs_in = pick(&model.cfg.input_channels)?;
            let target = pick(&model.cfg.output_channels)?;
            let action = seq.actions[t].as_array();
            let reward = seq.rewards[t];

            let noise = model.sample_noise(derive_seed(seed, (s * seq_len + t) as u64));
            let post = model.posterior_step(&state, action, &obs_in, &noise)?;
            let prior = model.prior_step(&state, action, &noise)?;

            let (post_dec, post_rew) = model.decode(&post)?;
            let prior_latent = LatentState {
                h: post.h.clone(),
                ..prior.clone()
            };
            let (prior_dec, _) = model.decode(&prior_latent)?;
            let prior_rew = model.predict_reward_prior(&prior_latent)?;

            let cells = target.len() as f64;
            acc.post_obs_mse += post_dec
                .iter()
                .zip(&target)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / cells;
            acc.prior_obs_mse += prior_dec
                .iter()
                .zip(&target)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / cells;
            acc.post_reward_mse += (post_rew - reward) * (post_rew - reward);
            acc.prior_reward_mse += (prior_rew - reward) * (prior_rew - reward);
            acc.post_entropy += gaussian_entropy(&post.z_std);
            acc.prior_entropy += gaussian_entropy(&prior.z_std);
            acc.avg_kl += kl_diag_value(&post.z_mean, &post.z_std, &prior.z_mean, &prior.z_std);
            count += 1;
            state = post;
        }
    }
    let n = count as f64;
    acc.post_obs_mse /= n;
    acc.prior_obs_mse /= n;
    acc.post_reward_mse /= n;
    acc.prior_reward_mse /= n;
    acc.post_entropy /= n;
    acc.prior_entropy /= n;
    acc.avg_kl /= n;
    if !acc.avg_kl.is_finite() {
        return Err(Error::Numeric {
            what: "held-out avg_kl".into(),
        });
    }
    Ok(acc)
}

fn kl_study(cfg: &Config, out_dir: &Path, seed: u64) -> Result<()> {
    let (_, dataset) = ensure_dataset(cfg, out_dir, derive_seed(seed, 0))?;
    let held_out_start = (dataset.episode_count() * 9) / 10;
    let held_out = held_out_start..dataset.episode_count();
    let train_subset = SubsetSource {
        inner: &dataset,
        count: held_out_start.max(1),
    };

    let mut csv = String::from(KL_STUDY_CSV_HEADER);
    csv.push('\n');
    for (variant, kl_balanced) in [("balanced", true), ("plain", false)] {
        let mut vcfg = cfg.clone();
        vcfg.set("train.kl_balanced", if kl_balanced { "true" } else { "false" })?;
        let dir = out_dir.join(variant);
        train_variant(&vcfg, &train_subset, &dir, derive_seed(seed, 5))?;
        // walk every checkpoint this run produced, in step order
        let mut ckpts: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                p.extension().map_or(false, |x| x == "rssm")
            })
            .collect();
        ckpts.sort();
        for ckpt in ckpts {
            let (model, _, step, _) = load_checkpoint_with_state(&ckpt)?;
            let metrics = model_eval_metrics(
                &model,
                &dataset,
                held_out.clone(),
                8,
                4.min(dataset.frames_per_episode()),
                derive_seed(seed, 6),
            )?;
            csv.push_str(&format!(
                "{step},{variant},{},{},{},{},{},{},{}\n",
                metrics.post_obs_mse,
                metrics.prior_obs_mse,
                metrics.post_reward_mse,
                metrics.prior_reward_mse,
                metrics.post_entropy,
                metrics.prior_entropy,
                metrics.avg_kl
            ));
        }
    }
    std::fs::write(out_dir.join("kl_study.csv"), csv)?;
    Ok(())
}

/// Run a preset end to end.
pub fn run_preset(name: PresetName, cfg: &Config, out_dir: &Path, seed: u64) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    cfg.write_snapshot(&out_dir.join("config.txt"))?;
    match name {
        PresetName::RewardStudy => reward_study(cfg, out_dir, seed),
        PresetName::Ablation => ablation(cfg, out_dir, seed),
        PresetName::PlannerSweep => planner_sweep(cfg, out_dir, seed),
        PresetName::KlStudy => kl_study(cfg, out_dir, seed),
    }
}
