//! Scripted data-collection policies and the offline dataset generator.
//!
//! The main block mixes purely random, corner-biased, oracle flattening,
//! oracle folding, noisy expert and mixed policies over crumpled starts;
//! a second block runs flattening/small-drag policies from highly flattened
//! initial states. Episode counts per policy follow largest-remainder
//! apportionment of the configured weights, recorded in a manifest.

pub mod format;

use rand::Rng;
use rayon::prelude::*;

use crate::config::Config;
use crate::env::{compute_reward, ClothEnv, PickPlaceAction};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};
use crate::sim::PickOutcome;

pub use format::{read_dataset, write_dataset, Dataset, DatasetHeader, DatasetWriter, EpisodeRecord};

/// Scripted policy families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyKind {
    PureRandom,
    CornerBiased,
    OracleFlatten,
    OracleFold,
    NoisyExpert,
    SmallDrag,
    Mix,
}

pub const ALL_POLICY_KINDS: [PolicyKind; 7] = [
    PolicyKind::PureRandom,
    PolicyKind::CornerBiased,
    PolicyKind::OracleFlatten,
    PolicyKind::OracleFold,
    PolicyKind::NoisyExpert,
    PolicyKind::SmallDrag,
    PolicyKind::Mix,
];

impl PolicyKind {
    pub fn code(&self) -> u8 {
        match self {
            PolicyKind::PureRandom => 0,
            PolicyKind::CornerBiased => 1,
            PolicyKind::OracleFlatten => 2,
            PolicyKind::OracleFold => 3,
            PolicyKind::NoisyExpert => 4,
            PolicyKind::SmallDrag => 5,
            PolicyKind::Mix => 6,
        }
    }

    pub fn from_code(code: u8) -> Result<PolicyKind> {
        ALL_POLICY_KINDS
            .iter()
            .find(|k| k.code() == code)
            .copied()
            .ok_or_else(|| Error::Format(format!("unknown policy code {code}")))
    }

    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::PureRandom => "pure_random",
            PolicyKind::CornerBiased => "corner_biased",
            PolicyKind::OracleFlatten => "oracle_flatten",
            PolicyKind::OracleFold => "oracle_fold",
            PolicyKind::NoisyExpert => "noisy_expert",
            PolicyKind::SmallDrag => "small_drag",
            PolicyKind::Mix => "mix",
        }
    }
}

/// Pick uniformly in the workspace, place uniformly.
pub fn pure_random_policy(seed: u64) -> PickPlaceAction {
    let mut rng = rng_from_seed(seed);
    PickPlaceAction::new(
        rng.gen_range(-1.0..=1.0),
        rng.gen_range(-1.0..=1.0),
        rng.gen_range(-1.0..=1.0),
        rng.gen_range(-1.0..=1.0),
    )
}

/// Pick near a random true corner particle (Gaussian jitter, std 0.05),
/// place uniformly.
pub fn corner_biased_policy(env: &ClothEnv, seed: u64) -> Result<PickPlaceAction> {
    let mut rng = rng_from_seed(seed);
    let state = env.cloth_state()?;
    let corners = state.corner_indices();
    let corner = state.positions[corners[rng.gen_range(0..4)]];
    let jx: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal) * 0.05;
    let jy: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal) * 0.05;
    Ok(PickPlaceAction::new(
        (corner[0] + jx).clamp(-1.0, 1.0),
        (corner[1] + jy).clamp(-1.0, 1.0),
        rng.gen_range(-1.0..=1.0),
        rng.gen_range(-1.0..=1.0),
    ))
}

/// Ground-truth flattening expert: grab the corner particle farthest from
/// its flat-pose target (ties by lowest index), place it on that target.
pub fn oracle_flatten_policy(env: &ClothEnv, _seed: u64) -> Result<PickPlaceAction> {
    let state = env.cloth_state()?;
    let targets = env.flat_targets()?;
    let mut best = (0usize, f64::NEG_INFINITY);
    for idx in state.corner_indices() {
        let p = state.positions[idx];
        let t = targets[idx];
        let d = ((p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2)).sqrt();
        if d > best.1 {
            best = (idx, d);
        }
    }
    let p = state.positions[best.0];
    let t = targets[best.0];
    Ok(PickPlaceAction::new(
        p[0].clamp(-1.0, 1.0),
        p[1].clamp(-1.0, 1.0),
        t[0].clamp(-1.0, 1.0),
        t[1].clamp(-1.0, 1.0),
    ))
}

/// Folding policies: expert (corner onto the opposite corner or centroid),
/// noisy expert, and random-corner variants, chosen by seed.
pub fn fold_policy(env: &ClothEnv, seed: u64) -> Result<PickPlaceAction> {
    let mut rng = rng_from_seed(seed);
    let state = env.cloth_state()?;
    let corners = state.corner_indices();
    let variant = rng.gen_range(0..3u8); // 0 expert, 1 noisy, 2 random
    let ci = rng.gen_range(0..4usize);
    let pick_idx = corners[ci];
    let opposite = corners[3 - ci];
    let pick = state.positions[pick_idx];
    let target = if rng.gen_bool(0.5) {
        let p = state.positions[opposite];
        [p[0], p[1]]
    } else {
        state.centroid_xy()
    };
    let (mut px, mut py) = (pick[0], pick[1]);
    let (mut tx, mut ty) = (target[0], target[1]);
    match variant {
        1 => {
            px += rng.gen_range(-0.1..=0.1);
            py += rng.gen_range(-0.1..=0.1);
        }
        2 => {
            let other = corners[rng.gen_range(0..4usize)];
            let p = state.positions[other];
            px = p[0] + rng.gen_range(-0.1..=0.1);
            py = p[1] + rng.gen_range(-0.1..=0.1);
            tx += rng.gen_range(-0.2..=0.2);
            ty += rng.gen_range(-0.2..=0.2);
        }
        _ => {}
    }
    Ok(PickPlaceAction::new(
        px.clamp(-1.0, 1.0),
        py.clamp(-1.0, 1.0),
        tx.clamp(-1.0, 1.0),
        ty.clamp(-1.0, 1.0),
    ))
}

/// Flattening expert with the pick perturbed by up to 5% of the action span
/// (0.1 units) per axis.
pub fn noisy_expert_policy(env: &ClothEnv, seed: u64) -> Result<PickPlaceAction> {
    let mut rng = rng_from_seed(seed);
    let expert = oracle_flatten_policy(env, seed)?;
    Ok(PickPlaceAction::new(
        (expert.x_pick + rng.gen_range(-0.1..=0.1)).clamp(-1.0, 1.0),
        (expert.y_pick + rng.gen_range(-0.1..=0.1)).clamp(-1.0, 1.0),
        expert.x_place,
        expert.y_place,
    ))
}

/// Small drags on the visible cloth: pick uniformly over mask-positive
/// cells, place within a 0.1 box around the pick.
pub fn small_drag_policy(env: &ClothEnv, seed: u64) -> Result<PickPlaceAction> {
    let mut rng = rng_from_seed(seed);
    let mask = env.current_mask()?;
    let cells = mask.positive_cells();
    if cells.is_empty() {
        return Err(Error::Generation("cloth mask is empty".into()));
    }
    let cell = cells[rng.gen_range(0..cells.len())];
    let (cx, cy) = mask.cell_center(cell);
    let half = 1.0 / mask.resolution as f64;
    let px = (cx + rng.gen_range(-half..half)).clamp(-1.0, 1.0);
    let py = (cy + rng.gen_range(-half..half)).clamp(-1.0, 1.0);
    let dx = rng.gen_range(-0.1..=0.1);
    let dy = rng.gen_range(-0.1..=0.1);
    Ok(PickPlaceAction::new(
        px,
        py,
        (px + dx).clamp(-1.0, 1.0),
        (py + dy).clamp(-1.0, 1.0),
    ))
}

/// Uniform per-step choice among the other policy kinds.
pub fn mix_policy(env: &ClothEnv, seed: u64) -> Result<PickPlaceAction> {
    let mut rng = rng_from_seed(seed);
    let kinds = [
        PolicyKind::PureRandom,
        PolicyKind::CornerBiased,
        PolicyKind::OracleFlatten,
        PolicyKind::OracleFold,
        PolicyKind::NoisyExpert,
        PolicyKind::SmallDrag,
    ];
    let choice = kinds[rng.gen_range(0..kinds.len())];
    policy_action(choice, env, derive_seed(seed, 1))
}

/// Dispatch a policy kind to its action function.
pub fn policy_action(kind: PolicyKind, env: &ClothEnv, seed: u64) -> Result<PickPlaceAction> {
    match kind {
        PolicyKind::PureRandom => Ok(pure_random_policy(seed)),
        PolicyKind::CornerBiased => corner_biased_policy(env, seed),
        PolicyKind::OracleFlatten => oracle_flatten_policy(env, seed),
        PolicyKind::OracleFold => fold_policy(env, seed),
        PolicyKind::NoisyExpert => noisy_expert_policy(env, seed),
        PolicyKind::SmallDrag => small_drag_policy(env, seed),
        PolicyKind::Mix => mix_policy(env, seed),
    }
}

/// Episode counts and policy weights for both dataset blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    pub main_episodes: usize,
    pub main_weights: Vec<(PolicyKind, f64)>,
    pub high_coverage_episodes: usize,
    pub high_weights: Vec<(PolicyKind, f64)>,
    pub high_coverage_floor: f64,
}

impl MixtureSpec {
    pub fn from_config(cfg: &Config) -> Result<MixtureSpec> {
        let spec = MixtureSpec {
            main_episodes: cfg.get_usize("data.main_episodes")?,
            main_weights: vec![
                (PolicyKind::PureRandom, cfg.get_f64("data.w_pure_random")?),
                (PolicyKind::CornerBiased, cfg.get_f64("data.w_corner_biased")?),
                (PolicyKind::OracleFlatten, cfg.get_f64("data.w_oracle_flatten")?),
                (PolicyKind::OracleFold, cfg.get_f64("data.w_oracle_fold")?),
                (PolicyKind::NoisyExpert, cfg.get_f64("data.w_noisy_expert")?),
                (PolicyKind::Mix, cfg.get_f64("data.w_mix")?),
            ],
            high_coverage_episodes: cfg.get_usize("data.high_coverage_episodes")?,
            high_weights: vec![
                (PolicyKind::OracleFlatten, cfg.get_f64("data.high_w_expert")?),
                (PolicyKind::NoisyExpert, cfg.get_f64("data.high_w_noisy_expert")?),
                (PolicyKind::SmallDrag, cfg.get_f64("data.high_w_small_drag")?),
            ],
            high_coverage_floor: cfg.get_f64("data.high_coverage_floor")?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for (label, weights) in [("main", &self.main_weights), ("high", &self.high_weights)] {
            let sum: f64 = weights.iter().map(|(_, w)| w).sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "{label} policy weights sum to {sum}, expected 1"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.high_coverage_floor) {
            return Err(Error::Config("high_coverage_floor must be in (0,1)".into()));
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `total` episodes over weights.
pub fn apportion(total: usize, weights: &[(PolicyKind, f64)]) -> Vec<(PolicyKind, usize)> {
    let mut counts: Vec<(PolicyKind, usize, f64)> = weights
        .iter()
        .map(|(k, w)| {
            let exact = w * total as f64;
            (*k, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = counts.iter().map(|(_, c, _)| c).sum();
    let remainders: Vec<f64> = counts.iter().map(|(_, _, r)| *r).collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        remainders[b]
            .partial_cmp(&remainders[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    for i in 0..total.saturating_sub(assigned) {
        counts[order[i % order.len()]].1 += 1;
    }
    counts.into_iter().map(|(k, c, _)| (k, c)).collect()
}

/// Per-kind episode counts actually generated.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub counts: Vec<(PolicyKind, usize)>,
}

impl Manifest {
    pub fn count(&self, kind: PolicyKind) -> usize {
        self.counts
            .iter()
            .find(|(k, _)| *k == kind)
            .map(|(_, c)| *c)
            .unwrap_or(0)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,count\n");
        for (k, c) in &self.counts {
            out.push_str(&format!("{},{}\n", k.name(), c));
        }
        out
    }
}

fn roll_episode(
    env: &mut ClothEnv,
    kind: PolicyKind,
    episode_seed: u64,
    high_floor: Option<f64>,
) -> Result<EpisodeRecord> {
    match high_floor {
        Some(floor) => env.reset_with_floor(episode_seed, floor)?,
        None => env.reset(episode_seed, None)?,
    };
    let steps = env.max_steps;
    let c_flat = env.c_flat()?;
    let mut nc: Vec<f32> = vec![env.nc()? as f32];
    let mut mispick = Vec::with_capacity(steps);
    let mut actions = Vec::with_capacity(steps);
    let mut rewards = Vec::with_capacity(steps);
    let mut observations = Vec::with_capacity(steps + 1);
    let to_f32 = |obs: &crate::env::Observation| -> Vec<Vec<f32>> {
        obs.data
            .iter()
            .map(|g| g.iter().map(|v| *v as f32).collect())
            .collect()
    };
    observations.push(to_f32(&env.render()?));

    for step in 0..steps {
        let action = policy_action(kind, env, derive_seed(episode_seed, 100 + step as u64))?;
        let action = action.clamped();
        let (obs, _, info) = env.step(action)?;
        let a32 = [
            action.x_pick as f32,
            action.y_pick as f32,
            action.x_place as f32,
            action.y_place as f32,
        ];
        let nc32 = info.nc_after as f32;
        // the stored reward is recomputed from the f32-rounded stored values
        // so replaying the file reproduces it exactly
        let outcome = PickOutcome {
            grasped: !info.mispick,
            grasped_particle: if info.mispick { None } else { Some(0) },
            pick_point: [0.0; 2],
            place_point: [0.0; 2],
        };
        let action64 = PickPlaceAction::new(
            a32[0] as f64,
            a32[1] as f64,
            a32[2] as f64,
            a32[3] as f64,
        );
        let reward32 = compute_reward(
            *nc.last().unwrap() as f64,
            nc32 as f64,
            &action64,
            &outcome,
            &env.reward_config,
        ) as f32;

        nc.push(nc32);
        mispick.push(info.mispick);
        actions.push(a32);
        rewards.push(reward32);
        observations.push(to_f32(&obs));
    }

    Ok(EpisodeRecord {
        policy: kind,
        tier: env.tier()?,
        c_flat: c_flat as u32,
        initial_nc: env.nc_initial()? as f32,
        nc,
        mispick,
        actions,
        rewards,
        observations,
    })
}

/// Generate the full dataset, streaming episodes to disk in chunks.
/// Deterministic for a given (spec, config, seed) regardless of worker count.
pub fn generate_dataset(
    spec: &MixtureSpec,
    cfg: &Config,
    seed: u64,
    out_path: &std::path::Path,
) -> Result<Manifest> {
    spec.validate()?;
    let probe_env = ClothEnv::new(cfg)?;
    let steps = probe_env.max_steps;
    let total = spec.main_episodes + spec.high_coverage_episodes;

    // per-episode (kind, floor) assignments in canonical order
    let main_counts = apportion(spec.main_episodes, &spec.main_weights);
    let high_counts = apportion(spec.high_coverage_episodes, &spec.high_weights);
    let mut assignment: Vec<(PolicyKind, Option<f64>)> = Vec::with_capacity(total);
    for (kind, count) in &main_counts {
        assignment.extend(std::iter::repeat((*kind, None)).take(*count));
    }
    for (kind, count) in &high_counts {
        assignment.extend(
            std::iter::repeat((*kind, Some(spec.high_coverage_floor))).take(*count),
        );
    }

    let header = DatasetHeader {
        episode_count: total as u32,
        steps_per_episode: steps as u32,
        resolution: probe_env.obs_config.resolution as u32,
        channels: probe_env.obs_config.channels.clone(),
        seed,
    };
    let mut writer = DatasetWriter::create(out_path, header)?;

    const CHUNK: usize = 16;
    for (chunk_idx, chunk) in assignment.chunks(CHUNK).enumerate() {
        let base = chunk_idx * CHUNK;
        let episodes: Vec<Result<EpisodeRecord>> = chunk
            .par_iter()
            .enumerate()
            .map(|(offset, (kind, floor))| {
                let index = base + offset;
                let mut env = ClothEnv::new(cfg)?;
                roll_episode(&mut env, *kind, derive_seed(seed, index as u64), *floor)
                    .map_err(|e| match e {
                        Error::Generation(msg) => {
                            Error::Generation(format!("episode {index}: {msg}"))
                        }
                        other => other,
                    })
            })
            .collect();
        for ep in episodes {
            writer.append(&ep?)?;
        }
    }
    writer.finish()?;

    let mut counts = main_counts;
    for (kind, c) in high_counts {
        match counts.iter_mut().find(|(k, _)| *k == kind) {
            Some((_, slot)) => *slot += c,
            None => counts.push((kind, c)),
        }
    }
    Ok(Manifest { counts })
}
