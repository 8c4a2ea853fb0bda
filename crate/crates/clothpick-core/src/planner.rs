//! Cross-entropy-method planning on the latent model, with the first pick
//! coordinate optionally constrained to the cloth mask.

use rayon::prelude::*;

use crate::config::Config;
use crate::env::{extract_mask, MaskGrid, Observation, PickPlaceAction};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};
use crate::rssm::{LatentState, RssmModel};
use rand::Rng;
use rand_distr::StandardNormal;

/// Where the planner obtains the cloth mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskSource {
    /// Thresholded from the environment's depth observation.
    Environment,
    /// Predicted by the model's mask decoder.
    Model,
    /// Unconstrained MPC-CEM.
    None,
}

impl MaskSource {
    pub fn parse(s: &str) -> Result<MaskSource> {
        match s {
            "environment" => Ok(MaskSource::Environment),
            "model" => Ok(MaskSource::Model),
            "none" => Ok(MaskSource::None),
            other => Err(Error::Config(format!("unknown mask source `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MaskSource::Environment => "environment",
            MaskSource::Model => "model",
            MaskSource::None => "none",
        }
    }
}

/// CEM hyper-parameters. Defaults are the reference setting (population
/// 5000, 100 iterations); the desk-scale config file overrides them.
#[derive(Debug, Clone, PartialEq)]
pub struct CemConfig {
    pub population: usize,
    pub iterations: usize,
    pub elite_fraction: f64,
    pub horizon: usize,
    pub std_floor: f64,
    pub mask_source: MaskSource,
    pub max_rejection_tries: usize,
}

impl Default for CemConfig {
    fn default() -> Self {
        CemConfig {
            population: 5000,
            iterations: 100,
            elite_fraction: 0.10,
            horizon: 1,
            std_floor: 1e-3,
            mask_source: MaskSource::Environment,
            max_rejection_tries: 50,
        }
    }
}

impl CemConfig {
    pub fn from_config(cfg: &Config) -> Result<CemConfig> {
        let c = CemConfig {
            population: cfg.get_usize("plan.population")?,
            iterations: cfg.get_usize("plan.iterations")?,
            elite_fraction: cfg.get_f64("plan.elite_fraction")?,
            horizon: cfg.get_usize("plan.horizon")?,
            std_floor: cfg.get_f64("plan.std_floor")?,
            mask_source: MaskSource::parse(cfg.get_str("plan.mask_source"))?,
            max_rejection_tries: cfg.get_usize("plan.max_rejection_tries")?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.elite_fraction > 0.0 && self.elite_fraction <= 1.0) {
            return Err(Error::Config("plan.elite_fraction must be in (0, 1]".into()));
        }
        if self.elite_count() < 1 {
            return Err(Error::Config(
                "population * elite_fraction must be >= 1".into(),
            ));
        }
        if self.horizon < 1 {
            return Err(Error::Config("plan.horizon must be >= 1".into()));
        }
        Ok(())
    }

    pub fn elite_count(&self) -> usize {
        ((self.population as f64) * self.elite_fraction).ceil() as usize
    }

    pub fn dims(&self) -> usize {
        4 * self.horizon
    }
}

/// Sampling distribution over flattened action trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDist {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ActionDist {
    pub fn initial(dims: usize) -> ActionDist {
        ActionDist {
            mean: vec![0.0; dims],
            std: vec![1.0; dims],
        }
    }
}

/// Outcome of one planning call.
#[derive(Debug, Clone)]
pub struct PlanResult {
    pub action: PickPlaceAction,
    pub predicted_reward: f64,
    pub iterations_run: usize,
    /// Fraction of first-pick samples accepted without the uniform-over-mask
    /// fallback (1.0 when unconstrained).
    pub mask_hit_rate: f64,
}

struct SampleStats {
    accepted: usize,
    total: usize,
}

/// Draw a clamped-Gaussian candidate population. With a mask, the first
/// pick (x, y) is rejection-sampled onto the mask, falling back to a uniform
/// draw over mask-positive cells after `max_rejection_tries`.
pub fn sample_candidates(
    dist: &ActionDist,
    cfg: &CemConfig,
    mask: Option<&MaskGrid>,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, f64)> {
    if let Some(m) = mask {
        if m.positive_count() == 0 {
            return Err(Error::Planning("cloth mask has no positive cells".into()));
        }
    }
    let dims = cfg.dims();
    debug_assert_eq!(dist.mean.len(), dims);
    let mut stats = SampleStats {
        accepted: 0,
        total: 0,
    };
    let mut out = Vec::with_capacity(cfg.population);
    for i in 0..cfg.population {
        let mut rng = rng_from_seed(derive_seed(seed, i as u64));
        let mut row = vec![0.0; dims];
        for d in 0..dims {
            let eta: f64 = rng.sample(StandardNormal);
            row[d] = (dist.mean[d] + dist.std[d] * eta).clamp(-1.0, 1.0);
        }
        if let Some(m) = mask {
            stats.total += 1;
            let mut ok = m.contains_point(row[0], row[1]);
            if ok {
                stats.accepted += 1;
            }
            let mut tries = 0;
            while !ok && tries < cfg.max_rejection_tries {
                let ex: f64 = rng.sample(StandardNormal);
                let ey: f64 = rng.sample(StandardNormal);
                row[0] = (dist.mean[0] + dist.std[0] * ex).clamp(-1.0, 1.0);
                row[1] = (dist.mean[1] + dist.std[1] * ey).clamp(-1.0, 1.0);
                ok = m.contains_point(row[0], row[1]);
                if ok {
                    stats.accepted += 1;
                }
                stats.total += 1;
                tries += 1;
            }
            if !ok {
                // uniform over mask-positive cells, jittered within the cell
                let cells = m.positive_cells();
                let cell = cells[rng.gen_range(0..cells.len())];
                let (cx, cy) = m.cell_center(cell);
                let half = 1.0 / m.resolution as f64;
                row[0] = (cx + rng.gen_range(-half..half)).clamp(-1.0, 1.0);
                row[1] = (cy + rng.gen_range(-half..half)).clamp(-1.0, 1.0);
            }
        }
        out.push(row);
    }
    let hit_rate = if stats.total == 0 {
        1.0
    } else {
        stats.accepted as f64 / stats.total as f64
    };
    Ok((out, hit_rate))
}

/// Which reward head scores imagined states. `Posterior` backs the
/// no-prior-reward-learning ablation (vanilla single-head setup).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardHead {
    Prior,
    Posterior,
}

/// Score candidates by imagined return: roll the prior `horizon` steps and
/// sum the reward head. Per-candidate noise derives from (seed, index)
/// so parallel and serial schedules agree bitwise.
pub fn score_candidates_with(
    model: &RssmModel,
    head: RewardHead,
    start: &LatentState,
    candidates: &[Vec<f64>],
    horizon: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    candidates
        .par_iter()
        .enumerate()
        .map(|(i, row)| {
            let cand_seed = derive_seed(seed, i as u64);
            let mut state = start.clone();
            let mut total = 0.0;
            for t in 0..horizon {
                let action = [row[4 * t], row[4 * t + 1], row[4 * t + 2], row[4 * t + 3]];
                let noise = model.sample_noise(derive_seed(cand_seed, t as u64));
                state = state_err(model.prior_step(&state, action, &noise), i)?;
                total += match head {
                    RewardHead::Prior => {
                        state_err(model.predict_reward_prior(&state), i)?
                    }
                    RewardHead::Posterior => state_err(model.decode(&state), i)?.1,
                };
            }
            Ok(total)
        })
        .collect()
}

/// Score with the prior reward head (the default planner configuration).
pub fn score_candidates(
    model: &RssmModel,
    start: &LatentState,
    candidates: &[Vec<f64>],
    horizon: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    score_candidates_with(model, RewardHead::Prior, start, candidates, horizon, seed)
}

fn state_err<T>(r: Result<T>, candidate: usize) -> Result<T> {
    r.map_err(|e| match e {
        Error::Numeric { what } => Error::Numeric {
            what: format!("{what} (candidate {candidate})"),
        },
        other => other,
    })
}

/// Refit the Gaussian to the elite set: top candidates by score (stable,
/// ties by index), per-dimension mean and population std, floored.
pub fn refit(
    candidates: &[Vec<f64>],
    scores: &[f64],
    elite_count: usize,
    std_floor: f64,
) -> (ActionDist, Vec<usize>) {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let elites = &order[..elite_count.min(order.len())];
    let dims = candidates[0].len();
    let n = elites.len() as f64;
    let mut mean = vec![0.0; dims];
    for &e in elites {
        for d in 0..dims {
            mean[d] += candidates[e][d];
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut std = vec![0.0; dims];
    for &e in elites {
        for d in 0..dims {
            let diff = candidates[e][d] - mean[d];
            std[d] += diff * diff;
        }
    }
    for s in &mut std {
        *s = (*s / n).sqrt().max(std_floor);
    }
    (ActionDist { mean, std }, elites.to_vec())
}

/// Statistics of one CEM run.
#[derive(Debug, Clone)]
pub struct CemStats {
    pub iterations_run: usize,
    /// Best elite score per iteration (non-decreasing for a deterministic
    /// score function thanks to best-candidate carryover).
    pub best_scores: Vec<f64>,
    pub mask_hit_rate: f64,
}

/// Generic CEM loop: sample → score → refit, carrying the best candidate
/// into the next population. Returns the final mean and statistics.
pub fn cem_optimize<F>(
    cfg: &CemConfig,
    mask: Option<&MaskGrid>,
    seed: u64,
    mut score_fn: F,
) -> Result<(ActionDist, CemStats)>
where
    F: FnMut(&[Vec<f64>], usize) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    let mut dist = ActionDist::initial(cfg.dims());
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut stats = CemStats {
        iterations_run: 0,
        best_scores: Vec::with_capacity(cfg.iterations),
        mask_hit_rate: 1.0,
    };
    let mut hit_acc = 0.0;
    for iter in 0..cfg.iterations {
        let (mut candidates, hit_rate) =
            sample_candidates(&dist, cfg, mask, derive_seed(seed, iter as u64))?;
        hit_acc += hit_rate;
        if let Some((row, _)) = &best {
            let last = candidates.len() - 1;
            candidates[last] = row.clone();
        }
        let scores = score_fn(&candidates, iter)?;
        if let Some(bad) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::Numeric {
                what: format!("candidate score {bad}"),
            });
        }
        let (new_dist, elites) = refit(&candidates, &scores, cfg.elite_count(), cfg.std_floor);
        let top = elites[0];
        if best.as_ref().map_or(true, |(_, s)| scores[top] >= *s) {
            best = Some((candidates[top].clone(), scores[top]));
        }
        stats.best_scores.push(scores[top]);
        dist = new_dist;
        stats.iterations_run += 1;
    }
    stats.mask_hit_rate = hit_acc / cfg.iterations.max(1) as f64;
    Ok((dist, stats))
}

/// Snap a point to the nearest mask-positive cell center (ties by lowest
/// row-major index).
fn project_to_mask(mask: &MaskGrid, x: f64, y: f64) -> (f64, f64) {
    let mut best = (f64::INFINITY, 0usize);
    for cell in mask.positive_cells() {
        let (cx, cy) = mask.cell_center(cell);
        let d = (cx - x) * (cx - x) + (cy - y) * (cy - y);
        if d < best.0 {
            best = (d, cell);
        }
    }
    mask.cell_center(best.1)
}

/// Planning agent carrying the posterior latent across an episode.
pub struct RssmPlanner<'m> {
    pub model: &'m RssmModel,
    pub cem: CemConfig,
    pub reward_head: RewardHead,
    depth_threshold: f64,
    state: LatentState,
    prev_action: PickPlaceAction,
}

impl<'m> RssmPlanner<'m> {
    pub fn new(model: &'m RssmModel, cem: CemConfig, depth_threshold: f64) -> RssmPlanner<'m> {
        RssmPlanner {
            model,
            cem,
            reward_head: RewardHead::Prior,
            depth_threshold,
            state: LatentState::zero(&model.cfg),
            prev_action: PickPlaceAction::new(0.0, 0.0, 0.0, 0.0),
        }
    }

    pub fn with_reward_head(mut self, head: RewardHead) -> RssmPlanner<'m> {
        self.reward_head = head;
        self
    }

    /// Forget the carried latent (episode start).
    pub fn reset(&mut self) {
        self.state = LatentState::zero(&self.model.cfg);
        self.prev_action = PickPlaceAction::new(0.0, 0.0, 0.0, 0.0);
    }

    pub fn latent(&self) -> &LatentState {
        &self.state
    }

    /// Update the posterior from the new observation and plan one action.
    pub fn plan_step(&mut self, obs: &Observation, seed: u64) -> Result<PlanResult> {
        let obs_input = obs.flatten_channels(&self.model.cfg.input_channels)?;
        // inference uses the posterior mean (zero reparameterization noise)
        let zero_noise = vec![0.0; self.model.cfg.z_dim];
        self.state = self.model.posterior_step(
            &self.state,
            self.prev_action.as_array(),
            &obs_input,
            &zero_noise,
        )?;

        let mask = match self.cem.mask_source {
            MaskSource::Environment => Some(extract_mask(obs, self.depth_threshold)?),
            MaskSource::Model => {
                let cells = self.model.predict_mask(&self.state)?;
                Some(MaskGrid {
                    resolution: self.model.cfg.resolution,
                    cells,
                })
            }
            MaskSource::None => None,
        };
        if let Some(m) = &mask {
            if m.positive_count() == 0 {
                return Err(Error::Planning(
                    "empty cloth mask (occlusion or model failure)".into(),
                ));
            }
        }

        let model = self.model;
        let start = self.state.clone();
        let horizon = self.cem.horizon;
        let head = self.reward_head;
        let (dist, stats) = cem_optimize(&self.cem, mask.as_ref(), seed, |cands, iter| {
            score_candidates_with(
                model,
                head,
                &start,
                cands,
                horizon,
                derive_seed(seed, 1_000 + iter as u64),
            )
        })?;

        let mut first: Vec<f64> = dist.mean[..4].iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        if let Some(m) = &mask {
            if !m.contains_point(first[0], first[1]) {
                // the elite mean of a non-convex mask can fall outside it
                let (px, py) = project_to_mask(m, first[0], first[1]);
                first[0] = px;
                first[1] = py;
            }
        }
        let action = PickPlaceAction::new(first[0], first[1], first[2], first[3]);

        // score the returned trajectory for reporting
        let mut mean_traj = dist.mean.clone();
        mean_traj[..4].copy_from_slice(&first);
        let predicted_reward = score_candidates_with(
            model,
            head,
            &start,
            &[mean_traj],
            horizon,
            derive_seed(seed, 999_983),
        )?[0];

        self.prev_action = action;
        Ok(PlanResult {
            action,
            predicted_reward,
            iterations_run: stats.iterations_run,
            mask_hit_rate: stats.mask_hit_rate,
        })
    }
}
