//! POMDP wrapper around the cloth simulator.
//!
//! Renders top-down observations (heightfield + binary mask channels,
//! rescaled to [-0.5, 0.5]), computes the shaped flattening reward, assigns
//! difficulty tiers from initial normalised coverage, and runs the 20-step
//! episode lifecycle with crumpled initial states.

use rand::Rng;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};
use crate::sim::{
    self, crumple, execute_pick_place, init_cloth, metric_coverage, raster, ClothState, PickOutcome,
    Pose2, SimParams,
};

/// The four-parameter pick-and-place action in [-1,1] pixel space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PickPlaceAction {
    pub x_pick: f64,
    pub y_pick: f64,
    pub x_place: f64,
    pub y_place: f64,
}

impl PickPlaceAction {
    pub fn new(x_pick: f64, y_pick: f64, x_place: f64, y_place: f64) -> Self {
        PickPlaceAction {
            x_pick,
            y_pick,
            x_place,
            y_place,
        }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        PickPlaceAction::new(a[0], a[1], a[2], a[3])
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x_pick, self.y_pick, self.x_place, self.y_place]
    }

    /// Clamp every component into [-1, 1].
    pub fn clamped(&self) -> Self {
        PickPlaceAction {
            x_pick: self.x_pick.clamp(-1.0, 1.0),
            y_pick: self.y_pick.clamp(-1.0, 1.0),
            x_place: self.x_place.clamp(-1.0, 1.0),
            y_place: self.y_place.clamp(-1.0, 1.0),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.as_array().iter().fold(0.0, |m, a| m.max(a.abs()))
    }

    /// Rotate pick and place points by k·90° counter-clockwise.
    pub fn rotated90(&self, k: u8) -> Self {
        let mut a = *self;
        for _ in 0..(k % 4) {
            a = PickPlaceAction::new(-a.y_pick, a.x_pick, -a.y_place, a.x_place);
        }
        a
    }

    /// Mirror across the x axis (y ↦ -y).
    pub fn flipped_y(&self) -> Self {
        PickPlaceAction::new(self.x_pick, -self.y_pick, self.x_place, -self.y_place)
    }
}

/// Observation channel kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    Heightfield,
    Mask,
}

impl Channel {
    pub fn parse(s: &str) -> Result<Channel> {
        match s {
            "heightfield" => Ok(Channel::Heightfield),
            "mask" => Ok(Channel::Mask),
            other => Err(Error::Config(format!("unknown channel `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Channel::Heightfield => "heightfield",
            Channel::Mask => "mask",
        }
    }

    pub fn parse_list(items: &[String]) -> Result<Vec<Channel>> {
        if items.is_empty() {
            return Err(Error::Config("need at least one observation channel".into()));
        }
        items.iter().map(|s| Channel::parse(s)).collect()
    }
}

/// A rendered top-down observation, one row-major grid per channel, values
/// rescaled into [-0.5, 0.5].
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub resolution: usize,
    pub channels: Vec<Channel>,
    pub data: Vec<Vec<f64>>,
}

impl Observation {
    pub fn channel(&self, ch: Channel) -> Option<&[f64]> {
        self.channels
            .iter()
            .position(|c| *c == ch)
            .map(|i| self.data[i].as_slice())
    }

    /// Concatenate the given channels into a flat model input vector.
    pub fn flatten_channels(&self, wanted: &[Channel]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(wanted.len() * self.resolution * self.resolution);
        for ch in wanted {
            let data = self.channel(*ch).ok_or_else(|| {
                Error::Contract(format!("observation lacks channel `{}`", ch.name()))
            })?;
            out.extend_from_slice(data);
        }
        Ok(out)
    }
}

/// Binary cloth mask over the workspace.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskGrid {
    pub resolution: usize,
    pub cells: Vec<bool>,
}

impl MaskGrid {
    pub fn positive_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        let r = raster::cell_index(y, self.resolution);
        let c = raster::cell_index(x, self.resolution);
        self.cells[r * self.resolution + c]
    }

    /// Row-major indices of positive cells.
    pub fn positive_cells(&self) -> Vec<usize> {
        (0..self.cells.len()).filter(|&i| self.cells[i]).collect()
    }

    /// Center coordinates of cell `i`.
    pub fn cell_center(&self, i: usize) -> (f64, f64) {
        let r = i / self.resolution;
        let c = i % self.resolution;
        (
            raster::cell_center(c, self.resolution),
            raster::cell_center(r, self.resolution),
        )
    }
}

/// Observation rendering parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsConfig {
    pub resolution: usize,
    pub channels: Vec<Channel>,
    /// Height mapped to the top of the rescaled range.
    pub z_max: f64,
    /// Rendered thickness per covering cloth layer.
    pub layer_thickness: f64,
}

impl ObsConfig {
    pub fn from_config(cfg: &Config) -> Result<ObsConfig> {
        let resolution = cfg.get_usize("obs.resolution")?;
        if resolution < 16 {
            return Err(Error::Config("obs.resolution must be >= 16".into()));
        }
        Ok(ObsConfig {
            resolution,
            channels: Channel::parse_list(&cfg.get_list("obs.channels"))?,
            z_max: cfg.get_f64("obs.z_max")?,
            layer_thickness: cfg.get_f64("obs.layer_thickness")?,
        })
    }

    /// Rescaled heightfield value corresponding to a raw height of 1e-4:
    /// the default depth threshold separating cloth from background.
    pub fn depth_threshold(&self) -> f64 {
        1e-4 / self.z_max - 0.5
    }
}

impl Default for ObsConfig {
    fn default() -> Self {
        ObsConfig {
            resolution: 32,
            channels: vec![Channel::Heightfield, Channel::Mask],
            z_max: 0.3,
            layer_thickness: 0.01,
        }
    }
}

/// Reward shaping parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardConfig {
    /// Coverage fraction granting the high-coverage bonus.
    pub tau_high: f64,
    /// Coverage drop beyond which the unflattening penalty applies.
    pub eps_flat: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            tau_high: 0.95,
            eps_flat: 0.01,
        }
    }
}

impl RewardConfig {
    pub fn from_config(cfg: &Config) -> Result<RewardConfig> {
        Ok(RewardConfig {
            tau_high: cfg.get_f64("reward.tau_high")?,
            eps_flat: cfg.get_f64("reward.eps_flat")?,
        })
    }
}

/// Per-step bookkeeping reported alongside the reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub nc_before: f64,
    pub nc_after: f64,
    pub mispick: bool,
    pub raw_coverage: usize,
    /// Difficulty tier of the episode's initial state.
    pub tier: u8,
}

/// Render the top-down observation: heightfield = interpolated surface height
/// plus one layer thickness per covering quad, mask = any coverage; both
/// rescaled to [-0.5, 0.5].
pub fn render_observation(state: &ClothState, cfg: &ObsConfig) -> Observation {
    let grid = raster::rasterize(&state.positions, state.grid_dims, cfg.resolution);
    let cells = cfg.resolution * cfg.resolution;
    let mut data = Vec::with_capacity(cfg.channels.len());
    for ch in &cfg.channels {
        let mut plane = vec![0.0f64; cells];
        match ch {
            Channel::Heightfield => {
                for i in 0..cells {
                    let raw = if grid.layers[i] > 0 {
                        grid.max_z[i] + cfg.layer_thickness * grid.layers[i] as f64
                    } else {
                        0.0
                    };
                    plane[i] = (raw / cfg.z_max).clamp(0.0, 1.0) - 0.5;
                }
            }
            Channel::Mask => {
                for i in 0..cells {
                    plane[i] = if grid.layers[i] > 0 { 0.5 } else { -0.5 };
                }
            }
        }
        data.push(plane);
    }
    Observation {
        resolution: cfg.resolution,
        channels: cfg.channels.clone(),
        data,
    }
}

/// Threshold the heightfield channel into a binary mask.
pub fn extract_mask(obs: &Observation, depth_threshold: f64) -> Result<MaskGrid> {
    let height = obs.channel(Channel::Heightfield).ok_or_else(|| {
        Error::Contract("extract_mask needs a heightfield channel".into())
    })?;
    Ok(MaskGrid {
        resolution: obs.resolution,
        cells: height.iter().map(|&h| h > depth_threshold).collect(),
    })
}

/// Shaped flattening reward: coverage delta plus additive penalties/bonus.
///
/// -0.5 for a mispick, -0.5 when any action component reaches 0.7 in
/// magnitude, -0.5 when coverage drops by more than eps_flat, +0.5 when the
/// next state's coverage reaches tau_high.
pub fn compute_reward(
    nc_prev: f64,
    nc_next: f64,
    action: &PickPlaceAction,
    outcome: &PickOutcome,
    cfg: &RewardConfig,
) -> f64 {
    let mut r = nc_next - nc_prev;
    if !outcome.grasped {
        r -= 0.5;
    }
    if action.max_abs() >= 0.7 {
        r -= 0.5;
    }
    if nc_next - nc_prev < -cfg.eps_flat {
        r -= 0.5;
    }
    if nc_next >= cfg.tau_high {
        r += 0.5;
    }
    r
}

/// Difficulty tier from initial normalised coverage.
pub fn assign_tier(nc_initial: f64) -> u8 {
    if nc_initial >= 0.95 {
        0
    } else if nc_initial >= 0.70 {
        1
    } else if nc_initial >= 0.50 {
        2
    } else if nc_initial >= 0.35 {
        3
    } else {
        4
    }
}

/// Fold-count ranges used when rejection-sampling a target tier.
fn fold_range_for_tier(tier: Option<u8>, max_folds: usize, rng: &mut impl Rng) -> usize {
    match tier {
        None => rng.gen_range(0..=max_folds),
        Some(0) => 0,
        Some(1) => 1,
        Some(2) => rng.gen_range(1..=2),
        Some(3) => rng.gen_range(2..=4),
        Some(_) => rng.gen_range(4..=max_folds.max(5)),
    }
}

struct Episode {
    cloth: ClothState,
    flat_targets: Vec<[f64; 2]>,
    c_flat: usize,
    coverage: usize,
    nc: f64,
    nc_initial: f64,
    tier: u8,
    steps_taken: usize,
}

/// The cloth-flattening environment.
pub struct ClothEnv {
    pub sim_params: SimParams,
    pub obs_config: ObsConfig,
    pub reward_config: RewardConfig,
    pub max_steps: usize,
    pub max_crumple_folds: usize,
    rows: usize,
    cols: usize,
    spacing: f64,
    episode: Option<Episode>,
}

impl ClothEnv {
    pub fn new(cfg: &Config) -> Result<ClothEnv> {
        Ok(ClothEnv {
            sim_params: SimParams::from_config(cfg)?,
            obs_config: ObsConfig::from_config(cfg)?,
            reward_config: RewardConfig::from_config(cfg)?,
            max_steps: cfg.get_usize("env.max_steps")?,
            max_crumple_folds: cfg.get_usize("env.max_crumple_folds")?,
            rows: cfg.get_usize("sim.rows")?,
            cols: cfg.get_usize("sim.cols")?,
            spacing: cfg.get_f64("sim.spacing")?,
            episode: None,
        })
    }

    pub fn with_defaults() -> ClothEnv {
        ClothEnv::new(&Config::default()).expect("default config is valid")
    }

    /// Sample a fresh crumpled episode. With `target_tier`, rejection-samples
    /// (up to 100 attempts) until the initial state lands in the tier band.
    pub fn reset(&mut self, seed: u64, target_tier: Option<u8>) -> Result<Observation> {
        self.reset_filtered(seed, target_tier, None)
    }

    /// Like `reset`, but additionally enforcing a minimum initial NC
    /// (used for the high-coverage dataset block).
    pub fn reset_with_floor(&mut self, seed: u64, floor: f64) -> Result<Observation> {
        self.reset_filtered(seed, None, Some(floor))
    }

    fn reset_filtered(
        &mut self,
        seed: u64,
        target_tier: Option<u8>,
        nc_floor: Option<f64>,
    ) -> Result<Observation> {
        const MAX_ATTEMPTS: u64 = 100;
        for attempt in 0..MAX_ATTEMPTS {
            let attempt_seed = derive_seed(seed, attempt);
            let mut rng = rng_from_seed(attempt_seed);

            // pose: rotation free, translation keeps the footprint inside
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let w = (self.cols - 1) as f64 * self.spacing;
            let h = (self.rows - 1) as f64 * self.spacing;
            let radius = 0.5 * (w * w + h * h).sqrt();
            let slack = (1.0 - radius - 0.05).max(0.0);
            let tx = rng.gen_range(-slack..=slack);
            let ty = rng.gen_range(-slack..=slack);
            let pose = Pose2 { tx, ty, angle };

            let flat = init_cloth(self.rows, self.cols, self.spacing, pose)?;
            let c_flat = metric_coverage(&flat);
            if c_flat == 0 {
                return Err(Error::Generation("flat cloth has zero coverage".into()));
            }

            let folds = if nc_floor.is_some() {
                rng.gen_range(0..=1)
            } else {
                fold_range_for_tier(target_tier, self.max_crumple_folds, &mut rng)
            };
            let crumpled = crumple(&flat, derive_seed(attempt_seed, 1), folds, &self.sim_params)?;
            let coverage = metric_coverage(&crumpled);
            let nc = coverage as f64 / c_flat as f64;

            let tier_ok = target_tier.map_or(true, |t| assign_tier(nc) == t);
            let floor_ok = nc_floor.map_or(true, |f| nc >= f);
            if !(tier_ok && floor_ok) {
                continue;
            }

            let flat_targets = flat.positions.iter().map(|p| [p[0], p[1]]).collect();
            let obs = render_observation(&crumpled, &self.obs_config);
            self.episode = Some(Episode {
                cloth: crumpled,
                flat_targets,
                c_flat,
                coverage,
                nc,
                nc_initial: nc,
                tier: assign_tier(nc),
                steps_taken: 0,
            });
            return Ok(obs);
        }
        Err(Error::Generation(format!(
            "no initial state matching tier {target_tier:?} / floor {nc_floor:?} after {MAX_ATTEMPTS} attempts (seed {seed})"
        )))
    }

    /// Clamp the action, run the pick-and-place primitive, render and score.
    pub fn step(&mut self, action: PickPlaceAction) -> Result<(Observation, f64, StepInfo)> {
        let max_steps = self.max_steps;
        let ep = self
            .episode
            .as_mut()
            .ok_or_else(|| Error::Lifecycle("step before reset".into()))?;
        if ep.steps_taken >= max_steps {
            return Err(Error::Lifecycle(format!(
                "episode exhausted after {max_steps} steps"
            )));
        }
        let action = action.clamped();
        let (next, outcome) =
            execute_pick_place(&ep.cloth, action.as_array(), &self.sim_params)?;
        let coverage = metric_coverage(&next);
        let nc_next = coverage as f64 / ep.c_flat as f64;
        let reward = compute_reward(ep.nc, nc_next, &action, &outcome, &self.reward_config);
        let info = StepInfo {
            nc_before: ep.nc,
            nc_after: nc_next,
            mispick: !outcome.grasped,
            raw_coverage: coverage,
            tier: ep.tier,
        };
        ep.cloth = next;
        ep.coverage = coverage;
        ep.nc = nc_next;
        ep.steps_taken += 1;
        let obs = render_observation(&ep.cloth, &self.obs_config);
        Ok((obs, reward, info))
    }

    pub fn render(&self) -> Result<Observation> {
        let ep = self.active()?;
        Ok(render_observation(&ep.cloth, &self.obs_config))
    }

    /// Extract the cloth mask from the current state's depth rendering.
    pub fn current_mask(&self) -> Result<MaskGrid> {
        let ep = self.active()?;
        let obs = render_observation(
            &ep.cloth,
            &ObsConfig {
                channels: vec![Channel::Heightfield],
                ..self.obs_config.clone()
            },
        );
        extract_mask(&obs, self.obs_config.depth_threshold())
    }

    fn active(&self) -> Result<&Episode> {
        self.episode
            .as_ref()
            .ok_or_else(|| Error::Lifecycle("no active episode".into()))
    }

    pub fn cloth_state(&self) -> Result<&ClothState> {
        Ok(&self.active()?.cloth)
    }

    /// Flat-pose x/y target per particle (ground truth for oracle policies).
    pub fn flat_targets(&self) -> Result<&[[f64; 2]]> {
        Ok(self.active()?.flat_targets.as_slice())
    }

    pub fn c_flat(&self) -> Result<usize> {
        Ok(self.active()?.c_flat)
    }

    pub fn coverage(&self) -> Result<usize> {
        Ok(self.active()?.coverage)
    }

    pub fn nc(&self) -> Result<f64> {
        Ok(self.active()?.nc)
    }

    pub fn nc_initial(&self) -> Result<f64> {
        Ok(self.active()?.nc_initial)
    }

    pub fn tier(&self) -> Result<u8> {
        Ok(self.active()?.tier)
    }

    pub fn steps_taken(&self) -> Result<usize> {
        Ok(self.active()?.steps_taken)
    }

    pub fn episode_finished(&self) -> bool {
        self.episode
            .as_ref()
            .map_or(true, |ep| ep.steps_taken >= self.max_steps)
    }

    /// Simulator-level coverage at the metric resolution for an arbitrary state.
    pub fn metric_nc(&self, state: &ClothState) -> Result<f64> {
        Ok(sim::metric_coverage(state) as f64 / self.active()?.c_flat as f64)
    }
}
