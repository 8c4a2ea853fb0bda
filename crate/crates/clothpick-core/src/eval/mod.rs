//! Evaluation harness: NC/NI metrics, episode rollouts, tiered reporting,
//! inference benchmarks and the experiment presets.

pub mod presets;

use std::time::Instant;

use rayon::prelude::*;

use crate::config::Config;
use crate::env::{ClothEnv, Observation, PickPlaceAction};
use crate::error::{Error, Result};
use crate::planner::RssmPlanner;
use crate::rng::derive_seed;
use crate::rssm::RssmModel;

/// Normalised coverage: C / C_flat.
pub fn compute_nc(coverage: usize, c_flat: usize) -> f64 {
    debug_assert!(c_flat > 0);
    coverage as f64 / c_flat as f64
}

/// Normalised improvement: (C_t - C_0) / (C_flat - C_0). Undefined when the
/// initial state already has full coverage.
pub fn compute_ni(c0: usize, ct: usize, c_flat: usize) -> Result<f64> {
    if c0 == c_flat {
        return Err(Error::Contract(
            "NI undefined: initial coverage equals flat coverage".into(),
        ));
    }
    Ok((ct as f64 - c0 as f64) / (c_flat as f64 - c0 as f64))
}

/// Anything that maps observations to pick-and-place actions during a
/// rollout. Scripted baselines may inspect the environment's ground truth.
pub trait Agent {
    fn begin_episode(&mut self);
    fn act(&mut self, obs: &Observation, env: &ClothEnv, step_seed: u64) -> Result<PickPlaceAction>;
    fn name(&self) -> String;
}

/// Planning agent backed by the latent model.
pub struct PlannerAgent<'m> {
    pub planner: RssmPlanner<'m>,
    /// Pick-in-extracted-mask bookkeeping for the last planned action.
    pub last_result: Option<crate::planner::PlanResult>,
}

impl<'m> PlannerAgent<'m> {
    pub fn new(planner: RssmPlanner<'m>) -> PlannerAgent<'m> {
        PlannerAgent {
            planner,
            last_result: None,
        }
    }
}

impl Agent for PlannerAgent<'_> {
    fn begin_episode(&mut self) {
        self.planner.reset();
        self.last_result = None;
    }

    fn act(&mut self, obs: &Observation, _env: &ClothEnv, step_seed: u64) -> Result<PickPlaceAction> {
        let result = self.planner.plan_step(obs, step_seed)?;
        let action = result.action;
        self.last_result = Some(result);
        Ok(action)
    }

    fn name(&self) -> String {
        format!("planner[{}]", self.planner.cem.mask_source.name())
    }
}

/// Scripted-policy agent (oracle expert, random, ...).
pub struct ScriptedAgent {
    pub kind: crate::datagen::PolicyKind,
}

impl Agent for ScriptedAgent {
    fn begin_episode(&mut self) {}

    fn act(&mut self, _obs: &Observation, env: &ClothEnv, step_seed: u64) -> Result<PickPlaceAction> {
        crate::datagen::policy_action(self.kind, env, step_seed)
    }

    fn name(&self) -> String {
        self.kind.name().to_string()
    }
}

/// Always mispicks in the empty workspace corner.
pub struct DoNothingAgent;

impl Agent for DoNothingAgent {
    fn begin_episode(&mut self) {}

    fn act(&mut self, _obs: &Observation, _env: &ClothEnv, _seed: u64) -> Result<PickPlaceAction> {
        Ok(PickPlaceAction::new(0.99, 0.99, 0.99, 0.99))
    }

    fn name(&self) -> String {
        "do_nothing".to_string()
    }
}

#[derive(Debug, Clone)]
pub struct StepTrace {
    /// 1-based action index.
    pub step: usize,
    pub nc: f64,
    pub ni: Option<f64>,
    pub reward: f64,
    pub mispick: bool,
    /// Whether the executed pick lay inside the environment-extracted mask.
    pub pick_in_env_mask: bool,
    pub action: [f64; 4],
}

#[derive(Debug, Clone)]
pub struct EpisodeTrace {
    pub seed: u64,
    pub tier: u8,
    pub nc_initial: f64,
    pub c_flat: usize,
    pub c0: usize,
    pub steps: Vec<StepTrace>,
}

impl EpisodeTrace {
    /// NC after `step` actions (initial NC for step 0).
    pub fn nc_at(&self, step: usize) -> f64 {
        if step == 0 {
            self.nc_initial
        } else {
            self.steps[step.min(self.steps.len()) - 1].nc
        }
    }

    pub fn ni_at(&self, step: usize) -> Option<f64> {
        if step == 0 {
            None
        } else {
            self.steps[step.min(self.steps.len()) - 1].ni
        }
    }
}

/// Roll one evaluation episode, recording NC/NI after every action.
pub fn run_episode(
    agent: &mut dyn Agent,
    env: &mut ClothEnv,
    seed: u64,
    target_tier: Option<u8>,
) -> Result<EpisodeTrace> {
    env.reset(seed, target_tier)?;
    agent.begin_episode();
    let c_flat = env.c_flat()?;
    let c0 = env.coverage()?;
    let mut trace = EpisodeTrace {
        seed,
        tier: env.tier()?,
        nc_initial: env.nc_initial()?,
        c_flat,
        c0,
        steps: Vec::with_capacity(env.max_steps),
    };
    for step in 0..env.max_steps {
        let obs = env.render()?;
        let mask = env.current_mask()?;
        let action = agent
            .act(&obs, env, derive_seed(seed, step as u64))
            .map_err(|e| Error::Planning(format!("step {step}: {e}")))?;
        let clamped = action.clamped();
        let pick_in_env_mask = mask.contains_point(clamped.x_pick, clamped.y_pick);
        let (_, reward, info) = env.step(action)?;
        let ni = compute_ni(c0, info.raw_coverage, c_flat).ok();
        trace.steps.push(StepTrace {
            step: step + 1,
            nc: info.nc_after,
            ni,
            reward,
            mispick: info.mispick,
            pick_in_env_mask,
            action: clamped.as_array(),
        });
    }
    Ok(trace)
}

/// Aggregate of one (tier, step) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportCell {
    pub episodes: usize,
    pub nc_mean: f64,
    pub nc_std: f64,
    /// Episodes with defined NI entering the NI statistics.
    pub ni_defined: usize,
    pub ni_mean: f64,
    pub ni_std: f64,
}

/// Mean/population-std NC and NI per tier and record step, plus a pooled
/// "all" aggregate.
#[derive(Debug, Clone)]
pub struct TierReport {
    pub record_steps: Vec<usize>,
    /// (tier, step, cell); tier 255 encodes the pooled "all" row.
    pub cells: Vec<(u8, usize, ReportCell)>,
}

pub const ALL_TIERS: u8 = 255;

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn cell_from(traces: &[&EpisodeTrace], step: usize) -> ReportCell {
    let ncs: Vec<f64> = traces.iter().map(|t| t.nc_at(step)).collect();
    let nis: Vec<f64> = traces.iter().filter_map(|t| t.ni_at(step)).collect();
    let (nc_mean, nc_std) = mean_std(&ncs);
    let (ni_mean, ni_std) = mean_std(&nis);
    ReportCell {
        episodes: traces.len(),
        nc_mean,
        nc_std,
        ni_defined: nis.len(),
        ni_mean,
        ni_std,
    }
}

pub fn tier_report(traces: &[EpisodeTrace], record_steps: &[usize]) -> TierReport {
    let mut cells = Vec::new();
    let mut tiers: Vec<u8> = traces.iter().map(|t| t.tier).collect();
    tiers.sort_unstable();
    tiers.dedup();
    for &tier in &tiers {
        let group: Vec<&EpisodeTrace> = traces.iter().filter(|t| t.tier == tier).collect();
        for &step in record_steps {
            cells.push((tier, step, cell_from(&group, step)));
        }
    }
    let all: Vec<&EpisodeTrace> = traces.iter().collect();
    for &step in record_steps {
        cells.push((ALL_TIERS, step, cell_from(&all, step)));
    }
    TierReport {
        record_steps: record_steps.to_vec(),
        cells,
    }
}

pub const TIER_REPORT_CSV_HEADER: &str =
    "tier,step,episodes,nc_mean,nc_std,ni_defined,ni_mean,ni_std";

impl TierReport {
    pub fn cell(&self, tier: u8, step: usize) -> Option<&ReportCell> {
        self.cells
            .iter()
            .find(|(t, s, _)| *t == tier && *s == step)
            .map(|(_, _, c)| c)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(TIER_REPORT_CSV_HEADER);
        out.push('\n');
        for (tier, step, c) in &self.cells {
            let tier_label = if *tier == ALL_TIERS {
                "all".to_string()
            } else {
                tier.to_string()
            };
            out.push_str(&format!(
                "{tier_label},{step},{},{},{},{},{},{}\n",
                c.episodes, c.nc_mean, c.nc_std, c.ni_defined, c.ni_mean, c.ni_std
            ));
        }
        out
    }

    /// Human-readable summary table (tiers as columns, steps as rows).
    pub fn to_table(&self, title: &str) -> String {
        let mut tiers: Vec<u8> = self
            .cells
            .iter()
            .map(|(t, _, _)| *t)
            .filter(|t| *t != ALL_TIERS)
            .collect();
        tiers.sort_unstable();
        tiers.dedup();
        let mut out = format!("{title}\n");
        out.push_str("metric step");
        for t in &tiers {
            out.push_str(&format!(" | tier {t}"));
        }
        out.push_str(" | all\n");
        for metric in ["NC", "NI"] {
            for &step in &self.record_steps {
                out.push_str(&format!("{metric:>6} {step:>4}"));
                for tier in tiers.iter().copied().chain([ALL_TIERS]) {
                    let cell = self.cell(tier, step);
                    match cell {
                        Some(c) => {
                            let (m, s) = if metric == "NC" {
                                (c.nc_mean, c.nc_std)
                            } else {
                                (c.ni_mean, c.ni_std)
                            };
                            if m.is_nan() {
                                out.push_str(" |    n/a    ");
                            } else {
                                out.push_str(&format!(" | {m:5.2}±{s:4.2}"));
                            }
                        }
                        None => out.push_str(" |     -     "),
                    }
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Evaluate an agent factory over tiers × seeds in parallel; the factory is
/// called once per episode so agents never share state.
pub fn evaluate_grid<A, F>(
    make_agent: F,
    cfg: &Config,
    tiers: &[u8],
    seeds_per_tier: usize,
    base_seed: u64,
) -> Result<Vec<EpisodeTrace>>
where
    A: Agent,
    F: Fn() -> A + Sync,
{
    let jobs: Vec<(u8, u64)> = tiers
        .iter()
        .flat_map(|&tier| {
            (0..seeds_per_tier).map(move |i| {
                (
                    tier,
                    derive_seed(base_seed, (tier as u64) * 10_000 + i as u64),
                )
            })
        })
        .collect();
    jobs.par_iter()
        .map(|&(tier, seed)| {
            let mut env = ClothEnv::new(cfg)?;
            let mut agent = make_agent();
            run_episode(&mut agent, &mut env, seed, Some(tier))
        })
        .collect()
}

/// Wall-clock statistics for single plan calls plus model size accounting.
#[derive(Debug, Clone)]
pub struct BenchReport {
    pub trials: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub transitional_params: usize,
    pub total_params: usize,
    pub dataset_episodes: Option<usize>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        format!(
            "trials,mean_ms,p50_ms,p95_ms,transitional_params,total_params,dataset_episodes\n{},{},{},{},{},{},{}\n",
            self.trials,
            self.mean_ms,
            self.p50_ms,
            self.p95_ms,
            self.transitional_params,
            self.total_params,
            self.dataset_episodes.map_or(String::from(""), |d| d.to_string()),
        )
    }
}

/// Measure action-inference wall time on a fixed episode state.
pub fn bench_inference(
    model: &RssmModel,
    cfg: &Config,
    cem: crate::planner::CemConfig,
    warmup: usize,
    trials: usize,
    dataset_episodes: Option<usize>,
) -> Result<BenchReport> {
    if trials == 0 {
        return Err(Error::Contract("bench needs at least one trial".into()));
    }
    let mut env = ClothEnv::new(cfg)?;
    env.reset(7, Some(2))?;
    let obs = env.render()?;
    let threshold = env.obs_config.depth_threshold();

    let mut planner = RssmPlanner::new(model, cem, threshold);
    for i in 0..warmup {
        planner.reset();
        planner.plan_step(&obs, derive_seed(1, i as u64))?;
    }
    let mut times = Vec::with_capacity(trials);
    for i in 0..trials {
        planner.reset();
        let start = Instant::now();
        planner.plan_step(&obs, derive_seed(2, i as u64))?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean_ms = times.iter().sum::<f64>() / times.len() as f64;
    let pct = |q: f64| {
        let idx = ((times.len() as f64 - 1.0) * q).round() as usize;
        times[idx]
    };
    Ok(BenchReport {
        trials,
        mean_ms,
        p50_ms: pct(0.50),
        p95_ms: pct(0.95),
        transitional_params: model.transitional_param_count(),
        total_params: model.param_count(),
        dataset_episodes,
    })
}
