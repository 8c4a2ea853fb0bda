//! `clothpick`: dataset generation, model training, planning rollouts,
//! evaluation and benchmarks for the cloth-flattening lab.
//!
//! Every run writes a resolved-config snapshot (`config.txt`) into its
//! output directory; together with the subcommand name that snapshot fully
//! reproduces the run. Exit codes: 0 success, 2 usage/config errors,
//! 3 data/format errors, 4 numeric/simulation failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use clothpick_core::config::Config;
use clothpick_core::datagen::{generate_dataset, read_dataset, MixtureSpec};
use clothpick_core::env::ClothEnv;
use clothpick_core::error::{Error, Result};
use clothpick_core::eval::presets::{run_preset, train_variant, PresetName};
use clothpick_core::eval::{
    bench_inference, evaluate_grid, tier_report, PlannerAgent, TierReport,
};
use clothpick_core::planner::{CemConfig, RssmPlanner};
use clothpick_core::rng::derive_seed;
use clothpick_core::rssm::train::{load_checkpoint_with_state, train, TrainRun};
use clothpick_core::rssm::TrainingConfig;

#[derive(Parser)]
#[command(
    name = "clothpick",
    about = "Cloth-flattening lab: simulator, latent dynamics model, masked CEM planner",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Config file (key = value lines); defaults to $CLOTHPICK_CONFIG if set.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a single config key, e.g. --set plan.population=500
    /// (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,

    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Force single-worker execution for bitwise reproducibility.
    #[arg(long, global = true)]
    deterministic: bool,

    /// Base seed for the run (stored as run.seed in the snapshot).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the offline trajectory dataset and its manifest.
    GenData {
        #[command(flatten)]
        common: CommonArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Main-block episode count (overrides data.main_episodes).
        #[arg(long)]
        episodes: Option<usize>,
        /// High-coverage-block episode count.
        #[arg(long)]
        high_episodes: Option<usize>,
    },
    /// Train the latent dynamics model on a dataset.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Dataset file produced by gen-data.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Update steps (overrides train.steps).
        #[arg(long)]
        steps: Option<u64>,
        /// Learning rate (overrides train.learning_rate).
        #[arg(long)]
        lr: Option<f64>,
        /// Resume from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Roll out the planner on fresh episodes, writing per-episode traces.
    Rollout {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Restrict to one difficulty tier (default: eval.tiers list).
        #[arg(long)]
        tier: Option<u8>,
        /// Episodes per tier (overrides eval.seeds_per_tier).
        #[arg(long)]
        seeds: Option<usize>,
        /// Mask source: environment | model | none.
        #[arg(long)]
        mask_source: Option<String>,
        /// Planning horizon (overrides plan.horizon).
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Tiered evaluation of a checkpoint, or one of the experiment presets.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Preset: reward_study | ablation | planner_sweep | kl_study.
        #[arg(long)]
        preset: Option<String>,
        /// Episodes per tier (overrides eval.seeds_per_tier).
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Measure action-inference time and parameter counts.
    Bench {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        warmup: usize,
        #[arg(long, default_value_t = 20)]
        trials: usize,
    },
}

fn load_config(common: &CommonArgs) -> Result<Config> {
    let mut cfg = match &common.config {
        Some(path) => Config::from_file(path)?,
        None => match std::env::var_os("CLOTHPICK_CONFIG") {
            Some(path) => Config::from_file(Path::new(&path))?,
            None => Config::default(),
        },
    };
    for kv in &common.set {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(key.trim(), value.trim())?;
    }
    if let Some(seed) = common.seed {
        cfg.set("run.seed", &seed.to_string())?;
    }
    Ok(cfg)
}

fn init_workers(common: &CommonArgs) {
    let workers = if common.deterministic {
        Some(1)
    } else {
        common.workers
    };
    if let Some(n) = workers {
        // ignore failure: tests may initialize the pool more than once
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
}

fn prepare_out(cfg: &Config, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    cfg.write_snapshot(&out.join("config.txt"))?;
    Ok(())
}

fn parse_tiers(cfg: &Config) -> Result<Vec<u8>> {
    cfg.get_list("eval.tiers")
        .iter()
        .map(|t| {
            t.parse::<u8>()
                .map_err(|_| Error::Config(format!("bad tier `{t}` in eval.tiers")))
        })
        .collect()
}

fn parse_record_steps(cfg: &Config) -> Result<Vec<usize>> {
    cfg.get_list("eval.record_steps")
        .iter()
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| Error::Config(format!("bad step `{s}` in eval.record_steps")))
        })
        .collect()
}

fn cmd_gen_data(
    common: &CommonArgs,
    out: &Path,
    episodes: Option<usize>,
    high_episodes: Option<usize>,
) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(n) = episodes {
        cfg.set("data.main_episodes", &n.to_string())?;
    }
    if let Some(n) = high_episodes {
        cfg.set("data.high_coverage_episodes", &n.to_string())?;
    }
    prepare_out(&cfg, out)?;
    let spec = MixtureSpec::from_config(&cfg)?;
    let seed = cfg.get_u64("run.seed")?;
    let dataset_path = out.join("dataset.cpds");
    let manifest = generate_dataset(&spec, &cfg, seed, &dataset_path)?;
    std::fs::write(out.join("manifest.csv"), manifest.to_csv())?;
    println!("wrote {}", dataset_path.display());
    print!("{}", manifest.to_csv());
    Ok(())
}

fn cmd_train(
    common: &CommonArgs,
    data: &Path,
    out: &Path,
    steps: Option<u64>,
    lr: Option<f64>,
    resume: Option<&Path>,
) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(steps) = steps {
        cfg.set("train.steps", &steps.to_string())?;
    }
    if let Some(lr) = lr {
        cfg.set("train.learning_rate", &lr.to_string())?;
    }
    let dataset = read_dataset(data)?;
    std::fs::create_dir_all(out)?;
    let seed = cfg.get_u64("run.seed")?;

    match resume {
        None => {
            let model = train_variant(&cfg, &dataset, out, seed)?;
            println!(
                "trained {} parameters ({} transitional); final checkpoint {}",
                model.param_count(),
                model.transitional_param_count(),
                out.join("model_final.rssm").display()
            );
        }
        Some(ckpt) => {
            // the checkpoint's echoed config defines the model; step count
            // and learning-rate overrides still apply
            let (mut model, mut adam, start_step, mut ckpt_cfg) =
                load_checkpoint_with_state(ckpt)?;
            if let Some(steps) = steps {
                ckpt_cfg.set("train.steps", &steps.to_string())?;
            }
            if let Some(lr) = lr {
                ckpt_cfg.set("train.learning_rate", &lr.to_string())?;
            }
            prepare_out(&ckpt_cfg, out)?;
            let train_cfg = TrainingConfig::from_config(&ckpt_cfg)?;
            if start_step >= train_cfg.steps {
                return Err(Error::Config(format!(
                    "checkpoint is already at step {start_step}, train.steps is {}",
                    train_cfg.steps
                )));
            }
            let run = TrainRun::new(derive_seed(ckpt_cfg.get_u64("run.seed")?, 2))
                .with_out_dir(out)
                .starting_at(start_step);
            train(&mut model, &mut adam, &dataset, &train_cfg, &run, &ckpt_cfg)?;
            println!(
                "resumed from step {start_step}; final checkpoint {}",
                out.join("model_final.rssm").display()
            );
        }
    }
    Ok(())
}

fn trace_csv(trace: &clothpick_core::eval::EpisodeTrace) -> String {
    let mut out = String::from(
        "step,nc,ni,reward,mispick,pick_in_env_mask,x_pick,y_pick,x_place,y_place\n",
    );
    for s in &trace.steps {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            s.step,
            s.nc,
            s.ni.map_or(String::new(), |v| v.to_string()),
            s.reward,
            s.mispick as u8,
            s.pick_in_env_mask as u8,
            s.action[0],
            s.action[1],
            s.action[2],
            s.action[3]
        ));
    }
    out
}

fn cmd_rollout(
    common: &CommonArgs,
    checkpoint: &Path,
    out: &Path,
    tier: Option<u8>,
    seeds: Option<usize>,
    mask_source: Option<&str>,
    horizon: Option<usize>,
) -> Result<()> {
    let cli_cfg = load_config(common)?;
    let (model, ckpt_cfg, _) = clothpick_core::rssm::checkpoint::load_model(checkpoint)?;
    // the checkpoint's config defines model/env geometry; CLI overrides apply on top
    let mut cfg = ckpt_cfg;
    for key in ["plan.population", "plan.iterations", "plan.elite_fraction", "plan.std_floor", "plan.max_rejection_tries", "eval.seeds_per_tier", "eval.tiers", "eval.record_steps", "run.seed"] {
        cfg.set(key, cli_cfg.get_str(key))?;
    }
    if let Some(t) = tier {
        cfg.set("eval.tiers", &t.to_string())?;
    }
    if let Some(n) = seeds {
        cfg.set("eval.seeds_per_tier", &n.to_string())?;
    }
    if let Some(m) = mask_source {
        cfg.set("plan.mask_source", m)?;
    }
    if let Some(h) = horizon {
        cfg.set("plan.horizon", &h.to_string())?;
    }
    prepare_out(&cfg, out)?;

    let cem = CemConfig::from_config(&cfg)?;
    let env = ClothEnv::new(&cfg)?;
    let threshold = env.obs_config.depth_threshold();
    let tiers = parse_tiers(&cfg)?;
    let seeds_per_tier = cfg.get_usize("eval.seeds_per_tier")?;
    if tiers.is_empty() || seeds_per_tier == 0 {
        return Err(Error::Config("rollout needs at least one tier and seed".into()));
    }
    let base_seed = cfg.get_u64("run.seed")?;

    let traces = evaluate_grid(
        || PlannerAgent::new(RssmPlanner::new(&model, cem.clone(), threshold)),
        &cfg,
        &tiers,
        seeds_per_tier,
        base_seed,
    )?;
    let mut index = String::from("file,tier,seed,nc_initial,nc_final\n");
    for (i, trace) in traces.iter().enumerate() {
        let name = format!("trace_tier{}_{:03}.csv", trace.tier, i);
        std::fs::write(out.join(&name), trace_csv(trace))?;
        index.push_str(&format!(
            "{name},{},{},{},{}\n",
            trace.tier,
            trace.seed,
            trace.nc_initial,
            trace.nc_at(trace.steps.len())
        ));
    }
    std::fs::write(out.join("traces.csv"), index)?;
    let report = tier_report(&traces, &parse_record_steps(&cfg)?);
    std::fs::write(out.join("tier_report.csv"), report.to_csv())?;
    println!("{}", report.to_table(&format!("rollout[{}]", cem.mask_source.name())));
    Ok(())
}

fn cmd_eval(
    common: &CommonArgs,
    checkpoint: Option<&Path>,
    out: &Path,
    preset: Option<&str>,
    seeds: Option<usize>,
) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(n) = seeds {
        cfg.set("eval.seeds_per_tier", &n.to_string())?;
    }
    let seed = cfg.get_u64("run.seed")?;

    if let Some(name) = preset {
        let preset = PresetName::parse(name)?;
        run_preset(preset, &cfg, out, seed)?;
        println!("preset {} written to {}", preset.name(), out.display());
        return Ok(());
    }

    let Some(checkpoint) = checkpoint else {
        return Err(Error::Config("eval needs --checkpoint or --preset".into()));
    };
    let (model, ckpt_cfg, _) = clothpick_core::rssm::checkpoint::load_model(checkpoint)?;
    let mut merged = ckpt_cfg;
    for key in ["plan.population", "plan.iterations", "plan.mask_source", "plan.horizon", "eval.seeds_per_tier", "eval.tiers", "eval.record_steps", "run.seed"] {
        merged.set(key, cfg.get_str(key))?;
    }
    let tiers = parse_tiers(&merged)?;
    let seeds_per_tier = merged.get_usize("eval.seeds_per_tier")?;
    if tiers.is_empty() || seeds_per_tier == 0 {
        return Err(Error::Config("eval over zero episodes".into()));
    }
    prepare_out(&merged, out)?;

    let report: TierReport = clothpick_core::eval::presets::eval_model(
        &model,
        &merged,
        CemConfig::from_config(&merged)?.mask_source,
        clothpick_core::planner::RewardHead::Prior,
        seed,
    )?;
    std::fs::write(out.join("tier_report.csv"), report.to_csv())?;
    std::fs::write(out.join("summary.txt"), report.to_table("eval"))?;
    println!("{}", report.to_table("eval"));
    Ok(())
}

fn cmd_bench(
    common: &CommonArgs,
    checkpoint: &Path,
    out: &Path,
    warmup: usize,
    trials: usize,
) -> Result<()> {
    let cli_cfg = load_config(common)?;
    let (model, ckpt_cfg, _) = clothpick_core::rssm::checkpoint::load_model(checkpoint)?;
    let mut cfg = ckpt_cfg;
    for key in ["plan.population", "plan.iterations", "plan.mask_source", "plan.horizon"] {
        cfg.set(key, cli_cfg.get_str(key))?;
    }
    prepare_out(&cfg, out)?;
    let report = bench_inference(
        &model,
        &cfg,
        CemConfig::from_config(&cfg)?,
        warmup,
        trials,
        None,
    )?;
    std::fs::write(out.join("bench.csv"), report.to_csv())?;
    println!(
        "inference: mean {:.2} ms, p50 {:.2} ms, p95 {:.2} ms over {} trials",
        report.mean_ms, report.p50_ms, report.p95_ms, report.trials
    );
    println!(
        "parameters: {} transitional, {} total",
        report.transitional_params, report.total_params
    );
    Ok(())
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::GenData {
            common,
            out,
            episodes,
            high_episodes,
        } => {
            init_workers(common);
            cmd_gen_data(common, out, *episodes, *high_episodes)
        }
        Command::Train {
            common,
            data,
            out,
            steps,
            lr,
            resume,
        } => {
            init_workers(common);
            cmd_train(common, data, out, *steps, *lr, resume.as_deref())
        }
        Command::Rollout {
            common,
            checkpoint,
            out,
            tier,
            seeds,
            mask_source,
            horizon,
        } => {
            init_workers(common);
            cmd_rollout(
                common,
                checkpoint,
                out,
                *tier,
                *seeds,
                mask_source.as_deref(),
                *horizon,
            )
        }
        Command::Eval {
            common,
            checkpoint,
            out,
            preset,
            seeds,
        } => {
            init_workers(common);
            cmd_eval(common, checkpoint.as_deref(), out, preset.as_deref(), *seeds)
        }
        Command::Bench {
            common,
            checkpoint,
            out,
            warmup,
            trials,
        } => {
            init_workers(common);
            cmd_bench(common, checkpoint, out, *warmup, *trials)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
