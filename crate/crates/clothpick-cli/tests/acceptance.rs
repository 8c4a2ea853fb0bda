//! Acceptance suite: one criterion per section, run in order inside a single
//! test so expensive artifacts (dataset, trained models) are shared. Each
//! criterion prints one PASS/FAIL line; the test fails at the end if any
//! required criterion failed. Criterion 10's inequality is an empirical
//! claim and is reported as a finding, not a hard failure.
//!
//! Run with: cargo test --test acceptance -- --nocapture

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;

use clothpick_core::config::Config;
use clothpick_core::datagen::{
    apportion, generate_dataset, read_dataset, Dataset, MixtureSpec, PolicyKind,
};
use clothpick_core::env::{
    assign_tier, compute_reward, ClothEnv, PickPlaceAction, RewardConfig,
};
use clothpick_core::error::Result;
use clothpick_core::eval::presets::{planner_sweep_on_model, train_variant};
use clothpick_core::eval::{
    compute_nc, compute_ni, evaluate_grid, EpisodeTrace, PlannerAgent,
};
use clothpick_core::planner::{cem_optimize, CemConfig, MaskSource, RssmPlanner};
use clothpick_core::rng::{derive_seed, rng_from_seed};
use clothpick_core::rssm::loss::kl_balanced_with_input_grads;
use clothpick_core::rssm::{
    kl_diag_value, rssm_loss, rssm_loss_with_grads, KlMode, LossConfig, LossWeights, ModelConfig,
    RssmModel, SeqSample,
};
use clothpick_core::sim::PickOutcome;

struct Outcomes {
    lines: Vec<(String, bool, bool)>, // (line, passed, required)
}

impl Outcomes {
    fn new() -> Outcomes {
        Outcomes { lines: Vec::new() }
    }

    fn record(&mut self, criterion: &str, passed: bool, required: bool, detail: String) {
        let tag = if passed { "PASS" } else { "FAIL" };
        let line = format!("[{tag}] {criterion}: {detail}");
        println!("{line}");
        self.lines.push((line, passed, required));
    }
}

fn random_batch(model: &RssmModel, elements: usize, seq_len: usize, seed: u64) -> Vec<SeqSample> {
    let mut rng = rng_from_seed(seed);
    let cfg = &model.cfg;
    (0..elements)
        .map(|_| {
            let mut s = SeqSample {
                obs_input: Vec::new(),
                obs_target: Vec::new(),
                actions: Vec::new(),
                rewards: Vec::new(),
                post_noise: Vec::new(),
                prior_noise: Vec::new(),
            };
            for t in 0..seq_len {
                s.obs_input
                    .push((0..cfg.in_dim()).map(|_| rng.gen_range(-0.5..0.5)).collect());
                s.obs_target.push(
                    (0..cfg.out_dim())
                        .map(|_| if rng.gen_bool(0.5) { 0.5 } else { -0.5 })
                        .collect(),
                );
                s.actions.push(if t == 0 {
                    [0.0; 4]
                } else {
                    [
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    ]
                });
                s.rewards.push(if t == 0 { 0.0 } else { rng.gen_range(-1.0..1.0) });
                s.post_noise
                    .push((0..cfg.z_dim).map(|_| rng.sample(StandardNormal)).collect());
                s.prior_noise
                    .push((0..cfg.z_dim).map(|_| rng.sample(StandardNormal)).collect());
            }
            s
        })
        .collect()
}

/// Criterion 1: analytic gradients match central finite differences on the
/// tiny model within 1e-4 relative error, in under a minute.
fn criterion_gradient_oracle(out: &mut Outcomes) {
    let started = Instant::now();
    let mut model = RssmModel::init(ModelConfig::tiny(), 42);
    let batch = random_batch(&model, 2, 3, 7);
    let cfg = LossConfig {
        kl_mode: KlMode::Plain,
        free_nats: 0.0,
        weights: LossWeights::default(),
    };
    let (_, grads) = rssm_loss_with_grads(&model, &batch, &cfg).unwrap();
    let analytic = grads.to_flat();
    let flat = model.params.to_flat();
    let step = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..flat.len() {
        let mut plus = flat.clone();
        plus[i] += step;
        model.params.set_from_flat(&plus);
        let fp = rssm_loss(&model, &batch, &cfg).unwrap().total;
        let mut minus = flat.clone();
        minus[i] -= step;
        model.params.set_from_flat(&minus);
        let fm = rssm_loss(&model, &batch, &cfg).unwrap().total;
        let numeric = (fp - fm) / (2.0 * step);
        let a = analytic[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
    }
    model.params.set_from_flat(&flat);
    let elapsed = started.elapsed().as_secs_f64();
    let passed = worst < 1e-4 && elapsed < 60.0;
    out.record(
        "criterion 1 (gradient oracle)",
        passed,
        true,
        format!(
            "{} params checked, max rel err {worst:.2e} (< 1e-4), {elapsed:.1}s (< 60s)",
            flat.len()
        ),
    );
}

/// Criterion 2: KL-balancing stop-gradient routing and the closed form.
fn criterion_kl_routing(out: &mut Outcomes) {
    let exact = kl_diag_value(&[1.0], &[1.0], &[0.0], &[1.0]);
    let (v1, g1) = kl_balanced_with_input_grads(&[1.0], &[1.0], &[0.0], &[1.0], 1.0);
    let post_zero = g1[0]
        .iter()
        .chain(&g1[1])
        .fold(0.0f64, |m, g| m.max(g.abs()));
    let (_, g0) = kl_balanced_with_input_grads(&[1.0], &[0.9], &[0.2], &[1.3], 0.0);
    let prior_zero = g0[2]
        .iter()
        .chain(&g0[3])
        .fold(0.0f64, |m, g| m.max(g.abs()));

    // model level: with the recurrence severed, α = 1 must leave the
    // posterior head (and encoder) untouched by the KL term
    let mut model = RssmModel::init(ModelConfig::tiny(), 45);
    for id in 0..model.params.len() {
        if model.params.name(id).starts_with("gru.") {
            for v in &mut model.params.get_mut(id).data {
                *v = 0.0;
            }
        }
    }
    let batch = random_batch(&model, 2, 3, 10);
    let cfg = LossConfig {
        kl_mode: KlMode::Balanced { alpha: 1.0 },
        free_nats: 0.0,
        weights: LossWeights {
            obs: 0.0,
            reward: 0.0,
            kl: 1.0,
            prior_reward: 0.0,
        },
    };
    let (_, grads) = rssm_loss_with_grads(&model, &batch, &cfg).unwrap();
    let mut head_max = 0.0f64;
    for (id, t) in grads.tensors.iter().enumerate() {
        if model.params.name(id).starts_with("post.") {
            head_max = t.data.iter().fold(head_max, |m, g| m.max(g.abs()));
        }
    }

    let passed = exact == 0.5 && v1 == 0.5 && post_zero < 1e-10 && prior_zero < 1e-10 && head_max < 1e-10;
    out.record(
        "criterion 2 (KL balancing routing)",
        passed,
        true,
        format!(
            "KL(N(1,1)||N(0,1)) = {exact}; α=1 posterior grads {post_zero:.1e}, α=0 prior grads {prior_zero:.1e}, posterior-head grads {head_max:.1e} (all < 1e-10)"
        ),
    );
}

/// Criterion 3: CEM converges on f(a) = -|a - a*|² with monotone elites.
fn criterion_cem_oracle(out: &mut Outcomes) {
    let mut rng = rng_from_seed(123);
    let mut worst_gap = 0.0f64;
    let mut monotone = true;
    for trial in 0..10u64 {
        let target: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let cfg = CemConfig {
            population: 500,
            iterations: 30,
            horizon: 1,
            mask_source: MaskSource::None,
            ..CemConfig::default()
        };
        let (dist, stats) = cem_optimize(&cfg, None, 5000 + trial, |cands, _| {
            Ok(cands
                .iter()
                .map(|c| {
                    -c.iter()
                        .zip(&target)
                        .map(|(a, t)| (a - t) * (a - t))
                        .sum::<f64>()
                })
                .collect())
        })
        .unwrap();
        for d in 0..4 {
            worst_gap = worst_gap.max((dist.mean[d] - target[d]).abs());
        }
        monotone &= stats.best_scores.windows(2).all(|w| w[1] >= w[0]);
    }
    let passed = worst_gap < 1e-2 && monotone;
    out.record(
        "criterion 3 (CEM oracle)",
        passed,
        true,
        format!("10 targets, worst |mean - a*| = {worst_gap:.2e} (< 1e-2), monotone elites: {monotone}"),
    );
}

/// Criterion 6: the nine-case reward table, hand-computed.
fn criterion_reward_table(out: &mut Outcomes) {
    let cfg = RewardConfig::default();
    let grasp = PickOutcome {
        grasped: true,
        grasped_particle: Some(0),
        pick_point: [0.0; 2],
        place_point: [0.0; 2],
    };
    let miss = PickOutcome {
        grasped: false,
        grasped_particle: None,
        pick_point: [0.0; 2],
        place_point: [0.0; 2],
    };
    let small = PickPlaceAction::new(0.3, -0.2, 0.1, 0.25);
    let large = PickPlaceAction::new(0.8, 0.0, 0.0, 0.0);
    let boundary = PickPlaceAction::new(0.7, 0.0, 0.0, 0.0);

    // (name, nc_prev, nc_next, action, outcome, expected)
    let cases: Vec<(&str, f64, f64, &PickPlaceAction, &PickOutcome, f64)> = vec![
        ("coverage delta alone", 0.5, 0.6, &small, &grasp, 0.1),
        ("zero identity", 0.5, 0.5, &small, &grasp, 0.0),
        ("mispick alone", 0.5, 0.5, &small, &miss, -0.5),
        ("large action alone", 0.5, 0.6, &large, &grasp, 0.1 - 0.5),
        ("boundary 0.7 counts as large", 0.5, 0.6, &boundary, &grasp, 0.1 - 0.5),
        ("unflattening alone", 0.6, 0.5, &small, &grasp, -0.1 - 0.5),
        ("high-coverage bonus", 0.90, 0.96, &small, &grasp, 0.06 + 0.5),
        ("mispick + large action", 0.5, 0.5, &large, &miss, -1.0),
        (
            "all penalties stacked",
            0.6,
            0.45,
            &large,
            &miss,
            (0.45 - 0.6) - 0.5 - 0.5 - 0.5,
        ),
    ];
    let mut failures = Vec::new();
    for (name, prev, next, action, outcome, expect) in &cases {
        let got = compute_reward(*prev, *next, action, outcome, &cfg);
        if (got - expect).abs() > 1e-12 {
            failures.push(format!("{name}: got {got}, expected {expect}"));
        }
    }
    out.record(
        "criterion 6 (reward-function table)",
        failures.is_empty(),
        true,
        if failures.is_empty() {
            format!("{} hand-computed cases exact", cases.len())
        } else {
            failures.join("; ")
        },
    );
}

/// Criterion 8: NC/NI identities and Table-style tier exemplars.
fn criterion_metric_identities(out: &mut Outcomes) {
    let ni_full = compute_ni(250, 500, 500).unwrap();
    let ni_mid = compute_ni(250, 375, 500).unwrap();
    let ni_neg = compute_ni(250, 200, 500).unwrap();
    let ok_metrics = (ni_full - 1.0).abs() < 1e-12
        && (ni_mid - 0.5).abs() < 1e-12
        && ni_neg < 0.0
        && (compute_nc(500, 500) - 1.0).abs() < 1e-12
        && compute_ni(500, 400, 500).is_err();
    let ok_tiers =
        assign_tier(0.9764) == 0 && assign_tier(0.4088) == 3 && assign_tier(0.2839) == 4;
    out.record(
        "criterion 8 (metric identities)",
        ok_metrics && ok_tiers,
        true,
        format!(
            "NI(full) = {ni_full}, NI(mid) = {ni_mid}, NI(unflatten) = {ni_neg:.3}; tiers 0.9764→0, 0.4088→3, 0.2839→4"
        ),
    );
}

/// Criterion 7: mixture apportionment and the high-coverage floor.
fn criterion_mixture(out: &mut Outcomes, work: &Path, dataset: &Dataset, high_count: usize) {
    // 1000-main-episode gen-data run with paper weights (short episodes keep
    // the check affordable; counts do not depend on episode length)
    let mut cfg = Config::default();
    cfg.set("env.max_steps", "2").unwrap();
    cfg.set("obs.resolution", "16").unwrap();
    cfg.set("data.main_episodes", "1000").unwrap();
    cfg.set("data.high_coverage_episodes", "0").unwrap();
    let spec = MixtureSpec::from_config(&cfg).unwrap();
    let path = work.join("mixture_1000.cpds");
    let manifest = generate_dataset(&spec, &cfg, 77, &path).unwrap();
    let count = |k: PolicyKind| manifest.count(k);
    let counts_ok = count(PolicyKind::PureRandom) == 100
        && count(PolicyKind::CornerBiased) == 100
        && count(PolicyKind::OracleFlatten) + count(PolicyKind::OracleFold) == 400
        && count(PolicyKind::NoisyExpert) == 300
        && count(PolicyKind::Mix) == 100;

    // apportionment is also exact as a pure function
    let pure = apportion(
        1000,
        &[
            (PolicyKind::PureRandom, 0.10),
            (PolicyKind::CornerBiased, 0.10),
            (PolicyKind::OracleFlatten, 0.25),
            (PolicyKind::OracleFold, 0.15),
            (PolicyKind::NoisyExpert, 0.30),
            (PolicyKind::Mix, 0.10),
        ],
    );
    let pure_total: usize = pure.iter().map(|(_, c)| c).sum();

    // the desk dataset's high-coverage block (its trailing episodes)
    let high_start = dataset.episodes.len() - high_count;
    let floor_ok = dataset.episodes[high_start..]
        .iter()
        .all(|e| e.initial_nc >= 0.85);

    let passed = counts_ok && pure_total == 1000 && floor_ok;
    out.record(
        "criterion 7 (mixture exactness)",
        passed,
        true,
        format!(
            "counts {}/{}/{}/{}/{} (flatten+fold = {}), high block {high_count} episodes all ≥ 0.85: {floor_ok}",
            count(PolicyKind::PureRandom),
            count(PolicyKind::CornerBiased),
            count(PolicyKind::OracleFlatten) + count(PolicyKind::OracleFold),
            count(PolicyKind::NoisyExpert),
            count(PolicyKind::Mix),
            count(PolicyKind::OracleFlatten) + count(PolicyKind::OracleFold),
        ),
    );
}

fn desk_config() -> Config {
    // desk-scale defaults: 8x8 cloth, 32x32 heightfield+mask observations,
    // D2Mask model, population 500 / 20 iterations
    Config::default()
}

/// Pooled mean NI at a record step over tiers 1..=4 (tier 0 NI is
/// ill-conditioned: the denominator C_flat - C_0 approaches zero).
fn mean_ni_at(traces: &[EpisodeTrace], step: usize) -> (f64, usize) {
    let nis: Vec<f64> = traces
        .iter()
        .filter(|t| t.tier >= 1)
        .filter_map(|t| t.ni_at(step))
        .collect();
    let n = nis.len();
    (nis.iter().sum::<f64>() / n.max(1) as f64, n)
}

struct DeskRun {
    dataset: Dataset,
    full_model: RssmModel,
    nokl_model: RssmModel,
    masked_traces: Vec<EpisodeTrace>,
    unmasked_traces: Vec<EpisodeTrace>,
    nokl_traces: Vec<EpisodeTrace>,
}

/// Criterion 5 (and artifacts for 4b and 10): the full desk pipeline.
fn run_desk_pipeline(out: &mut Outcomes, work: &Path) -> DeskRun {
    let cfg = desk_config();
    let started = Instant::now();

    // 2,240 episodes: 2,000 main + 240 high-coverage
    let spec = MixtureSpec::from_config(&cfg).unwrap();
    let data_path = work.join("desk_dataset.cpds");
    let manifest = generate_dataset(&spec, &cfg, 1001, &data_path).unwrap();
    std::fs::write(work.join("desk_manifest.csv"), manifest.to_csv()).unwrap();
    let dataset = read_dataset(&data_path).unwrap();
    println!(
        "  [desk] dataset: {} episodes in {:.0}s",
        dataset.episodes.len(),
        started.elapsed().as_secs_f64()
    );

    // train the full pipeline and the no-KL-balancing ablation
    let t0 = Instant::now();
    let full_model = train_variant(&cfg, &dataset, &work.join("desk_full"), 2001).unwrap();
    println!("  [desk] full model trained in {:.0}s", t0.elapsed().as_secs_f64());
    let t0 = Instant::now();
    let mut nokl_cfg = cfg.clone();
    nokl_cfg.set("train.kl_balanced", "false").unwrap();
    let nokl_model = train_variant(&nokl_cfg, &dataset, &work.join("desk_nokl"), 2001).unwrap();
    println!("  [desk] no-KL model trained in {:.0}s", t0.elapsed().as_secs_f64());

    // evaluate: 20 seeds per tier, tiers 0-4
    let tiers = [0u8, 1, 2, 3, 4];
    let seeds_per_tier = 20;
    let env = ClothEnv::new(&cfg).unwrap();
    let threshold = env.obs_config.depth_threshold();
    let base_cem = CemConfig::from_config(&cfg).unwrap();
    let eval_seed = 3001;

    let eval = |model: &RssmModel, mask: MaskSource, label: &str| {
        let t0 = Instant::now();
        let cem = CemConfig {
            mask_source: mask,
            ..base_cem.clone()
        };
        let traces = evaluate_grid(
            || PlannerAgent::new(RssmPlanner::new(model, cem.clone(), threshold)),
            &cfg,
            &tiers,
            seeds_per_tier,
            eval_seed,
        )
        .unwrap();
        println!(
            "  [desk] eval {label}: {} episodes in {:.0}s",
            traces.len(),
            t0.elapsed().as_secs_f64()
        );
        traces
    };

    let masked_traces = eval(&full_model, MaskSource::Environment, "masked/full");
    let unmasked_traces = eval(&full_model, MaskSource::None, "unmasked/full");
    let nokl_traces = eval(&nokl_model, MaskSource::Environment, "masked/no-KL");

    let (ni_masked, n1) = mean_ni_at(&masked_traces, 10);
    let (ni_unmasked, n2) = mean_ni_at(&unmasked_traces, 10);
    let (ni_nokl, n3) = mean_ni_at(&nokl_traces, 10);
    let ordering_mask = ni_masked > ni_unmasked;
    let ordering_kl = ni_masked > ni_nokl;
    out.record(
        "criterion 5 (end-to-end desk run)",
        ordering_mask && ordering_kl,
        true,
        format!(
            "mean NI@10 (tiers 1-4): masked {ni_masked:.3} (n={n1}) vs unmasked {ni_unmasked:.3} (n={n2}) [{}]; full {ni_masked:.3} vs no-KL {ni_nokl:.3} (n={n3}) [{}]; total {:.0}s",
            if ordering_mask { "ok" } else { "violated" },
            if ordering_kl { "ok" } else { "violated" },
            started.elapsed().as_secs_f64()
        ),
    );

    DeskRun {
        dataset,
        full_model,
        nokl_model,
        masked_traces,
        unmasked_traces,
        nokl_traces,
    }
}

/// Criterion 4: mask constraint on 100 random states; out-of-mask picks from
/// the unmasked planner on tier-3 episodes of the trained model.
fn criterion_mask_constraint(out: &mut Outcomes, desk: &DeskRun) {
    let cfg = desk_config();
    let mut env = ClothEnv::new(&cfg).unwrap();
    let threshold = env.obs_config.depth_threshold();
    let cem = CemConfig {
        population: 150,
        iterations: 4,
        mask_source: MaskSource::Environment,
        ..CemConfig::from_config(&cfg).unwrap()
    };
    let mut inside = 0;
    let total = 100;
    for seed in 0..total {
        env.reset(derive_seed(4000, seed), None).unwrap();
        let obs = env.render().unwrap();
        let mask = env.current_mask().unwrap();
        let mut planner = RssmPlanner::new(&desk.full_model, cem.clone(), threshold);
        let result = planner.plan_step(&obs, seed).unwrap();
        if mask.contains_point(result.action.x_pick, result.action.y_pick) {
            inside += 1;
        }
    }

    // unmasked MPC-CEM out-of-mask rate over tier-3 episodes (from 5's traces)
    let tier3: Vec<&EpisodeTrace> = desk
        .unmasked_traces
        .iter()
        .filter(|t| t.tier == 3)
        .collect();
    let with_outside = tier3
        .iter()
        .filter(|t| t.steps.iter().any(|s| !s.pick_in_env_mask))
        .count();
    let outside_rate = with_outside as f64 / tier3.len().max(1) as f64;

    let passed = inside == total && outside_rate >= 0.20;
    out.record(
        "criterion 4 (mask constraint)",
        passed,
        true,
        format!(
            "masked picks inside mask {inside}/{total}; unmasked episodes with ≥1 out-of-mask pick: {with_outside}/{} ({:.0}%, need ≥ 20%)",
            tier3.len(),
            outside_rate * 100.0
        ),
    );
}

/// Criterion 9: byte-identical reruns of gen-data, train, rollout, eval via
/// the CLI with fixed seeds (single worker).
fn criterion_determinism(out: &mut Outcomes, work: &Path) {
    let bin = env!("CARGO_BIN_EXE_clothpick");
    let run = |args: &[&str]| {
        let output = Command::new(bin)
            .args(args)
            .env_remove("CLOTHPICK_CONFIG")
            .output()
            .expect("spawn clothpick");
        assert!(
            output.status.success(),
            "{:?}: {}",
            args,
            String::from_utf8_lossy(&output.stderr)
        );
    };
    let tiny: Vec<String> = [
        "env.max_steps=4",
        "obs.resolution=16",
        "rssm.h_dim=8",
        "rssm.z_dim=4",
        "rssm.embed_dim=8",
        "rssm.hidden_width=8",
        "train.batch_size=2",
        "train.sequence_length=3",
        "train.steps=3",
        "plan.population=12",
        "plan.iterations=2",
        "eval.tiers=2",
        "eval.seeds_per_tier=2",
        "eval.record_steps=2,4",
    ]
    .iter()
    .flat_map(|kv| ["--set".to_string(), kv.to_string()])
    .collect();
    let tiny_refs: Vec<&str> = tiny.iter().map(|s| s.as_str()).collect();

    let mut all_equal = true;
    let mut detail = Vec::new();
    for round in ["a", "b"] {
        let root = work.join(format!("det_{round}"));
        let data = root.join("gen");
        let mut args = vec![
            "gen-data",
            "--out",
            data.to_str().unwrap(),
            "--episodes",
            "4",
            "--high-episodes",
            "0",
            "--seed",
            "13",
            "--deterministic",
        ];
        args.extend(&tiny_refs);
        run(&args);

        let train_dir = root.join("train");
        let dataset = data.join("dataset.cpds");
        let mut args = vec![
            "train",
            "--data",
            dataset.to_str().unwrap(),
            "--out",
            train_dir.to_str().unwrap(),
            "--seed",
            "14",
            "--deterministic",
        ];
        args.extend(&tiny_refs);
        run(&args);

        let ckpt = train_dir.join("model_final.rssm");
        let roll_dir = root.join("rollout");
        let mut args = vec![
            "rollout",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--out",
            roll_dir.to_str().unwrap(),
            "--seed",
            "15",
            "--deterministic",
        ];
        args.extend(&tiny_refs);
        run(&args);

        let eval_dir = root.join("eval");
        let mut args = vec![
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--out",
            eval_dir.to_str().unwrap(),
            "--seed",
            "16",
            "--deterministic",
        ];
        args.extend(&tiny_refs);
        run(&args);
    }

    for rel in [
        "gen/dataset.cpds",
        "gen/manifest.csv",
        "gen/config.txt",
        "train/loss.csv",
        "train/model_final.rssm",
        "rollout/traces.csv",
        "rollout/tier_report.csv",
        "eval/tier_report.csv",
    ] {
        let a = std::fs::read(work.join("det_a").join(rel)).unwrap();
        let b = std::fs::read(work.join("det_b").join(rel)).unwrap();
        let equal = a == b;
        all_equal &= equal;
        if !equal {
            detail.push(format!("{rel} differs"));
        }
    }
    // rollout trace files
    let traces_a: Vec<_> = std::fs::read_dir(work.join("det_a/rollout")).unwrap().count().to_string().into_bytes();
    let traces_b: Vec<_> = std::fs::read_dir(work.join("det_b/rollout")).unwrap().count().to_string().into_bytes();
    all_equal &= traces_a == traces_b;

    out.record(
        "criterion 9 (determinism)",
        all_equal,
        true,
        if all_equal {
            "gen-data, train, rollout, eval reran byte-identically".to_string()
        } else {
            detail.join("; ")
        },
    );
}

/// Criterion 10: horizon preset completes; horizon-1 vs horizon-3 NI is a
/// reported finding (empirical claim, not a hard gate).
fn criterion_horizon_study(out: &mut Outcomes, work: &Path, desk: &DeskRun) {
    let mut cfg = desk_config();
    cfg.set("eval.tiers", "3").unwrap();
    cfg.set("eval.seeds_per_tier", "8").unwrap();
    cfg.set("eval.record_steps", "5,10,20").unwrap();
    let dir = work.join("horizon_sweep");
    let rows = planner_sweep_on_model(&desk.full_model, &cfg, &dir, 6001);
    match rows {
        Ok(rows) => {
            let csv_ok = dir.join("planner_sweep.csv").exists();
            let ni_at = |horizon: usize| -> Option<f64> {
                rows.iter().find_map(|r| {
                    let cols: Vec<&str> = r.split(',').collect();
                    if cols[2] == horizon.to_string() && cols[3] == "3" && cols[4] == "10" {
                        cols[7].parse::<f64>().ok()
                    } else {
                        None
                    }
                })
            };
            let h1 = ni_at(1);
            let h3 = ni_at(3);
            let completed = csv_ok && h1.is_some() && h3.is_some();
            out.record(
                "criterion 10 (horizon study: sweep completes)",
                completed,
                true,
                format!("CSV emitted with horizons 1-3: {completed}"),
            );
            if let (Some(h1), Some(h3)) = (h1, h3) {
                let holds = h1 >= h3;
                out.record(
                    "criterion 10 (horizon-1 ≥ horizon-3 NI@10, reported finding)",
                    holds,
                    false,
                    format!(
                        "NI@10 tier 3: horizon 1 = {h1:.3}, horizon 3 = {h3:.3} ({})",
                        if holds {
                            "matches the multi-step-struggle claim"
                        } else {
                            "inequality violated; logged as a finding"
                        }
                    ),
                );
            }
        }
        Err(e) => {
            out.record(
                "criterion 10 (horizon study: sweep completes)",
                false,
                true,
                format!("sweep failed: {e}"),
            );
        }
    }
}

fn keep_artifacts_dir() -> Result<PathBuf> {
    // large artifacts live under target/ so `cargo clean` removes them
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    if dir.exists() {
        std::fs::remove_dir_all(&dir)?;
    }
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

#[test]
fn acceptance() {
    let work = keep_artifacts_dir().unwrap();
    let mut out = Outcomes::new();

    criterion_gradient_oracle(&mut out);
    criterion_kl_routing(&mut out);
    criterion_cem_oracle(&mut out);
    criterion_reward_table(&mut out);
    criterion_metric_identities(&mut out);

    let desk = run_desk_pipeline(&mut out, &work);
    criterion_mask_constraint(&mut out, &desk);
    criterion_mixture(&mut out, &work, &desk.dataset, 240);
    criterion_determinism(&mut out, &work);
    criterion_horizon_study(&mut out, &work, &desk);

    // keep the no-KL model alive in the report for reference
    println!(
        "  [desk] params: full {} / no-KL {} ({} transitional)",
        desk.full_model.param_count(),
        desk.nokl_model.param_count(),
        desk.full_model.transitional_param_count()
    );

    println!("\n==== acceptance summary ====");
    for (line, _, _) in &out.lines {
        println!("{line}");
    }
    let required_failures: Vec<&String> = out
        .lines
        .iter()
        .filter(|(_, passed, required)| *required && !passed)
        .map(|(line, _, _)| line)
        .collect();
    assert!(
        required_failures.is_empty(),
        "required criteria failed:\n{}",
        required_failures
            .iter()
            .map(|s| s.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    );

    // criterion 5's evaluation artifacts are summarized for the logs
    let masked_n = desk.masked_traces.len();
    let unmasked_n = desk.unmasked_traces.len();
    let nokl_n = desk.nokl_traces.len();
    println!("episodes evaluated: masked {masked_n}, unmasked {unmasked_n}, no-KL {nokl_n}");
}
