use super::*;
use crate::env::{Channel, PickPlaceAction};
use crate::rssm::model::ModelConfig;
use tempfile::tempdir;

/// Synthetic episodes with learnable structure: a bright square whose
/// position follows the action, rewards tied to the square's position.
struct ToySource {
    episodes: usize,
    frames: usize,
    resolution: usize,
}

impl ToySource {
    fn frame(&self, episode: usize, t: usize) -> Vec<Vec<f64>> {
        let n = self.resolution;
        let cells = n * n;
        let cx = (episode * 3 + t * 2) % (n - 2);
        let cy = (episode + t) % (n - 2);
        let mut height = vec![-0.5; cells];
        let mut mask = vec![-0.5; cells];
        for r in cy..cy + 2 {
            for c in cx..cx + 2 {
                height[r * n + c] = 0.3;
                mask[r * n + c] = 0.5;
            }
        }
        vec![height, mask]
    }

    fn action(&self, episode: usize, t: usize) -> PickPlaceAction {
        let a = ((episode * 7 + t * 3) % 11) as f64 / 11.0 - 0.5;
        PickPlaceAction::new(a, -a, a * 0.5, 0.2)
    }

    fn reward(&self, episode: usize, t: usize) -> f64 {
        (((episode + t * 5) % 7) as f64) / 7.0 - 0.4
    }
}

impl SequenceSource for ToySource {
    fn episode_count(&self) -> usize {
        self.episodes
    }

    fn frames_per_episode(&self) -> usize {
        self.frames
    }

    fn grid_seq(&self, episode: usize, start: usize, len: usize) -> GridSeq {
        let mut frames = Vec::with_capacity(len);
        let mut actions = Vec::with_capacity(len);
        let mut rewards = Vec::with_capacity(len);
        for t in 0..len {
            frames.push(self.frame(episode, start + t));
            if t == 0 {
                actions.push(PickPlaceAction::new(0.0, 0.0, 0.0, 0.0));
                rewards.push(0.0);
            } else {
                actions.push(self.action(episode, start + t - 1));
                rewards.push(self.reward(episode, start + t - 1));
            }
        }
        GridSeq {
            resolution: self.resolution,
            channels: vec![Channel::Heightfield, Channel::Mask],
            frames,
            actions,
            rewards,
        }
    }
}

fn toy_source() -> ToySource {
    ToySource {
        episodes: 12,
        frames: 8,
        resolution: 8,
    }
}

fn tiny_training(steps: u64) -> TrainingConfig {
    TrainingConfig {
        batch_size: 4,
        sequence_length: 4,
        steps,
        checkpoint_every: 0,
        free_nats: 0.5,
        ..TrainingConfig::default()
    }
}

#[test]
fn zero_learning_rate_keeps_params_bitwise() {
    let mut model = RssmModel::init(ModelConfig::tiny(), 1);
    let before = model.params.to_flat();
    let mut adam = Adam::new(&model);
    let cfg = TrainingConfig {
        learning_rate: 0.0,
        steps: 1,
        ..tiny_training(1)
    };
    train(
        &mut model,
        &mut adam,
        &toy_source(),
        &cfg,
        &TrainRun::new(5),
        &Config::default(),
    )
    .unwrap();
    let after = model.params.to_flat();
    assert!(before
        .iter()
        .zip(&after)
        .all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn short_training_decreases_the_loss() {
    let mut model = RssmModel::init(ModelConfig::tiny(), 2);
    let mut adam = Adam::new(&model);
    let cfg = TrainingConfig {
        learning_rate: 1e-3,
        ..tiny_training(200)
    };
    let logs = train(
        &mut model,
        &mut adam,
        &toy_source(),
        &cfg,
        &TrainRun::new(7),
        &Config::default(),
    )
    .unwrap();
    let first: f64 = logs[..10].iter().map(|l| l.breakdown.total).sum::<f64>() / 10.0;
    let last: f64 = logs[logs.len() - 10..]
        .iter()
        .map(|l| l.breakdown.total)
        .sum::<f64>()
        / 10.0;
    assert!(last < first, "loss did not decrease: {first} -> {last}");
}

#[test]
fn training_is_deterministic() {
    let run = |seed: u64| {
        let mut model = RssmModel::init(ModelConfig::tiny(), 3);
        let mut adam = Adam::new(&model);
        let cfg = tiny_training(5);
        let logs = train(
            &mut model,
            &mut adam,
            &toy_source(),
            &cfg,
            &TrainRun::new(seed),
            &Config::default(),
        )
        .unwrap();
        (model.params.to_flat(), logs)
    };
    let (p1, l1) = run(11);
    let (p2, l2) = run(11);
    assert_eq!(p1, p2);
    for (a, b) in l1.iter().zip(&l2) {
        assert_eq!(a.breakdown.total.to_bits(), b.breakdown.total.to_bits());
    }
}

#[test]
fn resume_reproduces_uninterrupted_training() {
    let dir = tempdir().unwrap();
    let source = toy_source();
    let mut snapshot = Config::default();
    ModelConfig::tiny().apply_to(&mut snapshot).unwrap();

    // uninterrupted: 6 steps with a checkpoint after step 3
    let mut model_a = RssmModel::init(ModelConfig::tiny(), 4);
    let mut adam_a = Adam::new(&model_a);
    let cfg = TrainingConfig {
        checkpoint_every: 3,
        ..tiny_training(6)
    };
    let run_a = TrainRun::new(21).with_out_dir(dir.path());
    let logs_a = train(&mut model_a, &mut adam_a, &source, &cfg, &run_a, &snapshot).unwrap();

    // resume from the step-3 checkpoint and continue to step 6
    let ckpt = dir.path().join("model_step_0000003.rssm");
    let (mut model_b, mut adam_b, step, _) = load_checkpoint_with_state(&ckpt).unwrap();
    assert_eq!(step, 3);
    let run_b = TrainRun::new(21).starting_at(3);
    let logs_b = train(&mut model_b, &mut adam_b, &source, &cfg, &run_b, &snapshot).unwrap();

    assert_eq!(logs_b.len(), 3);
    for (a, b) in logs_a[3..].iter().zip(&logs_b) {
        assert_eq!(a.step, b.step);
        assert_eq!(a.breakdown.total.to_bits(), b.breakdown.total.to_bits());
    }
    assert_eq!(model_a.params.to_flat(), model_b.params.to_flat());
}

#[test]
fn loss_csv_has_one_row_per_step() {
    let dir = tempdir().unwrap();
    let mut model = RssmModel::init(ModelConfig::tiny(), 6);
    let mut adam = Adam::new(&model);
    let cfg = tiny_training(4);
    let run = TrainRun::new(9).with_out_dir(dir.path());
    train(&mut model, &mut adam, &toy_source(), &cfg, &run, &Config::default()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("loss.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], LOSS_CSV_HEADER);
    assert_eq!(lines.len(), 1 + 4);
}

#[test]
fn empty_dataset_is_a_contract_error() {
    let mut model = RssmModel::init(ModelConfig::tiny(), 6);
    let mut adam = Adam::new(&model);
    let source = ToySource {
        episodes: 0,
        frames: 8,
        resolution: 8,
    };
    assert!(matches!(
        train(
            &mut model,
            &mut adam,
            &source,
            &tiny_training(1),
            &TrainRun::new(1),
            &Config::default()
        ),
        Err(Error::Contract(_))
    ));
}
