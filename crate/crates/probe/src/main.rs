// probe: reward-head fit quality for a checkpoint against a dataset
use clothpick_core::datagen::read_dataset;
use clothpick_core::eval::presets::model_eval_metrics;
use clothpick_core::rssm::train::load_checkpoint_with_state;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let ckpt = std::path::Path::new(&args[1]);
    let data = std::path::Path::new(&args[2]);
    let (model, _, step, _) = load_checkpoint_with_state(ckpt).unwrap();
    let dataset = read_dataset(data).unwrap();
    let n = dataset.episodes.len();
    let m = model_eval_metrics(&model, &dataset, (n - 50)..n, 40, 10, 3).unwrap();
    println!("checkpoint step {step}");
    println!("post_obs_mse  {:.4}  prior_obs_mse  {:.4}", m.post_obs_mse, m.prior_obs_mse);
    println!("post_rew_mse  {:.4}  prior_rew_mse  {:.4}", m.post_reward_mse, m.prior_reward_mse);
    println!("entropy post {:.3} prior {:.3}  avg_kl {:.3}", m.post_entropy, m.prior_entropy, m.avg_kl);
    let mut rewards = Vec::new();
    for ep in &dataset.episodes[(n - 50)..] {
        rewards.extend(ep.rewards.iter().map(|r| *r as f64));
    }
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / rewards.len() as f64;
    println!("reward variance {var:.4} (mse of predicting the mean)");
}
