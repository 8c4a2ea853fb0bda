//! RSSM architecture: encoder, gated recurrent cell, posterior/prior heads,
//! observation decoder and the two reward heads.
//!
//! The plain forward path here is what the planner and evaluator use; the
//! taped twin in `loss.rs` builds the same arithmetic on the autodiff tape.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::Config;
use crate::env::Channel;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::rssm::tape::{elu, matvec_into, sigmoid, softplus, ParamId, ParamSet, Tensor};

/// Floor added to the softplus std parameterization.
pub const STD_FLOOR: f64 = 1e-3;

/// Architecture hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub h_dim: usize,
    pub z_dim: usize,
    pub embed_dim: usize,
    pub hidden_width: usize,
    pub resolution: usize,
    pub input_channels: Vec<Channel>,
    pub output_channels: Vec<Channel>,
}

impl ModelConfig {
    pub fn from_config(cfg: &Config) -> Result<ModelConfig> {
        Ok(ModelConfig {
            h_dim: cfg.get_usize("rssm.h_dim")?,
            z_dim: cfg.get_usize("rssm.z_dim")?,
            embed_dim: cfg.get_usize("rssm.embed_dim")?,
            hidden_width: cfg.get_usize("rssm.hidden_width")?,
            resolution: cfg.get_usize("obs.resolution")?,
            input_channels: Channel::parse_list(&cfg.get_list("rssm.input_channels"))?,
            output_channels: Channel::parse_list(&cfg.get_list("rssm.output_channels"))?,
        })
    }

    /// Tiny configuration used by the gradient-check harness.
    pub fn tiny() -> ModelConfig {
        ModelConfig {
            h_dim: 8,
            z_dim: 4,
            embed_dim: 16,
            hidden_width: 16,
            resolution: 8,
            input_channels: vec![Channel::Heightfield],
            output_channels: vec![Channel::Mask],
        }
    }

    /// Write this architecture back into config keys (so a checkpoint's
    /// config echo always matches the saved tensors).
    pub fn apply_to(&self, cfg: &mut crate::config::Config) -> crate::error::Result<()> {
        cfg.set("rssm.h_dim", &self.h_dim.to_string())?;
        cfg.set("rssm.z_dim", &self.z_dim.to_string())?;
        cfg.set("rssm.embed_dim", &self.embed_dim.to_string())?;
        cfg.set("rssm.hidden_width", &self.hidden_width.to_string())?;
        cfg.set("obs.resolution", &self.resolution.to_string())?;
        let list = |chs: &[Channel]| {
            chs.iter().map(|c| c.name()).collect::<Vec<_>>().join(",")
        };
        cfg.set("rssm.input_channels", &list(&self.input_channels))?;
        cfg.set("rssm.output_channels", &list(&self.output_channels))?;
        Ok(())
    }

    pub fn in_dim(&self) -> usize {
        self.input_channels.len() * self.resolution * self.resolution
    }

    pub fn out_dim(&self) -> usize {
        self.output_channels.len() * self.resolution * self.resolution
    }

    /// GRU input: previous stochastic state plus the 4-vector action.
    pub fn gru_in_dim(&self) -> usize {
        self.z_dim + 4
    }
}

/// Deterministic + stochastic latent state.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub h: Vec<f64>,
    pub z_mean: Vec<f64>,
    pub z_std: Vec<f64>,
    pub z_sample: Vec<f64>,
}

impl LatentState {
    /// Episode-start state: all-zero h and z, unit std.
    pub fn zero(cfg: &ModelConfig) -> LatentState {
        LatentState {
            h: vec![0.0; cfg.h_dim],
            z_mean: vec![0.0; cfg.z_dim],
            z_std: vec![1.0; cfg.z_dim],
            z_sample: vec![0.0; cfg.z_dim],
        }
    }
}

/// Parameter ids for every tensor in the model, in checkpoint order.
#[derive(Debug, Clone)]
pub struct ParamIds {
    pub enc: [(ParamId, ParamId); 2],
    pub gru_r: (ParamId, ParamId),
    pub gru_u: (ParamId, ParamId),
    pub gru_c: (ParamId, ParamId),
    pub post: [(ParamId, ParamId); 3],
    pub prior: [(ParamId, ParamId); 3],
    pub dec: [(ParamId, ParamId); 3],
    pub rew_post: [(ParamId, ParamId); 3],
    pub rew_prior: [(ParamId, ParamId); 3],
}

/// The full model: config + named parameters.
#[derive(Debug, Clone)]
pub struct RssmModel {
    pub cfg: ModelConfig,
    pub params: ParamSet,
    pub ids: ParamIds,
}

fn head_dims(in_dim: usize, width: usize, out_dim: usize) -> [(usize, usize); 3] {
    [(width, in_dim), (width, width), (out_dim, width)]
}

impl RssmModel {
    /// Allocate the parameter set (zeros) for a configuration.
    pub fn zeros(cfg: ModelConfig) -> RssmModel {
        let mut params = ParamSet::new();
        let add_layer = |params: &mut ParamSet, name: &str, rows: usize, cols: usize| {
            let w = params.add(&format!("{name}.w"), Tensor::zeros(rows, cols));
            let b = params.add(&format!("{name}.b"), Tensor::zeros(rows, 1));
            (w, b)
        };

        let enc0 = add_layer(&mut params, "enc.0", cfg.hidden_width, cfg.in_dim());
        let enc1 = add_layer(&mut params, "enc.1", cfg.embed_dim, cfg.hidden_width);

        let gru_in = cfg.gru_in_dim() + cfg.h_dim;
        let gru_r = add_layer(&mut params, "gru.reset", cfg.h_dim, gru_in);
        let gru_u = add_layer(&mut params, "gru.update", cfg.h_dim, gru_in);
        let gru_c = add_layer(&mut params, "gru.cand", cfg.h_dim, gru_in);

        let add_head = |params: &mut ParamSet, name: &str, in_dim: usize, out_dim: usize| {
            let dims = head_dims(in_dim, cfg.hidden_width, out_dim);
            [
                add_layer(params, &format!("{name}.0"), dims[0].0, dims[0].1),
                add_layer(params, &format!("{name}.1"), dims[1].0, dims[1].1),
                add_layer(params, &format!("{name}.2"), dims[2].0, dims[2].1),
            ]
        };

        let post = add_head(&mut params, "post", cfg.h_dim + cfg.embed_dim, 2 * cfg.z_dim);
        let prior = add_head(&mut params, "prior", cfg.h_dim, 2 * cfg.z_dim);
        let dec = add_head(&mut params, "dec", cfg.h_dim + cfg.z_dim, cfg.out_dim());
        let rew_post = add_head(&mut params, "rew_post", cfg.h_dim + cfg.z_dim, 1);
        let rew_prior = add_head(&mut params, "rew_prior", cfg.h_dim + cfg.z_dim, 1);

        RssmModel {
            cfg,
            params,
            ids: ParamIds {
                enc: [enc0, enc1],
                gru_r,
                gru_u,
                gru_c,
                post,
                prior,
                dec,
                rew_post,
                rew_prior,
            },
        }
    }

    /// Gaussian init scaled by 1/√fan_in, zero biases.
    pub fn init(cfg: ModelConfig, seed: u64) -> RssmModel {
        let mut model = RssmModel::zeros(cfg);
        let mut rng = rng_from_seed(seed);
        for id in 0..model.params.len() {
            let t = model.params.get_mut(id);
            if t.cols > 1 {
                let scale = 1.0 / (t.cols as f64).sqrt();
                for v in &mut t.data {
                    let n: f64 = rng.sample(StandardNormal);
                    *v = n * scale;
                }
            }
        }
        model
    }

    pub fn param_count(&self) -> usize {
        self.params.total_elements()
    }

    /// Parameters of the transitional components only: recurrent cell,
    /// prior head, posterior head.
    pub fn transitional_param_count(&self) -> usize {
        let mut total = 0;
        for (name, t) in self.params.iter() {
            if name.starts_with("gru.") || name.starts_with("prior.") || name.starts_with("post.")
            {
                total += t.len();
            }
        }
        total
    }

    fn layer(&self, ids: (ParamId, ParamId), x: &[f64]) -> Vec<f64> {
        let w = self.params.get(ids.0);
        let b = self.params.get(ids.1);
        let mut out = vec![0.0; w.rows];
        matvec_into(w, x, &mut out);
        for (o, bv) in out.iter_mut().zip(&b.data) {
            *o += bv;
        }
        out
    }

    fn head3(&self, ids: &[(ParamId, ParamId); 3], x: &[f64]) -> Vec<f64> {
        let mut h = self.layer(ids[0], x);
        h.iter_mut().for_each(|v| *v = elu(*v));
        let mut h2 = self.layer(ids[1], &h);
        h2.iter_mut().for_each(|v| *v = elu(*v));
        self.layer(ids[2], &h2)
    }

    /// Observation embedding.
    pub fn encode(&self, obs: &[f64]) -> Vec<f64> {
        let mut h = self.layer(self.ids.enc[0], obs);
        h.iter_mut().for_each(|v| *v = elu(*v));
        let mut e = self.layer(self.ids.enc[1], &h);
        e.iter_mut().for_each(|v| *v = elu(*v));
        e
    }

    /// Deterministic recurrent update h' = f(h, z, a).
    pub fn gru(&self, h: &[f64], z: &[f64], action: [f64; 4]) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.cfg.gru_in_dim() + h.len());
        x.extend_from_slice(z);
        x.extend_from_slice(&action);
        let mut xh = x.clone();
        xh.extend_from_slice(h);

        let mut r = self.layer(self.ids.gru_r, &xh);
        r.iter_mut().for_each(|v| *v = sigmoid(*v));
        let mut u = self.layer(self.ids.gru_u, &xh);
        u.iter_mut().for_each(|v| *v = sigmoid(*v));

        let mut xrh = x;
        xrh.extend(r.iter().zip(h).map(|(ri, hi)| ri * hi));
        let mut c = self.layer(self.ids.gru_c, &xrh);
        c.iter_mut().for_each(|v| *v = v.tanh());

        u.iter()
            .zip(h)
            .zip(&c)
            .map(|((ui, hi), ci)| ui * hi + (1.0 - ui) * ci)
            .collect()
    }

    fn split_gaussian(&self, raw: Vec<f64>) -> (Vec<f64>, Vec<f64>) {
        let z = self.cfg.z_dim;
        let mean = raw[..z].to_vec();
        let std: Vec<f64> = raw[z..].iter().map(|v| softplus(*v) + STD_FLOOR).collect();
        (mean, std)
    }

    pub fn posterior_params(&self, h: &[f64], embed: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut input = h.to_vec();
        input.extend_from_slice(embed);
        self.split_gaussian(self.head3(&self.ids.post, &input))
    }

    pub fn prior_params(&self, h: &[f64]) -> (Vec<f64>, Vec<f64>) {
        self.split_gaussian(self.head3(&self.ids.prior, h))
    }

    /// Posterior latent step: observation-conditioned.
    pub fn posterior_step(
        &self,
        prev: &LatentState,
        action: [f64; 4],
        obs_input: &[f64],
        noise: &[f64],
    ) -> Result<LatentState> {
        let h = self.gru(&prev.h, &prev.z_sample, action);
        let embed = self.encode(obs_input);
        let (mean, std) = self.posterior_params(&h, &embed);
        self.assemble("posterior_step", h, mean, std, noise)
    }

    /// Prior latent step: action-only imagination.
    pub fn prior_step(&self, prev: &LatentState, action: [f64; 4], noise: &[f64]) -> Result<LatentState> {
        let h = self.gru(&prev.h, &prev.z_sample, action);
        let (mean, std) = self.prior_params(&h);
        self.assemble("prior_step", h, mean, std, noise)
    }

    fn assemble(
        &self,
        what: &str,
        h: Vec<f64>,
        mean: Vec<f64>,
        std: Vec<f64>,
        noise: &[f64],
    ) -> Result<LatentState> {
        debug_assert_eq!(noise.len(), self.cfg.z_dim);
        let sample: Vec<f64> = mean
            .iter()
            .zip(&std)
            .zip(noise)
            .map(|((m, s), n)| m + s * n)
            .collect();
        let finite = h.iter().chain(&mean).chain(&std).chain(&sample).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Numeric { what: what.into() });
        }
        Ok(LatentState {
            h,
            z_mean: mean,
            z_std: std,
            z_sample: sample,
        })
    }

    fn latent_input(latent: &LatentState) -> Vec<f64> {
        let mut input = latent.h.clone();
        input.extend_from_slice(&latent.z_sample);
        input
    }

    /// Decode the observation mean and the posterior reward estimate.
    pub fn decode(&self, latent: &LatentState) -> Result<(Vec<f64>, f64)> {
        let input = Self::latent_input(latent);
        let obs = self.head3(&self.ids.dec, &input);
        if !obs.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric {
                what: "decode.observation".into(),
            });
        }
        let reward = self.head3(&self.ids.rew_post, &input)[0];
        if !reward.is_finite() {
            return Err(Error::Numeric {
                what: "decode.reward".into(),
            });
        }
        Ok((obs, reward))
    }

    /// Reward estimate from the prior reward head on (h, z̃).
    pub fn predict_reward_prior(&self, latent: &LatentState) -> Result<f64> {
        let input = Self::latent_input(latent);
        let reward = self.head3(&self.ids.rew_prior, &input)[0];
        if !reward.is_finite() {
            return Err(Error::Numeric {
                what: "predict_reward_prior".into(),
            });
        }
        Ok(reward)
    }

    /// Decoded mask channel thresholded at 0 (midpoint of the ±0.5 targets).
    pub fn predict_mask(&self, latent: &LatentState) -> Result<Vec<bool>> {
        let pos = self
            .cfg
            .output_channels
            .iter()
            .position(|c| *c == Channel::Mask)
            .ok_or_else(|| Error::Contract("decoder has no mask channel".into()))?;
        let (obs, _) = self.decode(latent)?;
        let cells = self.cfg.resolution * self.cfg.resolution;
        Ok(obs[pos * cells..(pos + 1) * cells]
            .iter()
            .map(|&v| v > 0.0)
            .collect())
    }

    /// Standard-normal noise vector for the reparameterized sample.
    pub fn sample_noise(&self, seed: u64) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        (0..self.cfg.z_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_noise(cfg: &ModelConfig) -> Vec<f64> {
        vec![0.0; cfg.z_dim]
    }

    #[test]
    fn zero_model_zero_inputs_give_zero_states() {
        let model = RssmModel::zeros(ModelConfig::tiny());
        let prev = LatentState::zero(&model.cfg);
        let obs = vec![0.0; model.cfg.in_dim()];
        let noise = zero_noise(&model.cfg);
        let s = model
            .posterior_step(&prev, [0.0; 4], &obs, &noise)
            .unwrap();
        assert!(s.h.iter().all(|v| *v == 0.0));
        assert!(s.z_mean.iter().all(|v| *v == 0.0));
        // softplus(0) + floor
        let expected_std = softplus(0.0) + STD_FLOOR;
        assert!(s.z_std.iter().all(|v| (*v - expected_std).abs() < 1e-15));
        assert!(s.z_sample.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_noise_sample_equals_mean() {
        let model = RssmModel::init(ModelConfig::tiny(), 3);
        let prev = LatentState::zero(&model.cfg);
        let obs: Vec<f64> = (0..model.cfg.in_dim()).map(|i| (i as f64 * 0.37).sin() * 0.4).collect();
        let s = model
            .posterior_step(&prev, [0.1, -0.2, 0.3, 0.0], &obs, &zero_noise(&model.cfg))
            .unwrap();
        assert_eq!(s.z_sample, s.z_mean);
    }

    #[test]
    fn prior_and_posterior_share_the_recurrent_path() {
        let model = RssmModel::init(ModelConfig::tiny(), 5);
        let prev = LatentState::zero(&model.cfg);
        let action = [0.2, 0.1, -0.4, 0.3];
        let obs = vec![0.25; model.cfg.in_dim()];
        let noise = zero_noise(&model.cfg);
        let post = model.posterior_step(&prev, action, &obs, &noise).unwrap();
        let prior = model.prior_step(&prev, action, &noise).unwrap();
        assert_eq!(post.h, prior.h);
    }

    #[test]
    fn steps_are_deterministic_given_seed() {
        let model = RssmModel::init(ModelConfig::tiny(), 7);
        let prev = LatentState::zero(&model.cfg);
        let action = [0.5, -0.5, 0.25, 0.0];
        let noise = model.sample_noise(99);
        let a = model.prior_step(&prev, action, &noise).unwrap();
        let b = model.prior_step(&prev, action, &noise).unwrap();
        assert_eq!(a, b);

        // chained rollout with per-step seeds is reproducible
        let mut s1 = LatentState::zero(&model.cfg);
        let mut s2 = LatentState::zero(&model.cfg);
        for step in 0..3u64 {
            let n = model.sample_noise(step);
            s1 = model.prior_step(&s1, action, &n).unwrap();
            s2 = model.prior_step(&s2, action, &n).unwrap();
        }
        assert_eq!(s1, s2);
    }

    #[test]
    fn zero_model_decodes_zeros() {
        let model = RssmModel::zeros(ModelConfig::tiny());
        let latent = LatentState::zero(&model.cfg);
        let (obs, reward) = model.decode(&latent).unwrap();
        assert!(obs.iter().all(|v| *v == 0.0));
        assert_eq!(reward, 0.0);
        assert_eq!(model.predict_reward_prior(&latent).unwrap(), 0.0);
        // zero logits threshold to background everywhere
        let mask = model.predict_mask(&latent).unwrap();
        assert!(mask.iter().all(|m| !m));
    }

    #[test]
    fn decode_is_pure() {
        let model = RssmModel::init(ModelConfig::tiny(), 11);
        let noise = model.sample_noise(1);
        let latent = model
            .prior_step(&LatentState::zero(&model.cfg), [0.1; 4], &noise)
            .unwrap();
        assert_eq!(model.decode(&latent).unwrap(), model.decode(&latent).unwrap());
    }

    #[test]
    fn predict_mask_requires_mask_channel() {
        let mut cfg = ModelConfig::tiny();
        cfg.output_channels = vec![Channel::Heightfield];
        let model = RssmModel::zeros(cfg);
        let latent = LatentState::zero(&model.cfg);
        assert!(matches!(
            model.predict_mask(&latent),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn parameter_count_matches_shape_arithmetic() {
        // reference configuration: H=64, Z=16, width=embed=128
        let cfg = ModelConfig {
            h_dim: 64,
            z_dim: 16,
            embed_dim: 128,
            hidden_width: 128,
            resolution: 32,
            input_channels: vec![Channel::Heightfield],
            output_channels: vec![Channel::Mask],
        };
        let model = RssmModel::zeros(cfg);
        // GRU: 3 gates of 64×(16+4+64) plus bias 64
        let gru = 3 * (64 * 84 + 64);
        // prior head: 128×64+128, 128×128+128, 32×128+32
        let prior = (128 * 64 + 128) + (128 * 128 + 128) + (32 * 128 + 32);
        // posterior head input 64+128
        let post = (128 * 192 + 128) + (128 * 128 + 128) + (32 * 128 + 32);
        assert_eq!(model.transitional_param_count(), gru + prior + post);

        let enc = (128 * 1024 + 128) + (128 * 128 + 128);
        let dec = (128 * 80 + 128) + (128 * 128 + 128) + (1024 * 128 + 1024);
        let rew = 2 * ((128 * 80 + 128) + (128 * 128 + 128) + (128 + 1));
        assert_eq!(model.param_count(), gru + prior + post + enc + dec + rew);
    }

    #[test]
    fn reparameterized_samples_match_gaussian_statistics() {
        let model = RssmModel::init(ModelConfig::tiny(), 13);
        let prev = LatentState::zero(&model.cfg);
        let action = [0.3, -0.1, 0.2, 0.4];
        let obs = vec![0.1; model.cfg.in_dim()];
        let reference = model
            .posterior_step(&prev, action, &obs, &vec![0.0; model.cfg.z_dim])
            .unwrap();

        let n = 10_000;
        let mut sums = vec![0.0; model.cfg.z_dim];
        let mut sq_sums = vec![0.0; model.cfg.z_dim];
        for i in 0..n {
            let noise = model.sample_noise(1000 + i as u64);
            let s = model.posterior_step(&prev, action, &obs, &noise).unwrap();
            for d in 0..model.cfg.z_dim {
                sums[d] += s.z_sample[d];
                sq_sums[d] += s.z_sample[d] * s.z_sample[d];
            }
        }
        for d in 0..model.cfg.z_dim {
            let mean = sums[d] / n as f64;
            let var = sq_sums[d] / n as f64 - mean * mean;
            let se_mean = reference.z_std[d] / (n as f64).sqrt();
            assert!(
                (mean - reference.z_mean[d]).abs() < 3.0 * se_mean,
                "dim {d}: mean {mean} vs {} (se {se_mean})",
                reference.z_mean[d]
            );
            let se_std = reference.z_std[d] * (2.0 / n as f64).sqrt();
            assert!(
                (var.sqrt() - reference.z_std[d]).abs() < 3.0 * se_std,
                "dim {d}: std {} vs {}",
                var.sqrt(),
                reference.z_std[d]
            );
        }
    }
}
