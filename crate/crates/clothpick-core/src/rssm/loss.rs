//! Sequence objective: reconstruction + reward + prior-reward MSE terms and
//! the KL term (balanced via stop-gradients or plain), with reverse-mode
//! gradients through the unrolled recurrence.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rssm::model::{RssmModel, STD_FLOOR};
use crate::rssm::tape::{Grads, NodeId, ParamSet, Tape, Tensor};

/// One training sequence. `actions[0]` and `rewards[0]` follow the
/// episode-start convention (zero action, zero reward); noise vectors are
/// pre-drawn so the loss is a deterministic function of (params, batch).
#[derive(Debug, Clone)]
pub struct SeqSample {
    pub obs_input: Vec<Vec<f64>>,
    pub obs_target: Vec<Vec<f64>>,
    pub actions: Vec<[f64; 4]>,
    pub rewards: Vec<f64>,
    pub post_noise: Vec<Vec<f64>>,
    pub prior_noise: Vec<Vec<f64>>,
}

impl SeqSample {
    pub fn len(&self) -> usize {
        self.obs_input.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs_input.is_empty()
    }
}

/// KL term variant: balanced interpolation with stop-gradients, or the plain
/// divergence used by the no-balancing ablation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KlMode {
    Balanced { alpha: f64 },
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub obs: f64,
    pub reward: f64,
    pub kl: f64,
    pub prior_reward: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            obs: 1.0,
            reward: 1.0,
            kl: 1.0,
            prior_reward: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub kl_mode: KlMode,
    pub free_nats: f64,
    pub weights: LossWeights,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kl_mode: KlMode::Balanced { alpha: 0.8 },
            free_nats: 3.0,
            weights: LossWeights::default(),
        }
    }
}

/// Per-term loss values. `kl_loss` is the free-nats-clipped value entering
/// the total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub obs_loss: f64,
    pub reward_loss: f64,
    pub prior_reward_loss: f64,
    pub kl_loss: f64,
    pub total: f64,
}

/// Closed-form diagonal-Gaussian KL(q ‖ p), summed over dimensions.
pub fn kl_diag_value(qm: &[f64], qs: &[f64], pm: &[f64], ps: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..qm.len() {
        let ratio = ps[i].ln() - qs[i].ln();
        let num = qs[i] * qs[i] + (qm[i] - pm[i]) * (qm[i] - pm[i]);
        total += ratio + num / (2.0 * ps[i] * ps[i]) - 0.5;
    }
    total
}

/// Balanced KL value: α·KL(sg(q)‖p) + (1−α)·KL(q‖sg(p)). The stop-gradients
/// do not change the value, only the routing, so this is the closed form.
pub fn kl_balanced_value(qm: &[f64], qs: &[f64], pm: &[f64], ps: &[f64], alpha: f64) -> f64 {
    let kl = kl_diag_value(qm, qs, pm, ps);
    alpha * kl + (1.0 - alpha) * kl
}

struct TapedModel<'m> {
    model: &'m RssmModel,
}

impl<'m> TapedModel<'m> {
    fn layer(&self, tape: &mut Tape<'_>, ids: (usize, usize), x: NodeId) -> NodeId {
        tape.linear(ids.0, ids.1, x)
    }

    fn head3(&self, tape: &mut Tape<'_>, ids: &[(usize, usize); 3], x: NodeId) -> NodeId {
        let h = self.layer(tape, ids[0], x);
        let h = tape.elu_node(h);
        let h = self.layer(tape, ids[1], h);
        let h = tape.elu_node(h);
        self.layer(tape, ids[2], h)
    }

    fn encode(&self, tape: &mut Tape<'_>, obs: NodeId) -> NodeId {
        let h = self.layer(tape, self.model.ids.enc[0], obs);
        let h = tape.elu_node(h);
        let e = self.layer(tape, self.model.ids.enc[1], h);
        tape.elu_node(e)
    }

    fn gru(&self, tape: &mut Tape<'_>, h: NodeId, z: NodeId, action: NodeId) -> NodeId {
        let ids = &self.model.ids;
        let xh = tape.concat(&[z, action, h]);
        let r = self.layer(tape, ids.gru_r, xh);
        let r = tape.sigmoid_node(r);
        let u = self.layer(tape, ids.gru_u, xh);
        let u = tape.sigmoid_node(u);
        let rh = tape.mul(r, h);
        let xrh = tape.concat(&[z, action, rh]);
        let c = self.layer(tape, ids.gru_c, xrh);
        let c = tape.tanh(c);
        let uh = tape.mul(u, h);
        let neg_u = tape.scale(u, -1.0);
        let one_minus_u = tape.add_const(neg_u, 1.0);
        let omc = tape.mul(one_minus_u, c);
        tape.add(uh, omc)
    }

    fn gaussian(&self, tape: &mut Tape<'_>, raw: NodeId) -> (NodeId, NodeId) {
        let z = self.model.cfg.z_dim;
        let mean = tape.slice(raw, 0, z);
        let raw_std = tape.slice(raw, z, z);
        let std = tape.softplus_floor(raw_std, STD_FLOOR);
        (mean, std)
    }

}

/// Taped diagonal-Gaussian KL(q ‖ p), summed over dimensions.
pub fn taped_kl_diag(tape: &mut Tape<'_>, qm: NodeId, qs: NodeId, pm: NodeId, ps: NodeId) -> NodeId {
    let lps = tape.ln(ps);
    let lqs = tape.ln(qs);
    let ratio = tape.sub(lps, lqs);
    let dm = tape.sub(qm, pm);
    let dm2 = tape.mul(dm, dm);
    let qs2 = tape.mul(qs, qs);
    let num = tape.add(qs2, dm2);
    let ps2 = tape.mul(ps, ps);
    let frac = tape.div(num, ps2);
    let half_frac = tape.scale(frac, 0.5);
    let term = tape.add(ratio, half_frac);
    let term = tape.add_const(term, -0.5);
    tape.sum_all(term)
}

/// Taped KL term with the configured gradient routing.
pub fn taped_kl_term(
    tape: &mut Tape<'_>,
    mode: KlMode,
    qm: NodeId,
    qs: NodeId,
    pm: NodeId,
    ps: NodeId,
) -> NodeId {
    match mode {
        KlMode::Plain => taped_kl_diag(tape, qm, qs, pm, ps),
        KlMode::Balanced { alpha } => {
            let qm_d = tape.detach(qm);
            let qs_d = tape.detach(qs);
            let prior_training = taped_kl_diag(tape, qm_d, qs_d, pm, ps);
            let pm_d = tape.detach(pm);
            let ps_d = tape.detach(ps);
            let posterior_reg = taped_kl_diag(tape, qm, qs, pm_d, ps_d);
            let a = tape.scale(prior_training, alpha);
            let b = tape.scale(posterior_reg, 1.0 - alpha);
            tape.add(a, b)
        }
    }
}

/// Balanced-KL value and its gradients w.r.t. (q_mean, q_std, p_mean, p_std),
/// exposing the stop-gradient routing at the op level.
pub fn kl_balanced_with_input_grads(
    qm: &[f64],
    qs: &[f64],
    pm: &[f64],
    ps: &[f64],
    alpha: f64,
) -> (f64, [Vec<f64>; 4]) {
    let mut params = ParamSet::new();
    let ids = [
        params.add("qm", Tensor::vector(qm.to_vec())),
        params.add("qs", Tensor::vector(qs.to_vec())),
        params.add("pm", Tensor::vector(pm.to_vec())),
        params.add("ps", Tensor::vector(ps.to_vec())),
    ];
    let mut tape = Tape::new(&params);
    let nodes: Vec<NodeId> = ids
        .iter()
        .map(|id| {
            let zero = tape.zeros(qm.len());
            tape.add_bias(*id, zero)
        })
        .collect();
    let kl = taped_kl_term(
        &mut tape,
        KlMode::Balanced { alpha },
        nodes[0],
        nodes[1],
        nodes[2],
        nodes[3],
    );
    let value = tape.scalar(kl);
    let mut grads = Grads::zeros_like(&params);
    tape.backward(&[(kl, 1.0)], &mut grads);
    let [g0, g1, g2, g3]: [Tensor; 4] = grads.tensors.try_into().unwrap();
    (value, [g0.data, g1.data, g2.data, g3.data])
}

struct ElementOutputs {
    obs: NodeId,
    reward: NodeId,
    prior_reward: NodeId,
    kl: NodeId,
}

/// Unroll one sequence on the tape; returns the four per-element sums.
fn element_graph<'p>(
    model: &RssmModel,
    tape: &mut Tape<'p>,
    sample: &SeqSample,
    mode: KlMode,
) -> ElementOutputs {
    let tm = TapedModel { model };
    let cfg = &model.cfg;
    let mut h = tape.zeros(cfg.h_dim);
    let mut z = tape.zeros(cfg.z_dim);
    let mut obs_sum = tape.zeros(1);
    let mut reward_sum = tape.zeros(1);
    let mut prior_reward_sum = tape.zeros(1);
    let mut kl_sum = tape.zeros(1);

    for t in 0..sample.len() {
        let action = tape.input(&sample.actions[t]);
        h = tm.gru(tape, h, z, action);

        let obs_in = tape.input(&sample.obs_input[t]);
        let embed = tm.encode(tape, obs_in);
        let post_in = tape.concat(&[h, embed]);
        let post_raw = tm.head3(tape, &model.ids.post, post_in);
        let (qm, qs) = tm.gaussian(tape, post_raw);
        let prior_raw = tm.head3(tape, &model.ids.prior, h);
        let (pm, ps) = tm.gaussian(tape, prior_raw);

        let post_eta = tape.input(&sample.post_noise[t]);
        let post_dev = tape.mul(qs, post_eta);
        z = tape.add(qm, post_dev);

        let prior_eta = tape.input(&sample.prior_noise[t]);
        let prior_dev = tape.mul(ps, prior_eta);
        let z_prior = tape.add(pm, prior_dev);

        let dec_in = tape.concat(&[h, z]);
        let dec_out = tm.head3(tape, &model.ids.dec, dec_in);
        let obs_term = tape.sum_sq_diff(dec_out, &sample.obs_target[t]);
        obs_sum = tape.add(obs_sum, obs_term);

        let rew_out = tm.head3(tape, &model.ids.rew_post, dec_in);
        let rew_term = tape.sum_sq_diff(rew_out, &[sample.rewards[t]]);
        reward_sum = tape.add(reward_sum, rew_term);

        let prior_in = tape.concat(&[h, z_prior]);
        let prew_out = tm.head3(tape, &model.ids.rew_prior, prior_in);
        let prew_term = tape.sum_sq_diff(prew_out, &[sample.rewards[t]]);
        prior_reward_sum = tape.add(prior_reward_sum, prew_term);

        let kl_t = taped_kl_term(tape, mode, qm, qs, pm, ps);
        kl_sum = tape.add(kl_sum, kl_t);
    }

    ElementOutputs {
        obs: obs_sum,
        reward: reward_sum,
        prior_reward: prior_reward_sum,
        kl: kl_sum,
    }
}

fn validate_batch(model: &RssmModel, batch: &[SeqSample]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let len = batch[0].len();
    if len < 2 {
        return Err(Error::Contract("sequence length must be >= 2".into()));
    }
    for (i, s) in batch.iter().enumerate() {
        let ok = s.len() == len
            && s.obs_target.len() == len
            && s.actions.len() == len
            && s.rewards.len() == len
            && s.post_noise.len() == len
            && s.prior_noise.len() == len
            && s.obs_input.iter().all(|o| o.len() == model.cfg.in_dim())
            && s.obs_target.iter().all(|o| o.len() == model.cfg.out_dim())
            && s.post_noise.iter().all(|n| n.len() == model.cfg.z_dim)
            && s.prior_noise.iter().all(|n| n.len() == model.cfg.z_dim);
        if !ok {
            return Err(Error::Contract(format!(
                "batch element {i} has inconsistent shapes"
            )));
        }
    }
    Ok(())
}

fn named_term(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Numeric { what: what.into() })
    }
}

fn combine(
    per_element: &[(f64, f64, f64, f64)],
    seq_len: usize,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, f64)> {
    let per = (per_element.len() * seq_len) as f64;
    let mut obs = 0.0;
    let mut rew = 0.0;
    let mut prew = 0.0;
    let mut kl = 0.0;
    for (o, r, p, k) in per_element {
        obs += o;
        rew += r;
        prew += p;
        kl += k;
    }
    let obs_loss = named_term(obs / per, "obs_loss")?;
    let reward_loss = named_term(rew / per, "reward_loss")?;
    let prior_reward_loss = named_term(prew / per, "prior_reward_loss")?;
    let kl_mean = named_term(kl / per, "kl_loss")?;
    let kl_loss = kl_mean.max(cfg.free_nats);
    let w = &cfg.weights;
    let total = w.obs * obs_loss
        + w.reward * reward_loss
        + w.prior_reward * prior_reward_loss
        + w.kl * kl_loss;
    Ok((
        LossBreakdown {
            obs_loss,
            reward_loss,
            prior_reward_loss,
            kl_loss,
            total,
        },
        kl_mean,
    ))
}

/// Loss value only.
pub fn rssm_loss(model: &RssmModel, batch: &[SeqSample], cfg: &LossConfig) -> Result<LossBreakdown> {
    validate_batch(model, batch)?;
    let outputs: Vec<(f64, f64, f64, f64)> = batch
        .par_iter()
        .map(|sample| {
            let mut tape = Tape::new(&model.params);
            let out = element_graph(model, &mut tape, sample, cfg.kl_mode);
            (
                tape.scalar(out.obs),
                tape.scalar(out.reward),
                tape.scalar(out.prior_reward),
                tape.scalar(out.kl),
            )
        })
        .collect();
    Ok(combine(&outputs, batch[0].len(), cfg)?.0)
}

/// Loss and parameter gradients. Per-element gradients are computed
/// independently (parallel) and reduced in element order, so worker count
/// does not change the result.
pub fn rssm_loss_with_grads(
    model: &RssmModel,
    batch: &[SeqSample],
    cfg: &LossConfig,
) -> Result<(LossBreakdown, Grads)> {
    validate_batch(model, batch)?;
    let seq_len = batch[0].len();

    // forward pass, keeping each element's tape alive for the backward pass
    let tapes: Vec<(Tape<'_>, ElementOutputs)> = batch
        .par_iter()
        .map(|sample| {
            let mut tape = Tape::new(&model.params);
            let out = element_graph(model, &mut tape, sample, cfg.kl_mode);
            (tape, out)
        })
        .collect();

    let outputs: Vec<(f64, f64, f64, f64)> = tapes
        .iter()
        .map(|(tape, out)| {
            (
                tape.scalar(out.obs),
                tape.scalar(out.reward),
                tape.scalar(out.prior_reward),
                tape.scalar(out.kl),
            )
        })
        .collect();
    let (breakdown, kl_mean) = combine(&outputs, seq_len, cfg)?;

    let per = (batch.len() * seq_len) as f64;
    let w = &cfg.weights;
    let kl_seed = if kl_mean > cfg.free_nats {
        w.kl / per
    } else {
        0.0
    };

    let element_grads: Vec<Grads> = tapes
        .par_iter()
        .map(|(tape, out)| {
            let mut grads = Grads::zeros_like(&model.params);
            tape.backward(
                &[
                    (out.obs, w.obs / per),
                    (out.reward, w.reward / per),
                    (out.prior_reward, w.prior_reward / per),
                    (out.kl, kl_seed),
                ],
                &mut grads,
            );
            grads
        })
        .collect();

    let mut total = Grads::zeros_like(&model.params);
    for g in &element_grads {
        total.add_assign(g);
    }
    Ok((breakdown, total))
}

/// Forward values of the taped path for one sequence (used to cross-check
/// the plain inference path and by evaluation).
pub fn element_loss_values(
    model: &RssmModel,
    sample: &SeqSample,
    mode: KlMode,
) -> (f64, f64, f64, f64) {
    let mut tape = Tape::new(&model.params);
    let out = element_graph(model, &mut tape, sample, mode);
    (
        tape.scalar(out.obs),
        tape.scalar(out.reward),
        tape.scalar(out.prior_reward),
        tape.scalar(out.kl),
    )
}
