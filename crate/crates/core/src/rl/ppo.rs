//! Proximal policy optimization with a clipped surrogate, generalized
//! advantage estimation, and a shared policy-and-value network (two action
//! logits plus one value head).

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rl::mlp::{log_softmax, softmax, Adam, Gradients, PolicyParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub clip: f64,
    pub gae_lambda: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            gae_lambda: 0.95,
            epochs: 4,
            minibatch: 256,
            value_coef: 0.5,
            entropy_coef: 0.01,
        }
    }
}

/// Splits the network output into action logits and the value estimate.
pub fn policy_value(net: &PolicyParams, obs: &[f64]) -> Result<([f64; 2], f64)> {
    let out = net.forward(obs)?;
    Ok(([out[0], out[1]], out[2]))
}

/// Sample an action from the softmax policy. Returns (action, log-prob, value).
pub fn sample_action(net: &PolicyParams, obs: &[f64], rng: &mut impl Rng) -> Result<(u8, f64, f64)> {
    let (logits, value) = policy_value(net, obs)?;
    let lp = log_softmax(&logits);
    let p1 = lp[1].exp();
    let a = if rng.random::<f64>() < p1 { 1u8 } else { 0u8 };
    Ok((a, lp[a as usize], value))
}

/// Greedy (evaluation) action: argmax logit, ties to action 0.
pub fn greedy_action(net: &PolicyParams, obs: &[f64]) -> Result<u8> {
    let (logits, _) = policy_value(net, obs)?;
    Ok(if logits[1] > logits[0] { 1 } else { 0 })
}

/// Generalized advantage estimation over one stream. `bootstrap` is the value
/// of the state after the last transition (ignored when that transition is
/// terminal). Returns (advantages, returns).
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    debug_assert_eq!(values.len(), n);
    debug_assert_eq!(dones.len(), n);
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let next_v = if t + 1 < n { values[t + 1] } else { bootstrap };
        let nonterminal = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_v * nonterminal - values[t];
        acc = delta + gamma * lambda * nonterminal * acc;
        adv[t] = acc;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Normalize to zero mean, unit variance (population), guarding tiny spreads.
pub fn normalize(values: &mut [f64]) {
    if values.is_empty() {
        return;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    for v in values.iter_mut() {
        *v = (*v - mean) / std;
    }
}

/// The clipped surrogate contribution of one sample:
/// `min(ratio * adv, clamp(ratio, 1-clip, 1+clip) * adv)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * advantage;
    (ratio * advantage).min(clipped)
}

/// Flattened on-policy batch ready for updates.
#[derive(Debug, Clone, Default)]
pub struct PpoBatch {
    pub obs: Vec<f64>,
    pub obs_dim: usize,
    pub actions: Vec<u8>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl PpoBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PpoUpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub minibatches: usize,
}

/// Total PPO loss over the given samples (forward only); the unit the
/// gradient computation is checked against.
pub fn ppo_loss(net: &PolicyParams, batch: &PpoBatch, idxs: &[usize], cfg: &PpoConfig) -> f64 {
    let inv = 1.0 / idxs.len() as f64;
    let mut loss = 0.0;
    for &i in idxs {
        let obs = &batch.obs[i * batch.obs_dim..(i + 1) * batch.obs_dim];
        let out = net.forward(obs).expect("dims fixed");
        let lp = log_softmax(&out[..2]);
        let p = softmax(&out[..2]);
        let a = batch.actions[i] as usize;
        let ratio = (lp[a] - batch.old_log_probs[i]).exp();
        let surr = clipped_surrogate(ratio, batch.advantages[i], cfg.clip);
        let entropy = -(p[0] * lp[0] + p[1] * lp[1]);
        let v_err = out[2] - batch.returns[i];
        loss += inv * (-surr - cfg.entropy_coef * entropy + cfg.value_coef * v_err * v_err);
    }
    loss
}

/// Per-sample output gradient of [`ppo_loss`] (already scaled by 1/m).
fn minibatch_grads(
    net: &PolicyParams,
    batch: &PpoBatch,
    idxs: &[usize],
    cfg: &PpoConfig,
) -> (Gradients, PpoUpdateStats) {
    let m = idxs.len();
    let dim = batch.obs_dim;
    let mut xs = Vec::with_capacity(m * dim);
    for &i in idxs {
        xs.extend_from_slice(&batch.obs[i * dim..(i + 1) * dim]);
    }
    let cache = net.forward_batch(&xs, m);
    let out = cache.output();
    let inv = 1.0 / m as f64;
    let mut d_out = vec![0.0; m * 3];
    let mut stats = PpoUpdateStats::default();
    for (k, &i) in idxs.iter().enumerate() {
        let logits = &out[k * 3..k * 3 + 2];
        let value = out[k * 3 + 2];
        let lp = log_softmax(logits);
        let p = softmax(logits);
        let a = batch.actions[i] as usize;
        let adv = batch.advantages[i];
        let ratio = (lp[a] - batch.old_log_probs[i]).exp();
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * adv;
        let entropy = -(p[0] * lp[0] + p[1] * lp[1]);
        let v_err = value - batch.returns[i];

        stats.policy_loss -= inv * unclipped.min(clipped);
        stats.value_loss += inv * cfg.value_coef * v_err * v_err;
        stats.entropy += inv * entropy;

        let d = &mut d_out[k * 3..(k + 1) * 3];
        // Surrogate gradient flows only through the unclipped branch when it
        // attains the min (ties included).
        if unclipped <= clipped {
            for (o, dv) in d.iter_mut().take(2).enumerate() {
                let onehot = if o == a { 1.0 } else { 0.0 };
                *dv -= inv * adv * ratio * (onehot - p[o]);
            }
        }
        // Entropy bonus: d(-H)/dz_i = p_i (lp_i + H); loss carries -coef * H.
        for (o, dv) in d.iter_mut().take(2).enumerate() {
            *dv += inv * cfg.entropy_coef * p[o] * (lp[o] + entropy);
        }
        d[2] = inv * 2.0 * cfg.value_coef * v_err;
    }
    (net.backward_batch(&xs, &cache, &d_out), stats)
}

/// Multiple epochs of shuffled minibatch ascent over the batch. Minibatch
/// gradients are computed in fixed-size chunks (parallelizable) and summed
/// in chunk order, so results do not depend on thread scheduling.
pub fn ppo_update(
    net: &mut PolicyParams,
    opt: &mut Adam,
    batch: &PpoBatch,
    cfg: &PpoConfig,
    lr: f64,
    rng: &mut impl Rng,
) -> PpoUpdateStats {
    let n = batch.len();
    if n == 0 {
        return PpoUpdateStats::default();
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut total = PpoUpdateStats::default();
    const CHUNK: usize = 64;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for mb in order.chunks(cfg.minibatch) {
            let pieces: Vec<(Gradients, PpoUpdateStats)> = mb
                .par_chunks(CHUNK)
                .map(|chunk| minibatch_grads(net, batch, chunk, cfg))
                .collect();
            let mut grads = Gradients::zeros_like(net);
            let mut stats = PpoUpdateStats::default();
            let scale = 1.0 / pieces.len().max(1) as f64;
            for (g, s) in &pieces {
                grads.add(g);
                stats.policy_loss += s.policy_loss * scale;
                stats.value_loss += s.value_loss * scale;
                stats.entropy += s.entropy * scale;
            }
            // Chunk gradients are per-chunk means; rescale to the minibatch
            // mean.
            grads.scale(scale);
            opt.step(net, &grads, lr);
            total.policy_loss += stats.policy_loss;
            total.value_loss += stats.value_loss;
            total.entropy += stats.entropy;
            total.minibatches += 1;
        }
    }
    if total.minibatches > 0 {
        let k = total.minibatches as f64;
        total.policy_loss /= k;
        total.value_loss /= k;
        total.entropy /= k;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rl::mlp::NetworkRole;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn gae_lambda_zero_is_one_step_td() {
        let (adv, _) = gae(&[1.0, 0.0], &[0.0, 0.0], &[false, true], 0.0, 1.0, 0.0);
        assert_eq!(adv, vec![1.0, 0.0]);
    }

    #[test]
    fn gae_lambda_one_is_monte_carlo() {
        let (adv, ret) = gae(
            &[1.0, 1.0, 1.0],
            &[0.0, 0.0, 0.0],
            &[false, false, true],
            0.0,
            1.0,
            1.0,
        );
        assert_eq!(adv, vec![3.0, 2.0, 1.0]);
        assert_eq!(ret, vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn gae_matches_direct_delta_summation() {
        // Brute-force oracle: adv[t] = sum_k (gamma*lambda)^k * delta_{t+k},
        // truncated at terminals.
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for _ in 0..20 {
            let n = rng.random_range(1..30usize);
            let rewards: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let values: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut dones: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.15).collect();
            dones[n - 1] = true;
            let bootstrap = 0.0;
            let gamma = 0.97;
            let lambda = 0.9;
            let (adv, _) = gae(&rewards, &values, &dones, bootstrap, gamma, lambda);
            for t in 0..n {
                let mut expected = 0.0;
                let mut w = 1.0;
                for k in t..n {
                    let next_v = if k + 1 < n { values[k + 1] } else { bootstrap };
                    let nt = if dones[k] { 0.0 } else { 1.0 };
                    let delta = rewards[k] + gamma * next_v * nt - values[k];
                    expected += w * delta;
                    if dones[k] {
                        break;
                    }
                    w *= gamma * lambda;
                }
                assert!(
                    (adv[t] - expected).abs() < 1e-10,
                    "t={t}: {} vs {}",
                    adv[t],
                    expected
                );
            }
        }
    }

    #[test]
    fn clip_formula_examples() {
        assert!((clipped_surrogate(1.5, 1.0, 0.2) - 1.2).abs() < 1e-15);
        assert!((clipped_surrogate(0.5, -1.0, 0.2) - (-0.8)).abs() < 1e-15);
    }

    #[test]
    fn policy_outputs_are_valid_distributions() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        for _ in 0..20 {
            let net = PolicyParams::new(4, &[16], 3, NetworkRole::PolicyAndValue, &mut rng);
            let obs: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (logits, _) = policy_value(&net, &obs).unwrap();
            let p = softmax(&logits);
            assert!(p.iter().all(|&x| x >= 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    fn random_batch(rng: &mut ChaCha12Rng, n: usize, dim: usize) -> PpoBatch {
        let mut batch = PpoBatch {
            obs_dim: dim,
            ..Default::default()
        };
        for _ in 0..n {
            for _ in 0..dim {
                batch.obs.push(rng.random_range(-1.0..1.0));
            }
            batch.actions.push(rng.random_range(0..2u8));
            batch.old_log_probs.push(rng.random_range(-1.5..-0.2));
            batch.advantages.push(rng.random_range(-2.0..2.0));
            batch.returns.push(rng.random_range(-2.0..2.0));
        }
        batch
    }

    #[test]
    fn ppo_loss_gradients_match_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(33);
        let net = PolicyParams::new(3, &[6], 3, NetworkRole::PolicyAndValue, &mut rng);
        let batch = random_batch(&mut rng, 12, 3);
        let cfg = PpoConfig::default();
        let idxs: Vec<usize> = (0..12).collect();
        let analytic = minibatch_grads(&net, &batch, &idxs, &cfg).0.flat();
        let h = 1e-6;
        for k in 0..net.param_count() {
            let mut plus = net.clone();
            let mut minus = net.clone();
            let mut i = 0;
            plus.for_each_param_mut(|p| {
                if i == k {
                    *p += h;
                }
                i += 1;
            });
            i = 0;
            minus.for_each_param_mut(|p| {
                if i == k {
                    *p -= h;
                }
                i += 1;
            });
            let numeric =
                (ppo_loss(&plus, &batch, &idxs, &cfg) - ppo_loss(&minus, &batch, &idxs, &cfg))
                    / (2.0 * h);
            let a = analytic[k];
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            assert!(
                (a - numeric).abs() / denom < 1e-4,
                "param {k}: analytic {a} vs numeric {numeric}"
            );
        }
    }

    #[test]
    fn two_armed_bandit_learns_the_good_arm() {
        // Arm 1 pays 1.0, arm 0 pays 0.0; within 200 iterations the policy
        // should prefer arm 1 with probability > 0.95.
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let mut net = PolicyParams::new(1, &[16], 3, NetworkRole::PolicyAndValue, &mut rng);
        let mut opt = Adam::new(&net);
        let cfg = PpoConfig {
            minibatch: 64,
            ..PpoConfig::default()
        };
        let lr = 3e-3;
        for _ in 0..200 {
            let mut batch = PpoBatch {
                obs_dim: 1,
                ..Default::default()
            };
            for _ in 0..64 {
                let obs = [1.0];
                let (a, log_prob, value) = sample_action(&net, &obs, &mut rng).unwrap();
                let reward = if a == 1 { 1.0 } else { 0.0 };
                let (adv, ret) = gae(&[reward], &[value], &[true], 0.0, 0.99, 0.95);
                batch.obs.push(1.0);
                batch.actions.push(a);
                batch.old_log_probs.push(log_prob);
                batch.advantages.push(adv[0]);
                batch.returns.push(ret[0]);
            }
            normalize(&mut batch.advantages);
            ppo_update(&mut net, &mut opt, &batch, &cfg, lr, &mut rng);
        }
        let (logits, _) = policy_value(&net, &[1.0]).unwrap();
        let p = softmax(&logits);
        assert!(p[1] > 0.95, "optimal-arm probability {}", p[1]);
    }

    #[test]
    fn zero_learning_rate_leaves_params_bit_identical() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let mut net = PolicyParams::new(2, &[8], 3, NetworkRole::PolicyAndValue, &mut rng);
        let before = net.clone();
        let mut opt = Adam::new(&net);
        let batch = random_batch(&mut rng, 32, 2);
        ppo_update(&mut net, &mut opt, &batch, &PpoConfig::default(), 0.0, &mut rng);
        assert_eq!(net, before);
    }
}
