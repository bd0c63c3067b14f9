//! Deep Q-learning on one-step temporal differences, with a FIFO replay
//! store and a periodically synced target network.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rl::buffer::ReplayBuffer;
use crate::rl::mlp::{Adam, Gradients, PolicyParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DqnConfig {
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of training over which epsilon anneals linearly.
    pub epsilon_fraction: f64,
    /// Updates between target-network syncs.
    pub target_sync: u64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Gradient steps taken per training iteration.
    pub updates_per_iteration: usize,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_fraction: 0.3,
            target_sync: 500,
            batch_size: 64,
            replay_capacity: 50_000,
            updates_per_iteration: 600,
        }
    }
}

impl DqnConfig {
    /// Linear epsilon schedule over `epsilon_fraction` of all iterations.
    pub fn epsilon_at(&self, iteration: usize, total_iterations: usize) -> f64 {
        let anneal = (total_iterations as f64 * self.epsilon_fraction).max(1.0);
        let t = (iteration as f64 / anneal).min(1.0);
        self.epsilon_start + t * (self.epsilon_end - self.epsilon_start)
    }
}

/// Epsilon-greedy binary action: with probability `epsilon` a uniform random
/// bit, otherwise the argmax Q-value with ties going to action 0.
pub fn act(q_net: &PolicyParams, obs: &[f64], epsilon: f64, rng: &mut impl Rng) -> Result<u8> {
    debug_assert!((0.0..=1.0).contains(&epsilon));
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return Ok(rng.random_range(0..2u8));
    }
    let q = q_net.forward(obs)?;
    Ok(if q[1] > q[0] { 1 } else { 0 })
}

/// Bellman backup target: `r + gamma * max_a Q(s', a)`, zero continuation on
/// terminal transitions.
pub fn td_target(r: f64, gamma: f64, done: bool, max_next_q: f64) -> f64 {
    if done {
        r
    } else {
        r + gamma * max_next_q
    }
}

/// Q-network, target copy, and optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnLearner {
    pub net: PolicyParams,
    pub target: PolicyParams,
    pub opt: Adam,
    pub updates: u64,
}

impl DqnLearner {
    pub fn new(net: PolicyParams) -> Self {
        let target = net.clone();
        let opt = Adam::new(&net);
        Self {
            net,
            target,
            opt,
            updates: 0,
        }
    }

    /// One gradient step on the mean squared TD error over a uniform batch.
    /// Returns the batch loss.
    pub fn update(
        &mut self,
        buffer: &ReplayBuffer,
        gamma: f64,
        lr: f64,
        cfg: &DqnConfig,
        rng: &mut impl Rng,
    ) -> Result<f64> {
        if buffer.len() < cfg.batch_size {
            return Err(Error::InsufficientSamples {
                have: buffer.len(),
                need: cfg.batch_size,
            });
        }
        let idxs = buffer.sample_indices(cfg.batch_size, rng);
        let (loss, grads) = dqn_loss_and_grads(&self.net, &self.target, buffer, &idxs, gamma);
        self.opt.step(&mut self.net, &grads, lr);
        self.updates += 1;
        if self.updates % cfg.target_sync == 0 {
            self.target = self.net.clone();
        }
        Ok(loss)
    }
}

/// Mean squared TD error over the given transitions, with targets held
/// fixed through the target network. Exposed separately so the loss can be
/// finite-difference checked.
pub fn dqn_loss(
    net: &PolicyParams,
    target_net: &PolicyParams,
    buffer: &ReplayBuffer,
    idxs: &[usize],
    gamma: f64,
) -> f64 {
    dqn_loss_and_grads(net, target_net, buffer, idxs, gamma).0
}

fn dqn_loss_and_grads(
    net: &PolicyParams,
    target_net: &PolicyParams,
    buffer: &ReplayBuffer,
    idxs: &[usize],
    gamma: f64,
) -> (f64, Gradients) {
    let n = idxs.len();
    let dim = net.input_dim();
    let mut xs = Vec::with_capacity(n * dim);
    let mut targets = Vec::with_capacity(n);
    for &i in idxs {
        let t = buffer.get(i);
        xs.extend_from_slice(&t.s);
        let max_next = if t.done {
            0.0
        } else {
            let qn = target_net.forward(&t.s_next).expect("dims fixed");
            qn[0].max(qn[1])
        };
        targets.push(td_target(t.r, gamma, t.done, max_next));
    }
    let cache = net.forward_batch(&xs, n);
    let q = cache.output();
    let mut loss = 0.0;
    let mut d_out = vec![0.0; n * 2];
    let inv = 1.0 / n as f64;
    for (k, &i) in idxs.iter().enumerate() {
        let a = buffer.get(i).a as usize;
        let err = q[k * 2 + a] - targets[k];
        loss += err * err * inv;
        d_out[k * 2 + a] = 2.0 * err * inv;
    }
    let grads = net.backward_batch(&xs, &cache, &d_out);
    (loss, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rl::buffer::Transition;
    use crate::rl::mlp::NetworkRole;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn q_table_net(q00: f64, q01: f64) -> PolicyParams {
        // Single linear layer mapping a 1-dim constant input to 2 Q-values.
        PolicyParams {
            role: NetworkRole::QNetwork,
            layers: vec![crate::rl::mlp::DenseLayer {
                w: vec![q00, q01],
                b: vec![0.0, 0.0],
                in_dim: 1,
                out_dim: 2,
            }],
        }
    }

    #[test]
    fn greedy_action_takes_argmax_with_tie_to_zero() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let net = q_table_net(0.3, 0.9);
        assert_eq!(act(&net, &[1.0], 0.0, &mut rng).unwrap(), 1);
        let tie = q_table_net(0.5, 0.5);
        assert_eq!(act(&tie, &[1.0], 0.0, &mut rng).unwrap(), 0);
    }

    #[test]
    fn epsilon_one_is_a_fair_coin() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let net = q_table_net(0.3, 0.9);
        let n = 10_000;
        let ones: usize = (0..n)
            .map(|_| act(&net, &[1.0], 1.0, &mut rng).unwrap() as usize)
            .sum();
        let freq = ones as f64 / n as f64;
        assert!((0.47..=0.53).contains(&freq), "frequency {freq}");
    }

    #[test]
    fn epsilon_zero_with_fixed_params_is_deterministic() {
        let net = q_table_net(0.2, 0.8);
        let mut rng1 = ChaCha12Rng::seed_from_u64(1);
        let mut rng2 = ChaCha12Rng::seed_from_u64(99);
        for _ in 0..50 {
            assert_eq!(
                act(&net, &[1.0], 0.0, &mut rng1).unwrap(),
                act(&net, &[1.0], 0.0, &mut rng2).unwrap()
            );
        }
    }

    #[test]
    fn td_target_arithmetic() {
        assert!((td_target(1.0, 0.9, false, 2.0) - 2.8).abs() < 1e-15);
        assert!((td_target(-0.5, 0.9, true, 7.0) - (-0.5)).abs() < 1e-15);
    }

    #[test]
    fn update_requires_enough_samples() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let net = PolicyParams::new(2, &[8], 2, NetworkRole::QNetwork, &mut rng);
        let mut learner = DqnLearner::new(net);
        let buffer = ReplayBuffer::new(100);
        let cfg = DqnConfig::default();
        assert!(matches!(
            learner.update(&buffer, 0.99, 1e-3, &cfg, &mut rng),
            Err(Error::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn dqn_loss_gradients_match_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let net = PolicyParams::new(3, &[6], 2, NetworkRole::QNetwork, &mut rng);
        let target = PolicyParams::new(3, &[6], 2, NetworkRole::QNetwork, &mut rng);
        let mut buffer = ReplayBuffer::new(64);
        for k in 0..16 {
            buffer.push(Transition {
                s: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
                a: (k % 2) as u8,
                r: rng.random_range(-1.0..1.0),
                s_next: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
                done: k % 5 == 0,
            });
        }
        let idxs: Vec<usize> = (0..16).collect();
        let analytic = dqn_loss_and_grads(&net, &target, &buffer, &idxs, 0.9).1.flat();
        let h = 1e-5;
        let total = net.param_count();
        for k in 0..total {
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
            let numeric = (dqn_loss(&plus, &target, &buffer, &idxs, 0.9)
                - dqn_loss(&minus, &target, &buffer, &idxs, 0.9))
                / (2.0 * h);
            let a = analytic[k];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            assert!(
                (a - numeric).abs() / denom < 1e-4,
                "param {k}: analytic {a} vs numeric {numeric}"
            );
        }
    }

    #[test]
    fn epsilon_schedule_is_linear_then_flat() {
        let cfg = DqnConfig::default();
        assert!((cfg.epsilon_at(0, 100) - 1.0).abs() < 1e-12);
        assert!((cfg.epsilon_at(15, 100) - 0.525).abs() < 1e-12);
        assert!((cfg.epsilon_at(30, 100) - 0.05).abs() < 1e-12);
        assert!((cfg.epsilon_at(90, 100) - 0.05).abs() < 1e-12);
    }
}
