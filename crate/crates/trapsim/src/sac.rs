//! Discrete soft actor-critic with automatic entropy-temperature
//! adjustment and an optional KL soft constraint pulling the policy toward
//! a stochastic rule policy.
//!
//! Twin Q-networks with slowly tracking targets, a categorical policy head,
//! and a log-parameterized temperature. The KL penalty lives in the actor
//! objective only and its weight tracks the temperature as `xi = 200 * alpha`,
//! so relaxing the entropy bonus relaxes the imitation pressure with it.

use crate::demos::{DemoMode, Transition};
use crate::error::{Error, Result};
use crate::mlp::{Adam, Cache, Gradients, Mlp};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// Probability floor applied before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Hyper-parameters of the learner.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SacConfig {
    pub gamma: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Entropy level the temperature adaptation steers toward.
    pub target_entropy: f64,
    pub alpha_init: f64,
    pub alpha_lr: f64,
    /// KL weight per unit of temperature: `xi = kl_scale_per_alpha * alpha`.
    pub kl_scale_per_alpha: f64,
    /// Whether the KL soft constraint is active.
    pub soft_constraint: bool,
    /// Soft update rate of the target networks.
    pub tau_target: f64,
    pub hidden: Vec<usize>,
    /// Transitions collected before updates begin.
    pub warmup: usize,
    /// Weight of the margin supervision added for demonstration rows.
    pub margin_weight: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        SacConfig {
            gamma: 0.8,
            lr_actor: 5e-4,
            lr_critic: 1e-3,
            batch_size: 64,
            buffer_capacity: 50_000,
            target_entropy: -1.0,
            alpha_init: 0.01,
            alpha_lr: 1e-3,
            kl_scale_per_alpha: 200.0,
            soft_constraint: false,
            tau_target: 0.005,
            hidden: vec![256, 256],
            warmup: 1000,
            margin_weight: 1.0,
        }
    }
}

/// Categorical distribution over the discrete actions, with floored
/// log-probabilities.
#[derive(Debug, Clone)]
pub struct PolicyDistribution {
    probs: Vec<f64>,
    log_probs: Vec<f64>,
}

impl PolicyDistribution {
    /// Stable softmax of raw logits.
    pub fn from_logits(logits: &[f64]) -> PolicyDistribution {
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
        let total: f64 = exp.iter().sum();
        let probs: Vec<f64> = exp.iter().map(|e| e / total).collect();
        Self::from_masses(&probs)
    }

    /// Wraps an already-normalized mass vector.
    pub fn from_masses(masses: &[f64]) -> PolicyDistribution {
        let log_probs = masses.iter().map(|&p| p.max(PROB_FLOOR).ln()).collect();
        PolicyDistribution { probs: masses.to_vec(), log_probs }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .zip(&self.log_probs)
            .map(|(p, lp)| p * lp)
            .sum::<f64>()
    }

    /// Exact KL divergence `KL(self || other)` over the action set.
    pub fn kl_from(&self, other: &PolicyDistribution) -> f64 {
        self.probs
            .iter()
            .zip(&self.log_probs)
            .zip(&other.log_probs)
            .map(|((p, lp), lq)| p * (lp - lq))
            .sum()
    }

    pub fn argmax(&self) -> usize {
        self.probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap()
    }

    pub fn sample(&self, rng: &mut Rng) -> usize {
        rng.categorical(&self.probs)
    }
}

/// Soft state value under the twin-minimum critic:
/// `sum_a pi(a) (min(q1(a), q2(a)) - alpha log pi(a))`.
pub fn soft_state_value(q1: &[f64], q2: &[f64], pi: &PolicyDistribution, alpha: f64) -> f64 {
    pi.probs()
        .iter()
        .zip(pi.log_probs())
        .zip(q1.iter().zip(q2.iter()))
        .map(|((p, lp), (a, b))| p * (a.min(*b) - alpha * lp))
        .sum()
}

/// Produces the rule-policy masses for a batch state.
pub type RuleDistFn<'a> = &'a dyn Fn(&[f64]) -> Vec<f64>;

/// Diagnostics of one gradient update.
#[derive(Debug, Clone, Default)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub mean_entropy: f64,
    pub alpha: f64,
    pub kl_coef: f64,
    pub mean_kl: f64,
}

/// The learner: policy network, twin critics, their targets, optimizer
/// state, and the temperature.
#[derive(Debug, Clone)]
pub struct DiscreteSac {
    actor: Mlp,
    q1: Mlp,
    q2: Mlp,
    target_q1: Mlp,
    target_q2: Mlp,
    opt_actor: Adam,
    opt_q1: Adam,
    opt_q2: Adam,
    log_alpha: f64,
    config: SacConfig,
    obs_dim: usize,
    action_count: usize,
    cache: Cache,
}

impl DiscreteSac {
    pub fn new(obs_dim: usize, action_count: usize, config: SacConfig, rng: &mut Rng) -> DiscreteSac {
        let mut dims = vec![obs_dim];
        dims.extend_from_slice(&config.hidden);
        dims.push(action_count);

        // Small final layers keep the initial policy near uniform and the
        // initial Q-values near zero.
        let actor = Mlp::new(&dims, &mut rng.fork(1), 0.01);
        let q1 = Mlp::new(&dims, &mut rng.fork(2), 0.01);
        let q2 = Mlp::new(&dims, &mut rng.fork(3), 0.01);
        let target_q1 = q1.clone();
        let target_q2 = q2.clone();

        let opt_actor = Adam::new(&actor, config.lr_actor);
        let opt_q1 = Adam::new(&q1, config.lr_critic);
        let opt_q2 = Adam::new(&q2, config.lr_critic);
        let log_alpha = config.alpha_init.ln();

        DiscreteSac {
            actor,
            q1,
            q2,
            target_q1,
            target_q2,
            opt_actor,
            opt_q1,
            opt_q2,
            log_alpha,
            config,
            obs_dim,
            action_count,
            cache: Cache::default(),
        }
    }

    pub fn config(&self) -> &SacConfig {
        &self.config
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    /// Current KL weight; tracks the temperature exactly.
    pub fn kl_coefficient(&self) -> f64 {
        if self.config.soft_constraint {
            self.config.kl_scale_per_alpha * self.alpha()
        } else {
            0.0
        }
    }

    /// Policy distribution at a state.
    pub fn policy(&mut self, obs: &[f64]) -> Result<PolicyDistribution> {
        let logits = self.actor.forward(obs, &mut self.cache)?;
        Ok(PolicyDistribution::from_logits(logits))
    }

    pub fn sample_action(&mut self, obs: &[f64], rng: &mut Rng) -> Result<usize> {
        Ok(self.policy(obs)?.sample(rng))
    }

    pub fn greedy_action(&mut self, obs: &[f64]) -> Result<usize> {
        Ok(self.policy(obs)?.argmax())
    }

    pub fn q_values(&mut self, obs: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let a = self.q1.forward(obs, &mut self.cache)?.to_vec();
        let b = self.q2.forward(obs, &mut self.cache)?.to_vec();
        Ok((a, b))
    }

    /// Temporal-difference regression targets for a batch, using the target
    /// critics and the current policy at the successor states.
    pub fn td_targets(&mut self, batch: &[Transition]) -> Result<Vec<f64>> {
        let alpha = self.alpha();
        let mut targets = Vec::with_capacity(batch.len());
        for row in batch {
            let y = if row.done {
                row.r
            } else {
                let pi = PolicyDistribution::from_logits(
                    self.actor.forward(&row.s_next, &mut self.cache)?,
                );
                let tq1 = self.target_q1.forward(&row.s_next, &mut self.cache)?.to_vec();
                let tq2 = self.target_q2.forward(&row.s_next, &mut self.cache)?;
                row.r + self.config.gamma * soft_state_value(&tq1, tq2, &pi, alpha)
            };
            targets.push(y);
        }
        Ok(targets)
    }

    /// One full gradient update: twin critics (TD regression plus optional
    /// filtered margin supervision on demonstration rows), actor
    /// (entropy-regularized objective plus optional KL soft constraint),
    /// temperature, and target tracking.
    pub fn update(
        &mut self,
        batch: &[Transition],
        rule: Option<RuleDistFn>,
        demo_mode: DemoMode,
    ) -> Result<UpdateStats> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        if self.config.soft_constraint && rule.is_none() {
            return Err(Error::Config(
                "soft constraint enabled but no rule policy supplied".into(),
            ));
        }
        let n = batch.len() as f64;
        let targets = self.td_targets(batch)?;

        // Critic pass.
        let mut grads_q1 = Gradients::zeros_like(&self.q1);
        let mut grads_q2 = Gradients::zeros_like(&self.q2);
        let mut critic_loss = 0.0;
        let mut cache1 = Cache::default();
        let mut cache2 = Cache::default();
        for (row, &y) in batch.iter().zip(&targets) {
            let q1_row = self.q1.forward(&row.s, &mut cache1)?.to_vec();
            let q2_row = self.q2.forward(&row.s, &mut cache2)?.to_vec();
            let mut d1 = vec![0.0; self.action_count];
            let mut d2 = vec![0.0; self.action_count];

            let e1 = q1_row[row.a] - y;
            let e2 = q2_row[row.a] - y;
            critic_loss += (e1 * e1 + e2 * e2) / n;
            d1[row.a] += 2.0 * e1 / n;
            d2[row.a] += 2.0 * e2 / n;

            if row.is_demo && demo_mode == DemoMode::Margin {
                let w = self.config.margin_weight / n;
                critic_loss += self.config.margin_weight
                    * (crate::demos::q_filtered_margin(&q1_row, row.a)
                        + crate::demos::q_filtered_margin(&q2_row, row.a))
                    / n;
                accumulate_margin_grad(&q1_row, row.a, w, &mut d1);
                accumulate_margin_grad(&q2_row, row.a, w, &mut d2);
            }

            self.q1.backward(&cache1, &d1, &mut grads_q1);
            self.q2.backward(&cache2, &d2, &mut grads_q2);
        }
        self.opt_q1.apply(&mut self.q1, &grads_q1);
        self.opt_q2.apply(&mut self.q2, &grads_q2);

        // Actor pass on the freshly updated critics.
        let alpha = self.alpha();
        let xi = self.kl_coefficient();
        let mut grads_actor = Gradients::zeros_like(&self.actor);
        let mut actor_loss = 0.0;
        let mut entropy_sum = 0.0;
        let mut kl_sum = 0.0;
        let mut actor_cache = Cache::default();
        for row in batch {
            let logits = self.actor.forward(&row.s, &mut actor_cache)?.to_vec();
            let pi = PolicyDistribution::from_logits(&logits);
            let q1_row = self.q1.forward(&row.s, &mut cache1)?.to_vec();
            let q2_row = self.q2.forward(&row.s, &mut cache2)?;

            let rho = match (self.config.soft_constraint, rule) {
                (true, Some(r)) => Some(PolicyDistribution::from_masses(&r(&row.s))),
                _ => None,
            };

            // Per-action integrand: alpha log pi - min(q1, q2) + xi (log pi - log rho).
            let mut per_state = 0.0;
            let mut f = vec![0.0; self.action_count];
            for a in 0..self.action_count {
                let min_q = q1_row[a].min(q2_row[a]);
                let mut fa = alpha * pi.log_probs()[a] - min_q;
                if let Some(rho) = &rho {
                    fa += xi * (pi.log_probs()[a] - rho.log_probs()[a]);
                }
                f[a] = fa;
                per_state += pi.probs()[a] * fa;
            }
            actor_loss += per_state / n;
            entropy_sum += pi.entropy();
            if let Some(rho) = &rho {
                kl_sum += pi.kl_from(rho);
            }

            // d/dz_k of sum_a pi_a f_a = pi_k (f_k - sum_a pi_a f_a); the
            // direct df/dz contribution cancels exactly for both the
            // entropy and KL terms.
            let mut dz = vec![0.0; self.action_count];
            for k in 0..self.action_count {
                dz[k] = pi.probs()[k] * (f[k] - per_state) / n;
            }
            self.actor.backward(&actor_cache, &dz, &mut grads_actor);
        }
        self.opt_actor.apply(&mut self.actor, &grads_actor);

        // Temperature: descend alpha when entropy sits above the target.
        let mean_entropy = entropy_sum / n;
        self.log_alpha -= self.config.alpha_lr * (mean_entropy - self.config.target_entropy);

        self.soft_update_targets();

        Ok(UpdateStats {
            critic_loss,
            actor_loss,
            mean_entropy,
            alpha: self.alpha(),
            kl_coef: self.kl_coefficient(),
            mean_kl: kl_sum / n,
        })
    }

    /// Target tracking: `target <- (1 - tau) target + tau online`.
    pub fn soft_update_targets(&mut self) {
        let tau = self.config.tau_target;
        self.target_q1.blend_from(&self.q1, tau);
        self.target_q2.blend_from(&self.q2, tau);
    }

    /// Serializes the full agent (networks, targets, temperature).
    pub fn save<W: Write>(&self, out: &mut W) -> Result<()> {
        out.write_all(AGENT_MAGIC)?;
        out.write_all(&AGENT_VERSION.to_le_bytes())?;
        out.write_all(&(self.obs_dim as u32).to_le_bytes())?;
        out.write_all(&(self.action_count as u32).to_le_bytes())?;
        out.write_all(&self.log_alpha.to_le_bytes())?;
        for net in [&self.actor, &self.q1, &self.q2, &self.target_q1, &self.target_q2] {
            net.write(out)?;
        }
        Ok(())
    }

    /// Restores an agent saved by [`DiscreteSac::save`]. The optimizer
    /// state restarts fresh; the checkpoint carries the parameters.
    pub fn load<R: Read>(input: &mut R, config: SacConfig) -> Result<DiscreteSac> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != AGENT_MAGIC {
            return Err(Error::Checkpoint("bad agent magic".into()));
        }
        let mut buf4 = [0u8; 4];
        input.read_exact(&mut buf4)?;
        let version = u32::from_le_bytes(buf4);
        if version != AGENT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported agent version {version}")));
        }
        input.read_exact(&mut buf4)?;
        let obs_dim = u32::from_le_bytes(buf4) as usize;
        input.read_exact(&mut buf4)?;
        let action_count = u32::from_le_bytes(buf4) as usize;
        let mut buf8 = [0u8; 8];
        input.read_exact(&mut buf8)?;
        let log_alpha = f64::from_le_bytes(buf8);

        let actor = Mlp::read(input)?;
        let q1 = Mlp::read(input)?;
        let q2 = Mlp::read(input)?;
        let target_q1 = Mlp::read(input)?;
        let target_q2 = Mlp::read(input)?;
        if actor.input_dim() != obs_dim || actor.output_dim() != action_count {
            return Err(Error::Checkpoint("inconsistent checkpoint dimensions".into()));
        }
        let mut expected = vec![obs_dim];
        expected.extend_from_slice(&config.hidden);
        expected.push(action_count);
        if actor.dims() != expected.as_slice() {
            return Err(Error::Checkpoint(format!(
                "checkpoint architecture {:?} does not match configured {:?}",
                actor.dims(),
                expected
            )));
        }

        let opt_actor = Adam::new(&actor, config.lr_actor);
        let opt_q1 = Adam::new(&q1, config.lr_critic);
        let opt_q2 = Adam::new(&q2, config.lr_critic);
        Ok(DiscreteSac {
            actor,
            q1,
            q2,
            target_q1,
            target_q2,
            opt_actor,
            opt_q1,
            opt_q2,
            log_alpha,
            config,
            obs_dim,
            action_count,
            cache: Cache::default(),
        })
    }
}

const AGENT_MAGIC: &[u8; 8] = b"TSSAC\x00\x00\x01";
const AGENT_VERSION: u32 = 1;

/// Gradient of the filtered margin term with respect to the Q-row.
fn accumulate_margin_grad(q_row: &[f64], a_demo: usize, weight: f64, out: &mut [f64]) {
    let max_q = q_row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if q_row[a_demo] < max_q {
        return; // filter closed: no supervision
    }
    // argmax of q(a) + l(a_demo, a)
    let mut best = a_demo;
    let mut best_v = q_row[a_demo];
    for (a, &q) in q_row.iter().enumerate() {
        let v = q + if a == a_demo { 0.0 } else { 1.0 };
        if v > best_v {
            best = a;
            best_v = v;
        }
    }
    if best != a_demo {
        out[best] += weight;
        out[a_demo] -= weight;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::demos::DemoMode;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn tiny_config() -> SacConfig {
        SacConfig { hidden: vec![16, 16], warmup: 0, ..SacConfig::default() }
    }

    fn transition(s: Vec<f64>, a: usize, r: f64, s2: Vec<f64>, done: bool) -> Transition {
        Transition { s, a, r, s_next: s2, done, is_demo: false }
    }

    #[test]
    fn soft_value_examples() {
        // Deterministic policy, zero temperature: plain twin minimum.
        let mut masses = vec![0.0; 9];
        masses[3] = 1.0;
        let pi = PolicyDistribution::from_masses(&masses);
        let q1 = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
        let q2 = vec![9.0, 8.0, 7.0, 3.0, 5.0, 4.0, 3.0, 2.0, 1.0];
        assert_relative_eq!(soft_state_value(&q1, &q2, &pi, 0.0), 3.0, epsilon = 1e-9);

        // Uniform policy, zero critics: the pure entropy bonus.
        let pi = PolicyDistribution::from_masses(&vec![1.0 / 9.0; 9]);
        let zeros = vec![0.0; 9];
        let alpha = 0.7;
        assert_relative_eq!(
            soft_state_value(&zeros, &zeros, &pi, alpha),
            alpha * 9.0f64.ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn soft_value_matches_brute_force_sum() {
        let mut rng = Rng::seed(5);
        for _ in 0..50 {
            let q1: Vec<f64> = (0..9).map(|_| rng.uniform(-3.0, 3.0)).collect();
            let q2: Vec<f64> = (0..9).map(|_| rng.uniform(-3.0, 3.0)).collect();
            let logits: Vec<f64> = (0..9).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let pi = PolicyDistribution::from_logits(&logits);
            let alpha = rng.uniform(0.0, 1.0);

            let mut oracle = 0.0;
            for a in 0..9 {
                let min_q = if q1[a] < q2[a] { q1[a] } else { q2[a] };
                oracle += pi.probs()[a] * (min_q - alpha * pi.probs()[a].ln());
            }
            assert_relative_eq!(
                soft_state_value(&q1, &q2, &pi, alpha),
                oracle,
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn td_target_is_reward_on_done() {
        let mut rng = Rng::seed(1);
        let mut agent = DiscreteSac::new(4, 9, tiny_config(), &mut rng);
        let batch = vec![transition(vec![0.1; 4], 2, 1.25, vec![0.2; 4], true)];
        let y = agent.td_targets(&batch).unwrap();
        assert_eq!(y[0], 1.25);
    }

    #[test]
    fn td_target_ignores_next_state_when_gamma_zero() {
        let mut rng = Rng::seed(2);
        let mut cfg = tiny_config();
        cfg.gamma = 0.0;
        let mut agent = DiscreteSac::new(4, 9, cfg, &mut rng);
        let batch = vec![transition(vec![0.1; 4], 2, -0.5, vec![10.0; 4], false)];
        let y = agent.td_targets(&batch).unwrap();
        assert_relative_eq!(y[0], -0.5, epsilon = 1e-12);
    }

    /// With zero-initialized output heads the policy is uniform and the
    /// target critics are zero, so the soft value is exactly alpha ln(A).
    #[test]
    fn td_target_matches_hand_evaluation_on_scripted_batch() {
        let mut rng = Rng::seed(3);
        let mut cfg = tiny_config();
        cfg.alpha_init = 0.05;
        let gamma = cfg.gamma;
        let mut agent = DiscreteSac::new(4, 9, cfg, &mut rng);
        // Zero the actor and critic output heads deterministically by
        // blending targets from themselves (no-op) and relying on the
        // 0.01-scaled init being small: instead, build nets with zero
        // final scale through a fresh agent.
        let mut cfg0 = tiny_config();
        cfg0.alpha_init = 0.05;
        let mut zero_rng = Rng::seed(4);
        let mut fresh = DiscreteSac::new(4, 9, cfg0, &mut zero_rng);
        // Force exact zeros on every parameter of actor + critics + targets.
        for net in [
            &mut fresh.actor,
            &mut fresh.q1,
            &mut fresh.q2,
            &mut fresh.target_q1,
            &mut fresh.target_q2,
        ] {
            for i in 0..net.param_count() {
                net.set_param(i, 0.0);
            }
        }
        let batch = vec![
            transition(vec![0.3; 4], 1, 0.7, vec![0.1; 4], false),
            transition(vec![-0.2; 4], 5, -1.0, vec![0.4; 4], true),
        ];
        let y = fresh.td_targets(&batch).unwrap();
        let expected0 = 0.7 + gamma * 0.05 * 9.0f64.ln();
        assert_relative_eq!(y[0], expected0, epsilon = 1e-12);
        assert_eq!(y[1], -1.0);
        let _ = agent;
    }

    #[test]
    fn kl_zero_for_identical_distributions() {
        let logits = vec![0.3, -0.2, 0.9, 0.0, 1.1, -0.5, 0.2, 0.4, -1.0];
        let p = PolicyDistribution::from_logits(&logits);
        let q = PolicyDistribution::from_logits(&logits);
        assert!(p.kl_from(&q).abs() < 1e-12);
    }

    #[test]
    fn kl_uniform_vs_rule_matches_brute_force() {
        let uniform = PolicyDistribution::from_masses(&vec![1.0 / 9.0; 9]);
        let mut rule = vec![0.0125; 9];
        rule[4] = 0.9;
        let rho = PolicyDistribution::from_masses(&rule);
        let mut oracle = 0.0;
        for a in 0..9 {
            oracle += (1.0 / 9.0) * ((1.0 / 9.0f64).ln() - rule[a].ln());
        }
        assert_relative_eq!(uniform.kl_from(&rho), oracle, epsilon = 1e-12);
    }

    #[test]
    fn soft_constraint_without_rule_is_an_error() {
        let mut rng = Rng::seed(7);
        let mut cfg = tiny_config();
        cfg.soft_constraint = true;
        let mut agent = DiscreteSac::new(4, 9, cfg, &mut rng);
        let batch = vec![transition(vec![0.0; 4], 0, 0.0, vec![0.0; 4], false)];
        assert!(matches!(
            agent.update(&batch, None, DemoMode::None),
            Err(Error::Config(_))
        ));
    }

    /// Disabling the constraint reduces the update to vanilla discrete SAC:
    /// supplying or omitting the rule distribution must not change anything.
    #[test]
    fn zero_xi_reduces_to_vanilla_sac() {
        let make_batch = |rng: &mut Rng| {
            (0..8)
                .map(|i| {
                    let s: Vec<f64> = (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect();
                    let s2: Vec<f64> = (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect();
                    transition(s, i % 9, rng.uniform(-1.0, 1.0), s2, i % 4 == 0)
                })
                .collect::<Vec<_>>()
        };
        let mut rng_a = Rng::seed(11);
        let mut rng_b = Rng::seed(11);
        let mut batch_rng = Rng::seed(12);
        let batch = make_batch(&mut batch_rng);

        let mut plain = DiscreteSac::new(4, 9, tiny_config(), &mut rng_a);
        let mut with_rule = DiscreteSac::new(4, 9, tiny_config(), &mut rng_b);
        let rule = |_: &[f64]| vec![1.0 / 9.0; 9];

        plain.update(&batch, None, DemoMode::None).unwrap();
        with_rule.update(&batch, Some(&rule), DemoMode::None).unwrap();

        for i in 0..plain.actor.param_count() {
            assert_eq!(plain.actor.get_param(i), with_rule.actor.get_param(i));
        }
    }

    #[test]
    fn kl_coefficient_tracks_alpha() {
        let mut rng = Rng::seed(13);
        let mut cfg = tiny_config();
        cfg.soft_constraint = true;
        let mut agent = DiscreteSac::new(4, 9, cfg, &mut rng);
        let rule = |_: &[f64]| vec![1.0 / 9.0; 9];
        let mut batch_rng = Rng::seed(14);
        for _ in 0..5 {
            let batch: Vec<Transition> = (0..8)
                .map(|i| {
                    let s: Vec<f64> = (0..4).map(|_| batch_rng.uniform(-1.0, 1.0)).collect();
                    let s2: Vec<f64> = (0..4).map(|_| batch_rng.uniform(-1.0, 1.0)).collect();
                    transition(s, i % 9, batch_rng.uniform(-1.0, 1.0), s2, false)
                })
                .collect();
            let stats = agent.update(&batch, Some(&rule), DemoMode::None).unwrap();
            assert_relative_eq!(stats.kl_coef, 200.0 * stats.alpha, epsilon = 1e-12);
            assert!(stats.alpha > 0.0);
        }
    }

    /// A near-uniform policy has entropy above the target, so the
    /// temperature must fall; it stays positive through the log
    /// parameterization.
    #[test]
    fn alpha_decreases_when_entropy_above_target() {
        let mut rng = Rng::seed(17);
        let mut agent = DiscreteSac::new(4, 9, tiny_config(), &mut rng);
        let a0 = agent.alpha();
        let mut batch_rng = Rng::seed(18);
        let batch: Vec<Transition> = (0..8)
            .map(|i| {
                let s: Vec<f64> = (0..4).map(|_| batch_rng.uniform(-1.0, 1.0)).collect();
                let s2: Vec<f64> = (0..4).map(|_| batch_rng.uniform(-1.0, 1.0)).collect();
                transition(s, i % 9, 0.1, s2, false)
            })
            .collect();
        let stats = agent.update(&batch, None, DemoMode::None).unwrap();
        assert!(stats.mean_entropy > agent.config.target_entropy);
        assert!(agent.alpha() < a0);
        assert!(agent.alpha() > 0.0);
    }

    #[test]
    fn target_blend_examples() {
        let mut rng = Rng::seed(19);
        let mut agent = DiscreteSac::new(4, 9, tiny_config(), &mut rng);
        let q1_snapshot = agent.q1.clone();

        // tau = 1: targets equal the online nets.
        agent.config.tau_target = 1.0;
        agent.soft_update_targets();
        assert_eq!(agent.target_q1, agent.q1);

        // tau = 0: targets unchanged.
        agent.config.tau_target = 0.0;
        let before = agent.target_q1.clone();
        agent.soft_update_targets();
        assert_eq!(agent.target_q1, before);

        // Scripted scalar blend.
        agent.config.tau_target = 0.005;
        let t0 = agent.target_q1.get_param(0);
        let o0 = agent.q1.get_param(0);
        agent.soft_update_targets();
        assert_relative_eq!(
            agent.target_q1.get_param(0),
            0.995 * t0 + 0.005 * o0,
            epsilon = 1e-15
        );
        let _ = q1_snapshot;
    }

    #[test]
    fn agent_checkpoint_roundtrip() {
        let mut rng = Rng::seed(23);
        let mut agent = DiscreteSac::new(6, 9, tiny_config(), &mut rng);
        let mut batch_rng = Rng::seed(24);
        let batch: Vec<Transition> = (0..8)
            .map(|i| {
                let s: Vec<f64> = (0..6).map(|_| batch_rng.uniform(-1.0, 1.0)).collect();
                let s2: Vec<f64> = (0..6).map(|_| batch_rng.uniform(-1.0, 1.0)).collect();
                transition(s, i % 9, 0.3, s2, false)
            })
            .collect();
        agent.update(&batch, None, DemoMode::None).unwrap();

        let mut buf = Vec::new();
        agent.save(&mut buf).unwrap();
        let mut loaded = DiscreteSac::load(&mut buf.as_slice(), tiny_config()).unwrap();
        assert_eq!(loaded.alpha(), agent.alpha());
        let obs = vec![0.2; 6];
        let p1 = agent.policy(&obs).unwrap();
        let p2 = loaded.policy(&obs).unwrap();
        assert_eq!(p1.probs(), p2.probs());

        // Architecture mismatch is rejected.
        let mut other_cfg = tiny_config();
        other_cfg.hidden = vec![8];
        assert!(DiscreteSac::load(&mut buf.as_slice(), other_cfg).is_err());
    }

    proptest! {
        #[test]
        fn policy_distribution_is_valid(logits in proptest::collection::vec(-30.0..30.0f64, 9)) {
            let pi = PolicyDistribution::from_logits(&logits);
            let sum: f64 = pi.probs().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(pi.probs().iter().all(|&p| p >= 0.0));
            prop_assert!(pi.log_probs().iter().all(|&lp| lp.is_finite()));
            prop_assert!(pi.entropy() >= -1e-12 && pi.entropy() <= 9.0f64.ln() + 1e-9);
        }

        #[test]
        fn kl_nonnegative_on_random_pairs(
            a in proptest::collection::vec(-5.0..5.0f64, 9),
            b in proptest::collection::vec(-5.0..5.0f64, 9),
        ) {
            let p = PolicyDistribution::from_logits(&a);
            let q = PolicyDistribution::from_logits(&b);
            prop_assert!(p.kl_from(&q) >= -1e-10);
        }
    }
}
