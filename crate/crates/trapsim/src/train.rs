//! Experiment engine: the training loop, greedy evaluation, demonstration
//! collection, and trajectory rollouts. The command-line harness is a thin
//! wrapper over these entry points.

use crate::demos::{
    anneal_beta, collect_demos, DemoDataset, DemoMode, MixedReplayBuffer, Transition,
};
use crate::dynamics::{DiscreteAction, ACTION_COUNT};
use crate::env::{Observation, ScenarioConfig, TerminationCause, TrapEnv, OBS_DIM};
use crate::error::{Error, Result};
use crate::heuristic::{HeuristicParams, RulePolicy, StochasticRulePolicy};
use crate::metrics::{effective_actions, policy_entropy_avg, EpisodeRecord};
use crate::rng::Rng;
use crate::sac::{DiscreteSac, SacConfig};
use serde::{Deserialize, Serialize};

/// Full experiment description: scenario, learner, controller, and the
/// integration mode flags.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub sac: SacConfig,
    pub heuristic: HeuristicParams,
    /// Probability mass the stochastic rule wrapper keeps on the rule action.
    pub p_rule: f64,
    /// Mix demonstration data into the replay buffer.
    pub demo_buffer: bool,
    /// How demonstration data influences learning when the buffer is on.
    pub demo_mode: DemoMode,
    /// Training episode budget.
    pub episodes: usize,
    /// Greedy evaluation cadence in episodes (0 disables periodic eval).
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Episodes rolled out when collecting a demonstration dataset.
    pub demo_episodes: usize,
    /// Gradient updates happen every this many environment steps.
    pub update_every: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: ScenarioConfig::default(),
            sac: SacConfig::default(),
            heuristic: HeuristicParams::default(),
            p_rule: 0.9,
            demo_buffer: false,
            demo_mode: DemoMode::None,
            episodes: 3000,
            eval_every: 0,
            eval_episodes: 20,
            demo_episodes: 200,
            update_every: 1,
            seed: 0,
        }
    }
}

/// The ablation presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Vanilla discrete soft actor-critic.
    Sac,
    /// KL soft constraint only.
    Soft,
    /// Offline replay buffer only (reward augmentation).
    Buffer,
    /// Soft constraint plus reward-augmented offline replay buffer.
    Ours,
    /// The deterministic rule controller itself (evaluation only).
    Rule,
}

impl Preset {
    pub fn parse(name: &str) -> Result<Preset> {
        match name {
            "sac" => Ok(Preset::Sac),
            "soft" => Ok(Preset::Soft),
            "buffer" => Ok(Preset::Buffer),
            "ours" => Ok(Preset::Ours),
            "rule" => Ok(Preset::Rule),
            other => Err(Error::Config(format!(
                "unknown preset '{other}' (expected sac | soft | buffer | ours | rule)"
            ))),
        }
    }

    /// Applies the preset's mode flags to a config.
    pub fn apply(self, config: &mut ExperimentConfig) {
        match self {
            Preset::Sac => {
                config.sac.soft_constraint = false;
                config.demo_buffer = false;
                config.demo_mode = DemoMode::None;
            }
            Preset::Soft => {
                config.sac.soft_constraint = true;
                config.demo_buffer = false;
                config.demo_mode = DemoMode::None;
            }
            Preset::Buffer => {
                config.sac.soft_constraint = false;
                config.demo_buffer = true;
                config.demo_mode = DemoMode::RewardAug;
            }
            Preset::Ours => {
                config.sac.soft_constraint = true;
                config.demo_buffer = true;
                config.demo_mode = DemoMode::RewardAug;
            }
            Preset::Rule => {
                config.sac.soft_constraint = false;
                config.demo_buffer = false;
                config.demo_mode = DemoMode::None;
            }
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.demo_mode != DemoMode::None && !self.demo_buffer {
            return Err(Error::Config(
                "demo_mode requires the demonstration buffer to be enabled".into(),
            ));
        }
        if !(1.0 / ACTION_COUNT as f64..=1.0).contains(&self.p_rule) {
            return Err(Error::Config("p_rule must lie in (1/9, 1]".into()));
        }
        if self.update_every == 0 {
            return Err(Error::Config("update_every must be at least 1".into()));
        }
        Ok(())
    }

    pub fn rule_policy(&self) -> RulePolicy {
        RulePolicy::new(
            self.heuristic.clone(),
            self.scenario.idm.clone(),
            self.scenario.road(),
        )
    }

    pub fn stochastic_rule_policy(&self) -> StochasticRulePolicy {
        StochasticRulePolicy::new(self.rule_policy(), self.p_rule)
    }
}

/// Outcome of a training run.
pub struct TrainResult {
    pub records: Vec<EpisodeRecord>,
    pub agent: DiscreteSac,
    /// Periodic greedy-eval success rates as (episode, success percentage).
    pub eval_points: Vec<(usize, f64)>,
}

/// Runs the full training loop. `dataset` must be provided when the
/// demonstration buffer is enabled. Progress is reported through
/// `on_episode` after every finished episode.
pub fn run_train(
    config: &ExperimentConfig,
    dataset: Option<DemoDataset>,
    mut on_episode: impl FnMut(&EpisodeRecord),
) -> Result<TrainResult> {
    config.validate()?;

    let mut buffer = MixedReplayBuffer::new(config.sac.buffer_capacity);
    if config.demo_buffer {
        let mut dataset = dataset.ok_or_else(|| {
            Error::Config("demonstration buffer enabled but no dataset supplied".into())
        })?;
        if config.demo_mode == DemoMode::RewardAug && !dataset.augmented {
            dataset.augment()?;
        }
        buffer.load_demos(dataset.transitions);
    }

    let root = Rng::seed(config.seed);
    let mut policy_rng = root.fork(0xac71);
    let mut buffer_rng = root.fork(0xb0ff);
    let mut agent = DiscreteSac::new(OBS_DIM, ACTION_COUNT, config.sac.clone(), &mut root.fork(0x0e7));

    let stochastic_rule = config.stochastic_rule_policy();
    let road = config.scenario.road();
    let rule_fn = move |s: &[f64]| -> Vec<f64> {
        let obs = Observation::from_slice(s);
        let view = crate::env::TrafficView::from_observation(&obs, &road);
        stochastic_rule.distribution(&view).to_vec()
    };

    let mut env = TrapEnv::new(config.scenario.clone())?;
    let mut records = Vec::with_capacity(config.episodes);
    let mut eval_points = Vec::new();
    let mut step_counter = 0usize;

    for ep in 0..config.episodes {
        let mut obs = env.reset(ep as u64);
        let mut dists: Vec<Vec<f64>> = Vec::new();
        let mut accumulated = 0.0;
        let mut speed_sum = 0.0;
        let mut distance = 0.0;

        loop {
            let pi = agent.policy(obs.as_slice())?;
            dists.push(pi.probs().to_vec());
            let action = DiscreteAction::new(pi.sample(&mut policy_rng))?;
            let out = env.step(action)?;

            buffer.push(Transition {
                s: obs.values.to_vec(),
                a: action.index(),
                r: out.reward,
                s_next: out.obs.values.to_vec(),
                done: out.terminated,
                is_demo: false,
            });

            accumulated += out.reward;
            speed_sum += env.ego().speed;
            distance += env.ego().speed * config.scenario.dt;
            obs = out.obs;
            step_counter += 1;

            if buffer.online_len() >= config.sac.warmup && step_counter % config.update_every == 0 {
                let beta = if config.demo_buffer { anneal_beta(ep) } else { 0.0 };
                let batch = buffer.sample_batch(config.sac.batch_size, beta, &mut buffer_rng)?;
                let rule_opt: Option<crate::sac::RuleDistFn> = if config.sac.soft_constraint {
                    Some(&rule_fn)
                } else {
                    None
                };
                agent.update(&batch, rule_opt, config.demo_mode)?;
            }

            if out.terminated || out.truncated {
                break;
            }
        }

        let steps = env.steps() as f64;
        let h = policy_entropy_avg(&dists);
        let record = EpisodeRecord {
            episode: ep,
            success: env.is_success(),
            collision: env.cause() == TerminationCause::Collision,
            accumulated_reward: accumulated,
            avg_speed: speed_sum / steps,
            travel_distance: distance,
            avg_entropy: h,
            effective_actions: effective_actions(h),
        };
        on_episode(&record);
        records.push(record);

        if config.eval_every > 0 && (ep + 1) % config.eval_every == 0 {
            let evals = eval_agent(&mut agent, &config.scenario, config.eval_episodes, 0x5eed)?;
            let rate = 100.0 * evals.iter().filter(|r| r.success).count() as f64
                / evals.len() as f64;
            eval_points.push((ep + 1, rate));
        }
    }

    Ok(TrainResult { records, agent, eval_points })
}

/// Greedy-policy evaluation rollouts (argmax actions, no exploration, no
/// updates). Episode seeds are offset so they never collide with training.
pub fn eval_agent(
    agent: &mut DiscreteSac,
    scenario: &ScenarioConfig,
    episodes: usize,
    seed_offset: u64,
) -> Result<Vec<EpisodeRecord>> {
    let mut env = TrapEnv::new(scenario.clone())?;
    let mut records = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let mut obs = env.reset(seed_offset.wrapping_add(ep as u64));
        let mut dists = Vec::new();
        let mut accumulated = 0.0;
        let mut speed_sum = 0.0;
        let mut distance = 0.0;
        loop {
            let pi = agent.policy(obs.as_slice())?;
            dists.push(pi.probs().to_vec());
            let action = DiscreteAction::new(pi.argmax())?;
            let out = env.step(action)?;
            accumulated += out.reward;
            speed_sum += env.ego().speed;
            distance += env.ego().speed * scenario.dt;
            obs = out.obs;
            if out.terminated || out.truncated {
                break;
            }
        }
        let steps = env.steps() as f64;
        let h = policy_entropy_avg(&dists);
        records.push(EpisodeRecord {
            episode: ep,
            success: env.is_success(),
            collision: env.cause() == TerminationCause::Collision,
            accumulated_reward: accumulated,
            avg_speed: speed_sum / steps,
            travel_distance: distance,
            avg_entropy: h,
            effective_actions: effective_actions(h),
        });
    }
    Ok(records)
}

/// Evaluation rollouts of the rule controller (deterministic or stochastic).
pub fn eval_rule(
    config: &ExperimentConfig,
    episodes: usize,
    seed_offset: u64,
    deterministic: bool,
) -> Result<Vec<EpisodeRecord>> {
    let rule = config.stochastic_rule_policy();
    let mut env = TrapEnv::new(config.scenario.clone())?;
    let rng = Rng::seed(config.seed).fork(0xe7a1);
    let mut records = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        env.reset(seed_offset.wrapping_add(ep as u64));
        let mut ep_rng = rng.fork(ep as u64);
        let mut dists = Vec::new();
        let mut accumulated = 0.0;
        let mut speed_sum = 0.0;
        let mut distance = 0.0;
        loop {
            let view = env.view();
            let masses = rule.distribution(&view);
            let action = if deterministic {
                rule.base.action(&view)
            } else {
                DiscreteAction::new(ep_rng.categorical(&masses))?
            };
            if deterministic {
                let mut det = vec![0.0; ACTION_COUNT];
                det[action.index()] = 1.0;
                dists.push(det);
            } else {
                dists.push(masses.to_vec());
            }
            let out = env.step(action)?;
            accumulated += out.reward;
            speed_sum += env.ego().speed;
            distance += env.ego().speed * config.scenario.dt;
            if out.terminated || out.truncated {
                break;
            }
        }
        let steps = env.steps() as f64;
        let h = policy_entropy_avg(&dists);
        records.push(EpisodeRecord {
            episode: ep,
            success: env.is_success(),
            collision: env.cause() == TerminationCause::Collision,
            accumulated_reward: accumulated,
            avg_speed: speed_sum / steps,
            travel_distance: distance,
            avg_entropy: h,
            effective_actions: effective_actions(h),
        });
    }
    Ok(records)
}

/// Collects the demonstration dataset configured in the experiment.
pub fn run_demo_collect(config: &ExperimentConfig, deterministic: bool) -> Result<DemoDataset> {
    config.validate()?;
    let policy = config.stochastic_rule_policy();
    collect_demos(
        &config.scenario,
        &policy,
        config.demo_episodes,
        config.seed,
        deterministic,
    )
}

/// Who drives during a trajectory rollout.
pub enum RolloutPolicy<'a> {
    RuleDeterministic,
    RuleStochastic,
    Agent(&'a mut DiscreteSac),
}

/// Rolls out one recorded episode and returns the environment holding the
/// trajectory.
pub fn run_rollout(
    config: &ExperimentConfig,
    seed: u64,
    mut policy: RolloutPolicy,
) -> Result<TrapEnv> {
    config.validate()?;
    let rule = config.stochastic_rule_policy();
    let mut env = TrapEnv::new(config.scenario.clone())?;
    env.set_recording(true);
    let mut obs = env.reset(seed);
    let mut rng = Rng::seed(config.seed).fork(seed).fork(0x011);
    loop {
        let action = match &mut policy {
            RolloutPolicy::RuleDeterministic => rule.base.action(&env.view()),
            RolloutPolicy::RuleStochastic => rule.sample(&env.view(), &mut rng),
            RolloutPolicy::Agent(agent) => DiscreteAction::new(agent.greedy_action(obs.as_slice())?)?,
        };
        let out = env.step(action)?;
        obs = out.obs;
        if out.terminated || out.truncated {
            break;
        }
    }
    Ok(env)
}

impl Observation {
    /// Rebuilds an observation from a stored feature slice.
    pub fn from_slice(values: &[f64]) -> Observation {
        let mut arr = [0.0; OBS_DIM];
        arr.copy_from_slice(values);
        Observation { values: arr }
    }
}
