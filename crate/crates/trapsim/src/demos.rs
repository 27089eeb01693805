//! Demonstration collection, the mixed replay buffer with an annealed
//! offline ratio, margin supervision with a Q-filter, and reward
//! augmentation.

use crate::env::{ScenarioConfig, TrapEnv};
use crate::error::{Error, Result};
use crate::heuristic::StochasticRulePolicy;
use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// Constant bonus added to demonstration rewards in reward-augmentation
/// mode.
pub const REWARD_BONUS: f64 = 2.0;

/// Initial offline ratio of the annealing schedule.
pub const BETA_INITIAL: f64 = 0.6;
/// Episodes over which the offline ratio decays to zero.
pub const BETA_HORIZON: usize = 1000;

/// How demonstrations enter the learner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DemoMode {
    None,
    Margin,
    RewardAug,
}

/// One replay record.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: usize,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub done: bool,
    pub is_demo: bool,
}

/// Linearly annealed offline ratio: starts at 0.6 and reaches 0 after the
/// first 1000 episodes.
pub fn anneal_beta(episode: usize) -> f64 {
    BETA_INITIAL * (1.0 - episode as f64 / BETA_HORIZON as f64).max(0.0)
}

/// Margin supervision for one demonstration row:
/// `max_a [q(a) + l(a_demo, a)] - q(a_demo)` with a unit margin on every
/// non-demonstrated action.
pub fn margin_loss(q_row: &[f64], a_demo: usize) -> f64 {
    let best = q_row
        .iter()
        .enumerate()
        .map(|(a, &q)| q + if a == a_demo { 0.0 } else { 1.0 })
        .fold(f64::NEG_INFINITY, f64::max);
    best - q_row[a_demo]
}

/// Margin supervision gated by the Q-filter: applied only when the
/// demonstrated action is already the argmax of the row (ties pass).
pub fn q_filtered_margin(q_row: &[f64], a_demo: usize) -> f64 {
    let max_q = q_row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if q_row[a_demo] >= max_q {
        margin_loss(q_row, a_demo)
    } else {
        0.0
    }
}

/// Reward augmentation applied once at demonstration storage time.
pub fn augment_reward(r: f64) -> f64 {
    r + REWARD_BONUS
}

/// Demonstration dataset plus collection statistics.
#[derive(Debug, Clone)]
pub struct DemoDataset {
    pub transitions: Vec<Transition>,
    /// Whether rewards already carry the augmentation bonus.
    pub augmented: bool,
    pub episodes: usize,
    pub successes: usize,
    /// Episode indices that failed the escape check, if any.
    pub failures: Vec<usize>,
}

impl DemoDataset {
    pub fn success_rate(&self) -> f64 {
        if self.episodes == 0 {
            return 0.0;
        }
        self.successes as f64 / self.episodes as f64
    }

    /// Adds the reward bonus to every stored transition. Errors if applied
    /// twice; the flag travels with the dataset.
    pub fn augment(&mut self) -> Result<()> {
        if self.augmented {
            return Err(Error::AlreadyAugmented);
        }
        for t in &mut self.transitions {
            t.r = augment_reward(t.r);
        }
        self.augmented = true;
        Ok(())
    }
}

/// Rolls out the rule policy and records every transition as a
/// demonstration. With `deterministic` the wrapper's off-actions are
/// disabled and the raw rule action is taken each step.
pub fn collect_demos(
    config: &ScenarioConfig,
    policy: &StochasticRulePolicy,
    episodes: usize,
    seed: u64,
    deterministic: bool,
) -> Result<DemoDataset> {
    let mut env = TrapEnv::new(config.clone())?;
    let rng = Rng::seed(seed).fork(0xde30);
    let mut transitions = Vec::new();
    let mut successes = 0;
    let mut failures = Vec::new();

    for ep in 0..episodes {
        let mut obs = env.reset(seed.wrapping_add(ep as u64));
        let mut ep_rng = rng.fork(ep as u64);
        loop {
            let view = env.view();
            let action = if deterministic {
                policy.base.action(&view)
            } else {
                policy.sample(&view, &mut ep_rng)
            };
            let out = env.step(action)?;
            transitions.push(Transition {
                s: obs.values.to_vec(),
                a: action.index(),
                r: out.reward,
                s_next: out.obs.values.to_vec(),
                done: out.terminated,
                is_demo: true,
            });
            obs = out.obs;
            if out.terminated || out.truncated {
                break;
            }
        }
        if env.is_success() {
            successes += 1;
        } else {
            failures.push(ep);
        }
    }

    Ok(DemoDataset {
        transitions,
        augmented: false,
        episodes,
        successes,
        failures,
    })
}

/// Replay storage mixing a bounded online ring buffer with an immutable
/// demonstration store.
#[derive(Debug, Clone)]
pub struct MixedReplayBuffer {
    online: Vec<Transition>,
    head: usize,
    capacity: usize,
    demos: Vec<Transition>,
}

impl MixedReplayBuffer {
    pub fn new(capacity: usize) -> MixedReplayBuffer {
        MixedReplayBuffer {
            online: Vec::new(),
            head: 0,
            capacity,
            demos: Vec::new(),
        }
    }

    /// Installs the demonstration store (read-only afterwards).
    pub fn load_demos(&mut self, transitions: Vec<Transition>) {
        self.demos = transitions;
    }

    /// Appends an online transition, evicting the oldest when full.
    pub fn push(&mut self, t: Transition) {
        if self.online.len() < self.capacity {
            self.online.push(t);
        } else {
            self.online[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    pub fn online_len(&self) -> usize {
        self.online.len()
    }

    pub fn demo_len(&self) -> usize {
        self.demos.len()
    }

    /// Samples `floor(beta * size)` demonstration rows and fills the rest
    /// with online rows, both uniformly.
    pub fn sample_batch(&self, size: usize, beta: f64, rng: &mut Rng) -> Result<Vec<Transition>> {
        let n_demo = (beta * size as f64).floor() as usize;
        if n_demo > 0 && self.demos.is_empty() {
            return Err(Error::Config(
                "offline ratio positive but the demo store is empty".into(),
            ));
        }
        if n_demo < size && self.online.is_empty() {
            return Err(Error::Config("online buffer is empty".into()));
        }
        let mut batch = Vec::with_capacity(size);
        for _ in 0..n_demo {
            batch.push(self.demos[rng.below(self.demos.len())].clone());
        }
        for _ in n_demo..size {
            batch.push(self.online[rng.below(self.online.len())].clone());
        }
        Ok(batch)
    }
}

const DATASET_MAGIC: &[u8; 8] = b"TRAPDEMO";
const DATASET_VERSION: u32 = 1;

/// Writes the dataset as length-prefixed binary records under a magic and
/// version header.
pub fn write_dataset<W: Write>(dataset: &DemoDataset, out: &mut W) -> Result<()> {
    out.write_all(DATASET_MAGIC)?;
    out.write_all(&DATASET_VERSION.to_le_bytes())?;
    out.write_all(&[dataset.augmented as u8])?;
    let obs_dim = dataset.transitions.first().map_or(0, |t| t.s.len()) as u32;
    out.write_all(&obs_dim.to_le_bytes())?;
    out.write_all(&(dataset.transitions.len() as u64).to_le_bytes())?;
    out.write_all(&(dataset.episodes as u64).to_le_bytes())?;
    out.write_all(&(dataset.successes as u64).to_le_bytes())?;

    for t in &dataset.transitions {
        let payload_len = 8 * t.s.len() + 4 + 8 + 8 * t.s_next.len() + 2;
        out.write_all(&(payload_len as u32).to_le_bytes())?;
        for v in &t.s {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&(t.a as u32).to_le_bytes())?;
        out.write_all(&t.r.to_le_bytes())?;
        for v in &t.s_next {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&[t.done as u8, t.is_demo as u8])?;
    }
    Ok(())
}

/// Reads a dataset written by [`write_dataset`], bit-exactly.
pub fn read_dataset<R: Read>(input: &mut R) -> Result<DemoDataset> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(Error::Checkpoint("bad dataset magic".into()));
    }
    let version = read_u32(input)?;
    if version != DATASET_VERSION {
        return Err(Error::Checkpoint(format!("unsupported dataset version {version}")));
    }
    let augmented = read_u8(input)? != 0;
    let obs_dim = read_u32(input)? as usize;
    let count = read_u64(input)? as usize;
    let episodes = read_u64(input)? as usize;
    let successes = read_u64(input)? as usize;

    let mut transitions = Vec::with_capacity(count);
    for _ in 0..count {
        let payload_len = read_u32(input)? as usize;
        let expected = 8 * obs_dim + 4 + 8 + 8 * obs_dim + 2;
        if payload_len != expected {
            return Err(Error::Checkpoint(format!(
                "record length {payload_len} does not match obs dim {obs_dim}"
            )));
        }
        let mut s = vec![0.0; obs_dim];
        for v in s.iter_mut() {
            *v = read_f64(input)?;
        }
        let a = read_u32(input)? as usize;
        let r = read_f64(input)?;
        let mut s_next = vec![0.0; obs_dim];
        for v in s_next.iter_mut() {
            *v = read_f64(input)?;
        }
        let done = read_u8(input)? != 0;
        let is_demo = read_u8(input)? != 0;
        transitions.push(Transition { s, a, r, s_next, done, is_demo });
    }
    Ok(DemoDataset {
        transitions,
        augmented,
        episodes,
        successes,
        failures: Vec::new(),
    })
}

/// Mirrors the binary dataset as CSV for inspection.
pub fn write_dataset_csv<W: Write>(dataset: &DemoDataset, out: &mut W) -> Result<()> {
    let obs_dim = dataset.transitions.first().map_or(0, |t| t.s.len());
    let mut header: Vec<String> = (0..obs_dim).map(|i| format!("s{i}")).collect();
    header.push("action".into());
    header.push("reward".into());
    header.extend((0..obs_dim).map(|i| format!("sn{i}")));
    header.push("done".into());
    header.push("is_demo".into());
    writeln!(out, "{}", header.join(","))?;
    for t in &dataset.transitions {
        let mut row: Vec<String> = t.s.iter().map(|v| format!("{v:.9}")).collect();
        row.push(t.a.to_string());
        row.push(format!("{:.9}", t.r));
        row.extend(t.s_next.iter().map(|v| format!("{v:.9}")));
        row.push((t.done as u8).to_string());
        row.push((t.is_demo as u8).to_string());
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

fn read_u8<R: Read>(input: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    input.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(input: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
