//! Experiment harness for the trap-scenario simulator: demonstration
//! collection, training with the ablation presets, evaluation, and
//! trajectory export.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use std::fs;
use std::path::{Path, PathBuf};
use trapsim::demos::{read_dataset, write_dataset, write_dataset_csv, DemoMode};
use trapsim::metrics::{aggregate_run, write_metrics_csv, EpisodeRecord};
use trapsim::sac::DiscreteSac;
use trapsim::train::{
    eval_agent, eval_rule, run_demo_collect, run_rollout, run_train, ExperimentConfig, Preset,
    RolloutPolicy,
};

/// Environment variable prefix for config key overrides, e.g.
/// `TRAPSIM_SCENARIO_SEED=7` or `TRAPSIM_SAC_GAMMA=0.9`.
const ENV_PREFIX: &str = "TRAPSIM_";

#[derive(Parser)]
#[command(name = "trapsim", version, about = "Trap-scenario simulator and demonstration-guided RL harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration file; omitted fields use built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Ablation preset: sac | soft | buffer | ours | rule.
    #[arg(long)]
    preset: Option<String>,

    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,

    /// Training/collection episode budget override.
    #[arg(long)]
    episodes: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out the stochastic rule controller and write a demonstration
    /// dataset.
    DemoCollect {
        #[command(flatten)]
        common: Common,
        /// Output dataset path.
        #[arg(long, default_value = "demos.bin")]
        output: PathBuf,
        /// Use the deterministic rule action instead of sampling.
        #[arg(long)]
        deterministic: bool,
        /// Also mirror the dataset as CSV at this path.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train an agent and write the per-episode metrics CSV plus a
    /// checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Demonstration dataset (required by the buffer presets).
        #[arg(long)]
        demos: Option<PathBuf>,
        /// Metrics CSV output path.
        #[arg(long, default_value = "metrics.csv")]
        metrics: PathBuf,
        /// Checkpoint output path.
        #[arg(long, default_value = "agent.ckpt")]
        checkpoint: PathBuf,
        /// Demonstration integration mode override: margin | reward-aug.
        #[arg(long)]
        demo_mode: Option<String>,
        /// Print a progress line every N episodes (0 silences progress).
        #[arg(long, default_value_t = 50)]
        progress_every: usize,
    },
    /// Greedy evaluation of a trained checkpoint, or of the rule
    /// controller with `--preset rule`.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Agent checkpoint to evaluate.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Write the evaluation episode records as CSV here.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Seed offset separating evaluation episodes from training ones.
        #[arg(long, default_value_t = 0x5eed)]
        seed_offset: u64,
        /// Evaluate the stochastic rule wrapper instead of the
        /// deterministic controller (rule preset only).
        #[arg(long)]
        stochastic: bool,
    },
    /// Roll out one episode and export the trajectory CSV.
    Rollout {
        #[command(flatten)]
        common: Common,
        /// Driving policy: rule | rule-stochastic | checkpoint.
        #[arg(long, default_value = "rule")]
        policy: String,
        /// Checkpoint path when `--policy checkpoint`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Episode seed.
        #[arg(long, default_value_t = 0)]
        episode_seed: u64,
        /// Trajectory CSV output path.
        #[arg(long, default_value = "trajectory.csv")]
        output: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::DemoCollect { common, output, deterministic, csv } => {
            let config = load_config(&common)?;
            let dataset = run_demo_collect(&config, deterministic)?;
            let rate = 100.0 * dataset.success_rate();
            println!(
                "collected {} transitions over {} episodes; demonstrator success rate {:.1}%",
                dataset.transitions.len(),
                dataset.episodes,
                rate
            );
            if !dataset.failures.is_empty() {
                eprintln!(
                    "warning: {} demonstration episode(s) failed the escape check: {:?}",
                    dataset.failures.len(),
                    dataset.failures
                );
            }
            let mut file = fs::File::create(&output)
                .with_context(|| format!("creating {}", output.display()))?;
            write_dataset(&dataset, &mut file)?;
            println!("dataset written to {}", output.display());
            if let Some(csv_path) = csv {
                let mut file = fs::File::create(&csv_path)?;
                write_dataset_csv(&dataset, &mut file)?;
                println!("csv mirror written to {}", csv_path.display());
            }
            Ok(())
        }

        Command::Train { common, demos, metrics, checkpoint, demo_mode, progress_every } => {
            let mut config = load_config(&common)?;
            if let Some(mode) = demo_mode {
                config.demo_mode = parse_demo_mode(&mode)?;
                if config.demo_mode != DemoMode::None {
                    config.demo_buffer = true;
                }
            }
            let dataset = match (&config.demo_buffer, demos) {
                (true, Some(path)) => {
                    let mut file = fs::File::open(&path)
                        .with_context(|| format!("opening demo dataset {}", path.display()))?;
                    Some(read_dataset(&mut file)?)
                }
                (true, None) => bail!("this preset needs --demos <dataset>"),
                (false, _) => None,
            };

            let result = run_train(&config, dataset, |rec| {
                if progress_every > 0 && (rec.episode + 1) % progress_every == 0 {
                    println!(
                        "episode {:>5}: reward {:>8.3} speed {:>6.2} success {} entropy {:.3}",
                        rec.episode + 1,
                        rec.accumulated_reward,
                        rec.avg_speed,
                        rec.success as u8,
                        rec.avg_entropy
                    );
                }
            })?;

            write_file(&metrics, |out| write_metrics_csv(&result.records, out))?;
            write_file(&checkpoint, |out| result.agent.save(out))?;
            let summary = aggregate_run(&result.records, config.eval_episodes.max(1));
            println!("{}", summary.format_row("final window"));
            println!("metrics written to {}", metrics.display());
            println!("checkpoint written to {}", checkpoint.display());
            Ok(())
        }

        Command::Eval { common, checkpoint, metrics, seed_offset, stochastic } => {
            let config = load_config(&common)?;
            let preset_is_rule = matches!(common.preset.as_deref(), Some("rule"));
            let records: Vec<EpisodeRecord> = if preset_is_rule {
                eval_rule(&config, config.eval_episodes, seed_offset, !stochastic)?
            } else {
                let path = checkpoint.context("--checkpoint required unless --preset rule")?;
                let mut file = fs::File::open(&path)
                    .with_context(|| format!("opening checkpoint {}", path.display()))?;
                let mut agent = DiscreteSac::load(&mut file, config.sac.clone())?;
                eval_agent(&mut agent, &config.scenario, config.eval_episodes, seed_offset)?
            };
            let summary = aggregate_run(&records, records.len());
            println!("{}", summary.format_row("eval"));
            if let Some(path) = metrics {
                write_file(&path, |out| write_metrics_csv(&records, out))?;
                println!("episode records written to {}", path.display());
            }
            Ok(())
        }

        Command::Rollout { common, policy, checkpoint, episode_seed, output } => {
            let config = load_config(&common)?;
            let env = match policy.as_str() {
                "rule" => run_rollout(&config, episode_seed, RolloutPolicy::RuleDeterministic)?,
                "rule-stochastic" => {
                    run_rollout(&config, episode_seed, RolloutPolicy::RuleStochastic)?
                }
                "checkpoint" => {
                    let path = checkpoint.context("--checkpoint required for policy=checkpoint")?;
                    let mut file = fs::File::open(&path)?;
                    let mut agent = DiscreteSac::load(&mut file, config.sac.clone())?;
                    run_rollout(&config, episode_seed, RolloutPolicy::Agent(&mut agent))?
                }
                other => bail!("unknown policy '{other}' (rule | rule-stochastic | checkpoint)"),
            };
            write_file(&output, |out| env.write_trajectory_csv(out))?;
            println!(
                "episode finished after {} steps, cause {:?}, success {}",
                env.steps(),
                env.cause(),
                env.is_success()
            );
            println!("trajectory written to {}", output.display());
            Ok(())
        }
    }
}

fn parse_demo_mode(name: &str) -> Result<DemoMode> {
    match name {
        "none" => Ok(DemoMode::None),
        "margin" => Ok(DemoMode::Margin),
        "reward-aug" => Ok(DemoMode::RewardAug),
        other => bail!("unknown demo mode '{other}' (none | margin | reward-aug)"),
    }
}

fn write_file(path: &Path, f: impl FnOnce(&mut fs::File) -> trapsim::Result<()>) -> Result<()> {
    let mut file =
        fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f(&mut file)?;
    Ok(())
}

/// Loads the experiment config: TOML file, then environment overrides,
/// then command-line overrides, in increasing precedence.
fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut value: toml::Value = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            text.parse()
                .with_context(|| format!("parsing config {}", path.display()))?
        }
        None => toml::Value::Table(Default::default()),
    };

    apply_env_overrides(&mut value)?;

    let mut config: ExperimentConfig = value
        .try_into()
        .context("deserializing experiment configuration")?;

    if let Some(name) = &common.preset {
        Preset::parse(name)?.apply(&mut config);
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
        config.scenario.seed = seed;
    }
    if let Some(episodes) = common.episodes {
        config.episodes = episodes;
        config.demo_episodes = episodes;
    }
    Ok(config)
}

/// Applies `TRAPSIM_*` environment variables onto the raw TOML tree.
///
/// The first path segment may name a section (`scenario`, `sac`,
/// `heuristic`) and the remainder a field; one further underscore split is
/// tried for nested tables (for example `TRAPSIM_SCENARIO_TRAP_SPEED`).
/// Top-level fields use a single segment (`TRAPSIM_EPISODES`).
fn apply_env_overrides(value: &mut toml::Value) -> Result<()> {
    let table = value
        .as_table_mut()
        .context("configuration root must be a table")?;
    let mut vars: Vec<(String, String)> = std::env::vars()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX))
        .collect();
    vars.sort();

    for (key, raw) in vars {
        let path = key[ENV_PREFIX.len()..].to_lowercase();
        let parsed = parse_scalar(&raw);
        let sections = ["scenario", "sac", "heuristic"];
        let target_section = sections.iter().find(|s| path.starts_with(&format!("{s}_")));
        match target_section {
            Some(section) => {
                let field = &path[section.len() + 1..];
                let entry = table
                    .entry(section.to_string())
                    .or_insert_with(|| toml::Value::Table(Default::default()));
                let sub = entry
                    .as_table_mut()
                    .with_context(|| format!("section {section} is not a table"))?;
                set_field(sub, field, parsed);
            }
            None => {
                set_field(table, &path, parsed);
            }
        }
    }
    Ok(())
}

/// Sets `field` in `table`, trying one nested split (`a_b` -> table `a`,
/// key `b`) when the flat key does not already exist but the subtable does.
fn set_field(table: &mut toml::map::Map<String, toml::Value>, field: &str, value: toml::Value) {
    if table.contains_key(field) || !field.contains('_') {
        table.insert(field.to_string(), value);
        return;
    }
    for (i, _) in field.char_indices().filter(|&(_, c)| c == '_') {
        let (head, tail) = (&field[..i], &field[i + 1..]);
        if let Some(toml::Value::Table(sub)) = table.get_mut(head) {
            sub.insert(tail.to_string(), value);
            return;
        }
    }
    table.insert(field.to_string(), value);
}

fn parse_scalar(raw: &str) -> toml::Value {
    if let Ok(b) = raw.parse::<bool>() {
        return toml::Value::Boolean(b);
    }
    if let Ok(i) = raw.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    if let Ok(f) = raw.parse::<f64>() {
        return toml::Value::Float(f);
    }
    toml::Value::String(raw.to_string())
}
