//! Exploration and performance metrics plus the per-episode CSV emission.

use crate::error::Result;
use std::io::Write;

/// Mean per-step policy entropy over an episode, in nats.
pub fn policy_entropy_avg(step_distributions: &[Vec<f64>]) -> f64 {
    assert!(!step_distributions.is_empty(), "need at least one step");
    let total: f64 = step_distributions
        .iter()
        .map(|masses| {
            -masses
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| p * p.ln())
                .sum::<f64>()
        })
        .sum();
    total / step_distributions.len() as f64
}

/// Effective number of explored actions: `exp` of the average entropy.
pub fn effective_actions(h_avg: f64) -> f64 {
    h_avg.exp()
}

/// Per-episode summary row.
#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub success: bool,
    pub collision: bool,
    pub accumulated_reward: f64,
    pub avg_speed: f64,
    pub travel_distance: f64,
    pub avg_entropy: f64,
    pub effective_actions: f64,
}

impl EpisodeRecord {
    /// Exact CSV header, one row per episode below it.
    pub const CSV_HEADER: &'static str =
        "episode,success,collision,accumulated_reward,avg_speed,travel_distance,avg_entropy,effective_actions";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.episode,
            self.success as u8,
            self.collision as u8,
            self.accumulated_reward,
            self.avg_speed,
            self.travel_distance,
            self.avg_entropy,
            self.effective_actions
        )
    }
}

/// Writes the full metrics CSV (UTF-8, LF line endings).
pub fn write_metrics_csv<W: Write>(records: &[EpisodeRecord], out: &mut W) -> Result<()> {
    out.write_all(EpisodeRecord::CSV_HEADER.as_bytes())?;
    out.write_all(b"\n")?;
    for r in records {
        out.write_all(r.to_csv_row().as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Mean and standard deviation pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    MeanStd { mean, std: var.sqrt() }
}

/// Windowed aggregate over the last `window` records (or all of them when
/// fewer exist): success and collision rates as percentages, mean and
/// standard deviation for the scalar metrics.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub episodes: usize,
    pub success_rate_pct: f64,
    pub collision_rate_pct: f64,
    pub reward: MeanStd,
    pub speed: MeanStd,
    pub distance: MeanStd,
    pub entropy: MeanStd,
}

pub fn aggregate_run(records: &[EpisodeRecord], window: usize) -> RunSummary {
    assert!(!records.is_empty(), "need at least one record");
    let tail = &records[records.len().saturating_sub(window)..];
    let n = tail.len() as f64;
    let successes = tail.iter().filter(|r| r.success).count() as f64;
    let collisions = tail.iter().filter(|r| r.collision).count() as f64;
    let collect = |f: fn(&EpisodeRecord) -> f64| tail.iter().map(f).collect::<Vec<_>>();
    RunSummary {
        episodes: tail.len(),
        success_rate_pct: 100.0 * successes / n,
        collision_rate_pct: 100.0 * collisions / n,
        reward: mean_std(&collect(|r| r.accumulated_reward)),
        speed: mean_std(&collect(|r| r.avg_speed)),
        distance: mean_std(&collect(|r| r.travel_distance)),
        entropy: mean_std(&collect(|r| r.avg_entropy)),
    }
}

impl RunSummary {
    /// One-line table row in the reporting format used throughout.
    pub fn format_row(&self, label: &str) -> String {
        format!(
            "{label}: success {:.1}% | reward {:.2} ± {:.2} | speed {:.2} ± {:.2} | distance {:.1} ± {:.1} | collisions {:.1}%",
            self.success_rate_pct,
            self.reward.mean,
            self.reward.std,
            self.speed.mean,
            self.speed.std,
            self.distance.mean,
            self.distance.std,
            self.collision_rate_pct
        )
    }
}
