//! Rolls the deterministic rule controller across seeds and prints the
//! headline statistics.

use trapsim::env::{ScenarioConfig, TrapEnv};
use trapsim::heuristic::{HeuristicParams, RulePolicy};

fn main() {
    let cfg = ScenarioConfig::default();
    let rule = RulePolicy::new(HeuristicParams::default(), cfg.idm.clone(), cfg.road());

    let mut successes = 0;
    let mut collisions = 0;
    let mut speeds = Vec::new();
    let mut distances = Vec::new();
    let mut first_pass_steps = Vec::new();

    let n = 100;
    for seed in 0..n {
        let mut env = TrapEnv::new(cfg.clone()).unwrap();
        env.reset(seed);
        let mut speed_sum = 0.0;
        let mut dist = 0.0;
        let mut pass_step = None;
        while !env.is_finished() {
            let action = rule.action(&env.view());
            let out = env.step(action).unwrap();
            speed_sum += env.ego().speed;
            dist += env.ego().speed * cfg.dt;
            if out.escaped && pass_step.is_none() {
                pass_step = Some(env.steps());
            }
        }
        if env.is_success() {
            successes += 1;
        }
        if env.cause() == trapsim::env::TerminationCause::Collision {
            collisions += 1;
        }
        speeds.push(speed_sum / env.steps() as f64);
        distances.push(dist);
        if let Some(s) = pass_step {
            first_pass_steps.push(s);
        }
    }

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!("episodes: {n}");
    println!("success: {successes}/{n}  collisions: {collisions}");
    println!(
        "avg speed: mean {:.3} min {:.3} max {:.3}",
        mean(&speeds),
        speeds.iter().cloned().fold(f64::INFINITY, f64::min),
        speeds.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    );
    println!("travel distance: mean {:.1}", mean(&distances));
    if !first_pass_steps.is_empty() {
        println!(
            "first pass step: min {} max {}",
            first_pass_steps.iter().min().unwrap(),
            first_pass_steps.iter().max().unwrap()
        );
    }
}
