//! Diagnoses stochastic-rule demonstrator failures: where, when, and why.

use trapsim::env::{ScenarioConfig, TerminationCause, TrapEnv};
use trapsim::heuristic::{HeuristicParams, RulePolicy, StochasticRulePolicy};
use trapsim::rng::Rng;

fn main() {
    let cfg = ScenarioConfig::default();
    let rule = RulePolicy::new(HeuristicParams::default(), cfg.idm.clone(), cfg.road());
    let policy = StochasticRulePolicy::new(rule, 0.9);

    let n = 200;
    let mut failures = 0;
    let mut fail_details = Vec::new();
    let root = Rng::seed(42).fork(0xde30);
    for ep in 0..n {
        let mut env = TrapEnv::new(cfg.clone()).unwrap();
        env.reset(42u64.wrapping_add(ep as u64));
        let mut ep_rng = root.fork(ep as u64);
        while !env.is_finished() {
            let action = policy.sample(&env.view(), &mut ep_rng);
            env.step(action).unwrap();
        }
        if !env.is_success() {
            failures += 1;
            let ego = env.ego();
            fail_details.push(format!(
                "ep {ep}: cause {:?} at step {} ego(x={:.1} y={:.2} v={:.2} lane~{})",
                env.cause(),
                env.steps(),
                ego.x,
                ego.y,
                ego.speed,
                env.road().lane_index(ego.y),
            ));
        }
    }
    println!("failures: {failures}/{n}");
    for d in fail_details.iter().take(20) {
        println!("{d}");
    }
}
