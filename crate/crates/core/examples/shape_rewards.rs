//! Constrained Bayesian optimization of the reward weights at desk scale.
//!
//! Each black-box call trains a small policy and reports its holdout mean
//! bitrate and stall rate. The constraint is the rate-based heuristic's stall
//! rate times 1.05.
//!
//! ```text
//! cargo run --release --example shape_rewards -- [train-iterations] [rounds]
//! ```

use abrlab::evalrep::evaluate;
use abrlab::policy::HeuristicPolicySpec;
use abrlab::shaping::{optimize_rewards, SearchSpace, ShapingConfig};
use abrlab::trace::{generate_synthetic, SyntheticTraceConfig};
use abrlab::train::TrainConfig;

fn main() -> abrlab::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(60);
    let rounds: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(2);
    let seed = 11;

    let traces = generate_synthetic(
        &SyntheticTraceConfig {
            count: 100,
            ..Default::default()
        },
        seed,
    )?;
    let holdout = traces.holdout();
    let baseline = evaluate(&HeuristicPolicySpec::rate_based(0.8), &holdout, 30.0, seed)?;
    let l_s = baseline.iter().map(|m| m.stall_rate).sum::<f64>() / baseline.len() as f64;
    println!("rate-based stall rate l_s = {l_s:.4} s/min");

    let train_config = TrainConfig {
        iterations,
        learning_rate: 1e-2,
        traces_per_iteration: 8,
        rollouts_per_trace: 4,
        eval_traces: 0,
        ..Default::default()
    };
    let config = ShapingConfig {
        initial_design: 16,
        rounds,
        replicates: 2,
        baseline_stall_rate: l_s,
        seed,
        ..Default::default()
    };
    let started = std::time::Instant::now();
    let result = optimize_rewards(&traces, &SearchSpace::default(), &train_config, &config)?;
    println!("{} evaluations in {:.1?}", result.records.len(), started.elapsed());
    print!("{}", result.to_log());
    match result.feasible_best {
        Some(i) => {
            let r = &result.records[i];
            println!(
                "feasible best: {:?} q {:.1} kbps, l {:.4} <= {:.4}",
                r.w.to_array(),
                r.q_mean,
                r.l_mean,
                result.threshold
            );
        }
        None => println!("no feasible point found"),
    }
    Ok(())
}
