//! Train the priority network on a mixed synthetic set and score it against
//! the two heuristic baselines on holdout traces.
//!
//! ```text
//! cargo run --release --example train_policy -- [iterations] [seed] [checkpoint-out]
//! ```

use abrlab::evalrep::mean_session_reward;
use abrlab::policy::{save_policy, ActionMode, HeuristicPolicySpec};
use abrlab::trace::{generate_synthetic, SyntheticTraceConfig};
use abrlab::train::{train, RewardWeights, TrainConfig};

fn main() -> abrlab::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(300);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(7);
    let out = args.next();

    let traces = generate_synthetic(
        &SyntheticTraceConfig {
            count: 200,
            ..Default::default()
        },
        seed,
    )?;
    let w = RewardWeights::default();
    let config = TrainConfig {
        iterations,
        learning_rate: 1e-2,
        seed,
        ..Default::default()
    };
    let started = std::time::Instant::now();
    let trained = train(&traces, &w, &config)?;
    println!("trained {iterations} iterations in {:.1?}", started.elapsed());
    for p in trained.curve.points.iter().step_by((iterations / 10).max(1)) {
        println!(
            "iter {:>5}  reward {:>9.2}  std {:>8.2}  entropy {:.3}",
            p.iteration, p.mean_reward, p.reward_std, p.entropy
        );
    }

    if let Some(path) = out {
        save_policy(&path, &trained.params, &trained.norm)?;
        println!("checkpoint -> {path}");
    }

    let holdout = traces.holdout();
    let cap = config.capacity;
    let mut neural = trained.policy();
    let sampled = mean_session_reward(&neural, &holdout, cap, &w, 99)?;
    neural.mode = ActionMode::Greedy;
    let greedy = mean_session_reward(&neural, &holdout, cap, &w, 99)?;
    let rate = mean_session_reward(&HeuristicPolicySpec::rate_based(0.8), &holdout, cap, &w, 99)?;
    let buffer_spec = HeuristicPolicySpec::buffer_based(holdout[0].encodings(), 5.0, 20.0);
    let buffer = mean_session_reward(&buffer_spec, &holdout, cap, &w, 99)?;
    println!("holdout mean session reward:");
    println!("  neural (sampled)  {sampled:.2}");
    println!("  neural (greedy)   {greedy:.2}");
    println!("  rate-based 0.8    {rate:.2}");
    println!("  buffer-based      {buffer:.2}");
    Ok(())
}
