//! Distil a trained network into the linear controller and compare the two
//! on holdout traces.
//!
//! ```text
//! cargo run --release --example translate_policy -- [checkpoint] [iterations]
//! ```
//! Without a checkpoint, a policy is trained first.

use abrlab::evalrep::mean_session_reward;
use abrlab::policy::{load_policy, ActionMode, NeuralPolicy};
use abrlab::trace::{generate_synthetic, SyntheticTraceConfig};
use abrlab::train::{train, RewardWeights, TrainConfig};
use abrlab::translate::{translate_policy, TranslateConfig};

fn main() -> abrlab::Result<()> {
    let mut args = std::env::args().skip(1);
    let checkpoint = args.next().filter(|s| s != "-");
    let iterations: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(1000);
    let seed = 7;

    let traces = generate_synthetic(
        &SyntheticTraceConfig {
            count: 200,
            ..Default::default()
        },
        seed,
    )?;
    let w = RewardWeights::default();
    let capacity = 30.0;
    let (params, norm) = match checkpoint {
        Some(path) => load_policy(path)?,
        None => {
            let config = TrainConfig {
                iterations,
                learning_rate: 1e-2,
                seed,
                ..Default::default()
            };
            let t = train(&traces, &w, &config)?;
            (t.params, t.norm)
        }
    };

    let config = TranslateConfig::from_traces(&traces, capacity, 2000, 5, seed);
    let (linear, report) = translate_policy(&params, &norm, &config)?;
    println!("fit: {}", report.line());
    println!(
        "intended = {:.5} * prediction + {:.3} * buffer + {:.2}",
        linear.a, linear.b, linear.c
    );

    let holdout = traces.holdout();
    let mut neural = NeuralPolicy::new(params, norm);
    let sampled = mean_session_reward(&neural, &holdout, capacity, &w, 99)?;
    neural.mode = ActionMode::Greedy;
    let greedy = mean_session_reward(&neural, &holdout, capacity, &w, 99)?;
    let lin = mean_session_reward(&linear, &holdout, capacity, &w, 99)?;
    println!("holdout mean session reward: neural {sampled:.2} (greedy {greedy:.2}), linear {lin:.2}");
    println!("relative gap {:+.2}%", 100.0 * (lin - sampled) / sampled.abs());
    Ok(())
}
