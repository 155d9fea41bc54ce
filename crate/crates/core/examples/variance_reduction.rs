//! Input-dependent versus time-based baselines on a high-variance trace set.
//!
//! Both runs see the same traces, seeds and rollouts; only the baseline
//! differs. Prints the final holdout reward and the across-trace reward
//! spread averaged over the learning curve.
//!
//! ```text
//! cargo run --release --example variance_reduction -- [iterations] [seeds]
//! ```

use abrlab::evalrep::mean_session_reward;
use abrlab::trace::{generate_synthetic, BandwidthProcess, SyntheticTraceConfig, WatchTime};
use abrlab::train::{train, BaselineMode, LearningCurve, RewardWeights, TrainConfig};

fn mean_std(curve: &LearningCurve) -> f64 {
    curve.points.iter().map(|p| p.reward_std).sum::<f64>() / curve.points.len() as f64
}

fn main() -> abrlab::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(300);
    let seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);

    let w = RewardWeights::default();
    for seed in 0..seeds {
        let traces = generate_synthetic(
            &SyntheticTraceConfig {
                count: 200,
                process: BandwidthProcess {
                    state_volatility: vec![0.3, 0.6],
                    ..Default::default()
                },
                watch_time: WatchTime {
                    mean_chunks: 80.0,
                    min_chunks: 5,
                    max_chunks: 300,
                },
                ..Default::default()
            },
            seed,
        )?;
        let holdout = traces.holdout();
        let mut row = Vec::new();
        for mode in [BaselineMode::InputDependent, BaselineMode::TimeBased] {
            let config = TrainConfig {
                iterations,
                learning_rate: 1e-2,
                baseline_mode: mode,
                seed,
                ..Default::default()
            };
            let trained = train(&traces, &w, &config)?;
            let reward = mean_session_reward(&trained.policy(), &holdout, config.capacity, &w, 99)?;
            row.push((mode, reward, mean_std(&trained.curve)));
        }
        for (mode, reward, std) in &row {
            println!("seed {seed} {:<16} holdout reward {reward:>9.2}  mean curve std {std:>8.2}", format!("{mode:?}"));
        }
    }
    Ok(())
}
