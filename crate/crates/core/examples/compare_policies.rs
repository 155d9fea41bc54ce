//! Evaluate two fixed rules on the same holdout sessions and print the paired
//! bootstrap comparison, overall and per network class.
//!
//! ```text
//! cargo run --release --example compare_policies -- [count] [resamples]
//! ```

use abrlab::evalrep::{compare, evaluate, subgroup_breakdown};
use abrlab::policy::HeuristicPolicySpec;
use abrlab::trace::{generate_synthetic, SyntheticTraceConfig};

const CAPACITY: f64 = 30.0;

fn main() -> abrlab::Result<()> {
    let mut args = std::env::args().skip(1);
    let count: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(400);
    let resamples: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(10_000);

    let set = generate_synthetic(
        &SyntheticTraceConfig {
            count,
            ..Default::default()
        },
        5,
    )?;
    let holdout = set.holdout();
    let a = evaluate(&HeuristicPolicySpec::rate_based(0.8), &holdout, CAPACITY, 5)?;
    let b = evaluate(
        &HeuristicPolicySpec::buffer_based(holdout[0].encodings(), 5.0, 20.0),
        &holdout,
        CAPACITY,
        5,
    )?;
    let g = subgroup_breakdown(&a);
    println!(
        "{} holdout sessions: {} slow, {} medium, {} fast",
        a.len(),
        g.slow.len(),
        g.medium.len(),
        g.fast.len()
    );
    println!("buffer-based (B) relative to rate-based (A), {resamples} resamples:");
    let report = compare(&a, &b, resamples, 5)?;
    for r in &report.rows {
        println!(
            "{:<13} {:<6} n={:<4} {:>+8.2}%  95% [{:>+8.2}, {:>+8.2}]  99% [{:>+8.2}, {:>+8.2}]",
            r.metric.name(),
            r.group.name(),
            r.sessions,
            100.0 * r.point,
            100.0 * r.ci95.0,
            100.0 * r.ci95.1,
            100.0 * r.ci99.0,
            100.0 * r.ci99.1
        );
    }
    Ok(())
}
