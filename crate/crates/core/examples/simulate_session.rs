//! Replay one session step by step under a few fixed rules and show how
//! buffer, stalls and bitrate trade off.
//!
//! ```text
//! cargo run --release --example simulate_session -- [seed]
//! ```

use abrlab::evalrep::SessionMetrics;
use abrlab::policy::HeuristicPolicySpec;
use abrlab::seed::rng_from;
use abrlab::simenv::{reset, run_session, step, AbrPolicy, Observation};
use abrlab::trace::{generate_synthetic, Profile, SyntheticTraceConfig};

const CAPACITY: f64 = 30.0;

fn main() -> abrlab::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let set = generate_synthetic(
        &SyntheticTraceConfig {
            count: 1,
            profile: Profile::Mixed,
            ..Default::default()
        },
        seed,
    )?;
    let trace = &set.traces()[0];
    println!(
        "session `{}`: {} chunks, mean measured {:.0} kbps",
        trace.id(),
        trace.len(),
        trace.mean_measured()
    );

    // Manual stepping: always the lowest encoding for the first ten chunks.
    let (mut state, _) = reset(trace, CAPACITY)?;
    println!("chunk  action  download_s  stall_s  buffer_s");
    for _ in 0..trace.len().min(10) {
        let (next, obs, o) = step(&state, 0, trace)?;
        println!(
            "{:>5}  {:>6}  {:>10.3}  {:>7.3}  {:>8.3}",
            state.chunk_index, 0, o.download_time, o.stall_time, o.buffer_after
        );
        state = next;
        if obs.is_none() {
            break;
        }
    }

    let lowest = |_: &Observation| 0usize;
    let highest = |o: &Observation| o.encodings() - 1;
    let rules: [(&str, &dyn AbrPolicy); 4] = [
        ("lowest", &lowest),
        ("highest", &highest),
        ("rate 0.8", &HeuristicPolicySpec::rate_based(0.8)),
        ("buffer 5/20", &HeuristicPolicySpec::buffer_based(trace.encodings(), 5.0, 20.0)),
    ];
    println!("\nrule          bitrate  stall_rate  stalls  startup_s");
    for (name, rule) in rules {
        let traj = run_session(rule, trace, CAPACITY, &mut rng_from(seed))?;
        let m = SessionMetrics::from_trajectory(trace, &traj);
        println!(
            "{name:<12}  {:>7.0}  {:>10.3}  {:>6}  {:>9.3}",
            m.mean_bitrate, m.stall_rate, m.stall_count, traj.steps[0].outcome.startup_delay
        );
    }
    Ok(())
}
