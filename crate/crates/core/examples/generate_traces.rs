//! Generate a synthetic trace corpus, write it in the line-oriented trace
//! format and print per-profile statistics.
//!
//! ```text
//! cargo run --release --example generate_traces -- [out.abr] [count] [seed]
//! ```

use abrlab::evalrep::Group;
use abrlab::trace::{generate_synthetic, load_traces, write_traces, Profile, SyntheticTraceConfig};

fn main() -> abrlab::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "traces.abr".into());
    let count: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);

    for profile in [Profile::Slow, Profile::Fast, Profile::Mixed] {
        let set = generate_synthetic(
            &SyntheticTraceConfig {
                count,
                profile,
                ..Default::default()
            },
            seed,
        )?;
        let chunks: usize = set.traces().iter().map(|t| t.len()).sum();
        let mut groups = [0usize; 3];
        for t in set.traces() {
            groups[match Group::of(t.mean_measured()) {
                Group::Slow => 0,
                Group::Medium => 1,
                _ => 2,
            }] += 1;
        }
        println!(
            "{profile:?}: {} sessions, {chunks} chunks, {} holdout; slow/medium/fast = {}/{}/{}",
            set.len(),
            set.holdout().len(),
            groups[0],
            groups[1],
            groups[2]
        );
        if profile == Profile::Mixed {
            write_traces(&out, &set)?;
            let back = load_traces(&out, 0.2, seed)?;
            assert_eq!(back.len(), set.len());
            let first = &back.traces()[0];
            println!(
                "wrote {out}; first session `{}`: {} chunks of {} s, ladder {:?}",
                first.id(),
                first.len(),
                first.chunk_duration(),
                first.ladder()
            );
        }
    }
    Ok(())
}
