//! Playback-buffer simulator.
//!
//! One trace record is consumed per chunk download. The buffer drains in
//! real time while a chunk downloads, a stall is recorded when it runs dry,
//! and the downloaded chunk's duration is then appended. Anything above the
//! buffer capacity is played out before the next request (the
//! "capacity wait"), which does not consume a trace record, so trajectory
//! length always equals trace length.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::seed::SimRng;
use crate::trace::Trace;

pub const DEFAULT_CAPACITY: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionState {
    pub buffer: f64,
    pub cursor: usize,
    pub chunk_index: usize,
    pub capacity: f64,
}

/// What the agent sees before choosing the next chunk's encoding.
///
/// `ladder` carries the nominal kbps per encoding; the learned policy ignores
/// it, the rate-based heuristic needs it.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub prediction: f64,
    pub buffer: f64,
    pub sizes: Vec<f64>,
    pub ladder: Vec<f64>,
}

impl Observation {
    pub fn encodings(&self) -> usize {
        self.sizes.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    /// Nominal kbps of the chosen encoding.
    pub bitrate: f64,
    pub download_time: f64,
    pub stall_time: f64,
    pub stalled: bool,
    /// Download time of a session's first chunk, which is startup latency
    /// rather than a stall.
    pub startup_delay: f64,
    pub capacity_wait: f64,
    pub buffer_after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub observation: Observation,
    pub action: usize,
    pub outcome: StepOutcome,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub terminal: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_stall(&self) -> f64 {
        self.steps.iter().map(|s| s.outcome.stall_time).sum()
    }

    /// `<chunk_idx> <action> <bitrate_kbps> <download_s> <stall_s> <buffer_s>` per step.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.steps.iter().enumerate() {
            let o = &s.outcome;
            let _ = writeln!(
                out,
                "{i} {} {} {} {} {}",
                s.action, o.bitrate, o.download_time, o.stall_time, o.buffer_after
            );
        }
        out
    }
}

/// A bitrate decision rule. Deterministic rules ignore `rng`.
pub trait AbrPolicy: Sync {
    fn select(&self, obs: &Observation, rng: &mut SimRng) -> usize;
}

impl<F> AbrPolicy for F
where
    F: Fn(&Observation) -> usize + Sync,
{
    fn select(&self, obs: &Observation, _rng: &mut SimRng) -> usize {
        self(obs)
    }
}

fn observe(trace: &Trace, cursor: usize, buffer: f64) -> Observation {
    let r = &trace.records()[cursor];
    Observation {
        prediction: r.prediction,
        buffer,
        sizes: r.sizes.clone(),
        ladder: trace.ladder().to_vec(),
    }
}

pub fn reset(trace: &Trace, capacity: f64) -> Result<(SessionState, Observation)> {
    if trace.is_empty() {
        return Err(Error::InvalidTrace("empty trace".into()));
    }
    if !(capacity.is_finite() && capacity > 0.0) {
        return Err(Error::config("capacity", format!("must be > 0, got {capacity}")));
    }
    let state = SessionState {
        buffer: 0.0,
        cursor: 0,
        chunk_index: 0,
        capacity,
    };
    Ok((state, observe(trace, 0, 0.0)))
}

pub fn step(
    state: &SessionState,
    action: usize,
    trace: &Trace,
) -> Result<(SessionState, Option<Observation>, StepOutcome)> {
    if state.cursor >= trace.len() {
        return Err(Error::Terminal);
    }
    let record = &trace.records()[state.cursor];
    let m = record.sizes.len();
    if action >= m {
        return Err(Error::ActionOutOfRange {
            action,
            encodings: m,
        });
    }

    let download_time = record.sizes[action] / record.measured;
    // Playback has not started before the first chunk arrives.
    let startup = state.chunk_index == 0 && state.buffer == 0.0;
    let (stall_time, startup_delay) = if startup {
        (0.0, download_time)
    } else {
        ((download_time - state.buffer).max(0.0), 0.0)
    };
    let mut buffer = (state.buffer - download_time).max(0.0) + trace.chunk_duration();
    let capacity_wait = (buffer - state.capacity).max(0.0);
    if capacity_wait > 0.0 {
        buffer = state.capacity;
    }

    let next = SessionState {
        buffer,
        cursor: state.cursor + 1,
        chunk_index: state.chunk_index + 1,
        capacity: state.capacity,
    };
    let outcome = StepOutcome {
        bitrate: trace.ladder()[action],
        download_time,
        stall_time,
        stalled: stall_time > 0.0,
        startup_delay,
        capacity_wait,
        buffer_after: buffer,
    };
    let obs = (next.cursor < trace.len()).then(|| observe(trace, next.cursor, buffer));
    Ok((next, obs, outcome))
}

pub fn run_session<P: AbrPolicy + ?Sized>(
    policy: &P,
    trace: &Trace,
    capacity: f64,
    rng: &mut SimRng,
) -> Result<Trajectory> {
    let (mut state, first) = reset(trace, capacity)?;
    let mut obs = Some(first);
    let mut steps = Vec::with_capacity(trace.len());
    while let Some(observation) = obs.take() {
        let action = policy.select(&observation, rng);
        let (next, next_obs, outcome) = step(&state, action, trace)?;
        steps.push(Step {
            observation,
            action,
            outcome,
        });
        state = next;
        obs = next_obs;
    }
    Ok(Trajectory {
        steps,
        terminal: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use crate::trace::TraceRecord;

    fn trace_of(records: &[(f64, &[f64])]) -> Trace {
        let recs = records
            .iter()
            .map(|(bw, sizes)| TraceRecord {
                prediction: *bw,
                measured: *bw,
                elapsed: 0.0,
                sizes: sizes.to_vec(),
            })
            .collect();
        Trace::new("t", 2.0, recs).unwrap()
    }

    fn at(buffer: f64, capacity: f64) -> SessionState {
        SessionState {
            buffer,
            cursor: 0,
            chunk_index: 1,
            capacity,
        }
    }

    #[test]
    fn reset_starts_empty() {
        let t = trace_of(&[(1000.0, &[100.0, 200.0]), (1000.0, &[110.0, 220.0])]);
        let (s, obs) = reset(&t, 30.0).unwrap();
        assert_eq!((s.buffer, s.cursor), (0.0, 0));
        assert_eq!(obs.sizes, vec![100.0, 200.0]);
        assert!(reset(&t, 0.0).is_err());
    }

    #[test]
    fn plain_download() {
        let t = trace_of(&[(4000.0, &[1000.0, 4000.0])]);
        let (s, obs, out) = step(&at(4.0, 30.0), 1, &t).unwrap();
        assert_eq!(out.download_time, 1.0);
        assert_eq!(out.stall_time, 0.0);
        assert!(!out.stalled);
        assert_eq!(s.buffer, 5.0);
        assert!(obs.is_none());
    }

    #[test]
    fn empty_buffer_stalls() {
        // 2 s download with 0.5 s buffered.
        let t = trace_of(&[(1000.0, &[2000.0])]);
        let (s, _, out) = step(&at(0.5, 30.0), 0, &t).unwrap();
        assert_eq!(out.stall_time, 1.5);
        assert!(out.stalled);
        assert_eq!(s.buffer, 2.0);
    }

    #[test]
    fn over_capacity_waits() {
        let t = trace_of(&[(1000.0, &[500.0])]);
        let (s, _, out) = step(&at(9.5, 10.0), 0, &t).unwrap();
        assert_eq!(out.download_time, 0.5);
        assert_eq!(out.capacity_wait, 1.0);
        assert_eq!(s.buffer, 10.0);
    }

    #[test]
    fn first_download_is_startup_not_stall() {
        let t = trace_of(&[(1000.0, &[2000.0])]);
        let (s0, _) = reset(&t, 30.0).unwrap();
        let (_, _, out) = step(&s0, 0, &t).unwrap();
        assert_eq!(out.stall_time, 0.0);
        assert_eq!(out.startup_delay, 2.0);
    }

    #[test]
    fn step_errors() {
        let t = trace_of(&[(1000.0, &[500.0, 900.0])]);
        assert!(matches!(
            step(&at(0.0, 10.0), 2, &t),
            Err(Error::ActionOutOfRange { action: 2, encodings: 2 })
        ));
        let done = SessionState {
            cursor: 1,
            chunk_index: 1,
            ..at(0.0, 10.0)
        };
        assert!(matches!(step(&done, 0, &t), Err(Error::Terminal)));
    }

    #[test]
    fn session_length_and_zero_stall_when_lowest_fits() {
        // Lowest encoding downloads in 1 s; the first download is startup,
        // after that 2 s chunks always cover 1 s downloads.
        let t = trace_of(&[
            (1000.0, &[1000.0, 5000.0]),
            (1000.0, &[1000.0, 5000.0]),
            (1000.0, &[1000.0, 5000.0]),
        ]);
        let lowest = |_: &Observation| 0usize;
        let traj = run_session(&lowest, &t, 30.0, &mut rng_from(1)).unwrap();
        assert_eq!(traj.len(), 3);
        let stalls: Vec<f64> = traj.steps.iter().map(|s| s.outcome.stall_time).collect();
        assert_eq!(stalls, vec![0.0, 0.0, 0.0]);
        assert_eq!(traj.steps[0].outcome.startup_delay, 1.0);
        assert_eq!(
            traj.dump().lines().nth(1).unwrap(),
            "1 0 500 1 0 3"
        );
    }
}
