//! Session metrics, paired bootstrap comparison and the slow/medium/fast
//! network breakdown.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::seed::{child_rng, rng_from};
use crate::simenv::{run_session, AbrPolicy, Trajectory};
use crate::trace::Trace;
use crate::train::{total_reward, RewardWeights};

/// Sessions below this mean measured bandwidth (kbps) are "slow".
pub const SLOW_KBPS: f64 = 500.0;
/// Sessions above this mean measured bandwidth (kbps) are "fast".
pub const FAST_KBPS: f64 = 10_000.0;
pub const DEFAULT_RESAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SessionMetrics {
    pub trace_id: String,
    /// kbps, averaged over chunks.
    pub mean_bitrate: f64,
    /// Stall seconds per minute of watch time.
    pub stall_rate: f64,
    pub stall_count: usize,
    pub watch_time: f64,
    pub mean_measured_bandwidth: f64,
}

impl SessionMetrics {
    pub fn from_trajectory(trace: &Trace, traj: &Trajectory) -> Self {
        let n = traj.len().max(1) as f64;
        let watch_time = trace.chunk_duration() * traj.len() as f64;
        let stall: f64 = traj.total_stall();
        SessionMetrics {
            trace_id: trace.id().to_string(),
            mean_bitrate: traj.steps.iter().map(|s| s.outcome.bitrate).sum::<f64>() / n,
            stall_rate: if watch_time > 0.0 {
                stall / (watch_time / 60.0)
            } else {
                0.0
            },
            stall_count: traj.steps.iter().filter(|s| s.outcome.stalled).count(),
            watch_time,
            mean_measured_bandwidth: trace.mean_measured(),
        }
    }
}

/// Runs `policy` once per trace; trace `i` uses a seed derived from `(seed, i)`.
pub fn evaluate_trajectories<P: AbrPolicy + ?Sized>(
    policy: &P,
    traces: &[&Trace],
    capacity: f64,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    if traces.is_empty() {
        return Err(Error::NoTraces);
    }
    traces
        .par_iter()
        .enumerate()
        .map(|(i, t)| run_session(policy, t, capacity, &mut child_rng(seed, &[i as u64])))
        .collect()
}

pub fn evaluate<P: AbrPolicy + ?Sized>(
    policy: &P,
    traces: &[&Trace],
    capacity: f64,
    seed: u64,
) -> Result<Vec<SessionMetrics>> {
    let trajs = evaluate_trajectories(policy, traces, capacity, seed)?;
    Ok(traces
        .iter()
        .zip(&trajs)
        .map(|(t, tr)| SessionMetrics::from_trajectory(t, tr))
        .collect())
}

/// Mean over sessions of the per-session total reward.
pub fn mean_session_reward<P: AbrPolicy + ?Sized>(
    policy: &P,
    traces: &[&Trace],
    capacity: f64,
    w: &RewardWeights,
    seed: u64,
) -> Result<f64> {
    let trajs = evaluate_trajectories(policy, traces, capacity, seed)?;
    Ok(trajs.iter().map(|t| total_reward(t, w)).sum::<f64>() / trajs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Group {
    All,
    Slow,
    Medium,
    Fast,
}

impl Group {
    pub fn name(self) -> &'static str {
        match self {
            Group::All => "all",
            Group::Slow => "slow",
            Group::Medium => "medium",
            Group::Fast => "fast",
        }
    }

    pub fn of(mean_measured_kbps: f64) -> Group {
        if mean_measured_kbps < SLOW_KBPS {
            Group::Slow
        } else if mean_measured_kbps > FAST_KBPS {
            Group::Fast
        } else {
            Group::Medium
        }
    }
}

/// Session indices per network class.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Subgroups {
    pub slow: Vec<usize>,
    pub medium: Vec<usize>,
    pub fast: Vec<usize>,
}

pub fn subgroup_breakdown(metrics: &[SessionMetrics]) -> Subgroups {
    let mut out = Subgroups::default();
    for (i, m) in metrics.iter().enumerate() {
        match Group::of(m.mean_measured_bandwidth) {
            Group::Slow => out.slow.push(i),
            Group::Fast => out.fast.push(i),
            _ => out.medium.push(i),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    MeanBitrate,
    StallRate,
    StallCount,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::MeanBitrate, Metric::StallRate, Metric::StallCount];

    pub fn name(self) -> &'static str {
        match self {
            Metric::MeanBitrate => "mean_bitrate",
            Metric::StallRate => "stall_rate",
            Metric::StallCount => "stall_count",
        }
    }

    fn value(self, m: &SessionMetrics) -> f64 {
        match self {
            Metric::MeanBitrate => m.mean_bitrate,
            Metric::StallRate => m.stall_rate,
            Metric::StallCount => m.stall_count as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonRow {
    pub metric: Metric,
    pub group: Group,
    pub sessions: usize,
    pub point: f64,
    pub ci95: (f64, f64),
    pub ci99: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonReport {
    pub fn get(&self, metric: Metric, group: Group) -> Option<&ComparisonRow> {
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.group == group)
    }

    /// `metric group point ci95_lo ci95_hi ci99_lo ci99_hi`, tab separated.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("metric\tgroup\tpoint\tci95_lo\tci95_hi\tci99_lo\tci99_hi\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.metric.name(),
                r.group.name(),
                r.point,
                r.ci95.0,
                r.ci95.1,
                r.ci99.0,
                r.ci99.1
            );
        }
        out
    }
}

/// `(mean_b - mean_a) / mean_a`, or 0 when both means are 0.
fn relative_difference(mean_a: f64, mean_b: f64) -> f64 {
    if mean_a == 0.0 && mean_b == 0.0 {
        0.0
    } else {
        (mean_b - mean_a) / mean_a
    }
}

fn mean_of(idx: &[usize], v: &[f64]) -> f64 {
    idx.iter().map(|&i| v[i]).sum::<f64>() / idx.len() as f64
}

/// Linear-interpolated empirical quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi || sorted[lo] == sorted[hi] {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
    }
}

/// Paired percentile bootstrap of the relative difference of means, B vs A,
/// overall and per network class. Intervals are widened if necessary so they
/// always contain the point estimate.
pub fn compare(
    a: &[SessionMetrics],
    b: &[SessionMetrics],
    resamples: usize,
    seed: u64,
) -> Result<ComparisonReport> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(format!(
            "cannot pair {} sessions with {} sessions",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::NoTraces);
    }
    if let Some((x, y)) = a.iter().zip(b).find(|(x, y)| x.trace_id != y.trace_id) {
        return Err(Error::LengthMismatch(format!(
            "sessions are not paired: `{}` vs `{}`",
            x.trace_id, y.trace_id
        )));
    }
    if resamples == 0 {
        return Err(Error::config("resamples", "must be >= 1"));
    }
    let groups = subgroup_breakdown(a);
    let all: Vec<usize> = (0..a.len()).collect();
    let mut rows = Vec::new();
    let mut rng = rng_from(seed);
    for (group, idx) in [
        (Group::All, &all),
        (Group::Slow, &groups.slow),
        (Group::Medium, &groups.medium),
        (Group::Fast, &groups.fast),
    ] {
        if idx.is_empty() {
            continue;
        }
        let va: Vec<Vec<f64>> = Metric::ALL
            .iter()
            .map(|m| a.iter().map(|s| m.value(s)).collect())
            .collect();
        let vb: Vec<Vec<f64>> = Metric::ALL
            .iter()
            .map(|m| b.iter().map(|s| m.value(s)).collect())
            .collect();
        let mut boots: Vec<Vec<f64>> = vec![Vec::with_capacity(resamples); Metric::ALL.len()];
        let mut draw = vec![0usize; idx.len()];
        for _ in 0..resamples {
            for d in &mut draw {
                *d = idx[rng.random_range(0..idx.len())];
            }
            for (k, boot) in boots.iter_mut().enumerate() {
                boot.push(relative_difference(mean_of(&draw, &va[k]), mean_of(&draw, &vb[k])));
            }
        }
        for (k, metric) in Metric::ALL.iter().enumerate() {
            let point = relative_difference(mean_of(idx, &va[k]), mean_of(idx, &vb[k]));
            let boot = &mut boots[k];
            boot.sort_by(f64::total_cmp);
            let ci = |lo_q: f64, hi_q: f64| {
                let lo = quantile(boot, lo_q);
                let hi = quantile(boot, hi_q);
                (lo.min(point), hi.max(point))
            };
            let ci95 = ci(0.025, 0.975);
            let ci99 = ci(0.005, 0.995);
            rows.push(ComparisonRow {
                metric: *metric,
                group,
                sessions: idx.len(),
                point,
                ci95,
                ci99: (ci99.0.min(ci95.0), ci99.1.max(ci95.1)),
            });
        }
    }
    Ok(ComparisonReport { rows })
}

// ---------------------------------------------------------------------------
// Metrics file

const METRICS_HEADER: &str =
    "trace_id\tmean_bitrate\tstall_rate\tstall_count\twatch_time\tmean_measured_bandwidth";

pub fn format_metrics(metrics: &[SessionMetrics]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for m in metrics {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            m.trace_id,
            m.mean_bitrate,
            m.stall_rate,
            m.stall_count,
            m.watch_time,
            m.mean_measured_bandwidth
        );
    }
    out
}

pub fn parse_metrics(text: &str) -> Result<Vec<SessionMetrics>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == METRICS_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: "expected metrics header".into(),
            })
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let err = |msg: String| Error::Parse { line: line_no, msg };
        if f.len() != 6 {
            return Err(err(format!("expected 6 fields, got {}", f.len())));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| err(format!("bad number `{s}`")))
        };
        out.push(SessionMetrics {
            trace_id: f[0].to_string(),
            mean_bitrate: num(f[1])?,
            stall_rate: num(f[2])?,
            stall_count: f[3]
                .parse()
                .map_err(|_| err(format!("bad count `{}`", f[3])))?,
            watch_time: num(f[4])?,
            mean_measured_bandwidth: num(f[5])?,
        });
    }
    Ok(out)
}

pub fn load_metrics(path: impl AsRef<Path>) -> Result<Vec<SessionMetrics>> {
    let path = path.as_ref();
    parse_metrics(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn session(id: usize, bitrate: f64, stall: f64, bw: f64) -> SessionMetrics {
        SessionMetrics {
            trace_id: format!("trace-{id}"),
            mean_bitrate: bitrate,
            stall_rate: stall,
            stall_count: usize::from(stall > 0.0),
            watch_time: 120.0,
            mean_measured_bandwidth: bw,
        }
    }

    #[test]
    fn thresholds_are_strict() {
        assert_eq!(Group::of(400.0), Group::Slow);
        assert_eq!(Group::of(500.0), Group::Medium);
        assert_eq!(Group::of(10_000.0), Group::Medium);
        assert_eq!(Group::of(10_001.0), Group::Fast);
    }

    #[test]
    fn identical_inputs_compare_to_zero() {
        let a: Vec<_> = (0..20)
            .map(|i| session(i, 1000.0 + i as f64, 0.1 * i as f64, 2000.0))
            .collect();
        let r = compare(&a, &a, 500, 1).unwrap();
        for row in &r.rows {
            assert_eq!(row.point, 0.0);
            assert_eq!(row.ci95, (0.0, 0.0));
            assert_eq!(row.ci99, (0.0, 0.0));
        }
    }

    #[test]
    fn uniform_scaling_is_ten_percent() {
        let a: Vec<_> = (0..30)
            .map(|i| session(i, 800.0 + 37.0 * i as f64, 0.0, 3000.0))
            .collect();
        let b: Vec<_> = a
            .iter()
            .map(|s| SessionMetrics {
                mean_bitrate: s.mean_bitrate * 1.10,
                ..s.clone()
            })
            .collect();
        let r = compare(&a, &b, 1000, 4).unwrap();
        let row = r.get(Metric::MeanBitrate, Group::All).unwrap();
        assert!((row.point - 0.10).abs() < 1e-12);
        assert_eq!(r, compare(&a, &b, 1000, 4).unwrap());
    }

    #[test]
    fn mismatched_lengths() {
        let a = vec![session(0, 1.0, 0.0, 1.0)];
        assert!(matches!(compare(&a, &[], 10, 0), Err(Error::LengthMismatch(_))));
    }

    #[test]
    fn metrics_file_round_trip() {
        let a: Vec<_> = (0..4).map(|i| session(i, 1234.5, 0.25, 640.0)).collect();
        assert_eq!(parse_metrics(&format_metrics(&a)).unwrap(), a);
    }
}
