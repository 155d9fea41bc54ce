//! Trace data model, the `#abrtrace v1` file format, the synthetic trace
//! generator, and the harmonic-mean bandwidth predictor.
//!
//! A trace is the per-download log of one viewing session. Record `t` holds
//! the one-step-ahead bandwidth prediction available before chunk `t` is
//! requested, the throughput that chunk `t` experiences when downloaded, the
//! download time of the previous chunk, and the file size of chunk `t` at
//! every encoding. Units are kilobits, kilobits/second and seconds.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Geometric, StandardNormal};

use crate::error::{Error, Result};
use crate::seed::{child_rng, rng_from};

pub const DEFAULT_CHUNK_DURATION: f64 = 2.0;
pub const DEFAULT_PREDICTOR_WINDOW: usize = 5;

const HEADER_TAG: &str = "#abrtrace";
const HEADER_VERSION: &str = "v1";

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub prediction: f64,
    pub measured: f64,
    pub elapsed: f64,
    pub sizes: Vec<f64>,
}

impl TraceRecord {
    fn check(&self) -> std::result::Result<(), String> {
        if !(self.prediction.is_finite() && self.prediction > 0.0) {
            return Err(format!("prediction must be > 0, got {}", self.prediction));
        }
        if !(self.measured.is_finite() && self.measured > 0.0) {
            return Err(format!("measured bandwidth must be > 0, got {}", self.measured));
        }
        if !(self.elapsed.is_finite() && self.elapsed >= 0.0) {
            return Err(format!("elapsed must be >= 0, got {}", self.elapsed));
        }
        if self.sizes.is_empty() {
            return Err("no encodings".into());
        }
        if self.sizes.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err("sizes must be finite and positive".into());
        }
        if self.sizes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(format!("sizes must be strictly increasing, got {:?}", self.sizes));
        }
        Ok(())
    }
}

/// One viewing session. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    id: String,
    chunk_duration: f64,
    records: Vec<TraceRecord>,
    ladder: Vec<f64>,
}

impl Trace {
    pub fn new(
        id: impl Into<String>,
        chunk_duration: f64,
        records: Vec<TraceRecord>,
    ) -> Result<Self> {
        if !(chunk_duration.is_finite() && chunk_duration > 0.0) {
            return Err(Error::InvalidTrace(format!(
                "chunk duration must be > 0, got {chunk_duration}"
            )));
        }
        let Some(first) = records.first() else {
            return Err(Error::InvalidTrace("empty trace".into()));
        };
        let m = first.sizes.len();
        for (i, r) in records.iter().enumerate() {
            r.check()
                .map_err(|e| Error::InvalidTrace(format!("record {i}: {e}")))?;
            if r.sizes.len() != m {
                return Err(Error::InvalidTrace(format!(
                    "record {i}: {} encodings, expected {m}",
                    r.sizes.len()
                )));
            }
        }
        let ladder = nominal_ladder(&records, chunk_duration);
        Ok(Trace {
            id: id.into(),
            chunk_duration,
            records,
            ladder,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn chunk_duration(&self) -> f64 {
        self.chunk_duration
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn encodings(&self) -> usize {
        self.ladder.len()
    }

    /// Nominal kbps per encoding: mean chunk size over the session divided
    /// by the chunk duration.
    pub fn ladder(&self) -> &[f64] {
        &self.ladder
    }

    pub fn watch_time(&self) -> f64 {
        self.chunk_duration * self.records.len() as f64
    }

    pub fn mean_measured(&self) -> f64 {
        self.records.iter().map(|r| r.measured).sum::<f64>() / self.records.len() as f64
    }
}

fn nominal_ladder(records: &[TraceRecord], chunk_duration: f64) -> Vec<f64> {
    let m = records[0].sizes.len();
    let n = records.len() as f64;
    (0..m)
        .map(|i| records.iter().map(|r| r.sizes[i]).sum::<f64>() / n / chunk_duration)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Holdout,
}

/// Traces plus their train/holdout designation.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    traces: Vec<Trace>,
    split: Vec<Split>,
}

impl TraceSet {
    /// Assigns `round(holdout_fraction * n)` traces to the holdout split,
    /// chosen by a seeded shuffle.
    pub fn new(traces: Vec<Trace>, holdout_fraction: f64, seed: u64) -> Result<Self> {
        if traces.is_empty() {
            return Err(Error::NoTraces);
        }
        if !(0.0..=1.0).contains(&holdout_fraction) {
            return Err(Error::config(
                "split_fraction",
                format!("must be in [0, 1], got {holdout_fraction}"),
            ));
        }
        let n = traces.len();
        let n_holdout = ((n as f64) * holdout_fraction).round() as usize;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_from(seed));
        let mut split = vec![Split::Train; n];
        for &i in &order[..n_holdout] {
            split[i] = Split::Holdout;
        }
        Ok(TraceSet { traces, split })
    }

    pub fn from_parts(traces: Vec<Trace>, split: Vec<Split>) -> Result<Self> {
        if traces.is_empty() {
            return Err(Error::NoTraces);
        }
        if traces.len() != split.len() {
            return Err(Error::LengthMismatch(format!(
                "{} traces but {} split labels",
                traces.len(),
                split.len()
            )));
        }
        Ok(TraceSet { traces, split })
    }

    pub fn traces(&self) -> &[Trace] {
        &self.traces
    }

    pub fn split(&self) -> &[Split] {
        &self.split
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn indices(&self, which: Split) -> Vec<usize> {
        (0..self.traces.len())
            .filter(|&i| self.split[i] == which)
            .collect()
    }

    pub fn train(&self) -> Vec<&Trace> {
        self.subset(Split::Train)
    }

    pub fn holdout(&self) -> Vec<&Trace> {
        self.subset(Split::Holdout)
    }

    fn subset(&self, which: Split) -> Vec<&Trace> {
        self.traces
            .iter()
            .zip(&self.split)
            .filter(|(_, s)| **s == which)
            .map(|(t, _)| t)
            .collect()
    }

    /// Smallest and largest chunk size (kilobits) anywhere in the set.
    pub fn size_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for r in self.traces.iter().flat_map(|t| t.records()) {
            lo = lo.min(r.sizes[0]);
            hi = hi.max(*r.sizes.last().unwrap());
        }
        (lo, hi)
    }
}

/// Harmonic mean of the last `min(k, history.len())` measurements.
pub fn predict_bandwidth(history: &[f64], k: usize) -> Result<f64> {
    if history.is_empty() {
        return Err(Error::EmptyHistory);
    }
    let k = k.max(1).min(history.len());
    let window = &history[history.len() - k..];
    let inv: f64 = window.iter().map(|b| 1.0 / b).sum();
    Ok(k as f64 / inv)
}

// ---------------------------------------------------------------------------
// File format

pub fn parse_traces(text: &str) -> Result<Vec<Trace>> {
    struct Pending {
        header_line: usize,
        encodings: usize,
        chunk_duration: f64,
        records: Vec<TraceRecord>,
    }

    fn finish(p: Pending, out: &mut Vec<Trace>) -> Result<()> {
        if p.records.is_empty() {
            return Err(Error::Parse {
                line: p.header_line,
                msg: "session header with no records".into(),
            });
        }
        let id = format!("trace-{}", out.len());
        let t = Trace::new(id, p.chunk_duration, p.records).map_err(|e| Error::Parse {
            line: p.header_line,
            msg: e.to_string(),
        })?;
        out.push(t);
        Ok(())
    }

    let mut out = Vec::new();
    let mut cur: Option<Pending> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            if let Some(p) = cur.take() {
                finish(p, &mut out)?;
            }
            continue;
        }
        if line.starts_with('#') {
            if let Some(p) = cur.take() {
                finish(p, &mut out)?;
            }
            let (encodings, chunk_duration) = parse_header(line).map_err(|msg| Error::Parse {
                line: line_no,
                msg,
            })?;
            cur = Some(Pending {
                header_line: line_no,
                encodings,
                chunk_duration,
                records: Vec::new(),
            });
            continue;
        }
        let Some(p) = cur.as_mut() else {
            return Err(Error::Parse {
                line: line_no,
                msg: "record before session header".into(),
            });
        };
        let rec = parse_record(line, p.encodings).map_err(|msg| Error::Parse {
            line: line_no,
            msg,
        })?;
        p.records.push(rec);
    }
    if let Some(p) = cur.take() {
        finish(p, &mut out)?;
    }
    if out.is_empty() {
        return Err(Error::NoTraces);
    }
    Ok(out)
}

fn parse_header(line: &str) -> std::result::Result<(usize, f64), String> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(HEADER_TAG) {
        return Err(format!("expected `{HEADER_TAG}` header, got `{line}`"));
    }
    match parts.next() {
        Some(HEADER_VERSION) => {}
        other => return Err(format!("unsupported trace version {other:?}")),
    }
    let mut encodings = None;
    let mut chunk_duration = None;
    for kv in parts {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| format!("malformed header field `{kv}`"))?;
        match k {
            "encodings" => {
                let m: usize = v.parse().map_err(|_| format!("bad encodings `{v}`"))?;
                if m == 0 {
                    return Err("encodings must be >= 1".into());
                }
                encodings = Some(m);
            }
            "chunk_duration" => {
                let d: f64 = v.parse().map_err(|_| format!("bad chunk_duration `{v}`"))?;
                if !(d.is_finite() && d > 0.0) {
                    return Err("chunk_duration must be > 0".into());
                }
                chunk_duration = Some(d);
            }
            _ => return Err(format!("unknown header field `{k}`")),
        }
    }
    Ok((
        encodings.ok_or("header missing encodings")?,
        chunk_duration.ok_or("header missing chunk_duration")?,
    ))
}

fn parse_record(line: &str, encodings: usize) -> std::result::Result<TraceRecord, String> {
    let nums = line
        .split_whitespace()
        .map(|tok| tok.parse::<f64>().map_err(|_| format!("bad number `{tok}`")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if nums.len() != 3 + encodings {
        return Err(format!(
            "expected {} fields ({} encodings), got {}",
            3 + encodings,
            encodings,
            nums.len()
        ));
    }
    let rec = TraceRecord {
        prediction: nums[0],
        measured: nums[1],
        elapsed: nums[2],
        sizes: nums[3..].to_vec(),
    };
    rec.check()?;
    Ok(rec)
}

pub fn format_traces<'a>(traces: impl IntoIterator<Item = &'a Trace>) -> String {
    let mut out = String::new();
    for (i, t) in traces.into_iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "{HEADER_TAG} {HEADER_VERSION} encodings={} chunk_duration={}",
            t.encodings(),
            t.chunk_duration()
        );
        for r in t.records() {
            let _ = write!(out, "{} {} {}", r.prediction, r.measured, r.elapsed);
            for s in &r.sizes {
                let _ = write!(out, " {s}");
            }
            out.push('\n');
        }
    }
    out
}

pub fn write_traces(path: impl AsRef<Path>, set: &TraceSet) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_traces(set.traces())).map_err(|e| Error::io(path, e))
}

pub fn load_traces(path: impl AsRef<Path>, split_fraction: f64, seed: u64) -> Result<TraceSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    TraceSet::new(parse_traces(&text)?, split_fraction, seed)
}

// ---------------------------------------------------------------------------
// Synthetic generation

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Slow,
    Mixed,
    Fast,
}

impl Profile {
    /// Range (kbps) of the per-session base bandwidth, drawn log-uniformly.
    pub fn base_range(self) -> (f64, f64) {
        match self {
            Profile::Slow => (150.0, 450.0),
            Profile::Mixed => (200.0, 20_000.0),
            Profile::Fast => (12_000.0, 30_000.0),
        }
    }
}

/// Markov-modulated log-normal throughput. Each hidden state scales the
/// session's base bandwidth and sets its per-chunk log-volatility; the chain
/// stays put with `stay_probability` and otherwise jumps uniformly to another
/// state.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthProcess {
    pub state_multipliers: Vec<f64>,
    pub state_volatility: Vec<f64>,
    pub stay_probability: f64,
}

impl Default for BandwidthProcess {
    fn default() -> Self {
        BandwidthProcess {
            state_multipliers: vec![1.0, 0.35],
            state_volatility: vec![0.2, 0.5],
            stay_probability: 0.92,
        }
    }
}

/// Session length in chunks: `1 + Geometric(1 / mean_chunks)`, clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct WatchTime {
    pub mean_chunks: f64,
    pub min_chunks: usize,
    pub max_chunks: usize,
}

impl Default for WatchTime {
    fn default() -> Self {
        WatchTime {
            mean_chunks: 60.0,
            min_chunks: 5,
            max_chunks: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTraceConfig {
    pub count: usize,
    /// kbps per encoding; its length is the number of encodings.
    pub ladder: Vec<f64>,
    pub chunk_duration: f64,
    pub process: BandwidthProcess,
    pub watch_time: WatchTime,
    pub profile: Profile,
    /// Overrides the profile's base-bandwidth range when set.
    pub base_range: Option<(f64, f64)>,
    /// Half-width of the uniform multiplicative jitter on chunk sizes.
    pub size_jitter: f64,
    pub predictor_window: usize,
    pub holdout_fraction: f64,
}

impl Default for SyntheticTraceConfig {
    fn default() -> Self {
        SyntheticTraceConfig {
            count: 200,
            ladder: vec![300.0, 750.0, 1200.0, 1850.0, 2850.0, 4300.0],
            chunk_duration: DEFAULT_CHUNK_DURATION,
            process: BandwidthProcess::default(),
            watch_time: WatchTime::default(),
            profile: Profile::Mixed,
            base_range: None,
            size_jitter: 0.05,
            predictor_window: DEFAULT_PREDICTOR_WINDOW,
            holdout_fraction: 0.2,
        }
    }
}

impl SyntheticTraceConfig {
    pub fn encodings(&self) -> usize {
        self.ladder.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::config("count", "must be >= 1"));
        }
        if self.ladder.is_empty() {
            return Err(Error::config("ladder", "needs at least one encoding"));
        }
        if self.ladder.iter().any(|b| !(b.is_finite() && *b > 0.0))
            || self.ladder.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::config("ladder", "must be positive and strictly increasing"));
        }
        if !(self.chunk_duration.is_finite() && self.chunk_duration > 0.0) {
            return Err(Error::config("chunk_duration", "must be > 0"));
        }
        let p = &self.process;
        if p.state_multipliers.is_empty()
            || p.state_multipliers.len() != p.state_volatility.len()
        {
            return Err(Error::config(
                "state_multipliers",
                "must be non-empty and match state_volatility in length",
            ));
        }
        if p.state_multipliers.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(Error::config("state_multipliers", "must be > 0"));
        }
        if p.state_volatility.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::config("state_volatility", "must be >= 0"));
        }
        if !(0.0..=1.0).contains(&p.stay_probability) {
            return Err(Error::config("stay_probability", "must be in [0, 1]"));
        }
        let w = &self.watch_time;
        if !(w.mean_chunks.is_finite() && w.mean_chunks >= 1.0) {
            return Err(Error::config("mean_chunks", "must be >= 1"));
        }
        if w.min_chunks == 0 || w.max_chunks < w.min_chunks {
            return Err(Error::config(
                "min_chunks",
                "need 1 <= min_chunks <= max_chunks",
            ));
        }
        if let Some((lo, hi)) = self.base_range {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(Error::config("base_range", "need 0 < lo <= hi"));
            }
        }
        if !(0.0..0.5).contains(&self.size_jitter) {
            return Err(Error::config("size_jitter", "must be in [0, 0.5)"));
        }
        if self.predictor_window == 0 {
            return Err(Error::config("predictor_window", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.holdout_fraction) {
            return Err(Error::config("split_fraction", "must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Generates `config.count` sessions. Each session draws from its own seed
/// stream, so the set is identical for a fixed `seed`.
pub fn generate_synthetic(config: &SyntheticTraceConfig, seed: u64) -> Result<TraceSet> {
    config.validate()?;
    let traces = (0..config.count)
        .map(|i| generate_one(config, seed, i))
        .collect::<Result<Vec<_>>>()?;
    TraceSet::new(traces, config.holdout_fraction, seed)
}

fn generate_one(config: &SyntheticTraceConfig, seed: u64, index: usize) -> Result<Trace> {
    let mut rng = child_rng(seed, &[0x7472_6163, index as u64]);
    let (lo, hi) = config.base_range.unwrap_or_else(|| config.profile.base_range());
    let base = (lo.ln() + (hi.ln() - lo.ln()) * rng.random::<f64>()).exp();

    let w = &config.watch_time;
    let p_geo = (1.0 / w.mean_chunks).clamp(1e-9, 1.0);
    let extra = Geometric::new(p_geo)
        .map_err(|e| Error::config("mean_chunks", e.to_string()))?
        .sample(&mut rng);
    let chunks = (1 + extra as usize).clamp(w.min_chunks, w.max_chunks);

    let proc = &config.process;
    let n_states = proc.state_multipliers.len();
    let mut state = rng.random_range(0..n_states);
    let mut next_sample = |rng: &mut crate::seed::SimRng| {
        if n_states > 1 && rng.random::<f64>() >= proc.stay_probability {
            let jump = rng.random_range(1..n_states);
            state = (state + jump) % n_states;
        }
        let sigma = proc.state_volatility[state];
        let z: f64 = StandardNormal.sample(rng);
        base * proc.state_multipliers[state] * (sigma * z - 0.5 * sigma * sigma).exp()
    };

    let warmup = config.predictor_window;
    let mut history: Vec<f64> = (0..warmup).map(|_| next_sample(&mut rng)).collect();
    let mut records = Vec::with_capacity(chunks);
    let mut prev: Option<(f64, f64)> = None; // (middle-encoding size, throughput)
    for _ in 0..chunks {
        let prediction = predict_bandwidth(&history, config.predictor_window)?;
        let measured = next_sample(&mut rng);
        let mut sizes = Vec::with_capacity(config.ladder.len());
        for &rate in &config.ladder {
            let jitter = 1.0 + config.size_jitter * (2.0 * rng.random::<f64>() - 1.0);
            let mut s = rate * config.chunk_duration * jitter;
            if let Some(&last) = sizes.last() {
                if s <= last {
                    s = last * (1.0 + 1e-6);
                }
            }
            sizes.push(s);
        }
        let elapsed = prev.map_or(0.0, |(size, bw)| size / bw);
        prev = Some((sizes[sizes.len() / 2], measured));
        records.push(TraceRecord {
            prediction,
            measured,
            elapsed,
            sizes,
        });
        history.push(measured);
    }
    Trace::new(format!("trace-{index}"), config.chunk_duration, records)
}
