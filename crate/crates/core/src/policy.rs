//! Bitrate policies.
//!
//! The learned policy is a single small MLP that scores one encoding at a
//! time from `(bandwidth prediction, buffer, chunk size)`. The same network is
//! applied to every encoding of the ladder and the scores are pushed through
//! a softmax, so one parameter vector serves ladders of any length and the
//! output distribution is equivariant to reordering the encodings.
//!
//! Parameters live in one flat vector. For each layer, in order: the weight
//! matrix row-major (`out x in`) followed by the bias vector.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::seed::{rng_from, SimRng};
use crate::simenv::{AbrPolicy, Observation};

pub const INPUT_WIDTH: usize = 3;
pub const DEFAULT_HIDDEN: [usize; 2] = [32, 32];

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    layer_sizes: Vec<usize>,
    theta: Vec<f64>,
}

impl PolicyParams {
    /// All-zero parameters for `3 -> hidden... -> 1`.
    pub fn zeros(hidden: &[usize]) -> Result<Self> {
        if hidden.contains(&0) {
            return Err(Error::config("hidden", "layer widths must be >= 1"));
        }
        let mut layer_sizes = vec![INPUT_WIDTH];
        layer_sizes.extend_from_slice(hidden);
        layer_sizes.push(1);
        let n = param_count(&layer_sizes);
        Ok(PolicyParams {
            layer_sizes,
            theta: vec![0.0; n],
        })
    }

    /// Fan-in scaled uniform weights `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, zero biases.
    pub fn init(hidden: &[usize], seed: u64) -> Result<Self> {
        let mut p = Self::zeros(hidden)?;
        let mut rng = rng_from(seed);
        let mut off = 0;
        for w in p.layer_sizes.clone().windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut p.theta[off..off + fan_in * fan_out] {
                *v = rng.random_range(-bound..bound);
            }
            off += fan_in * fan_out + fan_out;
        }
        Ok(p)
    }

    pub fn from_parts(layer_sizes: Vec<usize>, theta: Vec<f64>) -> Result<Self> {
        if layer_sizes.len() < 2
            || layer_sizes[0] != INPUT_WIDTH
            || *layer_sizes.last().unwrap() != 1
            || layer_sizes.contains(&0)
        {
            return Err(Error::config(
                "layers",
                format!("must be {INPUT_WIDTH} -> ... -> 1, got {layer_sizes:?}"),
            ));
        }
        let n = param_count(&layer_sizes);
        if theta.len() != n {
            return Err(Error::LengthMismatch(format!(
                "layers {layer_sizes:?} need {n} parameters, got {}",
                theta.len()
            )));
        }
        Ok(PolicyParams { layer_sizes, theta })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    fn forward(&self, input: [f64; INPUT_WIDTH], acts: &mut Vec<Vec<f64>>) -> f64 {
        acts.clear();
        acts.push(input.to_vec());
        let n_layers = self.layer_sizes.len() - 1;
        let mut off = 0;
        for l in 0..n_layers {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let w = &self.theta[off..off + n_in * n_out];
            let b = &self.theta[off + n_in * n_out..off + n_in * n_out + n_out];
            let prev = &acts[l];
            let mut z: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    b[o] + row.iter().zip(prev).map(|(wi, ai)| wi * ai).sum::<f64>()
                })
                .collect();
            if l + 1 < n_layers {
                for v in &mut z {
                    *v = v.max(0.0);
                }
            }
            acts.push(z);
            off += n_in * n_out + n_out;
        }
        acts[n_layers][0]
    }

    /// Accumulates `dq * d(output)/d(theta)` into `grad` using activations
    /// cached by the matching `forward` call.
    fn backward(&self, acts: &[Vec<f64>], dq: f64, grad: &mut [f64]) {
        let n_layers = self.layer_sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            offsets.push(off);
            off += self.layer_sizes[l] * self.layer_sizes[l + 1] + self.layer_sizes[l + 1];
        }
        let mut delta = vec![dq];
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let off = offsets[l];
            let input = &acts[l];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let gw = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                for (g, a) in gw.iter_mut().zip(input) {
                    *g += d * a;
                }
                grad[off + n_in * n_out + o] += d;
            }
            if l > 0 {
                let w = &self.theta[off..off + n_in * n_out];
                let mut prev = vec![0.0; n_in];
                for o in 0..n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    for (p, wi) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                        *p += d * wi;
                    }
                }
                // Rectifier derivative: zero where the cached activation was clipped.
                for (p, a) in prev.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
    }
}

fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Divisors applied to `(bandwidth kbps, buffer s, size kbits)` before the
/// network sees them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationSpec {
    pub bandwidth: f64,
    pub buffer: f64,
    pub size: f64,
}

impl NormalizationSpec {
    pub fn new(bandwidth: f64, buffer: f64, size: f64) -> Result<Self> {
        for (name, v) in [("bandwidth", bandwidth), ("buffer", buffer), ("size", size)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(
                    format!("norm.{name}"),
                    format!("scale must be > 0, got {v}"),
                ));
            }
        }
        Ok(NormalizationSpec {
            bandwidth,
            buffer,
            size,
        })
    }

    /// 10 Mbps bandwidth scale, buffer over capacity, sizes over the largest
    /// chunk of the training ladder.
    pub fn standard(capacity: f64, max_size: f64) -> Result<Self> {
        Self::new(10_000.0, capacity, max_size)
    }

    fn input(&self, obs: &Observation, size: f64) -> [f64; INPUT_WIDTH] {
        [
            obs.prediction / self.bandwidth,
            obs.buffer / self.buffer,
            size / self.size,
        ]
    }
}

/// One priority per encoding, all from the same network.
pub fn priorities(params: &PolicyParams, norm: &NormalizationSpec, obs: &Observation) -> Vec<f64> {
    let mut acts = Vec::new();
    obs.sizes
        .iter()
        .map(|&s| params.forward(norm.input(obs, s), &mut acts))
        .collect()
}

/// Max-subtracted softmax.
pub fn action_distribution(priorities: &[f64]) -> Vec<f64> {
    let max = priorities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = priorities.iter().map(|q| (q - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

pub fn sample_action(probs: &[f64], rng: &mut SimRng) -> Result<usize> {
    if probs.is_empty() {
        return Err(Error::DegenerateProbabilities("empty".into()));
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::DegenerateProbabilities(format!("{probs:?}")));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::DegenerateProbabilities(format!("sum {total}")));
    }
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(i);
        }
    }
    // Rounding left u at the top edge; take the last non-zero entry.
    Ok(probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1))
}

/// Forward pass over all encodings with cached activations, so several
/// gradients can be pulled out of one evaluation.
pub struct PolicyEval<'a> {
    params: &'a PolicyParams,
    caches: Vec<Vec<Vec<f64>>>,
    pub priorities: Vec<f64>,
    pub probs: Vec<f64>,
}

impl<'a> PolicyEval<'a> {
    pub fn new(params: &'a PolicyParams, norm: &NormalizationSpec, obs: &Observation) -> Self {
        let mut caches = Vec::with_capacity(obs.sizes.len());
        let mut priorities = Vec::with_capacity(obs.sizes.len());
        for &s in &obs.sizes {
            let mut acts = Vec::new();
            priorities.push(params.forward(norm.input(obs, s), &mut acts));
            caches.push(acts);
        }
        let probs = action_distribution(&priorities);
        PolicyEval {
            params,
            caches,
            priorities,
            probs,
        }
    }

    pub fn entropy(&self) -> f64 {
        entropy(&self.probs)
    }

    /// `grad += sum_i dq[i] * d q_i / d theta`.
    pub fn accumulate(&self, dq: &[f64], grad: &mut [f64]) {
        for (acts, &d) in self.caches.iter().zip(dq) {
            if d != 0.0 {
                self.params.backward(acts, d, grad);
            }
        }
    }

    /// d log p_a / d q_i = [i == a] - p_i
    pub fn log_prob_dq(&self, action: usize) -> Vec<f64> {
        self.probs
            .iter()
            .enumerate()
            .map(|(i, p)| f64::from(u8::from(i == action)) - p)
            .collect()
    }

    /// dH / d q_j = -p_j (log p_j + H)
    pub fn entropy_dq(&self) -> Vec<f64> {
        let h = self.entropy();
        self.probs
            .iter()
            .map(|&p| if p > 0.0 { -p * (p.ln() + h) } else { 0.0 })
            .collect()
    }
}

pub fn grad_log_prob(
    params: &PolicyParams,
    norm: &NormalizationSpec,
    obs: &Observation,
    action: usize,
) -> Result<Vec<f64>> {
    if action >= obs.sizes.len() {
        return Err(Error::ActionOutOfRange {
            action,
            encodings: obs.sizes.len(),
        });
    }
    let eval = PolicyEval::new(params, norm, obs);
    let mut grad = vec![0.0; params.len()];
    eval.accumulate(&eval.log_prob_dq(action), &mut grad);
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    /// Draw from the softmax distribution.
    Sample,
    /// Take the most probable encoding.
    Greedy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralPolicy {
    pub params: PolicyParams,
    pub norm: NormalizationSpec,
    pub mode: ActionMode,
}

impl NeuralPolicy {
    pub fn new(params: PolicyParams, norm: NormalizationSpec) -> Self {
        NeuralPolicy {
            params,
            norm,
            mode: ActionMode::Sample,
        }
    }

    pub fn distribution(&self, obs: &Observation) -> Vec<f64> {
        action_distribution(&priorities(&self.params, &self.norm, obs))
    }
}

impl AbrPolicy for NeuralPolicy {
    fn select(&self, obs: &Observation, rng: &mut SimRng) -> usize {
        let probs = self.distribution(obs);
        match self.mode {
            ActionMode::Sample => sample_action(&probs, rng).unwrap_or(0),
            ActionMode::Greedy => argmax(&probs),
        }
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| {
            if x > bv {
                (i, x)
            } else {
                (bi, bv)
            }
        })
        .0
}

// ---------------------------------------------------------------------------
// Heuristic baselines

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeuristicKind {
    RateBased,
    BufferBased,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicPolicySpec {
    pub kind: HeuristicKind,
    pub rate_safety: f64,
    /// Buffer level (s) at which each rung becomes eligible. Rungs beyond the
    /// end of this list are never chosen by the buffer-based rule.
    pub buffer_thresholds: Vec<f64>,
}

impl Default for HeuristicPolicySpec {
    fn default() -> Self {
        Self::rate_based(0.8)
    }
}

impl HeuristicPolicySpec {
    pub fn rate_based(rate_safety: f64) -> Self {
        HeuristicPolicySpec {
            kind: HeuristicKind::RateBased,
            rate_safety,
            buffer_thresholds: Vec::new(),
        }
    }

    /// Rung 0 below `reservoir`, rung 1 at `reservoir`, then evenly spaced
    /// thresholds up to `reservoir + cushion` for the top rung.
    pub fn buffer_based(encodings: usize, reservoir: f64, cushion: f64) -> Self {
        let thresholds = (0..encodings)
            .map(|i| match i {
                0 => 0.0,
                _ if encodings == 2 => reservoir,
                _ => reservoir + cushion * (i - 1) as f64 / (encodings - 2) as f64,
            })
            .collect();
        HeuristicPolicySpec {
            kind: HeuristicKind::BufferBased,
            rate_safety: 1.0,
            buffer_thresholds: thresholds,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate_safety > 0.0 && self.rate_safety <= 1.0) {
            return Err(Error::config("rate_safety", "must be in (0, 1]"));
        }
        if self.buffer_thresholds.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::config("buffer_thresholds", "must be non-decreasing"));
        }
        if self.kind == HeuristicKind::BufferBased && self.buffer_thresholds.is_empty() {
            return Err(Error::config("buffer_thresholds", "required for buffer-based"));
        }
        Ok(())
    }
}

pub fn heuristic_decide(spec: &HeuristicPolicySpec, obs: &Observation) -> usize {
    let m = obs.encodings();
    match spec.kind {
        HeuristicKind::RateBased => {
            let budget = spec.rate_safety * obs.prediction;
            obs.ladder
                .iter()
                .take(m)
                .rposition(|&b| b <= budget)
                .unwrap_or(0)
        }
        HeuristicKind::BufferBased => spec
            .buffer_thresholds
            .iter()
            .take(m)
            .rposition(|&t| t <= obs.buffer)
            .unwrap_or(0),
    }
}

impl AbrPolicy for HeuristicPolicySpec {
    fn select(&self, obs: &Observation, _rng: &mut SimRng) -> usize {
        heuristic_decide(self, obs)
    }
}

// ---------------------------------------------------------------------------
// Linear policy

/// `intended = a * prediction + b * buffer + c`, in kilobits of chunk size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearPolicyParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl LinearPolicyParams {
    pub fn intended(&self, prediction: f64, buffer: f64) -> f64 {
        self.a * prediction + self.b * buffer + self.c
    }
}

/// Largest encoding whose size does not exceed `intended`; the lowest
/// encoding when none does.
pub fn select_below(sizes: &[f64], intended: f64) -> usize {
    sizes.iter().rposition(|&s| s <= intended).unwrap_or(0)
}

pub fn linear_decide(params: &LinearPolicyParams, obs: &Observation) -> usize {
    select_below(&obs.sizes, params.intended(obs.prediction, obs.buffer))
}

impl AbrPolicy for LinearPolicyParams {
    fn select(&self, obs: &Observation, _rng: &mut SimRng) -> usize {
        linear_decide(self, obs)
    }
}

// ---------------------------------------------------------------------------
// Checkpoints

const POLICY_HEADER: &str = "#abrpolicy v1";
const LINEAR_HEADER: &str = "#abrlinear v1";

pub fn format_policy(params: &PolicyParams, norm: &NormalizationSpec) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{POLICY_HEADER}");
    let layers: Vec<String> = params.layer_sizes.iter().map(|n| n.to_string()).collect();
    let _ = writeln!(out, "layers {}", layers.join(" "));
    let _ = writeln!(out, "norm {} {} {}", norm.bandwidth, norm.buffer, norm.size);
    let _ = writeln!(out, "theta {}", params.theta.len());
    for v in &params.theta {
        let _ = writeln!(out, "{v}");
    }
    out
}

fn perr(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_nums<T: std::str::FromStr>(line: usize, toks: &[&str]) -> Result<Vec<T>> {
    toks.iter()
        .map(|t| t.parse::<T>().map_err(|_| perr(line, format!("bad number `{t}`"))))
        .collect()
}

pub fn parse_policy(text: &str) -> Result<(PolicyParams, NormalizationSpec)> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| perr(0, format!("unexpected end of checkpoint, expected {what}")))
    };
    let (n, header) = next("header")?;
    if header != POLICY_HEADER {
        return Err(perr(n, format!("expected `{POLICY_HEADER}`")));
    }
    let (n, layers) = next("layers")?;
    let toks: Vec<&str> = layers.split_whitespace().collect();
    if toks.first() != Some(&"layers") {
        return Err(perr(n, "expected `layers`"));
    }
    let layer_sizes: Vec<usize> = parse_nums(n, &toks[1..])?;
    let (n, norm_line) = next("norm")?;
    let toks: Vec<&str> = norm_line.split_whitespace().collect();
    if toks.first() != Some(&"norm") || toks.len() != 4 {
        return Err(perr(n, "expected `norm <bandwidth> <buffer> <size>`"));
    }
    let s: Vec<f64> = parse_nums(n, &toks[1..])?;
    let norm = NormalizationSpec::new(s[0], s[1], s[2]).map_err(|e| perr(n, e.to_string()))?;
    let (n, theta_line) = next("theta")?;
    let toks: Vec<&str> = theta_line.split_whitespace().collect();
    if toks.first() != Some(&"theta") || toks.len() != 2 {
        return Err(perr(n, "expected `theta <count>`"));
    }
    let count: usize = parse_nums(n, &toks[1..])?[0];
    let mut theta = Vec::with_capacity(count);
    for _ in 0..count {
        let (n, v) = next("parameter")?;
        let v: f64 = v.parse().map_err(|_| perr(n, format!("bad number `{v}`")))?;
        if !v.is_finite() {
            return Err(perr(n, "non-finite parameter"));
        }
        theta.push(v);
    }
    if let Some((n, extra)) = lines.find(|(_, l)| !l.is_empty()) {
        return Err(perr(n, format!("trailing content `{extra}`")));
    }
    let params = PolicyParams::from_parts(layer_sizes, theta).map_err(|e| perr(2, e.to_string()))?;
    Ok((params, norm))
}

pub fn format_linear(params: &LinearPolicyParams) -> String {
    format!("{LINEAR_HEADER}\n{} {} {}\n", params.a, params.b, params.c)
}

pub fn parse_linear(text: &str) -> Result<LinearPolicyParams> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    if lines.next() != Some(LINEAR_HEADER) {
        return Err(perr(1, format!("expected `{LINEAR_HEADER}`")));
    }
    let body = lines.next().ok_or_else(|| perr(2, "missing `a b c` line"))?;
    let toks: Vec<&str> = body.split_whitespace().collect();
    if toks.len() != 3 {
        return Err(perr(2, "expected exactly three numbers `a b c`"));
    }
    let v: Vec<f64> = parse_nums(2, &toks)?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(perr(2, "non-finite coefficient"));
    }
    if lines.next().is_some() {
        return Err(perr(3, "trailing content"));
    }
    Ok(LinearPolicyParams {
        a: v[0],
        b: v[1],
        c: v[2],
    })
}

pub fn save_policy(path: impl AsRef<Path>, params: &PolicyParams, norm: &NormalizationSpec) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_policy(params, norm)).map_err(|e| Error::io(path, e))
}

pub fn load_policy(path: impl AsRef<Path>) -> Result<(PolicyParams, NormalizationSpec)> {
    let path = path.as_ref();
    parse_policy(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(prediction: f64, buffer: f64, sizes: &[f64]) -> Observation {
        Observation {
            prediction,
            buffer,
            sizes: sizes.to_vec(),
            ladder: sizes.iter().map(|s| s / 2.0).collect(),
        }
    }

    fn norm() -> NormalizationSpec {
        NormalizationSpec::standard(30.0, 10_000.0).unwrap()
    }

    #[test]
    fn identical_sizes_identical_priorities() {
        let p = PolicyParams::init(&DEFAULT_HIDDEN, 3).unwrap();
        let q = priorities(&p, &norm(), &obs(2000.0, 5.0, &[1000.0, 1000.0]));
        assert_eq!(q[0], q[1]);
    }

    #[test]
    fn zero_theta_is_constant() {
        let p = PolicyParams::zeros(&DEFAULT_HIDDEN).unwrap();
        let q = priorities(&p, &norm(), &obs(2000.0, 5.0, &[100.0, 900.0, 4000.0]));
        assert!(q.iter().all(|&v| v == 0.0));
        assert_eq!(p.len(), 3 * 32 + 32 + 32 * 32 + 32 + 32 + 1);
    }

    #[test]
    fn softmax_examples() {
        let u = action_distribution(&[0.0, 0.0, 0.0]);
        assert!(u.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
        let big = action_distribution(&[1000.0, 0.0]);
        assert!(big.iter().all(|p| p.is_finite()));
        assert!((big[0] - 1.0).abs() < 1e-12 && big[1] < 1e-300);
        let a = action_distribution(&[0.3, -1.2, 2.0]);
        let b = action_distribution(&[5.3, 3.8, 7.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling() {
        let mut rng = rng_from(0);
        for _ in 0..100 {
            assert_eq!(sample_action(&[1.0, 0.0, 0.0], &mut rng).unwrap(), 0);
        }
        let mut rng = rng_from(42);
        let hits = (0..100_000)
            .filter(|_| sample_action(&[0.5, 0.5], &mut rng).unwrap() == 0)
            .count();
        let f = hits as f64 / 1e5;
        assert!((0.49..=0.51).contains(&f), "{f}");
        let draw = |s| sample_action(&[0.2, 0.3, 0.5], &mut rng_from(s)).unwrap();
        assert_eq!(draw(9), draw(9));
        assert!(sample_action(&[f64::NAN, 1.0], &mut rng).is_err());
    }

    #[test]
    fn single_encoding_has_zero_gradient() {
        let p = PolicyParams::init(&DEFAULT_HIDDEN, 1).unwrap();
        let g = grad_log_prob(&p, &norm(), &obs(1000.0, 3.0, &[500.0]), 0).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn heuristic_examples() {
        let rate = HeuristicPolicySpec::rate_based(0.8);
        let o = Observation {
            prediction: 3000.0,
            buffer: 4.0,
            sizes: vec![1000.0, 3000.0, 6000.0],
            ladder: vec![500.0, 1500.0, 3000.0],
        };
        assert_eq!(heuristic_decide(&rate, &o), 1);
        let slow = Observation {
            prediction: 100.0,
            ..o.clone()
        };
        assert_eq!(heuristic_decide(&rate, &slow), 0);
        let buf = HeuristicPolicySpec::buffer_based(3, 5.0, 10.0);
        buf.validate().unwrap();
        let empty = Observation {
            buffer: 0.0,
            ..o.clone()
        };
        assert_eq!(heuristic_decide(&buf, &empty), 0);
        let full = Observation {
            buffer: 30.0,
            ..o
        };
        assert_eq!(heuristic_decide(&buf, &full), 2);
    }

    #[test]
    fn linear_rule() {
        let sizes = [500.0, 1500.0, 3000.0];
        assert_eq!(select_below(&sizes, 2500.0), 1);
        assert_eq!(select_below(&sizes, 10.0), 0);
        assert_eq!(select_below(&sizes, 3000.0), 2);
        assert_eq!(select_below(&sizes, 1e9), 2);
        let lin = LinearPolicyParams {
            a: 1.0,
            b: 100.0,
            c: 0.0,
        };
        assert_eq!(linear_decide(&lin, &obs(2000.0, 5.0, &sizes)), 1);
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = PolicyParams::init(&[4, 3], 8).unwrap();
        let n = norm();
        let text = format_policy(&p, &n);
        assert!(text.starts_with("#abrpolicy v1\nlayers 3 4 3 1\n"));
        let (p2, n2) = parse_policy(&text).unwrap();
        assert_eq!(p, p2);
        assert_eq!(n, n2);
        let lin = LinearPolicyParams {
            a: 0.25,
            b: -13.5,
            c: 1e-3,
        };
        assert_eq!(parse_linear(&format_linear(&lin)).unwrap(), lin);
        assert!(parse_linear("#abrlinear v1\n1 2\n").is_err());
        assert!(parse_policy(&text.replace("theta 35", "theta 36")).is_err());
    }
}
