//! Command-line front end and run configuration.
//!
//! Configuration is a sectioned TOML document (`[paths]`, `[traces]`,
//! `[reward]`, `[train]`, `[shaping]`, `[translate]`, `[eval]`) plus top-level
//! `seed` and `workers`. Unknown keys are rejected. Any key can be overridden
//! from the command line as `--section.key=value` (or `--seed=N`,
//! `--workers=N`); `ABRLAB_SEED` overrides the configured seed, and flags
//! override both.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::evalrep::{self, compare, evaluate, DEFAULT_RESAMPLES};
use crate::policy::{
    self, HeuristicPolicySpec, LinearPolicyParams, NeuralPolicy, DEFAULT_HIDDEN,
};
use crate::seed::derive_seed;
use crate::shaping::{optimize_rewards, SearchSpace, ShapingConfig};
use crate::simenv::{AbrPolicy, DEFAULT_CAPACITY};
use crate::trace::{
    self, generate_synthetic, BandwidthProcess, Profile, SyntheticTraceConfig, TraceSet, WatchTime,
};
use crate::train::{self, BaselineMode, RewardWeights, TrainConfig};
use crate::translate::{translate_policy, TranslateConfig};

pub const SEED_ENV: &str = "ABRLAB_SEED";

// ---------------------------------------------------------------------------
// Config file schema

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct FileConfig {
    seed: u64,
    workers: usize,
    paths: PathsSection,
    traces: TracesSection,
    reward: RewardSection,
    train: TrainSection,
    shaping: ShapingSection,
    translate: TranslateSection,
    eval: EvalSection,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub traces: PathBuf,
    pub policy: PathBuf,
    pub linear: PathBuf,
    pub curve: PathBuf,
    pub shaping_log: PathBuf,
    pub metrics: PathBuf,
    pub report: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            traces: "traces.abr".into(),
            policy: "policy.ckpt".into(),
            linear: "linear.ckpt".into(),
            curve: "curve.tsv".into(),
            shaping_log: "shaping.log".into(),
            metrics: "metrics.tsv".into(),
            report: "report.tsv".into(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TracesSection {
    count: usize,
    ladder: Vec<f64>,
    chunk_duration: f64,
    profile: Profile,
    base_range: Option<[f64; 2]>,
    state_multipliers: Vec<f64>,
    state_volatility: Vec<f64>,
    stay_probability: f64,
    mean_chunks: f64,
    min_chunks: usize,
    max_chunks: usize,
    size_jitter: f64,
    predictor_window: usize,
    split_fraction: f64,
}

impl Default for TracesSection {
    fn default() -> Self {
        let d = SyntheticTraceConfig::default();
        TracesSection {
            count: d.count,
            ladder: d.ladder,
            chunk_duration: d.chunk_duration,
            profile: d.profile,
            base_range: None,
            state_multipliers: d.process.state_multipliers,
            state_volatility: d.process.state_volatility,
            stay_probability: d.process.stay_probability,
            mean_chunks: d.watch_time.mean_chunks,
            min_chunks: d.watch_time.min_chunks,
            max_chunks: d.watch_time.max_chunks,
            size_jitter: d.size_jitter,
            predictor_window: d.predictor_window,
            split_fraction: d.holdout_fraction,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RewardSection {
    w_b: f64,
    w_d: f64,
    w_c: f64,
    v_b: f64,
    v_d: f64,
}

impl Default for RewardSection {
    fn default() -> Self {
        let w = RewardWeights::default();
        RewardSection {
            w_b: w.w_b,
            w_d: w.w_d,
            w_c: w.w_c,
            v_b: w.v_b,
            v_d: w.v_d,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TrainSection {
    learning_rate: f64,
    rollouts_per_trace: usize,
    traces_per_iteration: usize,
    iterations: usize,
    entropy_weight: f64,
    entropy_decay: f64,
    entropy_decay_every: usize,
    grad_clip: f64,
    baseline: BaselineMode,
    hidden: Vec<usize>,
    capacity: f64,
    eval_traces: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            learning_rate: d.learning_rate,
            rollouts_per_trace: d.rollouts_per_trace,
            traces_per_iteration: d.traces_per_iteration,
            iterations: d.iterations,
            entropy_weight: d.entropy_weight,
            entropy_decay: d.entropy_decay,
            entropy_decay_every: d.entropy_decay_every,
            grad_clip: d.grad_clip,
            baseline: d.baseline_mode,
            hidden: DEFAULT_HIDDEN.to_vec(),
            capacity: DEFAULT_CAPACITY,
            eval_traces: d.eval_traces,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ShapingSection {
    initial_design: usize,
    batch_size: usize,
    rounds: usize,
    constraint_ratio: f64,
    /// Measured from the rate-based heuristic on holdout traces when absent.
    baseline_stall_rate: Option<f64>,
    mc_samples: usize,
    candidates: usize,
    replicates: usize,
    /// Training iterations per black-box evaluation; `[train].iterations` when absent.
    train_iterations: Option<usize>,
}

impl Default for ShapingSection {
    fn default() -> Self {
        let d = ShapingConfig::default();
        ShapingSection {
            initial_design: d.initial_design,
            batch_size: d.batch_size,
            rounds: d.rounds,
            constraint_ratio: d.constraint_ratio,
            baseline_stall_rate: None,
            mc_samples: d.mc_samples,
            candidates: d.candidates,
            replicates: d.replicates,
            train_iterations: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TranslateSection {
    n: usize,
    m: usize,
    /// Explicit prediction range; the holdout 1st..99th percentile when absent.
    x_range: Option<[f64; 2]>,
    /// Explicit probe-size range; the trace set's size range when absent.
    size_range: Option<[f64; 2]>,
}

impl Default for TranslateSection {
    fn default() -> Self {
        TranslateSection {
            n: 2000,
            m: 5,
            x_range: None,
            size_range: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct EvalSection {
    resamples: usize,
    rate_safety: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            resamples: DEFAULT_RESAMPLES,
            rate_safety: 0.8,
        }
    }
}

/// Fully validated configuration for every subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub paths: PathsSection,
    pub traces: SyntheticTraceConfig,
    pub reward: RewardWeights,
    pub train: TrainConfig,
    pub shaping: ShapingConfig,
    pub baseline_stall_rate: Option<f64>,
    pub shaping_train_iterations: Option<usize>,
    pub translate_n: usize,
    pub translate_m: usize,
    pub translate_x_range: Option<(f64, f64)>,
    pub translate_size_range: Option<(f64, f64)>,
    pub resamples: usize,
    pub rate_safety: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        build(FileConfig::default()).expect("defaults are valid")
    }
}

impl RunConfig {
    pub fn split_seed(&self) -> u64 {
        self.seed
    }

    pub fn heuristic(&self) -> HeuristicPolicySpec {
        HeuristicPolicySpec::rate_based(self.rate_safety)
    }
}

fn build(f: FileConfig) -> Result<RunConfig> {
    let t = f.traces;
    let traces = SyntheticTraceConfig {
        count: t.count,
        ladder: t.ladder,
        chunk_duration: t.chunk_duration,
        process: BandwidthProcess {
            state_multipliers: t.state_multipliers,
            state_volatility: t.state_volatility,
            stay_probability: t.stay_probability,
        },
        watch_time: WatchTime {
            mean_chunks: t.mean_chunks,
            min_chunks: t.min_chunks,
            max_chunks: t.max_chunks,
        },
        profile: t.profile,
        base_range: t.base_range.map(|[a, b]| (a, b)),
        size_jitter: t.size_jitter,
        predictor_window: t.predictor_window,
        holdout_fraction: t.split_fraction,
    };
    traces.validate()?;

    let r = f.reward;
    let reward = RewardWeights {
        w_b: r.w_b,
        w_d: r.w_d,
        w_c: r.w_c,
        v_b: r.v_b,
        v_d: r.v_d,
    };
    reward.validate()?;

    let tr = f.train;
    let train = TrainConfig {
        learning_rate: tr.learning_rate,
        rollouts_per_trace: tr.rollouts_per_trace,
        traces_per_iteration: tr.traces_per_iteration,
        iterations: tr.iterations,
        entropy_weight: tr.entropy_weight,
        entropy_decay: tr.entropy_decay,
        entropy_decay_every: tr.entropy_decay_every,
        grad_clip: tr.grad_clip,
        baseline_mode: tr.baseline,
        hidden: tr.hidden,
        capacity: tr.capacity,
        eval_traces: tr.eval_traces,
        seed: derive_seed(f.seed, &[1]),
    };
    train.validate()?;

    let s = f.shaping;
    let shaping = ShapingConfig {
        initial_design: s.initial_design,
        batch_size: s.batch_size,
        rounds: s.rounds,
        constraint_ratio: s.constraint_ratio,
        baseline_stall_rate: s.baseline_stall_rate.unwrap_or(1.0),
        mc_samples: s.mc_samples,
        candidates: s.candidates,
        replicates: s.replicates,
        seed: derive_seed(f.seed, &[2]),
    };
    shaping.validate()?;
    if s.train_iterations == Some(0) {
        return Err(Error::config("train_iterations", "must be >= 1"));
    }

    let tl = f.translate;
    if tl.n < 3 {
        return Err(Error::config("n", "need at least 3 design points"));
    }
    if tl.m < 2 {
        return Err(Error::config("m", "need at least 2 probe sizes"));
    }
    let pair_ok = |p: Option<[f64; 2]>| p.is_none_or(|[a, b]| a > 0.0 && b > a && b.is_finite());
    if !pair_ok(tl.x_range) {
        return Err(Error::config("x_range", "need 0 < lo < hi"));
    }
    if !pair_ok(tl.size_range) {
        return Err(Error::config("size_range", "need 0 < lo < hi"));
    }

    if f.eval.resamples == 0 {
        return Err(Error::config("resamples", "must be >= 1"));
    }
    if !(f.eval.rate_safety > 0.0 && f.eval.rate_safety <= 1.0) {
        return Err(Error::config("rate_safety", "must be in (0, 1]"));
    }

    Ok(RunConfig {
        seed: f.seed,
        workers: f.workers,
        paths: f.paths,
        traces,
        reward,
        train,
        shaping,
        baseline_stall_rate: s.baseline_stall_rate,
        shaping_train_iterations: s.train_iterations,
        translate_n: tl.n,
        translate_m: tl.m,
        translate_x_range: tl.x_range.map(|[a, b]| (a, b)),
        translate_size_range: tl.size_range.map(|[a, b]| (a, b)),
        resamples: f.eval.resamples,
        rate_safety: f.eval.rate_safety,
    })
}

/// `section.key=value` assignments applied on top of the file.
pub type Overrides = Vec<(String, String)>;

fn apply_override(table: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| {
        Error::config(key, "override key must look like section.key")
    })?;
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(key, format!("`{p}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

pub fn parse_config_str(text: &str, overrides: &Overrides) -> Result<RunConfig> {
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| config_syntax_error(text, &e))?;
    if let Ok(seed) = std::env::var(SEED_ENV) {
        let seed: i64 = seed
            .trim()
            .parse()
            .map_err(|_| Error::config(SEED_ENV, format!("not an integer: `{seed}`")))?;
        table.insert("seed".into(), toml::Value::Integer(seed));
    }
    for (k, v) in overrides {
        apply_override(&mut table, k, v)?;
    }
    let file: FileConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| Error::config("config", e.message().to_string()))?;
    build(file)
}

fn config_syntax_error(text: &str, e: &toml::de::Error) -> Error {
    let line = e
        .span()
        .map(|s| text[..s.start.min(text.len())].lines().count().max(1))
        .unwrap_or(0);
    Error::Parse {
        line,
        msg: e.message().to_string(),
    }
}

pub fn parse_config(path: impl AsRef<Path>, overrides: &Overrides) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text, overrides)
}

// ---------------------------------------------------------------------------
// Command line

#[derive(Debug, Parser)]
#[command(name = "abrlab", about = "Adaptive-bitrate learning lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic trace file.
    GenTraces {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the neural policy with policy gradient.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        traces: Option<PathBuf>,
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Search reward weights with constrained Bayesian optimization.
    Shape {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the linear controller to a neural checkpoint.
    Translate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Score a policy on the holdout traces.
    Eval {
        /// Checkpoint (`#abrpolicy` or `#abrlinear`), or `heuristic:rate` / `heuristic:buffer`.
        #[arg(long)]
        policy: String,
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Paired bootstrap comparison of two metrics files (B relative to A).
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// Splits `--section.key=value` overrides out of the argument list.
fn split_overrides(args: Vec<OsString>) -> Result<(Vec<OsString>, Overrides)> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for a in args {
        let s = a.to_string_lossy();
        if let Some(body) = s.strip_prefix("--") {
            if let Some((k, v)) = body.split_once('=') {
                if k.contains('.') || k == "seed" || k == "workers" {
                    overrides.push((k.to_string(), v.to_string()));
                    continue;
                }
            }
        }
        rest.push(a);
    }
    Ok((rest, overrides))
}

fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig> {
    match path {
        Some(p) => parse_config(p, overrides),
        None => parse_config_str("", overrides),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn load_trace_set(path: &Path, cfg: &RunConfig) -> Result<TraceSet> {
    if !path.exists() {
        return Err(Error::Other(format!("missing traces: {}", path.display())));
    }
    trace::load_traces(path, cfg.traces.holdout_fraction, cfg.split_seed())
}

enum LoadedPolicy {
    Neural(NeuralPolicy),
    Linear(LinearPolicyParams),
    Heuristic(HeuristicPolicySpec),
}

impl LoadedPolicy {
    fn as_dyn(&self) -> &dyn AbrPolicy {
        match self {
            LoadedPolicy::Neural(p) => p,
            LoadedPolicy::Linear(p) => p,
            LoadedPolicy::Heuristic(p) => p,
        }
    }
}

fn load_any_policy(spec: &str, cfg: &RunConfig, encodings: usize) -> Result<LoadedPolicy> {
    match spec {
        "heuristic:rate" => return Ok(LoadedPolicy::Heuristic(cfg.heuristic())),
        "heuristic:buffer" => {
            return Ok(LoadedPolicy::Heuristic(HeuristicPolicySpec::buffer_based(
                encodings,
                5.0,
                (cfg.train.capacity - 10.0).max(1.0),
            )))
        }
        _ => {}
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(Error::Other(format!("missing policy checkpoint: {spec}")));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.starts_with("#abrlinear") {
        Ok(LoadedPolicy::Linear(policy::parse_linear(&text)?))
    } else {
        let (params, norm) = policy::parse_policy(&text)?;
        Ok(LoadedPolicy::Neural(NeuralPolicy::new(params, norm)))
    }
}

fn execute(cmd: Command, overrides: &Overrides) -> Result<String> {
    match cmd {
        Command::GenTraces { config, out } => {
            let cfg = load_config(Some(&config), overrides)?;
            let set = generate_synthetic(&cfg.traces, cfg.seed)?;
            let out = out.unwrap_or_else(|| cfg.paths.traces.clone());
            write_file(&out, &trace::format_traces(set.traces()))?;
            let chunks: usize = set.traces().iter().map(|t| t.len()).sum();
            Ok(format!(
                "gen-traces: {} sessions, {chunks} chunks -> {}",
                set.len(),
                out.display()
            ))
        }
        Command::Train {
            config,
            out,
            traces,
            curve,
        } => {
            let cfg = load_config(Some(&config), overrides)?;
            let traces_path = traces.unwrap_or_else(|| cfg.paths.traces.clone());
            let set = load_trace_set(&traces_path, &cfg)?;
            let trained = train::train(&set, &cfg.reward, &cfg.train)?;
            let out = out.unwrap_or_else(|| cfg.paths.policy.clone());
            write_file(&out, &policy::format_policy(&trained.params, &trained.norm))?;
            let curve_path = curve.unwrap_or_else(|| cfg.paths.curve.clone());
            write_file(&curve_path, &trained.curve.to_tsv())?;
            let last = trained.curve.points.last();
            Ok(format!(
                "train: {} iterations, final holdout reward {} (entropy {}) -> {}",
                cfg.train.iterations,
                last.map_or(f64::NAN, |p| p.mean_reward),
                last.map_or(f64::NAN, |p| p.entropy),
                out.display()
            ))
        }
        Command::Shape { config, out } => {
            let cfg = load_config(Some(&config), overrides)?;
            let set = load_trace_set(&cfg.paths.traces, &cfg)?;
            let mut shaping = cfg.shaping.clone();
            shaping.baseline_stall_rate = match cfg.baseline_stall_rate {
                Some(v) => v,
                None => {
                    let holdout = set.holdout();
                    let m = evaluate(&cfg.heuristic(), &holdout, cfg.train.capacity, cfg.seed)?;
                    let l = m.iter().map(|s| s.stall_rate).sum::<f64>() / m.len() as f64;
                    l.max(1e-6)
                }
            };
            let mut train_cfg = cfg.train.clone();
            if let Some(it) = cfg.shaping_train_iterations {
                train_cfg.iterations = it;
            }
            let result = optimize_rewards(&set, &SearchSpace::default(), &train_cfg, &shaping)?;
            let out = out.unwrap_or_else(|| cfg.paths.shaping_log.clone());
            write_file(&out, &result.to_log())?;
            let best = result.feasible_best.map(|i| &result.records[i]);
            Ok(format!(
                "shape: {} evaluations, {} on the Pareto set, l_s {}, feasible best q {} l {} -> {}",
                result.records.len(),
                result.pareto.len(),
                shaping.baseline_stall_rate,
                best.map_or(f64::NAN, |r| r.q_mean),
                best.map_or(f64::NAN, |r| r.l_mean),
                out.display()
            ))
        }
        Command::Translate { input, out, config } => {
            let cfg = load_config(config.as_deref(), overrides)?;
            if !input.exists() {
                return Err(Error::Other(format!(
                    "missing policy checkpoint: {}",
                    input.display()
                )));
            }
            let (params, norm) = policy::load_policy(&input)?;
            let tcfg = translate_config(&cfg, &norm, config.is_some())?;
            let (linear, report) = translate_policy(&params, &norm, &tcfg)?;
            write_file(&out, &policy::format_linear(&linear))?;
            Ok(format!("translate: {} -> {}", report.line(), out.display()))
        }
        Command::Eval {
            policy,
            traces,
            out,
            config,
        } => {
            let cfg = load_config(config.as_deref(), overrides)?;
            let set = load_trace_set(&traces, &cfg)?;
            let holdout = set.holdout();
            if holdout.is_empty() {
                return Err(Error::Other("holdout split is empty".into()));
            }
            let encodings = holdout[0].encodings();
            let pol = load_any_policy(&policy, &cfg, encodings)?;
            let metrics = evaluate(
                pol.as_dyn(),
                &holdout,
                cfg.train.capacity,
                derive_seed(cfg.seed, &[3]),
            )?;
            write_file(&out, &evalrep::format_metrics(&metrics))?;
            let n = metrics.len() as f64;
            Ok(format!(
                "eval: {} sessions, mean bitrate {} kbps, stall rate {} s/min -> {}",
                metrics.len(),
                metrics.iter().map(|m| m.mean_bitrate).sum::<f64>() / n,
                metrics.iter().map(|m| m.stall_rate).sum::<f64>() / n,
                out.display()
            ))
        }
        Command::Compare { a, b, out, config } => {
            let cfg = load_config(config.as_deref(), overrides)?;
            for p in [&a, &b] {
                if !p.exists() {
                    return Err(Error::Other(format!("missing metrics file: {}", p.display())));
                }
            }
            let ma = evalrep::load_metrics(&a)?;
            let mb = evalrep::load_metrics(&b)?;
            let report = compare(&ma, &mb, cfg.resamples, derive_seed(cfg.seed, &[4]))
                .map_err(|e| match e {
                    Error::LengthMismatch(m) => Error::Other(format!("pairing error: {m}")),
                    other => other,
                })?;
            write_file(&out, &report.to_tsv())?;
            let row = report
                .get(evalrep::Metric::MeanBitrate, evalrep::Group::All)
                .map_or(f64::NAN, |r| r.point);
            let stall = report
                .get(evalrep::Metric::StallRate, evalrep::Group::All)
                .map_or(f64::NAN, |r| r.point);
            Ok(format!(
                "compare: bitrate {:+.4}, stall rate {:+.4} (relative, B vs A) -> {}",
                row,
                stall,
                out.display()
            ))
        }
    }
}

fn translate_config(
    cfg: &RunConfig,
    norm: &policy::NormalizationSpec,
    have_config: bool,
) -> Result<TranslateConfig> {
    let seed = derive_seed(cfg.seed, &[5]);
    let from_traces = if have_config && cfg.paths.traces.exists() {
        let set = load_trace_set(&cfg.paths.traces, cfg)?;
        Some(TranslateConfig::from_traces(
            &set,
            norm.buffer,
            cfg.translate_n,
            cfg.translate_m,
            seed,
        ))
    } else {
        None
    };
    let mut t = from_traces.unwrap_or(TranslateConfig {
        n: cfg.translate_n,
        m: cfg.translate_m,
        x_range: (200.0, 20_000.0),
        o_range: (0.0, norm.buffer),
        size_range: (norm.size * 0.07, norm.size),
        seed,
    });
    if let Some(r) = cfg.translate_x_range {
        t.x_range = r;
    }
    if let Some(r) = cfg.translate_size_range {
        t.size_range = r;
    }
    t.validate()?;
    Ok(t)
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the one-line summary printed on success.
pub fn run<I, T>(args: I) -> Result<String>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let (rest, overrides) = split_overrides(args)?;
    let cli = Cli::try_parse_from(rest).map_err(|e| Error::Other(e.to_string()))?;
    let workers = match &cli.command {
        Command::GenTraces { config, .. }
        | Command::Train { config, .. }
        | Command::Shape { config, .. } => load_config(Some(config), &overrides)?.workers,
        _ => 0,
    };
    if workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Other(e.to_string()))?;
        return pool.install(|| execute(cli.command, &overrides));
    }
    execute(cli.command, &overrides)
}
