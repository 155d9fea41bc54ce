//! REINFORCE training of the shared priority network.
//!
//! Each iteration samples training traces, replays every sampled trace `K`
//! times with the current stochastic policy, and takes one gradient-ascent
//! step on
//!
//! ```text
//! (1/B) sum_traj sum_t  grad log pi(a_t | s_t) * (G_t - b_t)  +  beta * grad H(pi(. | s_t))
//! ```
//!
//! where `G_t` is the undiscounted return-to-go. With the input-dependent
//! baseline `b_t` is the mean return at step `t` over the `K` replays of the
//! same trace; with the time-based baseline it is the mean return at step `t`
//! over every trajectory in the batch that reached step `t`.
//!
//! Rollouts and per-trajectory gradients run in parallel; every rollout owns
//! a seed derived from `(seed, iteration, slot, replay)` and gradients are
//! summed in a fixed order, so results do not depend on the worker count.

use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::policy::{NeuralPolicy, NormalizationSpec, PolicyEval, PolicyParams, DEFAULT_HIDDEN};
use crate::seed::{child_rng, derive_seed};
use crate::simenv::{run_session, StepOutcome, Trajectory, DEFAULT_CAPACITY};
use crate::trace::{Trace, TraceSet};

/// kbps per Mbps; bitrates enter the reward in Mbps.
pub const BITRATE_UNIT: f64 = 1000.0;

const SAMPLE_STREAM: u64 = 0x5341_4d50;
const ROLLOUT_STREAM: u64 = 0x524f_4c4c;
const EVAL_STREAM: u64 = 0x4556_414c;

/// `r = w_b (b / unit)^v_b - w_d d^v_d + w_c [d > 0]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardWeights {
    pub w_b: f64,
    pub w_d: f64,
    pub w_c: f64,
    pub v_b: f64,
    pub v_d: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            w_b: 1.0,
            w_d: 4.3,
            w_c: -1.0,
            v_b: 1.0,
            v_d: 1.0,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.w_b, self.w_d, self.w_c, self.v_b, self.v_d];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("reward", "weights must be finite"));
        }
        if self.w_b < 0.0 {
            return Err(Error::config("w_b", "must be >= 0"));
        }
        if self.w_d < 0.0 {
            return Err(Error::config("w_d", "must be >= 0"));
        }
        if self.w_c > 0.0 {
            return Err(Error::config("w_c", "must be <= 0 (stall-count penalty)"));
        }
        if self.v_b <= 0.0 {
            return Err(Error::config("v_b", "must be > 0"));
        }
        if self.v_d <= 0.0 {
            return Err(Error::config("v_d", "must be > 0"));
        }
        Ok(())
    }

    pub fn to_array(self) -> [f64; 5] {
        [self.w_b, self.w_d, self.w_c, self.v_b, self.v_d]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        RewardWeights {
            w_b: a[0],
            w_d: a[1],
            w_c: a[2],
            v_b: a[3],
            v_d: a[4],
        }
    }
}

pub fn compute_reward(outcome: &StepOutcome, w: &RewardWeights, bitrate_unit: f64) -> f64 {
    let quality = w.w_b * (outcome.bitrate / bitrate_unit).powf(w.v_b);
    let stall = if outcome.stall_time > 0.0 {
        w.w_d * outcome.stall_time.powf(w.v_d)
    } else {
        0.0
    };
    let count = if outcome.stall_time > 0.0 { w.w_c } else { 0.0 };
    quality - stall + count
}

pub fn trajectory_rewards(traj: &Trajectory, w: &RewardWeights) -> Vec<f64> {
    traj.steps
        .iter()
        .map(|s| compute_reward(&s.outcome, w, BITRATE_UNIT))
        .collect()
}

pub fn total_reward(traj: &Trajectory, w: &RewardWeights) -> f64 {
    trajectory_rewards(traj, w).iter().sum()
}

/// Suffix sums: `out[t] = sum_{t' >= t} rewards[t']`.
pub fn returns(rewards: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (o, r) in out.iter_mut().zip(rewards).rev() {
        acc += r;
        *o = acc;
    }
    out
}

/// Per-step mean of `K >= 2` equal-length return sequences from replays of
/// one trace.
pub fn input_dependent_baseline(rollout_returns: &[Vec<f64>]) -> Result<Vec<f64>> {
    if rollout_returns.len() < 2 {
        return Err(Error::config(
            "rollouts_per_trace",
            "input-dependent baseline needs at least 2 replays",
        ));
    }
    let len = rollout_returns[0].len();
    if rollout_returns.iter().any(|r| r.len() != len) {
        return Err(Error::LengthMismatch(
            "replays of one trace must have equal length".into(),
        ));
    }
    let k = rollout_returns.len() as f64;
    Ok((0..len)
        .map(|t| rollout_returns.iter().map(|r| r[t]).sum::<f64>() / k)
        .collect())
}

/// Per-step mean over every sequence that reaches step `t`.
pub fn time_based_baseline(all_returns: &[&[f64]]) -> Vec<f64> {
    let len = all_returns.iter().map(|r| r.len()).max().unwrap_or(0);
    let mut sum = vec![0.0; len];
    let mut count = vec![0usize; len];
    for r in all_returns {
        for (t, v) in r.iter().enumerate() {
            sum[t] += v;
            count[t] += 1;
        }
    }
    sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineMode {
    InputDependent,
    TimeBased,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub rollouts_per_trace: usize,
    pub traces_per_iteration: usize,
    pub iterations: usize,
    pub entropy_weight: f64,
    /// Multiplier applied to the entropy weight every `entropy_decay_every` iterations.
    pub entropy_decay: f64,
    pub entropy_decay_every: usize,
    pub grad_clip: f64,
    pub baseline_mode: BaselineMode,
    pub hidden: Vec<usize>,
    pub capacity: f64,
    /// Number of holdout traces scored each iteration for the learning curve.
    pub eval_traces: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            rollouts_per_trace: 8,
            traces_per_iteration: 16,
            iterations: 2000,
            entropy_weight: 0.01,
            entropy_decay: 0.7,
            entropy_decay_every: 200,
            grad_clip: 10.0,
            baseline_mode: BaselineMode::InputDependent,
            hidden: DEFAULT_HIDDEN.to_vec(),
            capacity: DEFAULT_CAPACITY,
            eval_traces: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate", "must be > 0"));
        }
        if self.rollouts_per_trace == 0 {
            return Err(Error::config("rollouts_per_trace", "must be >= 1"));
        }
        if self.baseline_mode == BaselineMode::InputDependent && self.rollouts_per_trace < 2 {
            return Err(Error::config(
                "rollouts_per_trace",
                "must be >= 2 with the input-dependent baseline",
            ));
        }
        if self.traces_per_iteration == 0 {
            return Err(Error::config("traces_per_iteration", "must be >= 1"));
        }
        if !(self.entropy_weight.is_finite() && self.entropy_weight >= 0.0) {
            return Err(Error::config("entropy_weight", "must be >= 0"));
        }
        if !(self.entropy_decay > 0.0 && self.entropy_decay <= 1.0) {
            return Err(Error::config("entropy_decay", "must be in (0, 1]"));
        }
        if self.entropy_decay_every == 0 {
            return Err(Error::config("entropy_decay_every", "must be >= 1"));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::config("grad_clip", "must be > 0"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("hidden", "layer widths must be >= 1"));
        }
        if !(self.capacity.is_finite() && self.capacity > 0.0) {
            return Err(Error::config("capacity", "must be > 0"));
        }
        Ok(())
    }

    pub fn entropy_weight_at(&self, iteration: usize) -> f64 {
        self.entropy_weight
            * self
                .entropy_decay
                .powi((iteration / self.entropy_decay_every) as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub iteration: usize,
    pub mean_reward: f64,
    pub reward_std: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LearningCurve {
    pub points: Vec<CurvePoint>,
}

impl LearningCurve {
    /// `iter mean_reward reward_std entropy`, tab separated, with a header row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("iter\tmean_reward\treward_std\tentropy\n");
        for p in &self.points {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                p.iteration, p.mean_reward, p.reward_std, p.entropy
            );
        }
        out
    }
}

/// A trajectory with the advantage `G_t - b_t` of each of its steps.
#[derive(Debug, Clone, Copy)]
pub struct ScoredTrajectory<'a> {
    pub trajectory: &'a Trajectory,
    pub advantages: &'a [f64],
}

/// Batch-averaged ascent direction (before clipping).
pub fn batch_gradient(
    params: &PolicyParams,
    norm: &NormalizationSpec,
    batch: &[ScoredTrajectory<'_>],
    entropy_weight: f64,
) -> Vec<f64> {
    let per_traj: Vec<Vec<f64>> = batch
        .par_iter()
        .map(|st| {
            let mut g = vec![0.0; params.len()];
            for (step, &adv) in st.trajectory.steps.iter().zip(st.advantages) {
                if step.observation.encodings() < 2 {
                    continue;
                }
                let eval = PolicyEval::new(params, norm, &step.observation);
                let mut dq = eval.log_prob_dq(step.action);
                for d in &mut dq {
                    *d *= adv;
                }
                if entropy_weight > 0.0 {
                    for (d, e) in dq.iter_mut().zip(eval.entropy_dq()) {
                        *d += entropy_weight * e;
                    }
                }
                eval.accumulate(&dq, &mut g);
            }
            g
        })
        .collect();
    let mut grad = vec![0.0; params.len()];
    for g in &per_traj {
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += v;
        }
    }
    let scale = 1.0 / batch.len().max(1) as f64;
    for v in &mut grad {
        *v *= scale;
    }
    grad
}

/// One clipped gradient-ascent step. `iteration` is only used for diagnostics.
pub fn policy_gradient_update(
    params: &PolicyParams,
    norm: &NormalizationSpec,
    batch: &[ScoredTrajectory<'_>],
    config: &TrainConfig,
    entropy_weight: f64,
    iteration: usize,
) -> Result<PolicyParams> {
    let mut grad = batch_gradient(params, norm, batch, entropy_weight);
    let norm2 = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if !norm2.is_finite() {
        return Err(Error::NonFiniteGradient {
            iteration,
            norm: norm2,
        });
    }
    if norm2 > config.grad_clip {
        let s = config.grad_clip / norm2;
        for g in &mut grad {
            *g *= s;
        }
    }
    let mut next = params.clone();
    for (t, g) in next.theta_mut().iter_mut().zip(&grad) {
        *t += config.learning_rate * g;
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedPolicy {
    pub params: PolicyParams,
    pub norm: NormalizationSpec,
    pub curve: LearningCurve,
}

impl TrainedPolicy {
    pub fn policy(&self) -> NeuralPolicy {
        NeuralPolicy::new(self.params.clone(), self.norm)
    }
}

/// Scores the current policy on fixed holdout traces with fixed seeds.
fn curve_point(
    policy: &NeuralPolicy,
    traces: &[&Trace],
    w: &RewardWeights,
    config: &TrainConfig,
    iteration: usize,
) -> Result<CurvePoint> {
    let results: Vec<(f64, f64, usize)> = traces
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let mut rng = child_rng(config.seed, &[EVAL_STREAM, i as u64]);
            let traj = run_session(policy, t, config.capacity, &mut rng)?;
            let ent: f64 = traj
                .steps
                .iter()
                .map(|s| crate::policy::entropy(&policy.distribution(&s.observation)))
                .sum();
            Ok((total_reward(&traj, w), ent, traj.len()))
        })
        .collect::<Result<_>>()?;
    let n = results.len().max(1) as f64;
    let mean = results.iter().map(|r| r.0).sum::<f64>() / n;
    let var = results.iter().map(|r| (r.0 - mean).powi(2)).sum::<f64>() / n;
    let steps: usize = results.iter().map(|r| r.2).sum();
    let entropy = results.iter().map(|r| r.1).sum::<f64>() / steps.max(1) as f64;
    Ok(CurvePoint {
        iteration,
        mean_reward: mean,
        reward_std: var.sqrt(),
        entropy,
    })
}

/// Full training loop. Starts from a fresh seeded initialization.
pub fn train(traces: &TraceSet, w: &RewardWeights, config: &TrainConfig) -> Result<TrainedPolicy> {
    let params = PolicyParams::init(&config.hidden, derive_seed(config.seed, &[0x494e_4954]))?;
    train_from(traces, w, config, params)
}

pub fn train_from(
    traces: &TraceSet,
    w: &RewardWeights,
    config: &TrainConfig,
    mut params: PolicyParams,
) -> Result<TrainedPolicy> {
    config.validate()?;
    w.validate()?;
    let train_set = traces.train();
    if train_set.is_empty() {
        return Err(Error::Other("train split is empty".into()));
    }
    let (_, max_size) = traces.size_range();
    let norm = NormalizationSpec::standard(config.capacity, max_size)?;
    let holdout = traces.holdout();
    let eval_set: Vec<&Trace> = if holdout.is_empty() {
        train_set.iter().copied().take(config.eval_traces).collect()
    } else {
        holdout.iter().copied().take(config.eval_traces).collect()
    };

    let k = config.rollouts_per_trace;
    let mut curve = LearningCurve::default();
    for iteration in 0..config.iterations {
        let mut pick = child_rng(config.seed, &[SAMPLE_STREAM, iteration as u64]);
        let chosen: Vec<&Trace> = (0..config.traces_per_iteration)
            .map(|_| train_set[pick.random_range(0..train_set.len())])
            .collect();

        let policy = NeuralPolicy::new(params.clone(), norm);
        let jobs: Vec<(usize, usize)> = (0..chosen.len())
            .flat_map(|slot| (0..k).map(move |r| (slot, r)))
            .collect();
        let trajectories: Vec<Trajectory> = jobs
            .par_iter()
            .map(|&(slot, r)| {
                let mut rng = child_rng(
                    config.seed,
                    &[ROLLOUT_STREAM, iteration as u64, slot as u64, r as u64],
                );
                run_session(&policy, chosen[slot], config.capacity, &mut rng)
            })
            .collect::<Result<_>>()?;

        let rets: Vec<Vec<f64>> = trajectories
            .iter()
            .map(|t| returns(&trajectory_rewards(t, w)))
            .collect();
        let advantages: Vec<Vec<f64>> = match config.baseline_mode {
            BaselineMode::InputDependent => {
                let mut out = Vec::with_capacity(rets.len());
                for group in rets.chunks(k) {
                    let b = input_dependent_baseline(group)?;
                    for r in group {
                        out.push(r.iter().zip(&b).map(|(g, b)| g - b).collect());
                    }
                }
                out
            }
            BaselineMode::TimeBased => {
                let refs: Vec<&[f64]> = rets.iter().map(Vec::as_slice).collect();
                let b = time_based_baseline(&refs);
                rets.iter()
                    .map(|r| r.iter().zip(&b).map(|(g, b)| g - b).collect())
                    .collect()
            }
        };

        let batch: Vec<ScoredTrajectory<'_>> = trajectories
            .iter()
            .zip(&advantages)
            .map(|(t, a)| ScoredTrajectory {
                trajectory: t,
                advantages: a,
            })
            .collect();
        params = policy_gradient_update(
            &params,
            &norm,
            &batch,
            config,
            config.entropy_weight_at(iteration),
            iteration,
        )?;

        if !eval_set.is_empty() {
            let policy = NeuralPolicy::new(params.clone(), norm);
            curve
                .points
                .push(curve_point(&policy, &eval_set, w, config, iteration)?);
        }
    }
    Ok(TrainedPolicy {
        params,
        norm,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(bitrate: f64, stall: f64) -> StepOutcome {
        StepOutcome {
            bitrate,
            download_time: 1.0,
            stall_time: stall,
            stalled: stall > 0.0,
            startup_delay: 0.0,
            capacity_wait: 0.0,
            buffer_after: 2.0,
        }
    }

    #[test]
    fn reward_examples() {
        let w = RewardWeights::from_array([1.0, 0.0, 0.0, 1.0, 1.0]);
        assert!((compute_reward(&outcome(2500.0, 0.0), &w, BITRATE_UNIT) - 2.5).abs() < 1e-12);
        let w = RewardWeights::from_array([1.0, 2.0, -0.5, 1.0, 1.0]);
        assert!((compute_reward(&outcome(1000.0, 1.0), &w, BITRATE_UNIT) + 1.5).abs() < 1e-12);
        let w = RewardWeights::from_array([0.0, 3.0, -7.0, 1.0, 0.5]);
        assert_eq!(compute_reward(&outcome(1000.0, 0.0), &w, BITRATE_UNIT), 0.0);
    }

    #[test]
    fn reward_weight_validation() {
        assert!(RewardWeights::default().validate().is_ok());
        assert!(RewardWeights::from_array([1.0, 1.0, 0.5, 1.0, 1.0]).validate().is_err());
        assert!(RewardWeights::from_array([1.0, 1.0, -0.5, 0.0, 1.0]).validate().is_err());
    }

    #[test]
    fn suffix_sums() {
        assert_eq!(returns(&[1.0, 1.0, 1.0]), vec![3.0, 2.0, 1.0]);
        assert_eq!(returns(&[-4.0]), vec![-4.0]);
        assert_eq!(returns(&[0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn input_dependent_examples() {
        let same = vec![vec![3.0, 1.0], vec![3.0, 1.0], vec![3.0, 1.0]];
        let b = input_dependent_baseline(&same).unwrap();
        assert_eq!(b, vec![3.0, 1.0]);
        let b = input_dependent_baseline(&[vec![1.0], vec![2.0]]).unwrap();
        assert_eq!(b, vec![1.5]);
        assert!(input_dependent_baseline(&[vec![1.0]]).is_err());
        assert!(input_dependent_baseline(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn time_based_handles_ragged() {
        let a = [1.0, 2.0, 3.0];
        let b = [3.0];
        assert_eq!(time_based_baseline(&[&a, &b]), vec![2.0, 2.0, 3.0]);
    }

    #[test]
    fn entropy_schedule() {
        let c = TrainConfig::default();
        assert_eq!(c.entropy_weight_at(0), 0.01);
        assert_eq!(c.entropy_weight_at(199), 0.01);
        assert!((c.entropy_weight_at(200) - 0.007).abs() < 1e-15);
    }

    #[test]
    fn config_validation_names_fields() {
        let mut c = TrainConfig::default();
        c.learning_rate = -1.0;
        let e = c.validate().unwrap_err().to_string();
        assert!(e.contains("learning_rate"), "{e}");
        let mut c = TrainConfig::default();
        c.rollouts_per_trace = 1;
        assert!(c.validate().is_err());
        c.baseline_mode = BaselineMode::TimeBased;
        assert!(c.validate().is_ok());
    }
}
