//! Reward shaping by constrained Bayesian optimization.
//!
//! The train-then-evaluate pipeline is treated as a noisy black box
//! `w -> (q, l)`: mean selected bitrate and stall rate on holdout traces.
//! Both outputs get their own Gaussian-process surrogate over the unit-cube
//! image of the reward-weight search space. New weights are chosen by Noisy
//! Expected Improvement: draw joint posterior samples of `(q, l)` at the
//! observed points, take the best sampled `q` among points whose sampled `l`
//! meets `l <= C * l_s` as that sample's incumbent, and average the
//! closed-form EI of each candidate over samples, weighted by the candidate's
//! posterior probability of feasibility.

use std::fmt::Write as _;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::evalrep::evaluate;
use crate::policy::NeuralPolicy;
use crate::seed::{derive_seed, rng_from, SimRng};
use crate::train::{train, RewardWeights, TrainConfig};
use crate::trace::TraceSet;

// ---------------------------------------------------------------------------
// Search space

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dim {
    pub lo: f64,
    pub hi: f64,
    pub log: bool,
}

impl Dim {
    pub fn linear(lo: f64, hi: f64) -> Self {
        Dim { lo, hi, log: false }
    }

    pub fn log(lo: f64, hi: f64) -> Self {
        Dim { lo, hi, log: true }
    }

    fn to_unit(self, v: f64) -> f64 {
        let u = if self.log {
            (v.ln() - self.lo.ln()) / (self.hi.ln() - self.lo.ln())
        } else {
            (v - self.lo) / (self.hi - self.lo)
        };
        u.clamp(0.0, 1.0)
    }

    fn from_unit(self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let v = if self.log {
            (self.lo.ln() + u * (self.hi.ln() - self.lo.ln())).exp()
        } else {
            self.lo + u * (self.hi - self.lo)
        };
        v.clamp(self.lo, self.hi)
    }
}

/// Bounds for `(w_b, w_d, w_c, v_b, v_d)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchSpace {
    pub dims: [Dim; 5],
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            dims: [
                Dim::log(0.1, 10.0),
                Dim::log(0.1, 50.0),
                Dim::linear(-5.0, 0.0),
                Dim::linear(0.5, 2.0),
                Dim::linear(0.5, 2.0),
            ],
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        const NAMES: [&str; 5] = ["w_b", "w_d", "w_c", "v_b", "v_d"];
        for (d, name) in self.dims.iter().zip(NAMES) {
            if !(d.lo < d.hi && d.lo.is_finite() && d.hi.is_finite()) {
                return Err(Error::config(name, "need lower < upper"));
            }
            if d.log && d.lo <= 0.0 {
                return Err(Error::config(name, "log-scale bounds must be > 0"));
            }
        }
        if self.dims[1].lo < 0.0 || self.dims[0].lo < 0.0 {
            return Err(Error::config("w_b", "w_b and w_d bounds must be >= 0"));
        }
        if self.dims[2].hi > 0.0 {
            return Err(Error::config("w_c", "upper bound must be <= 0"));
        }
        if self.dims[3].lo <= 0.0 || self.dims[4].lo <= 0.0 {
            return Err(Error::config("v_b", "exponent bounds must be > 0"));
        }
        Ok(())
    }

    pub fn to_unit(&self, w: &RewardWeights) -> Vec<f64> {
        self.dims
            .iter()
            .zip(w.to_array())
            .map(|(d, v)| d.to_unit(v))
            .collect()
    }

    pub fn from_unit(&self, u: &[f64]) -> RewardWeights {
        let mut a = [0.0; 5];
        for (i, d) in self.dims.iter().enumerate() {
            a[i] = d.from_unit(u[i]);
        }
        RewardWeights::from_array(a)
    }

    pub fn contains(&self, w: &RewardWeights) -> bool {
        self.dims
            .iter()
            .zip(w.to_array())
            .all(|(d, v)| v >= d.lo && v <= d.hi)
    }
}

// ---------------------------------------------------------------------------
// Gaussian process

/// One noisy observation for the surrogate. `x` lives in the unit cube.
#[derive(Debug, Clone, PartialEq)]
pub struct GpPoint {
    pub x: Vec<f64>,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpHyper {
    /// Output variance of the standardized targets.
    pub signal_var: f64,
    pub lengthscales: Vec<f64>,
    /// Variance added to every point's `stderr^2` (standardized units).
    pub noise_floor: f64,
}

pub const NOISE_FLOOR: f64 = 1e-10;
const SIGNAL_BOUNDS: (f64, f64) = (0.05, 20.0);
const LENGTH_BOUNDS: (f64, f64) = (0.02, 10.0);

fn matern52(a: &[f64], b: &[f64], h: &GpHyper) -> f64 {
    let r2: f64 = a
        .iter()
        .zip(b)
        .zip(&h.lengthscales)
        .map(|((x, y), l)| ((x - y) / l).powi(2))
        .sum();
    let s5r = (5.0 * r2).sqrt();
    h.signal_var * (1.0 + s5r + 5.0 * r2 / 3.0) * (-s5r).exp()
}

/// Cholesky of `k + jitter * I`, escalating the jitter until it factors.
fn robust_cholesky(k: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = Cholesky::new(k.clone()) {
        return Ok((c, 0.0));
    }
    let scale = (k.trace() / k.nrows().max(1) as f64).max(1e-300);
    let mut jitter = 1e-12 * scale;
    while jitter <= 1e-2 * scale {
        let mut kj = k.clone();
        for i in 0..kj.nrows() {
            kj[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(kj) {
            return Ok((c, jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::SingularCovariance { jitter })
}

#[derive(Debug, Clone)]
pub struct GpModel {
    hyper: GpHyper,
    data: Vec<GpPoint>,
    x: Vec<Vec<f64>>,
    y_mean: f64,
    y_scale: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    lml: f64,
}

impl GpModel {
    /// Fits hyperparameters by maximizing the log marginal likelihood with a
    /// few Nelder-Mead restarts in log-parameter space.
    pub fn fit(points: &[GpPoint], seed: u64) -> Result<Self> {
        let dim = check_points(points)?;
        let mut rng = rng_from(seed);
        let (ls_lo, ls_hi) = (LENGTH_BOUNDS.0.ln(), LENGTH_BOUNDS.1.ln());
        let (sv_lo, sv_hi) = (SIGNAL_BOUNDS.0.ln(), SIGNAL_BOUNDS.1.ln());
        let unpack = |v: &[f64]| GpHyper {
            signal_var: v[0].clamp(sv_lo, sv_hi).exp(),
            lengthscales: v[1..].iter().map(|l| l.clamp(ls_lo, ls_hi).exp()).collect(),
            noise_floor: NOISE_FLOOR,
        };
        let objective = |v: &[f64]| match Self::with_hyper(points, unpack(v)) {
            Ok(m) => -m.lml,
            Err(_) => f64::INFINITY,
        };
        let mut starts = vec![{
            let mut v = vec![0.0; dim + 1];
            for l in &mut v[1..] {
                *l = 0.3f64.ln();
            }
            v
        }];
        for _ in 0..4 {
            let mut v = vec![rng.random_range(sv_lo..sv_hi)];
            v.extend((0..dim).map(|_| rng.random_range((0.05f64).ln()..(2.0f64).ln())));
            starts.push(v);
        }
        let mut best: Option<(Vec<f64>, f64)> = None;
        for s in starts {
            let (v, f) = nelder_mead(&objective, &s, 0.5, 150 * (dim + 1));
            if f.is_finite() && best.as_ref().is_none_or(|(_, bf)| f < *bf) {
                best = Some((v, f));
            }
        }
        let (v, _) = best.ok_or(Error::SingularCovariance { jitter: f64::NAN })?;
        Self::with_hyper(points, unpack(&v))
    }

    pub fn with_hyper(points: &[GpPoint], hyper: GpHyper) -> Result<Self> {
        Self::build(points, hyper, None)
    }

    /// `scaling` pins the target standardization; otherwise it comes from the data.
    fn build(points: &[GpPoint], hyper: GpHyper, scaling: Option<(f64, f64)>) -> Result<Self> {
        let dim = check_points(points)?;
        if hyper.lengthscales.len() != dim {
            return Err(Error::LengthMismatch(format!(
                "{} lengthscales for {dim}-dimensional inputs",
                hyper.lengthscales.len()
            )));
        }
        let n = points.len();
        let (y_mean, y_scale) = scaling.unwrap_or_else(|| {
            let mean = points.iter().map(|p| p.mean).sum::<f64>() / n as f64;
            let var = points.iter().map(|p| (p.mean - mean).powi(2)).sum::<f64>() / n as f64;
            let scale = if var.sqrt() > 1e-12 * mean.abs().max(1.0) {
                var.sqrt()
            } else {
                1.0
            };
            (mean, scale)
        });
        let x: Vec<Vec<f64>> = points.iter().map(|p| p.x.clone()).collect();
        let noise: Vec<f64> = points
            .iter()
            .map(|p| (p.stderr / y_scale).powi(2) + hyper.noise_floor)
            .collect();
        let mut k = DMatrix::from_fn(n, n, |i, j| matern52(&x[i], &x[j], &hyper));
        for i in 0..n {
            k[(i, i)] += noise[i];
        }
        let (chol, _) = robust_cholesky(&k)?;
        let y = DVector::from_iterator(n, points.iter().map(|p| (p.mean - y_mean) / y_scale));
        let alpha = chol.solve(&y);
        let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
        let lml = -0.5 * y.dot(&alpha) - log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        Ok(GpModel {
            hyper,
            data: points.to_vec(),
            x,
            y_mean,
            y_scale,
            chol,
            alpha,
            lml,
        })
    }

    pub fn hyper(&self) -> &GpHyper {
        &self.hyper
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.lml
    }

    fn cross(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.x.len(),
            self.x.iter().map(|xi| matern52(x, xi, &self.hyper)),
        )
    }

    /// Posterior mean and variance of the latent function at `x`.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let ks = self.cross(x);
        let mean = ks.dot(&self.alpha);
        let v = self.chol.l_dirty().solve_lower_triangular(&ks);
        // `l_dirty` may hold garbage above the diagonal; the solve reads only
        // the lower triangle.
        let v = v.unwrap_or_else(|| DVector::zeros(self.x.len()));
        let var = (self.hyper.signal_var - v.dot(&v)).max(0.0);
        (
            self.y_mean + self.y_scale * mean,
            var * self.y_scale * self.y_scale,
        )
    }

    /// Joint posterior mean and covariance of the latent function at the
    /// training inputs.
    pub fn joint_posterior(&self) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.x.len();
        let kf = DMatrix::from_fn(n, n, |i, j| matern52(&self.x[i], &self.x[j], &self.hyper));
        let mean = &kf * &self.alpha;
        let l = self.chol.l();
        let v = l
            .solve_lower_triangular(&kf)
            .unwrap_or_else(|| DMatrix::zeros(n, n));
        let mut cov = &kf - v.transpose() * &v;
        cov = (&cov + cov.transpose()) * 0.5;
        let s2 = self.y_scale * self.y_scale;
        (
            mean.map(|m| self.y_mean + self.y_scale * m),
            cov.map(|c| c * s2),
        )
    }

    /// Same hyperparameters and target scaling, one more noiseless point.
    pub fn fantasize(&self, x: &[f64], value: f64) -> Result<Self> {
        let mut pts = self.data.clone();
        pts.push(GpPoint {
            x: x.to_vec(),
            mean: value,
            stderr: 0.0,
        });
        Self::build(&pts, self.hyper.clone(), Some((self.y_mean, self.y_scale)))
    }
}

fn check_points(points: &[GpPoint]) -> Result<usize> {
    if points.len() < 2 {
        return Err(Error::Other("GP needs at least 2 points".into()));
    }
    let dim = points[0].x.len();
    if dim == 0 || points.iter().any(|p| p.x.len() != dim) {
        return Err(Error::LengthMismatch("GP inputs must share one dimension".into()));
    }
    if points
        .iter()
        .any(|p| !p.mean.is_finite() || !(p.stderr.is_finite() && p.stderr >= 0.0))
    {
        return Err(Error::Other("GP targets must be finite with stderr >= 0".into()));
    }
    Ok(dim)
}

/// Derivative-free simplex minimization.
fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], step: f64, max_iter: usize) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step;
        let fx = f(&x);
        simplex.push((x, fx));
    }
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[n].1 - simplex[0].1;
        if spread.abs() < 1e-9 * (1.0 + simplex[0].1.abs()) {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|p| p.0[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };
        let xr = along(-1.0);
        let fr = f(&xr);
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = f(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let xc = if fr < simplex[n].1 { along(-0.5) } else { along(0.5) };
            let fc = f(&xc);
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for p in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = best.iter().zip(&p.0).map(|(b, v)| b + 0.5 * (v - b)).collect();
                    let fx = f(&x);
                    *p = (x, fx);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0)
}

// ---------------------------------------------------------------------------
// Acquisition

fn std_normal() -> Normal {
    Normal::standard()
}

/// `E[max(0, f - f_star)]` for `f ~ N(mean, sd^2)`.
pub fn ei_closed_form(mean: f64, sd: f64, f_star: f64) -> f64 {
    let diff = mean - f_star;
    if sd <= 1e-12 * (1.0 + diff.abs()) {
        return diff.max(0.0);
    }
    let z = diff / sd;
    let n = std_normal();
    (diff * n.cdf(z) + sd * n.pdf(z)).max(0.0)
}

pub fn expected_improvement(gp: &GpModel, x: &[f64], f_star: f64) -> f64 {
    let (m, v) = gp.predict(x);
    ei_closed_form(m, v.sqrt(), f_star)
}

/// `P(l(x) <= threshold)` under the posterior.
pub fn feasibility_probability(gp: &GpModel, x: &[f64], threshold: f64) -> f64 {
    let (m, v) = gp.predict(x);
    let sd = v.sqrt();
    if sd <= 1e-12 * (1.0 + m.abs()) {
        return if m <= threshold { 1.0 } else { 0.0 };
    }
    std_normal().cdf((threshold - m) / sd)
}

fn first_primes(n: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(n);
    let mut c = 2u64;
    while out.len() < n {
        if out.iter().take_while(|&&p| p * p <= c).all(|&p| !c.is_multiple_of(p)) {
            out.push(c);
        }
        c += 1;
    }
    out
}

/// Scrambled Halton points in `(0, 1)^dim`: each coordinate uses its own
/// prime base and a seeded digit permutation that fixes 0. Point indices
/// start at 1 so no coordinate is exactly 0.
pub fn halton(count: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let primes = first_primes(dim);
    let mut rng = rng_from(seed);
    let perms: Vec<Vec<u64>> = primes
        .iter()
        .map(|&p| {
            let mut tail: Vec<u64> = (1..p).collect();
            tail.shuffle(&mut rng);
            let mut perm = vec![0];
            perm.extend(tail);
            perm
        })
        .collect();
    (1..=count as u64)
        .map(|i| {
            primes
                .iter()
                .zip(&perms)
                .map(|(&p, perm)| {
                    let (mut k, mut f, mut r) = (i, 1.0 / p as f64, 0.0);
                    while k > 0 {
                        r += f * perm[(k % p) as usize] as f64;
                        k /= p;
                        f /= p as f64;
                    }
                    r
                })
                .collect()
        })
        .collect()
}

/// Quasi-random standard normal vectors by inverse-CDF transform of
/// scrambled Halton points.
pub fn quasi_normal(count: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = std_normal();
    halton(count, dim, seed)
        .into_iter()
        .map(|u| u.into_iter().map(|v| n.inverse_cdf(v.clamp(1e-12, 1.0 - 1e-12))).collect())
        .collect()
}

/// `mean + A z` with `A A^T = cov`, robust to singular covariance.
struct JointSampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl JointSampler {
    fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        let eig = SymmetricEigen::new(cov);
        let sqrt_vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        let factor = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals);
        JointSampler { mean, factor }
    }

    fn sample(&self, z: &[f64]) -> DVector<f64> {
        &self.mean + &self.factor * DVector::from_column_slice(z)
    }
}

/// Per posterior sample, the incumbent value the candidates must beat.
fn nei_incumbents(gp_q: &GpModel, gp_l: &GpModel, threshold: f64, samples: usize, seed: u64) -> Result<Vec<f64>> {
    if samples == 0 {
        return Err(Error::config("mc_samples", "must be >= 1"));
    }
    if gp_q.inputs() != gp_l.inputs() {
        return Err(Error::LengthMismatch(
            "quality and stall surrogates must share observed points".into(),
        ));
    }
    let n = gp_q.inputs().len();
    let (mq, cq) = gp_q.joint_posterior();
    let (ml, cl) = gp_l.joint_posterior();
    let sq = JointSampler::new(mq, cq);
    let sl = JointSampler::new(ml, cl);
    let draws = quasi_normal(samples, 2 * n, seed);
    Ok(draws
        .iter()
        .map(|z| {
            let q = sq.sample(&z[..n]);
            let l = sl.sample(&z[n..]);
            let feasible_best = (0..n)
                .filter(|&i| l[i] <= threshold)
                .map(|i| q[i])
                .fold(f64::NEG_INFINITY, f64::max);
            if feasible_best.is_finite() {
                feasible_best
            } else {
                // Nothing feasible in this sample: the least-stalling point is the incumbent.
                let i = (0..n).min_by(|&a, &b| l[a].total_cmp(&l[b])).unwrap();
                q[i]
            }
        })
        .collect())
}

fn nei_with_incumbents(gp_q: &GpModel, gp_l: &GpModel, x: &[f64], threshold: f64, incumbents: &[f64]) -> f64 {
    let pof = feasibility_probability(gp_l, x, threshold);
    if pof == 0.0 {
        return 0.0;
    }
    let (m, v) = gp_q.predict(x);
    let sd = v.sqrt();
    let ei = incumbents.iter().map(|&f| ei_closed_form(m, sd, f)).sum::<f64>()
        / incumbents.len() as f64;
    ei * pof
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapingConfig {
    pub initial_design: usize,
    pub batch_size: usize,
    pub rounds: usize,
    pub constraint_ratio: f64,
    /// Stall rate of the comparison policy, `l_s`.
    pub baseline_stall_rate: f64,
    pub mc_samples: usize,
    pub candidates: usize,
    pub replicates: usize,
    pub seed: u64,
}

impl Default for ShapingConfig {
    fn default() -> Self {
        ShapingConfig {
            initial_design: 64,
            batch_size: 8,
            rounds: 5,
            constraint_ratio: 1.05,
            baseline_stall_rate: 1.0,
            mc_samples: 32,
            candidates: 512,
            replicates: 3,
            seed: 0,
        }
    }
}

impl ShapingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.initial_design < 2 {
            return Err(Error::config("initial_design", "must be >= 2"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        if !(self.constraint_ratio > 0.0) {
            return Err(Error::config("constraint_ratio", "must be > 0"));
        }
        if !(self.baseline_stall_rate > 0.0 && self.baseline_stall_rate.is_finite()) {
            return Err(Error::config("baseline_stall_rate", "must be > 0"));
        }
        if self.mc_samples == 0 {
            return Err(Error::config("mc_samples", "must be >= 1"));
        }
        if self.candidates == 0 {
            return Err(Error::config("candidates", "must be >= 1"));
        }
        if self.replicates < 2 {
            return Err(Error::config("replicates", "must be >= 2 so stderr is defined"));
        }
        Ok(())
    }

    pub fn threshold(&self) -> f64 {
        self.constraint_ratio * self.baseline_stall_rate
    }
}

/// NEI score of each candidate (unit-cube coordinates).
pub fn nei_acquisition(
    gp_q: &GpModel,
    gp_l: &GpModel,
    candidates: &[Vec<f64>],
    config: &ShapingConfig,
) -> Result<Vec<f64>> {
    let threshold = config.threshold();
    let inc = nei_incumbents(gp_q, gp_l, threshold, config.mc_samples, derive_seed(config.seed, &[0x4e_4549]))?;
    Ok(candidates
        .par_iter()
        .map(|x| nei_with_incumbents(gp_q, gp_l, x, threshold, &inc))
        .collect())
}

/// Greedy batch: maximize NEI over quasi-random candidates plus perturbations
/// of the current feasible best, refine by pattern search, then fantasize the
/// pick at its posterior mean before choosing the next one.
pub fn propose_batch(gp_q: &GpModel, gp_l: &GpModel, config: &ShapingConfig, round: usize) -> Result<Vec<Vec<f64>>> {
    let dim = gp_q.inputs()[0].len();
    let threshold = config.threshold();
    let mut gq = gp_q.clone();
    let mut gl = gp_l.clone();
    let mut rng = rng_from(derive_seed(config.seed, &[0x5052_4f50, round as u64]));
    let base_pool = halton(config.candidates, dim, derive_seed(config.seed, &[0x4841_4c54, round as u64]));
    let mut chosen: Vec<Vec<f64>> = Vec::with_capacity(config.batch_size);

    for pick in 0..config.batch_size {
        let inc = nei_incumbents(
            &gq,
            &gl,
            threshold,
            config.mc_samples,
            derive_seed(config.seed, &[0x4e_4549, round as u64, pick as u64]),
        )?;
        let score = |x: &[f64]| nei_with_incumbents(&gq, &gl, x, threshold, &inc);

        let anchor = feasible_best_input(&gq, &gl, threshold);
        let mut pool = base_pool.clone();
        for _ in 0..64 {
            pool.push(
                anchor
                    .iter()
                    .map(|a| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        (a + 0.05 * z).clamp(0.0, 1.0)
                    })
                    .collect(),
            );
        }
        let far_enough = |x: &[f64]| chosen.iter().all(|c| dist2(c, x) > 1e-12);
        let scores: Vec<f64> = pool.par_iter().map(|x| score(x)).collect();
        let (mut best, mut best_score) = (None, f64::NEG_INFINITY);
        for (x, s) in pool.iter().zip(&scores) {
            if *s > best_score && far_enough(x) {
                best = Some(x.clone());
                best_score = *s;
            }
        }
        let mut x = best.ok_or_else(|| Error::Other("no admissible candidate".into()))?;

        let mut step = 0.05;
        for _ in 0..4 {
            let mut improved = true;
            while improved {
                improved = false;
                for d in 0..dim {
                    for dir in [-1.0, 1.0] {
                        let mut y = x.clone();
                        y[d] = (y[d] + dir * step).clamp(0.0, 1.0);
                        let s = score(&y);
                        if s > best_score + 1e-15 && far_enough(&y) {
                            x = y;
                            best_score = s;
                            improved = true;
                        }
                    }
                }
            }
            step *= 0.5;
        }

        let (mq, _) = gq.predict(&x);
        let (ml, _) = gl.predict(&x);
        gq = gq.fantasize(&x, mq)?;
        gl = gl.fantasize(&x, ml)?;
        chosen.push(x);
    }
    Ok(chosen)
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Observed input with the best posterior-mean quality among posterior-mean
/// feasible points, else the one with the lowest posterior-mean stall.
fn feasible_best_input(gp_q: &GpModel, gp_l: &GpModel, threshold: f64) -> Vec<f64> {
    let xs = gp_q.inputs();
    let pm: Vec<(f64, f64)> = xs.iter().map(|x| (gp_q.predict(x).0, gp_l.predict(x).0)).collect();
    let feasible = (0..xs.len())
        .filter(|&i| pm[i].1 <= threshold)
        .max_by(|&a, &b| pm[a].0.total_cmp(&pm[b].0));
    let i = feasible.unwrap_or_else(|| {
        (0..xs.len())
            .min_by(|&a, &b| pm[a].1.total_cmp(&pm[b].1))
            .unwrap()
    });
    xs[i].clone()
}

// ---------------------------------------------------------------------------
// Outer loop

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationRecord {
    pub round: usize,
    pub w: RewardWeights,
    pub q_mean: f64,
    pub q_stderr: f64,
    pub l_mean: f64,
    pub l_stderr: f64,
    pub replicates: usize,
}

impl EvaluationRecord {
    fn from_replicates(round: usize, w: RewardWeights, reps: &[(f64, f64)]) -> Self {
        let (qm, qs) = mean_stderr(reps.iter().map(|r| r.0));
        let (lm, ls) = mean_stderr(reps.iter().map(|r| r.1));
        EvaluationRecord {
            round,
            w,
            q_mean: qm,
            q_stderr: qs,
            l_mean: lm,
            l_stderr: ls,
            replicates: reps.len(),
        }
    }
}

fn mean_stderr(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = v.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// The thing being tuned: weights in, `(quality, stall rate)` out.
pub trait BlackBox: Sync {
    fn evaluate(&self, w: &RewardWeights, seed: u64) -> Result<(f64, f64)>;
}

/// Trains a policy with the given weights, then measures mean selected
/// bitrate (kbps) and stall rate (s/min) on the holdout traces.
pub struct TrainingBlackBox<'a> {
    pub traces: &'a TraceSet,
    pub train_config: TrainConfig,
}

impl BlackBox for TrainingBlackBox<'_> {
    fn evaluate(&self, w: &RewardWeights, seed: u64) -> Result<(f64, f64)> {
        let cfg = TrainConfig {
            seed,
            ..self.train_config.clone()
        };
        let trained = train(self.traces, w, &cfg)?;
        let policy: NeuralPolicy = trained.policy();
        let holdout = self.traces.holdout();
        let metrics = evaluate(&policy, &holdout, cfg.capacity, derive_seed(seed, &[0x4556]))?;
        let n = metrics.len() as f64;
        Ok((
            metrics.iter().map(|m| m.mean_bitrate).sum::<f64>() / n,
            metrics.iter().map(|m| m.stall_rate).sum::<f64>() / n,
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapingResult {
    pub records: Vec<EvaluationRecord>,
    /// Indices into `records`.
    pub pareto: Vec<usize>,
    /// Index of the best `q_mean` among records with `l_mean <= C * l_s`.
    pub feasible_best: Option<usize>,
    pub threshold: f64,
}

impl ShapingResult {
    /// `round w_b w_d w_c v_b v_d q_mean q_se l_mean l_se feasible` per
    /// record, then the Pareto set under a `#pareto` header.
    pub fn to_log(&self) -> String {
        let mut out = String::new();
        let line = |out: &mut String, r: &EvaluationRecord| {
            let w = r.w;
            let _ = writeln!(
                out,
                "{} {} {} {} {} {} {} {} {} {} {}",
                r.round,
                w.w_b,
                w.w_d,
                w.w_c,
                w.v_b,
                w.v_d,
                r.q_mean,
                r.q_stderr,
                r.l_mean,
                r.l_stderr,
                u8::from(r.l_mean <= self.threshold)
            );
        };
        for r in &self.records {
            line(&mut out, r);
        }
        out.push_str("#pareto\n");
        for &i in &self.pareto {
            line(&mut out, &self.records[i]);
        }
        out
    }
}

/// Records not dominated in (higher `q_mean`, lower `l_mean`).
pub fn pareto_front(records: &[EvaluationRecord]) -> Vec<usize> {
    (0..records.len())
        .filter(|&i| {
            let a = &records[i];
            !records.iter().any(|b| {
                b.q_mean >= a.q_mean
                    && b.l_mean <= a.l_mean
                    && (b.q_mean > a.q_mean || b.l_mean < a.l_mean)
            })
        })
        .collect()
}

fn evaluate_batch<B: BlackBox + ?Sized>(
    bb: &B,
    points: &[RewardWeights],
    round: usize,
    config: &ShapingConfig,
    offset: usize,
) -> Result<Vec<EvaluationRecord>> {
    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|i| (0..config.replicates).map(move |r| (i, r)))
        .collect();
    let outs: Vec<(f64, f64)> = jobs
        .par_iter()
        .map(|&(i, r)| {
            bb.evaluate(
                &points[i],
                derive_seed(config.seed, &[0x4556_414c, (offset + i) as u64, r as u64]),
            )
        })
        .collect::<Result<_>>()?;
    Ok(outs
        .chunks(config.replicates)
        .zip(points)
        .map(|(reps, w)| EvaluationRecord::from_replicates(round, *w, reps))
        .collect())
}

pub fn optimize_with<B: BlackBox + ?Sized>(
    bb: &B,
    space: &SearchSpace,
    config: &ShapingConfig,
) -> Result<ShapingResult> {
    space.validate()?;
    config.validate()?;
    let mut rng: SimRng = rng_from(derive_seed(config.seed, &[0x494e_4954]));
    let initial: Vec<RewardWeights> = (0..config.initial_design)
        .map(|_| {
            let u: Vec<f64> = (0..5).map(|_| rng.random::<f64>()).collect();
            space.from_unit(&u)
        })
        .collect();
    let mut records = evaluate_batch(bb, &initial, 0, config, 0)?;

    for round in 1..=config.rounds {
        let pts_q: Vec<GpPoint> = records
            .iter()
            .map(|r| GpPoint {
                x: space.to_unit(&r.w),
                mean: r.q_mean,
                stderr: r.q_stderr,
            })
            .collect();
        let pts_l: Vec<GpPoint> = records
            .iter()
            .map(|r| GpPoint {
                x: space.to_unit(&r.w),
                mean: r.l_mean,
                stderr: r.l_stderr,
            })
            .collect();
        let gp_q = GpModel::fit(&pts_q, derive_seed(config.seed, &[0x47_5051, round as u64]))?;
        let gp_l = GpModel::fit(&pts_l, derive_seed(config.seed, &[0x47_504c, round as u64]))?;
        let batch = propose_batch(&gp_q, &gp_l, config, round)?;
        let weights: Vec<RewardWeights> = batch.iter().map(|u| space.from_unit(u)).collect();
        let offset = records.len();
        records.extend(evaluate_batch(bb, &weights, round, config, offset)?);
    }

    let threshold = config.threshold();
    let feasible_best = (0..records.len())
        .filter(|&i| records[i].l_mean <= threshold)
        .max_by(|&a, &b| records[a].q_mean.total_cmp(&records[b].q_mean));
    Ok(ShapingResult {
        pareto: pareto_front(&records),
        records,
        feasible_best,
        threshold,
    })
}

pub fn optimize_rewards(
    traces: &TraceSet,
    space: &SearchSpace,
    train_config: &TrainConfig,
    config: &ShapingConfig,
) -> Result<ShapingResult> {
    let bb = TrainingBlackBox {
        traces,
        train_config: train_config.clone(),
    };
    optimize_with(&bb, space, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_mapping_round_trips() {
        let s = SearchSpace::default();
        let w = RewardWeights::from_array([2.0, 7.5, -1.25, 1.1, 0.9]);
        let back = s.from_unit(&s.to_unit(&w));
        for (a, b) in w.to_array().iter().zip(back.to_array()) {
            assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn ei_limits() {
        assert!(ei_closed_form(3.0, 1e-15, 3.0).abs() < 1e-12);
        assert!((ei_closed_form(4.0, 1e-15, 3.0) - 1.0).abs() < 1e-12);
        let v = ei_closed_form(0.0, 1.0, 0.0);
        assert!((v - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn halton_is_in_open_cube_and_seeded() {
        let a = halton(64, 7, 3);
        assert_eq!(a, halton(64, 7, 3));
        assert!(a.iter().flatten().all(|&v| v > 0.0 && v < 1.0));
        // First coordinate (base 2) stratifies: 64 points cover every 1/64 cell.
        let mut cells: Vec<usize> = a.iter().map(|p| (p[0] * 64.0) as usize).collect();
        cells.sort_unstable();
        cells.dedup();
        assert!(cells.len() >= 63);
    }

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let f = |x: &[f64]| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2);
        let (x, fx) = nelder_mead(&f, &[0.0, 0.0], 0.5, 2000);
        assert!(fx < 1e-8, "{x:?} {fx}");
    }

    #[test]
    fn pareto_excludes_dominated() {
        let rec = |q: f64, l: f64| EvaluationRecord {
            round: 0,
            w: RewardWeights::default(),
            q_mean: q,
            q_stderr: 0.0,
            l_mean: l,
            l_stderr: 0.0,
            replicates: 2,
        };
        let r = vec![rec(1.0, 1.0), rec(2.0, 1.0), rec(2.0, 0.5), rec(3.0, 2.0), rec(0.5, 0.1)];
        assert_eq!(pareto_front(&r), vec![2, 3, 4]);
    }

    #[test]
    fn config_contract() {
        let mut c = ShapingConfig::default();
        assert!(c.validate().is_ok());
        c.replicates = 1;
        assert!(c.validate().is_err());
        let mut c = ShapingConfig::default();
        c.mc_samples = 0;
        assert!(c.validate().is_err());
    }
}
