//! Distilling the neural policy into `intended = a * x + b * o + c`.
//!
//! The network is probed on random `(prediction, buffer)` pairs against an
//! evenly spaced ladder of chunk sizes. The probability-weighted mean size is
//! the "intended" size at that point, and a least-squares plane through those
//! targets gives the linear controller.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::policy::{
    action_distribution, priorities, LinearPolicyParams, NormalizationSpec, PolicyParams,
};
use crate::seed::rng_from;
use crate::simenv::Observation;
use crate::trace::TraceSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignPoint {
    /// Bandwidth prediction, kbps.
    pub x: f64,
    /// Buffer occupancy, seconds.
    pub o: f64,
    /// Intended chunk size, kilobits.
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranslateConfig {
    pub n: usize,
    /// Number of probe sizes.
    pub m: usize,
    pub x_range: (f64, f64),
    pub o_range: (f64, f64),
    /// Smallest and largest probe size (kilobits).
    pub size_range: (f64, f64),
    pub seed: u64,
}

impl TranslateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return Err(Error::config("n", "need at least 3 design points"));
        }
        if self.m < 2 {
            return Err(Error::config("m", "need at least 2 probe sizes"));
        }
        let (xl, xh) = self.x_range;
        if !(xl > 0.0 && xh >= xl && xh.is_finite()) {
            return Err(Error::config("x_range", "need 0 < lo <= hi"));
        }
        let (ol, oh) = self.o_range;
        if !(ol >= 0.0 && oh >= ol && oh.is_finite()) {
            return Err(Error::config("o_range", "need 0 <= lo <= hi"));
        }
        let (sl, sh) = self.size_range;
        if !(sl > 0.0 && sh > sl && sh.is_finite()) {
            return Err(Error::config("size_range", "need 0 < lo < hi"));
        }
        Ok(())
    }

    /// Predictions over the 1st..99th percentile of the holdout traces, capped
    /// at the top nominal ladder bitrate; buffers over `[0, capacity]`; probe
    /// sizes over the set's size range.
    ///
    /// Above the top bitrate every sensible policy already asks for the largest
    /// encoding, so uniform draws there only flatten the fitted slope.
    pub fn from_traces(traces: &TraceSet, capacity: f64, n: usize, m: usize, seed: u64) -> Self {
        let pool = if traces.holdout().is_empty() {
            traces.train()
        } else {
            traces.holdout()
        };
        let mut preds: Vec<f64> = pool
            .iter()
            .flat_map(|t| t.records().iter().map(|r| r.prediction))
            .collect();
        preds.sort_by(f64::total_cmp);
        let pick = |q: f64| preds[((preds.len() - 1) as f64 * q).round() as usize];
        let top_rate = pool
            .iter()
            .filter_map(|t| t.ladder().last().copied())
            .fold(0.0, f64::max);
        let lo = pick(0.01);
        let hi = pick(0.99).min(top_rate).max(lo);
        TranslateConfig {
            n,
            m,
            x_range: (lo, hi),
            o_range: (0.0, capacity),
            size_range: traces.size_range(),
            seed,
        }
    }

    pub fn probe_sizes(&self) -> Vec<f64> {
        let (lo, hi) = self.size_range;
        (0..self.m)
            .map(|i| lo + (hi - lo) * i as f64 / (self.m - 1) as f64)
            .collect()
    }
}

/// Probability-weighted mean of `sizes` under the policy at `(x, o)`.
pub fn intended_bitrate(
    params: &PolicyParams,
    norm: &NormalizationSpec,
    x: f64,
    o: f64,
    sizes: &[f64],
) -> f64 {
    let obs = Observation {
        prediction: x,
        buffer: o,
        sizes: sizes.to_vec(),
        ladder: Vec::new(),
    };
    let probs = action_distribution(&priorities(params, norm, &obs));
    let lo = sizes.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = sizes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n: f64 = sizes.iter().zip(&probs).map(|(s, p)| s * p).sum();
    n.clamp(lo, hi)
}

pub fn build_design(
    params: &PolicyParams,
    norm: &NormalizationSpec,
    config: &TranslateConfig,
) -> Result<Vec<DesignPoint>> {
    config.validate()?;
    let sizes = config.probe_sizes();
    let mut rng = rng_from(config.seed);
    let (xl, xh) = config.x_range;
    let (ol, oh) = config.o_range;
    Ok((0..config.n)
        .map(|_| {
            let x = xl + (xh - xl) * rng.random::<f64>();
            let o = ol + (oh - ol) * rng.random::<f64>();
            DesignPoint {
                x,
                o,
                target: intended_bitrate(params, norm, x, o, &sizes),
            }
        })
        .collect())
}

/// Ordinary least squares on the design `[x, o, 1]`, solved through a QR
/// factorization of the column-scaled design.
pub fn fit_linear(points: &[DesignPoint]) -> Result<LinearPolicyParams> {
    if points.len() < 3 {
        return Err(Error::RankDeficient);
    }
    let n = points.len();
    let scale_x = points.iter().map(|p| p.x.abs()).fold(0.0, f64::max).max(1e-300);
    let scale_o = points.iter().map(|p| p.o.abs()).fold(0.0, f64::max).max(1e-300);
    let design = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => points[i].x / scale_x,
        1 => points[i].o / scale_o,
        _ => 1.0,
    });
    let y = DVector::from_iterator(n, points.iter().map(|p| p.target));
    let qr = design.qr();
    let r = qr.r();
    let rmax = (0..3).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..3).any(|i| r[(i, i)].abs() <= 1e-10 * rmax) || rmax == 0.0 {
        return Err(Error::RankDeficient);
    }
    let rhs = qr.q().transpose() * y;
    let beta = r.solve_upper_triangular(&rhs).ok_or(Error::RankDeficient)?;
    Ok(LinearPolicyParams {
        a: beta[0] / scale_x,
        b: beta[1] / scale_o,
        c: beta[2],
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitReport {
    pub rmse: f64,
    pub r_squared: f64,
    pub n: usize,
}

impl FitReport {
    pub fn line(&self) -> String {
        format!("rmse={} r2={} n={}", self.rmse, self.r_squared, self.n)
    }
}

pub fn fit_report(fit: &LinearPolicyParams, points: &[DesignPoint]) -> FitReport {
    let n = points.len();
    let mean = points.iter().map(|p| p.target).sum::<f64>() / n as f64;
    let ss_res: f64 = points
        .iter()
        .map(|p| (p.target - fit.intended(p.x, p.o)).powi(2))
        .sum();
    let ss_tot: f64 = points.iter().map(|p| (p.target - mean).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res <= 1e-18 * mean.abs().max(1.0) {
        1.0
    } else {
        0.0
    };
    FitReport {
        rmse: (ss_res / n as f64).sqrt(),
        r_squared,
        n,
    }
}

pub fn translate_policy(
    params: &PolicyParams,
    norm: &NormalizationSpec,
    config: &TranslateConfig,
) -> Result<(LinearPolicyParams, FitReport)> {
    let design = build_design(params, norm, config)?;
    let fit = fit_linear(&design)?;
    Ok((fit, fit_report(&fit, &design)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::DEFAULT_HIDDEN;

    fn cfg(n: usize, seed: u64) -> TranslateConfig {
        TranslateConfig {
            n,
            m: 5,
            x_range: (200.0, 20_000.0),
            o_range: (0.0, 30.0),
            size_range: (600.0, 8600.0),
            seed,
        }
    }

    fn norm() -> NormalizationSpec {
        NormalizationSpec::standard(30.0, 8600.0).unwrap()
    }

    #[test]
    fn intended_examples() {
        let zero = PolicyParams::zeros(&DEFAULT_HIDDEN).unwrap();
        let n = intended_bitrate(&zero, &norm(), 1000.0, 3.0, &[1000.0, 2000.0, 3000.0]);
        assert!((n - 2000.0).abs() < 1e-9);
        let single = intended_bitrate(&zero, &norm(), 1000.0, 3.0, &[1500.0]);
        assert_eq!(single, 1500.0);
    }

    #[test]
    fn design_is_seeded() {
        let p = PolicyParams::init(&DEFAULT_HIDDEN, 5).unwrap();
        let a = build_design(&p, &norm(), &cfg(500, 9)).unwrap();
        assert_eq!(a.len(), 500);
        assert_eq!(a, build_design(&p, &norm(), &cfg(500, 9)).unwrap());
        assert!(a.iter().all(|d| (600.0..=8600.0).contains(&d.target)));
    }

    #[test]
    fn exact_plane_is_recovered() {
        let (a0, b0, c0) = (0.37, -41.0, 812.5);
        let pts: Vec<DesignPoint> = (0..40)
            .map(|i| {
                let x = 300.0 + 97.0 * i as f64;
                let o = ((i * 7) % 31) as f64;
                DesignPoint {
                    x,
                    o,
                    target: a0 * x + b0 * o + c0,
                }
            })
            .collect();
        let f = fit_linear(&pts).unwrap();
        assert!(((f.a - a0) / a0).abs() < 1e-9);
        assert!(((f.b - b0) / b0).abs() < 1e-9);
        assert!(((f.c - c0) / c0).abs() < 1e-9);
    }

    #[test]
    fn constant_targets_and_rank_deficiency() {
        let pts: Vec<DesignPoint> = (0..10)
            .map(|i| DesignPoint {
                x: 100.0 * (i + 1) as f64,
                o: (i % 4) as f64,
                target: 1234.0,
            })
            .collect();
        let f = fit_linear(&pts).unwrap();
        assert!(f.a.abs() < 1e-12 && f.b.abs() < 1e-9);
        assert!((f.c - 1234.0).abs() < 1e-9);
        let flat: Vec<DesignPoint> = (0..10)
            .map(|_| DesignPoint {
                x: 500.0,
                o: 2.0,
                target: 1.0,
            })
            .collect();
        assert!(matches!(fit_linear(&flat), Err(Error::RankDeficient)));
    }

    #[test]
    fn constant_policy_translates_exactly() {
        let zero = PolicyParams::zeros(&DEFAULT_HIDDEN).unwrap();
        let (fit, report) = translate_policy(&zero, &norm(), &cfg(200, 1)).unwrap();
        assert!(report.rmse < 1e-9);
        assert!(fit.a.abs() < 1e-12 && fit.b.abs() < 1e-9);
        assert_eq!(report.line().split(' ').count(), 3);
    }
}
