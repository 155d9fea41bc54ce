//! Randomized invariants across the library.

mod common;

use abrlab::evalrep::{compare, subgroup_breakdown, Group, Metric, SessionMetrics};
use abrlab::policy::{action_distribution, priorities, NormalizationSpec, PolicyParams};
use abrlab::seed::rng_from;
use abrlab::shaping::{
    ei_closed_form, pareto_front, EvaluationRecord, GpHyper, GpModel, GpPoint, NOISE_FLOOR,
};
use abrlab::simenv::{reset, step, Observation, SessionState, StepOutcome};
use abrlab::trace::{format_traces, parse_traces, predict_bandwidth, Trace, TraceSet};
use abrlab::train::{input_dependent_baseline, RewardWeights};
use abrlab::translate::{fit_linear, DesignPoint};
use common::{rel_err, trace, trace_and_actions};
use proptest::prelude::*;
use rand::Rng;

fn replay(t: &Trace, actions: &[usize], capacity: f64) -> Vec<(SessionState, StepOutcome)> {
    let (mut state, _) = reset(t, capacity).unwrap();
    let mut out = Vec::new();
    for &a in actions {
        let (next, _, outcome) = step(&state, a, t).unwrap();
        out.push((state, outcome));
        state = next;
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 256,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn buffer_stays_within_capacity((t, actions) in trace_and_actions(40), capacity in 0.5..40.0f64) {
        for (before, o) in replay(&t, &actions, capacity) {
            prop_assert!(before.buffer >= 0.0 && before.buffer <= capacity);
            prop_assert!(o.buffer_after >= 0.0 && o.buffer_after <= capacity + 1e-12);
            prop_assert!(o.stall_time >= 0.0 && o.capacity_wait >= 0.0);
            prop_assert_eq!(o.stalled, o.stall_time > 0.0);
        }
    }

    #[test]
    fn time_ledger_balances((t, actions) in trace_and_actions(40), capacity in 0.5..40.0f64) {
        let steps = replay(&t, &actions, capacity);
        let mut played_total = 0.0;
        for (before, o) in &steps {
            // Wall time of a step is split between playback, stall and startup.
            let played = before.buffer.min(o.download_time);
            let lhs = o.download_time + o.capacity_wait;
            let rhs = played + o.capacity_wait + o.stall_time + o.startup_delay;
            prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.max(1.0));
            played_total += played + o.capacity_wait;
        }
        // Every appended second is either played or still buffered.
        let appended = t.chunk_duration() * steps.len() as f64;
        let left = steps.last().unwrap().1.buffer_after;
        prop_assert!((appended - played_total - left).abs() <= 1e-9 * appended.max(1.0));
    }

    #[test]
    fn smaller_choices_never_stall_more(
        (t, actions) in trace_and_actions(40),
        shrink in prop::collection::vec(0..7usize, 40),
        capacity in 0.5..40.0f64,
    ) {
        let smaller: Vec<usize> = actions
            .iter()
            .zip(&shrink)
            .map(|(&a, &s)| a.saturating_sub(s))
            .collect();
        let stall = |acts: &[usize]| -> f64 {
            replay(&t, acts, capacity).iter().map(|(_, o)| o.stall_time).sum()
        };
        prop_assert!(stall(&smaller) <= stall(&actions) + 1e-9);
    }

    #[test]
    fn one_record_per_step((t, a) in trace_and_actions(30), b in prop::collection::vec(0..7usize, 30)) {
        let b: Vec<usize> = b.iter().take(t.len()).map(|&x| x % t.encodings()).collect();
        prop_assert_eq!(replay(&t, &a, 30.0).len(), replay(&t, &b, 30.0).len());
        prop_assert_eq!(replay(&t, &a, 30.0).len(), t.len());
    }

    #[test]
    fn trace_files_round_trip(ts in prop::collection::vec(trace(12), 1..6), frac in 0.0..1.0f64, seed: u64) {
        let renamed: Vec<Trace> = ts
            .iter()
            .enumerate()
            .map(|(i, t)| Trace::new(format!("trace-{i}"), t.chunk_duration(), t.records().to_vec()).unwrap())
            .collect();
        let set = TraceSet::new(renamed.clone(), frac, seed).unwrap();
        let parsed = parse_traces(&format_traces(set.traces())).unwrap();
        prop_assert_eq!(&parsed, &renamed);
        prop_assert_eq!(TraceSet::new(parsed, frac, seed).unwrap(), set);
    }

    #[test]
    fn harmonic_mean_at_most_arithmetic(h in prop::collection::vec(1e-3..1e6f64, 1..30), k in 1..40usize) {
        let hm = predict_bandwidth(&h, k).unwrap();
        let w = &h[h.len() - k.min(h.len())..];
        let am = w.iter().sum::<f64>() / w.len() as f64;
        prop_assert!(hm <= am * (1.0 + 1e-12));
        let lo = w.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert!(hm >= lo * (1.0 - 1e-12));
    }

    #[test]
    fn splits_partition_the_set(n in 1..60usize, frac in 0.0..=1.0f64, seed: u64) {
        let ts: Vec<Trace> = (0..n)
            .map(|i| Trace::new(format!("trace-{i}"), 2.0, vec![common::flat_record(1000.0, &[100.0])]).unwrap())
            .collect();
        let set = TraceSet::new(ts, frac, seed).unwrap();
        let mut ids: Vec<&str> = set.train().iter().chain(set.holdout().iter()).map(|t| t.id()).collect();
        prop_assert_eq!(set.holdout().len(), (n as f64 * frac).round() as usize);
        ids.sort_unstable();
        ids.dedup();
        prop_assert_eq!(ids.len(), n);
    }

    #[test]
    fn policy_is_permutation_equivariant(
        seed: u64,
        x in 50.0..30_000.0f64,
        o in 0.0..30.0f64,
        raw in prop::collection::vec(10.0..9000.0f64, 1..8),
        perm_seed: u64,
    ) {
        let params = PolicyParams::init(&[16, 8], seed).unwrap();
        let norm = NormalizationSpec::standard(30.0, 9000.0).unwrap();
        let obs = |sizes: Vec<f64>| Observation { prediction: x, buffer: o, sizes, ladder: vec![] };
        let mut perm: Vec<usize> = (0..raw.len()).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut rng_from(perm_seed));
        let permuted: Vec<f64> = perm.iter().map(|&i| raw[i]).collect();
        let p = priorities(&params, &norm, &obs(raw.clone()));
        let pp = priorities(&params, &norm, &obs(permuted));
        for (j, &i) in perm.iter().enumerate() {
            prop_assert_eq!(pp[j].to_bits(), p[i].to_bits());
        }
        let d = action_distribution(&p);
        let dp = action_distribution(&pp);
        for (j, &i) in perm.iter().enumerate() {
            prop_assert!((dp[j] - d[i]).abs() <= 1e-15);
        }
    }

    #[test]
    fn distribution_is_a_probability_vector(q in prop::collection::vec(-800.0..800.0f64, 1..12)) {
        let d = action_distribution(&q);
        prop_assert!(d.iter().all(|&p| p >= 0.0 && p.is_finite()));
        prop_assert!((d.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let shifted: Vec<f64> = q.iter().map(|v| v + 123.0).collect();
        let ds = action_distribution(&shifted);
        for (a, b) in d.iter().zip(&ds) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn input_dependent_advantages_center(
        rets in (1..20usize, 2..9usize).prop_flat_map(|(t, k)| prop::collection::vec(prop::collection::vec(-1e3..1e3f64, t), k)),
    ) {
        let b = input_dependent_baseline(&rets).unwrap();
        for t in 0..b.len() {
            let s: f64 = rets.iter().filter_map(|r| r.get(t)).map(|g| g - b[t]).sum();
            let scale: f64 = rets.iter().filter_map(|r| r.get(t)).map(|g| g.abs()).sum::<f64>().max(1.0);
            prop_assert!(s.abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn ols_residuals_are_orthogonal(seed: u64, n in 5..120usize) {
        let mut rng = rng_from(seed);
        let pts: Vec<DesignPoint> = (0..n)
            .map(|_| DesignPoint {
                x: rng.random_range(50.0..20_000.0),
                o: rng.random_range(0.0..30.0),
                target: rng.random_range(500.0..9000.0),
            })
            .collect();
        let f = fit_linear(&pts).unwrap();
        let resid: Vec<f64> = pts.iter().map(|p| p.target - f.intended(p.x, p.o)).collect();
        let cols: [Box<dyn Fn(&DesignPoint) -> f64>; 3] = [Box::new(|p| p.x), Box::new(|p| p.o), Box::new(|_| 1.0)];
        for col in &cols {
            let dot: f64 = pts.iter().zip(&resid).map(|(p, r)| col(p) * r).sum();
            let scale = pts.iter().zip(&resid).map(|(p, r)| (col(p) * r).abs()).sum::<f64>().max(1e-300);
            prop_assert!(dot.abs() <= 1e-8 * scale, "relative {}", dot.abs() / scale);
        }

        use rand::seq::SliceRandom;
        let mut shuffled = pts.clone();
        shuffled.shuffle(&mut rng);
        let g = fit_linear(&shuffled).unwrap();
        prop_assert!(rel_err(f.a, g.a) < 1e-9 || (f.a - g.a).abs() < 1e-12);
        prop_assert!(rel_err(f.b, g.b) < 1e-9 || (f.b - g.b).abs() < 1e-9);
        prop_assert!(rel_err(f.c, g.c) < 1e-9);
    }

    #[test]
    fn pareto_set_is_not_dominated(pts in prop::collection::vec((0.0..10.0f64, 0.0..10.0f64), 1..40)) {
        let records: Vec<EvaluationRecord> = pts
            .iter()
            .map(|&(q, l)| EvaluationRecord {
                round: 0,
                w: RewardWeights::default(),
                q_mean: (q * 4.0).round(),
                q_stderr: 0.0,
                l_mean: (l * 4.0).round(),
                l_stderr: 0.0,
                replicates: 2,
            })
            .collect();
        let front = pareto_front(&records);
        prop_assert!(!front.is_empty());
        for &i in &front {
            for r in &records {
                let a = &records[i];
                let dominates = r.q_mean >= a.q_mean && r.l_mean <= a.l_mean
                    && (r.q_mean > a.q_mean || r.l_mean < a.l_mean);
                prop_assert!(!dominates);
            }
        }
        // Everything left out is dominated by something.
        for j in (0..records.len()).filter(|j| !front.contains(j)) {
            let b = &records[j];
            prop_assert!(records.iter().any(|r| r.q_mean >= b.q_mean && r.l_mean <= b.l_mean
                && (r.q_mean > b.q_mean || r.l_mean < b.l_mean)));
        }
    }

    #[test]
    fn gp_variance_is_nonnegative_and_shrinks_on_observation(
        seed: u64,
        n in 2..12usize,
        probe in prop::collection::vec(0.0..1.0f64, 2),
    ) {
        let mut rng = rng_from(seed);
        let pts: Vec<GpPoint> = (0..n)
            .map(|_| GpPoint {
                x: vec![rng.random(), rng.random()],
                mean: rng.random_range(-3.0..3.0),
                stderr: rng.random_range(0.0..0.3),
            })
            .collect();
        let hyper = GpHyper { signal_var: 1.3, lengthscales: vec![0.3, 0.5], noise_floor: NOISE_FLOOR };
        let gp = GpModel::with_hyper(&pts, hyper).unwrap();
        for _ in 0..20 {
            let x = [rng.random::<f64>(), rng.random::<f64>()];
            prop_assert!(gp.predict(&x).1 >= 0.0);
        }
        let (m, v) = gp.predict(&probe);
        let after = gp.fantasize(&probe, m).unwrap();
        let (m2, v2) = after.predict(&probe);
        prop_assert!(v2 <= v + 1e-12);
        prop_assert!((m2 - m).abs() <= 1e-6 * (1.0 + m.abs()));
    }

    #[test]
    fn ei_is_nonnegative_and_monotone_in_mean(
        mu in -10.0..10.0f64, delta in 0.0..5.0f64, sd in 1e-6..5.0f64, f_star in -10.0..10.0f64,
    ) {
        let lo = ei_closed_form(mu, sd, f_star);
        let hi = ei_closed_form(mu + delta, sd, f_star);
        prop_assert!(lo >= 0.0);
        prop_assert!(hi >= lo - 1e-12);
    }

    #[test]
    fn bootstrap_signs_follow_uniform_improvement(
        base in prop::collection::vec((100.0..5000.0f64, 0.0..5.0f64, 0..6usize, 50.0..20_000.0f64), 2..30),
        lift in prop::collection::vec((1.0..500.0f64, 0.01..2.0f64, 1..3usize), 30),
        seed: u64,
    ) {
        let a: Vec<SessionMetrics> = base
            .iter()
            .enumerate()
            .map(|(i, &(br, sr, sc, bw))| SessionMetrics {
                trace_id: format!("trace-{i}"),
                mean_bitrate: br,
                stall_rate: sr,
                stall_count: sc,
                watch_time: 60.0,
                mean_measured_bandwidth: bw,
            })
            .collect();
        let b: Vec<SessionMetrics> = a
            .iter()
            .zip(&lift)
            .map(|(s, &(db, ds, dc))| SessionMetrics {
                mean_bitrate: s.mean_bitrate + db,
                stall_rate: s.stall_rate + ds,
                stall_count: s.stall_count + dc,
                ..s.clone()
            })
            .collect();
        let report = compare(&a, &b, 200, seed).unwrap();
        for row in &report.rows {
            prop_assert!(row.point > 0.0, "{:?}", row);
            prop_assert!(row.ci95.0 > 0.0 && row.ci99.0 > 0.0, "{:?}", row);
            prop_assert!(row.ci99.0 <= row.ci95.0 && row.ci95.1 <= row.ci99.1);
        }
        let groups = subgroup_breakdown(&a);
        let mut all: Vec<usize> = groups.slow.iter().chain(&groups.medium).chain(&groups.fast).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..a.len()).collect::<Vec<_>>());
        for (i, s) in a.iter().enumerate() {
            let g = Group::of(s.mean_measured_bandwidth);
            let listed = match g {
                Group::Slow => &groups.slow,
                Group::Fast => &groups.fast,
                _ => &groups.medium,
            };
            prop_assert!(listed.contains(&i));
        }
        prop_assert!(report.get(Metric::MeanBitrate, Group::All).is_some());
    }
}
