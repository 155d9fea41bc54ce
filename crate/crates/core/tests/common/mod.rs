//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use abrlab::trace::{Trace, TraceRecord};
use proptest::prelude::*;

/// Strictly increasing ladder of `m` sizes (kilobits).
pub fn sizes(m: usize) -> impl Strategy<Value = Vec<f64>> {
    (50.0..2000.0f64, prop::collection::vec(1.0..3000.0f64, m - 1)).prop_map(|(base, steps)| {
        let mut out = vec![base];
        for s in steps {
            let next = out.last().unwrap() + s;
            out.push(next);
        }
        out
    })
}

pub fn record(m: usize) -> impl Strategy<Value = TraceRecord> {
    (50.0..30_000.0f64, 50.0..30_000.0f64, 0.0..20.0f64, sizes(m)).prop_map(
        |(prediction, measured, elapsed, sizes)| TraceRecord {
            prediction,
            measured,
            elapsed,
            sizes,
        },
    )
}

/// A valid trace with 1..=`max_len` records and 1..=7 encodings.
pub fn trace(max_len: usize) -> impl Strategy<Value = Trace> {
    (1..=7usize, 1..=max_len, 0.5..6.0f64).prop_flat_map(|(m, n, chunk)| {
        prop::collection::vec(record(m), n)
            .prop_map(move |records| Trace::new("t", chunk, records).unwrap())
    })
}

/// A trace plus one in-range action per record.
pub fn trace_and_actions(max_len: usize) -> impl Strategy<Value = (Trace, Vec<usize>)> {
    trace(max_len).prop_flat_map(|t| {
        let m = t.encodings();
        let n = t.len();
        (Just(t), prop::collection::vec(0..m, n))
    })
}

/// A record with constant bandwidth and a fixed ladder.
pub fn flat_record(kbps: f64, sizes: &[f64]) -> TraceRecord {
    TraceRecord {
        prediction: kbps,
        measured: kbps,
        elapsed: 0.0,
        sizes: sizes.to_vec(),
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}
