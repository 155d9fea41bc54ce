use abrlab::trace::{generate_synthetic, SyntheticTraceConfig};
use abrlab::train::{train, RewardWeights, TrainConfig};

fn small_run(seed: u64) -> abrlab::train::TrainedPolicy {
    let traces = generate_synthetic(
        &SyntheticTraceConfig {
            count: 40,
            ..Default::default()
        },
        seed,
    )
    .unwrap();
    let config = TrainConfig {
        iterations: 120,
        learning_rate: 1e-2,
        traces_per_iteration: 8,
        rollouts_per_trace: 4,
        eval_traces: 8,
        seed,
        ..Default::default()
    };
    train(&traces, &RewardWeights::default(), &config).unwrap()
}

#[test]
fn policy_entropy_trends_down() {
    let trained = small_run(2);
    let e: Vec<f64> = trained.curve.points.iter().map(|p| p.entropy).collect();
    let windows: Vec<&[f64]> = e.chunks(20).collect();
    let mean = |c: &[f64]| c.iter().sum::<f64>() / c.len() as f64;
    let means: Vec<f64> = windows.iter().map(|c| mean(c)).collect();
    // Noise band: pooled spread of single iterations around their window mean.
    let pooled = windows
        .iter()
        .zip(&means)
        .map(|(c, m)| c.iter().map(|v| (v - m).powi(2)).sum::<f64>())
        .sum::<f64>()
        / e.len() as f64;
    let band = 2.0 * pooled.sqrt();
    let mut lowest = means[0];
    for &m in &means[1..] {
        assert!(m <= lowest + band, "window means {means:?}, band {band}");
        lowest = lowest.min(m);
    }
    assert!(means[means.len() - 1] < 0.5 * means[0], "window means {means:?}");
}

#[test]
fn training_is_reproducible() {
    let a = small_run(4);
    let b = small_run(4);
    assert_eq!(a.params, b.params);
    assert_eq!(a.curve.to_tsv(), b.curve.to_tsv());
}
