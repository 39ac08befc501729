mod common;

use common::*;
use proptest::prelude::*;
use resq::dataset::{synth_generate, SynthKind, SynthSpec};
use resq::metrics::{aggregate_perplexity, evaluate, mse, perplexity, perplexity_curve, CodeHistogram};
use resq::{irvq_train, rvq_train, Codebook, Error, FrameSet, KMeansConfig, RvqModel, Variant};

/// Entropy oracle written out term by term.
fn reference_perplexity(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let mut h = 0.0;
    for &c in counts {
        if c > 0 {
            let p = c as f64 / total as f64;
            h -= p * p.ln();
        }
    }
    h.exp()
}

proptest! {
    #[test]
    fn perplexity_is_bounded_and_label_free(counts in prop::collection::vec(0u64..50, 2..40), rot in 0usize..40) {
        prop_assume!(counts.iter().sum::<u64>() > 0);
        let k = counts.len();
        let p = perplexity(&CodeHistogram::from_counts(vec![counts.clone()]).unwrap(), 0).unwrap();
        prop_assert!(p >= 1.0 - 1e-12 && p <= k as f64 + 1e-9);
        prop_assert!((p - reference_perplexity(&counts)).abs() < 1e-9);
        let mut permuted = counts.clone();
        permuted.rotate_left(rot % k);
        let q = perplexity(&CodeHistogram::from_counts(vec![permuted]).unwrap(), 0).unwrap();
        prop_assert!((p - q).abs() < 1e-9);
    }
}

#[test]
fn mse_sums_dimensions_and_averages_frames() {
    let a = FrameSet::from_flat(2, vec![1.0, 0.0, 3.0, 4.0]).unwrap();
    let b = FrameSet::from_flat(2, vec![0.0, 0.0, 0.0, 0.0]).unwrap();
    assert_eq!(mse(&a, &b).unwrap(), (1.0 + 25.0) / 2.0);
    assert_eq!(mse(&a, &a).unwrap(), 0.0);
    assert!(matches!(mse(&a, &a.slice(0..1)), Err(Error::LengthMismatch { .. })));
}

#[test]
fn uniform_usage_reaches_codebook_size() {
    let p = perplexity(&CodeHistogram::from_counts(vec![vec![5; 1024]]).unwrap(), 0).unwrap();
    assert!((p - 1024.0).abs() < 1e-6 * 1024.0);
    let one = perplexity(&CodeHistogram::from_counts(vec![vec![0, 9, 0]]).unwrap(), 0).unwrap();
    assert_eq!(one, 1.0);
    let skew = perplexity(&CodeHistogram::from_counts(vec![vec![1, 1, 2]]).unwrap(), 0).unwrap();
    assert!((skew - 2.828427).abs() < 1e-6);
    assert!(matches!(
        perplexity(&CodeHistogram::new(1, 4), 0),
        Err(Error::EmptyHistogram { .. })
    ));
}

#[test]
fn balanced_two_entry_quantizer_scores_two_per_stage() {
    // All eight sign/offset patterns, each stage splitting one axis in two
    // equally likely halves. Later stages keep their null entry at index 0.
    let mut rows = Vec::new();
    for s in 0..8u32 {
        let bit = |b: u32| s >> b & 1 == 1;
        rows.push(vec![
            if bit(0) { 1.0f32 } else { -1.0 },
            if bit(1) { 0.5 } else { 0.0 },
            if bit(2) { 0.25 } else { 0.0 },
        ]);
    }
    let frames = FrameSet::from_rows(3, rows.iter().cycle().take(800)).unwrap();
    let c1 = Codebook::new(3, vec![-1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
    let mut c2 = Codebook::new(3, vec![0.0, 0.0, 0.0, 0.0, 0.5, 0.0]).unwrap();
    let mut c3 = Codebook::new(3, vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.25]).unwrap();
    c2.set_null(0);
    c3.set_null(0);
    let model = RvqModel::from_codebooks(Variant::Plain, vec![c1, c2, c3]).unwrap();
    let curve = perplexity_curve(&model, &frames).unwrap();
    for p in &curve {
        assert!((p - 2.0).abs() < 1e-9, "{curve:?}");
    }
    let report = evaluate(&model, &frames).unwrap();
    assert!(report.mse < 1e-12);
    assert_eq!(report.perplexity, 2.0);
    assert_eq!(report.perplexity_csv().lines().next(), Some("stage,perplexity"));
}

#[test]
fn identical_frames_use_one_entry() {
    let frames = gaussian_frames(2000, 4, 1);
    let model = rvq_train(&frames, 2, &KMeansConfig::new(8).with_seed(0)).unwrap();
    let same = FrameSet::from_rows(4, std::iter::repeat_n(frames.row(0), 50)).unwrap();
    assert_eq!(perplexity_curve(&model, &same).unwrap()[0], 1.0);
}

#[test]
fn aggregate_lies_between_stage_extremes() {
    let frames = gaussian_frames(4000, 6, 2);
    let model = rvq_train(&frames, 4, &KMeansConfig::new(16).with_seed(0)).unwrap();
    let curve = perplexity_curve(&model, &frames).unwrap();
    let agg = aggregate_perplexity(&curve);
    let (lo, hi) = curve.iter().fold((f64::MAX, f64::MIN), |(l, h), &p| (l.min(p), h.max(p)));
    assert!(lo <= agg && agg <= hi);
    for p in &curve {
        assert!((1.0..=16.0).contains(p));
    }
}

#[test]
fn standardized_quantizer_spreads_usage_wider_than_plain_rvq() {
    let spec = SynthSpec::new(SynthKind::HeavyTailed, 64, 8).with_seed(3);
    let all = synth_generate(&spec, 24_000).unwrap();
    let (train, eval) = (all.slice(0..20_000), all.slice(20_000..24_000));
    let cfg = KMeansConfig::new(16).with_seed(1);
    let rvq = rvq_train(&train, 4, &cfg).unwrap();
    let irvq = irvq_train(&train, 4, &cfg).unwrap();
    let base = aggregate_perplexity(&perplexity_curve(&rvq, &eval).unwrap());
    let learned = aggregate_perplexity(&perplexity_curve(&irvq, &eval).unwrap());
    assert!(learned > base, "{learned} vs {base}");
}
