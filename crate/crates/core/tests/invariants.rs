//! Property tests over randomly generated instances of the full model.

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use genz_core::coldstart::cosine_similarity;
use genz_core::inference::{compute_bound, em_iteration, run_em, sweep, Clamp, ClampSet};
use genz_core::oracle::OracleJudgments;
use genz_core::statmodel::{update_error_rates, MlpConfig, ERROR_RATE_CAP, ERROR_RATE_FLOOR};
use genz_core::{Dataset, FeatureDescriptor, FeatureSet, InferenceConfig, ModelKind, ModelState, SemanticItem};

/// Items with covariates `[1, x]` and targets driven by noisy copies of the judgments.
fn instance(seed: u64, t: usize, n_f: usize) -> (Dataset, FeatureSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let columns: Vec<Vec<bool>> = (0..n_f).map(|_| (0..t).map(|_| rng.random_bool(0.5)).collect()).collect();
    let items: Vec<SemanticItem> = (0..t)
        .map(|k| SemanticItem::new(format!("{k}"), format!("item {k}")).with_covariates(vec![1.0, rng.random_range(-1.0..1.0)]))
        .collect();
    let weights: Vec<f64> = (0..n_f).map(|_| rng.random_range(-3.0..3.0)).collect();
    let targets = DMatrix::from_fn(t, 1, |k, _| {
        let signal: f64 = (0..n_f)
            .map(|i| if columns[i][k] != rng.random_bool(0.1) { weights[i] } else { 0.0 })
            .sum();
        signal + 0.3 * rng.random_range(-1.0..1.0)
    });
    let rates = (0..n_f).map(|_| rng.random_range(0.02..0.4)).collect();
    let descriptors = (0..n_f).map(|i| FeatureDescriptor::new(format!("f{i}"))).collect();
    let fs = FeatureSet::new(descriptors, rates, OracleJudgments::from_columns(t, columns)).unwrap();
    (Dataset::new(items, targets).unwrap(), fs)
}

fn state(data: &Dataset, fs: FeatureSet, kind: ModelKind) -> ModelState {
    ModelState::with_features(data, fs, kind, &MlpConfig::default())
}

fn serial() -> InferenceConfig {
    InferenceConfig { parallel: false, ..Default::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn exact_em_never_lowers_the_bound(seed in any::<u64>(), t in 8usize..60, n_f in 1usize..5) {
        let (data, fs) = instance(seed, t, n_f);
        let mut s = state(&data, fs, ModelKind::LinearExact);
        let mut prev = compute_bound(&data, &s).total();
        for summary in run_em(&data, &mut s, &ClampSet::none(), 10, &serial()) {
            prop_assert!(summary.l >= prev - 1e-8 * prev.abs().max(1.0), "{} -> {}", prev, summary.l);
            prev = summary.l;
        }
    }

    #[test]
    fn posteriors_and_error_rates_stay_in_range(seed in any::<u64>(), t in 4usize..40, n_f in 1usize..5) {
        let (data, fs) = instance(seed, t, n_f);
        for kind in [ModelKind::LinearExact, ModelKind::LinearGeneric] {
            let mut s = state(&data, fs.clone(), kind);
            run_em(&data, &mut s, &ClampSet::none(), 3, &serial());
            prop_assert!(s.q.iter().all(|&q| (0.0..=1.0).contains(&q)));
            for &p in s.features.error_rates() {
                prop_assert!((ERROR_RATE_FLOOR..=ERROR_RATE_CAP).contains(&p));
            }
            let bound = compute_bound(&data, &s);
            prop_assert!(bound.total().is_finite());
            prop_assert!(bound.t3.iter().all(|&h| h >= -1e-12));
        }
    }

    #[test]
    fn hard_clamps_pin_their_column(seed in any::<u64>(), t in 4usize..30, n_f in 2usize..5, on in any::<bool>()) {
        let (data, fs) = instance(seed, t, n_f);
        let mut s = state(&data, fs, ModelKind::LinearExact);
        let clamp = if on { Clamp::On } else { Clamp::Off };
        sweep(&data, &mut s, &ClampSet::single(0, clamp), false);
        let expected = if on { 1.0 } else { 0.0 };
        prop_assert!(s.q.column(0).iter().all(|&q| q == expected));
    }

    #[test]
    fn parallel_sweep_matches_serial(seed in any::<u64>(), t in 4usize..50, n_f in 1usize..5) {
        let (data, fs) = instance(seed, t, n_f);
        let mut a = state(&data, fs, ModelKind::LinearExact);
        let mut b = a.clone();
        em_iteration(&data, &mut a, &ClampSet::none(), false);
        em_iteration(&data, &mut b, &ClampSet::none(), true);
        prop_assert_eq!(a.q, b.q);
    }

    #[test]
    fn error_rate_update_is_the_clamped_disagreement(
        cells in proptest::collection::vec((0.0f64..=1.0, any::<bool>()), 1..50)
    ) {
        let t = cells.len();
        let q = DMatrix::from_fn(t, 1, |k, _| cells[k].0);
        let h = OracleJudgments::from_columns(t, vec![cells.iter().map(|c| c.1).collect()]);
        let direct: f64 = cells.iter().map(|&(q, h)| if h { 1.0 - q } else { q }).sum::<f64>() / t as f64;
        let got = update_error_rates(&q, &h)[0];
        prop_assert!((got - direct.clamp(ERROR_RATE_FLOOR, ERROR_RATE_CAP)).abs() < 1e-12);
    }

    #[test]
    fn removing_a_feature_keeps_shapes_consistent(seed in any::<u64>(), t in 4usize..30, n_f in 2usize..5, at in 0usize..5) {
        let (data, fs) = instance(seed, t, n_f);
        let mut s = state(&data, fs, ModelKind::LinearExact);
        let at = at % n_f;
        s.remove_feature(at);
        prop_assert_eq!(s.n_features(), n_f - 1);
        prop_assert_eq!(s.q.ncols(), n_f - 1);
        prop_assert_eq!(s.model.inputs(), n_f - 1 + data.covariate_dim());
        run_em(&data, &mut s, &ClampSet::none(), 2, &serial());
        prop_assert!(compute_bound(&data, &s).total().is_finite());
    }

    #[test]
    fn cosine_similarity_is_bounded_and_scale_free(
        a in proptest::collection::vec(-10.0f64..10.0, 2..12),
        scale in 0.1f64..100.0,
    ) {
        let b: Vec<f64> = a.iter().map(|x| x * scale).collect();
        let cs = cosine_similarity(&a, &b);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&cs));
        if a.iter().any(|x| x.abs() > 1e-6) {
            prop_assert!((cs - 1.0).abs() < 1e-9);
        }
    }
}
