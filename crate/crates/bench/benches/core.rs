use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use genz_core::coldstart::{svd_embed, synthetic_ratings};
use genz_core::corpus::integer_dataset;
use genz_core::discovery::{select_worst_combination, try_add};
use genz_core::inference::{compute_bound, em_iteration, ClampSet};
use genz_core::oracle::{OracleJudgments, SyntheticOracle};
use genz_core::statmodel::MlpConfig;
use genz_core::{Dataset, DiscoveryConfig, FeatureDescriptor, FeatureSet, ModelKind, ModelState};

/// Integer toy with `n_f` noisy bit features already attached.
fn toy_state(n_f: usize) -> (Dataset, ModelState) {
    let data = integer_dataset(512);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let columns: Vec<Vec<bool>> = (0..n_f)
        .map(|b| (0..512).map(|t| ((t >> b) & 1 == 1) != rng.random_bool(0.05)).collect())
        .collect();
    let descriptors = (0..n_f).map(|b| FeatureDescriptor::new(format!("bit {b}"))).collect();
    let features = FeatureSet::new(descriptors, vec![0.1; n_f], OracleJudgments::from_columns(512, columns)).unwrap();
    let state = ModelState::with_features(&data, features, ModelKind::LinearExact, &MlpConfig::default());
    (data, state)
}

fn inference(c: &mut Criterion) {
    for n_f in [3, 9] {
        let (data, state) = toy_state(n_f);
        c.bench_function(&format!("em_iteration/T=512/n_f={n_f}"), |b| {
            b.iter_batched(
                || state.clone(),
                |mut s| em_iteration(&data, &mut s, &ClampSet::none(), false),
                BatchSize::SmallInput,
            )
        });
        c.bench_function(&format!("compute_bound/T=512/n_f={n_f}"), |b| {
            b.iter(|| compute_bound(black_box(&data), black_box(&state)).total())
        });
        c.bench_function(&format!("worst_combination/T=512/n_f={n_f}"), |b| {
            b.iter(|| select_worst_combination(black_box(&data), black_box(&state)))
        });
    }
}

fn discovery(c: &mut Criterion) {
    let data = integer_dataset(512);
    let oracle = SyntheticOracle::new();
    let cfg = DiscoveryConfig { parallel: false, ..Default::default() };
    c.bench_function("try_add/first_feature", |b| {
        b.iter_batched(
            || ModelState::new(&data, ModelKind::LinearExact, &MlpConfig::default()),
            |mut s| {
                let mut rng = cfg.cycle_rng(1);
                try_add(&data, &mut s, &oracle, &cfg, false, &mut rng, &mut Vec::new()).unwrap()
            },
            BatchSize::SmallInput,
        )
    });
}

fn coldstart(c: &mut Criterion) {
    let ratings = synthetic_ratings(2000, 300, 8, 0.05, 3).unwrap();
    c.bench_function("svd_embed/2000x300/k=8", |b| b.iter(|| svd_embed(black_box(&ratings), 8, 0.5).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = inference, discovery, coldstart
}
criterion_main!(benches);
