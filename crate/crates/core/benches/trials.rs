use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use dpsketch::guard::PrivacyBudget;
use dpsketch::harness::LowRankFamily;
use dpsketch::lra::{LraConfig, LraState};
use dpsketch::par::{map_trials, map_trials_sequential};
use dpsketch::sketch::{GaussianSketcher, OmegaStorage};

fn lra_trial(family: &LowRankFamily, seed: u64) -> f64 {
    let a = family.sample(seed);
    let budget = PrivacyBudget::new(1.0, 0.01).unwrap();
    let mut st = LraState::new(LraConfig::new(family.n, family.d, 5, budget, seed)).unwrap();
    st.ingest_matrix(&a).unwrap();
    st.finalize().unwrap().lambda[0]
}

fn jl_trial(seed: u64) -> f64 {
    let sk = GaussianSketcher::with_storage(seed, 400, 64, OmegaStorage::Regenerate).unwrap();
    let y = sk.psg1(&[1.0 / 8.0; 64]).unwrap();
    y.iter().map(|v| v * v).sum::<f64>() / 400.0
}

fn trial_runner(c: &mut Criterion) {
    let family = LowRankFamily {
        n: 80,
        d: 80,
        rank: 5,
        top: 1e5,
        decay: 0.8,
        noise: 100.0,
    };
    let seeds: Vec<u64> = (0..16).collect();
    let mut group = c.benchmark_group("lra_trials");
    group.sample_size(10);
    group.bench_with_input(BenchmarkId::new("sequential", seeds.len()), &seeds, |b, s| {
        b.iter(|| map_trials_sequential(black_box(s), |x| lra_trial(&family, x)))
    });
    group.bench_with_input(BenchmarkId::new("parallel", seeds.len()), &seeds, |b, s| {
        b.iter(|| map_trials(black_box(s), |x| lra_trial(&family, x)))
    });
    group.finish();

    let seeds: Vec<u64> = (0..256).collect();
    let mut group = c.benchmark_group("jl_trials");
    group.bench_with_input(BenchmarkId::new("sequential", seeds.len()), &seeds, |b, s| {
        b.iter(|| map_trials_sequential(black_box(s), jl_trial))
    });
    group.bench_with_input(BenchmarkId::new("parallel", seeds.len()), &seeds, |b, s| {
        b.iter(|| map_trials(black_box(s), jl_trial))
    });
    group.finish();
}

criterion_group!(benches, trial_runner);
criterion_main!(benches);
