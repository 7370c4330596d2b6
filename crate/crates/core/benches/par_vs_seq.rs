//! Wall-time comparison of the data-parallel kernels against their
//! sequential fallback. The runtime switch flips the same code paths the
//! `parallel` feature controls, so one binary measures both.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dms_core::almostdiag::{certify, empirical_boundedness, AdEnvelope, EnsembleSpec, OperatorMatrix};
use dms_core::exec::set_force_sequential;
use dms_core::growth::GrowthFunction;
use dms_core::lattice::LatticeWindow;
use dms_core::matweight::{apinf_characteristic, MatrixWeight};
use dms_core::quad::QuadratureSpec;
use dms_core::seqspace::{random_sequence, weighted_norm, Family, SpaceParams};
use rand::SeedableRng;

fn bench_apinf(c: &mut Criterion) {
    let w = MatrixWeight::diag_power(1, vec![0.0, 0.5]);
    let window = LatticeWindow::new(-2, 3, 2).unwrap();
    let quad = QuadratureSpec::default();
    let mut group = c.benchmark_group("apinf_characteristic");
    for (name, seq) in [("parallel", false), ("sequential", true)] {
        group.bench_with_input(BenchmarkId::from_parameter(name), &seq, |b, &seq| {
            set_force_sequential(seq);
            b.iter(|| apinf_characteristic(&w, 1.0, &window, &quad).unwrap());
            set_force_sequential(false);
        });
    }
    group.finish();
}

fn bench_weighted_norm(c: &mut Criterion) {
    let w = MatrixWeight::diag_power(1, vec![0.0, 1.0]);
    let window = LatticeWindow::new(-2, 4, 2).unwrap();
    let quad = QuadratureSpec::default();
    let params = SpaceParams {
        family: Family::F,
        s: 0.5,
        p: 1.5,
        q: 2.0,
        n: 1,
        m: 2,
        upsilon: GrowthFunction::one(),
    };
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(1234);
    let t = random_sequence(&window, 1, 2, 12, &mut rng);
    let mut group = c.benchmark_group("weighted_norm");
    for (name, seq) in [("parallel", false), ("sequential", true)] {
        group.bench_with_input(BenchmarkId::from_parameter(name), &seq, |b, &seq| {
            set_force_sequential(seq);
            b.iter(|| weighted_norm(&t, &w, &params, &window, &quad).unwrap());
            set_force_sequential(false);
        });
    }
    group.finish();
}

fn bench_boundedness(c: &mut Criterion) {
    let w = MatrixWeight::identity(1, 1);
    let params = SpaceParams {
        family: Family::B,
        s: 0.0,
        p: 2.0,
        q: 2.0,
        n: 1,
        m: 1,
        upsilon: GrowthFunction::one(),
    };
    let window = LatticeWindow::new(-1, 2, 1).unwrap();
    let ens = EnsembleSpec {
        size: 12,
        support: 5,
        seed: 99,
    };
    let quad = QuadratureSpec::default();
    let env = AdEnvelope {
        d: 2.0,
        e: 1.5,
        f: 1.5,
    };
    let mut group = c.benchmark_group("boundedness_experiment");
    group.sample_size(10);
    for (name, seq) in [("parallel", false), ("sequential", true)] {
        group.bench_with_input(BenchmarkId::from_parameter(name), &seq, |b, &seq| {
            set_force_sequential(seq);
            b.iter(|| {
                empirical_boundedness(
                    |win| {
                        let mut u = OperatorMatrix::udef_on_window(win, 1, &env)?;
                        certify(&mut u, &env)?;
                        Ok(u)
                    },
                    &w,
                    &params,
                    &window,
                    &ens,
                    &quad,
                )
                .unwrap()
            });
            set_force_sequential(false);
        });
    }
    group.finish();
}

criterion_group!(benches, bench_apinf, bench_weighted_norm, bench_boundedness);
criterion_main!(benches);
