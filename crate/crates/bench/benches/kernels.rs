use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kinksim::coupling::{kink_potential, laser_couplings, solve_peak_rabi};
use kinksim::kink::{build_effective, evolve, initial_localized, seconds_from_jmax_units};
use kinksim::spin::hamiltonian::Operator;
use kinksim::spin::krylov::evolve_full;
use kinksim::spin::{build_full_hamiltonian, prepare_kink_state};
use kinksim::trap::{chain, solve_equilibrium, TrapSettings};
use kinksim::units::hz;
use kinksim::CouplingMatrix;
use num_complex::Complex64;

fn trap(c: &mut Criterion) {
    let settings = TrapSettings::default();
    let cfg = settings.trap_config().unwrap();
    c.bench_function("equilibrium_21", |b| {
        b.iter(|| solve_equilibrium(black_box(&cfg)).unwrap())
    });
    c.bench_function("chain_21", |b| b.iter(|| chain(black_box(&cfg)).unwrap()));
    let (pos, modes) = chain(&cfg).unwrap();
    let beam = settings.beam().unwrap();
    c.bench_function("solve_peak_rabi_21", |b| {
        b.iter(|| solve_peak_rabi(hz(184.0), &modes, &pos, black_box(&beam)).unwrap())
    });
    let lit = beam.with_peak(solve_peak_rabi(hz(184.0), &modes, &pos, &beam).unwrap());
    c.bench_function("laser_couplings_21", |b| {
        b.iter(|| laser_couplings(&pos, &modes, black_box(&lit)).unwrap())
    });
}

fn apply(c: &mut Criterion) {
    let mut group = c.benchmark_group("full_apply");
    for n in [10usize, 14, 18] {
        let h = build_full_hamiltonian(&CouplingMatrix::power_law(n, hz(150.0), 1.3), hz(50.0))
            .unwrap();
        let x = vec![Complex64::new(1.0, 0.0); 1 << n];
        let mut y = vec![Complex64::default(); 1 << n];
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| h.apply(black_box(&x), &mut y))
        });
    }
    group.finish();
}

fn evolution(c: &mut Criterion) {
    let mut group = c.benchmark_group("evolve_to_1.1pi");
    group.sample_size(10);
    for n in [8usize, 12] {
        let j = CouplingMatrix::power_law(n, hz(150.0), 1.3);
        let t = seconds_from_jmax_units(j.max(), 1.1);
        let h = build_full_hamiltonian(&j, hz(50.0)).unwrap();
        let psi = prepare_kink_state(n, n / 2, None, None).unwrap();
        group.bench_with_input(BenchmarkId::new("krylov", n), &n, |b, _| {
            b.iter(|| evolve_full(&h, black_box(&psi), t, 1e-8).unwrap())
        });
        let eff = build_effective(&kink_potential(&j).unwrap(), hz(50.0)).unwrap();
        let k = initial_localized(n / 2, n - 1).unwrap();
        group.bench_with_input(BenchmarkId::new("effective", n), &n, |b, _| {
            b.iter(|| evolve(&eff, black_box(&k), t).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, trap, apply, evolution);
criterion_main!(benches);
