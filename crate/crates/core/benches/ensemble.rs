//! Sequential vs. parallel trajectory ensembles.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use qam_core::dissipators::{DissipatorKind, DissipatorSpec, ThermalParams};
use qam_core::ensemble::{default_workers, run_ensemble, EnsembleOptions};
use qam_core::SimulationConfig;

fn config(kind: DissipatorKind) -> SimulationConfig {
    SimulationConfig {
        t_final: 1.0,
        n_traj: 16,
        dissipator: DissipatorSpec::new(kind, ThermalParams::new(1e-8, 1.0).unwrap()),
        ..Default::default()
    }
}

fn ensemble(c: &mut Criterion) {
    let mut group = c.benchmark_group("ensemble_16x1000_steps");
    group.sample_size(10);
    let parallel = default_workers().max(2);
    for kind in DissipatorKind::ALL {
        let cfg = config(kind);
        for (label, workers) in [("sequential", 1), ("parallel", parallel)] {
            let opts = EnsembleOptions { workers, ..Default::default() };
            group.bench_with_input(BenchmarkId::new(label, kind), &opts, |b, o| {
                b.iter(|| run_ensemble(&cfg, o).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, ensemble);
criterion_main!(benches);
