use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use trifocal_core::par::Execution;
use trifocal_core::ransac::{run_ransac, RansacConfig};
use trifocal_core::synth::{generate_scene, make_triplet_instance, rng_for, InstanceConfig, SceneConfig};
use trifocal_core::triplet_solver::{SolverKind, TripletSolver, VirtualKind};
use trifocal_core::experiments::barycentric_sweep;

fn ransac(c: &mut Criterion) {
    let scene = generate_scene(&SceneConfig::default()).unwrap();
    let cfg = InstanceConfig { n_correspondences: Some(500), inlier_ratio: 0.4, noise_sigma_px: 1.0, ..Default::default() };
    let inst = make_triplet_instance(&scene, &cfg, &mut rng_for(1, 0)).unwrap();
    let solver = TripletSolver::new(SolverKind::FourPoint(VirtualKind::MeanDelta), None).unwrap();

    let mut group = c.benchmark_group("ransac_4p3v_md_500x200");
    group.sample_size(10);
    for exec in [Execution::Sequential, Execution::Parallel] {
        let rc = RansacConfig { max_iterations: 200, seed: 7, execution: exec, ..Default::default() };
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &rc, |b, rc| {
            b.iter(|| run_ransac(black_box(&inst.tracks), &solver, rc).unwrap().score)
        });
    }
    group.finish();
}

fn sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("barycentric_sweep_2000");
    group.sample_size(10);
    for exec in [Execution::Sequential, Execution::Parallel] {
        group.bench_function(format!("{exec:?}"), |b| b.iter(|| barycentric_sweep(2000, 19, 0, exec).unwrap().argmin));
    }
    group.finish();
}

criterion_group!(benches, ransac, sweep);
criterion_main!(benches);
