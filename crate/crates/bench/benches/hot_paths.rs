//! Hot paths: Frenet projection, the e2e forward pass, candidate sampling,
//! and full feature evaluation of one candidate.

use criterion::{black_box, criterion_group, criterion_main, Criterion};

use switchpred_bench::fixture;
use switchpred_core::planner::{compute_features, sample_candidates, PlanConfig};
use switchpred_core::scenario::World;
use switchpred_core::types::{Point, LABEL_LEN};
use switchpred_core::ReferencePath;

fn circle_path(n: usize) -> ReferencePath {
    let pts: Vec<Point> = (0..n)
        .map(|i| {
            let a = i as f64 / (n - 1) as f64 * std::f64::consts::TAU;
            Point::new(20.0 * a.cos(), 20.0 * a.sin())
        })
        .collect();
    ReferencePath::new(pts)
}

fn bench_frenet(c: &mut Criterion) {
    let path = circle_path(200);
    let probes: Vec<Point> = (0..64)
        .map(|i| {
            let a = i as f64 * 0.1;
            Point::new(21.5 * a.cos(), 18.5 * a.sin())
        })
        .collect();
    c.bench_function("frenet_projection_64", |b| {
        b.iter(|| {
            for p in &probes {
                black_box(path.to_frenet(black_box(*p)));
            }
        })
    });
}

fn bench_e2e_forward(c: &mut Criterion) {
    let fx = fixture();
    let scene = &fx.data.segments[0].scene;
    c.bench_function("e2e_forward", |b| {
        b.iter(|| black_box(fx.model.predict(black_box(scene)).unwrap()))
    });
}

fn bench_candidates(c: &mut Criterion) {
    let fx = fixture();
    let scene = &fx.data.segments[0].scene;
    let world = World::find(&fx.worlds, &scene.map_id).unwrap();
    let path = &world.paths[scene.reference_path];
    let config = PlanConfig::default();

    c.bench_function("candidate_sampling", |b| {
        b.iter(|| {
            black_box(sample_candidates(
                black_box(scene),
                path,
                &config.family,
                LABEL_LEN,
            ))
        })
    });

    let candidates = sample_candidates(scene, path, &config.family, LABEL_LEN).unwrap();
    let candidate = &candidates[0];
    c.bench_function("feature_eval_one_candidate", |b| {
        b.iter(|| {
            black_box(compute_features(
                black_box(scene),
                world,
                &config,
                candidate,
                &[],
            ))
        })
    });
}

criterion_group!(benches, bench_frenet, bench_e2e_forward, bench_candidates);
criterion_main!(benches);
