use std::collections::BTreeMap;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use mvlift_core::geometry::{project, triangulate_dlt, world_to_camera};

fn dlt(c: &mut Criterion) {
    let data = mvlift_bench::dataset(1);
    let sample = &data.samples[0];
    let views: BTreeMap<_, _> = data
        .rig
        .ids()
        .zip(sample.detections.iter().cloned())
        .collect();
    c.bench_function("triangulate_dlt 16 landmarks x 4 views", |b| {
        b.iter(|| triangulate_dlt(black_box(&views), &data.rig).unwrap())
    });

    let gt = sample.gt_pose.clone().unwrap();
    let cam = &data.rig.cameras()[0];
    c.bench_function("world_to_camera + project 16 landmarks", |b| {
        b.iter(|| project(&world_to_camera(black_box(&gt), cam).unwrap(), cam).unwrap())
    });
}

criterion_group!(benches, dlt);
criterion_main!(benches);
