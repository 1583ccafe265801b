use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use softpose::augment::warp_rotation;
use softpose::{decode, encode, fit_mixture, EmConfig, KernelParams, PoseSample, Quaternion, Vec3};
use softpose_bench::{camera, grid, ramp_image, random_labels, two_lobe};

fn bench_grid(c: &mut Criterion) {
    let mut group = c.benchmark_group("build_grid");
    for m in [8, 16, 24] {
        group.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, &m| b.iter(|| grid(black_box(m))));
    }
    group.finish();
}

fn bench_codec(c: &mut Criterion) {
    let g = grid(16);
    let params = KernelParams::new(6.0, 16).unwrap();
    let labels = random_labels(64, 1);
    c.bench_function("encode_m16", |b| {
        let mut i = 0;
        b.iter(|| {
            i = (i + 1) % labels.len();
            encode(&g, black_box(&labels[i]), &params)
        })
    });
    let encoded: Vec<_> = labels.iter().map(|q| encode(&g, q, &params)).collect();
    c.bench_function("decode_m16", |b| {
        let mut i = 0;
        b.iter(|| {
            i = (i + 1) % encoded.len();
            decode(&g, black_box(&encoded[i])).unwrap()
        })
    });
}

fn bench_fit_mixture(c: &mut Criterion) {
    let g = grid(16);
    let params = KernelParams::new(6.0, 16).unwrap();
    let config = EmConfig::for_kernel(&params);
    let acts = two_lobe(&g, &params, 3);
    c.bench_function("fit_mixture_two_lobe_m16", |b| {
        b.iter(|| fit_mixture(&g, black_box(&acts), &config).unwrap())
    });
}

fn bench_warp(c: &mut Criterion) {
    let (w, h) = (640, 480);
    let img = ramp_image(w, h);
    let k = camera(w, h);
    let pose = PoseSample::new(Quaternion::IDENTITY, Vec3::new(0.0, 0.0, 20.0));
    let r = Quaternion::from_axis_angle(&Vec3::new(0.3, -0.5, 0.8), 8f64.to_radians()).unwrap();
    c.bench_function("warp_rotation_640x480", |b| {
        b.iter(|| warp_rotation(black_box(&img), &k, &r, &pose))
    });
}

criterion_group!(benches, bench_grid, bench_codec, bench_fit_mixture, bench_warp);
criterion_main!(benches);
