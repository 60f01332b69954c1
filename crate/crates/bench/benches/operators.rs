use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use fewha::operators::sh;
use fewha::{presets, MeasurementSet, Reconstructor, Wavelet};

fn wavelet(c: &mut Criterion) {
    let mut group = c.benchmark_group("dwt_inverse");
    for j in [5u32, 6, 7] {
        let side = 1usize << j;
        let w = Wavelet::daubechies(3).unwrap();
        let mut data: Vec<f64> = (0..side * side).map(|k| (k as f64 * 0.37).sin()).collect();
        group.bench_with_input(BenchmarkId::from_parameter(side), &side, |b, &side| {
            b.iter(|| w.inverse_in_place(black_box(&mut data), side).unwrap())
        });
    }
    group.finish();
}

fn shack_hartmann(c: &mut Criterion) {
    let n = 80;
    let mask = vec![true; n * n];
    let wf: Vec<f64> = (0..(n + 1) * (n + 1)).map(|k| (k as f64 * 0.11).cos()).collect();
    let mut slopes = vec![0.0; 2 * n * n];
    c.bench_function("sh_apply_80", |b| {
        b.iter(|| sh::apply(black_box(&wf), n, &mask, &mut slopes))
    });
    c.bench_function("sh_transpose_80", |b| {
        let mut out = vec![0.0; (n + 1) * (n + 1)];
        b.iter(|| sh::apply_transpose(black_box(&slopes), n, &mask, &mut out))
    });
}

fn operator_m(c: &mut Criterion) {
    let geometry = presets::maory();
    let mut rec = Reconstructor::new(&geometry, None).unwrap();
    let dim = rec.ops().coefficient_dim();
    let x: Vec<f64> = (0..dim).map(|k| (k as f64 * 0.013).sin()).collect();
    let mut y = vec![0.0; dim];
    c.bench_function("apply_m_maory", |b| {
        b.iter(|| rec.apply_m(black_box(&x), &mut y).unwrap())
    });

    let mut state = rec.new_state();
    let layout = rec.ops().slope_layout.clone();
    let s = MeasurementSet::from_vec(&layout, (0..layout.len()).map(|k| (k as f64 * 0.07).sin()).collect()).unwrap();
    let mut group = c.benchmark_group("reconstruct_step_maory");
    group.sample_size(20);
    group.bench_function("4_iterations", |b| {
        b.iter(|| rec.reconstruct_step(&mut state, black_box(&s)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, wavelet, shack_hartmann, operator_m);
criterion_main!(benches);
