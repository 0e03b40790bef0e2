//! Per-trial loss/gradient over a 5 × 5 grid, through `par::map` (rayon when
//! the `parallel` feature is on) and through the sequential baseline.

use criterion::{criterion_group, criterion_main, Criterion};
use pam_node::par;
use pam_node::plant::{generate_grid, GridSpec, NoiseSpec, SyntheticPlant};
use pam_node::training::{dataset_loss_grad, initial_model, Prepared};

fn bench(c: &mut Criterion) {
    let ds = generate_grid(&SyntheticPlant::default(), &GridSpec::desk(), 1.0, 0, NoiseSpec::NONE).unwrap();
    let prepared: Vec<Prepared> = ds.iter().map(|d| Prepared::new(d, 0.5, 0.01).unwrap()).collect();
    let model = initial_model(0);

    let mut g = c.benchmark_group("dataset_loss_grad_5x5");
    g.sample_size(10);
    g.bench_function(if par::is_parallel() { "par_map_rayon" } else { "par_map_fallback" }, |b| {
        b.iter(|| par::map(&prepared, |p| dataset_loss_grad(&model, p).loss))
    });
    g.bench_function("sequential", |b| b.iter(|| par::map_sequential(&prepared, |p| dataset_loss_grad(&model, p).loss)));
    g.finish();

    let mut g = c.benchmark_group("generate_grid_5x5");
    g.sample_size(10);
    let plant = SyntheticPlant::default();
    let grid = GridSpec::desk();
    let points = grid.points();
    g.bench_function("par_map", |b| {
        b.iter(|| par::map(&points, |&(i, j, pf, pe)| pam_node::plant::generate_dataset(&plant, pf, pe, &grid.excitation(i, j, 1.0), 0, NoiseSpec::NONE).is_ok()))
    });
    g.bench_function("sequential", |b| {
        b.iter(|| par::map_sequential(&points, |&(i, j, pf, pe)| pam_node::plant::generate_dataset(&plant, pf, pe, &grid.excitation(i, j, 1.0), 0, NoiseSpec::NONE).is_ok()))
    });
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
