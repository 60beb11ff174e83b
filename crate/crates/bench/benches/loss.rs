use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fpk_core::grid::{CollocationSet, Domain};
use fpk_core::{BoundaryMode, DynamicalSystem, PotentialNetwork, ResidualProblem};

fn loss_and_gradient(c: &mut Criterion) {
    let system = DynamicalSystem::make_builtin("vdp_rayleigh", 0.1f64.sqrt()).unwrap();
    let domain = Domain::cube(2, -2.0, 2.0).unwrap();
    let net = PotentialNetwork::init(2, 48, 0).unwrap();
    let mut group = c.benchmark_group("loss_and_gradient");
    for dx in [0.25, 0.05] {
        let grid = CollocationSet::uniform_grid(&domain, &[dx, dx]).unwrap();
        let problem = ResidualProblem::new(&system, &grid, BoundaryMode::ExpZero).unwrap();
        group.bench_with_input(
            BenchmarkId::from_parameter(grid.interior.len()),
            &problem,
            |b, p| b.iter(|| p.loss_and_gradient(&net).unwrap()),
        );
    }
    group.finish();
}

criterion_group!(benches, loss_and_gradient);
criterion_main!(benches);
