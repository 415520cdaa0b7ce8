use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ttnheom::oracle::{dense_init, dense_rhs};
use ttnheom::propagate::step_ps1;
use ttnheom::tdvp::{direct_rhs, Packing};
use ttnheom::{IntegratorConfig, C64};
use ttnheom_bench::reduced_fixture;

fn kernels(c: &mut Criterion) {
    let mut group = c.benchmark_group("reduced_bath");
    group.sample_size(10);
    for rank in [8, 16] {
        let (inst, topo, st) = reduced_fixture(rank);
        let fg = inst.generator.freeze(0.0);
        let pk = Packing::new(&topo, &st.ranks);
        let y = pk.pack(&st.tensors);
        let mut dy = vec![C64::new(0.0, 0.0); y.len()];
        group.bench_with_input(BenchmarkId::new("direct_rhs", rank), &rank, |b, _| {
            b.iter(|| direct_rhs(&fg, &topo, &pk, &y, &mut dy, 1e-4).unwrap())
        });
        let ode = IntegratorConfig::default();
        group.bench_with_input(BenchmarkId::new("ps1_step", rank), &rank, |b, _| {
            b.iter(|| {
                let mut s = st.clone();
                step_ps1(&mut s, &inst.generator, 0.1, &ode).unwrap();
            })
        });
    }
    let (inst, _, _) = reduced_fixture(2);
    let om = dense_init(&inst.generator, &inst.rho0).unwrap();
    group.bench_function("dense_rhs", |b| b.iter(|| dense_rhs(&inst.generator, &om, 0.0)));
    group.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
