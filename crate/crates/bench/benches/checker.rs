use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use homecheck::depgraph::handlers_of;
use homecheck::{analyze, check_system, CheckOptions, StoreKind};
use homecheck_bench::config;

fn options(k: usize, store: StoreKind) -> CheckOptions {
    let mut o = CheckOptions::default();
    o.exploration.max_events = k;
    o.exploration.store = store;
    o.exploration.failures.offline = true;
    o.exploration.failures.comm = true;
    o
}

fn explore(c: &mut Criterion) {
    let mut g = c.benchmark_group("explore");
    for (name, k) in [("goodgroup", 5), ("goodgroup", 7), ("household", 4)] {
        let cfg = config(name);
        g.bench_with_input(BenchmarkId::new(name, k), &k, |b, &k| {
            b.iter(|| check_system(&cfg, &options(k, StoreKind::Exact)).unwrap())
        });
    }
    g.finish();
}

fn stores(c: &mut Criterion) {
    let cfg = config("household");
    let mut g = c.benchmark_group("store");
    for (label, store) in [("exact", StoreKind::Exact), ("bitstate", StoreKind::bitstate())] {
        g.bench_function(label, |b| b.iter(|| check_system(&cfg, &options(4, store)).unwrap()));
    }
    g.finish();
}

fn dependencies(c: &mut Criterion) {
    let cfg = config("fiveapps");
    c.bench_function("analyze/fiveapps", |b| {
        b.iter(|| analyze(&handlers_of(cfg.apps.iter().map(|a| (a.id.as_str(), &*a.spec)))))
    });
}

criterion_group!(benches, explore, stores, dependencies);
criterion_main!(benches);
