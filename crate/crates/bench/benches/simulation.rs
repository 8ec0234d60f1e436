use criterion::{criterion_group, criterion_main, Criterion};
use p2plbs_core::harness::{privacy_report, run_scenario, ScenarioConfig};

const SCENARIO: &str = r#"
seed = 3
duration_s = 600.0

[area]
width_m = 300.0
height_m = 300.0

[placement]
nodes = 40

[workload]
rate_per_min = 1.0
poi_types = [{ poi_type = 1, weight = 1.0 }, { poi_type = 2, weight = 1.0 }]

[protocol]
cache_capacity = 30
"#;

fn simulation(c: &mut Criterion) {
    let cfg = ScenarioConfig::from_toml(SCENARIO).unwrap();
    let mut group = c.benchmark_group("simulation");
    group.sample_size(10);
    group.bench_function("run_40_nodes_600s", |b| {
        b.iter(|| run_scenario(cfg.clone()).unwrap())
    });
    let log = run_scenario(cfg).unwrap().log;
    group.bench_function("privacy_report", |b| {
        b.iter(|| privacy_report(log.as_str()))
    });
    group.finish();
}

criterion_group!(benches, simulation);
criterion_main!(benches);
