//! Sequential against parallel execution for batch evaluation and oracle
//! enumeration.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use planforge_core::constraints::{enumerate_feasible_with, evaluate_batch, DEFAULT_CAP};
use planforge_core::demo::{demo_world, flawed};
use planforge_core::fixtures::{oracle_query, oracle_sandbox, ORACLE_CHEAPEST_ONE_PERSON};
use planforge_core::{Execution, Plan, Query};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn evaluation(c: &mut Criterion) {
    let world = demo_world();
    let items: Vec<(Plan, Query)> = world
        .validation
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let gold = &world.gold[&q.id];
            let plan = if i % 2 == 0 { gold.clone() } else { flawed(gold, &q.origin_city, i) };
            (plan, q.clone())
        })
        .collect();
    let mut group = c.benchmark_group("evaluate_batch");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::new(name, items.len()), &items, |b, items| {
            b.iter(|| evaluate_batch(exec, black_box(items), &world.sandbox))
        });
    }
    group.finish();
}

fn oracle(c: &mut Criterion) {
    let sandbox = oracle_sandbox();
    let query = oracle_query(ORACLE_CHEAPEST_ONE_PERSON);
    let mut group = c.benchmark_group("enumerate_feasible");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| enumerate_feasible_with(exec, black_box(&query), &sandbox, usize::MAX, DEFAULT_CAP).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, evaluation, oracle);
criterion_main!(benches);
