use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use pao_reid::calibration::{ThresholdGrid, ThresholdTable};
use pao_reid::metrics::{evaluate_retrieval, DEFAULT_CMC_RANKS};
use pao_reid::pipeline::{attribute_columns, prepare};
use pao_reid::retrieval::{run_queries, FilterSpec, RankOrder};
use pao_reid::{generate, Execution, Ontology, Split, SynthConfig};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn bench(c: &mut Criterion) {
    let ontology = Ontology::market1501();
    let cfg = SynthConfig {
        num_identities: 400,
        images_per_identity: 6,
        dim: 128,
        ..SynthConfig::default()
    };
    let dataset = generate(&cfg, &ontology).expect("synthetic dataset");
    let train = dataset.view(Split::Train);
    let (probs, labels) =
        attribute_columns(&train, ontology.len(), None, Execution::Sequential).expect("columns");
    let grid = ThresholdGrid::default();
    let table = ThresholdTable::calibrate(&ontology, &probs, &labels, &grid, Execution::Sequential)
        .expect("calibrate");
    let queries = prepare(
        &dataset.view(Split::Query),
        None,
        &table,
        Execution::Sequential,
    )
    .expect("queries");
    let gallery = prepare(
        &dataset.view(Split::Gallery),
        None,
        &table,
        Execution::Sequential,
    )
    .expect("gallery");
    let filter = FilterSpec::single("wearing hat")
        .resolve(&ontology)
        .expect("filter");
    let results = run_queries(
        &queries,
        &gallery,
        &filter,
        RankOrder::FilterFirst,
        true,
        Execution::Sequential,
    )
    .expect("rankings");

    let mut group = c.benchmark_group("run_queries");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| {
                run_queries(
                    &queries,
                    &gallery,
                    &filter,
                    RankOrder::FilterFirst,
                    true,
                    exec,
                )
                .unwrap()
            })
        });
    }
    group.finish();

    let mut group = c.benchmark_group("calibrate");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| ThresholdTable::calibrate(&ontology, &probs, &labels, &grid, exec).unwrap())
        });
    }
    group.finish();

    let mut group = c.benchmark_group("evaluate_retrieval");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| {
                evaluate_retrieval(&results, &dataset, true, &DEFAULT_CMC_RANKS, exec).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
