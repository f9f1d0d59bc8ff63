use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rerank_bench::synthetic_passages;
use rerank_core::bm25::{Analyzer, Bm25Params, IndexBuilder};
use rerank_core::Query;

fn build(c: &mut Criterion) {
    let docs = synthetic_passages(2_000, 60);
    c.bench_function("bm25_index_2000_docs", |b| {
        b.iter(|| {
            let mut builder = IndexBuilder::new(Analyzer::default());
            for d in &docs {
                builder.add(d).unwrap();
            }
            black_box(builder.finish())
        })
    });
}

fn search(c: &mut Criterion) {
    let mut builder = IndexBuilder::new(Analyzer::default());
    for d in &synthetic_passages(10_000, 60) {
        builder.add(d).unwrap();
    }
    let index = builder.finish();
    let params = Bm25Params::default();
    let query = Query::new("q", "w1 w42 w300 w7").unwrap();
    c.bench_function("bm25_search_top100", |b| {
        b.iter(|| index.search(&params, black_box(&query), 100).unwrap())
    });
}

criterion_group!(benches, build, search);
criterion_main!(benches);
