use std::collections::BTreeMap;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use splicequant::genome::{build_islands, parse_annotation, subdivide_exons};
use splicequant::inference::{em_estimate, summarize, EmOptions};
use splicequant::pathing::{count_paths, IslandIndex};
use splicequant::pathprob::build_prob_matrix;
use splicequant::simulate::{default_distributions, simulate_counts, simulate_fragments};
use splicequant::{GeneIsland, PriorSpec, QuantifyOptions, SimConfig};

const ANNOTATION: &str = "gene_id\ttranscript_id\tchrom\tstrand\texon_start\texon_end
g\tt1\tchr1\t+\t101\t400
g\tt1\tchr1\t+\t1001\t1100
g\tt1\tchr1\t+\t2001\t2500
g\tt1\tchr1\t+\t3001\t3400
g\tt2\tchr1\t+\t101\t400
g\tt2\tchr1\t+\t2001\t2500
g\tt2\tchr1\t+\t3001\t3400
g\tt3\tchr1\t+\t101\t400
g\tt3\tchr1\t+\t1001\t1100
g\tt3\tchr1\t+\t3001\t3600
g\tt4\tchr1\t+\t251\t400
g\tt4\tchr1\t+\t1001\t1100
g\tt4\tchr1\t+\t2001\t2500
";

fn island() -> GeneIsland {
    let genes = parse_annotation(ANNOTATION.as_bytes(), "bench").unwrap();
    subdivide_exons(&build_islands(&genes)[0])
}

fn config(island: &GeneIsland, n_frags: usize) -> SimConfig {
    SimConfig {
        islands: vec![island.clone()],
        true_pi: BTreeMap::from([(island.island_id.clone(), vec![0.4, 0.3, 0.2, 0.1])]),
        dists: default_distributions(),
        read_length: 75,
        n_frags: BTreeMap::from([(island.island_id.clone(), n_frags)]),
        n_replicates: 1,
        seed: 1,
        quantify: QuantifyOptions::default(),
        counts_only: true,
        min_rpkm: 0.0,
    }
}

fn bench_pipeline(c: &mut Criterion) {
    let island = island();
    let cfg = config(&island, 20_000);
    let table = simulate_counts(&cfg, &island, 0).unwrap();
    let matrix = build_prob_matrix(&island, table.counts.keys(), &cfg.dists, 75).unwrap();
    let counts: Vec<f64> = matrix
        .paths
        .iter()
        .map(|p| table.counts.get(p).copied().unwrap_or(0) as f64)
        .collect();
    let prior = PriorSpec::symmetric(4, 2.0).unwrap();
    let frags = simulate_fragments(&cfg, &island, 0).unwrap();
    let index = IslandIndex::new(vec![island.clone()]);

    c.bench_function("prob_matrix", |b| {
        b.iter(|| build_prob_matrix(black_box(&island), table.counts.keys(), &cfg.dists, 75).unwrap())
    });
    c.bench_function("em", |b| {
        b.iter(|| em_estimate(black_box(&counts), &matrix, &prior, &EmOptions::default()).unwrap())
    });
    c.bench_function("summarize", |b| {
        b.iter(|| summarize(black_box(&counts), &matrix, &prior, &EmOptions::default(), 0.95).unwrap())
    });
    c.bench_function("count_paths_20k", |b| {
        b.iter(|| count_paths(frags.iter().cloned().map(Ok), black_box(&index), Some(75)).unwrap())
    });
}

criterion_group!(benches, bench_pipeline);
criterion_main!(benches);
