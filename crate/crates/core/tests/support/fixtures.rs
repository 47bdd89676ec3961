//! Annotation fixtures and random island generators.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use splicequant::genome::{build_islands, parse_annotation, subdivide_exons, GeneIsland, RawGene};

pub const HEADER: &str = "gene_id\ttranscript_id\tchrom\tstrand\texon_start\texon_end\n";

/// Three-variant gene: exons 101-400, 1001-1100, 2001-2500;
/// tx1 = {1,2,3}, tx2 = {1,3}, tx3 = {1,2}.
pub const TOY: &str = "gene_id\ttranscript_id\tchrom\tstrand\texon_start\texon_end
toy\ttx1\tchr1\t+\t101\t400
toy\ttx1\tchr1\t+\t1001\t1100
toy\ttx1\tchr1\t+\t2001\t2500
toy\ttx2\tchr1\t+\t101\t400
toy\ttx2\tchr1\t+\t2001\t2500
toy\ttx3\tchr1\t+\t101\t400
toy\ttx3\tchr1\t+\t1001\t1100
";

pub const THREE_FRAGMENTS: &str = "fragment_id\tchrom\tleft_blocks\tright_blocks
f1\tchr1\t110-185\t200-274
f2\tchr1\t361-400;1001-1035\t2011-2085
f3\tchr1\t301-375\t1021-1095
";

pub fn genes(text: &str) -> Vec<RawGene> {
    parse_annotation(text.as_bytes(), "fixture").unwrap()
}

pub fn islands(text: &str) -> Vec<GeneIsland> {
    build_islands(&genes(text)).iter().map(subdivide_exons).collect()
}

pub fn toy_island() -> GeneIsland {
    islands(TOY).remove(0)
}

/// Annotation rows for one random gene on its own chromosome: `n_exons`
/// exons and `n_variants` distinct exon subsets, each at least `min_len` bp.
pub fn random_gene_rows(rng: &mut ChaCha8Rng, name: &str, n_variants: usize, exon_len: (i64, i64), min_len: i64) -> String {
    loop {
        let n_exons = rng.random_range(3..=6);
        let mut exons = Vec::new();
        let mut pos = rng.random_range(100..1000);
        for _ in 0..n_exons {
            let len = rng.random_range(exon_len.0..=exon_len.1);
            exons.push((pos, pos + len - 1));
            pos += len + rng.random_range(100..600);
        }
        let mut subsets: Vec<u32> = Vec::new();
        let full = (1u32 << n_exons) - 1;
        let mut tries = 0;
        while subsets.len() < n_variants && tries < 200 {
            tries += 1;
            let mask = rng.random_range(1..=full);
            let len: i64 = (0..n_exons)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| exons[i].1 - exons[i].0 + 1)
                .sum();
            if len >= min_len && !subsets.contains(&mask) {
                subsets.push(mask);
            }
        }
        if subsets.len() < n_variants {
            continue;
        }
        let strand = if rng.random_bool(0.5) { "+" } else { "-" };
        let mut out = String::new();
        for (v, mask) in subsets.iter().enumerate() {
            for (i, (s, e)) in exons.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    out.push_str(&format!("{name}\t{name}.t{}\tchr_{name}\t{strand}\t{s}\t{e}\n", v + 1));
                }
            }
        }
        return out;
    }
}

/// A random island with `n_variants` distinct variants.
pub fn random_island(rng: &mut ChaCha8Rng, name: &str, n_variants: usize, exon_len: (i64, i64), min_len: i64) -> GeneIsland {
    let text = format!("{HEADER}{}", random_gene_rows(rng, name, n_variants, exon_len, min_len));
    islands(&text).remove(0)
}
