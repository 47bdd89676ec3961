//! Per-island quantification: path probabilities, posterior summary,
//! optional MCMC, and the diagnostic flags reported alongside estimates.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;

use crate::distributions::FragmentDistributions;
use crate::error::{Error, Result};
use crate::genome::GeneIsland;
use crate::inference::{asymptotic_posterior, mh_sample, summarize, EmOptions, MhChain, MhOptions, PosteriorSummary, PriorSpec};
use crate::pathing::PathCountTable;
use crate::pathprob::{build_prob_matrix, PathProbMatrix};
use crate::seeds::derive_seed;

pub const ESTIMATES_HEADER: [&str; 9] = [
    "island_id",
    "transcript_id",
    "pi_mode",
    "se",
    "ci_lo",
    "ci_hi",
    "em_iters",
    "converged",
    "flags",
];
pub const SAMPLES_HEADER: [&str; 4] = ["island_id", "transcript_id", "draw_index", "pi"];
pub const PROBS_HEADER: [&str; 4] = ["island_id", "path", "variant_id", "p_kd"];

/// Significant digits for probabilities unless overridden.
pub const DEFAULT_DIGITS: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantifyOptions {
    /// Symmetric Dirichlet parameter; 1 gives maximum likelihood.
    pub prior_q: f64,
    pub em: EmOptions,
    pub ci_level: f64,
    /// Run the sampler per island; `seed` is the base from which island seeds derive.
    pub mcmc: Option<MhOptions>,
}

impl Default for QuantifyOptions {
    fn default() -> Self {
        Self {
            prior_q: 2.0,
            em: EmOptions::default(),
            ci_level: 0.95,
            mcmc: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IslandResult {
    pub island_id: String,
    pub variants: Vec<String>,
    pub summary: Option<PosteriorSummary>,
    pub chain: Option<MhChain>,
    pub matrix: Option<PathProbMatrix>,
    pub flags: Vec<String>,
    /// Short reason when inference could not run.
    pub failed: Option<String>,
}

impl IslandResult {
    pub fn is_failed(&self) -> bool {
        self.failed.is_some()
    }

    fn failure(island: &GeneIsland, flags: Vec<String>, reason: &str) -> Self {
        let mut flags = flags;
        flags.push(format!("failed:{reason}"));
        Self {
            island_id: island.island_id.clone(),
            variants: island.variants.iter().map(|v| v.id.clone()).collect(),
            summary: None,
            chain: None,
            matrix: None,
            flags,
            failed: Some(reason.to_string()),
        }
    }
}

fn failure_reason(e: &Error) -> &'static str {
    match e {
        Error::Truncation { .. } => "truncation",
        Error::DegenerateStart { .. } => "degenerate-start",
        Error::Inference(_) => "inference",
        _ => "input",
    }
}

/// Quantifies one island. Errors local to the island become a `failed:` flag.
pub fn quantify_island(
    island: &GeneIsland,
    table: Option<&PathCountTable>,
    dists: &FragmentDistributions,
    read_length: i64,
    opts: &QuantifyOptions,
) -> IslandResult {
    let mut flags = Vec::new();
    if island.mixed_strand {
        flags.push("mixed-strand".to_string());
    }
    let empty = PathCountTable::new(island.island_id.clone());
    let table = table.unwrap_or(&empty);

    let matrix = match build_prob_matrix(island, table.counts.keys(), dists, read_length) {
        Ok(m) => m,
        Err(e) => {
            log::warn!("island {}: {e}", island.island_id);
            return IslandResult::failure(island, flags, failure_reason(&e));
        }
    };
    if !matrix.zero_rows.is_empty() {
        let dropped: u64 = matrix.zero_rows.iter().map(|p| table.counts[p]).sum();
        log::warn!(
            "island {}: {} paths ({} fragments) impossible under every variant",
            island.island_id,
            matrix.zero_rows.len(),
            dropped
        );
        flags.push(format!("zero-rows={}", matrix.zero_rows.len()));
    }
    if matrix.clamped > 0 {
        flags.push(format!("clamped={}", matrix.clamped));
    }
    if !matrix.duplicate_columns().is_empty() && matrix.n_paths() > 0 {
        flags.push("duplicate-variants".to_string());
    }
    let counts: Vec<f64> = matrix.paths.iter().map(|p| table.counts[p] as f64).collect();

    let prior = match PriorSpec::symmetric(matrix.n_variants(), opts.prior_q) {
        Ok(p) => p,
        Err(e) => return IslandResult::failure(island, flags, failure_reason(&e)),
    };
    let summary = match summarize(&counts, &matrix, &prior, &opts.em, opts.ci_level) {
        Ok(s) => s,
        Err(e) => {
            log::warn!("island {}: {e}", island.island_id);
            return IslandResult::failure(island, flags, failure_reason(&e));
        }
    };
    if summary.no_data {
        flags.push("no-data".to_string());
    }
    if !summary.converged {
        flags.push("non-converged".to_string());
    }
    if summary.singular {
        flags.push("singular-hessian".to_string());
    }

    let chain = match &opts.mcmc {
        Some(mh) if !summary.no_data => {
            let mh = MhOptions {
                seed: derive_seed(mh.seed, &[b"mcmc", island.island_id.as_bytes()]),
                ..mh.clone()
            };
            let asym = asymptotic_posterior(&summary.pi_mode, &counts, &matrix, &prior);
            match mh_sample(&asym, &counts, &matrix, &prior, &mh) {
                Ok(c) => {
                    if c.low_acceptance {
                        flags.push("low-acceptance".to_string());
                    }
                    Some(c)
                }
                Err(e) => return IslandResult::failure(island, flags, failure_reason(&e)),
            }
        }
        _ => None,
    };

    IslandResult {
        island_id: island.island_id.clone(),
        variants: matrix.variants.clone(),
        summary: Some(summary),
        chain,
        matrix: Some(matrix),
        flags,
        failed: None,
    }
}

/// Quantifies every island in parallel; results are sorted by island id.
///
/// Count tables naming an island absent from the annotation are an input error.
pub fn quantify_all(
    islands: &[GeneIsland],
    tables: &BTreeMap<String, PathCountTable>,
    dists: &FragmentDistributions,
    read_length: i64,
    opts: &QuantifyOptions,
) -> Result<Vec<IslandResult>> {
    if let Some(id) = tables.keys().find(|id| !islands.iter().any(|i| &i.island_id == *id)) {
        return Err(Error::InvalidInput(format!(
            "path counts for island '{id}' which is not in the annotation"
        )));
    }
    let mut out: Vec<IslandResult> = islands
        .par_iter()
        .map(|isl| quantify_island(isl, tables.get(&isl.island_id), dists, read_length, opts))
        .collect();
    out.sort_by(|a, b| a.island_id.cmp(&b.island_id));
    Ok(out)
}

pub fn failure_fraction(results: &[IslandResult]) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    results.iter().filter(|r| r.is_failed()).count() as f64 / results.len() as f64
}

/// `x` rounded to `digits` significant digits, printed without exponent
/// noise; `None` prints the shortest round-trip representation.
pub fn format_prob(x: f64, digits: Option<usize>) -> String {
    match digits {
        None => format!("{x}"),
        Some(_) if x == 0.0 || !x.is_finite() => format!("{x}"),
        Some(d) => {
            let rounded: f64 = format!("{:.*e}", d.max(1) - 1, x).parse().unwrap();
            format!("{rounded}")
        }
    }
}

fn join_flags(flags: &[String]) -> String {
    if flags.is_empty() {
        ".".to_string()
    } else {
        flags.join(";")
    }
}

/// Writes the estimates table, one row per (island, variant), variants sorted by id.
pub fn write_estimates<W: Write>(mut w: W, results: &[IslandResult], digits: Option<usize>) -> std::io::Result<()> {
    writeln!(w, "{}", ESTIMATES_HEADER.join("\t"))?;
    let f = |x: f64| format_prob(x, digits);
    for r in results {
        let flags = join_flags(&r.flags);
        let mut order: Vec<usize> = (0..r.variants.len()).collect();
        order.sort_by(|&a, &b| r.variants[a].cmp(&r.variants[b]));
        for d in order {
            match &r.summary {
                Some(s) => writeln!(
                    w,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    r.island_id,
                    r.variants[d],
                    f(s.pi_mode[d]),
                    f(s.se[d]),
                    f(s.ci[d].0),
                    f(s.ci[d].1),
                    s.em_iters,
                    s.converged,
                    flags
                )?,
                None => writeln!(w, "{}\t{}\tNA\tNA\tNA\tNA\t0\tfalse\t{}", r.island_id, r.variants[d], flags)?,
            }
        }
    }
    Ok(())
}

/// Writes posterior draws, if any were taken.
pub fn write_samples<W: Write>(mut w: W, results: &[IslandResult], digits: Option<usize>) -> std::io::Result<()> {
    writeln!(w, "{}", SAMPLES_HEADER.join("\t"))?;
    for r in results {
        let Some(chain) = &r.chain else { continue };
        let mut order: Vec<usize> = (0..r.variants.len()).collect();
        order.sort_by(|&a, &b| r.variants[a].cmp(&r.variants[b]));
        for d in order {
            for (i, s) in chain.samples.iter().enumerate() {
                writeln!(w, "{}\t{}\t{}\t{}", r.island_id, r.variants[d], i, format_prob(s[d], digits))?;
            }
        }
    }
    Ok(())
}

/// Writes every `p_kd` used for inference.
pub fn write_prob_dump<W: Write>(mut w: W, results: &[IslandResult], digits: Option<usize>) -> std::io::Result<()> {
    writeln!(w, "{}", PROBS_HEADER.join("\t"))?;
    for r in results {
        let Some(m) = &r.matrix else { continue };
        for (k, p) in m.paths.iter().enumerate() {
            for (d, v) in m.variants.iter().enumerate() {
                writeln!(w, "{}\t{}\t{}\t{}", m.island_id, p, v, format_prob(m.get(k, d), digits))?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{LengthPmf, StartCdf};
    use crate::genome::{build_islands, parse_annotation, subdivide_exons};
    use crate::pathing::ExonPath;

    const TOY: &str = "gene_id\ttranscript_id\tchrom\tstrand\texon_start\texon_end
toy\ttx1\tchr1\t+\t101\t400
toy\ttx1\tchr1\t+\t1001\t1100
toy\ttx1\tchr1\t+\t2001\t2500
toy\ttx2\tchr1\t+\t101\t400
toy\ttx2\tchr1\t+\t2001\t2500
toy\ttx3\tchr1\t+\t101\t400
toy\ttx3\tchr1\t+\t1001\t1100
solo\ts1\tchr2\t-\t100\t999
";

    fn islands() -> Vec<GeneIsland> {
        build_islands(&parse_annotation(TOY.as_bytes(), "toy").unwrap())
            .iter()
            .map(subdivide_exons)
            .collect()
    }

    fn dists() -> FragmentDistributions {
        FragmentDistributions::single(
            LengthPmf::from_weights([(180, 1.0), (200, 2.0), (220, 1.0)]).unwrap(),
            StartCdf::uniform(200),
        )
    }

    fn table(id: &str, rows: &[(&str, u64)]) -> PathCountTable {
        let mut t = PathCountTable::new(id);
        for (p, n) in rows {
            t.add(p.parse::<ExonPath>().unwrap(), *n);
        }
        t
    }

    #[test]
    fn significant_digits() {
        assert_eq!(format_prob(0.123456789, Some(6)), "0.123457");
        assert_eq!(format_prob(1.0, Some(6)), "1");
        assert_eq!(format_prob(0.0, Some(6)), "0");
        assert_eq!(format_prob(0.1 + 0.2, None), "0.30000000000000004");
    }

    #[test]
    fn single_variant_and_missing_counts() {
        let mut tables = BTreeMap::new();
        tables.insert("solo".to_string(), table("solo", &[("{1}|{1}", 40)]));
        let res = quantify_all(&islands(), &tables, &dists(), 75, &QuantifyOptions::default()).unwrap();
        assert_eq!(res.len(), 2);
        let solo = &res[0];
        assert_eq!(solo.island_id, "solo");
        assert_eq!(solo.summary.as_ref().unwrap().pi_mode, vec![1.0]);
        let toy = &res[1];
        assert!(toy.flags.contains(&"no-data".to_string()));
        assert_eq!(toy.summary.as_ref().unwrap().pi_mode, vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn unknown_island_is_input_error() {
        let mut tables = BTreeMap::new();
        tables.insert("nope".to_string(), table("nope", &[("{1}|{1}", 1)]));
        let err = quantify_all(&islands(), &tables, &dists(), 75, &QuantifyOptions::default()).unwrap_err();
        assert!(err.is_input_error());
    }

    #[test]
    fn impossible_paths_are_flagged() {
        let isl = &islands()[0];
        let t = table("toy", &[("{1}|{1}", 30), ("{1}|{2}", 10), ("{3}|{1}", 2)]);
        let r = quantify_island(isl, Some(&t), &dists(), 75, &QuantifyOptions::default());
        assert!(r.flags.contains(&"zero-rows=1".to_string()), "{:?}", r.flags);
        assert!(r.failed.is_none());
    }

    #[test]
    fn truncation_fails_only_that_island() {
        let long = FragmentDistributions::single(LengthPmf::point_mass(850), StartCdf::uniform(50));
        let mut tables = BTreeMap::new();
        tables.insert("toy".to_string(), table("toy", &[("{1}|{3}", 5)]));
        let res = quantify_all(&islands(), &tables, &long, 75, &QuantifyOptions::default()).unwrap();
        let toy = res.iter().find(|r| r.island_id == "toy").unwrap();
        assert_eq!(toy.failed.as_deref(), Some("truncation"));
        assert_eq!(failure_fraction(&res), 0.5);
        let mut buf = Vec::new();
        write_estimates(&mut buf, &res, Some(6)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("toy\ttx2\tNA\tNA\tNA\tNA\t0\tfalse\tfailed:truncation"));
    }

    #[test]
    fn mcmc_draws_are_written() {
        let isl = &islands()[0];
        let t = table("toy", &[("{1}|{1}", 30), ("{1}|{2}", 10), ("{1}|{3}", 12), ("{1,3}|{3}", 4)]);
        let opts = QuantifyOptions {
            mcmc: Some(MhOptions {
                n: 300,
                burnin: 100,
                seed: 5,
                ..Default::default()
            }),
            ..Default::default()
        };
        let r = quantify_island(isl, Some(&t), &dists(), 75, &opts);
        assert_eq!(r.chain.as_ref().unwrap().samples.len(), 200);
        let mut buf = Vec::new();
        write_samples(&mut buf, &[r], None).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 3 * 200);
    }
}
