//! Exon path probabilities `p_kd = P(path k | variant d)`.
//!
//! A fragment of length `l` starting at transcript position `S` has its left
//! read on `[S, S + r - 1]` and its right read on `[S + l - r, S + l - 1]`.
//! Both reads follow a given path iff `a1 <= S <= b1` and `a2 <= S + l <= b2`
//! (see [`path_bounds`]), so the path probability is a sum over lengths of
//! start-interval probabilities under the truncated start distribution.

use std::collections::HashMap;
use std::io::Write;
use std::sync::Mutex;

use crate::distributions::{truncated_length_pmf, FragmentDistributions, LengthPmf, StartCdf};
use crate::error::{Error, Result};
use crate::genome::{spliced_layout, GeneIsland, SplicedLayout, Variant};
use crate::pathing::ExonPath;

/// Entries below this are stored as exact zeros.
pub const CLAMP_BELOW: f64 = 1e-300;

/// Admissible start range and start+length range for one path on one variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathBounds {
    pub a1: i64,
    pub b1: i64,
    pub a2: i64,
    pub b2: i64,
}

/// Position of `run` as a consecutive stretch of the variant's exons.
fn run_position(exon_ids: &[u32], run: &[u32]) -> Option<usize> {
    let j = exon_ids.iter().position(|&id| id == run[0])?;
    (exon_ids.get(j..j + run.len())? == run).then_some(j)
}

/// Bounds on the start `S` and on `S + L` for which a fragment follows `path`,
/// or `None` when either side is not a consecutive exon run of the variant.
pub fn path_bounds(path: &ExonPath, variant: &Variant, layout: &SplicedLayout, read_length: i64) -> Option<PathBounds> {
    let j = run_position(&variant.exon_ids, &path.left)?;
    let jr = run_position(&variant.exon_ids, &path.right)?;
    let jk = j + path.left.len() - 1;
    let jrk = jr + path.right.len() - 1;
    let s = |k: usize| layout.start_or_end(k);
    let r = read_length;
    Some(PathBounds {
        a1: s(j).max(s(jk) - r + 1),
        b1: (s(j + 1) - 1).min(s(jk + 1) - r),
        a2: (s(jr) + r).max(s(jrk) + 1),
        b2: (s(jr + 1) + r - 1).min(s(jrk + 1)),
    })
}

/// Length PMF for a transcript: truncated to `l <= T` and restricted to
/// lengths that leave at least one admissible start under φ.
pub fn conditional_length_pmf(pmf: &LengthPmf, phi: &StartCdf, transcript_len: i64) -> Result<LengthPmf> {
    let truncated = truncated_length_pmf(pmf, transcript_len)?;
    let t = transcript_len as f64;
    let admissible = truncated
        .iter()
        .filter(|&(l, _)| phi.eval((transcript_len - l + 1) as f64 / t) > 0.0);
    LengthPmf::from_weights(admissible).map_err(|_| Error::DegenerateStart {
        bound: (transcript_len - truncated.max_length() + 1) as f64 / t,
        length: transcript_len,
        fragment: truncated.max_length(),
    })
}

/// Probability of `path` under a variant, summing the start-interval
/// probability over the support of `lengths` (already conditioned on `T`).
pub fn path_probability(
    path: &ExonPath,
    variant: &Variant,
    layout: &SplicedLayout,
    lengths: &LengthPmf,
    phi: &StartCdf,
    read_length: i64,
) -> f64 {
    let Some(b) = path_bounds(path, variant, layout, read_length) else {
        return 0.0;
    };
    let t = layout.length;
    let tf = t as f64;
    let mut total = 0.0;
    for (l, pl) in lengths.iter() {
        let lo = b.a1.max(b.a2 - l) - 1;
        let hi = b.b1.min(b.b2 - l);
        if hi <= lo {
            continue;
        }
        let bound = (t - l + 1) as f64 / tf;
        let norm = phi.eval(bound);
        if norm <= 0.0 {
            continue;
        }
        let upper = phi.eval((hi as f64 / tf).min(bound));
        let lower = phi.eval((lo as f64 / tf).min(bound));
        let mass = (upper - lower) / norm;
        if mass > 0.0 {
            total += mass * pl;
        }
    }
    total.min(1.0)
}

/// The path a fragment at transcript start `start` with length `frag_len`
/// follows on a variant.
pub fn classify_fragment(variant: &Variant, layout: &SplicedLayout, start: i64, frag_len: i64, read_length: i64) -> Option<ExonPath> {
    let side = |from: i64, to: i64| -> Option<Vec<u32>> {
        let a = layout.exon_at(from)?;
        let b = layout.exon_at(to)?;
        Some(variant.exon_ids[a..=b].to_vec())
    };
    let left = side(start, start + read_length - 1)?;
    let right = side(start + frag_len - read_length, start + frag_len - 1)?;
    Some(ExonPath { left, right })
}

/// Path probability matrix for one island; rows are observed paths.
#[derive(Debug, Clone, PartialEq)]
pub struct PathProbMatrix {
    pub island_id: String,
    pub paths: Vec<ExonPath>,
    pub variants: Vec<String>,
    probs: Vec<f64>,
    /// Observed paths with zero probability under every variant; excluded from `paths`.
    pub zero_rows: Vec<ExonPath>,
    /// Entries below [`CLAMP_BELOW`] that were set to zero.
    pub clamped: usize,
}

impl PathProbMatrix {
    pub fn from_rows(island_id: impl Into<String>, variants: Vec<String>, rows: Vec<(ExonPath, Vec<f64>)>) -> Self {
        let n_var = variants.len();
        let mut paths = Vec::new();
        let mut probs = Vec::new();
        let mut zero_rows = Vec::new();
        let mut clamped = 0;
        for (p, mut row) in rows {
            assert_eq!(row.len(), n_var);
            for x in row.iter_mut() {
                if *x != 0.0 && *x < CLAMP_BELOW {
                    *x = 0.0;
                    clamped += 1;
                }
            }
            if row.iter().all(|&x| x == 0.0) {
                zero_rows.push(p);
            } else {
                paths.push(p);
                probs.extend(row);
            }
        }
        Self {
            island_id: island_id.into(),
            paths,
            variants,
            probs,
            zero_rows,
            clamped,
        }
    }

    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }

    pub fn n_variants(&self) -> usize {
        self.variants.len()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let n = self.variants.len();
        &self.probs[k * n..(k + 1) * n]
    }

    pub fn get(&self, k: usize, d: usize) -> f64 {
        self.probs[k * self.variants.len() + d]
    }

    pub fn column(&self, d: usize) -> Vec<f64> {
        (0..self.n_paths()).map(|k| self.get(k, d)).collect()
    }

    pub fn row_index(&self, path: &ExonPath) -> Option<usize> {
        self.paths.iter().position(|p| p == path)
    }

    /// Groups of variants whose columns are identical (non-identifiable).
    pub fn duplicate_columns(&self) -> Vec<Vec<usize>> {
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for d in 0..self.n_variants() {
            let col = self.column(d);
            match groups.iter_mut().find(|g| self.column(g[0]) == col) {
                Some(g) => g.push(d),
                None => groups.push(vec![d]),
            }
        }
        groups.retain(|g| g.len() > 1);
        groups
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (k, p) in self.paths.iter().enumerate() {
            for (d, v) in self.variants.iter().enumerate() {
                writeln!(w, "{}\t{}\t{}\t{}", self.island_id, p, v, self.get(k, d))?;
            }
        }
        Ok(())
    }
}

/// Per-variant inputs for probability evaluation.
struct Column<'a> {
    variant: &'a Variant,
    layout: SplicedLayout,
    lengths: LengthPmf,
    phi: &'a StartCdf,
}

fn columns<'a>(island: &'a GeneIsland, dists: &'a FragmentDistributions) -> Result<Vec<Column<'a>>> {
    island
        .variants
        .iter()
        .map(|v| {
            let bin = dists.lookup(v.length);
            let lengths = conditional_length_pmf(&bin.length, &bin.start, v.length).map_err(|e| match e {
                Error::Truncation { length, .. } => Error::Truncation {
                    island: island.island_id.clone(),
                    transcript: v.id.clone(),
                    length,
                },
                other => other,
            })?;
            Ok(Column {
                variant: v,
                layout: spliced_layout(island, v),
                lengths,
                phi: &bin.start,
            })
        })
        .collect()
}

/// Computes `p_kd` for every observed path and variant of an island.
pub fn build_prob_matrix<'p, I>(
    island: &GeneIsland,
    paths: I,
    dists: &FragmentDistributions,
    read_length: i64,
) -> Result<PathProbMatrix>
where
    I: IntoIterator<Item = &'p ExonPath>,
{
    let cols = columns(island, dists)?;
    let rows = paths
        .into_iter()
        .map(|p| {
            let row = cols
                .iter()
                .map(|c| path_probability(p, c.variant, &c.layout, &c.lengths, c.phi, read_length))
                .collect();
            (p.clone(), row)
        })
        .collect();
    Ok(PathProbMatrix::from_rows(
        island.island_id.clone(),
        island.variants.iter().map(|v| v.id.clone()).collect(),
        rows,
    ))
}

type RowsByIsland = HashMap<(String, i64), HashMap<ExonPath, Vec<f64>>>;

/// Row cache keyed by island and read length, for repeated matrix builds
/// against the same distributions (e.g. simulation replicates).
#[derive(Default)]
pub struct PathProbCache {
    rows: Mutex<RowsByIsland>,
}

impl PathProbCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn build<'p, I>(
        &self,
        island: &GeneIsland,
        paths: I,
        dists: &FragmentDistributions,
        read_length: i64,
    ) -> Result<PathProbMatrix>
    where
        I: IntoIterator<Item = &'p ExonPath>,
    {
        let key = (island.island_id.clone(), read_length);
        let paths: Vec<&ExonPath> = paths.into_iter().collect();
        let missing: Vec<&ExonPath> = {
            let guard = self.rows.lock().unwrap();
            let cached = guard.get(&key);
            paths
                .iter()
                .copied()
                .filter(|p| cached.is_none_or(|c| !c.contains_key(*p)))
                .collect()
        };
        if !missing.is_empty() {
            let cols = columns(island, dists)?;
            let fresh: Vec<(ExonPath, Vec<f64>)> = missing
                .iter()
                .map(|p| {
                    let row = cols
                        .iter()
                        .map(|c| path_probability(p, c.variant, &c.layout, &c.lengths, c.phi, read_length))
                        .collect();
                    ((*p).clone(), row)
                })
                .collect();
            self.rows.lock().unwrap().entry(key.clone()).or_default().extend(fresh);
        }
        let guard = self.rows.lock().unwrap();
        let cached = &guard[&key];
        let rows = paths.iter().map(|p| ((*p).clone(), cached[*p].clone())).collect();
        Ok(PathProbMatrix::from_rows(
            island.island_id.clone(),
            island.variants.iter().map(|v| v.id.clone()).collect(),
            rows,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::{build_islands, parse_annotation, subdivide_exons};

    const TOY: &str = "gene_id\ttranscript_id\tchrom\tstrand\texon_start\texon_end
toy\ttx1\tchr1\t+\t101\t400
toy\ttx1\tchr1\t+\t1001\t1100
toy\ttx1\tchr1\t+\t2001\t2500
toy\ttx2\tchr1\t+\t101\t400
toy\ttx2\tchr1\t+\t2001\t2500
toy\ttx3\tchr1\t+\t101\t400
toy\ttx3\tchr1\t+\t1001\t1100
";

    fn toy() -> GeneIsland {
        subdivide_exons(&build_islands(&parse_annotation(TOY.as_bytes(), "t").unwrap())[0])
    }

    fn path(s: &str) -> ExonPath {
        s.parse().unwrap()
    }

    #[test]
    fn toy_bounds() {
        let isl = toy();
        let v1 = &isl.variants[0];
        let lay = spliced_layout(&isl, v1);
        assert_eq!(
            path_bounds(&path("{1}|{1}"), v1, &lay, 75),
            Some(PathBounds {
                a1: 1,
                b1: 226,
                a2: 76,
                b2: 301
            })
        );
        assert_eq!(path_bounds(&path("{1,3}|{3}"), v1, &lay, 75), None);
        let v2 = &isl.variants[1];
        let lay2 = spliced_layout(&isl, v2);
        assert_eq!(path_bounds(&path("{2}|{2}"), v2, &lay2, 75), None);
        assert!(path_bounds(&path("{1,3}|{3}"), v2, &lay2, 75).is_some());
    }

    #[test]
    fn single_exon_total_mass() {
        let text = "gene_id\ttranscript_id\tchrom\tstrand\texon_start\texon_end\ng\tt\tc\t+\t1\t1000\n";
        let isl = subdivide_exons(&build_islands(&parse_annotation(text.as_bytes(), "t").unwrap())[0]);
        let d = FragmentDistributions::single(
            LengthPmf::from_weights([(150, 0.3), (200, 0.4), (260, 0.3)]).unwrap(),
            StartCdf::from_fn(400, |z| z.powi(2)),
        );
        let m = build_prob_matrix(&isl, [&path("{1}|{1}")], &d, 75).unwrap();
        assert!((m.get(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_duplicate_columns() {
        let text = "gene_id\ttranscript_id\tchrom\tstrand\texon_start\texon_end
g\ta\tc\t+\t1\t500
g\ta\tc\t+\t1001\t1500
g\tb\tc\t+\t1\t500
g\tb\tc\t+\t1001\t1500
";
        let isl = subdivide_exons(&build_islands(&parse_annotation(text.as_bytes(), "t").unwrap())[0]);
        let d = FragmentDistributions::single(LengthPmf::point_mass(200), StartCdf::uniform(1000));
        let paths = [path("{1}|{1}"), path("{1,2}|{2}"), path("{1}|{3}")];
        let m = build_prob_matrix(&isl, &paths, &d, 50).unwrap();
        assert_eq!(m.n_paths(), 2);
        assert_eq!(m.zero_rows, vec![path("{1}|{3}")]);
        assert_eq!(m.column(0), m.column(1));
        assert_eq!(m.duplicate_columns(), vec![vec![0, 1]]);
    }

    #[test]
    fn transcript_shorter_than_all_lengths_errors() {
        let isl = toy();
        let d = FragmentDistributions::single(LengthPmf::point_mass(850), StartCdf::uniform(100));
        match build_prob_matrix(&isl, [&path("{1}|{1}")], &d, 75) {
            Err(Error::Truncation { island, transcript, .. }) => {
                assert_eq!(island, "toy");
                assert_eq!(transcript, "tx2");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn classify_matches_three_fragments() {
        let isl = toy();
        let v1 = &isl.variants[0];
        let lay = spliced_layout(&isl, v1);
        // fragment 2: left read 261..335, right read ends at 485
        assert_eq!(classify_fragment(v1, &lay, 261, 225, 75), Some(path("{1,2}|{3}")));
        assert_eq!(classify_fragment(v1, &lay, 10, 165, 75), Some(path("{1}|{1}")));
        assert_eq!(classify_fragment(v1, &lay, 850, 100, 75), None);
    }

    #[test]
    fn cache_reuses_rows() {
        let isl = toy();
        let d = FragmentDistributions::single(LengthPmf::point_mass(200), StartCdf::uniform(900));
        let cache = PathProbCache::new();
        let ps = [path("{1}|{1}"), path("{1}|{3}")];
        let a = cache.build(&isl, &ps, &d, 75).unwrap();
        let b = cache.build(&isl, &ps[..1], &d, 75).unwrap();
        let direct = build_prob_matrix(&isl, &ps, &d, 75).unwrap();
        assert_eq!(a, direct);
        assert_eq!(b.row(0), direct.row(0));
    }

    #[test]
    fn longer_transcript_keeps_paths_feasible() {
        for extra in [0, 10, 500] {
            let text = format!(
                "gene_id\ttranscript_id\tchrom\tstrand\texon_start\texon_end\ng\tt\tc\t+\t1\t300\ng\tt\tc\t+\t1001\t{}\n",
                1300 + extra
            );
            let isl = subdivide_exons(&build_islands(&parse_annotation(text.as_bytes(), "t").unwrap())[0]);
            let lay = spliced_layout(&isl, &isl.variants[0]);
            for p in ["{1}|{1}", "{1}|{2}", "{1,2}|{2}", "{2}|{2}"] {
                assert!(path_bounds(&path(p), &isl.variants[0], &lay, 75).is_some());
            }
        }
    }
}
