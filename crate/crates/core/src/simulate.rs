//! Synthetic fragments from known π, length PMF and start CDF, and scoring
//! of the resulting estimates against the truth.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;

use crate::distributions::{read_distributions, truncated_length_pmf, FragmentDistributions, LengthPmf, StartCdf};
use crate::error::{Error, Result};
use crate::genome::{load_islands, spliced_layout, GeneIsland, SplicedLayout, Strand};
use crate::pathing::{fragment_to_path, FragmentAlignment, PathCountTable, PathOutcome};
use crate::pathprob::classify_fragment;
use crate::quantify::{format_prob, quantify_island, QuantifyOptions};
use crate::seeds::derive_seed;

/// Lengths are redrawn this many times when φ leaves no admissible start.
pub const MAX_LENGTH_TRIES: usize = 1000;

/// Everything needed to simulate and score one experiment.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub islands: Vec<GeneIsland>,
    /// True π per island, in the island's variant order.
    pub true_pi: BTreeMap<String, Vec<f64>>,
    pub dists: FragmentDistributions,
    pub read_length: i64,
    pub n_frags: BTreeMap<String, usize>,
    pub n_replicates: usize,
    pub seed: u64,
    pub quantify: QuantifyOptions,
    /// Skip genomic coordinates and classify fragments straight to paths.
    pub counts_only: bool,
    /// Islands under this RPKM are left out of the score; 0 disables the filter.
    pub min_rpkm: f64,
}

/// On-disk form of [`SimConfig`]; relative paths resolve against the file's directory.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfigFile {
    pub annotation: PathBuf,
    pub seed: u64,
    #[serde(default = "default_read_length")]
    pub read_length: i64,
    pub n_frags: usize,
    #[serde(default)]
    pub n_frags_by_island: BTreeMap<String, usize>,
    #[serde(default = "one")]
    pub n_replicates: usize,
    #[serde(default = "default_q")]
    pub prior_q: f64,
    #[serde(default = "default_ci")]
    pub ci_level: f64,
    #[serde(default)]
    pub counts_only: bool,
    #[serde(default = "default_rpkm")]
    pub min_rpkm: f64,
    pub length_pmf: Option<PathBuf>,
    pub start_cdf: Option<PathBuf>,
    #[serde(default)]
    pub true_pi: BTreeMap<String, BTreeMap<String, f64>>,
}

fn default_read_length() -> i64 {
    75
}
fn one() -> usize {
    1
}
fn default_q() -> f64 {
    2.0
}
fn default_ci() -> f64 {
    0.95
}
fn default_rpkm() -> f64 {
    10.0
}

/// Built-in distributions: lengths 150..=350 bp with a discretised normal
/// shape (mean 250, sd 30) and a uniform relative start.
pub fn default_distributions() -> FragmentDistributions {
    let pmf = LengthPmf::from_weights((150..=350).map(|l| {
        let z = (l as f64 - 250.0) / 30.0;
        (l, (-0.5 * z * z).exp())
    }))
    .expect("non-empty");
    FragmentDistributions::single(pmf, StartCdf::uniform(1000))
}

impl SimConfig {
    /// Loads a TOML config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: SimConfigFile = toml::from_str(&text)
            .map_err(|e| Error::InvalidInput(format!("{}: {}", path.display(), e.message())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_file(file, base)
    }

    pub fn from_file(file: SimConfigFile, base: &Path) -> Result<Self> {
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let islands = load_islands(resolve(&file.annotation))?;
        let dists = match (&file.length_pmf, &file.start_cdf) {
            (Some(l), Some(s)) => read_distributions(resolve(l), resolve(s))?,
            (None, None) => default_distributions(),
            _ => {
                return Err(Error::InvalidInput(
                    "length_pmf and start_cdf must be given together".into(),
                ))
            }
        };
        let mut true_pi = BTreeMap::new();
        for (id, by_variant) in &file.true_pi {
            let isl = islands
                .iter()
                .find(|i| &i.island_id == id)
                .ok_or_else(|| Error::InvalidInput(format!("true_pi names unknown island '{id}'")))?;
            if let Some(v) = by_variant.keys().find(|v| isl.variant_index(v).is_none()) {
                return Err(Error::InvalidInput(format!("true_pi names unknown transcript '{v}' in island '{id}'")));
            }
            let pi = isl
                .variants
                .iter()
                .map(|v| by_variant.get(&v.id).copied().unwrap_or(0.0))
                .collect();
            true_pi.insert(id.clone(), pi);
        }
        if let Some(id) = file.n_frags_by_island.keys().find(|id| !islands.iter().any(|i| &i.island_id == *id)) {
            return Err(Error::InvalidInput(format!("n_frags_by_island names unknown island '{id}'")));
        }
        let n_frags = islands
            .iter()
            .map(|i| {
                let n = file.n_frags_by_island.get(&i.island_id).copied().unwrap_or(file.n_frags);
                (i.island_id.clone(), n)
            })
            .collect();
        let cfg = SimConfig {
            islands,
            true_pi,
            dists,
            read_length: file.read_length,
            n_frags,
            n_replicates: file.n_replicates,
            seed: file.seed,
            quantify: QuantifyOptions {
                prior_q: file.prior_q,
                ci_level: file.ci_level,
                ..Default::default()
            },
            counts_only: file.counts_only,
            min_rpkm: file.min_rpkm,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// True π for an island; uniform when not configured.
    pub fn pi_for(&self, island: &GeneIsland) -> Vec<f64> {
        self.true_pi
            .get(&island.island_id)
            .cloned()
            .unwrap_or_else(|| vec![1.0 / island.variants.len() as f64; island.variants.len()])
    }

    pub fn validate(&self) -> Result<()> {
        if self.read_length < 1 {
            return Err(Error::InvalidInput(format!("read length {} must be >= 1", self.read_length)));
        }
        if !(self.quantify.ci_level > 0.0 && self.quantify.ci_level < 1.0) {
            return Err(Error::InvalidInput(format!("ci_level {} must be in (0, 1)", self.quantify.ci_level)));
        }
        if self.quantify.prior_q < 1.0 {
            return Err(Error::InvalidInput(format!("prior_q {} must be >= 1", self.quantify.prior_q)));
        }
        for bin in self.dists.bins() {
            if bin.length.min_length() < self.read_length {
                return Err(Error::InvalidInput(format!(
                    "fragment length {} is shorter than the read length {}",
                    bin.length.min_length(),
                    self.read_length
                )));
            }
        }
        for (id, pi) in &self.true_pi {
            let s: f64 = pi.iter().sum();
            if pi.iter().any(|&p| p.is_nan() || p < 0.0) || (s - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!("true_pi for island '{id}' is not on the simplex: {pi:?}")));
            }
        }
        Ok(())
    }

    fn n_frags_for(&self, island: &GeneIsland) -> usize {
        self.n_frags.get(&island.island_id).copied().unwrap_or(0)
    }
}

/// Per-variant state used while sampling.
struct VariantSampler<'a> {
    layout: SplicedLayout,
    lengths: Option<LengthPmf>,
    cumulative: Vec<f64>,
    phi: &'a StartCdf,
}

impl<'a> VariantSampler<'a> {
    fn new(island: &GeneIsland, d: usize, dists: &'a FragmentDistributions) -> Self {
        let v = &island.variants[d];
        let bin = dists.lookup(v.length);
        let lengths = truncated_length_pmf(&bin.length, v.length).ok();
        let cumulative = lengths
            .as_ref()
            .map(|l| {
                l.probs()
                    .iter()
                    .scan(0.0, |acc, p| {
                        *acc += p;
                        Some(*acc)
                    })
                    .collect()
            })
            .unwrap_or_default();
        Self {
            layout: spliced_layout(island, v),
            lengths,
            cumulative,
            phi: &bin.start,
        }
    }

    fn length(&self, rng: &mut ChaCha8Rng) -> Option<i64> {
        let lengths = self.lengths.as_ref()?;
        let u: f64 = rng.random::<f64>() * self.cumulative.last().unwrap();
        let i = self.cumulative.partition_point(|&c| c <= u).min(lengths.support().len() - 1);
        Some(lengths.support()[i])
    }

    /// Draws `(start, length)` with `P(S <= s | L = l) = φ(s/T) / φ((T-l+1)/T)`.
    fn draw(&self, rng: &mut ChaCha8Rng, island: &str) -> Result<(i64, i64)> {
        let t = self.layout.length;
        let tf = t as f64;
        for _ in 0..MAX_LENGTH_TRIES {
            let Some(l) = self.length(rng) else { break };
            let max_start = t - l + 1;
            let norm = self.phi.eval(max_start as f64 / tf);
            if norm <= 0.0 {
                continue;
            }
            let u = rng.random::<f64>() * norm;
            // smallest s in 1..=max_start with φ(s/T) > u
            let (mut lo, mut hi) = (1, max_start);
            while lo < hi {
                let mid = lo + (hi - lo) / 2;
                if self.phi.eval(mid as f64 / tf) > u {
                    hi = mid;
                } else {
                    lo = mid + 1;
                }
            }
            return Ok((lo, l));
        }
        Err(Error::Inference(format!(
            "island {island}, transcript {}: no admissible (start, length) after {MAX_LENGTH_TRIES} draws",
            self.layout.variant_id
        )))
    }
}

fn pick_variant(cum_pi: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random::<f64>() * cum_pi.last().unwrap();
    cum_pi.partition_point(|&c| c <= u).min(cum_pi.len() - 1)
}

/// Fragments for one island and replicate.
pub fn simulate_fragments(cfg: &SimConfig, island: &GeneIsland, replicate: usize) -> Result<Vec<FragmentAlignment>> {
    let mut out = Vec::new();
    simulate_island(cfg, island, replicate, |d, layout, s, l| {
        let r = cfg.read_length;
        let first = layout.genomic_blocks(s, s + r - 1);
        let second = layout.genomic_blocks(s + l - r, s + l - 1);
        let (left_blocks, right_blocks) = match island.strand {
            Strand::Plus => (first, second),
            Strand::Minus => (second, first),
        };
        out.push(FragmentAlignment {
            fragment_id: format!("{}:{}:{}:{}", island.island_id, replicate, out.len(), island.variants[d].id),
            chrom: island.chrom.clone(),
            left_blocks,
            right_blocks,
        });
    })?;
    Ok(out)
}

/// Path counts for one island and replicate, bypassing genomic coordinates.
pub fn simulate_counts(cfg: &SimConfig, island: &GeneIsland, replicate: usize) -> Result<PathCountTable> {
    let mut table = PathCountTable::new(island.island_id.clone());
    simulate_island(cfg, island, replicate, |d, layout, s, l| {
        let path = classify_fragment(&island.variants[d], layout, s, l, cfg.read_length)
            .expect("sampled fragments lie inside the transcript");
        table.add(path, 1);
    })?;
    Ok(table)
}

fn simulate_island<F>(cfg: &SimConfig, island: &GeneIsland, replicate: usize, mut emit: F) -> Result<()>
where
    F: FnMut(usize, &SplicedLayout, i64, i64),
{
    let n = cfg.n_frags_for(island);
    if n == 0 {
        return Ok(());
    }
    let pi = cfg.pi_for(island);
    let cum_pi: Vec<f64> = pi
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    let samplers: Vec<VariantSampler> = (0..island.variants.len())
        .map(|d| VariantSampler::new(island, d, &cfg.dists))
        .collect();
    let seed = derive_seed(
        cfg.seed,
        &[b"simulate", &(replicate as u64).to_le_bytes(), island.island_id.as_bytes()],
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n {
        let d = pick_variant(&cum_pi, &mut rng);
        let (s, l) = samplers[d].draw(&mut rng, &island.island_id)?;
        emit(d, &samplers[d].layout, s, l);
    }
    Ok(())
}

/// Counts simulated fragments through the full pathing code.
fn count_fragments(island: &GeneIsland, frags: &[FragmentAlignment]) -> Result<PathCountTable> {
    let mut table = PathCountTable::new(island.island_id.clone());
    for f in frags {
        match fragment_to_path(f, island)? {
            PathOutcome::Mapped(p) => table.add(p, 1),
            PathOutcome::Unmapped(r) => {
                return Err(Error::Inference(format!(
                    "simulated fragment {} did not map ({})",
                    f.fragment_id,
                    r.as_str()
                )))
            }
        }
    }
    Ok(table)
}

/// One estimate of one variant's proportion in one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub replicate: usize,
    pub island_id: String,
    pub transcript_id: String,
    pub pi: f64,
    pub ci: Option<(f64, f64)>,
    /// Excluded from scoring (e.g. by the RPKM filter or a failed island).
    pub excluded: bool,
}

/// Truth keyed by (island, transcript).
pub type Truth = BTreeMap<(String, String), f64>;

/// Error metrics for one variant across replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantScore {
    pub island_id: String,
    pub transcript_id: String,
    pub truth: f64,
    pub mean_estimate: f64,
    pub mae: f64,
    pub mse: f64,
    pub bias2: f64,
    /// Population variance of the estimates over replicates.
    pub variance: f64,
    pub coverage: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub variants: Vec<VariantScore>,
    pub mae: f64,
    pub mse: f64,
    pub bias2: f64,
    pub variance: f64,
    /// Fraction of intervals containing the truth, over all scored estimates.
    pub coverage: Option<f64>,
    pub n_estimates: usize,
    pub n_excluded: usize,
    pub estimates: Vec<Estimate>,
}

/// Scores estimates against the truth. Every estimate must have a truth
/// entry and every truth entry at least one estimate.
pub fn score(estimates: &[Estimate], truth: &Truth) -> Result<SimReport> {
    let mut groups: BTreeMap<(String, String), Vec<&Estimate>> = BTreeMap::new();
    for e in estimates {
        let key = (e.island_id.clone(), e.transcript_id.clone());
        if !truth.contains_key(&key) {
            return Err(Error::InvalidInput(format!(
                "estimate for {}/{} has no true value",
                e.island_id, e.transcript_id
            )));
        }
        groups.entry(key).or_default().push(e);
    }
    if let Some((i, t)) = truth.keys().find(|k| !groups.contains_key(*k)) {
        return Err(Error::InvalidInput(format!("no estimate for {i}/{t}")));
    }

    let mut variants = Vec::new();
    let (mut hits, mut with_ci) = (0usize, 0usize);
    for ((island, tx), es) in &groups {
        let es: Vec<&&Estimate> = es.iter().filter(|e| !e.excluded).collect();
        if es.is_empty() {
            continue;
        }
        let t = truth[&(island.clone(), tx.clone())];
        let n = es.len() as f64;
        let mean = es.iter().map(|e| e.pi).sum::<f64>() / n;
        let mae = es.iter().map(|e| (e.pi - t).abs()).sum::<f64>() / n;
        let mse = es.iter().map(|e| (e.pi - t).powi(2)).sum::<f64>() / n;
        let variance = es.iter().map(|e| (e.pi - mean).powi(2)).sum::<f64>() / n;
        let (mut h, mut c) = (0usize, 0usize);
        for e in &es {
            if let Some((lo, hi)) = e.ci {
                c += 1;
                if lo <= t && t <= hi {
                    h += 1;
                }
            }
        }
        hits += h;
        with_ci += c;
        variants.push(VariantScore {
            island_id: island.clone(),
            transcript_id: tx.clone(),
            truth: t,
            mean_estimate: mean,
            mae,
            mse,
            bias2: (mean - t).powi(2),
            variance,
            coverage: (c > 0).then(|| h as f64 / c as f64),
            n: es.len(),
        });
    }
    let avg = |f: fn(&VariantScore) -> f64| {
        if variants.is_empty() {
            0.0
        } else {
            variants.iter().map(f).sum::<f64>() / variants.len() as f64
        }
    };
    Ok(SimReport {
        mae: avg(|v| v.mae),
        mse: avg(|v| v.mse),
        bias2: avg(|v| v.bias2),
        variance: avg(|v| v.variance),
        coverage: (with_ci > 0).then(|| hits as f64 / with_ci as f64),
        n_estimates: estimates.iter().filter(|e| !e.excluded).count(),
        n_excluded: estimates.iter().filter(|e| e.excluded).count(),
        variants,
        estimates: estimates.to_vec(),
    })
}

/// Output of [`run_simulation`].
#[derive(Debug, Clone)]
pub struct SimRun {
    pub report: SimReport,
    /// Fragments of the first replicate, when not in counts-only mode.
    pub fragments: Vec<FragmentAlignment>,
    pub failed_islands: usize,
}

fn rpkm(n_island: usize, length_bp: i64, n_total: usize) -> f64 {
    if n_total == 0 || length_bp == 0 {
        return 0.0;
    }
    n_island as f64 * 1e9 / (length_bp as f64 * n_total as f64)
}

/// Simulates every (replicate, island) in parallel, quantifies with the true
/// distributions, and scores the estimates.
pub fn run_simulation(cfg: &SimConfig) -> Result<SimRun> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> = (0..cfg.n_replicates)
        .flat_map(|r| (0..cfg.islands.len()).map(move |i| (r, i)))
        .collect();
    let results: Vec<(Vec<Estimate>, Vec<FragmentAlignment>, bool)> = jobs
        .par_iter()
        .map(|&(rep, i)| -> Result<_> {
            let island = &cfg.islands[i];
            let (table, frags) = if cfg.counts_only {
                (simulate_counts(cfg, island, rep)?, Vec::new())
            } else {
                let frags = simulate_fragments(cfg, island, rep)?;
                (count_fragments(island, &frags)?, frags)
            };
            let res = quantify_island(island, Some(&table), &cfg.dists, cfg.read_length, &cfg.quantify);
            let failed = res.is_failed();
            let estimates = island
                .variants
                .iter()
                .enumerate()
                .map(|(d, v)| Estimate {
                    replicate: rep,
                    island_id: island.island_id.clone(),
                    transcript_id: v.id.clone(),
                    pi: res.summary.as_ref().map_or(f64::NAN, |s| s.pi_mode[d]),
                    ci: res.summary.as_ref().map(|s| s.ci[d]),
                    excluded: failed,
                })
                .collect();
            Ok((estimates, if rep == 0 { frags } else { Vec::new() }, failed))
        })
        .collect::<Result<_>>()?;

    let total_frags: usize = cfg.islands.iter().map(|i| cfg.n_frags_for(i)).sum();
    let mut estimates = Vec::new();
    let mut fragments = Vec::new();
    let mut failed_islands = 0;
    for (mut es, frags, failed) in results {
        failed_islands += failed as usize;
        if cfg.min_rpkm > 0.0 {
            if let Some(isl) = es.first().and_then(|e| cfg.islands.iter().find(|i| i.island_id == e.island_id)) {
                if rpkm(cfg.n_frags_for(isl), isl.covered_length(), total_frags) < cfg.min_rpkm {
                    es.iter_mut().for_each(|e| e.excluded = true);
                }
            }
        }
        estimates.extend(es);
        fragments.extend(frags);
    }
    let truth: Truth = cfg
        .islands
        .iter()
        .flat_map(|isl| {
            let pi = cfg.pi_for(isl);
            isl.variants
                .iter()
                .zip(pi)
                .map(|(v, p)| ((isl.island_id.clone(), v.id.clone()), p))
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(SimRun {
        report: score(&estimates, &truth)?,
        fragments,
        failed_islands,
    })
}

pub const REPORT_HEADER: [&str; 10] = [
    "island_id",
    "transcript_id",
    "truth",
    "mean_estimate",
    "mae",
    "mse",
    "bias2",
    "variance",
    "coverage",
    "n",
];

pub fn write_report<W: Write>(mut w: W, report: &SimReport, digits: Option<usize>) -> std::io::Result<()> {
    let f = |x: f64| format_prob(x, digits);
    writeln!(w, "{}", REPORT_HEADER.join("\t"))?;
    for v in &report.variants {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            v.island_id,
            v.transcript_id,
            f(v.truth),
            f(v.mean_estimate),
            f(v.mae),
            f(v.mse),
            f(v.bias2),
            f(v.variance),
            v.coverage.map_or("NA".to_string(), f),
            v.n
        )?;
    }
    Ok(())
}

pub fn write_summary<W: Write>(mut w: W, report: &SimReport) -> std::io::Result<()> {
    writeln!(w, "estimates scored: {}", report.n_estimates)?;
    writeln!(w, "estimates excluded: {}", report.n_excluded)?;
    writeln!(w, "mean absolute error: {:.6e}", report.mae)?;
    writeln!(w, "mean squared error: {:.6e}", report.mse)?;
    writeln!(w, "squared bias: {:.6e}", report.bias2)?;
    writeln!(w, "variance: {:.6e}", report.variance)?;
    match report.coverage {
        Some(c) => writeln!(w, "interval coverage: {c:.4}")?,
        None => writeln!(w, "interval coverage: NA")?,
    }
    Ok(())
}

pub fn write_estimates<W: Write>(mut w: W, report: &SimReport, digits: Option<usize>) -> std::io::Result<()> {
    let f = |x: f64| format_prob(x, digits);
    writeln!(w, "replicate\tisland_id\ttranscript_id\tpi\tci_lo\tci_hi\texcluded")?;
    for e in &report.estimates {
        let (lo, hi) = e.ci.map_or(("NA".to_string(), "NA".to_string()), |(a, b)| (f(a), f(b)));
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            e.replicate,
            e.island_id,
            e.transcript_id,
            f(e.pi),
            lo,
            hi,
            e.excluded
        )?;
    }
    Ok(())
}
