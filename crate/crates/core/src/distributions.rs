//! Nonparametric fragment-length and relative-start distributions.
//!
//! The length distribution is the empirical PMF of fragments lying entirely
//! inside one long exon piece. The relative-start CDF φ is a product-limit
//! estimate from single-variant islands, where each relative start `S/T` is
//! right-truncated at `(T - L + 1)/T`.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::genome::spliced_layout;
use crate::pathing::{spliced_fragment, FragmentAlignment, IslandIndex};

pub const DEFAULT_MIN_EXON_LEN: i64 = 1000;

/// Probability mass function over integer fragment lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct LengthPmf {
    support: Vec<i64>,
    probs: Vec<f64>,
}

impl LengthPmf {
    /// Builds a PMF from (length, weight) pairs; weights are normalised.
    pub fn from_weights<I: IntoIterator<Item = (i64, f64)>>(weights: I) -> Result<Self> {
        let mut acc: BTreeMap<i64, f64> = BTreeMap::new();
        for (l, w) in weights {
            if l < 1 {
                return Err(Error::InvalidInput(format!("fragment length {l} must be >= 1")));
            }
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidInput(format!("invalid weight {w} for length {l}")));
            }
            *acc.entry(l).or_insert(0.0) += w;
        }
        acc.retain(|_, w| *w > 0.0);
        let total: f64 = acc.values().sum();
        if acc.is_empty() || total <= 0.0 {
            return Err(Error::InvalidInput("length distribution has no mass".into()));
        }
        Ok(Self {
            support: acc.keys().copied().collect(),
            probs: acc.values().map(|w| w / total).collect(),
        })
    }

    pub fn from_observations<I: IntoIterator<Item = i64>>(lengths: I) -> Result<Self> {
        Self::from_weights(lengths.into_iter().map(|l| (l, 1.0)))
    }

    pub fn point_mass(length: i64) -> Self {
        Self {
            support: vec![length],
            probs: vec![1.0],
        }
    }

    pub fn support(&self) -> &[i64] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.support.iter().copied().zip(self.probs.iter().copied())
    }

    pub fn prob(&self, length: i64) -> f64 {
        self.support
            .binary_search(&length)
            .map(|i| self.probs[i])
            .unwrap_or(0.0)
    }

    pub fn max_length(&self) -> i64 {
        *self.support.last().unwrap()
    }

    pub fn min_length(&self) -> i64 {
        self.support[0]
    }

    /// Largest |ΔCDF| between two PMFs.
    pub fn sup_distance(&self, other: &LengthPmf) -> f64 {
        let mut keys: Vec<i64> = self.support.iter().chain(&other.support).copied().collect();
        keys.sort_unstable();
        keys.dedup();
        let (mut a, mut b, mut best) = (0.0, 0.0, 0.0f64);
        for k in keys {
            a += self.prob(k);
            b += other.prob(k);
            best = best.max((a - b).abs());
        }
        best
    }
}

/// `P(L = l | T) = P(L = l) I(l <= T) / P(L <= T)`.
pub fn truncated_length_pmf(pmf: &LengthPmf, transcript_len: i64) -> Result<LengthPmf> {
    let keep = pmf.support.partition_point(|&l| l <= transcript_len);
    if keep == 0 {
        return Err(Error::Truncation {
            island: String::new(),
            transcript: String::new(),
            length: transcript_len,
        });
    }
    if keep == pmf.support.len() {
        return Ok(pmf.clone());
    }
    let mass: f64 = pmf.probs[..keep].iter().sum();
    Ok(LengthPmf {
        support: pmf.support[..keep].to_vec(),
        probs: pmf.probs[..keep].iter().map(|p| p / mass).collect(),
    })
}

/// Right-continuous step CDF of the relative start `S/T` on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StartCdf {
    knots: Vec<f64>,
    values: Vec<f64>,
}

impl StartCdf {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.is_empty() || knots.len() != values.len() {
            return Err(Error::InvalidInput("start CDF needs matching, non-empty knots and values".into()));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("start CDF knots must be strictly increasing".into()));
        }
        if knots[0] < 0.0 || knots[knots.len() - 1] > 1.0 {
            return Err(Error::InvalidInput("start CDF knots must lie in [0, 1]".into()));
        }
        if values.windows(2).any(|w| w[1] < w[0]) || values[0] < 0.0 {
            return Err(Error::InvalidInput("start CDF values must be nondecreasing in [0, 1]".into()));
        }
        if values[values.len() - 1] != 1.0 {
            return Err(Error::InvalidInput("start CDF must end at 1".into()));
        }
        Ok(Self { knots, values })
    }

    /// Step CDF with `n` equal jumps at `1/n, 2/n, ..., 1`.
    pub fn uniform(n: usize) -> Self {
        Self::from_fn(n, |z| z)
    }

    /// Step CDF with knots at `i/n` taking the values of a continuous CDF `f`.
    pub fn from_fn(n: usize, f: impl Fn(f64) -> f64) -> Self {
        let knots: Vec<f64> = (1..=n).map(|i| i as f64 / n as f64).collect();
        let mut values: Vec<f64> = knots.iter().map(|&z| f(z).clamp(0.0, 1.0)).collect();
        for i in 1..values.len() {
            values[i] = values[i].max(values[i - 1]);
        }
        *values.last_mut().unwrap() = 1.0;
        Self { knots, values }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// φ(z): the value at the largest knot `<= z`, or 0 below the first knot.
    pub fn eval(&self, z: f64) -> f64 {
        let i = self.knots.partition_point(|&k| k <= z);
        if i == 0 {
            0.0
        } else {
            self.values[i - 1]
        }
    }

    pub fn sup_distance_to(&self, f: impl Fn(f64) -> f64) -> f64 {
        let mut best = 0.0f64;
        let mut prev = 0.0;
        for (&k, &v) in self.knots.iter().zip(&self.values) {
            let c = f(k);
            best = best.max((v - c).abs()).max((prev - c).abs());
            prev = v;
        }
        best
    }
}

/// Running product of fractions, kept as an exact reduced ratio while it fits
/// in `u128` and as `f64` afterwards.
#[derive(Debug, Clone, Copy)]
enum Product {
    Exact(u128, u128),
    Float(f64),
}

impl Product {
    fn mul(self, num: u64, den: u64) -> Product {
        match self {
            Product::Exact(a, b) => {
                let (num, den) = (num as u128, den as u128);
                let g1 = gcd(a, den);
                let g2 = gcd(num, b);
                match ((a / g1).checked_mul(num / g2), (b / g2).checked_mul(den / g1)) {
                    (Some(n), Some(d)) => {
                        if n == 0 {
                            Product::Exact(0, 1)
                        } else {
                            Product::Exact(n, d)
                        }
                    }
                    _ => Product::Float(a as f64 / b as f64 * (num as f64 / den as f64)),
                }
            }
            Product::Float(x) => Product::Float(x * (num as f64 / den as f64)),
        }
    }

    fn value(self) -> f64 {
        match self {
            Product::Exact(a, b) => a as f64 / b as f64,
            Product::Float(x) => x,
        }
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

/// Product-limit estimate of the CDF of values observed under right
/// truncation.
///
/// Each observation `(z, c)` is a value `z` that could only be observed
/// because `z <= c`. With distinct values `z_1 < ... < z_m`, event counts
/// `d_j` and risk sets `R_j = #{i : z_i <= z_j <= c_i}`, the estimate is
/// `F(z_j) = prod_{i > j} (1 - d_i / R_i)`. Without truncation (`c = 1`)
/// this is exactly the empirical CDF.
pub fn km_estimator(observations: &[(f64, f64)]) -> Result<StartCdf> {
    if observations.is_empty() {
        return Err(Error::NoQualifyingData("no start observations to estimate from".into()));
    }
    for &(z, c) in observations {
        if !(0.0 <= z && z <= c && c <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "start observation ({z}, {c}) violates 0 <= z <= c <= 1"
            )));
        }
    }

    let mut values: Vec<f64> = observations.iter().map(|o| o.0).collect();
    values.sort_by(f64::total_cmp);
    let mut bounds: Vec<f64> = observations.iter().map(|o| o.1).collect();
    bounds.sort_by(f64::total_cmp);

    let mut knots: Vec<f64> = Vec::new();
    let mut events: Vec<u64> = Vec::new();
    for &z in &values {
        if knots.last() == Some(&z) {
            *events.last_mut().unwrap() += 1;
        } else {
            knots.push(z);
            events.push(1);
        }
    }

    let n = observations.len();
    let mut cdf = vec![0.0; knots.len()];
    let mut prod = Product::Exact(1, 1);
    for j in (0..knots.len()).rev() {
        cdf[j] = prod.value();
        let z = knots[j];
        let at_or_below = values.partition_point(|&v| v <= z);
        let bound_below = bounds.partition_point(|&c| c < z);
        // observations with z_i <= z whose bound c_i >= z; z_i <= c_i makes
        // every c_i < z come from an observation with z_i < z
        let risk = (at_or_below - bound_below) as u64;
        debug_assert!(risk >= events[j] && at_or_below <= n);
        prod = prod.mul(risk - events[j], risk);
    }
    StartCdf::new(knots, cdf)
}

/// Probability that the relative start lies in `(z_lo, z_hi]` given a
/// fragment of length `l` on a transcript of length `T`:
/// `[φ(min(z_hi, S_T)) - φ(min(z_lo, S_T))]₊ / φ(S_T)` with `S_T = (T - l + 1)/T`.
pub fn start_prob_interval(phi: &StartCdf, transcript_len: i64, frag_len: i64, z_lo: f64, z_hi: f64) -> Result<f64> {
    let bound = (transcript_len - frag_len + 1) as f64 / transcript_len as f64;
    let norm = phi.eval(bound);
    if norm <= 0.0 {
        return Err(Error::DegenerateStart {
            bound,
            length: transcript_len,
            fragment: frag_len,
        });
    }
    let mass = phi.eval(z_hi.min(bound)) - phi.eval(z_lo.min(bound));
    Ok(mass.max(0.0) / norm)
}

/// A gene-length bin `(lo, hi]` with its own distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct DistBin {
    pub lo: i64,
    /// `None` means unbounded.
    pub hi: Option<i64>,
    pub length: LengthPmf,
    pub start: StartCdf,
}

impl DistBin {
    pub fn contains(&self, transcript_len: i64) -> bool {
        transcript_len > self.lo && self.hi.is_none_or(|h| transcript_len <= h)
    }
}

/// Fitted distributions, binned by transcript length.
#[derive(Debug, Clone, PartialEq)]
pub struct FragmentDistributions {
    bins: Vec<DistBin>,
}

impl FragmentDistributions {
    pub fn single(length: LengthPmf, start: StartCdf) -> Self {
        Self {
            bins: vec![DistBin {
                lo: 0,
                hi: None,
                length,
                start,
            }],
        }
    }

    pub fn new(mut bins: Vec<DistBin>) -> Result<Self> {
        bins.sort_by_key(|b| b.lo);
        let ok = !bins.is_empty()
            && bins[0].lo == 0
            && bins.last().unwrap().hi.is_none()
            && bins.windows(2).all(|w| w[0].hi == Some(w[1].lo) && w[1].lo > w[0].lo);
        if !ok {
            return Err(Error::InvalidInput("distribution bins must partition (0, inf)".into()));
        }
        Ok(Self { bins })
    }

    pub fn bins(&self) -> &[DistBin] {
        &self.bins
    }

    /// Index of the bin holding transcripts of length `transcript_len`.
    pub fn bin_index(&self, transcript_len: i64) -> usize {
        self.bins
            .iter()
            .position(|b| b.contains(transcript_len))
            .unwrap_or(0)
    }

    pub fn lookup(&self, transcript_len: i64) -> &DistBin {
        &self.bins[self.bin_index(transcript_len)]
    }
}

/// Bin boundaries from upper edges, e.g. `[3000, 5000]` gives
/// `(0,3000], (3000,5000], (5000,inf)`.
pub fn bin_ranges(edges: &[i64]) -> Result<Vec<(i64, Option<i64>)>> {
    let mut sorted = edges.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.iter().any(|&e| e <= 0) {
        return Err(Error::InvalidInput("bin edges must be positive".into()));
    }
    let mut out = Vec::new();
    let mut lo = 0;
    for e in sorted {
        out.push((lo, Some(e)));
        lo = e;
    }
    out.push((lo, None));
    Ok(out)
}

/// Observed lengths of fragments whose both ends fall inside one exon piece
/// longer than `min_exon_len`.
pub fn qualifying_lengths<'a, I>(frags: I, index: &IslandIndex, min_exon_len: i64) -> Vec<i64>
where
    I: IntoIterator<Item = &'a FragmentAlignment>,
{
    let mut out = Vec::new();
    for f in frags {
        let Ok(i) = index.route(f) else { continue };
        let isl = &index.islands()[i];
        let lo = f.left_blocks.iter().chain(&f.right_blocks).map(|b| b.0).min();
        let hi = f.left_blocks.iter().chain(&f.right_blocks).map(|b| b.1).max();
        let (Some(lo), Some(hi)) = (lo, hi) else { continue };
        if isl
            .exons
            .iter()
            .any(|e| e.len() > min_exon_len && e.start <= lo && hi <= e.end)
        {
            out.push(hi - lo + 1);
        }
    }
    out
}

pub fn estimate_length_pmf<'a, I>(frags: I, index: &IslandIndex, min_exon_len: i64) -> Result<LengthPmf>
where
    I: IntoIterator<Item = &'a FragmentAlignment>,
{
    let lengths = qualifying_lengths(frags, index, min_exon_len);
    if lengths.is_empty() {
        return Err(Error::NoQualifyingData(format!(
            "no fragment has both ends inside an exon longer than {min_exon_len} bp; \
             lower --min-exon-len or supply a precomputed length distribution file"
        )));
    }
    LengthPmf::from_observations(lengths)
}

/// One relative-start observation from a single-variant island.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StartObservation {
    pub transcript_len: i64,
    pub start: i64,
    pub frag_len: i64,
}

impl StartObservation {
    /// `(S/T, (T - L + 1)/T)`.
    pub fn relative(&self) -> (f64, f64) {
        let t = self.transcript_len as f64;
        (
            self.start as f64 / t,
            (self.transcript_len - self.frag_len + 1) as f64 / t,
        )
    }
}

/// Start observations from islands with exactly one variant, skipping
/// islands with fewer than `min_fragments` usable fragments.
pub fn start_observations<'a, I>(
    frags: I,
    index: &IslandIndex,
    read_length: i64,
    min_fragments: usize,
) -> Vec<StartObservation>
where
    I: IntoIterator<Item = &'a FragmentAlignment>,
{
    let layouts: Vec<_> = index
        .islands()
        .iter()
        .map(|isl| (isl.variants.len() == 1).then(|| spliced_layout(isl, &isl.variants[0])))
        .collect();
    let mut per_island: BTreeMap<usize, Vec<StartObservation>> = BTreeMap::new();
    for f in frags {
        let Ok(i) = index.route(f) else { continue };
        let Some(layout) = &layouts[i] else { continue };
        if let Some((start, frag_len)) = spliced_fragment(f, layout, read_length) {
            per_island.entry(i).or_default().push(StartObservation {
                transcript_len: layout.length,
                start,
                frag_len,
            });
        }
    }
    per_island
        .into_values()
        .filter(|v| v.len() >= min_fragments.max(1))
        .flatten()
        .collect()
}

pub fn estimate_start_cdf(observations: &[StartObservation]) -> Result<StartCdf> {
    if observations.is_empty() {
        return Err(Error::NoQualifyingData(
            "no fragments map to single-variant genes; supply a precomputed start distribution file".into(),
        ));
    }
    let rel: Vec<(f64, f64)> = observations.iter().map(StartObservation::relative).collect();
    km_estimator(&rel)
}

/// Fits binned distributions. The length PMF is pooled across bins; the
/// start CDF is fitted per bin, falling back to the pooled estimate for bins
/// without single-variant data.
pub fn fit_distributions(
    frags: &[FragmentAlignment],
    index: &IslandIndex,
    read_length: i64,
    min_exon_len: i64,
    bin_edges: &[i64],
    min_fragments: usize,
) -> Result<FragmentDistributions> {
    let length = estimate_length_pmf(frags, index, min_exon_len)?;
    let obs = start_observations(frags, index, read_length, min_fragments);
    let pooled = estimate_start_cdf(&obs)?;
    let mut bins = Vec::new();
    for (lo, hi) in bin_ranges(bin_edges)? {
        let inside: Vec<StartObservation> = obs
            .iter()
            .copied()
            .filter(|o| o.transcript_len > lo && hi.is_none_or(|h| o.transcript_len <= h))
            .collect();
        let start = if inside.is_empty() {
            log::warn!(
                "no single-variant data for transcript lengths ({lo}, {}]; using pooled start distribution",
                hi.map_or("inf".to_string(), |h| h.to_string())
            );
            pooled.clone()
        } else {
            km_estimator(&inside.iter().map(StartObservation::relative).collect::<Vec<_>>())?
        };
        bins.push(DistBin {
            lo,
            hi,
            length: length.clone(),
            start,
        });
    }
    FragmentDistributions::new(bins)
}

fn bin_header(b: &DistBin) -> String {
    format!(
        "#bin\t{}\t{}",
        b.lo,
        b.hi.map_or("inf".to_string(), |h| h.to_string())
    )
}

pub fn write_length_pmf<W: Write>(mut w: W, dists: &FragmentDistributions) -> std::io::Result<()> {
    let binned = dists.bins.len() > 1;
    writeln!(w, "length\tprob")?;
    for b in &dists.bins {
        if binned {
            writeln!(w, "{}", bin_header(b))?;
        }
        for (l, p) in b.length.iter() {
            writeln!(w, "{l}\t{p}")?;
        }
    }
    Ok(())
}

pub fn write_start_cdf<W: Write>(mut w: W, dists: &FragmentDistributions) -> std::io::Result<()> {
    let binned = dists.bins.len() > 1;
    writeln!(w, "z\tcdf")?;
    for b in &dists.bins {
        if binned {
            writeln!(w, "{}", bin_header(b))?;
        }
        for (z, c) in b.start.knots.iter().zip(&b.start.values) {
            writeln!(w, "{z}\t{c}")?;
        }
    }
    Ok(())
}

type Block = ((i64, Option<i64>), Vec<(String, String, usize)>);

fn parse_blocks<R: BufRead>(reader: R, name: &str, header: &str) -> Result<Vec<Block>> {
    let mut blocks: Vec<Block> = Vec::new();
    let mut saw_header = false;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(name, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if !saw_header {
            if line.trim_end() != header {
                return Err(Error::parse(name, lineno, format!("expected header '{header}'")));
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields[0] == "#bin" {
            if fields.len() != 3 {
                return Err(Error::parse(name, lineno, "bin line must be '#bin<TAB>lo<TAB>hi'"));
            }
            let lo = fields[1]
                .parse()
                .map_err(|_| Error::parse(name, lineno, "invalid bin lower edge"))?;
            let hi = if fields[2] == "inf" {
                None
            } else {
                Some(
                    fields[2]
                        .parse()
                        .map_err(|_| Error::parse(name, lineno, "invalid bin upper edge"))?,
                )
            };
            blocks.push(((lo, hi), Vec::new()));
            continue;
        }
        if fields.len() != 2 {
            return Err(Error::parse(name, lineno, "expected 2 tab-separated fields"));
        }
        if blocks.is_empty() {
            blocks.push(((0, None), Vec::new()));
        }
        blocks
            .last_mut()
            .unwrap()
            .1
            .push((fields[0].to_string(), fields[1].to_string(), lineno));
    }
    Ok(blocks)
}

/// Reads a length-PMF file and a start-CDF file into binned distributions.
pub fn parse_distributions<R1: BufRead, R2: BufRead>(
    len_reader: R1,
    len_name: &str,
    start_reader: R2,
    start_name: &str,
) -> Result<FragmentDistributions> {
    let len_blocks = parse_blocks(len_reader, len_name, "length\tprob")?;
    let start_blocks = parse_blocks(start_reader, start_name, "z\tcdf")?;
    if len_blocks.is_empty() || start_blocks.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{len_name} / {start_name}: empty distribution file"
        )));
    }

    let mut lengths = Vec::new();
    for (range, rows) in len_blocks {
        let mut w = Vec::with_capacity(rows.len());
        for (a, b, line) in rows {
            let l: i64 = a
                .parse()
                .map_err(|_| Error::parse(len_name, line, format!("invalid length '{a}'")))?;
            let p: f64 = b
                .parse()
                .map_err(|_| Error::parse(len_name, line, format!("invalid probability '{b}'")))?;
            w.push((l, p));
        }
        lengths.push((range, LengthPmf::from_weights(w)?));
    }
    let mut starts = Vec::new();
    for (range, rows) in start_blocks {
        let mut knots = Vec::with_capacity(rows.len());
        let mut values = Vec::with_capacity(rows.len());
        for (a, b, line) in rows {
            knots.push(a.parse().map_err(|_| Error::parse(start_name, line, format!("invalid z '{a}'")))?);
            values.push(b.parse().map_err(|_| Error::parse(start_name, line, format!("invalid cdf '{b}'")))?);
        }
        starts.push((range, StartCdf::new(knots, values)?));
    }

    // A single unbinned length block applies to every start bin.
    let bins = if lengths.len() == 1 && starts.len() > 1 {
        let length = lengths.remove(0).1;
        starts
            .into_iter()
            .map(|((lo, hi), start)| DistBin {
                lo,
                hi,
                length: length.clone(),
                start,
            })
            .collect()
    } else {
        if lengths.len() != starts.len() || lengths.iter().zip(&starts).any(|(a, b)| a.0 != b.0) {
            return Err(Error::InvalidInput(format!(
                "bins in {len_name} and {start_name} do not match"
            )));
        }
        lengths
            .into_iter()
            .zip(starts)
            .map(|(((lo, hi), length), (_, start))| DistBin { lo, hi, length, start })
            .collect()
    };
    FragmentDistributions::new(bins)
}

pub fn read_distributions(len_path: impl AsRef<Path>, start_path: impl AsRef<Path>) -> Result<FragmentDistributions> {
    let (lp, sp) = (len_path.as_ref(), start_path.as_ref());
    let lf = std::fs::File::open(lp).map_err(|e| Error::io(lp, e))?;
    let sf = std::fs::File::open(sp).map_err(|e| Error::io(sp, e))?;
    parse_distributions(
        std::io::BufReader::new(lf),
        &lp.display().to_string(),
        std::io::BufReader::new(sf),
        &sp.display().to_string(),
    )
}
