//! Gene annotations, gene islands and spliced (transcript-space) coordinates.
//!
//! Coordinates are 1-based and inclusive everywhere. An island is the unit of
//! inference: a maximal group of genes whose exons overlap. After
//! [`subdivide_exons`] every exon piece of an island is either fully contained
//! in or fully absent from each variant, and piece ids follow transcript
//! orientation (reverse genomic order on the minus strand).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ANNOTATION_HEADER: [&str; 6] = [
    "gene_id",
    "transcript_id",
    "chrom",
    "strand",
    "exon_start",
    "exon_end",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strand {
    Plus,
    Minus,
}

impl FromStr for Strand {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "+" => Ok(Strand::Plus),
            "-" => Ok(Strand::Minus),
            other => Err(format!("strand must be '+' or '-', got '{other}'")),
        }
    }
}

impl fmt::Display for Strand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strand::Plus => "+",
            Strand::Minus => "-",
        })
    }
}

/// One annotated transcript as read from the annotation file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTranscript {
    pub id: String,
    /// Genomic exon intervals sorted by start.
    pub exons: Vec<(i64, i64)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawGene {
    pub id: String,
    pub chrom: String,
    pub strand: Strand,
    /// Sorted by transcript id.
    pub transcripts: Vec<RawTranscript>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exon {
    pub id: u32,
    pub chrom: String,
    pub start: i64,
    pub end: i64,
    /// Annotated exon intervals this piece was cut from.
    pub sources: Vec<(i64, i64)>,
}

impl Exon {
    pub fn len(&self) -> i64 {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() <= 0
    }

    pub fn contains(&self, pos: i64) -> bool {
        self.start <= pos && pos <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub id: String,
    pub gene_id: String,
    pub strand: Strand,
    /// Strictly increasing island-local exon ids.
    pub exon_ids: Vec<u32>,
    /// Transcript length T in bp.
    pub length: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneIsland {
    pub island_id: String,
    pub chrom: String,
    pub strand: Strand,
    /// Exons with ids `1..=E`; `exons[i].id == i + 1`.
    pub exons: Vec<Exon>,
    pub variants: Vec<Variant>,
    pub source_gene_ids: Vec<String>,
    /// Genes on both strands were grouped; variants are oriented by the island strand.
    pub mixed_strand: bool,
}

impl GeneIsland {
    pub fn exon(&self, id: u32) -> &Exon {
        &self.exons[id as usize - 1]
    }

    pub fn variant_index(&self, id: &str) -> Option<usize> {
        self.variants.iter().position(|v| v.id == id)
    }

    /// Genomic span covered by the island's exons.
    pub fn span(&self) -> (i64, i64) {
        let lo = self.exons.iter().map(|e| e.start).min().unwrap_or(0);
        let hi = self.exons.iter().map(|e| e.end).max().unwrap_or(-1);
        (lo, hi)
    }

    /// Total bp covered by the union of the island's exons.
    pub fn covered_length(&self) -> i64 {
        let mut iv: Vec<(i64, i64)> = self.exons.iter().map(|e| (e.start, e.end)).collect();
        iv.sort_unstable();
        let mut total = 0;
        let mut cur: Option<(i64, i64)> = None;
        for (s, e) in iv {
            match cur {
                Some((cs, ce)) if s <= ce + 1 => cur = Some((cs, ce.max(e))),
                Some((cs, ce)) => {
                    total += ce - cs + 1;
                    cur = Some((s, e));
                }
                None => cur = Some((s, e)),
            }
        }
        if let Some((cs, ce)) = cur {
            total += ce - cs + 1;
        }
        total
    }
}

pub fn load_annotation(path: impl AsRef<Path>) -> Result<Vec<RawGene>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_annotation(std::io::BufReader::new(file), &path.display().to_string())
}

/// Parses the annotation TSV. `name` is used in diagnostics.
pub fn parse_annotation<R: BufRead>(reader: R, name: &str) -> Result<Vec<RawGene>> {
    struct GeneAcc {
        chrom: String,
        strand: Strand,
        transcripts: BTreeMap<String, BTreeSet<(i64, i64)>>,
    }

    let mut genes: BTreeMap<String, GeneAcc> = BTreeMap::new();
    let mut tx_gene: HashMap<String, String> = HashMap::new();
    let mut saw_header = false;

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(name, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if !saw_header {
            if fields != ANNOTATION_HEADER {
                return Err(Error::parse(
                    name,
                    lineno,
                    format!("expected header '{}'", ANNOTATION_HEADER.join("\\t")),
                ));
            }
            saw_header = true;
            continue;
        }
        if fields.len() != 6 {
            return Err(Error::parse(
                name,
                lineno,
                format!("expected 6 tab-separated fields, found {}", fields.len()),
            ));
        }
        let strand: Strand = fields[3]
            .parse()
            .map_err(|m: String| Error::parse(name, lineno, m))?;
        let start = parse_coord(fields[4], name, lineno)?;
        let end = parse_coord(fields[5], name, lineno)?;
        if end < start {
            return Err(Error::parse(
                name,
                lineno,
                format!("exon end {end} is before start {start}"),
            ));
        }
        let (gene_id, tx_id, chrom) = (fields[0], fields[1], fields[2]);
        if gene_id.is_empty() || tx_id.is_empty() || chrom.is_empty() {
            return Err(Error::parse(name, lineno, "empty identifier"));
        }

        if let Some(owner) = tx_gene.get(tx_id) {
            if owner != gene_id {
                return Err(Error::parse(
                    name,
                    lineno,
                    format!("transcript {tx_id} listed under genes {owner} and {gene_id}"),
                ));
            }
        } else {
            tx_gene.insert(tx_id.to_string(), gene_id.to_string());
        }

        let acc = genes.entry(gene_id.to_string()).or_insert_with(|| GeneAcc {
            chrom: chrom.to_string(),
            strand,
            transcripts: BTreeMap::new(),
        });
        if acc.chrom != chrom {
            return Err(Error::parse(
                name,
                lineno,
                format!("gene {gene_id} spans chromosomes {} and {chrom}", acc.chrom),
            ));
        }
        if acc.strand != strand {
            return Err(Error::parse(
                name,
                lineno,
                format!("gene {gene_id} has exons on both strands"),
            ));
        }
        let exons = acc.transcripts.entry(tx_id.to_string()).or_default();
        if !exons.insert((start, end)) {
            return Err(Error::parse(
                name,
                lineno,
                format!("duplicate exon {start}-{end} in transcript {tx_id}"),
            ));
        }
    }

    let mut out = Vec::with_capacity(genes.len());
    for (id, acc) in genes {
        let mut transcripts = Vec::with_capacity(acc.transcripts.len());
        for (tx, exons) in acc.transcripts {
            let exons: Vec<(i64, i64)> = exons.into_iter().collect();
            if let Some(w) = exons.windows(2).find(|w| w[1].0 <= w[0].1) {
                return Err(Error::InvalidInput(format!(
                    "{name}: transcript {tx} has overlapping exons {}-{} and {}-{}",
                    w[0].0, w[0].1, w[1].0, w[1].1
                )));
            }
            transcripts.push(RawTranscript { id: tx, exons });
        }
        out.push(RawGene {
            id,
            chrom: acc.chrom,
            strand: acc.strand,
            transcripts,
        });
    }
    Ok(out)
}

fn parse_coord(s: &str, name: &str, line: usize) -> Result<i64> {
    let v: i64 = s
        .trim()
        .parse()
        .map_err(|_| Error::parse(name, line, format!("invalid coordinate '{s}'")))?;
    if v < 1 {
        return Err(Error::parse(name, line, format!("coordinate {v} must be >= 1")));
    }
    Ok(v)
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Groups genes whose exons overlap (transitively) into islands.
///
/// Island exons are the distinct annotated exon intervals in genomic order;
/// they may still overlap each other until [`subdivide_exons`] runs.
pub fn build_islands(genes: &[RawGene]) -> Vec<GeneIsland> {
    let mut by_chrom: BTreeMap<&str, Vec<(i64, i64, usize)>> = BTreeMap::new();
    for (gi, gene) in genes.iter().enumerate() {
        for tx in &gene.transcripts {
            for &(s, e) in &tx.exons {
                by_chrom.entry(&gene.chrom).or_default().push((s, e, gi));
            }
        }
    }

    let mut sets = DisjointSet::new(genes.len());
    for exons in by_chrom.values_mut() {
        exons.sort_unstable();
        let mut reach: Option<(i64, usize)> = None;
        for &(s, e, gi) in exons.iter() {
            match reach {
                Some((end, rep)) if s <= end => {
                    sets.union(rep, gi);
                    reach = Some((end.max(e), rep));
                }
                _ => reach = Some((e, gi)),
            }
        }
    }

    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for gi in 0..genes.len() {
        if genes[gi].transcripts.is_empty() {
            continue;
        }
        let root = sets.find(gi);
        groups.entry(root).or_default().push(gi);
    }

    let mut islands: Vec<GeneIsland> = groups
        .into_values()
        .map(|members| island_from_genes(genes, members))
        .collect();
    islands.sort_by(|a, b| {
        (a.chrom.as_str(), a.span().0, a.island_id.as_str()).cmp(&(
            b.chrom.as_str(),
            b.span().0,
            b.island_id.as_str(),
        ))
    });
    islands
}

fn island_from_genes(genes: &[RawGene], mut members: Vec<usize>) -> GeneIsland {
    members.sort_by(|&a, &b| genes[a].id.cmp(&genes[b].id));
    let first = &genes[members[0]];
    let strand = first.strand;
    let mixed_strand = members.iter().any(|&g| genes[g].strand != strand);

    let intervals: BTreeSet<(i64, i64)> = members
        .iter()
        .flat_map(|&g| genes[g].transcripts.iter())
        .flat_map(|t| t.exons.iter().copied())
        .collect();
    let index: HashMap<(i64, i64), u32> = intervals
        .iter()
        .enumerate()
        .map(|(i, &iv)| (iv, i as u32 + 1))
        .collect();
    let exons = intervals
        .iter()
        .enumerate()
        .map(|(i, &(start, end))| Exon {
            id: i as u32 + 1,
            chrom: first.chrom.clone(),
            start,
            end,
            sources: vec![(start, end)],
        })
        .collect();

    let mut variants: Vec<Variant> = members
        .iter()
        .flat_map(|&g| {
            let gene = &genes[g];
            let index = &index;
            gene.transcripts.iter().map(move |t| Variant {
                id: t.id.clone(),
                gene_id: gene.id.clone(),
                strand: gene.strand,
                exon_ids: t.exons.iter().map(|iv| index[iv]).collect(),
                length: t.exons.iter().map(|&(s, e)| e - s + 1).sum(),
            })
        })
        .collect();
    variants.sort_by(|a, b| a.id.cmp(&b.id));

    let source_gene_ids: Vec<String> = members.iter().map(|&g| genes[g].id.clone()).collect();
    GeneIsland {
        island_id: source_gene_ids.join("+"),
        chrom: first.chrom.clone(),
        strand,
        exons,
        variants,
        source_gene_ids,
        mixed_strand,
    }
}

/// Cuts island exons into pieces such that each piece is either fully
/// included in or fully excluded from every variant.
///
/// Two adjacent bp end up in the same piece iff they are covered by exactly
/// the same set of variants. Piece ids are assigned in transcript orientation.
pub fn subdivide_exons(island: &GeneIsland) -> GeneIsland {
    let n_var = island.variants.len();
    let variant_intervals: Vec<Vec<(i64, i64)>> = island
        .variants
        .iter()
        .map(|v| {
            v.exon_ids
                .iter()
                .map(|&id| {
                    let e = island.exon(id);
                    (e.start, e.end)
                })
                .collect()
        })
        .collect();

    let mut breaks: BTreeSet<i64> = BTreeSet::new();
    for ivs in &variant_intervals {
        for &(s, e) in ivs {
            breaks.insert(s);
            breaks.insert(e + 1);
        }
    }
    let breaks: Vec<i64> = breaks.into_iter().collect();

    // (start, end, membership) for each covered elementary segment, merged
    // with its left neighbour when contiguous and equally shared.
    let mut pieces: Vec<(i64, i64, Vec<bool>)> = Vec::new();
    for w in breaks.windows(2) {
        let (s, e) = (w[0], w[1] - 1);
        let member: Vec<bool> = variant_intervals
            .iter()
            .map(|ivs| ivs.iter().any(|&(a, b)| a <= s && e <= b))
            .collect();
        if !member.iter().any(|&m| m) {
            continue;
        }
        match pieces.last_mut() {
            Some(last) if last.1 + 1 == s && last.2 == member => last.1 = e,
            _ => pieces.push((s, e, member)),
        }
    }

    if island.strand == Strand::Minus {
        pieces.reverse();
    }

    let exons: Vec<Exon> = pieces
        .iter()
        .enumerate()
        .map(|(i, &(start, end, _))| {
            let mut sources: Vec<(i64, i64)> = island
                .exons
                .iter()
                .filter(|old| old.start <= end && start <= old.end)
                .flat_map(|old| old.sources.iter().copied())
                .filter(|&(a, b)| a <= end && start <= b)
                .collect();
            sources.sort_unstable();
            sources.dedup();
            Exon {
                id: i as u32 + 1,
                chrom: island.chrom.clone(),
                start,
                end,
                sources,
            }
        })
        .collect();

    let variants = (0..n_var)
        .map(|d| {
            let v = &island.variants[d];
            let exon_ids: Vec<u32> = pieces
                .iter()
                .enumerate()
                .filter(|(_, p)| p.2[d])
                .map(|(i, _)| i as u32 + 1)
                .collect();
            let length = exon_ids.iter().map(|&id| exons[id as usize - 1].len()).sum();
            Variant {
                id: v.id.clone(),
                gene_id: v.gene_id.clone(),
                strand: v.strand,
                exon_ids,
                length,
            }
        })
        .collect();

    GeneIsland {
        island_id: island.island_id.clone(),
        chrom: island.chrom.clone(),
        strand: island.strand,
        exons,
        variants,
        source_gene_ids: island.source_gene_ids.clone(),
        mixed_strand: island.mixed_strand,
    }
}

/// Loads an annotation and returns subdivided islands.
pub fn load_islands(path: impl AsRef<Path>) -> Result<Vec<GeneIsland>> {
    let genes = load_annotation(path)?;
    Ok(build_islands(&genes).iter().map(subdivide_exons).collect())
}

/// Exon start positions of a variant after splicing out introns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplicedLayout {
    pub variant_id: String,
    /// `starts[k]` is the transcript-space start of the variant's k-th exon;
    /// `starts[0] == 1`.
    pub starts: Vec<i64>,
    /// Transcript length T.
    pub length: i64,
    strand: Strand,
    /// Genomic intervals of the variant's exons, in transcript order.
    genomic: Vec<(i64, i64)>,
}

pub fn spliced_layout(island: &GeneIsland, variant: &Variant) -> SplicedLayout {
    let genomic: Vec<(i64, i64)> = variant
        .exon_ids
        .iter()
        .map(|&id| {
            let e = island.exon(id);
            (e.start, e.end)
        })
        .collect();
    let mut starts = Vec::with_capacity(genomic.len());
    let mut next = 1;
    for &(s, e) in &genomic {
        starts.push(next);
        next += e - s + 1;
    }
    SplicedLayout {
        variant_id: variant.id.clone(),
        starts,
        length: next - 1,
        strand: island.strand,
        genomic,
    }
}

impl SplicedLayout {
    /// Start of exon `k` in transcript space, with `k == n_exons` giving `T + 1`.
    pub fn start_or_end(&self, k: usize) -> i64 {
        self.starts.get(k).copied().unwrap_or(self.length + 1)
    }

    pub fn n_exons(&self) -> usize {
        self.starts.len()
    }

    /// Index (into the variant's exon list) of the exon holding transcript position `pos`.
    pub fn exon_at(&self, pos: i64) -> Option<usize> {
        if pos < 1 || pos > self.length {
            return None;
        }
        Some(self.starts.partition_point(|&s| s <= pos) - 1)
    }

    /// Maps a genomic bp to its transcript-space position.
    pub fn to_spliced(&self, genomic: i64) -> Option<i64> {
        self.genomic
            .iter()
            .zip(&self.starts)
            .find(|((s, e), _)| *s <= genomic && genomic <= *e)
            .map(|(&(s, e), &st)| match self.strand {
                Strand::Plus => st + genomic - s,
                Strand::Minus => st + e - genomic,
            })
    }

    /// Maps a transcript-space position back to its genomic bp.
    pub fn to_genomic(&self, pos: i64) -> Option<i64> {
        let k = self.exon_at(pos)?;
        let (s, e) = self.genomic[k];
        let off = pos - self.starts[k];
        Some(match self.strand {
            Strand::Plus => s + off,
            Strand::Minus => e - off,
        })
    }

    /// Genomic blocks covering transcript positions `from..=to`, sorted by
    /// genomic start.
    pub fn genomic_blocks(&self, from: i64, to: i64) -> Vec<(i64, i64)> {
        let mut blocks = Vec::new();
        for (k, &(gs, ge)) in self.genomic.iter().enumerate() {
            let ts = self.starts[k];
            let te = self.start_or_end(k + 1) - 1;
            let (lo, hi) = (from.max(ts), to.min(te));
            if lo > hi {
                continue;
            }
            let block = match self.strand {
                Strand::Plus => (gs + lo - ts, gs + hi - ts),
                Strand::Minus => (ge - (hi - ts), ge - (lo - ts)),
            };
            blocks.push(block);
        }
        blocks.sort_unstable();
        blocks
    }
}
