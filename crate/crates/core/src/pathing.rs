//! Exon paths: the per-fragment data summary, and per-island path counts.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::genome::{GeneIsland, SplicedLayout, Strand};

pub const FRAGMENTS_HEADER: [&str; 4] = ["fragment_id", "chrom", "left_blocks", "right_blocks"];
pub const PATH_COUNTS_HEADER: [&str; 3] = ["island_id", "path", "count"];

/// A paired-end fragment with gapped alignments for both ends.
///
/// `left_blocks` is the end with the lower genomic coordinate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FragmentAlignment {
    pub fragment_id: String,
    pub chrom: String,
    pub left_blocks: Vec<(i64, i64)>,
    pub right_blocks: Vec<(i64, i64)>,
}

impl FragmentAlignment {
    /// Aligned bp of each end.
    pub fn end_lengths(&self) -> (i64, i64) {
        let sum = |b: &[(i64, i64)]| b.iter().map(|&(s, e)| e - s + 1).sum();
        (sum(&self.left_blocks), sum(&self.right_blocks))
    }
}

/// Exon ids visited by the left and right read, in transcript orientation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ExonPath {
    pub left: Vec<u32>,
    pub right: Vec<u32>,
}

impl ExonPath {
    pub fn new(left: Vec<u32>, right: Vec<u32>) -> Self {
        Self { left, right }
    }
}

impl fmt::Display for ExonPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let side = |ids: &[u32]| {
            ids.iter()
                .map(u32::to_string)
                .collect::<Vec<_>>()
                .join(",")
        };
        write!(f, "{{{}}}|{{{}}}", side(&self.left), side(&self.right))
    }
}

impl FromStr for ExonPath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bytes = s.as_bytes();
        let mut pos = 0;
        let left = parse_side(bytes, &mut pos)?;
        if bytes.get(pos) != Some(&b'|') {
            return Err(syntax(pos, "expected '|'"));
        }
        pos += 1;
        let right = parse_side(bytes, &mut pos)?;
        if pos != bytes.len() {
            return Err(syntax(pos, "trailing characters"));
        }
        Ok(ExonPath { left, right })
    }
}

fn syntax(pos: usize, msg: &str) -> Error {
    Error::PathSyntax {
        pos,
        msg: msg.to_string(),
    }
}

fn parse_side(b: &[u8], pos: &mut usize) -> Result<Vec<u32>> {
    if b.get(*pos) != Some(&b'{') {
        return Err(syntax(*pos, "expected '{'"));
    }
    *pos += 1;
    let mut ids: Vec<u32> = Vec::new();
    loop {
        let start = *pos;
        while b.get(*pos).is_some_and(u8::is_ascii_digit) {
            *pos += 1;
        }
        if start == *pos {
            return Err(syntax(*pos, "expected exon id"));
        }
        let id: u32 = std::str::from_utf8(&b[start..*pos])
            .unwrap()
            .parse()
            .map_err(|_| syntax(start, "exon id out of range"))?;
        if id == 0 {
            return Err(syntax(start, "exon ids start at 1"));
        }
        if ids.last().is_some_and(|&last| last >= id) {
            return Err(syntax(start, "exon ids must be strictly increasing"));
        }
        ids.push(id);
        match b.get(*pos) {
            Some(b',') => *pos += 1,
            Some(b'}') => {
                *pos += 1;
                return Ok(ids);
            }
            _ => return Err(syntax(*pos, "expected ',' or '}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum UnmappedReason {
    /// Some aligned bp fall outside every exon piece.
    OutsideExons,
    /// The transcript-left end starts after the transcript-right end.
    EndsOutOfOrder,
    /// No island exon contains the fragment.
    NoIsland,
    /// The two ends land in different islands.
    SplitIslands,
}

impl UnmappedReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            UnmappedReason::OutsideExons => "outside-exons",
            UnmappedReason::EndsOutOfOrder => "ends-out-of-order",
            UnmappedReason::NoIsland => "no-island",
            UnmappedReason::SplitIslands => "split-islands",
        }
    }
}

impl fmt::Display for UnmappedReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PathOutcome {
    Mapped(ExonPath),
    Unmapped(UnmappedReason),
}

/// Island exon ids intersected by a set of blocks, or `None` if any bp of the
/// blocks lies outside every exon.
fn pieces_for_blocks(blocks: &[(i64, i64)], island: &GeneIsland) -> Option<Vec<u32>> {
    let mut ids = Vec::new();
    for &(bs, be) in blocks {
        let mut covered = 0;
        for ex in &island.exons {
            let (lo, hi) = (bs.max(ex.start), be.min(ex.end));
            if lo <= hi {
                covered += hi - lo + 1;
                ids.push(ex.id);
            }
        }
        if covered != be - bs + 1 {
            return None;
        }
    }
    ids.sort_unstable();
    ids.dedup();
    Some(ids)
}

/// Exon path followed by a fragment within an island.
pub fn fragment_to_path(frag: &FragmentAlignment, island: &GeneIsland) -> Result<PathOutcome> {
    if frag.chrom != island.chrom {
        return Err(Error::InvalidInput(format!(
            "fragment {} on {} routed to island {} on {}",
            frag.fragment_id, frag.chrom, island.island_id, island.chrom
        )));
    }
    let (Some(lo_ids), Some(hi_ids)) = (
        pieces_for_blocks(&frag.left_blocks, island),
        pieces_for_blocks(&frag.right_blocks, island),
    ) else {
        return Ok(PathOutcome::Unmapped(UnmappedReason::OutsideExons));
    };

    let first = |b: &[(i64, i64)]| b.iter().map(|x| x.0).min().unwrap_or(i64::MAX);
    let last = |b: &[(i64, i64)]| b.iter().map(|x| x.1).max().unwrap_or(i64::MIN);
    let (left, right, in_order) = match island.strand {
        Strand::Plus => (
            lo_ids,
            hi_ids,
            first(&frag.left_blocks) <= first(&frag.right_blocks),
        ),
        Strand::Minus => (
            hi_ids,
            lo_ids,
            last(&frag.right_blocks) >= last(&frag.left_blocks),
        ),
    };
    if !in_order {
        return Ok(PathOutcome::Unmapped(UnmappedReason::EndsOutOfOrder));
    }
    Ok(PathOutcome::Mapped(ExonPath { left, right }))
}

/// Transcript-space start and length of a fragment under one variant, or
/// `None` when the fragment is not a contiguous gapless read pair on it.
pub fn spliced_fragment(frag: &FragmentAlignment, layout: &SplicedLayout, read_length: i64) -> Option<(i64, i64)> {
    let span = |blocks: &[(i64, i64)]| -> Option<(i64, i64)> {
        let mut lo = i64::MAX;
        let mut hi = i64::MIN;
        for &(s, e) in blocks {
            for g in [s, e] {
                let t = layout.to_spliced(g)?;
                lo = lo.min(t);
                hi = hi.max(t);
            }
        }
        (hi - lo + 1 == read_length).then_some((lo, hi))
    };
    let a = span(&frag.left_blocks)?;
    let b = span(&frag.right_blocks)?;
    let (first, second) = if a.0 <= b.0 { (a, b) } else { (b, a) };
    let start = first.0;
    let end = first.1.max(second.1);
    Some((start, end - start + 1))
}

/// Routes fragments to islands by the exon piece containing them.
#[derive(Debug, Clone)]
pub struct IslandIndex {
    islands: Vec<GeneIsland>,
    by_chrom: BTreeMap<String, Vec<(i64, i64, usize)>>,
}

impl IslandIndex {
    pub fn new(islands: Vec<GeneIsland>) -> Self {
        let mut by_chrom: BTreeMap<String, Vec<(i64, i64, usize)>> = BTreeMap::new();
        for (i, isl) in islands.iter().enumerate() {
            for ex in &isl.exons {
                by_chrom
                    .entry(isl.chrom.clone())
                    .or_default()
                    .push((ex.start, ex.end, i));
            }
        }
        for v in by_chrom.values_mut() {
            v.sort_unstable();
        }
        Self { islands, by_chrom }
    }

    pub fn islands(&self) -> &[GeneIsland] {
        &self.islands
    }

    pub fn get(&self, island_id: &str) -> Option<&GeneIsland> {
        self.islands.iter().find(|i| i.island_id == island_id)
    }

    fn locate(&self, chrom: &str, pos: i64) -> Option<usize> {
        let pieces = self.by_chrom.get(chrom)?;
        let i = pieces.partition_point(|p| p.0 <= pos);
        if i == 0 {
            return None;
        }
        let (s, e, isl) = pieces[i - 1];
        (s <= pos && pos <= e).then_some(isl)
    }

    /// Island owning the fragment, or the reason it has none.
    pub fn route(&self, frag: &FragmentAlignment) -> std::result::Result<usize, UnmappedReason> {
        let mut owner = None;
        let mut any_hit = false;
        let mut any_miss = false;
        for &(s, _) in frag.left_blocks.iter().chain(&frag.right_blocks) {
            match self.locate(&frag.chrom, s) {
                Some(i) => {
                    any_hit = true;
                    match owner {
                        None => owner = Some(i),
                        Some(o) if o != i => return Err(UnmappedReason::SplitIslands),
                        _ => {}
                    }
                }
                None => any_miss = true,
            }
        }
        match owner {
            Some(i) if any_hit => Ok(i),
            _ if any_miss => Err(UnmappedReason::NoIsland),
            _ => Err(UnmappedReason::NoIsland),
        }
    }
}

/// Path counts x_k for one island.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PathCountTable {
    pub island_id: String,
    pub counts: BTreeMap<ExonPath, u64>,
    pub total: u64,
}

impl PathCountTable {
    pub fn new(island_id: impl Into<String>) -> Self {
        Self {
            island_id: island_id.into(),
            ..Default::default()
        }
    }

    pub fn add(&mut self, path: ExonPath, n: u64) {
        *self.counts.entry(path).or_insert(0) += n;
        self.total += n;
    }

    pub fn merge(&mut self, other: PathCountTable) {
        for (p, n) in other.counts {
            self.add(p, n);
        }
    }
}

/// Result of counting a fragment stream.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PathCounts {
    pub tables: BTreeMap<String, PathCountTable>,
    pub unmapped: BTreeMap<UnmappedReason, u64>,
    pub mapped: u64,
    /// Read length: given, or the longest aligned end observed.
    pub read_length: Option<i64>,
    /// Fragments with at least one end shorter than `read_length`.
    pub short_ends: u64,
}

impl PathCounts {
    pub fn n_unmapped(&self) -> u64 {
        self.unmapped.values().sum()
    }

    pub fn merge(&mut self, other: PathCounts) {
        for (id, t) in other.tables {
            self.tables
                .entry(id.clone())
                .or_insert_with(|| PathCountTable::new(id))
                .merge(t);
        }
        for (r, n) in other.unmapped {
            *self.unmapped.entry(r).or_insert(0) += n;
        }
        self.mapped += other.mapped;
        self.short_ends += other.short_ends;
        self.read_length = self.read_length.max(other.read_length);
    }
}

/// Ends longer than the read length are an error; shorter ends (trimmed or
/// soft-clipped) are tallied in `PathCounts::short_ends`.
fn check_read_length(frag: &FragmentAlignment, limit: i64) -> Result<bool> {
    let (l, r) = frag.end_lengths();
    if l > limit || r > limit {
        return Err(Error::InvalidInput(format!(
            "fragment {}: aligned end lengths {l}/{r} exceed read length {limit}",
            frag.fragment_id
        )));
    }
    Ok(l < limit || r < limit)
}

fn count_chunk(chunk: &[FragmentAlignment], index: &IslandIndex, limit: Option<i64>) -> Result<PathCounts> {
    let mut out = PathCounts::default();
    for frag in chunk {
        let (l, r) = frag.end_lengths();
        out.read_length = out.read_length.max(Some(l.max(r)));
        if let Some(limit) = limit {
            if check_read_length(frag, limit)? {
                out.short_ends += 1;
            }
        }
        let outcome = match index.route(frag) {
            Ok(i) => {
                let isl = &index.islands[i];
                fragment_to_path(frag, isl)?.map_island(&isl.island_id)
            }
            Err(reason) => Err(reason),
        };
        match outcome {
            Ok((id, path)) => {
                out.tables
                    .entry(id.to_string())
                    .or_insert_with(|| PathCountTable::new(id))
                    .add(path, 1);
                out.mapped += 1;
            }
            Err(reason) => *out.unmapped.entry(reason).or_insert(0) += 1,
        }
    }
    Ok(out)
}

impl PathOutcome {
    fn map_island(self, id: &str) -> std::result::Result<(&str, ExonPath), UnmappedReason> {
        match self {
            PathOutcome::Mapped(p) => Ok((id, p)),
            PathOutcome::Unmapped(r) => Err(r),
        }
    }
}

const CHUNK: usize = 50_000;

/// Counts exon paths over a fragment stream, in bounded-size parallel chunks.
///
/// Without an explicit `read_length` the longest aligned end seen is used and
/// `short_ends` counts fragments with a shorter end.
pub fn count_paths<I>(frags: I, index: &IslandIndex, read_length: Option<i64>) -> Result<PathCounts>
where
    I: IntoIterator<Item = Result<FragmentAlignment>>,
{
    let mut total = PathCounts::default();
    // shorter end length -> fragments, to count short ends once the maximum is known
    let mut shortest: BTreeMap<i64, u64> = BTreeMap::new();
    let mut iter = frags.into_iter();
    loop {
        let chunk: Vec<FragmentAlignment> = iter.by_ref().take(CHUNK).collect::<Result<_>>()?;
        if chunk.is_empty() {
            break;
        }
        if read_length.is_none() {
            for f in &chunk {
                let (a, b) = f.end_lengths();
                *shortest.entry(a.min(b)).or_insert(0) += 1;
            }
        }
        let part = chunk
            .par_chunks(4096)
            .map(|c| count_chunk(c, index, read_length))
            .try_reduce(PathCounts::default, |mut a, b| {
                a.merge(b);
                Ok(a)
            })?;
        total.merge(part);
    }
    match read_length {
        Some(r) => total.read_length = Some(r),
        None => {
            if let Some(r) = total.read_length {
                total.short_ends = shortest.range(..r).map(|(_, n)| n).sum();
            }
        }
    }
    if total.short_ends > 0 {
        log::warn!(
            "{} fragments have an aligned end shorter than the read length {}",
            total.short_ends,
            total.read_length.unwrap_or(0)
        );
    }
    Ok(total)
}

fn parse_blocks(s: &str, name: &str, line: usize) -> Result<Vec<(i64, i64)>> {
    let mut blocks = Vec::new();
    for part in s.split(';') {
        let (a, b) = part
            .split_once('-')
            .ok_or_else(|| Error::parse(name, line, format!("invalid block '{part}'")))?;
        let parse = |x: &str| {
            x.trim()
                .parse::<i64>()
                .map_err(|_| Error::parse(name, line, format!("invalid coordinate in block '{part}'")))
        };
        let (a, b) = (parse(a)?, parse(b)?);
        if b < a || a < 1 {
            return Err(Error::parse(name, line, format!("invalid block '{part}'")));
        }
        if blocks.last().is_some_and(|&(_, pe): &(i64, i64)| a <= pe) {
            return Err(Error::parse(name, line, "blocks must be sorted and disjoint"));
        }
        blocks.push((a, b));
    }
    Ok(blocks)
}

pub fn format_blocks(blocks: &[(i64, i64)]) -> String {
    blocks
        .iter()
        .map(|(s, e)| format!("{s}-{e}"))
        .collect::<Vec<_>>()
        .join(";")
}

/// Streaming reader over a fragments TSV.
pub struct FragmentReader<R> {
    lines: std::iter::Enumerate<std::io::Lines<R>>,
    name: String,
    header_checked: bool,
}

impl<R: BufRead> FragmentReader<R> {
    pub fn new(reader: R, name: impl Into<String>) -> Self {
        Self {
            lines: reader.lines().enumerate(),
            name: name.into(),
            header_checked: false,
        }
    }
}

pub fn open_fragments(path: impl AsRef<Path>) -> Result<FragmentReader<std::io::BufReader<std::fs::File>>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(FragmentReader::new(
        std::io::BufReader::new(f),
        path.display().to_string(),
    ))
}

impl<R: BufRead> Iterator for FragmentReader<R> {
    type Item = Result<FragmentAlignment>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let (idx, line) = self.lines.next()?;
            let lineno = idx + 1;
            let line = match line {
                Ok(l) => l,
                Err(e) => return Some(Err(Error::io(&self.name, e))),
            };
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if !self.header_checked {
                self.header_checked = true;
                if fields != FRAGMENTS_HEADER {
                    return Some(Err(Error::parse(
                        &self.name,
                        lineno,
                        format!("expected header '{}'", FRAGMENTS_HEADER.join("\\t")),
                    )));
                }
                continue;
            }
            if fields.len() != 4 {
                return Some(Err(Error::parse(
                    &self.name,
                    lineno,
                    format!("expected 4 tab-separated fields, found {}", fields.len()),
                )));
            }
            let blocks = parse_blocks(fields[2], &self.name, lineno)
                .and_then(|l| Ok((l, parse_blocks(fields[3], &self.name, lineno)?)));
            return Some(blocks.map(|(left_blocks, right_blocks)| FragmentAlignment {
                fragment_id: fields[0].to_string(),
                chrom: fields[1].to_string(),
                left_blocks,
                right_blocks,
            }));
        }
    }
}

pub fn write_fragments<W: Write>(mut w: W, frags: &[FragmentAlignment]) -> std::io::Result<()> {
    writeln!(w, "{}", FRAGMENTS_HEADER.join("\t"))?;
    for f in frags {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            f.fragment_id,
            f.chrom,
            format_blocks(&f.left_blocks),
            format_blocks(&f.right_blocks)
        )?;
    }
    Ok(())
}

pub fn write_path_counts<'a, W, I>(mut w: W, tables: I) -> std::io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a PathCountTable>,
{
    writeln!(w, "{}", PATH_COUNTS_HEADER.join("\t"))?;
    for t in tables {
        for (p, n) in &t.counts {
            writeln!(w, "{}\t{}\t{}", t.island_id, p, n)?;
        }
    }
    Ok(())
}

pub fn write_unmapped<W: Write>(mut w: W, counts: &PathCounts) -> std::io::Result<()> {
    writeln!(w, "reason\tcount")?;
    writeln!(w, "mapped\t{}", counts.mapped)?;
    for reason in [
        UnmappedReason::OutsideExons,
        UnmappedReason::EndsOutOfOrder,
        UnmappedReason::NoIsland,
        UnmappedReason::SplitIslands,
    ] {
        writeln!(w, "{}\t{}", reason, counts.unmapped.get(&reason).copied().unwrap_or(0))?;
    }
    Ok(())
}

pub fn parse_path_counts<R: BufRead>(reader: R, name: &str) -> Result<BTreeMap<String, PathCountTable>> {
    let mut tables: BTreeMap<String, PathCountTable> = BTreeMap::new();
    let mut header = false;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(name, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if !header {
            if fields != PATH_COUNTS_HEADER {
                return Err(Error::parse(name, lineno, "expected header 'island_id\\tpath\\tcount'"));
            }
            header = true;
            continue;
        }
        if fields.len() != 3 {
            return Err(Error::parse(name, lineno, "expected 3 tab-separated fields"));
        }
        let path: ExonPath = fields[1]
            .parse()
            .map_err(|e: Error| Error::parse(name, lineno, e.to_string()))?;
        let n: u64 = fields[2]
            .parse()
            .map_err(|_| Error::parse(name, lineno, format!("invalid count '{}'", fields[2])))?;
        let t = tables
            .entry(fields[0].to_string())
            .or_insert_with(|| PathCountTable::new(fields[0]));
        if t.counts.contains_key(&path) {
            return Err(Error::parse(name, lineno, format!("duplicate path {path}")));
        }
        t.add(path, n);
    }
    Ok(tables)
}

pub fn read_path_counts(path: impl AsRef<Path>) -> Result<BTreeMap<String, PathCountTable>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_path_counts(std::io::BufReader::new(f), &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::{build_islands, parse_annotation, subdivide_exons};
    use proptest::prelude::*;

    const TOY: &str = "gene_id\ttranscript_id\tchrom\tstrand\texon_start\texon_end
toy\ttx1\tchr1\t+\t101\t400
toy\ttx1\tchr1\t+\t1001\t1100
toy\ttx1\tchr1\t+\t2001\t2500
toy\ttx2\tchr1\t+\t101\t400
toy\ttx2\tchr1\t+\t2001\t2500
toy\ttx3\tchr1\t+\t101\t400
toy\ttx3\tchr1\t+\t1001\t1100
";

    fn toy_island() -> GeneIsland {
        let g = parse_annotation(TOY.as_bytes(), "toy").unwrap();
        subdivide_exons(&build_islands(&g)[0])
    }

    fn frag(id: &str, l: &[(i64, i64)], r: &[(i64, i64)]) -> FragmentAlignment {
        FragmentAlignment {
            fragment_id: id.into(),
            chrom: "chr1".into(),
            left_blocks: l.to_vec(),
            right_blocks: r.to_vec(),
        }
    }

    fn three_fragments() -> Vec<FragmentAlignment> {
        vec![
            frag("f1", &[(110, 185)], &[(200, 274)]),
            frag("f2", &[(361, 400), (1001, 1035)], &[(2011, 2085)]),
            frag("f3", &[(301, 375)], &[(1021, 1095)]),
        ]
    }

    fn path(s: &str) -> ExonPath {
        s.parse().unwrap()
    }

    #[test]
    fn three_fragment_paths() {
        let isl = toy_island();
        let got: Vec<_> = three_fragments()
            .iter()
            .map(|f| fragment_to_path(f, &isl).unwrap())
            .collect();
        assert_eq!(
            got,
            vec![
                PathOutcome::Mapped(path("{1}|{1}")),
                PathOutcome::Mapped(path("{1,2}|{3}")),
                PathOutcome::Mapped(path("{1}|{2}")),
            ]
        );
    }

    #[test]
    fn chrom_mismatch_is_error() {
        let mut f = three_fragments().remove(0);
        f.chrom = "chr2".into();
        assert!(fragment_to_path(&f, &toy_island()).is_err());
    }

    #[test]
    fn intronic_and_reversed_fragments_unmapped() {
        let isl = toy_island();
        let off = frag("x", &[(380, 454)], &[(1001, 1075)]);
        assert_eq!(
            fragment_to_path(&off, &isl).unwrap(),
            PathOutcome::Unmapped(UnmappedReason::OutsideExons)
        );
        let rev = frag("y", &[(300, 374)], &[(110, 184)]);
        assert_eq!(
            fragment_to_path(&rev, &isl).unwrap(),
            PathOutcome::Unmapped(UnmappedReason::EndsOutOfOrder)
        );
    }

    #[test]
    fn count_three_fragments() {
        let index = IslandIndex::new(vec![toy_island()]);
        let counts = count_paths(three_fragments().into_iter().map(Ok), &index, None).unwrap();
        let t = &counts.tables["toy"];
        assert_eq!(t.total, 3);
        assert_eq!(t.counts.len(), 3);
        assert!(t.counts.values().all(|&n| n == 1));
        assert_eq!(counts.read_length, Some(76));
    }

    #[test]
    fn empty_stream_and_repeats() {
        let index = IslandIndex::new(vec![toy_island()]);
        let empty = count_paths(std::iter::empty(), &index, Some(75)).unwrap();
        assert!(empty.tables.is_empty());
        assert_eq!(empty.mapped + empty.n_unmapped(), 0);

        let one = three_fragments().remove(0);
        let many = count_paths((0..1000).map(|_| Ok(one.clone())), &index, None).unwrap();
        let t = &many.tables["toy"];
        assert_eq!(t.counts.len(), 1);
        assert_eq!(t.counts[&path("{1}|{1}")], 1000);
    }

    #[test]
    fn unmapped_are_counted_not_dropped() {
        let index = IslandIndex::new(vec![toy_island()]);
        let mut frags = three_fragments();
        frags.push(frag("off", &[(5000, 5074)], &[(5100, 5174)]));
        frags.push(frag("intron", &[(380, 454)], &[(1001, 1075)]));
        let c = count_paths(frags.into_iter().map(Ok), &index, None).unwrap();
        assert_eq!(c.mapped, 3);
        assert_eq!(c.unmapped[&UnmappedReason::NoIsland], 1);
        assert_eq!(c.unmapped[&UnmappedReason::OutsideExons], 1);
        assert_eq!(c.mapped + c.n_unmapped(), 5);
    }

    #[test]
    fn read_length_is_inferred_and_checked() {
        let index = IslandIndex::new(vec![toy_island()]);
        let c = count_paths(three_fragments().into_iter().map(Ok), &index, None).unwrap();
        assert_eq!(c.read_length, Some(76));
        assert_eq!(c.short_ends, 3);
        let c = count_paths(three_fragments().into_iter().map(Ok), &index, Some(80)).unwrap();
        assert_eq!((c.read_length, c.short_ends), (Some(80), 3));
        assert!(count_paths(three_fragments().into_iter().map(Ok), &index, Some(75)).is_err());
    }

    #[test]
    fn distinct_sides_are_distinct_keys() {
        let a = path("{1,2}|{3}");
        let b = path("{1}|{2,3}");
        assert_ne!(a, b);
        let mut t = PathCountTable::new("x");
        t.add(a, 1);
        t.add(b, 1);
        assert_eq!(t.counts.len(), 2);
    }

    #[test]
    fn serialization_examples() {
        assert_eq!(ExonPath::new(vec![1, 2], vec![3]).to_string(), "{1,2}|{3}");
        assert_eq!(path("{1}|{1}"), ExonPath::new(vec![1], vec![1]));
        for bad in ["", "{1}", "{1}|", "{}|{1}", "{1,1}|{2}", "{2,1}|{3}", "{1}|{2}x", "{0}|{1}", "{1;2}|{3}"] {
            assert!(bad.parse::<ExonPath>().is_err(), "{bad}");
        }
        match "{1}|[2}".parse::<ExonPath>() {
            Err(Error::PathSyntax { pos, .. }) => assert_eq!(pos, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn minus_strand_swaps_ends() {
        let text = "gene_id\ttranscript_id\tchrom\tstrand\texon_start\texon_end
g\tt\tchr1\t-\t100\t299
g\tt\tchr1\t-\t500\t699
";
        let g = parse_annotation(text.as_bytes(), "m").unwrap();
        let isl = subdivide_exons(&build_islands(&g)[0]);
        // genomic-left read lies in the 3' exon (id 2), right read spans the junction
        let f = frag("m", &[(250, 299)], &[(280, 299), (500, 529)]);
        assert_eq!(
            fragment_to_path(&f, &isl).unwrap(),
            PathOutcome::Mapped(path("{1,2}|{2}"))
        );
    }

    #[test]
    fn spliced_fragment_coordinates() {
        let isl = toy_island();
        let lay = crate::genome::spliced_layout(&isl, &isl.variants[0]);
        let f2 = &three_fragments()[1];
        // left starts at 361 -> 261; right ends at 2085 -> 400 + 85 = 485
        assert_eq!(spliced_fragment(f2, &lay, 75), Some((261, 225)));
        let lay2 = crate::genome::spliced_layout(&isl, &isl.variants[1]);
        assert_eq!(spliced_fragment(f2, &lay2, 75), None);
    }

    #[test]
    fn path_counts_tsv_round_trip() {
        let index = IslandIndex::new(vec![toy_island()]);
        let c = count_paths(three_fragments().into_iter().map(Ok), &index, None).unwrap();
        let mut buf = Vec::new();
        write_path_counts(&mut buf, c.tables.values()).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("island_id\tpath\tcount\n"));
        let back = parse_path_counts(buf.as_slice(), "mem").unwrap();
        assert_eq!(back, c.tables);
    }

    #[test]
    fn fragments_tsv_parse_errors() {
        let bad = "fragment_id\tchrom\tleft_blocks\tright_blocks\nf\tchr1\t10-5\t20-30\n";
        let r: Result<Vec<_>> = FragmentReader::new(bad.as_bytes(), "f").collect();
        assert!(matches!(r, Err(Error::Parse { line: 2, .. })));
        let good = "fragment_id\tchrom\tleft_blocks\tright_blocks\nf2\tchr1\t361-400;1001-1035\t2011-2085\n";
        let r: Vec<_> = FragmentReader::new(good.as_bytes(), "f").collect::<Result<_>>().unwrap();
        assert_eq!(r[0], three_fragments()[1]);
    }

    fn arb_side() -> impl Strategy<Value = Vec<u32>> {
        prop::collection::btree_set(1u32..500, 1..6).prop_map(|s| s.into_iter().collect())
    }

    proptest! {
        #[test]
        fn path_text_round_trip(l in arb_side(), r in arb_side()) {
            let p = ExonPath::new(l, r);
            prop_assert_eq!(p.to_string().parse::<ExonPath>().unwrap(), p);
        }

        #[test]
        fn counts_are_translation_invariant(shift in 0i64..1_000_000) {
            let text = TOY.lines().enumerate().map(|(i, line)| {
                if i == 0 { return format!("{line}\n"); }
                let f: Vec<&str> = line.split('\t').collect();
                let s: i64 = f[4].parse().unwrap();
                let e: i64 = f[5].parse().unwrap();
                format!("{}\t{}\t{}\t{}\t{}\t{}\n", f[0], f[1], f[2], f[3], s + shift, e + shift)
            }).collect::<String>();
            let g = parse_annotation(text.as_bytes(), "t").unwrap();
            let shifted = IslandIndex::new(vec![subdivide_exons(&build_islands(&g)[0])]);
            let base = IslandIndex::new(vec![toy_island()]);
            let mv = |b: &[(i64, i64)]| b.iter().map(|&(s, e)| (s + shift, e + shift)).collect::<Vec<_>>();
            let frags = three_fragments();
            let moved: Vec<_> = frags.iter().map(|f| frag(&f.fragment_id, &mv(&f.left_blocks), &mv(&f.right_blocks))).collect();
            let a = count_paths(frags.into_iter().map(Ok), &base, None).unwrap();
            let b = count_paths(moved.into_iter().map(Ok), &shifted, None).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
