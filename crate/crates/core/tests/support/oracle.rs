//! Brute-force reference computations used as test oracles. Nothing here
//! calls the algorithm it checks.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use splicequant::distributions::{LengthPmf, StartCdf};
use splicequant::genome::{GeneIsland, RawGene, Variant};
use splicequant::pathing::ExonPath;
use splicequant::pathprob::PathProbMatrix;

/// Exon id covering each transcript position; index 0 is unused.
pub fn position_exons(island: &GeneIsland, v: &Variant) -> Vec<u32> {
    let mut out = vec![0];
    for &id in &v.exon_ids {
        let e = &island.exons[id as usize - 1];
        out.extend(std::iter::repeat_n(id, (e.end - e.start + 1) as usize));
    }
    out
}

fn run_of(pos: &[u32], from: i64, to: i64) -> Vec<u32> {
    let mut ids: Vec<u32> = Vec::new();
    for p in from..=to {
        let id = pos[p as usize];
        if ids.last() != Some(&id) {
            ids.push(id);
        }
    }
    ids
}

/// Path probabilities of one variant by summing over every admissible
/// (start, length) pair.
///
/// `P(S = s | l) = [φ(s/T) - φ((s-1)/T)] / φ((T-l+1)/T)` for
/// `s = 1..=T-l+1`; lengths are restricted to `l <= T` with `φ((T-l+1)/T) > 0`
/// and renormalised.
pub fn enumerate_path_probs(island: &GeneIsland, v: &Variant, pmf: &LengthPmf, phi: &StartCdf, r: i64) -> BTreeMap<ExonPath, f64> {
    let pos = position_exons(island, v);
    let t = (pos.len() - 1) as i64;
    let tf = t as f64;
    let admissible: Vec<(i64, f64)> = pmf
        .iter()
        .filter(|&(l, _)| l <= t && phi.eval((t - l + 1) as f64 / tf) > 0.0)
        .collect();
    let mass: f64 = admissible.iter().map(|p| p.1).sum();
    let mut out = BTreeMap::new();
    for (l, pl) in admissible {
        let norm = phi.eval((t - l + 1) as f64 / tf);
        for s in 1..=(t - l + 1) {
            let ps = (phi.eval(s as f64 / tf) - phi.eval((s - 1) as f64 / tf)) / norm;
            if ps == 0.0 {
                continue;
            }
            let path = ExonPath {
                left: run_of(&pos, s, s + r - 1),
                right: run_of(&pos, s + l - r, s + l - 1),
            };
            *out.entry(path).or_insert(0.0) += ps * pl / mass;
        }
    }
    out
}

/// Maximal runs of adjacent bp covered by the same set of transcripts.
pub fn signature_pieces(genes: &[RawGene]) -> Vec<(i64, i64)> {
    let mut cover: BTreeMap<i64, BTreeSet<String>> = BTreeMap::new();
    for g in genes {
        for t in &g.transcripts {
            for &(s, e) in &t.exons {
                for p in s..=e {
                    cover.entry(p).or_default().insert(t.id.clone());
                }
            }
        }
    }
    let mut pieces: Vec<(i64, i64, BTreeSet<String>)> = Vec::new();
    for (p, sig) in cover {
        match pieces.last_mut() {
            Some(last) if last.1 + 1 == p && last.2 == sig => last.1 = p,
            _ => pieces.push((p, p, sig)),
        }
    }
    pieces.into_iter().map(|(s, e, _)| (s, e)).collect()
}

/// Groups of gene ids connected by exon overlap on the same chromosome,
/// by repeated pairwise merging.
pub fn overlap_groups(genes: &[RawGene]) -> BTreeSet<BTreeSet<String>> {
    let overlaps = |a: &RawGene, b: &RawGene| {
        a.chrom == b.chrom
            && a.transcripts.iter().flat_map(|t| &t.exons).any(|x| {
                b.transcripts
                    .iter()
                    .flat_map(|t| &t.exons)
                    .any(|y| x.0 <= y.1 && y.0 <= x.1)
            })
    };
    let mut groups: Vec<BTreeSet<usize>> = (0..genes.len()).map(|i| BTreeSet::from([i])).collect();
    loop {
        let mut merged = false;
        'outer: for i in 0..groups.len() {
            for j in i + 1..groups.len() {
                if groups[i]
                    .iter()
                    .any(|&a| groups[j].iter().any(|&b| overlaps(&genes[a], &genes[b])))
                {
                    let g = groups.remove(j);
                    groups[i].extend(g);
                    merged = true;
                    break 'outer;
                }
            }
        }
        if !merged {
            break;
        }
    }
    groups
        .into_iter()
        .map(|g| g.into_iter().map(|i| genes[i].id.clone()).collect())
        .collect()
}

/// Empirical CDF as (sorted distinct values, i/n at each).
pub fn ecdf(values: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut knots = Vec::new();
    let mut cdf = Vec::new();
    for (i, &x) in v.iter().enumerate() {
        if knots.last() == Some(&x) {
            *cdf.last_mut().unwrap() = (i + 1) as f64 / n;
        } else {
            knots.push(x);
            cdf.push((i + 1) as f64 / n);
        }
    }
    (knots, cdf)
}

/// `Σ_k x_k log(Σ_d p_kd π_d) + Σ_d (q_d - 1) log π_d`, computed directly.
pub fn log_posterior(pi: &[f64], counts: &[f64], probs: &PathProbMatrix, q: &[f64]) -> f64 {
    let mut f = 0.0;
    for (k, &x) in counts.iter().enumerate() {
        let m: f64 = (0..pi.len()).map(|d| probs.get(k, d) * pi[d]).sum();
        f += x * m.ln();
    }
    for d in 0..pi.len() {
        f += (q[d] - 1.0) * pi[d].ln();
    }
    f
}

pub fn softmax_ref(theta: &[f64]) -> Vec<f64> {
    let mut e: Vec<f64> = std::iter::once(1.0).chain(theta.iter().map(|t| t.exp())).collect();
    let s: f64 = e.iter().sum();
    e.iter_mut().for_each(|x| *x /= s);
    e
}

/// Gradient in θ of [`log_posterior`] via the chain rule through softmax:
/// `∂f/∂θ_l = π_{l+1} (∂f/∂π_{l+1} - Σ_d π_d ∂f/∂π_d)`.
pub fn theta_gradient(theta: &[f64], counts: &[f64], probs: &PathProbMatrix, q: &[f64]) -> Vec<f64> {
    let pi = softmax_ref(theta);
    let n = pi.len();
    let mut df = vec![0.0; n];
    for (k, &x) in counts.iter().enumerate() {
        let m: f64 = (0..n).map(|d| probs.get(k, d) * pi[d]).sum();
        for d in 0..n {
            df[d] += x * probs.get(k, d) / m;
        }
    }
    for d in 0..n {
        df[d] += (q[d] - 1.0) / pi[d];
    }
    let avg: f64 = (0..n).map(|d| pi[d] * df[d]).sum();
    (0..theta.len()).map(|l| pi[l + 1] * (df[l + 1] - avg)).collect()
}

/// Central differences of a vector function; returns `J[i][j] = ∂f_i/∂x_j`.
pub fn central_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Vec<Vec<f64>> {
    let m = f(x).len();
    let mut jac = vec![vec![0.0; x.len()]; m];
    for j in 0..x.len() {
        let mut up = x.to_vec();
        let mut dn = x.to_vec();
        up[j] += h;
        dn[j] -= h;
        let (fu, fd) = (f(&up), f(&dn));
        for i in 0..m {
            jac[i][j] = (fu[i] - fd[i]) / (2.0 * h);
        }
    }
    jac
}

/// Maximiser of `f` over the grid `step, 2 step, ..., 1 - step`.
pub fn grid_argmax(f: impl Fn(f64) -> f64, step: f64) -> f64 {
    let n = (1.0 / step).round() as usize;
    (1..n)
        .map(|i| i as f64 * step)
        .map(|a| (a, f(a)))
        .fold((f64::NAN, f64::NEG_INFINITY), |best, (a, v)| if v > best.1 { (a, v) } else { best })
        .0
}

/// Posterior mean of `a` on (0, 1) under log-density `f`, midpoint rule.
pub fn quadrature_mean(f: impl Fn(f64) -> f64, n: usize) -> f64 {
    let pts: Vec<(f64, f64)> = (0..n)
        .map(|i| (i as f64 + 0.5) / n as f64)
        .map(|a| (a, f(a)))
        .collect();
    let top = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for (a, v) in pts {
        let w = (v - top).exp();
        num += a * w;
        den += w;
    }
    num / den
}

/// Standard error of a chain mean by non-overlapping batch means.
pub fn batch_means_se(x: &[f64], batches: usize) -> f64 {
    let size = x.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| x[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let m = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (var / batches as f64).sqrt()
}
