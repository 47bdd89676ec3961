use crate::error::{Error, Result};
use crate::pathprob::PathProbMatrix;

use super::{log_posterior, PriorSpec};

/// Iterates are kept at or above this value.
pub const PI_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct EmOptions {
    /// Stop once `max_d |π_d' - π_d| < tol`.
    pub tol: f64,
    pub max_iter: usize,
    /// Record the log-posterior after every iteration.
    pub trace: bool,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-5,
            max_iter: 100_000,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmFit {
    pub pi: Vec<f64>,
    pub iters: usize,
    pub converged: bool,
    /// No usable counts; `pi` is the prior mean.
    pub no_data: bool,
    /// Log-posterior at the start point followed by one value per iteration.
    pub trace: Vec<f64>,
}

/// Posterior mode of π, starting from the prior mean `q_d / Σ q`.
pub fn em_estimate(counts: &[f64], probs: &PathProbMatrix, prior: &PriorSpec, opts: &EmOptions) -> Result<EmFit> {
    em_estimate_from(&prior.mean(), counts, probs, prior, opts)
}

/// EM from an arbitrary interior starting point.
///
/// Each iteration sets `π_d' ∝ q_d - 1 + Σ_k x_k p_kd π_d / Σ_i p_ki π_i`.
pub fn em_estimate_from(
    init: &[f64],
    counts: &[f64],
    probs: &PathProbMatrix,
    prior: &PriorSpec,
    opts: &EmOptions,
) -> Result<EmFit> {
    let n = probs.n_variants();
    if prior.len() != n || init.len() != n {
        return Err(Error::Inference(format!(
            "island {}: {} variants but prior has {} and start point {} entries",
            probs.island_id,
            n,
            prior.len(),
            init.len()
        )));
    }
    if counts.len() != probs.n_paths() {
        return Err(Error::Inference(format!(
            "island {}: {} counts for {} paths",
            probs.island_id,
            counts.len(),
            probs.n_paths()
        )));
    }
    if n == 1 {
        return Ok(EmFit {
            pi: vec![1.0],
            iters: 1,
            converged: true,
            no_data: counts.iter().all(|&x| x == 0.0),
            trace: Vec::new(),
        });
    }
    if counts.iter().all(|&x| x == 0.0) {
        return Ok(EmFit {
            pi: prior.mean(),
            iters: 0,
            converged: true,
            no_data: true,
            trace: Vec::new(),
        });
    }

    let q = prior.q();
    let mut pi = init.to_vec();
    let mut next = vec![0.0; n];
    let mut trace = Vec::new();
    if opts.trace {
        trace.push(log_posterior(&pi, counts, probs, prior));
    }
    let mut iters = 0;
    let mut converged = false;
    while iters < opts.max_iter {
        iters += 1;
        next.iter_mut().zip(q).for_each(|(x, qd)| *x = qd - 1.0);
        for (k, &x) in counts.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let row = probs.row(k);
            let mix: f64 = row.iter().zip(&pi).map(|(p, w)| p * w).sum();
            if mix <= 0.0 {
                continue;
            }
            let w = x / mix;
            for d in 0..n {
                next[d] += w * row[d] * pi[d];
            }
        }
        normalize_floored(&mut next);
        let delta = pi
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut pi, &mut next);
        if opts.trace {
            trace.push(log_posterior(&pi, counts, probs, prior));
        }
        if delta < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "island {}: EM did not converge in {} iterations",
            probs.island_id,
            opts.max_iter
        );
    }
    Ok(EmFit {
        pi,
        iters,
        converged,
        no_data: false,
        trace,
    })
}

fn normalize_floored(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    if v.iter().any(|&x| x < PI_FLOOR) {
        v.iter_mut().for_each(|x| *x = x.max(PI_FLOOR));
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= s);
    }
}
