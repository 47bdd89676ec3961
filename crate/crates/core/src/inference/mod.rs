//! Posterior inference on variant proportions π within one island.
//!
//! The model is a |ν|-component mixture over exon paths with known component
//! probabilities `p_kd` and a Dirichlet(q) prior on π. The posterior mode is
//! found by EM ([`em`]); uncertainty comes from a normal approximation in the
//! log-ratio parameterisation `θ_d = log(π_{d+1} / π_1)` pushed back to π by
//! the delta method ([`asymptotic`]), or from an independence
//! Metropolis-Hastings sampler ([`mcmc`]).

pub mod asymptotic;
pub mod em;
pub mod mcmc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::pathprob::PathProbMatrix;

pub use asymptotic::{asymptotic_posterior, credibility_intervals, log_posterior_hessian, Asymptotic};
pub use em::{em_estimate, em_estimate_from, EmFit, EmOptions};
pub use mcmc::{independence_sampler, mh_sample, MhChain, MhOptions, MhStep};

/// Dirichlet prior parameters; every `q_d >= 1` keeps the posterior log-concave.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    q: Vec<f64>,
}

impl PriorSpec {
    pub fn new(q: Vec<f64>) -> Result<Self> {
        if q.is_empty() {
            return Err(Error::InvalidInput("prior needs at least one variant".into()));
        }
        if let Some(bad) = q.iter().find(|&&x| !(x >= 1.0 && x.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "Dirichlet parameter {bad} < 1 breaks log-concavity of the posterior"
            )));
        }
        Ok(Self { q })
    }

    pub fn symmetric(n: usize, q: f64) -> Result<Self> {
        Self::new(vec![q; n])
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    /// `q_d / Σ q`.
    pub fn mean(&self) -> Vec<f64> {
        let s: f64 = self.q.iter().sum();
        self.q.iter().map(|x| x / s).collect()
    }

    /// Log density up to a constant: `Σ (q_d - 1) log π_d`.
    pub fn log_density(&self, pi: &[f64]) -> f64 {
        self.q
            .iter()
            .zip(pi)
            .filter(|(q, _)| **q != 1.0)
            .map(|(q, p)| (q - 1.0) * p.ln())
            .sum()
    }
}

/// Log-likelihood `Σ_k x_k log(Σ_d p_kd π_d)`; `-inf` if an observed path has
/// zero probability under π.
pub fn log_likelihood(pi: &[f64], counts: &[f64], probs: &PathProbMatrix) -> f64 {
    let mut total = 0.0;
    for (k, &x) in counts.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        let mix: f64 = probs.row(k).iter().zip(pi).map(|(p, w)| p * w).sum();
        if mix <= 0.0 {
            log::debug!(
                "island {}: path {} has zero probability under current pi",
                probs.island_id,
                probs.paths[k]
            );
            return f64::NEG_INFINITY;
        }
        total += x * mix.ln();
    }
    total
}

/// Unnormalised log-posterior of π.
pub fn log_posterior(pi: &[f64], counts: &[f64], probs: &PathProbMatrix, prior: &PriorSpec) -> f64 {
    log_likelihood(pi, counts, probs) + prior.log_density(pi)
}

/// π from log-ratios θ (softmax with π_1 as reference).
pub fn pi_from_theta(theta: &[f64]) -> Vec<f64> {
    let m = theta.iter().copied().fold(0.0f64, f64::max);
    let mut out = Vec::with_capacity(theta.len() + 1);
    out.push((-m).exp());
    out.extend(theta.iter().map(|t| (t - m).exp()));
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= s);
    out
}

/// `θ_d = log(π_{d+1} / π_1)`.
pub fn theta_from_pi(pi: &[f64]) -> Vec<f64> {
    pi[1..].iter().map(|p| (p / pi[0]).ln()).collect()
}

/// `G_dl = ∂π_d/∂θ_l`, a |ν| × (|ν|-1) matrix.
///
/// With `s = 1 + Σ e^θ`, `e^{θ_l}/s = π_{l+1}` and `1/s = π_1`:
/// `G_1l = -e^{θ_l}/s²` and `G_dl = -e^{θ_{d-1}+θ_l}/s² + I(l=d-1) e^{θ_l}/s`.
pub fn pi_jacobian(theta: &[f64]) -> DMatrix<f64> {
    let pi = pi_from_theta(theta);
    let n = pi.len();
    DMatrix::from_fn(n, n - 1, |d, l| {
        let own = if d >= 1 && l == d - 1 { pi[l + 1] } else { 0.0 };
        -pi[d] * pi[l + 1] + own
    })
}

/// `H_dlm = ∂²π_d/∂θ_l∂θ_m`, one (|ν|-1)² matrix per `d`.
pub fn pi_hessian(theta: &[f64]) -> Vec<DMatrix<f64>> {
    let pi = pi_from_theta(theta);
    let n = pi.len();
    (0..n)
        .map(|d| {
            DMatrix::from_fn(n - 1, n - 1, |l, m| {
                let (pl, pm) = (pi[l + 1], pi[m + 1]);
                let ind = |c: bool| if c { 1.0 } else { 0.0 };
                if d == 0 {
                    2.0 * pi[0] * pl * pm - ind(l == m) * pi[0] * pl
                } else {
                    let own = d - 1;
                    2.0 * pi[d] * pl * pm
                        - (ind(m == own) + ind(m == l)) * pi[d] * pl
                        - ind(l == own) * pl * pm
                        + ind(l == own && m == l) * pl
                }
            })
        })
        .collect()
}

/// `log |det ∂(π_2..π_|ν|)/∂θ| = Σ_d log π_d`.
pub fn log_abs_det_jacobian(theta: &[f64]) -> f64 {
    pi_from_theta(theta).iter().map(|p| p.ln()).sum()
}

/// Posterior summary for one island.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub pi_mode: Vec<f64>,
    pub theta_mode: Vec<f64>,
    pub theta_cov: DMatrix<f64>,
    pub pi_cov: DMatrix<f64>,
    pub se: Vec<f64>,
    pub ci: Vec<(f64, f64)>,
    pub ci_level: f64,
    pub em_iters: usize,
    pub converged: bool,
    pub logpost_at_mode: f64,
    pub singular: bool,
    pub no_data: bool,
}

/// Runs EM and the asymptotic approximation and builds the summary.
pub fn summarize(
    counts: &[f64],
    probs: &PathProbMatrix,
    prior: &PriorSpec,
    em_opts: &EmOptions,
    ci_level: f64,
) -> Result<PosteriorSummary> {
    let fit = em_estimate(counts, probs, prior, em_opts)?;
    let asym = if fit.no_data {
        let n = fit.pi.len();
        Asymptotic {
            mu: theta_from_pi(&fit.pi),
            hessian: DMatrix::zeros(n - 1, n - 1),
            sigma: DMatrix::zeros(n - 1, n - 1),
            pi_cov: DMatrix::zeros(n, n),
            singular: false,
        }
    } else {
        asymptotic_posterior(&fit.pi, counts, probs, prior)
    };
    let ci = credibility_intervals(&fit.pi, &asym.pi_cov, ci_level);
    let se = (0..fit.pi.len()).map(|d| asym.pi_cov[(d, d)].max(0.0).sqrt()).collect();
    Ok(PosteriorSummary {
        logpost_at_mode: log_posterior(&fit.pi, counts, probs, prior),
        pi_mode: fit.pi,
        theta_mode: asym.mu,
        theta_cov: asym.sigma,
        pi_cov: asym.pi_cov,
        se,
        ci,
        ci_level,
        em_iters: fit.iters,
        converged: fit.converged,
        singular: asym.singular,
        no_data: fit.no_data,
    })
}
