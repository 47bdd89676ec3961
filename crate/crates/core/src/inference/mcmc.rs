use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::pathprob::PathProbMatrix;

use super::{log_abs_det_jacobian, log_likelihood, pi_from_theta, Asymptotic, PriorSpec};

/// Proposal degrees of freedom.
const DF: f64 = 3.0;
/// Acceptance below this rate over the first [`EARLY_WINDOW`] steps is reported.
pub const LOW_ACCEPTANCE: f64 = 0.01;
pub const EARLY_WINDOW: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct MhOptions {
    /// Total iterations including burn-in.
    pub n: usize,
    pub burnin: usize,
    pub seed: u64,
    /// Multiplier on the proposal covariance.
    pub scale: f64,
    /// Keep every step for offline checking.
    pub record: bool,
}

impl Default for MhOptions {
    fn default() -> Self {
        Self {
            n: 10_000,
            burnin: 1_000,
            seed: 0,
            scale: 1.0,
            record: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MhStep {
    pub proposal: Vec<f64>,
    /// Log acceptance ratio including the proposal density correction.
    pub log_ratio: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MhChain {
    /// Post burn-in draws; θ from [`independence_sampler`], π from [`mh_sample`].
    pub samples: Vec<Vec<f64>>,
    pub acceptance_rate: f64,
    pub early_acceptance_rate: f64,
    pub low_acceptance: bool,
    pub seed: u64,
    pub n: usize,
    pub burnin: usize,
    pub steps: Vec<MhStep>,
}

/// Independence Metropolis-Hastings with a multivariate t₃(μ, scale·Σ)
/// proposal, started at μ.
///
/// A singular Σ restricts proposals to its range; the chain then explores
/// only that affine subspace.
pub fn independence_sampler<F>(log_target: F, mu: &[f64], sigma: &DMatrix<f64>, opts: &MhOptions) -> Result<MhChain>
where
    F: Fn(&[f64]) -> f64,
{
    let p = mu.len();
    if sigma.nrows() != p || sigma.ncols() != p {
        return Err(Error::Inference(format!(
            "proposal covariance is {}x{} for {} parameters",
            sigma.nrows(),
            sigma.ncols(),
            p
        )));
    }
    if opts.burnin > opts.n {
        return Err(Error::InvalidInput(format!(
            "burn-in {} exceeds iteration count {}",
            opts.burnin, opts.n
        )));
    }
    if opts.scale.is_nan() || opts.scale <= 0.0 {
        return Err(Error::InvalidInput(format!("proposal scale {} must be positive", opts.scale)));
    }
    let eig = SymmetricEigen::new(sigma * opts.scale);
    let root = &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    let mu_v = DVector::from_column_slice(mu);
    let chi = ChiSquared::new(DF).expect("positive df");
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    // log t density up to a constant, as a function of the Mahalanobis distance
    let log_q = |delta: f64| -(DF + p as f64) / 2.0 * (delta / DF).ln_1p();

    let mut cur = mu.to_vec();
    let mut cur_target = log_target(&cur);
    let mut cur_q = log_q(0.0);
    let mut samples = Vec::with_capacity(opts.n - opts.burnin);
    let mut steps = Vec::new();
    let (mut accepted, mut early) = (0usize, 0usize);

    for it in 0..opts.n {
        let z = DVector::<f64>::from_fn(p, |_, _| rng.sample(StandardNormal));
        let w: f64 = chi.sample(&mut rng);
        let factor = (DF / w).sqrt();
        let prop_v = &mu_v + &root * &z * factor;
        let prop: Vec<f64> = prop_v.iter().copied().collect();
        let prop_q = log_q(z.norm_squared() * factor * factor);
        let prop_target = log_target(&prop);
        let log_ratio = prop_target - cur_target + cur_q - prop_q;
        let u: f64 = rng.random();
        let accept = prop_target.is_finite() && (log_ratio >= 0.0 || u.ln() < log_ratio);
        if opts.record {
            steps.push(MhStep {
                proposal: prop.clone(),
                log_ratio,
                accepted: accept,
            });
        }
        if accept {
            cur = prop;
            cur_target = prop_target;
            cur_q = prop_q;
            accepted += 1;
            if it < EARLY_WINDOW {
                early += 1;
            }
        }
        if it >= opts.burnin {
            samples.push(cur.clone());
        }
    }

    let window = opts.n.min(EARLY_WINDOW);
    let early_rate = if window > 0 { early as f64 / window as f64 } else { 1.0 };
    let low = window > 0 && early_rate < LOW_ACCEPTANCE;
    if low {
        log::warn!(
            "MH acceptance {:.2}% over the first {} iterations; consider --proposal-scale",
            100.0 * early_rate,
            window
        );
    }
    Ok(MhChain {
        samples,
        acceptance_rate: if opts.n > 0 { accepted as f64 / opts.n as f64 } else { 0.0 },
        early_acceptance_rate: early_rate,
        low_acceptance: low,
        seed: opts.seed,
        n: opts.n,
        burnin: opts.burnin,
        steps,
    })
}

/// Log of the posterior density of θ: likelihood, prior and `log|J|`.
pub fn theta_log_target(theta: &[f64], counts: &[f64], probs: &PathProbMatrix, prior: &PriorSpec) -> f64 {
    let pi = pi_from_theta(theta);
    if pi.iter().any(|&x| x <= 0.0) {
        return f64::NEG_INFINITY;
    }
    log_likelihood(&pi, counts, probs) + prior.log_density(&pi) + log_abs_det_jacobian(theta)
}

/// Posterior draws of π using the asymptotic approximation as proposal.
pub fn mh_sample(
    asym: &Asymptotic,
    counts: &[f64],
    probs: &PathProbMatrix,
    prior: &PriorSpec,
    opts: &MhOptions,
) -> Result<MhChain> {
    if asym.mu.is_empty() {
        return Ok(MhChain {
            samples: vec![vec![1.0]; opts.n.saturating_sub(opts.burnin)],
            acceptance_rate: 1.0,
            early_acceptance_rate: 1.0,
            low_acceptance: false,
            seed: opts.seed,
            n: opts.n,
            burnin: opts.burnin,
            steps: Vec::new(),
        });
    }
    let mut chain = independence_sampler(
        |t| theta_log_target(t, counts, probs, prior),
        &asym.mu,
        &asym.sigma,
        opts,
    )?;
    for s in chain.samples.iter_mut() {
        *s = pi_from_theta(s);
    }
    Ok(chain)
}
