use nalgebra::{DMatrix, DVector, SymmetricEigen};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::pathprob::PathProbMatrix;

use super::{pi_from_theta, pi_hessian, pi_jacobian, theta_from_pi, PriorSpec};

/// Eigenvalues of `-S` below this are treated as zero.
pub const SINGULAR_EIGEN: f64 = 1e-10;

/// Normal approximation to the posterior of θ at the mode, and its image in π.
#[derive(Debug, Clone, PartialEq)]
pub struct Asymptotic {
    pub mu: Vec<f64>,
    /// Hessian `S` of the log-posterior in θ at `mu`.
    pub hessian: DMatrix<f64>,
    /// `(-S)^{-1}`, or its pseudo-inverse when `singular`.
    pub sigma: DMatrix<f64>,
    /// Delta-method covariance `G Σ Gᵀ` of π.
    pub pi_cov: DMatrix<f64>,
    pub singular: bool,
}

/// Hessian in θ of `Σ_k x_k log(Σ_d p_kd π_d) + Σ_d (q_d - 1) log π_d`.
pub fn log_posterior_hessian(theta: &[f64], counts: &[f64], probs: &PathProbMatrix, prior: &PriorSpec) -> DMatrix<f64> {
    let pi = pi_from_theta(theta);
    let g = pi_jacobian(theta);
    let h = pi_hessian(theta);
    let (n, p) = (pi.len(), theta.len());
    let mut s = DMatrix::<f64>::zeros(p, p);

    for (k, &x) in counts.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        let row = probs.row(k);
        let mix: f64 = row.iter().zip(&pi).map(|(a, b)| a * b).sum();
        let a = DVector::<f64>::from_fn(p, |l, _| (0..n).map(|d| row[d] * g[(d, l)]).sum::<f64>());
        let mut b = DMatrix::<f64>::zeros(p, p);
        for d in 0..n {
            if row[d] != 0.0 {
                b += &h[d] * row[d];
            }
        }
        let outer: DMatrix<f64> = &a * a.transpose();
        s += (b * mix - outer) * (x / (mix * mix));
    }

    for (d, &q) in prior.q().iter().enumerate() {
        if q == 1.0 {
            continue;
        }
        let gd = g.row(d).transpose();
        s += (&h[d] * pi[d] - &gd * gd.transpose()) * ((q - 1.0) / (pi[d] * pi[d]));
    }
    s
}

/// Builds the normal approximation around the posterior mode `pi_mode`.
pub fn asymptotic_posterior(pi_mode: &[f64], counts: &[f64], probs: &PathProbMatrix, prior: &PriorSpec) -> Asymptotic {
    let mu = theta_from_pi(pi_mode);
    let p = mu.len();
    let n = pi_mode.len();
    if p == 0 {
        return Asymptotic {
            mu,
            hessian: DMatrix::zeros(0, 0),
            sigma: DMatrix::zeros(0, 0),
            pi_cov: DMatrix::zeros(n, n),
            singular: false,
        };
    }
    let hessian = log_posterior_hessian(&mu, counts, probs, prior);
    let neg = -&hessian;
    let eig = SymmetricEigen::new((&neg + neg.transpose()) * 0.5);
    let singular = eig.eigenvalues.iter().any(|&l| l.is_nan() || l < SINGULAR_EIGEN);
    if singular {
        log::warn!(
            "island {}: posterior Hessian is singular (min eigenvalue {:.3e}); using pseudo-inverse",
            probs.island_id,
            eig.eigenvalues.min()
        );
    }
    let inv = eig.eigenvalues.map(|l| if l >= SINGULAR_EIGEN { 1.0 / l } else { 0.0 });
    let sigma = &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose();
    let g = pi_jacobian(&mu);
    let pi_cov = &g * &sigma * g.transpose();
    Asymptotic {
        mu,
        hessian,
        sigma,
        pi_cov,
        singular,
    }
}

/// Symmetric normal intervals `π̂_d ± z sqrt(V_dd)`, clipped to [0, 1].
pub fn credibility_intervals(pi: &[f64], pi_cov: &DMatrix<f64>, level: f64) -> Vec<(f64, f64)> {
    let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
    pi.iter()
        .enumerate()
        .map(|(d, &m)| {
            let half = z * pi_cov[(d, d)].max(0.0).sqrt();
            ((m - half).max(0.0), (m + half).min(1.0))
        })
        .collect()
}
