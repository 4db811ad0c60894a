//! Log-space kernels for the Dirichlet-multinomial mixture.
//!
//! Multinomial coefficients are dropped throughout: they depend only on the
//! data and cancel in every assignment probability and acceptance ratio, so
//! [`log_joint`] is defined up to a data-only constant.

use rand::distr::OpenClosed01;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::state::{ClusterStats, CountMatrix, Hyperparams, ModelState};

/// Log values below this are clamped when a Dirichlet draw underflows.
pub const LOG_FLOOR: f64 = -745.0;

/// Log of a probability vector over genes.
#[derive(Debug, Clone, PartialEq)]
pub struct LogProbVector {
    values: Vec<f64>,
    /// Number of coordinates clamped to [`LOG_FLOOR`].
    clamped: usize,
}

impl LogProbVector {
    /// Normalizes arbitrary log weights with logsumexp.
    pub fn from_log_weights(mut values: Vec<f64>) -> Self {
        let lse = logsumexp(&values);
        let mut clamped = 0;
        for v in &mut values {
            *v -= lse;
            if *v < LOG_FLOOR {
                *v = LOG_FLOOR;
                clamped += 1;
            }
        }
        Self { values, clamped }
    }

    /// Takes the log of a probability vector as given. Zero entries become
    /// `-inf`; the vector must already sum to one.
    pub fn from_probs(probs: &[f64]) -> Result<Self> {
        if probs.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::Domain("negative or NaN probability".into()));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("probabilities sum to {s}")));
        }
        Ok(Self {
            values: probs.iter().map(|p| p.ln()).collect(),
            clamped: 0,
        })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            values: vec![-(n as f64).ln(); n],
            clamped: 0,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn clamped(&self) -> usize {
        self.clamped
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        logsumexp(&self.values).abs() <= tol
    }

    pub fn probs(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.exp()).collect()
    }
}

pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    if max == f64::INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Natural log of the gamma function for positive arguments.
pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("log_gamma requires x > 0, got {x}")));
    }
    Ok(statrs::function::gamma::ln_gamma(x))
}

/// `log_gamma` for arguments the caller has already checked.
#[inline]
pub(crate) fn lgamma(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    statrs::function::gamma::ln_gamma(x)
}

/// `sum_u x_u log theta_u` over the cell's nonzeros.
#[inline]
pub fn log_multinomial_loglik(cell: &[(u32, u32)], log_theta: &LogProbVector) -> f64 {
    cell_loglik(cell, log_theta.values())
}

#[inline]
pub(crate) fn cell_loglik(cell: &[(u32, u32)], log_theta: &[f64]) -> f64 {
    cell.iter()
        .map(|&(g, c)| f64::from(c) * log_theta[g as usize])
        .sum()
}

/// Draws `log G` for `G ~ Gamma(shape, 1)` without underflow for small
/// shapes: `G = G' * U^(1/shape)` with `G' ~ Gamma(shape + 1, 1)`.
pub fn sample_log_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    debug_assert!(shape > 0.0);
    if shape >= 1.0 {
        let g: f64 = Gamma::new(shape, 1.0).expect("valid gamma shape").sample(rng);
        g.ln()
    } else {
        let g: f64 = Gamma::new(shape + 1.0, 1.0)
            .expect("valid gamma shape")
            .sample(rng);
        let u: f64 = rng.sample(OpenClosed01);
        g.ln() + u.ln() / shape
    }
}

/// Draws from `Dirichlet(concentrations)` in log space.
pub fn sample_log_dirichlet<R, I>(concentrations: I, rng: &mut R) -> LogProbVector
where
    R: Rng + ?Sized,
    I: IntoIterator<Item = f64>,
{
    let logs: Vec<f64> = concentrations
        .into_iter()
        .map(|a| sample_log_gamma(a, rng))
        .collect();
    LogProbVector::from_log_weights(logs)
}

/// Conjugate posterior draw `theta ~ Dirichlet(lambda + gene_counts)`.
pub fn sample_theta_posterior<R: Rng + ?Sized>(
    stats: &ClusterStats,
    lambda: f64,
    rng: &mut R,
) -> LogProbVector {
    sample_log_dirichlet(stats.gene_counts().iter().map(|&c| lambda + c as f64), rng)
}

/// Draws `(pi_1..pi_K, pi_{K+1}) ~ Dirichlet(n_1..n_K, alpha)`.
pub fn sample_mixing_weights<R: Rng + ?Sized>(
    cluster_sizes: &[usize],
    alpha: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!("alpha must be positive, got {alpha}")));
    }
    if let Some(k) = cluster_sizes.iter().position(|&n| n == 0) {
        return Err(Error::Domain(format!("cluster {k} is empty; prune before sampling weights")));
    }
    let lp = sample_log_dirichlet(
        cluster_sizes
            .iter()
            .map(|&n| n as f64)
            .chain(std::iter::once(alpha)),
        rng,
    );
    Ok(lp
        .values()
        .iter()
        .map(|v| v.exp().max(f64::MIN_POSITIVE))
        .collect())
}

/// Log density of `Dirichlet(concentrations)` at `exp(log_theta)`.
pub fn log_dirichlet_density<I>(log_theta: &[f64], concentrations: I) -> f64
where
    I: IntoIterator<Item = f64>,
{
    let mut sum_a = 0.0;
    let mut acc = 0.0;
    for (a, &l) in concentrations.into_iter().zip(log_theta) {
        sum_a += a;
        acc -= lgamma(a);
        if a != 1.0 {
            acc += (a - 1.0) * l;
        }
    }
    acc + lgamma(sum_a)
}

/// Log density of `Beta(a, b)` at `u`.
pub fn log_beta_density(u: f64, a: f64, b: f64) -> f64 {
    log_beta_density_ln(u.ln(), (1.0 - u).ln(), a, b)
}

/// `Beta(a, b)` log density given `ln u` and `ln(1 - u)` directly, for
/// points too close to 0 or 1 to represent `u` accurately.
pub fn log_beta_density_ln(ln_u: f64, ln_1mu: f64, a: f64, b: f64) -> f64 {
    lgamma(a + b) - lgamma(a) - lgamma(b) + (a - 1.0) * ln_u + (b - 1.0) * ln_1mu
}

/// `ln(exp(a) + exp(b))`.
#[inline]
pub fn logaddexp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Log normalizer `log Gamma(lambda V) - V log Gamma(lambda)` of the
/// symmetric Dirichlet prior.
pub fn log_dirichlet_norm(lambda: f64, n_genes: usize) -> f64 {
    let v = n_genes as f64;
    lgamma(lambda * v) - v * lgamma(lambda)
}

/// `sum_u coef_u * log theta_u`, treating `0 * -inf` as 0.
pub(crate) fn weighted_log_sum(coef: impl Iterator<Item = f64>, log_theta: &[f64]) -> f64 {
    coef.zip(log_theta)
        .filter(|(c, _)| *c != 0.0)
        .map(|(c, &l)| c * l)
        .sum()
}

/// Log joint density of an instantiated state (up to the dropped
/// multinomial coefficients):
///
/// `K log a - lnG(a) + a log pi_{K+1} + sum_k (n_k - 1) log pi_k
///  + K [lnG(lambda V) - V lnG(lambda)] + sum_k sum_u (lambda - 1 + s_ku) log theta_ku`.
pub fn log_joint(state: &ModelState, matrix: &CountMatrix, hp: &Hyperparams) -> f64 {
    let k = state.k();
    let w = state.weights();
    let mut lp = k as f64 * hp.alpha.ln() - lgamma(hp.alpha) + hp.alpha * w[k].ln();
    lp += k as f64 * log_dirichlet_norm(hp.lambda, matrix.n_genes());
    for (c, (s, lt)) in state.stats().iter().zip(state.log_theta()).enumerate() {
        lp += (s.n_cells() as f64 - 1.0) * w[c].ln();
        lp += weighted_log_sum(
            s.gene_counts().iter().map(|&x| hp.lambda - 1.0 + x as f64),
            lt.values(),
        );
    }
    lp
}
