//! Approximate likelihoods over the pushed-forward data predictions.
//!
//! The moment-based forms (independent normal, ABC) read `mu_i` and `sigma_i`
//! straight off the output expansions. The sample-based forms (marginal KDE,
//! multivariate normal) draw the output expansions as a surrogate of the model.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nisp::{predictive_moments, OutputPce};
use crate::pc::{GermKind, PcBasis};
use crate::stats;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Bandwidth selection for the per-component Gaussian KDE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum BandwidthRule {
    /// `0.9 min(sd, IQR/1.34) R^{-1/5}`.
    #[default]
    Silverman,
    /// `1.06 sd R^{-1/5}`.
    Scott,
    Fixed { width: f64 },
}

impl BandwidthRule {
    pub fn bandwidth(&self, samples: &[f64]) -> f64 {
        let n = samples.len() as f64;
        match *self {
            BandwidthRule::Fixed { width } => width,
            BandwidthRule::Scott => 1.06 * stats::variance_unbiased(samples).sqrt() * n.powf(-0.2),
            BandwidthRule::Silverman => {
                let sd = stats::variance_unbiased(samples).sqrt();
                let mut sorted = samples.to_vec();
                sorted.sort_by(|a, b| a.total_cmp(b));
                let iqr = stats::quantile_sorted(&sorted, 0.75) - stats::quantile_sorted(&sorted, 0.25);
                let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
                0.9 * spread * n.powf(-0.2)
            }
        }
    }
}

/// Likelihood construction and its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LikelihoodKind {
    /// i.i.d. Gaussian residuals around `f(x_i; lambda)`.
    ClassicalGaussian,
    IndependentNormal,
    Abc {
        epsilon: f64,
        gamma: f64,
    },
    IndependentComponentKde {
        samples: usize,
        #[serde(default)]
        bandwidth: BandwidthRule,
    },
    MultivariateNormal {
        samples: usize,
        #[serde(default)]
        nugget: Option<f64>,
    },
}

/// Treatment of the data-noise standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaMode {
    Fixed(f64),
    Inferred,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodSpec {
    pub kind: LikelihoodKind,
    pub sigma: SigmaMode,
}

impl LikelihoodSpec {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            LikelihoodKind::Abc { epsilon, gamma } => {
                if !(epsilon > 0.0) {
                    return Err(Error::config("likelihood.epsilon", "must be positive"));
                }
                if !(gamma > 0.0) {
                    return Err(Error::config("likelihood.gamma", "must be positive"));
                }
            }
            LikelihoodKind::IndependentComponentKde { samples, bandwidth } => {
                if samples < 100 {
                    return Err(Error::config("likelihood.samples", "must be at least 100"));
                }
                if let BandwidthRule::Fixed { width } = bandwidth {
                    if !(width > 0.0) {
                        return Err(Error::config("likelihood.bandwidth.width", "must be positive"));
                    }
                }
            }
            LikelihoodKind::MultivariateNormal { samples, nugget } => {
                if samples < 100 {
                    return Err(Error::config("likelihood.samples", "must be at least 100"));
                }
                if nugget.is_some_and(|n| !(n >= 0.0)) {
                    return Err(Error::config("likelihood.nugget", "must be non-negative"));
                }
            }
            LikelihoodKind::ClassicalGaussian | LikelihoodKind::IndependentNormal => {}
        }
        match self.sigma {
            SigmaMode::Fixed(s) if !(s >= 0.0) => Err(Error::config("likelihood.sigma", "must be non-negative")),
            SigmaMode::Fixed(s) if s == 0.0 && self.kind == LikelihoodKind::ClassicalGaussian => {
                Err(Error::config("likelihood.sigma", "classical likelihood needs sigma > 0"))
            }
            _ => Ok(()),
        }
    }

    pub fn infers_sigma(&self) -> bool {
        self.sigma == SigmaMode::Inferred
    }

    pub fn sample_count(&self) -> Option<usize> {
        match self.kind {
            LikelihoodKind::IndependentComponentKde { samples, .. }
            | LikelihoodKind::MultivariateNormal { samples, .. } => Some(samples),
            _ => None,
        }
    }

    /// Log-likelihood of `data` given the output expansions at its locations
    /// and the data-noise scale. `bank` is required by the sample-based kinds.
    pub fn log_likelihood(
        &self,
        out: &OutputPce,
        sigma: f64,
        data: &Dataset,
        bank: Option<&SampleBank>,
    ) -> Result<f64> {
        if out.len() != data.len() {
            return Err(Error::DimensionMismatch {
                expected: data.len(),
                got: out.len(),
            });
        }
        match self.kind {
            LikelihoodKind::ClassicalGaussian => {
                let mu: Vec<f64> = (0..out.len()).map(|i| out.mean(i)).collect();
                loglik_classical(&mu, data, sigma)
            }
            LikelihoodKind::IndependentNormal => {
                let m = predictive_moments(out, sigma)?;
                loglik_independent_normal(&m.mu, &m.sd_total(), data)
            }
            LikelihoodKind::Abc { epsilon, gamma } => {
                let m = predictive_moments(out, sigma)?;
                Ok(loglik_abc(&m.mu, &m.sd_total(), data, epsilon, gamma))
            }
            LikelihoodKind::IndependentComponentKde { bandwidth, .. } => {
                let bank = bank.ok_or_else(|| Error::InvalidArgument("KDE likelihood needs a sample bank".into()))?;
                let h = bank.push_forward(out, sigma)?;
                loglik_ic_kde(&h, data, bandwidth)
            }
            LikelihoodKind::MultivariateNormal { nugget, .. } => {
                let bank = bank.ok_or_else(|| Error::InvalidArgument("MVN likelihood needs a sample bank".into()))?;
                let h = bank.push_forward(out, sigma)?;
                loglik_mvn(&h, data, nugget)
            }
        }
    }
}

/// Fixed germ and noise draws reused across likelihood evaluations, so the
/// sample-based likelihoods are deterministic functions of the parameters.
#[derive(Debug, Clone)]
pub struct SampleBank {
    psi: Vec<Vec<f64>>,
    noise: Vec<Vec<f64>>,
    basis: PcBasis,
}

impl SampleBank {
    pub fn new(basis: &PcBasis, n_locations: usize, samples: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let uni = Uniform::new_inclusive(-1.0, 1.0).expect("valid interval");
        let mut psi = Vec::with_capacity(samples);
        let mut noise = Vec::with_capacity(samples);
        for _ in 0..samples {
            let xi: Vec<f64> = (0..basis.dim())
                .map(|_| match basis.kind() {
                    GermKind::GaussHermite => StandardNormal.sample(&mut rng),
                    GermKind::LegendreUniform => uni.sample(&mut rng),
                })
                .collect();
            psi.push(basis.eval(&xi)?);
            noise.push((0..n_locations).map(|_| StandardNormal.sample(&mut rng)).collect());
        }
        Ok(SampleBank {
            psi,
            noise,
            basis: basis.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.psi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psi.is_empty()
    }

    /// `R x N` samples `h_i = sum_k f_k(x_i) Psi_k(xi) + sigma eps_i`.
    pub fn push_forward(&self, out: &OutputPce, sigma: f64) -> Result<Vec<Vec<f64>>> {
        if **out.basis() != self.basis {
            return Err(Error::BasisMismatch);
        }
        if self.noise.first().is_some_and(|z| z.len() != out.len()) {
            return Err(Error::DimensionMismatch {
                expected: self.noise[0].len(),
                got: out.len(),
            });
        }
        Ok(self
            .psi
            .iter()
            .zip(&self.noise)
            .map(|(psi, z)| {
                (0..out.len())
                    .map(|i| crate::pc::dot(out.coeffs(i), psi) + sigma * z[i])
                    .collect()
            })
            .collect())
    }
}

/// Independent normal log-likelihood with per-location predictive standard
/// deviations `sd` (model error and data noise combined).
pub fn loglik_independent_normal(mu: &[f64], sd: &[f64], data: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    for (i, ((m, s), y)) in mu.iter().zip(sd).zip(&data.ys).enumerate() {
        if !(*s > 0.0) {
            return Err(Error::DegeneratePredictiveVariance { index: i });
        }
        let z = (y - m) / s;
        total += -LN_SQRT_2PI - s.ln() - 0.5 * z * z;
    }
    Ok(total)
}

/// ABC log-likelihood matching the predictive mean to the data and the
/// predictive standard deviation to `gamma` times the mean's misfit.
pub fn loglik_abc(mu: &[f64], sd: &[f64], data: &Dataset, epsilon: f64, gamma: f64) -> f64 {
    let mut total = 0.0;
    let norm = -(epsilon * (2.0 * PI).sqrt()).ln();
    let two_eps2 = 2.0 * epsilon * epsilon;
    for ((m, s), y) in mu.iter().zip(sd).zip(&data.ys) {
        let r = m - y;
        let d = s - gamma * r.abs();
        total += norm - (r * r + d * d) / two_eps2;
    }
    total
}

/// Sum over locations of log marginal Gaussian-KDE densities at the data.
/// `push_samples` holds `R` rows of `N` pushed-forward predictions.
pub fn loglik_ic_kde(push_samples: &[Vec<f64>], data: &Dataset, rule: BandwidthRule) -> Result<f64> {
    let r = push_samples.len();
    if r == 0 {
        return Err(Error::InvalidArgument("no push-forward samples".into()));
    }
    let mut total = 0.0;
    let mut col = vec![0.0; r];
    let mut logk = vec![0.0; r];
    for (i, y) in data.ys.iter().enumerate() {
        for (c, row) in col.iter_mut().zip(push_samples) {
            *c = row[i];
        }
        let w = rule.bandwidth(&col);
        if !(w > 0.0) {
            return Err(Error::DegenerateMarginal { index: i });
        }
        for (lk, h) in logk.iter_mut().zip(&col) {
            let z = (h - y) / w;
            *lk = -0.5 * z * z;
        }
        total += stats::log_sum_exp(&logk) - (r as f64).ln() - LN_SQRT_2PI - w.ln();
    }
    Ok(total)
}

/// Multivariate normal log-density at the data with sample mean and
/// covariance of the push-forward samples, regularized by `nugget * I`.
/// With `nugget = None` the default `1e-10 * trace / N` is used.
pub fn loglik_mvn(push_samples: &[Vec<f64>], data: &Dataset, nugget: Option<f64>) -> Result<f64> {
    let r = push_samples.len();
    let n = data.len();
    if r < 2 {
        return Err(Error::InvalidArgument("need at least two push-forward samples".into()));
    }
    let mut mean = DVector::<f64>::zeros(n);
    for row in push_samples {
        mean += DVector::from_column_slice(row);
    }
    mean /= r as f64;
    let mut cov = DMatrix::<f64>::zeros(n, n);
    for row in push_samples {
        let d = DVector::from_column_slice(row) - &mean;
        cov.ger(1.0, &d, &d, 1.0);
    }
    cov /= (r - 1) as f64;

    let eig = SymmetricEigen::new(cov.clone());
    let emax = eig.eigenvalues.max();
    let emin = eig.eigenvalues.min();
    let singular = !(emin > emax * 1e-14) || emax <= 0.0;
    if singular || emax / emin > 1e12 {
        log::warn!(
            "push-forward covariance is near singular (eigenvalues {emin:.3e}..{emax:.3e}); \
             the multivariate normal likelihood is unreliable"
        );
    }
    let nugget = nugget.unwrap_or(1e-10 * cov.trace() / n as f64);
    if nugget == 0.0 && singular {
        return Err(Error::NotPositiveDefinite { singular: true });
    }
    for i in 0..n {
        cov[(i, i)] += nugget;
    }
    let chol = cov.cholesky().ok_or(Error::NotPositiveDefinite { singular: false })?;
    let resid = DVector::from_column_slice(&data.ys) - &mean;
    let sol = chol.solve(&resid);
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok(-(n as f64) * LN_SQRT_2PI - 0.5 * logdet - 0.5 * resid.dot(&sol))
}

/// i.i.d. Gaussian log-likelihood of deterministic predictions.
pub fn loglik_classical(predictions: &[f64], data: &Dataset, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    // sqrt(sigma^2) keeps this bit-identical to the zero-model-error path
    let sd = vec![(sigma * sigma).sqrt(); predictions.len()];
    loglik_independent_normal(predictions, &sd, data)
}
