//! Posterior-averaged predictions with the variance split into model error,
//! posterior uncertainty and data noise.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::write_atomic;
use crate::embed::{AugmentedParams, EmbeddingSpec};
use crate::error::{Error, Result};
use crate::likelihood::SigmaMode;
use crate::mcmc::Chain;
use crate::nisp::{ForwardModel, NispConfig, NispPlan, OutputPce};
use crate::stats;

/// Default number of chain samples pushed through the model.
pub const DEFAULT_SUBSAMPLE: usize = 500;

/// Estimator for the variance of the mean over posterior samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceEstimator {
    #[default]
    Unbiased,
    Population,
}

impl VarianceEstimator {
    fn apply(self, xs: &[f64]) -> f64 {
        match self {
            VarianceEstimator::Unbiased => stats::variance_unbiased(xs),
            VarianceEstimator::Population => stats::variance_population(xs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionMoments {
    pub x: Vec<f64>,
    pub mu_pf: f64,
    pub var_model_error: f64,
    pub var_posterior: f64,
    pub var_data_noise: f64,
    pub var_total: f64,
}

impl PredictionMoments {
    fn new(x: Vec<f64>, mu_pf: f64, var_model_error: f64, var_posterior: f64) -> Self {
        PredictionMoments {
            x,
            mu_pf,
            var_model_error,
            var_posterior,
            var_data_noise: 0.0,
            var_total: var_model_error + var_posterior,
        }
    }
}

/// Output expansions for each retained posterior sample, plus the
/// per-location moments derived from them.
#[derive(Debug, Clone)]
pub struct PushForward {
    pub xs: Vec<Vec<f64>>,
    pub samples: Vec<OutputPce>,
    pub moments: Vec<PredictionMoments>,
    pub estimator: VarianceEstimator,
}

impl PushForward {
    pub fn from_samples(xs: Vec<Vec<f64>>, samples: Vec<OutputPce>, estimator: VarianceEstimator) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyChain);
        }
        let s = samples.len() as f64;
        let moments = xs
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let f0: Vec<f64> = samples.iter().map(|o| o.mean(i)).collect();
                let me = samples.iter().map(|o| o.variance(i)).sum::<f64>() / s;
                PredictionMoments::new(x.clone(), stats::mean(&f0), me, estimator.apply(&f0))
            })
            .collect();
        Ok(PushForward {
            xs,
            samples,
            moments,
            estimator,
        })
    }

    /// Pushed-forward covariance between locations `i` and `j`: the
    /// posterior average of the model-error covariance plus the posterior
    /// covariance of the means.
    pub fn cov(&self, i: usize, j: usize) -> f64 {
        let s = self.samples.len();
        let model = self.samples.iter().map(|o| o.cov(i, j, 0.0)).sum::<f64>() / s as f64;
        let (mi, mj) = (self.moments[i].mu_pf, self.moments[j].mu_pf);
        let cross: f64 = self
            .samples
            .iter()
            .map(|o| (o.mean(i) - mi) * (o.mean(j) - mj))
            .sum();
        let denom = match self.estimator {
            VarianceEstimator::Unbiased if s > 1 => (s - 1) as f64,
            VarianceEstimator::Unbiased => return model,
            VarianceEstimator::Population => s as f64,
        };
        model + cross / denom
    }

    /// Posterior-averaged main Sobol index of each germ-dimension group in
    /// the model-error variance at location `i`.
    pub fn sobol_attribution(&self, i: usize, groups: &[Vec<usize>]) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; groups.len()];
        let mut used = 0usize;
        for o in &self.samples {
            let e = o.expansion(i);
            if e.variance() <= 0.0 {
                continue;
            }
            for (a, g) in acc.iter_mut().zip(groups) {
                *a += e.sobol_main_index(g)?;
            }
            used += 1;
        }
        if used == 0 {
            return Err(Error::DegenerateExpansion);
        }
        Ok(acc.into_iter().map(|a| a / used as f64).collect())
    }
}

/// Projects `model` for every retained posterior sample (evenly thinned to
/// `subsample`) and averages the resulting moments.
#[allow(clippy::too_many_arguments)]
pub fn pushed_forward<M: ForwardModel + ?Sized>(
    chain: &Chain,
    model: &M,
    spec: &EmbeddingSpec,
    infer_sigma: bool,
    xs: &[Vec<f64>],
    nisp: NispConfig,
    subsample: usize,
    estimator: VarianceEstimator,
) -> Result<PushForward> {
    if chain.is_empty() {
        return Err(Error::EmptyChain);
    }
    let plan = NispPlan::new(spec, nisp)?;
    let picked = chain.subsample(subsample);
    let samples = picked
        .par_iter()
        .map(|flat| {
            let params = AugmentedParams::from_flat(spec, infer_sigma, flat)?;
            plan.project(model, xs, &params)
        })
        .collect::<Result<Vec<_>>>()?;
    PushForward::from_samples(xs.to_vec(), samples, estimator)
}

/// Adds the data-noise variance: `sigma^2` when fixed, or the posterior
/// mean of `sigma^2` over the chain when inferred.
pub fn posterior_predictive(
    pf: &[PredictionMoments],
    chain: &Chain,
    spec: &EmbeddingSpec,
    sigma_mode: SigmaMode,
) -> Result<Vec<PredictionMoments>> {
    let noise = match sigma_mode {
        SigmaMode::Fixed(s) => s * s,
        SigmaMode::Inferred => {
            if chain.is_empty() {
                return Err(Error::EmptyChain);
            }
            if chain.dim() != spec.param_count(true) {
                return Err(Error::InvalidArgument(
                    "inferred noise requires log_sigma in the parameter layout".into(),
                ));
            }
            let k = chain.dim() - 1;
            let s2: Vec<f64> = chain.samples.iter().map(|s| (2.0 * s[k]).exp()).collect();
            stats::mean(&s2)
        }
    };
    Ok(pf
        .iter()
        .map(|m| PredictionMoments {
            var_data_noise: noise,
            var_total: m.var_model_error + m.var_posterior + noise,
            ..m.clone()
        })
        .collect())
}

/// Moments at a single augmented parameter (no posterior averaging).
pub fn map_pushed_forward<M: ForwardModel + ?Sized>(
    map: &AugmentedParams,
    model: &M,
    spec: &EmbeddingSpec,
    xs: &[Vec<f64>],
    nisp: NispConfig,
) -> Result<Vec<PredictionMoments>> {
    let out = NispPlan::new(spec, nisp)?.project(model, xs, map)?;
    Ok(xs
        .iter()
        .enumerate()
        .map(|(i, x)| PredictionMoments::new(x.clone(), out.mean(i), out.variance(i), 0.0))
        .collect())
}

pub fn predictions_csv(moments: &[PredictionMoments]) -> String {
    let m = moments.first().map_or(0, |p| p.x.len());
    let mut s = String::new();
    for j in 1..=m {
        let _ = write!(s, "x{j},");
    }
    s.push_str("mu_pf,sd_model_error,sd_posterior,sd_data_noise,sd_total\n");
    for p in moments {
        for v in &p.x {
            let _ = write!(s, "{v:?},");
        }
        let _ = writeln!(
            s,
            "{:?},{:?},{:?},{:?},{:?}",
            p.mu_pf,
            p.var_model_error.sqrt(),
            p.var_posterior.sqrt(),
            p.var_data_noise.sqrt(),
            p.var_total.sqrt()
        );
    }
    s
}

pub fn write_predictions(path: &Path, moments: &[PredictionMoments]) -> Result<()> {
    write_atomic(path, predictions_csv(moments).as_bytes())
}
