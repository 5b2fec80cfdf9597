//! Flat priors with support constraints on the inference vector.

use serde::{Deserialize, Serialize};

use crate::embed::{AugmentedParams, EmbeddingSpec, EmbeddingVariant};
use crate::error::{Error, Result};

/// Box bounds on `lambda` plus the constraints implied by the embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    /// `[a_j, b_j]` for every model parameter.
    pub lambda_bounds: Vec<(f64, f64)>,
    /// For the uniform embedding, keep `lambda_j +- alpha_1j` inside `[a_j, b_j]`.
    #[serde(default = "yes")]
    pub enforce_range: bool,
    /// Require non-negative diagonal embedding coefficients.
    #[serde(default = "yes")]
    pub positive_diagonal: bool,
    /// Optional symmetric bound `|alpha| <= alpha_max` on every coefficient.
    #[serde(default)]
    pub alpha_max: Option<f64>,
    /// Bounds on `log sigma` when the noise scale is inferred.
    #[serde(default = "default_log_sigma")]
    pub log_sigma_bounds: (f64, f64),
}

fn yes() -> bool {
    true
}

fn default_log_sigma() -> (f64, f64) {
    (-12.0, 3.0)
}

impl PriorSpec {
    pub fn new(lambda_bounds: Vec<(f64, f64)>) -> Result<Self> {
        let p = PriorSpec {
            lambda_bounds,
            enforce_range: true,
            positive_diagonal: true,
            alpha_max: None,
            log_sigma_bounds: default_log_sigma(),
        };
        p.validate()?;
        Ok(p)
    }

    /// Unbounded `lambda` with the embedding constraints still active.
    pub fn unbounded(dim_lambda: usize) -> Self {
        PriorSpec {
            lambda_bounds: vec![(f64::NEG_INFINITY, f64::INFINITY); dim_lambda],
            enforce_range: true,
            positive_diagonal: true,
            alpha_max: None,
            log_sigma_bounds: default_log_sigma(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (j, &(a, b)) in self.lambda_bounds.iter().enumerate() {
            if !(a < b) {
                return Err(Error::config(
                    format!("prior.lambda_bounds[{j}]"),
                    format!("lower bound {a} must be below upper bound {b}"),
                ));
            }
        }
        let (lo, hi) = self.log_sigma_bounds;
        if !(lo < hi) {
            return Err(Error::config("prior.log_sigma_bounds", "lower bound must be below upper bound"));
        }
        if self.alpha_max.is_some_and(|m| !(m > 0.0)) {
            return Err(Error::config("prior.alpha_max", "must be positive"));
        }
        Ok(())
    }

    /// Returns 0 inside the (closed) support and `-inf` outside.
    pub fn log_prior(&self, spec: &EmbeddingSpec, params: &AugmentedParams) -> f64 {
        if self.in_support(spec, params) {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }

    pub fn in_support(&self, spec: &EmbeddingSpec, params: &AugmentedParams) -> bool {
        if params.lambda.len() != self.lambda_bounds.len() || params.alpha.len() != spec.alpha_len() {
            return false;
        }
        let inside = |v: f64, (a, b): (f64, f64)| v >= a && v <= b;
        if !params
            .lambda
            .iter()
            .zip(&self.lambda_bounds)
            .all(|(&l, &ab)| inside(l, ab))
        {
            return false;
        }
        if params.alpha.iter().any(|a| a.is_nan()) {
            return false;
        }
        if let Some(m) = self.alpha_max {
            if params.alpha.iter().any(|a| a.abs() > m) {
                return false;
            }
        }
        let diag = spec.diagonal_alpha_positions();
        match spec.variant() {
            EmbeddingVariant::TriangularMvn if self.positive_diagonal => {
                if diag.iter().any(|&p| params.alpha[p] < 0.0) {
                    return false;
                }
            }
            EmbeddingVariant::UniformIid => {
                for (&p, &j) in diag.iter().zip(spec.embedded()) {
                    let alpha = params.alpha[p];
                    if self.positive_diagonal && alpha < 0.0 {
                        return false;
                    }
                    if self.enforce_range {
                        let (a, b) = self.lambda_bounds[j];
                        let l = params.lambda[j];
                        if l + alpha.abs() > b || l - alpha.abs() < a {
                            return false;
                        }
                    }
                }
            }
            _ => {}
        }
        match params.log_sigma {
            Some(ls) => inside(ls, self.log_sigma_bounds),
            None => true,
        }
    }
}

/// Free-function form of [`PriorSpec::log_prior`].
pub fn log_prior(prior: &PriorSpec, spec: &EmbeddingSpec, params: &AugmentedParams) -> f64 {
    prior.log_prior(spec, params)
}
