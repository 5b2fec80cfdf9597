//! Stochastic input parameterizations `Lambda_j = lambda_j + delta_j(alpha, xi)`.
//!
//! The flat parameter vector seen by the sampler is laid out as
//! `[lambda_0 .. lambda_{d-1}, alpha block, log_sigma?]`. The alpha block is
//! ordered by embedded parameter (in the order of `embedded`), and within one
//! parameter by increasing PC term index `k`:
//!
//! | variant          | alpha entries for the `jj`-th embedded parameter |
//! |------------------|--------------------------------------------------|
//! | `FullLinearMvn`  | `k = 1..=m`                                      |
//! | `TriangularMvn`  | `k = 1..=jj+1`                                   |
//! | `UniformIid`     | the single coefficient of `xi_{jj+1}`            |
//! | `GeneralOrder(p)`| `k = 1..K-1`, `K` the size of the order-`p` basis |
//!
//! where `m` is the number of embedded parameters (the germ dimension).

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pc::{total_order_size, GermKind, PcBasis, PcExpansion};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingVariant {
    /// No model error: `Lambda = lambda`.
    Classical,
    /// `Lambda_j = lambda_j + sum_k alpha_kj xi_k` over all germ components.
    FullLinearMvn,
    /// Lower-triangular (Cholesky) form, `alpha_kj = 0` for `k > j`.
    TriangularMvn,
    /// `Lambda_j = lambda_j + alpha_1j xi_j`, `xi_j ~ U[-1, 1]`.
    UniformIid,
    /// Hermite expansion of total order `p` for every embedded parameter.
    GeneralOrder(usize),
}

/// Which parameters receive a stochastic correction and in what form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingSpec {
    variant: EmbeddingVariant,
    dim_lambda: usize,
    embedded: Vec<usize>,
}

impl EmbeddingSpec {
    /// `embedded` holds zero-based parameter indices; it is ignored for
    /// [`EmbeddingVariant::Classical`].
    pub fn new(variant: EmbeddingVariant, dim_lambda: usize, embedded: Vec<usize>) -> Result<Self> {
        if dim_lambda == 0 {
            return Err(Error::config("embedding.dim", "model must have at least one parameter"));
        }
        let embedded = if variant == EmbeddingVariant::Classical {
            Vec::new()
        } else {
            let mut e = embedded;
            e.sort_unstable();
            e.dedup();
            if e.is_empty() {
                return Err(Error::config("embedding.embedded", "must be non-empty"));
            }
            if let Some(&bad) = e.iter().find(|&&j| j >= dim_lambda) {
                return Err(Error::config(
                    "embedding.embedded",
                    format!("index {bad} out of range for {dim_lambda} parameters"),
                ));
            }
            e
        };
        if let EmbeddingVariant::GeneralOrder(p) = variant {
            if p == 0 {
                return Err(Error::config("embedding.order", "general-order embedding needs order >= 1"));
            }
        }
        Ok(EmbeddingSpec {
            variant,
            dim_lambda,
            embedded,
        })
    }

    /// Embedding in every parameter.
    pub fn all(variant: EmbeddingVariant, dim_lambda: usize) -> Result<Self> {
        Self::new(variant, dim_lambda, (0..dim_lambda).collect())
    }

    pub fn classical(dim_lambda: usize) -> Self {
        Self::new(EmbeddingVariant::Classical, dim_lambda, Vec::new()).expect("valid classical spec")
    }

    pub fn variant(&self) -> EmbeddingVariant {
        self.variant
    }

    pub fn dim_lambda(&self) -> usize {
        self.dim_lambda
    }

    pub fn embedded(&self) -> &[usize] {
        &self.embedded
    }

    pub fn is_classical(&self) -> bool {
        self.variant == EmbeddingVariant::Classical
    }

    pub fn germ_kind(&self) -> GermKind {
        match self.variant {
            EmbeddingVariant::UniformIid => GermKind::LegendreUniform,
            _ => GermKind::GaussHermite,
        }
    }

    /// Germ dimension. The classical case keeps a single dummy dimension so
    /// that it is the order-zero special case of the same machinery.
    pub fn germ_dim(&self) -> usize {
        self.embedded.len().max(1)
    }

    /// Polynomial order of the input expansions.
    pub fn input_order(&self) -> usize {
        match self.variant {
            EmbeddingVariant::Classical => 0,
            EmbeddingVariant::GeneralOrder(p) => p,
            _ => 1,
        }
    }

    /// NISP order actually used for a requested order.
    pub fn effective_order(&self, requested: usize) -> usize {
        if self.is_classical() {
            0
        } else {
            requested
        }
    }

    pub fn input_basis(&self) -> Arc<PcBasis> {
        Arc::new(PcBasis::total_order(
            self.germ_kind(),
            self.germ_dim(),
            self.input_order(),
        ))
    }

    fn alpha_per_param(&self, jj: usize) -> usize {
        let m = self.embedded.len();
        match self.variant {
            EmbeddingVariant::Classical => 0,
            EmbeddingVariant::FullLinearMvn => m,
            EmbeddingVariant::TriangularMvn => jj + 1,
            EmbeddingVariant::UniformIid => 1,
            EmbeddingVariant::GeneralOrder(p) => total_order_size(m, p) - 1,
        }
    }

    pub fn alpha_len(&self) -> usize {
        (0..self.embedded.len()).map(|jj| self.alpha_per_param(jj)).sum()
    }

    /// Flat dimension of [`AugmentedParams`].
    pub fn param_count(&self, infer_sigma: bool) -> usize {
        self.dim_lambda + self.alpha_len() + usize::from(infer_sigma)
    }

    /// Column names for the flat layout.
    pub fn param_names(&self, infer_sigma: bool) -> Vec<String> {
        let mut names: Vec<String> = (0..self.dim_lambda).map(|j| format!("lambda_{j}")).collect();
        for (jj, &j) in self.embedded.iter().enumerate() {
            for (k, _) in self.term_indices(jj) {
                // the uniform form has one coefficient per parameter, alpha_1j
                let k = if self.variant == EmbeddingVariant::UniformIid { 1 } else { k };
                names.push(format!("alpha_{k}_{j}"));
            }
        }
        if infer_sigma {
            names.push("log_sigma".into());
        }
        names
    }

    /// `(pc term index, position within this parameter's alpha slice)` pairs.
    fn term_indices(&self, jj: usize) -> Vec<(usize, usize)> {
        match self.variant {
            EmbeddingVariant::UniformIid => vec![(jj + 1, 0)],
            _ => (0..self.alpha_per_param(jj)).map(|s| (s + 1, s)).collect(),
        }
    }

    /// Position in the alpha block of the diagonal (`k = jj + 1`) coefficient
    /// of each embedded parameter.
    pub(crate) fn diagonal_alpha_positions(&self) -> Vec<usize> {
        let mut pos = Vec::new();
        let mut offset = 0;
        for jj in 0..self.embedded.len() {
            match self.variant {
                EmbeddingVariant::Classical => {}
                EmbeddingVariant::UniformIid => pos.push(offset),
                _ => pos.push(offset + jj),
            }
            offset += self.alpha_per_param(jj);
        }
        pos
    }

    /// Coefficient vectors of every `Lambda_j` on [`Self::input_basis`].
    pub fn input_coefficients(&self, params: &AugmentedParams) -> Result<Vec<Vec<f64>>> {
        self.check_layout(params)?;
        let k_in = total_order_size(self.germ_dim(), self.input_order());
        let mut out: Vec<Vec<f64>> = params
            .lambda
            .iter()
            .map(|&l| {
                let mut c = vec![0.0; k_in];
                c[0] = l;
                c
            })
            .collect();
        let mut offset = 0;
        for (jj, &j) in self.embedded.iter().enumerate() {
            let n = self.alpha_per_param(jj);
            let slice = &params.alpha[offset..offset + n];
            for (k, s) in self.term_indices(jj) {
                out[j][k] = slice[s];
            }
            if self.variant == EmbeddingVariant::TriangularMvn && slice[jj] < 0.0 {
                return Err(Error::SupportViolation(format!(
                    "negative diagonal coefficient alpha_{}_{} = {}",
                    jj + 1,
                    j,
                    slice[jj]
                )));
            }
            offset += n;
        }
        Ok(out)
    }

    fn check_layout(&self, params: &AugmentedParams) -> Result<()> {
        if params.lambda.len() != self.dim_lambda {
            return Err(Error::DimensionMismatch {
                expected: self.dim_lambda,
                got: params.lambda.len(),
            });
        }
        if params.alpha.len() != self.alpha_len() {
            return Err(Error::DimensionMismatch {
                expected: self.alpha_len(),
                got: params.alpha.len(),
            });
        }
        Ok(())
    }
}

/// The inference vector: nominal parameters, embedding coefficients and an
/// optional log data-noise scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedParams {
    pub lambda: Vec<f64>,
    pub alpha: Vec<f64>,
    pub log_sigma: Option<f64>,
}

impl AugmentedParams {
    pub fn from_flat(spec: &EmbeddingSpec, infer_sigma: bool, flat: &[f64]) -> Result<Self> {
        let expected = spec.param_count(infer_sigma);
        if flat.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: flat.len(),
            });
        }
        let d = spec.dim_lambda();
        let a = spec.alpha_len();
        Ok(AugmentedParams {
            lambda: flat[..d].to_vec(),
            alpha: flat[d..d + a].to_vec(),
            log_sigma: infer_sigma.then(|| flat[d + a]),
        })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.lambda.len() + self.alpha.len() + 1);
        v.extend_from_slice(&self.lambda);
        v.extend_from_slice(&self.alpha);
        v.extend(self.log_sigma);
        v
    }

    pub fn sigma(&self) -> Option<f64> {
        self.log_sigma.map(f64::exp)
    }
}

/// Flat dimension of the inference vector.
pub fn param_count(spec: &EmbeddingSpec, infer_sigma: bool) -> usize {
    spec.param_count(infer_sigma)
}

/// Input PC expansions `Lambda_j(xi)`, one per model parameter.
pub fn input_pce(spec: &EmbeddingSpec, params: &AugmentedParams) -> Result<Vec<PcExpansion>> {
    let basis = spec.input_basis();
    spec.input_coefficients(params)?
        .into_iter()
        .map(|c| PcExpansion::new(basis.clone(), c))
        .collect()
}

/// Realization of the stochastic input at one germ point.
pub fn sample_lambda(spec: &EmbeddingSpec, params: &AugmentedParams, germ_point: &[f64]) -> Result<Vec<f64>> {
    if germ_point.len() != spec.germ_dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.germ_dim(),
            got: germ_point.len(),
        });
    }
    let psi = spec.input_basis().eval(germ_point)?;
    Ok(spec
        .input_coefficients(params)?
        .iter()
        .map(|c| crate::pc::dot(c, &psi))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri2() -> EmbeddingSpec {
        EmbeddingSpec::all(EmbeddingVariant::TriangularMvn, 2).unwrap()
    }

    #[test]
    fn counts() {
        assert_eq!(EmbeddingSpec::classical(2).param_count(false), 2);
        assert_eq!(tri2().param_count(false), 5);
        let u = EmbeddingSpec::new(EmbeddingVariant::UniformIid, 3, vec![0, 2]).unwrap();
        assert_eq!(param_count(&u, true), 6);
        let f = EmbeddingSpec::all(EmbeddingVariant::FullLinearMvn, 3).unwrap();
        assert_eq!(f.alpha_len(), 9);
        let g = EmbeddingSpec::all(EmbeddingVariant::GeneralOrder(2), 2).unwrap();
        assert_eq!(g.alpha_len(), 2 * 5);
    }

    #[test]
    fn triangular_layout() {
        let spec = tri2();
        let p = AugmentedParams {
            lambda: vec![1.0, 2.0],
            alpha: vec![0.5, 0.3, 0.4],
            log_sigma: None,
        };
        let pce = input_pce(&spec, &p).unwrap();
        assert_eq!(pce[0].coeffs(), &[1.0, 0.5, 0.0]);
        assert_eq!(pce[1].coeffs(), &[2.0, 0.3, 0.4]);
        let s = sample_lambda(&spec, &p, &[1.0, 1.0]).unwrap();
        assert!((s[0] - 1.5).abs() < 1e-15 && (s[1] - 2.7).abs() < 1e-15);
        assert_eq!(sample_lambda(&spec, &p, &[0.0, 0.0]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(
            spec.param_names(false),
            vec!["lambda_0", "lambda_1", "alpha_1_0", "alpha_1_1", "alpha_2_1"]
        );
    }

    #[test]
    fn negative_diagonal_signals() {
        let p = AugmentedParams {
            lambda: vec![1.0, 2.0],
            alpha: vec![0.5, 0.3, -0.1],
            log_sigma: None,
        };
        assert!(matches!(input_pce(&tri2(), &p), Err(Error::SupportViolation(_))));
    }

    #[test]
    fn classical_is_constant() {
        let spec = EmbeddingSpec::classical(1);
        let p = AugmentedParams {
            lambda: vec![7.0],
            alpha: vec![],
            log_sigma: None,
        };
        let pce = input_pce(&spec, &p).unwrap();
        assert_eq!(pce[0].moments(), (7.0, 0.0));
        assert_eq!(sample_lambda(&spec, &p, &[0.4]).unwrap(), vec![7.0]);
    }

    #[test]
    fn uniform_iid_moments() {
        let spec = EmbeddingSpec::all(EmbeddingVariant::UniformIid, 1).unwrap();
        let p = AugmentedParams {
            lambda: vec![0.0],
            alpha: vec![1.0],
            log_sigma: None,
        };
        let pce = input_pce(&spec, &p).unwrap();
        let (m, v) = pce[0].moments();
        assert_eq!(m, 0.0);
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(spec.germ_kind(), GermKind::LegendreUniform);
    }

    #[test]
    fn subset_embedding_keeps_others_constant() {
        let spec = EmbeddingSpec::new(EmbeddingVariant::UniformIid, 3, vec![0, 2]).unwrap();
        let p = AugmentedParams {
            lambda: vec![1.0, 2.0, 3.0],
            alpha: vec![0.1, 0.2],
            log_sigma: Some(-1.0),
        };
        let pce = input_pce(&spec, &p).unwrap();
        assert_eq!(pce[1].variance(), 0.0);
        assert_eq!(pce[2].coeffs(), &[3.0, 0.0, 0.2]);
        let flat = p.to_flat();
        assert_eq!(AugmentedParams::from_flat(&spec, true, &flat).unwrap(), p);
    }

    #[test]
    fn flat_layout_mismatch() {
        assert!(AugmentedParams::from_flat(&tri2(), false, &[1.0; 4]).is_err());
    }
}
