//! Non-intrusive spectral projection of a black-box model through the
//! embedded stochastic inputs.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::{AugmentedParams, EmbeddingSpec};
use crate::error::{Error, Result};
use crate::pc::{gauss_quadrature, total_order_size, PcBasis, PcExpansion, QuadratureRule};

/// Deterministic model `f(x; lambda)`.
///
/// Implementations must be re-entrant: projections evaluate quadrature nodes
/// concurrently.
pub trait ForwardModel: Sync {
    /// Number of model parameters `d`.
    fn n_params(&self) -> usize;

    /// Arity of a design condition `x`.
    fn n_conditions(&self) -> usize;

    fn eval(&self, x: &[f64], lambda: &[f64]) -> Result<f64>;

    /// Evaluates every location for one parameter vector.
    fn eval_many(&self, xs: &[Vec<f64>], lambda: &[f64], out: &mut [f64]) -> Result<()> {
        for (o, x) in out.iter_mut().zip(xs) {
            *o = self.eval(x, lambda)?;
        }
        Ok(())
    }
}

impl<M: ForwardModel + ?Sized> ForwardModel for &M {
    fn n_params(&self) -> usize {
        (**self).n_params()
    }
    fn n_conditions(&self) -> usize {
        (**self).n_conditions()
    }
    fn eval(&self, x: &[f64], lambda: &[f64]) -> Result<f64> {
        (**self).eval(x, lambda)
    }
    fn eval_many(&self, xs: &[Vec<f64>], lambda: &[f64], out: &mut [f64]) -> Result<()> {
        (**self).eval_many(xs, lambda, out)
    }
}

/// Adapts a closure to [`ForwardModel`].
pub struct FnModel<F> {
    n_params: usize,
    n_conditions: usize,
    f: F,
}

impl<F> FnModel<F>
where
    F: Fn(&[f64], &[f64]) -> f64 + Sync,
{
    pub fn new(n_params: usize, n_conditions: usize, f: F) -> Self {
        FnModel {
            n_params,
            n_conditions,
            f,
        }
    }
}

impl<F> ForwardModel for FnModel<F>
where
    F: Fn(&[f64], &[f64]) -> f64 + Sync,
{
    fn n_params(&self) -> usize {
        self.n_params
    }
    fn n_conditions(&self) -> usize {
        self.n_conditions
    }
    fn eval(&self, x: &[f64], lambda: &[f64]) -> Result<f64> {
        let v = (self.f)(x, lambda);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::InvalidArgument(format!("non-finite model output {v} at x={x:?}")))
        }
    }
}

/// Projection order and quadrature size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NispConfig {
    pub order: usize,
    /// Defaults to `order + 1`.
    #[serde(default)]
    pub pts_per_dim: Option<usize>,
}

impl NispConfig {
    pub fn new(order: usize) -> Self {
        NispConfig {
            order,
            pts_per_dim: None,
        }
    }

    pub fn points(&self) -> usize {
        self.pts_per_dim.unwrap_or(self.order + 1)
    }
}

/// Output expansions `f_k(x_i; alpha)` at every location, on one shared basis.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputPce {
    basis: Arc<PcBasis>,
    coeffs: Vec<Vec<f64>>,
}

impl OutputPce {
    pub fn new(basis: Arc<PcBasis>, coeffs: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(c) = coeffs.iter().find(|c| c.len() != basis.len()) {
            return Err(Error::DimensionMismatch {
                expected: basis.len(),
                got: c.len(),
            });
        }
        Ok(OutputPce { basis, coeffs })
    }

    pub fn basis(&self) -> &Arc<PcBasis> {
        &self.basis
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn coeffs(&self, i: usize) -> &[f64] {
        &self.coeffs[i]
    }

    pub fn expansion(&self, i: usize) -> PcExpansion {
        PcExpansion::new(self.basis.clone(), self.coeffs[i].clone()).expect("consistent sizes")
    }

    pub fn mean(&self, i: usize) -> f64 {
        self.coeffs[i][0]
    }

    /// Model-error variance `sum_{k>=1} f_k^2 ||Psi_k||^2` at location `i`.
    pub fn variance(&self, i: usize) -> f64 {
        self.coeffs[i]
            .iter()
            .zip(self.basis.norms_sq())
            .skip(1)
            .fold(0.0, |acc, (c, n)| acc + c * c * n)
    }

    /// Predictive covariance `C_ij` including `delta_ij sigma^2`.
    pub fn cov(&self, i: usize, j: usize, sigma: f64) -> f64 {
        let model: f64 = self.coeffs[i]
            .iter()
            .zip(&self.coeffs[j])
            .zip(self.basis.norms_sq())
            .skip(1)
            .fold(0.0, |acc, ((a, b), n)| acc + a * b * n);
        if i == j {
            model + sigma * sigma
        } else {
            model
        }
    }

    pub fn covariance_matrix(&self, sigma: f64) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_fn(n, n, |i, j| self.cov(i, j, sigma))
    }
}

/// Reusable projection setup: basis, quadrature and basis values at nodes.
#[derive(Debug, Clone)]
pub struct NispPlan {
    spec: EmbeddingSpec,
    basis: Arc<PcBasis>,
    rule: QuadratureRule,
    psi: Vec<Vec<f64>>,
    input_terms: usize,
}

impl NispPlan {
    pub fn new(spec: &EmbeddingSpec, config: NispConfig) -> Result<Self> {
        let order = spec.effective_order(config.order);
        let pts = if spec.is_classical() { 1 } else { config.points() };
        if pts < order + 1 {
            return Err(Error::InvalidArgument(format!(
                "{pts} quadrature points per dimension cannot resolve order {order}"
            )));
        }
        let basis = Arc::new(PcBasis::total_order(spec.germ_kind(), spec.germ_dim(), order));
        let rule = gauss_quadrature(spec.germ_kind(), spec.germ_dim(), pts);
        let psi = rule
            .nodes
            .iter()
            .map(|xi| basis.eval(xi))
            .collect::<Result<Vec<_>>>()?;
        let input_terms = total_order_size(spec.germ_dim(), spec.input_order());
        if input_terms > basis.len() {
            return Err(Error::InvalidArgument(format!(
                "projection order {order} is below the input expansion order {}",
                spec.input_order()
            )));
        }
        Ok(NispPlan {
            spec: spec.clone(),
            basis,
            rule,
            psi,
            input_terms,
        })
    }

    pub fn spec(&self) -> &EmbeddingSpec {
        &self.spec
    }

    pub fn basis(&self) -> &Arc<PcBasis> {
        &self.basis
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    /// Stochastic input realizations at each quadrature node.
    pub fn node_inputs(&self, params: &AugmentedParams) -> Result<Vec<Vec<f64>>> {
        let input = self.spec.input_coefficients(params)?;
        Ok(self
            .psi
            .iter()
            .map(|psi| {
                input
                    .iter()
                    .map(|c| crate::pc::dot(c, &psi[..self.input_terms]))
                    .collect()
            })
            .collect())
    }

    /// Projects `model` at every location in `xs`.
    pub fn project<M: ForwardModel + ?Sized>(
        &self,
        model: &M,
        xs: &[Vec<f64>],
        params: &AugmentedParams,
    ) -> Result<OutputPce> {
        if model.n_params() != self.spec.dim_lambda() {
            return Err(Error::DimensionMismatch {
                expected: self.spec.dim_lambda(),
                got: model.n_params(),
            });
        }
        let inputs = self.node_inputs(params)?;
        let n = xs.len();
        let eval_node = |(q, lam): (usize, &Vec<f64>)| -> Result<Vec<f64>> {
            let mut out = vec![0.0; n];
            model
                .eval_many(xs, lam, &mut out)
                .map_err(|e| Error::ModelEvaluation {
                    node: q,
                    message: e.to_string(),
                })?;
            Ok(out)
        };
        // fan out only when there is enough work to amortize scheduling
        let values: Vec<Vec<f64>> = if inputs.len() * n >= 4096 {
            inputs.par_iter().enumerate().map(eval_node).collect::<Result<_>>()?
        } else {
            inputs.iter().enumerate().map(eval_node).collect::<Result<_>>()?
        };

        let k = self.basis.len();
        let mut coeffs = vec![vec![0.0; k]; n];
        for ((vals, psi), w) in values.iter().zip(&self.psi).zip(&self.rule.weights) {
            for (c, &v) in coeffs.iter_mut().zip(vals) {
                let wv = w * v;
                for (ck, p) in c.iter_mut().zip(psi) {
                    *ck += wv * p;
                }
            }
        }
        let norms = self.basis.norms_sq();
        for c in &mut coeffs {
            for (ck, nk) in c.iter_mut().zip(norms) {
                *ck /= nk;
            }
        }
        OutputPce::new(self.basis.clone(), coeffs)
    }
}

/// One-shot projection; see [`NispPlan`] to reuse the quadrature setup.
pub fn nisp_project<M: ForwardModel + ?Sized>(
    model: &M,
    xs: &[Vec<f64>],
    spec: &EmbeddingSpec,
    params: &AugmentedParams,
    order: usize,
    pts_per_dim: usize,
) -> Result<OutputPce> {
    NispPlan::new(
        spec,
        NispConfig {
            order,
            pts_per_dim: Some(pts_per_dim),
        },
    )?
    .project(model, xs, params)
}

/// Per-location predictive moments for a fixed augmented parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveMoments {
    pub mu: Vec<f64>,
    pub var_model: Vec<f64>,
    pub var_total: Vec<f64>,
    pub sigma: f64,
}

impl PredictiveMoments {
    pub fn sd_total(&self) -> Vec<f64> {
        self.var_total.iter().map(|v| v.sqrt()).collect()
    }
}

/// Mean, model-error variance and total variance (with data noise `sigma`)
/// at every location.
pub fn predictive_moments(out: &OutputPce, sigma: f64) -> Result<PredictiveMoments> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("data noise must be non-negative, got {sigma}")));
    }
    let s2 = sigma * sigma;
    let mu = (0..out.len()).map(|i| out.mean(i)).collect();
    let var_model: Vec<f64> = (0..out.len()).map(|i| out.variance(i)).collect();
    let var_total = var_model.iter().map(|v| v + s2).collect();
    Ok(PredictiveMoments {
        mu,
        var_model,
        var_total,
        sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::EmbeddingVariant;

    fn identity_model() -> FnModel<impl Fn(&[f64], &[f64]) -> f64 + Sync> {
        FnModel::new(1, 1, |_x: &[f64], l: &[f64]| l[0])
    }

    fn square_model() -> FnModel<impl Fn(&[f64], &[f64]) -> f64 + Sync> {
        FnModel::new(1, 1, |_x: &[f64], l: &[f64]| l[0] * l[0])
    }

    fn mvn1(mu: f64, a: f64) -> (EmbeddingSpec, AugmentedParams) {
        (
            EmbeddingSpec::all(EmbeddingVariant::TriangularMvn, 1).unwrap(),
            AugmentedParams {
                lambda: vec![mu],
                alpha: vec![a],
                log_sigma: None,
            },
        )
    }

    #[test]
    fn linear_pass_through() {
        let (spec, p) = mvn1(1.3, 0.4);
        let out = nisp_project(&identity_model(), &[vec![0.0]], &spec, &p, 1, 2).unwrap();
        let c = out.coeffs(0);
        assert!((c[0] - 1.3).abs() < 1e-14 && (c[1] - 0.4).abs() < 1e-14);
    }

    #[test]
    fn square_matches_analytic_expansion() {
        let (mu, a) = (0.7, 0.3);
        let (spec, p) = mvn1(mu, a);
        let out = nisp_project(&square_model(), &[vec![0.0]], &spec, &p, 2, 3).unwrap();
        let c = out.coeffs(0);
        let expect = [mu * mu + a * a, 2.0 * mu * a, a * a];
        for (g, e) in c.iter().zip(expect) {
            assert!((g - e).abs() < 1e-14, "{c:?}");
        }
    }

    #[test]
    fn classical_single_coefficient() {
        let spec = EmbeddingSpec::classical(1);
        let p = AugmentedParams {
            lambda: vec![2.0],
            alpha: vec![],
            log_sigma: None,
        };
        let out = nisp_project(&square_model(), &[vec![0.0], vec![1.0]], &spec, &p, 3, 4).unwrap();
        assert_eq!(out.basis().len(), 1);
        assert_eq!(out.mean(1), 4.0);
        let m = predictive_moments(&out, 0.0).unwrap();
        assert_eq!(m.var_model, vec![0.0, 0.0]);
        assert_eq!(m.var_total, vec![0.0, 0.0]);
    }

    #[test]
    fn moments_and_noise() {
        let (spec, p) = mvn1(1.0, 0.5);
        let out = nisp_project(&identity_model(), &[vec![0.0]], &spec, &p, 1, 2).unwrap();
        let m = predictive_moments(&out, 0.0).unwrap();
        assert!((m.mu[0] - 1.0).abs() < 1e-14);
        assert!((m.var_model[0] - 0.25).abs() < 1e-14);
        assert_eq!(out.cov(0, 0, 0.0), m.var_model[0]);

        let spec = EmbeddingSpec::classical(1);
        let p = AugmentedParams {
            lambda: vec![2.0],
            alpha: vec![],
            log_sigma: None,
        };
        let out = nisp_project(&identity_model(), &[vec![0.0], vec![1.0]], &spec, &p, 1, 2).unwrap();
        let m = predictive_moments(&out, 0.1).unwrap();
        assert!((m.var_total[0] - 0.01).abs() < 1e-16);
        assert_eq!(out.cov(0, 1, 0.1), 0.0);
        assert!(predictive_moments(&out, -1.0).is_err());
    }

    #[test]
    fn too_few_points_rejected() {
        let (spec, _) = mvn1(0.0, 1.0);
        assert!(NispPlan::new(&spec, NispConfig { order: 3, pts_per_dim: Some(3) }).is_err());
    }

    #[test]
    fn model_failure_names_node() {
        let (spec, p) = mvn1(0.0, 1.0);
        let m = FnModel::new(1, 1, |_x: &[f64], l: &[f64]| if l[0] > 0.0 { f64::NAN } else { 0.0 });
        let err = nisp_project(&m, &[vec![0.0]], &spec, &p, 1, 2).unwrap_err();
        assert!(matches!(err, Error::ModelEvaluation { node: 1, .. }), "{err}");
    }
}
