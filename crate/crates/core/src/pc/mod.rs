//! Polynomial chaos machinery: orthogonal bases, multi-index sets, tensor
//! Gauss quadrature and expansion algebra.

mod basis;
mod expansion;
mod multi_index;
mod poly;
mod quadrature;

pub use basis::{basis_norms, PcBasis};
pub use expansion::{pce_cov, pce_eval, pce_moments, sobol_main_index, PcExpansion};
pub(crate) use expansion::dot;
pub use multi_index::{gen_multi_index, total_order_size, MultiIndex};
pub use poly::GermKind;
pub use quadrature::{gauss_quadrature, gauss_rule_1d, QuadratureRule};

/// Evaluates every basis term of `basis` at `point`.
pub fn eval_basis(basis: &PcBasis, point: &[f64]) -> crate::Result<Vec<f64>> {
    basis.eval(point)
}
