use serde::{Deserialize, Serialize};

use super::multi_index::{gen_multi_index, MultiIndex};
use super::poly::GermKind;
use crate::error::{Error, Result};

/// Tensor-product orthogonal basis over a germ of independent components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcBasis {
    kind: GermKind,
    dim: usize,
    indices: Vec<MultiIndex>,
    norms_sq: Vec<f64>,
    max_order: usize,
}

impl PcBasis {
    /// Total-order basis of the given order.
    pub fn total_order(kind: GermKind, dim: usize, order: usize) -> Self {
        Self::from_indices(kind, dim, gen_multi_index(dim, order))
            .expect("generated multi-indices are valid")
    }

    /// Basis over an explicit multi-index list. The first entry must be the
    /// constant term and entries must be unique.
    pub fn from_indices(kind: GermKind, dim: usize, indices: Vec<MultiIndex>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("basis dimension must be positive".into()));
        }
        if indices.is_empty() || indices[0] != MultiIndex::zeros(dim) {
            return Err(Error::InvalidArgument(
                "first multi-index must be the constant term".into(),
            ));
        }
        let mut seen = std::collections::HashSet::with_capacity(indices.len());
        for mi in &indices {
            if mi.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: mi.dim(),
                });
            }
            if !seen.insert(mi) {
                return Err(Error::InvalidArgument(format!("duplicate multi-index {:?}", mi.0)));
            }
        }
        let norms_sq = indices
            .iter()
            .map(|mi| mi.orders().iter().map(|&o| kind.norm_sq(o)).product())
            .collect();
        let max_order = indices
            .iter()
            .flat_map(|mi| mi.orders().iter().copied())
            .max()
            .unwrap_or(0);
        Ok(PcBasis {
            kind,
            dim,
            indices,
            norms_sq,
            max_order,
        })
    }

    pub fn kind(&self) -> GermKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    /// Squared norms `||Psi_k||^2` under the germ density.
    pub fn norms_sq(&self) -> &[f64] {
        &self.norms_sq
    }

    /// Highest univariate order appearing in any term.
    pub fn max_order(&self) -> usize {
        self.max_order
    }

    /// Values `Psi_k(point)` for every basis term.
    pub fn eval(&self, point: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(point, &mut out)?;
        Ok(out)
    }

    pub fn eval_into(&self, point: &[f64], out: &mut [f64]) -> Result<()> {
        if point.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: point.len(),
            });
        }
        debug_assert_eq!(out.len(), self.len());
        let stride = self.max_order + 1;
        let mut uni = vec![0.0; self.dim * stride];
        for (d, &x) in point.iter().enumerate() {
            self.kind.eval_into(x, &mut uni[d * stride..(d + 1) * stride]);
        }
        for (slot, mi) in out.iter_mut().zip(&self.indices) {
            *slot = mi
                .orders()
                .iter()
                .enumerate()
                .map(|(d, &o)| uni[d * stride + o])
                .product();
        }
        Ok(())
    }
}

/// Squared norms of every term of `basis`.
pub fn basis_norms(basis: &PcBasis) -> Vec<f64> {
    basis.norms_sq().to_vec()
}
