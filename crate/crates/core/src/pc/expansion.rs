use std::fmt::Write as _;
use std::sync::Arc;

use super::basis::PcBasis;
use super::multi_index::MultiIndex;
use super::poly::GermKind;
use crate::error::{Error, Result};

/// Polynomial chaos expansion `sum_k c_k Psi_k(xi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PcExpansion {
    basis: Arc<PcBasis>,
    coeffs: Vec<f64>,
}

impl PcExpansion {
    pub fn new(basis: Arc<PcBasis>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != basis.len() {
            return Err(Error::DimensionMismatch {
                expected: basis.len(),
                got: coeffs.len(),
            });
        }
        Ok(PcExpansion { basis, coeffs })
    }

    /// Constant expansion on `basis`.
    pub fn constant(basis: Arc<PcBasis>, value: f64) -> Self {
        let mut coeffs = vec![0.0; basis.len()];
        coeffs[0] = value;
        PcExpansion { basis, coeffs }
    }

    pub fn basis(&self) -> &Arc<PcBasis> {
        &self.basis
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn eval(&self, point: &[f64]) -> Result<f64> {
        let psi = self.basis.eval(point)?;
        Ok(dot(&self.coeffs, &psi))
    }

    pub fn mean(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn variance(&self) -> f64 {
        self.coeffs
            .iter()
            .zip(self.basis.norms_sq())
            .skip(1)
            .fold(0.0, |acc, (c, n)| acc + c * c * n)
    }

    /// `(mean, variance)` under the germ measure.
    pub fn moments(&self) -> (f64, f64) {
        (self.mean(), self.variance())
    }

    /// Covariance with another expansion on the same basis.
    pub fn cov(&self, other: &PcExpansion) -> Result<f64> {
        if !same_basis(&self.basis, &other.basis) {
            return Err(Error::BasisMismatch);
        }
        Ok(self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .zip(self.basis.norms_sq())
            .skip(1)
            .fold(0.0, |acc, ((a, b), n)| acc + a * b * n))
    }

    /// Variance fraction carried by terms whose support lies inside `dims`
    /// (first-order Sobol index of the group).
    pub fn sobol_main_index(&self, dims: &[usize]) -> Result<f64> {
        let total = self.variance();
        if total <= 0.0 {
            return Err(Error::DegenerateExpansion);
        }
        if let Some(&d) = dims.iter().find(|&&d| d >= self.basis.dim()) {
            return Err(Error::DimensionMismatch {
                expected: self.basis.dim(),
                got: d + 1,
            });
        }
        let part: f64 = self
            .basis
            .indices()
            .iter()
            .zip(&self.coeffs)
            .zip(self.basis.norms_sq())
            .skip(1)
            .filter(|((mi, _), _)| mi.support().all(|d| dims.contains(&d)))
            .map(|((_, c), n)| c * c * n)
            .sum();
        Ok(part / total)
    }

    /// Variance fraction carried by terms touching any of `dims` (total
    /// Sobol index of the group).
    pub fn sobol_total_index(&self, dims: &[usize]) -> Result<f64> {
        let total = self.variance();
        if total <= 0.0 {
            return Err(Error::DegenerateExpansion);
        }
        let part: f64 = self
            .basis
            .indices()
            .iter()
            .zip(&self.coeffs)
            .zip(self.basis.norms_sq())
            .skip(1)
            .filter(|((mi, _), _)| mi.support().any(|d| dims.contains(&d)))
            .map(|((_, c), n)| c * c * n)
            .sum();
        Ok(part / total)
    }

    /// Tabular text form: a header comment naming the germ, then one row per
    /// multi-index with the index entries followed by the coefficient.
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "# germ={} dim={}\n",
            self.basis.kind().name(),
            self.basis.dim()
        );
        for (mi, c) in self.basis.indices().iter().zip(&self.coeffs) {
            for o in mi.orders() {
                let _ = write!(s, "{o} ");
            }
            let _ = writeln!(s, "{c:?}");
        }
        s
    }

    pub fn from_table(text: &str) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: "<pce table>".into(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| parse_err(1, "missing header".into()))?;
        let mut kind = None;
        let mut dim = None;
        for tok in header.trim_start_matches('#').split_whitespace() {
            match tok.split_once('=') {
                Some(("germ", v)) => kind = GermKind::from_name(v),
                Some(("dim", v)) => dim = v.parse::<usize>().ok(),
                _ => {}
            }
        }
        let kind = kind.ok_or_else(|| parse_err(1, "header lacks a valid germ=".into()))?;
        let dim = dim.ok_or_else(|| parse_err(1, "header lacks a valid dim=".into()))?;
        let mut indices = Vec::new();
        let mut coeffs = Vec::new();
        for (ln, line) in lines {
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != dim + 1 {
                return Err(parse_err(ln + 1, format!("expected {} columns", dim + 1)));
            }
            let orders = toks[..dim]
                .iter()
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| parse_err(ln + 1, e.to_string()))?;
            let c = toks[dim]
                .parse::<f64>()
                .map_err(|e| parse_err(ln + 1, e.to_string()))?;
            indices.push(MultiIndex(orders));
            coeffs.push(c);
        }
        let basis = Arc::new(PcBasis::from_indices(kind, dim, indices)?);
        PcExpansion::new(basis, coeffs)
    }
}

pub(crate) fn same_basis(a: &Arc<PcBasis>, b: &Arc<PcBasis>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Evaluates `expansion` at `point`.
pub fn pce_eval(expansion: &PcExpansion, point: &[f64]) -> Result<f64> {
    expansion.eval(point)
}

/// Mean and variance of `expansion`.
pub fn pce_moments(expansion: &PcExpansion) -> (f64, f64) {
    expansion.moments()
}

/// Covariance of two expansions sharing a basis.
pub fn pce_cov(a: &PcExpansion, b: &PcExpansion) -> Result<f64> {
    a.cov(b)
}

/// Main Sobol index of the dimension group `dims`.
pub fn sobol_main_index(expansion: &PcExpansion, dims: &[usize]) -> Result<f64> {
    expansion.sobol_main_index(dims)
}
