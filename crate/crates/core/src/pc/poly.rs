//! Univariate orthogonal polynomial families.
//!
//! Both families are evaluated with their three-term recurrences; closed forms
//! lose accuracy quickly past order ~10.

use serde::{Deserialize, Serialize};

/// Distribution of one germ component and the matching polynomial family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GermKind {
    /// Standard normal germ, probabilists' Hermite polynomials `He_n`.
    GaussHermite,
    /// Uniform germ on `[-1, 1]`, Legendre polynomials `P_n`.
    LegendreUniform,
}

impl GermKind {
    /// Values `p_0(x), ..., p_order(x)`.
    pub fn eval_all(self, order: usize, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; order + 1];
        self.eval_into(x, &mut out);
        out
    }

    /// Fills `out[n] = p_n(x)` for `n < out.len()`.
    pub fn eval_into(self, x: f64, out: &mut [f64]) {
        if out.is_empty() {
            return;
        }
        out[0] = 1.0;
        if out.len() == 1 {
            return;
        }
        out[1] = x;
        for n in 1..out.len() - 1 {
            let nf = n as f64;
            out[n + 1] = match self {
                GermKind::GaussHermite => x * out[n] - nf * out[n - 1],
                GermKind::LegendreUniform => {
                    ((2.0 * nf + 1.0) * x * out[n] - nf * out[n - 1]) / (nf + 1.0)
                }
            };
        }
    }

    /// Single value `p_order(x)`.
    pub fn eval(self, order: usize, x: f64) -> f64 {
        self.eval_all(order, x)[order]
    }

    /// Squared norm of `p_order` under the germ density.
    pub fn norm_sq(self, order: usize) -> f64 {
        match self {
            GermKind::GaussHermite => (1..=order).map(|k| k as f64).product(),
            GermKind::LegendreUniform => 1.0 / (2 * order + 1) as f64,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GermKind::GaussHermite => "hermite",
            GermKind::LegendreUniform => "legendre",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "hermite" | "gauss-hermite" => Some(GermKind::GaussHermite),
            "legendre" | "legendre-uniform" => Some(GermKind::LegendreUniform),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_low_orders() {
        let v = GermKind::GaussHermite.eval_all(4, 0.0);
        assert_eq!(v, vec![1.0, 0.0, -1.0, 0.0, 3.0]);
        // He3(x) = x^3 - 3x
        let x = 1.7_f64;
        assert!((GermKind::GaussHermite.eval(3, x) - (x.powi(3) - 3.0 * x)).abs() < 1e-14);
    }

    #[test]
    fn legendre_endpoints() {
        for n in 0..12 {
            assert!((GermKind::LegendreUniform.eval(n, 1.0) - 1.0).abs() < 1e-13);
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            assert!((GermKind::LegendreUniform.eval(n, -1.0) - sign).abs() < 1e-13);
        }
        // P2(x) = (3x^2 - 1)/2
        let x = 0.3_f64;
        assert!((GermKind::LegendreUniform.eval(2, x) - (3.0 * x * x - 1.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn norms() {
        assert_eq!(GermKind::GaussHermite.norm_sq(0), 1.0);
        assert_eq!(GermKind::GaussHermite.norm_sq(3), 6.0);
        assert_eq!(GermKind::LegendreUniform.norm_sq(0), 1.0);
        assert!((GermKind::LegendreUniform.norm_sq(1) - 1.0 / 3.0).abs() < 1e-16);
    }
}
