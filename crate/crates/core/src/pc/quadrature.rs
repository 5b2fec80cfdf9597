//! Gauss quadrature against the germ probability measures.

use nalgebra::{DMatrix, SymmetricEigen};

use super::poly::GermKind;

/// Quadrature nodes and weights; weights integrate against a probability
/// density and therefore sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.nodes.first().map_or(0, Vec::len)
    }

    /// Weighted sum of `f` over the nodes.
    pub fn integrate(&self, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(x))
            .sum()
    }
}

/// One-dimensional `n`-point Gauss rule for the germ measure.
///
/// Nodes come from the Golub-Welsch eigenproblem and are polished with a
/// Newton step on the recurrence; weights use the closed-form Christoffel
/// expressions at the polished nodes.
pub fn gauss_rule_1d(kind: GermKind, n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature needs at least one point");
    if n == 1 {
        return (vec![0.0], vec![1.0]);
    }
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let kf = k as f64;
        let b = match kind {
            GermKind::GaussHermite => kf.sqrt(),
            GermKind::LegendreUniform => kf / (4.0 * kf * kf - 1.0).sqrt(),
        };
        jacobi[(k, k - 1)] = b;
        jacobi[(k - 1, k)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut vals = vec![0.0; n + 1];
    for x in nodes.iter_mut() {
        for _ in 0..3 {
            kind.eval_into(*x, &mut vals);
            let d = derivative(kind, n, *x, &vals);
            if d == 0.0 {
                break;
            }
            *x -= vals[n] / d;
        }
    }
    // symmetric rule: enforce exact antisymmetry of the node set
    for i in 0..n / 2 {
        let a = 0.5 * (nodes[n - 1 - i] - nodes[i]);
        nodes[i] = -a;
        nodes[n - 1 - i] = a;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }

    let mut weights: Vec<f64> = nodes
        .iter()
        .map(|&x| {
            kind.eval_into(x, &mut vals);
            match kind {
                GermKind::GaussHermite => {
                    // n! / (n^2 He_{n-1}(x)^2), computed as a ratio to avoid overflow
                    let nf = n as f64;
                    let he = vals[n - 1];
                    let fact: f64 = (1..n).map(|k| k as f64).product();
                    fact / (nf * he * he)
                }
                GermKind::LegendreUniform => {
                    let d = derivative(kind, n, x, &vals);
                    1.0 / ((1.0 - x * x) * d * d)
                }
            }
        })
        .collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    (nodes, weights)
}

fn derivative(kind: GermKind, n: usize, x: f64, vals: &[f64]) -> f64 {
    let nf = n as f64;
    match kind {
        GermKind::GaussHermite => nf * vals[n - 1],
        GermKind::LegendreUniform => nf * (x * vals[n] - vals[n - 1]) / (x * x - 1.0),
    }
}

/// Full tensor-product Gauss rule with `pts_per_dim` points per dimension.
///
/// Node ordering is row-major with the last dimension varying fastest.
pub fn gauss_quadrature(kind: GermKind, dim: usize, pts_per_dim: usize) -> QuadratureRule {
    assert!(dim >= 1, "quadrature dimension must be positive");
    let (x1, w1) = gauss_rule_1d(kind, pts_per_dim);
    let total = pts_per_dim.pow(dim as u32);
    let mut nodes = Vec::with_capacity(total);
    let mut weights = Vec::with_capacity(total);
    let mut digits = vec![0usize; dim];
    for _ in 0..total {
        nodes.push(digits.iter().map(|&i| x1[i]).collect());
        weights.push(digits.iter().map(|&i| w1[i]).product());
        for d in (0..dim).rev() {
            digits[d] += 1;
            if digits[d] < pts_per_dim {
                break;
            }
            digits[d] = 0;
        }
    }
    QuadratureRule { nodes, weights }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_point_rules() {
        let r = gauss_quadrature(GermKind::GaussHermite, 1, 1);
        assert_eq!(r.nodes, vec![vec![0.0]]);
        assert_eq!(r.weights, vec![1.0]);
    }

    #[test]
    fn two_point_legendre() {
        let r = gauss_quadrature(GermKind::LegendreUniform, 1, 2);
        let s = 1.0 / 3f64.sqrt();
        assert!((r.nodes[0][0] + s).abs() < 1e-15);
        assert!((r.nodes[1][0] - s).abs() < 1e-15);
        assert!((r.weights[0] - 0.5).abs() < 1e-15);
        assert!((r.weights[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn tensor_rule_size_and_mass() {
        let r = gauss_quadrature(GermKind::GaussHermite, 2, 3);
        assert_eq!(r.len(), 9);
        assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let r = gauss_quadrature(GermKind::LegendreUniform, 3, 4);
        assert_eq!(r.len(), 64);
        assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn three_point_hermite_known_values() {
        // nodes 0, ±sqrt(3); weights 2/3, 1/6
        let (x, w) = gauss_rule_1d(GermKind::GaussHermite, 3);
        assert!((x[2] - 3f64.sqrt()).abs() < 1e-14);
        assert!((w[1] - 2.0 / 3.0).abs() < 1e-14);
        assert!((w[0] - 1.0 / 6.0).abs() < 1e-14);
    }

    #[test]
    fn hermite_even_moments() {
        // E[xi^{2m}] = (2m-1)!!
        for n in 1..=12usize {
            let (x, w) = gauss_rule_1d(GermKind::GaussHermite, n);
            for deg in 0..2 * n {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let scale: f64 = x.iter().zip(&w).map(|(x, w)| (w * x.powi(deg as i32)).abs()).sum();
                let exact = if deg % 2 == 1 {
                    0.0
                } else {
                    (1..deg).step_by(2).map(|k| k as f64).product()
                };
                assert!((q - exact).abs() <= 1e-10 * scale.max(1.0), "n={n} deg={deg} q={q} exact={exact}");
            }
        }
    }
}
