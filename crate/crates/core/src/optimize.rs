//! Derivative-free minimization and finite-difference curvature, used to
//! start chains near the posterior mode with a sensibly shaped proposal.

use nalgebra::DMatrix;

#[derive(Debug, Clone, Copy)]
pub struct NelderMead {
    pub max_evals: usize,
    /// Stop once the simplex's function spread falls below this.
    pub f_tol: f64,
    pub x_tol: f64,
    /// Fresh simplices built around the incumbent after convergence.
    pub restarts: usize,
}

impl Default for NelderMead {
    fn default() -> Self {
        NelderMead {
            max_evals: 20_000,
            f_tol: 1e-12,
            x_tol: 1e-10,
            restarts: 8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
}

impl NelderMead {
    /// Minimizes `f` from `x0` with initial simplex edge lengths `step`.
    /// `f` may return `+inf` for infeasible points.
    pub fn minimize(&self, f: impl Fn(&[f64]) -> f64, x0: &[f64], step: &[f64]) -> Minimum {
        let mut best = self.run(&f, x0, step);
        let mut step = step.to_vec();
        for _ in 0..self.restarts {
            // flip and shrink the simplex on each restart
            step.iter_mut().for_each(|s| *s *= -0.5);
            if best.evals >= self.max_evals {
                break;
            }
            let next = self.run(&f, &best.x, &step);
            let gain = best.f - next.f;
            let evals = best.evals + next.evals;
            if next.f < best.f {
                best = Minimum { evals, ..next };
            } else {
                best.evals = evals;
            }
            if !(gain > self.f_tol * (1.0 + best.f.abs())) {
                break;
            }
        }
        best
    }

    fn run(&self, f: &impl Fn(&[f64]) -> f64, x0: &[f64], step: &[f64]) -> Minimum {
        let n = x0.len();
        let nf = n as f64;
        // dimension-adaptive coefficients
        let (alpha, beta, gamma, delta) = (1.0, 1.0 + 2.0 / nf, 0.75 - 0.5 / nf, 1.0 - 1.0 / nf);
        let evals = std::cell::Cell::new(0usize);
        let eval = |x: &[f64]| {
            evals.set(evals.get() + 1);
            let v = f(x);
            if v.is_nan() {
                f64::INFINITY
            } else {
                v
            }
        };
        let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
        for i in 0..n {
            let mut x = x0.to_vec();
            x[i] += step[i];
            simplex.push(x);
        }
        let mut fv: Vec<f64> = simplex.iter().map(|x| eval(x)).collect();

        loop {
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| fv[a].total_cmp(&fv[b]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            fv = order.iter().map(|&i| fv[i]).collect();

            let spread = (fv[n] - fv[0]).abs();
            let size = simplex[1..]
                .iter()
                .flat_map(|x| x.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
                .fold(0.0, f64::max);
            if evals.get() >= self.max_evals || size <= self.x_tol || spread <= self.f_tol * (1.0 + fv[0].abs()) {
                break;
            }

            let centroid: Vec<f64> = (0..n)
                .map(|j| simplex[..n].iter().map(|x| x[j]).sum::<f64>() / nf)
                .collect();
            let along = |t: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&simplex[n])
                    .map(|(c, w)| c + t * (c - w))
                    .collect()
            };
            let xr = along(alpha);
            let fr = eval(&xr);
            if fr < fv[0] {
                let xe = along(beta);
                let fe = eval(&xe);
                if fe < fr {
                    simplex[n] = xe;
                    fv[n] = fe;
                } else {
                    simplex[n] = xr;
                    fv[n] = fr;
                }
                continue;
            }
            if fr < fv[n - 1] {
                simplex[n] = xr;
                fv[n] = fr;
                continue;
            }
            let (xc, fc) = if fr < fv[n] {
                let xc = along(gamma);
                let fc = eval(&xc);
                (xc, fc)
            } else {
                let xc = along(-gamma);
                let fc = eval(&xc);
                (xc, fc)
            };
            if fc < fv[n].min(fr) {
                simplex[n] = xc;
                fv[n] = fc;
                continue;
            }
            for i in 1..=n {
                let shrunk: Vec<f64> = simplex[0]
                    .iter()
                    .zip(&simplex[i])
                    .map(|(b, x)| b + delta * (x - b))
                    .collect();
                fv[i] = eval(&shrunk);
                simplex[i] = shrunk;
            }
        }
        let best = (0..=n).min_by(|&a, &b| fv[a].total_cmp(&fv[b])).unwrap_or(0);
        Minimum {
            x: simplex[best].clone(),
            f: fv[best],
            evals: evals.get(),
        }
    }
}

/// Central-difference Hessian of `f` at `x` with per-coordinate steps `h`.
/// Returns `None` if any evaluation is not finite.
pub fn fd_hessian(f: impl Fn(&[f64]) -> f64, x: &[f64], h: &[f64]) -> Option<DMatrix<f64>> {
    let n = x.len();
    let f0 = f(x);
    if !f0.is_finite() {
        return None;
    }
    let mut hess = DMatrix::zeros(n, n);
    let mut y = x.to_vec();
    for i in 0..n {
        y[i] = x[i] + h[i];
        let fp = f(&y);
        y[i] = x[i] - h[i];
        let fm = f(&y);
        y[i] = x[i];
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let mut corner = |si: f64, sj: f64| {
                y[i] = x[i] + si * h[i];
                y[j] = x[j] + sj * h[j];
                let v = f(&y);
                y[i] = x[i];
                y[j] = x[j];
                v
            };
            let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0))
                / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess.iter().all(|v| v.is_finite()).then_some(hess)
}
