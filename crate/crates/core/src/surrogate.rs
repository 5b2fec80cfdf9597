//! Per-location Legendre least-squares surrogates `f_s(x_i; lambda)`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;

use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::nisp::ForwardModel;
use crate::pc::{dot, GermKind, MultiIndex, PcBasis};

/// Model runs on a shared parameter design: `values[i][r] = f(xs[i], lambdas[r])`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub xs: Vec<Vec<f64>>,
    pub lambdas: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
}

impl TrainingSet {
    /// Uniform random design over `ranges`, evaluated concurrently.
    pub fn sample<M: ForwardModel + ?Sized>(
        model: &M,
        xs: &[Vec<f64>],
        ranges: &[(f64, f64)],
        runs: usize,
        seed: u64,
    ) -> Result<Self> {
        if ranges.len() != model.n_params() {
            return Err(Error::DimensionMismatch {
                expected: model.n_params(),
                got: ranges.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dists = ranges
            .iter()
            .map(|&(a, b)| Uniform::new_inclusive(a, b).map_err(|e| Error::InvalidArgument(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let lambdas: Vec<Vec<f64>> = (0..runs)
            .map(|_| dists.iter().map(|d| d.sample(&mut rng)).collect())
            .collect();
        let values = xs
            .par_iter()
            .map(|x| lambdas.iter().map(|l| model.eval(x, l)).collect::<Result<Vec<f64>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainingSet {
            xs: xs.to_vec(),
            lambdas,
            values,
        })
    }

    /// Long-format CSV with columns `x1..xm,lambda1..lambdad,f`.
    pub fn to_csv_string(&self) -> String {
        let m = self.xs.first().map_or(0, Vec::len);
        let d = self.lambdas.first().map_or(0, Vec::len);
        let mut s = String::new();
        for j in 1..=m {
            let _ = write!(s, "x{j},");
        }
        for j in 1..=d {
            let _ = write!(s, "lambda{j},");
        }
        s.push_str("f\n");
        for (x, vals) in self.xs.iter().zip(&self.values) {
            for (l, v) in self.lambdas.iter().zip(vals) {
                for t in x.iter().chain(l) {
                    let _ = write!(s, "{t:?},");
                }
                let _ = writeln!(s, "{v:?}");
            }
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv_string().as_bytes())
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_csv(&text, &path.display().to_string())
    }

    /// Parses the long format; every `(x, lambda)` pair must appear once.
    pub fn parse_csv(text: &str, origin: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: origin.to_string(),
            line,
            message,
        };
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let headers = rdr.headers()?.clone();
        let m = headers.iter().filter(|h| h.starts_with('x')).count();
        let d = headers.iter().filter(|h| h.starts_with("lambda")).count();
        if m + d + 1 != headers.len() || headers.get(headers.len() - 1) != Some("f") || d == 0 {
            return Err(err(1, "expected columns x1..xm, lambda1..lambdad, f".into()));
        }
        let key = |v: &[f64]| v.iter().map(|t| t.to_bits()).collect::<Vec<u64>>();
        let mut x_ids: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut l_ids: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut xs = Vec::new();
        let mut lambdas = Vec::new();
        let mut cells: HashMap<(usize, usize), (f64, usize)> = HashMap::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let vals = rec
                .iter()
                .enumerate()
                .map(|(c, f)| {
                    f.parse::<f64>()
                        .map_err(|_| err(line, format!("column `{}`: non-numeric value `{f}`", &headers[c])))
                })
                .collect::<Result<Vec<f64>>>()?;
            let (x, rest) = vals.split_at(m);
            let (l, f) = rest.split_at(d);
            let xi = *x_ids.entry(key(x)).or_insert_with(|| {
                xs.push(x.to_vec());
                xs.len() - 1
            });
            let li = *l_ids.entry(key(l)).or_insert_with(|| {
                lambdas.push(l.to_vec());
                lambdas.len() - 1
            });
            if let Some((_, first)) = cells.insert((xi, li), (f[0], line)) {
                return Err(err(line, format!("duplicate (x, lambda) pair, first seen on line {first}")));
            }
        }
        if cells.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut values = vec![vec![0.0; lambdas.len()]; xs.len()];
        for (i, row) in values.iter_mut().enumerate() {
            for (r, v) in row.iter_mut().enumerate() {
                *v = cells
                    .get(&(i, r))
                    .map(|c| c.0)
                    .ok_or_else(|| err(0, format!("missing run for x={:?}, lambda={:?}", xs[i], lambdas[r])))?;
            }
        }
        Ok(TrainingSet { xs, lambdas, values })
    }
}

/// Legendre surrogates of total order `p` over the box `ranges`, one
/// coefficient vector per design location.
#[derive(Debug)]
pub struct SurrogateModel {
    basis: Arc<PcBasis>,
    ranges: Vec<(f64, f64)>,
    xs: Vec<Vec<f64>>,
    coeffs: Vec<Vec<f64>>,
    loo_errors: Vec<f64>,
    condition: f64,
    lookup: HashMap<Vec<u64>, usize>,
    warned: AtomicBool,
}

impl Clone for SurrogateModel {
    fn clone(&self) -> Self {
        SurrogateModel {
            basis: self.basis.clone(),
            ranges: self.ranges.clone(),
            xs: self.xs.clone(),
            coeffs: self.coeffs.clone(),
            loo_errors: self.loo_errors.clone(),
            condition: self.condition,
            lookup: self.lookup.clone(),
            warned: AtomicBool::new(self.warned.load(Ordering::Relaxed)),
        }
    }
}

impl PartialEq for SurrogateModel {
    fn eq(&self, other: &Self) -> bool {
        self.basis == other.basis
            && self.ranges == other.ranges
            && self.xs == other.xs
            && self.coeffs == other.coeffs
            && self.loo_errors == other.loo_errors
    }
}

fn location_key(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| (v + 0.0).to_bits()).collect()
}

fn scale_to_unit(lambda: &[f64], ranges: &[(f64, f64)]) -> (Vec<f64>, bool) {
    let mut outside = false;
    let u = lambda
        .iter()
        .zip(ranges)
        .map(|(&l, &(a, b))| {
            outside |= l < a || l > b;
            2.0 * (l - a) / (b - a) - 1.0
        })
        .collect();
    (u, outside)
}

/// Condition number of `P^T P` above which a warning is logged.
pub const CONDITION_WARN: f64 = 1e10;
/// Condition number of `P^T P` treated as numerically rank deficient.
pub const CONDITION_FAIL: f64 = 1e14;

/// Least-squares fit `c_i = (P^T P)^{-1} P^T f_i` with analytic
/// leave-one-out errors from the hat-matrix diagonal.
pub fn build_surrogate(training: &TrainingSet, order: usize, ranges: &[(f64, f64)]) -> Result<SurrogateModel> {
    let d = ranges.len();
    for (j, &(a, b)) in ranges.iter().enumerate() {
        if !(a < b) {
            return Err(Error::config(format!("surrogate.ranges[{j}]"), "lower bound must be below upper bound"));
        }
    }
    if training.values.len() != training.xs.len() {
        return Err(Error::DimensionMismatch {
            expected: training.xs.len(),
            got: training.values.len(),
        });
    }
    if training.xs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let basis = Arc::new(PcBasis::total_order(GermKind::LegendreUniform, d, order));
    let k = basis.len();
    let r = training.lambdas.len();
    if r < k {
        return Err(Error::IllPosedDesign { condition: f64::INFINITY });
    }

    let mut p = DMatrix::<f64>::zeros(r, k);
    let mut row = vec![0.0; k];
    for (ri, l) in training.lambdas.iter().enumerate() {
        if l.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: l.len() });
        }
        let (u, outside) = scale_to_unit(l, ranges);
        if outside {
            return Err(Error::InvalidArgument(format!("training point {l:?} lies outside the ranges")));
        }
        basis.eval_into(&u, &mut row)?;
        for (c, v) in row.iter().enumerate() {
            p[(ri, c)] = *v;
        }
    }

    let sv = p.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let condition = if smin > 0.0 { (smax / smin).powi(2) } else { f64::INFINITY };
    if !(condition < CONDITION_FAIL) {
        return Err(Error::IllPosedDesign { condition });
    }
    if condition > CONDITION_WARN {
        log::warn!("surrogate design is poorly conditioned (cond(P^T P) = {condition:.3e})");
    }

    let ptp = p.tr_mul(&p);
    let lu = ptp.full_piv_lu();
    let ptp_inv = lu
        .try_inverse()
        .ok_or(Error::IllPosedDesign { condition })?;
    // hat diagonal H_rr = p_r^T (P^T P)^{-1} p_r
    let pa = &p * &ptp_inv;
    let hat: Vec<f64> = (0..r).map(|ri| pa.row(ri).dot(&p.row(ri))).collect();

    let fits: Vec<(Vec<f64>, f64)> = training
        .values
        .par_iter()
        .map(|vals| {
            if vals.len() != r {
                return Err(Error::DimensionMismatch { expected: r, got: vals.len() });
            }
            let f = DVector::from_column_slice(vals);
            let c = lu.solve(&p.tr_mul(&f)).ok_or(Error::IllPosedDesign { condition })?;
            let resid = &f - &p * &c;
            let ss: f64 = resid
                .iter()
                .zip(&hat)
                .map(|(e, h)| {
                    let lev = 1.0 - h;
                    if e.abs() <= f64::EPSILON * (1.0 + f.amax()) * 16.0 {
                        0.0
                    } else if lev <= 1e-12 {
                        f64::INFINITY
                    } else {
                        (e / lev).powi(2)
                    }
                })
                .sum();
            Ok((c.as_slice().to_vec(), (ss / r as f64).sqrt()))
        })
        .collect::<Result<_>>()?;
    let (coeffs, loo_errors) = fits.into_iter().unzip();
    SurrogateModel::from_parts(basis, ranges.to_vec(), training.xs.clone(), coeffs, loo_errors, condition)
}

impl SurrogateModel {
    fn from_parts(
        basis: Arc<PcBasis>,
        ranges: Vec<(f64, f64)>,
        xs: Vec<Vec<f64>>,
        coeffs: Vec<Vec<f64>>,
        loo_errors: Vec<f64>,
        condition: f64,
    ) -> Result<Self> {
        let mut lookup = HashMap::with_capacity(xs.len());
        for (i, x) in xs.iter().enumerate() {
            if lookup.insert(location_key(x), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate surrogate location {x:?}")));
            }
        }
        Ok(SurrogateModel {
            basis,
            ranges,
            xs,
            coeffs,
            loo_errors,
            condition,
            lookup,
            warned: AtomicBool::new(false),
        })
    }

    pub fn basis(&self) -> &Arc<PcBasis> {
        &self.basis
    }

    pub fn order(&self) -> usize {
        self.basis.max_order()
    }

    pub fn ranges(&self) -> &[(f64, f64)] {
        &self.ranges
    }

    pub fn locations(&self) -> &[Vec<f64>] {
        &self.xs
    }

    pub fn coeffs(&self, i: usize) -> &[f64] {
        &self.coeffs[i]
    }

    /// Root-mean-square leave-one-out error per location.
    pub fn loo_errors(&self) -> &[f64] {
        &self.loo_errors
    }

    /// Condition number of the normal-equation matrix at build time.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn location_index(&self, x: &[f64]) -> Option<usize> {
        self.lookup.get(&location_key(x)).copied()
    }

    /// Value at location `i`, with a flag set when `lambda` lies outside the ranges.
    pub fn eval_at(&self, i: usize, lambda: &[f64]) -> Result<(f64, bool)> {
        let c = self
            .coeffs
            .get(i)
            .ok_or_else(|| Error::InvalidArgument(format!("location index {i} out of range")))?;
        if lambda.len() != self.ranges.len() {
            return Err(Error::DimensionMismatch {
                expected: self.ranges.len(),
                got: lambda.len(),
            });
        }
        let (u, outside) = scale_to_unit(lambda, &self.ranges);
        Ok((dot(c, &self.basis.eval(&u)?), outside))
    }

    /// Text form: header, ranges, multi-index table, then one row per
    /// location holding `x`, the LOO error and the coefficients.
    pub fn to_text(&self) -> String {
        let m = self.xs.first().map_or(0, Vec::len);
        let mut s = format!(
            "# surrogate germ=legendre dim={} order={} terms={} conditions={} locations={}\n",
            self.ranges.len(),
            self.order(),
            self.basis.len(),
            m,
            self.xs.len()
        );
        for (a, b) in &self.ranges {
            let _ = writeln!(s, "range {a:?} {b:?}");
        }
        for mi in self.basis.indices() {
            s.push_str("index");
            for o in mi.orders() {
                let _ = write!(s, " {o}");
            }
            s.push('\n');
        }
        for ((x, loo), c) in self.xs.iter().zip(&self.loo_errors).zip(&self.coeffs) {
            s.push_str("location");
            for v in x.iter().chain(std::iter::once(loo)).chain(c) {
                let _ = write!(s, " {v:?}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: origin.to_string(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| err(1, "missing header".into()))?;
        let field = |name: &str| -> Result<usize> {
            header
                .split_whitespace()
                .find_map(|t| t.strip_prefix(name).and_then(|v| v.strip_prefix('=')))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| err(1, format!("header lacks `{name}=`")))
        };
        if !header.starts_with("# surrogate") {
            return Err(err(1, "not a surrogate file".into()));
        }
        let (dim, terms, m, n) = (field("dim")?, field("terms")?, field("conditions")?, field("locations")?);
        let mut ranges = Vec::new();
        let mut indices = Vec::new();
        let mut xs = Vec::new();
        let mut loo = Vec::new();
        let mut coeffs = Vec::new();
        for (ln, line) in lines {
            let ln = ln + 1;
            let mut toks = line.split_whitespace();
            let tag = toks.next().unwrap_or_default();
            let rest: Vec<&str> = toks.collect();
            let floats = || {
                rest.iter()
                    .map(|t| t.parse::<f64>().map_err(|e| err(ln, format!("`{t}`: {e}"))))
                    .collect::<Result<Vec<f64>>>()
            };
            match tag {
                "range" => {
                    let v = floats()?;
                    if v.len() != 2 {
                        return Err(err(ln, "range needs two values".into()));
                    }
                    ranges.push((v[0], v[1]));
                }
                "index" => {
                    let o = rest
                        .iter()
                        .map(|t| t.parse::<usize>().map_err(|e| err(ln, format!("`{t}`: {e}"))))
                        .collect::<Result<Vec<usize>>>()?;
                    if o.len() != dim {
                        return Err(err(ln, format!("index needs {dim} entries")));
                    }
                    indices.push(MultiIndex(o));
                }
                "location" => {
                    let v = floats()?;
                    if v.len() != m + 1 + terms {
                        return Err(err(ln, format!("location needs {} values", m + 1 + terms)));
                    }
                    xs.push(v[..m].to_vec());
                    loo.push(v[m]);
                    coeffs.push(v[m + 1..].to_vec());
                }
                t => return Err(err(ln, format!("unknown record `{t}`"))),
            }
        }
        if ranges.len() != dim || indices.len() != terms || xs.len() != n {
            return Err(err(0, "record counts do not match the header".into()));
        }
        let basis = Arc::new(PcBasis::from_indices(GermKind::LegendreUniform, dim, indices)?);
        Self::from_parts(basis, ranges, xs, coeffs, loo, f64::NAN)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text, &path.display().to_string())
    }
}

/// Surrogate value at location `i`; the flag marks extrapolation.
pub fn surrogate_eval(model: &SurrogateModel, i: usize, lambda: &[f64]) -> Result<(f64, bool)> {
    model.eval_at(i, lambda)
}

impl ForwardModel for SurrogateModel {
    fn n_params(&self) -> usize {
        self.ranges.len()
    }

    fn n_conditions(&self) -> usize {
        self.xs.first().map_or(0, Vec::len)
    }

    fn eval(&self, x: &[f64], lambda: &[f64]) -> Result<f64> {
        let i = self
            .location_index(x)
            .ok_or_else(|| Error::InvalidArgument(format!("surrogate has no location x={x:?}")))?;
        let (v, outside) = self.eval_at(i, lambda)?;
        if outside && !self.warned.swap(true, Ordering::Relaxed) {
            log::warn!("surrogate evaluated outside its training ranges at lambda={lambda:?}");
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nisp::FnModel;

    fn quadratic() -> FnModel<impl Fn(&[f64], &[f64]) -> f64 + Sync> {
        FnModel::new(2, 1, |x: &[f64], l: &[f64]| {
            1.0 + x[0] * l[0] - 2.0 * l[1] * l[1] + 0.5 * l[0] * l[1] * x[0]
        })
    }

    #[test]
    fn constant_model() {
        let model = FnModel::new(1, 1, |_: &[f64], _: &[f64]| 4.5);
        let t = TrainingSet::sample(&model, &[vec![0.0]], &[(0.0, 2.0)], 20, 1).unwrap();
        let s = build_surrogate(&t, 2, &[(0.0, 2.0)]).unwrap();
        assert!((s.coeffs(0)[0] - 4.5).abs() < 1e-12);
        assert!(s.coeffs(0)[1..].iter().all(|c| c.abs() < 1e-12));
        assert_eq!(s.loo_errors()[0], 0.0);
        assert!((s.eval_at(0, &[1.7]).unwrap().0 - 4.5).abs() < 1e-12);
    }

    #[test]
    fn exact_for_quadratic() {
        let ranges = [(-1.0, 2.0), (0.5, 1.5)];
        let xs = vec![vec![0.0], vec![1.0], vec![2.5]];
        let t = TrainingSet::sample(&quadratic(), &xs, &ranges, 50, 7).unwrap();
        let s = build_surrogate(&t, 2, &ranges).unwrap();
        let held = TrainingSet::sample(&quadratic(), &xs, &ranges, 100, 8).unwrap();
        for (i, vals) in held.values.iter().enumerate() {
            for (l, v) in held.lambdas.iter().zip(vals) {
                let (got, out) = s.eval_at(i, l).unwrap();
                assert!(!out);
                assert!((got - v).abs() <= 1e-8 * v.abs().max(1.0));
            }
        }
    }

    #[test]
    fn linear_surrogate_at_midpoint() {
        let model = FnModel::new(1, 1, |_: &[f64], l: &[f64]| 3.0 - 2.0 * l[0]);
        let t = TrainingSet::sample(&model, &[vec![0.0]], &[(1.0, 3.0)], 10, 2).unwrap();
        let s = build_surrogate(&t, 1, &[(1.0, 3.0)]).unwrap();
        assert!((s.eval_at(0, &[2.0]).unwrap().0 - s.coeffs(0)[0]).abs() < 1e-14);
        assert!(s.eval_at(0, &[4.0]).unwrap().1);
    }

    #[test]
    fn too_few_runs_is_ill_posed() {
        let t = TrainingSet::sample(&quadratic(), &[vec![0.0]], &[(0.0, 1.0), (0.0, 1.0)], 4, 1).unwrap();
        assert!(matches!(
            build_surrogate(&t, 2, &[(0.0, 1.0), (0.0, 1.0)]),
            Err(Error::IllPosedDesign { .. })
        ));
        let mut t = TrainingSet::sample(&quadratic(), &[vec![0.0]], &[(0.0, 1.0), (0.0, 1.0)], 30, 1).unwrap();
        for l in &mut t.lambdas {
            l[1] = 0.5;
        }
        assert!(matches!(
            build_surrogate(&t, 2, &[(0.0, 1.0), (0.0, 1.0)]),
            Err(Error::IllPosedDesign { .. })
        ));
    }

    #[test]
    fn text_and_csv_round_trip() {
        let ranges = [(-1.0, 2.0), (0.5, 1.5)];
        let xs = vec![vec![0.25], vec![1.0]];
        let t = TrainingSet::sample(&quadratic(), &xs, &ranges, 30, 3).unwrap();
        let back = TrainingSet::parse_csv(&t.to_csv_string(), "t").unwrap();
        assert_eq!(back, t);
        let s = build_surrogate(&t, 3, &ranges).unwrap();
        let s2 = SurrogateModel::from_text(&s.to_text(), "s").unwrap();
        assert_eq!(s, s2);
        assert_eq!(s2.eval(&[1.0], &[0.3, 0.9]).unwrap(), s.eval(&[1.0], &[0.3, 0.9]).unwrap());
        assert!(s2.eval(&[7.0], &[0.3, 0.9]).is_err());
    }
}
