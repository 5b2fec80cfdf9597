//! Built-in synthetic truth/fit model pairs and their data generators.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nisp::ForwardModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BuiltinModel {
    /// `f = l2 exp(l1 x) - 2` against `g = tanh 3(x - 0.3)` on `[0, 1]`.
    Demo1,
    /// `f = exp(-(l1 + l2 x))` against `g = exp(-x/2) + exp(-2x)` on `[0, 5]`.
    Demo2,
    /// `f = exp(-(l1 + l2 x + l3 x^2))`, same truth as `Demo2`.
    Demo2q,
    Demo3Linear,
    Demo3Quadratic,
    Demo3Cubic,
    /// Polynomial basis plus the `(x + 1)^3.5` term of the truth.
    Demo3True,
}

pub const ALL_MODELS: [BuiltinModel; 7] = [
    BuiltinModel::Demo1,
    BuiltinModel::Demo2,
    BuiltinModel::Demo2q,
    BuiltinModel::Demo3Linear,
    BuiltinModel::Demo3Quadratic,
    BuiltinModel::Demo3Cubic,
    BuiltinModel::Demo3True,
];

impl BuiltinModel {
    pub fn id(self) -> &'static str {
        match self {
            BuiltinModel::Demo1 => "demo1",
            BuiltinModel::Demo2 => "demo2",
            BuiltinModel::Demo2q => "demo2q",
            BuiltinModel::Demo3Linear => "demo3-linear",
            BuiltinModel::Demo3Quadratic => "demo3-quadratic",
            BuiltinModel::Demo3Cubic => "demo3-cubic",
            BuiltinModel::Demo3True => "demo3-true",
        }
    }

    pub fn family(self) -> Family {
        match self {
            BuiltinModel::Demo1 => Family::Demo1,
            BuiltinModel::Demo2 | BuiltinModel::Demo2q => Family::Demo2,
            _ => Family::Demo3,
        }
    }

    pub fn dim(self) -> usize {
        match self {
            BuiltinModel::Demo1 | BuiltinModel::Demo2 | BuiltinModel::Demo3Linear => 2,
            BuiltinModel::Demo2q | BuiltinModel::Demo3Quadratic => 3,
            BuiltinModel::Demo3Cubic | BuiltinModel::Demo3True => 4,
        }
    }

    pub fn truth(self, x: f64) -> f64 {
        self.family().truth(x)
    }

    pub fn fit(self, x: f64, l: &[f64]) -> f64 {
        match self {
            BuiltinModel::Demo1 => l[1] * (l[0] * x).exp() - 2.0,
            BuiltinModel::Demo2 => (-(l[0] + l[1] * x)).exp(),
            BuiltinModel::Demo2q => (-(l[0] + l[1] * x + l[2] * x * x)).exp(),
            BuiltinModel::Demo3Linear => l[0] + l[1] * x,
            BuiltinModel::Demo3Quadratic => l[0] + x * (l[1] + x * l[2]),
            BuiltinModel::Demo3Cubic => l[0] + x * (l[1] + x * (l[2] + x * l[3])),
            BuiltinModel::Demo3True => l[0] + x * (l[1] + x * l[2]) + l[3] * (x + 1.0).powf(3.5),
        }
    }

    /// Generous prior box for the nominal parameters.
    pub fn default_bounds(self) -> Vec<(f64, f64)> {
        match self {
            BuiltinModel::Demo1 => vec![(-5.0, 5.0), (-10.0, 10.0)],
            BuiltinModel::Demo2 | BuiltinModel::Demo2q => vec![(-5.0, 5.0); self.dim()],
            _ => vec![(-50.0, 50.0); self.dim()],
        }
    }

    /// A reasonable starting point for optimization.
    pub fn default_start(self) -> Vec<f64> {
        match self {
            BuiltinModel::Demo1 => vec![0.5, 1.0],
            BuiltinModel::Demo2 | BuiltinModel::Demo2q => {
                let mut v = vec![0.0; self.dim()];
                v[0] = -0.5;
                v[1] = 0.5;
                v
            }
            _ => {
                let mut v = vec![0.0; self.dim()];
                v[0] = 5.0;
                v
            }
        }
    }
}

impl fmt::Display for BuiltinModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for BuiltinModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ALL_MODELS
            .iter()
            .copied()
            .find(|m| m.id() == s)
            .ok_or_else(|| Error::UnknownModel(s.to_string()))
    }
}

impl TryFrom<String> for BuiltinModel {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<BuiltinModel> for String {
    fn from(m: BuiltinModel) -> String {
        m.id().to_string()
    }
}

impl ForwardModel for BuiltinModel {
    fn n_params(&self) -> usize {
        self.dim()
    }

    fn n_conditions(&self) -> usize {
        1
    }

    fn eval(&self, x: &[f64], lambda: &[f64]) -> Result<f64> {
        let v = self.fit(x[0], lambda);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::InvalidArgument(format!("{self} is not finite at x={}, lambda={lambda:?}", x[0])))
        }
    }
}

/// Truth function and design conventions shared by related fit models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Demo1,
    Demo2,
    Demo3,
}

impl Family {
    pub fn truth(self, x: f64) -> f64 {
        match self {
            Family::Demo1 => (3.0 * (x - 0.3)).tanh(),
            Family::Demo2 => (-0.5 * x).exp() + (-2.0 * x).exp(),
            Family::Demo3 => 6.0 + x * x - 0.5 * (x + 1.0).powf(3.5),
        }
    }

    pub fn domain(self) -> (f64, f64) {
        match self {
            Family::Demo1 => (0.0, 1.0),
            Family::Demo2 => (0.0, 5.0),
            Family::Demo3 => (-1.0, 1.0),
        }
    }

    pub fn default_sigma(self) -> f64 {
        match self {
            Family::Demo1 => 0.1,
            Family::Demo2 => 0.0,
            Family::Demo3 => 0.5,
        }
    }

    pub fn default_n(self) -> usize {
        match self {
            Family::Demo1 => 50,
            Family::Demo2 => 10,
            Family::Demo3 => 100,
        }
    }

    /// `n` evenly spaced points across the domain, for prediction grids.
    pub fn grid(self, n: usize) -> Vec<f64> {
        let (a, b) = self.domain();
        linspace(a, b, n)
    }
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (a + b)],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Synthetic observations for a demo. `sigma = None` uses the demo default;
/// the second demo is always noiseless and equidistant.
pub fn generate_data(model: BuiltinModel, n: usize, sigma: Option<f64>, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let fam = model.family();
    let sigma = match (fam, sigma) {
        (Family::Demo2, Some(s)) if s != 0.0 => {
            log::warn!("{model} data are noiseless; ignoring sigma = {s}");
            0.0
        }
        (Family::Demo2, _) => 0.0,
        (_, Some(s)) => s,
        (_, None) => fam.default_sigma(),
    };
    if !(sigma >= 0.0) {
        return Err(Error::config("data.sigma", "must be non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b) = fam.domain();
    let xs: Vec<f64> = match fam {
        Family::Demo2 => linspace(a, b, n),
        _ => {
            let u = Uniform::new_inclusive(a, b).expect("valid domain");
            (0..n).map(|_| u.sample(&mut rng)).collect()
        }
    };
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let ys = xs
        .iter()
        .map(|&x| {
            let g = fam.truth(x);
            if sigma > 0.0 {
                g + sigma * noise.sample(&mut rng)
            } else {
                g
            }
        })
        .collect();
    Dataset::from_scalar(&xs, ys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;

    #[test]
    fn ids_round_trip() {
        for m in ALL_MODELS {
            assert_eq!(m.id().parse::<BuiltinModel>().unwrap(), m);
        }
        assert!(matches!("demo9".parse::<BuiltinModel>(), Err(Error::UnknownModel(_))));
    }

    #[test]
    fn demo2_noiseless_equidistant() {
        let d = generate_data(BuiltinModel::Demo2, 10, Some(0.3), 1).unwrap();
        assert_eq!(d.xs[0][0], 0.0);
        assert_eq!(d.xs[9][0], 5.0);
        for (x, y) in d.xs.iter().zip(&d.ys) {
            assert_eq!(*y, Family::Demo2.truth(x[0]));
        }
    }

    #[test]
    fn demo3_noise_level() {
        let d = generate_data(BuiltinModel::Demo3Quadratic, 1000, Some(0.5), 3).unwrap();
        let r: Vec<f64> = d.xs.iter().zip(&d.ys).map(|(x, y)| y - Family::Demo3.truth(x[0])).collect();
        let sd = stats::variance_unbiased(&r).sqrt();
        assert!((0.35..=0.65).contains(&sd), "{sd}");
        assert!(d.xs.iter().all(|x| (-1.0..=1.0).contains(&x[0])));
    }

    #[test]
    fn zero_noise_is_exact_and_seeded() {
        for m in ALL_MODELS {
            let d = generate_data(m, 20, Some(0.0), 5).unwrap();
            for (x, y) in d.xs.iter().zip(&d.ys) {
                assert_eq!(*y, m.truth(x[0]));
            }
            assert_eq!(d, generate_data(m, 20, Some(0.0), 5).unwrap());
        }
    }

    #[test]
    fn true_order_model_contains_truth() {
        let l = [6.0, 0.0, 1.0, -0.5];
        for x in linspace(-1.0, 1.0, 11) {
            assert!((BuiltinModel::Demo3True.fit(x, &l) - Family::Demo3.truth(x)).abs() < 1e-12);
        }
    }
}
