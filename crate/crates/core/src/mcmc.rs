//! Adaptive Metropolis sampling and MAP tracking.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::data::write_atomic;
use crate::embed::{AugmentedParams, EmbeddingSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcConfig {
    pub steps: usize,
    /// Discarded leading steps; defaults to 10% of `steps`.
    #[serde(default)]
    pub burn_in: Option<usize>,
    #[serde(default = "default_thin")]
    pub thin: usize,
    #[serde(default = "default_adapt_start")]
    pub adapt_start: usize,
    #[serde(default = "default_adapt_interval")]
    pub adapt_interval: usize,
    #[serde(default = "default_nugget")]
    pub cov_nugget: f64,
    /// Per-coordinate proposal standard deviations used before adaptation.
    #[serde(default)]
    pub initial_scales: Option<Vec<f64>>,
    /// Full initial proposal covariance; takes precedence over the scales.
    #[serde(skip)]
    pub initial_cov: Option<DMatrix<f64>>,
    #[serde(default)]
    pub seed: u64,
}

fn default_thin() -> usize {
    10
}
fn default_adapt_start() -> usize {
    1000
}
fn default_adapt_interval() -> usize {
    100
}
fn default_nugget() -> f64 {
    1e-8
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            steps: 20_000,
            burn_in: None,
            thin: default_thin(),
            adapt_start: default_adapt_start(),
            adapt_interval: default_adapt_interval(),
            cov_nugget: default_nugget(),
            initial_scales: None,
            initial_cov: None,
            seed: 0,
        }
    }
}

impl McmcConfig {
    pub fn with_steps(steps: usize, seed: u64) -> Self {
        McmcConfig {
            steps,
            seed,
            ..Default::default()
        }
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.steps / 10)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("mcmc.steps", "must be positive"));
        }
        if self.thin == 0 {
            return Err(Error::config("mcmc.thin", "must be positive"));
        }
        if self.adapt_interval == 0 {
            return Err(Error::config("mcmc.adapt_interval", "must be positive"));
        }
        if self.burn_in() >= self.steps {
            return Err(Error::config("mcmc.burn_in", "must be smaller than the number of steps"));
        }
        if !(self.cov_nugget >= 0.0) {
            return Err(Error::config("mcmc.cov_nugget", "must be non-negative"));
        }
        if let Some(s) = &self.initial_scales {
            if s.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::config("mcmc.initial_scales", "must be positive"));
            }
        }
        Ok(())
    }
}

/// Retained chain states plus the best state seen anywhere in the run.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub samples: Vec<Vec<f64>>,
    pub logposts: Vec<f64>,
    /// Step number of every retained sample (step 0 is the initial point).
    pub steps: Vec<usize>,
    pub map_point: Vec<f64>,
    pub map_logpost: f64,
    pub acceptance_rate: f64,
    pub seed: u64,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.map_point.len()
    }

    /// `count` samples spaced evenly through the chain (all if fewer).
    pub fn subsample(&self, count: usize) -> Vec<&[f64]> {
        let n = self.samples.len();
        if count == 0 || count >= n {
            return self.samples.iter().map(Vec::as_slice).collect();
        }
        (0..count)
            .map(|i| self.samples[i * n / count].as_slice())
            .collect()
    }

    pub fn to_csv_string(&self, names: &[String]) -> String {
        let mut s = String::from("step,logpost");
        for n in names {
            s.push(',');
            s.push_str(n);
        }
        s.push('\n');
        for ((x, lp), step) in self.samples.iter().zip(&self.logposts).zip(&self.steps) {
            s.push_str(&format!("{step},{lp:?}"));
            for v in x {
                s.push_str(&format!(",{v:?}"));
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path, names: &[String]) -> Result<()> {
        write_atomic(path, self.to_csv_string(names).as_bytes())
    }

    /// Reads a chain file; the MAP is taken as the best stored sample.
    pub fn read_csv(path: &Path) -> Result<(Chain, Vec<String>)> {
        let origin = path.display().to_string();
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let headers = rdr.headers()?.clone();
        if headers.len() < 3 || &headers[0] != "step" || &headers[1] != "logpost" {
            return Err(Error::Parse {
                path: origin,
                line: 1,
                message: "expected header `step,logpost,<parameters>`".into(),
            });
        }
        let names: Vec<String> = headers.iter().skip(2).map(String::from).collect();
        let mut chain = Chain {
            samples: Vec::new(),
            logposts: Vec::new(),
            steps: Vec::new(),
            map_point: Vec::new(),
            map_logpost: f64::NEG_INFINITY,
            acceptance_rate: f64::NAN,
            seed: 0,
        };
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let bad = |m: String| Error::Parse {
                path: origin.clone(),
                line,
                message: m,
            };
            let step = rec[0].parse::<usize>().map_err(|e| bad(format!("step: {e}")))?;
            let lp = rec[1].parse::<f64>().map_err(|e| bad(format!("logpost: {e}")))?;
            let x = rec
                .iter()
                .skip(2)
                .map(|v| v.parse::<f64>().map_err(|e| bad(format!("`{v}`: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            if lp > chain.map_logpost || chain.map_point.is_empty() {
                chain.map_logpost = lp;
                chain.map_point = x.clone();
            }
            chain.steps.push(step);
            chain.logposts.push(lp);
            chain.samples.push(x);
        }
        if chain.samples.is_empty() {
            return Err(Error::EmptyChain);
        }
        Ok((chain, names))
    }
}

/// MAP state of a chain in the structured layout.
pub fn map_estimate(chain: &Chain, spec: &EmbeddingSpec, infer_sigma: bool) -> Result<AugmentedParams> {
    if chain.map_point.is_empty() {
        return Err(Error::EmptyChain);
    }
    AugmentedParams::from_flat(spec, infer_sigma, &chain.map_point)
}

/// Running mean and scatter of every visited state.
struct Welford {
    n: usize,
    mean: DVector<f64>,
    scatter: DMatrix<f64>,
}

impl Welford {
    fn new(p: usize) -> Self {
        Welford {
            n: 0,
            mean: DVector::zeros(p),
            scatter: DMatrix::zeros(p, p),
        }
    }

    fn push(&mut self, x: &DVector<f64>) {
        self.n += 1;
        let d = x - &self.mean;
        self.mean += &d / self.n as f64;
        let d2 = x - &self.mean;
        self.scatter.ger(1.0, &d, &d2, 1.0);
    }

    fn covariance(&self) -> Option<DMatrix<f64>> {
        (self.n > 1).then(|| {
            let c = &self.scatter / (self.n - 1) as f64;
            (&c + c.transpose()) * 0.5
        })
    }
}

fn initial_factor(init: &[f64], config: &McmcConfig) -> Result<DMatrix<f64>> {
    let p = init.len();
    if let Some(c) = &config.initial_cov {
        if c.nrows() != p || c.ncols() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: c.nrows(),
            });
        }
        return c
            .clone()
            .cholesky()
            .map(|ch| ch.l())
            .ok_or(Error::NotPositiveDefinite { singular: false });
    }
    let scales: Vec<f64> = match &config.initial_scales {
        Some(s) if s.len() != p => {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: s.len(),
            })
        }
        Some(s) => s.clone(),
        None => init.iter().map(|x| 0.1 * x.abs().max(0.1)).collect(),
    };
    Ok(DMatrix::from_diagonal(&DVector::from_vec(scales)))
}

/// Random-walk Metropolis with Haario-style covariance adaptation.
///
/// `logpost` may return `-inf` (or NaN) for states outside the support;
/// those proposals are always rejected. Errors from `logpost` abort the run.
pub fn amcmc_run<F>(logpost: F, init: &[f64], config: &McmcConfig) -> Result<Chain>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    config.validate()?;
    let p = init.len();
    if p == 0 {
        return Err(Error::InvalidArgument("empty parameter vector".into()));
    }
    let mut current = DVector::from_column_slice(init);
    let mut current_lp = logpost(init)?;
    if !current_lp.is_finite() {
        return Err(Error::InfeasibleStart(current_lp));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut factor = initial_factor(init, config)?;
    let mut stats = Welford::new(p);
    stats.push(&current);

    let burn_in = config.burn_in();
    let scale = 2.4 * 2.4 / p as f64;
    let mut map_point = init.to_vec();
    let mut map_logpost = current_lp;
    let mut samples = Vec::new();
    let mut logposts = Vec::new();
    let mut steps = Vec::new();
    let mut accepted = 0usize;
    let mut counted = 0usize;
    let count_from = if config.steps > config.adapt_start { config.adapt_start } else { 0 };
    let mut z = DVector::<f64>::zeros(p);

    if burn_in == 0 {
        samples.push(init.to_vec());
        logposts.push(current_lp);
        steps.push(0);
    }

    for step in 1..config.steps {
        if step >= config.adapt_start && (step - config.adapt_start) % config.adapt_interval == 0 {
            if let Some(mut c) = stats.covariance() {
                c *= scale;
                for i in 0..p {
                    c[(i, i)] += config.cov_nugget;
                }
                match c.cholesky() {
                    Some(ch) => factor = ch.l(),
                    None => log::debug!("step {step}: adapted covariance not positive definite, keeping previous"),
                }
            }
        }
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        let proposal = &current + &factor * &z;
        let lp = logpost(proposal.as_slice())?;
        let lp = if lp.is_nan() { f64::NEG_INFINITY } else { lp };
        if lp > map_logpost {
            map_logpost = lp;
            map_point.copy_from_slice(proposal.as_slice());
        }
        let u: f64 = rng.random();
        let accept = lp > f64::NEG_INFINITY && u.ln() < lp - current_lp;
        if accept {
            current = proposal;
            current_lp = lp;
        }
        if step >= count_from {
            counted += 1;
            accepted += usize::from(accept);
        }
        stats.push(&current);
        if step >= burn_in && (step - burn_in) % config.thin == 0 {
            samples.push(current.as_slice().to_vec());
            logposts.push(current_lp);
            steps.push(step);
        }
    }

    Ok(Chain {
        samples,
        logposts,
        steps,
        map_point,
        map_logpost,
        acceptance_rate: if counted == 0 { 0.0 } else { accepted as f64 / counted as f64 },
        seed: config.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;

    fn std_normal(x: &[f64]) -> Result<f64> {
        Ok(-0.5 * x.iter().map(|v| v * v).sum::<f64>())
    }

    #[test]
    fn normal_2d_moments() {
        let cfg = McmcConfig {
            thin: 1,
            ..McmcConfig::with_steps(100_000, 11)
        };
        let chain = amcmc_run(std_normal, &[0.5, -0.5], &cfg).unwrap();
        for d in 0..2 {
            let col: Vec<f64> = chain.samples.iter().map(|s| s[d]).collect();
            assert!(stats::mean(&col).abs() < 0.05, "mean {}", stats::mean(&col));
            assert!((stats::variance_unbiased(&col) - 1.0).abs() < 0.1);
        }
        assert!((0.1..=0.5).contains(&chain.acceptance_rate), "{}", chain.acceptance_rate);
    }

    #[test]
    fn hard_wall_is_never_crossed() {
        let lp = |x: &[f64]| Ok(if x[0] < 0.0 { f64::NEG_INFINITY } else { -0.5 * x[0] * x[0] });
        let cfg = McmcConfig {
            thin: 1,
            ..McmcConfig::with_steps(20_000, 3)
        };
        let chain = amcmc_run(lp, &[1.0], &cfg).unwrap();
        assert!(chain.samples.iter().all(|s| s[0] >= 0.0));
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = McmcConfig::with_steps(5_000, 42);
        let a = amcmc_run(std_normal, &[1.0, 1.0], &cfg).unwrap();
        let b = amcmc_run(std_normal, &[1.0, 1.0], &cfg).unwrap();
        assert_eq!(a, b);
        let c = amcmc_run(std_normal, &[1.0, 1.0], &McmcConfig::with_steps(5_000, 43)).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn infeasible_start() {
        let lp = |_: &[f64]| Ok(f64::NEG_INFINITY);
        assert!(matches!(
            amcmc_run(lp, &[0.0], &McmcConfig::with_steps(10, 0)),
            Err(Error::InfeasibleStart(_))
        ));
    }

    #[test]
    fn single_step_chain_returns_initial_point() {
        let cfg = McmcConfig {
            burn_in: Some(0),
            ..McmcConfig::with_steps(1, 0)
        };
        let chain = amcmc_run(std_normal, &[0.3, 0.2], &cfg).unwrap();
        assert_eq!(chain.map_point, vec![0.3, 0.2]);
        assert_eq!(chain.samples, vec![vec![0.3, 0.2]]);
    }

    #[test]
    fn map_near_optimum_and_dominates_samples() {
        let lp = |x: &[f64]| Ok(-x.iter().map(|v| v * v).sum::<f64>());
        let chain = amcmc_run(lp, &[2.0, -2.0, 1.0], &McmcConfig::with_steps(50_000, 5)).unwrap();
        assert!(chain.map_point.iter().all(|v| v.abs() < 0.1), "{:?}", chain.map_point);
        assert!(chain.logposts.iter().all(|&l| l <= chain.map_logpost));
    }

    #[test]
    fn thinning_and_burn_in_leave_map_alone() {
        let base = McmcConfig::with_steps(4_000, 9);
        let a = amcmc_run(std_normal, &[1.0], &base).unwrap();
        let b = amcmc_run(
            std_normal,
            &[1.0],
            &McmcConfig {
                thin: 1,
                burn_in: Some(0),
                ..base
            },
        )
        .unwrap();
        assert_eq!(a.map_point, b.map_point);
        assert_eq!(a.map_logpost, b.map_logpost);
    }

    #[test]
    fn csv_layout() {
        let cfg = McmcConfig {
            burn_in: Some(0),
            thin: 1,
            ..McmcConfig::with_steps(3, 1)
        };
        let chain = amcmc_run(std_normal, &[0.0], &cfg).unwrap();
        let csv = chain.to_csv_string(&["lambda_0".into()]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "step,logpost,lambda_0");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0,"));
    }
}
