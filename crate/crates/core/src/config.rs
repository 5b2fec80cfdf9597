//! TOML run configuration.
//!
//! ```toml
//! output_dir = "out"
//!
//! [data]
//! demo = "demo1"          # or: csv = "data.csv"
//! n = 50
//! sigma = 0.1
//! seed = 1
//!
//! [model]
//! builtin = "demo1"       # or: surrogate = "surrogate.txt"
//!
//! [embedding]
//! variant = "triangular-mvn"
//! embedded = [0, 1]       # zero-based; default: every parameter
//!
//! [likelihood]
//! kind = "abc"
//! epsilon = 1e-4
//! gamma = 1.0
//! sigma = 0.1             # or "inferred"
//!
//! [nisp]
//! order = 3
//!
//! [mcmc]
//! steps = 20000
//! seed = 7
//!
//! [predict]
//! grid = 101
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::demos::BuiltinModel;
use crate::embed::{EmbeddingSpec, EmbeddingVariant};
use crate::error::{Error, Result};
use crate::likelihood::{BandwidthRule, LikelihoodKind, LikelihoodSpec, SigmaMode};
use crate::mcmc::McmcConfig;
use crate::nisp::NispConfig;
use crate::predict::{VarianceEstimator, DEFAULT_SUBSAMPLE};
use crate::prior::PriorSpec;

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "MERR_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    pub likelihood: LikelihoodConfig,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub nisp: NispSection,
    #[serde(default)]
    pub mcmc: McmcSection,
    #[serde(default)]
    pub predict: PredictConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default)]
    pub demo: Option<String>,
    #[serde(default)]
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub builtin: Option<String>,
    #[serde(default)]
    pub surrogate: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    #[serde(default = "default_variant")]
    pub variant: String,
    /// Total order for the `general-order` variant.
    #[serde(default)]
    pub order: Option<usize>,
    #[serde(default)]
    pub embedded: Option<Vec<usize>>,
}

fn default_variant() -> String {
    "triangular-mvn".into()
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            variant: default_variant(),
            order: None,
            embedded: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaSetting {
    Fixed(f64),
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LikelihoodConfig {
    pub kind: String,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub samples: Option<usize>,
    /// `silverman`, `scott`, or a fixed width.
    #[serde(default)]
    pub bandwidth: Option<SigmaSetting>,
    #[serde(default)]
    pub nugget: Option<f64>,
    pub sigma: SigmaSetting,
    /// Seed of the fixed sample bank used by the sampling likelihoods.
    #[serde(default)]
    pub bank_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    #[serde(default)]
    pub lambda_bounds: Option<Vec<(f64, f64)>>,
    #[serde(default)]
    pub enforce_range: Option<bool>,
    #[serde(default)]
    pub positive_diagonal: Option<bool>,
    #[serde(default)]
    pub alpha_max: Option<f64>,
    #[serde(default)]
    pub log_sigma_bounds: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NispSection {
    #[serde(default = "default_nisp_order")]
    pub order: usize,
    #[serde(default)]
    pub pts_per_dim: Option<usize>,
}

fn default_nisp_order() -> usize {
    1
}

impl Default for NispSection {
    fn default() -> Self {
        NispSection {
            order: default_nisp_order(),
            pts_per_dim: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcSection {
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub burn_in: Option<usize>,
    #[serde(default)]
    pub thin: Option<usize>,
    #[serde(default)]
    pub adapt_start: Option<usize>,
    #[serde(default)]
    pub adapt_interval: Option<usize>,
    #[serde(default)]
    pub cov_nugget: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Starting point in the flat layout; found by optimization when absent.
    #[serde(default)]
    pub init: Option<Vec<f64>>,
    /// Skip the optimization and curvature warm start.
    #[serde(default)]
    pub no_warm_start: bool,
}

fn default_steps() -> usize {
    20_000
}

impl Default for McmcSection {
    fn default() -> Self {
        McmcSection {
            steps: default_steps(),
            burn_in: None,
            thin: None,
            adapt_start: None,
            adapt_interval: None,
            cov_nugget: None,
            seed: 0,
            init: None,
            no_warm_start: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    /// Number of evenly spaced grid points over the demo domain.
    #[serde(default)]
    pub grid: Option<usize>,
    /// Explicit prediction locations; overrides `grid`.
    #[serde(default)]
    pub points: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_subsample")]
    pub subsample: usize,
    #[serde(default)]
    pub estimator: VarianceEstimator,
    /// `pushed-forward` or `posterior-predictive`.
    #[serde(default = "default_mode")]
    pub mode: String,
}

fn default_subsample() -> usize {
    DEFAULT_SUBSAMPLE
}

fn default_mode() -> String {
    "posterior-predictive".into()
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            grid: None,
            points: None,
            subsample: default_subsample(),
            estimator: VarianceEstimator::default(),
            mode: default_mode(),
        }
    }
}

/// Where observations come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Demo {
        model: BuiltinModel,
        n: usize,
        sigma: Option<f64>,
        seed: u64,
    },
    Csv(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSource {
    Builtin(BuiltinModel),
    Surrogate(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictMode {
    PushedForward,
    PosteriorPredictive,
}

/// Validated, typed view of a [`RunConfig`].
#[derive(Debug, Clone)]
pub struct Resolved {
    pub output_dir: PathBuf,
    pub data: DataSource,
    pub model: ModelSource,
    pub spec: EmbeddingSpec,
    pub likelihood: LikelihoodSpec,
    pub bank_seed: u64,
    pub prior: PriorSpec,
    pub nisp: NispConfig,
    pub mcmc: McmcConfig,
    pub init: Option<Vec<f64>>,
    pub warm_start: bool,
    pub grid: Option<Vec<Vec<f64>>>,
    pub grid_size: Option<usize>,
    pub subsample: usize,
    pub estimator: VarianceEstimator,
    pub mode: PredictMode,
}

impl RunConfig {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map_or(0, |s| text[..s.start.min(text.len())].lines().count().max(1));
            Error::Parse {
                path: origin.to_string(),
                line,
                message: e.message().to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text, &path.display().to_string())?;
        // relative file references resolve against the config's directory
        if let Some(dir) = path.parent() {
            let fix = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            };
            if let Some(p) = cfg.data.csv.as_mut() {
                fix(p);
            }
            if let Some(p) = cfg.model.surrogate.as_mut() {
                fix(p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Output directory after applying the environment override.
    pub fn effective_output_dir(&self) -> PathBuf {
        std::env::var_os(OUTPUT_DIR_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
            .unwrap_or_else(|| self.output_dir.clone())
    }

    /// Validates every section and builds the typed configuration.
    pub fn resolve(&self) -> Result<Resolved> {
        let model = match (&self.model.builtin, &self.model.surrogate) {
            (Some(id), None) => ModelSource::Builtin(
                id.parse()
                    .map_err(|_| Error::config("model.builtin", format!("unknown model id `{id}`")))?,
            ),
            (None, Some(p)) => {
                if !p.exists() {
                    return Err(Error::config("model.surrogate", format!("{} does not exist", p.display())));
                }
                ModelSource::Surrogate(p.clone())
            }
            _ => return Err(Error::config("model", "set exactly one of `builtin` or `surrogate`")),
        };

        let data = match (&self.data.demo, &self.data.csv) {
            (Some(id), None) => {
                let m: BuiltinModel = id
                    .parse()
                    .map_err(|_| Error::config("data.demo", format!("unknown demo id `{id}`")))?;
                let n = self.data.n.unwrap_or_else(|| m.family().default_n());
                if n == 0 {
                    return Err(Error::config("data.n", "must be at least 1"));
                }
                if let Some(s) = self.data.sigma {
                    if !(s >= 0.0) {
                        return Err(Error::config("data.sigma", "must be non-negative"));
                    }
                }
                DataSource::Demo {
                    model: m,
                    n,
                    sigma: self.data.sigma,
                    seed: self.data.seed,
                }
            }
            (None, Some(p)) => {
                if !p.exists() {
                    return Err(Error::config("data.csv", format!("{} does not exist", p.display())));
                }
                if self.data.n.is_some() || self.data.sigma.is_some() {
                    return Err(Error::config("data", "`n` and `sigma` only apply to demo data"));
                }
                DataSource::Csv(p.clone())
            }
            _ => return Err(Error::config("data", "set exactly one of `demo` or `csv`")),
        };

        let dim = match &model {
            ModelSource::Builtin(m) => Some(m.dim()),
            ModelSource::Surrogate(_) => None,
        };
        let bounds = match (&self.prior.lambda_bounds, &model) {
            (Some(b), _) => b.clone(),
            (None, ModelSource::Builtin(m)) => m.default_bounds(),
            (None, ModelSource::Surrogate(_)) => Vec::new(),
        };
        if let Some(d) = dim {
            if bounds.len() != d {
                return Err(Error::config(
                    "prior.lambda_bounds",
                    format!("expected {d} intervals, found {}", bounds.len()),
                ));
            }
        }
        let dim_lambda = dim.unwrap_or(bounds.len());

        let spec = if dim_lambda == 0 {
            // surrogate dimension is only known once the file is read
            EmbeddingSpec::classical(1)
        } else {
            self.embedding_spec(dim_lambda)?
        };

        let likelihood = self.likelihood_spec()?;
        let prior = PriorSpec {
            lambda_bounds: bounds,
            enforce_range: self.prior.enforce_range.unwrap_or(true),
            positive_diagonal: self.prior.positive_diagonal.unwrap_or(true),
            alpha_max: self.prior.alpha_max,
            log_sigma_bounds: self.prior.log_sigma_bounds.unwrap_or((-12.0, 3.0)),
        };
        if !prior.lambda_bounds.is_empty() || dim.is_some() {
            prior.validate()?;
        }

        let nisp = NispConfig {
            order: self.nisp.order,
            pts_per_dim: self.nisp.pts_per_dim,
        };
        if nisp.points() < nisp.order + 1 {
            return Err(Error::config("nisp.pts_per_dim", "must be at least order + 1"));
        }

        let defaults = McmcConfig::default();
        let mcmc = McmcConfig {
            steps: self.mcmc.steps,
            burn_in: self.mcmc.burn_in,
            thin: self.mcmc.thin.unwrap_or(defaults.thin),
            adapt_start: self.mcmc.adapt_start.unwrap_or(defaults.adapt_start),
            adapt_interval: self.mcmc.adapt_interval.unwrap_or(defaults.adapt_interval),
            cov_nugget: self.mcmc.cov_nugget.unwrap_or(defaults.cov_nugget),
            initial_scales: None,
            initial_cov: None,
            seed: self.mcmc.seed,
        };
        mcmc.validate()?;

        let mode = match self.predict.mode.as_str() {
            "pushed-forward" => PredictMode::PushedForward,
            "posterior-predictive" => PredictMode::PosteriorPredictive,
            other => {
                return Err(Error::config(
                    "predict.mode",
                    format!("expected `pushed-forward` or `posterior-predictive`, found `{other}`"),
                ))
            }
        };
        if self.predict.subsample == 0 {
            return Err(Error::config("predict.subsample", "must be positive"));
        }
        if self.predict.grid == Some(0) {
            return Err(Error::config("predict.grid", "must be positive"));
        }

        Ok(Resolved {
            output_dir: self.effective_output_dir(),
            data,
            model,
            spec,
            likelihood,
            bank_seed: self.likelihood.bank_seed,
            prior,
            nisp,
            mcmc,
            init: self.mcmc.init.clone(),
            warm_start: !self.mcmc.no_warm_start,
            grid: self.predict.points.clone(),
            grid_size: self.predict.grid,
            subsample: self.predict.subsample,
            estimator: self.predict.estimator,
            mode,
        })
    }

    pub fn embedding_spec(&self, dim_lambda: usize) -> Result<EmbeddingSpec> {
        let e = &self.embedding;
        let variant = match e.variant.as_str() {
            "classical" => EmbeddingVariant::Classical,
            "full-linear-mvn" => EmbeddingVariant::FullLinearMvn,
            "triangular-mvn" => EmbeddingVariant::TriangularMvn,
            "uniform-iid" => EmbeddingVariant::UniformIid,
            "general-order" => EmbeddingVariant::GeneralOrder(
                e.order
                    .ok_or_else(|| Error::config("embedding.order", "required for `general-order`"))?,
            ),
            other => {
                return Err(Error::config(
                    "embedding.variant",
                    format!(
                        "expected one of classical, full-linear-mvn, triangular-mvn, uniform-iid, general-order; found `{other}`"
                    ),
                ))
            }
        };
        let embedded = e.embedded.clone().unwrap_or_else(|| (0..dim_lambda).collect());
        EmbeddingSpec::new(variant, dim_lambda, embedded)
    }

    pub fn likelihood_spec(&self) -> Result<LikelihoodSpec> {
        let l = &self.likelihood;
        let need = |v: Option<f64>, field: &str| {
            v.ok_or_else(|| Error::config(format!("likelihood.{field}"), format!("required for `{}`", l.kind)))
        };
        let kind = match l.kind.as_str() {
            "classical" => LikelihoodKind::ClassicalGaussian,
            "independent-normal" => LikelihoodKind::IndependentNormal,
            "abc" => LikelihoodKind::Abc {
                epsilon: need(l.epsilon, "epsilon")?,
                gamma: l.gamma.unwrap_or(1.0),
            },
            "kde" => LikelihoodKind::IndependentComponentKde {
                samples: l.samples.unwrap_or(1000),
                bandwidth: match &l.bandwidth {
                    None => BandwidthRule::Silverman,
                    Some(SigmaSetting::Named(s)) if s == "silverman" => BandwidthRule::Silverman,
                    Some(SigmaSetting::Named(s)) if s == "scott" => BandwidthRule::Scott,
                    Some(SigmaSetting::Fixed(w)) => BandwidthRule::Fixed { width: *w },
                    Some(SigmaSetting::Named(s)) => {
                        return Err(Error::config("likelihood.bandwidth", format!("unknown rule `{s}`")))
                    }
                },
            },
            "mvn" => LikelihoodKind::MultivariateNormal {
                samples: l.samples.unwrap_or(1000),
                nugget: l.nugget,
            },
            other => {
                return Err(Error::config(
                    "likelihood.kind",
                    format!("expected one of classical, independent-normal, abc, kde, mvn; found `{other}`"),
                ))
            }
        };
        let sigma = match &l.sigma {
            SigmaSetting::Fixed(s) => SigmaMode::Fixed(*s),
            SigmaSetting::Named(s) if s == "inferred" => SigmaMode::Inferred,
            SigmaSetting::Named(s) => {
                return Err(Error::config("likelihood.sigma", format!("expected a number or \"inferred\", found `{s}`")))
            }
        };
        let spec = LikelihoodSpec { kind, sigma };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
output_dir = "o"
[data]
demo = "demo1"
n = 20
seed = 3
[model]
builtin = "demo1"
[likelihood]
kind = "abc"
epsilon = 1e-4
sigma = 0.1
"#;

    #[test]
    fn parses_and_resolves() {
        let cfg = RunConfig::from_toml_str(BASIC, "t").unwrap();
        let r = cfg.resolve().unwrap();
        assert_eq!(r.spec.alpha_len(), 3);
        assert!(matches!(r.likelihood.kind, LikelihoodKind::Abc { gamma, .. } if gamma == 1.0));
        assert_eq!(r.prior.lambda_bounds.len(), 2);
        let again = RunConfig::from_toml_str(&cfg.to_toml_string(), "t").unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_keys_are_named() {
        let text = BASIC.replace("seed = 3", "seed = 3\nbogus = 1");
        match RunConfig::from_toml_str(&text, "t") {
            Err(Error::Parse { message, .. }) => assert!(message.contains("bogus"), "{message}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_values_name_the_field() {
        let field_of = |text: String| match RunConfig::from_toml_str(&text, "t").unwrap().resolve() {
            Err(Error::InvalidConfig { field, .. }) => field,
            other => panic!("{other:?}"),
        };
        assert_eq!(field_of(BASIC.replace("epsilon = 1e-4", "epsilon = -1.0")), "likelihood.epsilon");
        assert_eq!(field_of(BASIC.replace("builtin = \"demo1\"", "builtin = \"demo7\"")), "model.builtin");
        assert_eq!(field_of(BASIC.replace("n = 20", "n = 0")), "data.n");
        assert_eq!(
            field_of(format!("{BASIC}[embedding]\nvariant = \"wishart\"\n")),
            "embedding.variant"
        );
        assert_eq!(
            field_of(format!("{BASIC}[prior]\nlambda_bounds = [[0.0, 1.0]]\n")),
            "prior.lambda_bounds"
        );
        assert_eq!(field_of(format!("{BASIC}[mcmc]\nthin = 0\n")), "mcmc.thin");
    }
}
