//! End-to-end calibration: optional surrogate, inference, prediction.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{DataSource, ModelSource, PredictMode, Resolved, RunConfig};
use crate::data::{load_csv_dataset, write_atomic, Dataset};
use crate::demos::{generate_data, linspace, BuiltinModel};
use crate::embed::{AugmentedParams, EmbeddingSpec};
use crate::error::{Error, Result};
use crate::likelihood::{LikelihoodKind, LikelihoodSpec, SampleBank, SigmaMode};
use crate::mcmc::{amcmc_run, Chain, McmcConfig};
use crate::nisp::{ForwardModel, NispConfig, NispPlan};
use crate::optimize::{fd_hessian, NelderMead};
use crate::predict::{posterior_predictive, pushed_forward, write_predictions, PredictionMoments, PushForward};
use crate::prior::PriorSpec;
use crate::stats;
use crate::surrogate::SurrogateModel;

/// A forward model resolved from configuration.
#[derive(Debug, Clone)]
pub enum LoadedModel {
    Builtin(BuiltinModel),
    Surrogate(SurrogateModel),
}

impl LoadedModel {
    pub fn name(&self) -> String {
        match self {
            LoadedModel::Builtin(m) => m.id().to_string(),
            LoadedModel::Surrogate(_) => "surrogate".into(),
        }
    }
}

impl ForwardModel for LoadedModel {
    fn n_params(&self) -> usize {
        match self {
            LoadedModel::Builtin(m) => m.n_params(),
            LoadedModel::Surrogate(s) => s.n_params(),
        }
    }

    fn n_conditions(&self) -> usize {
        match self {
            LoadedModel::Builtin(m) => m.n_conditions(),
            LoadedModel::Surrogate(s) => s.n_conditions(),
        }
    }

    fn eval(&self, x: &[f64], lambda: &[f64]) -> Result<f64> {
        match self {
            LoadedModel::Builtin(m) => m.eval(x, lambda),
            LoadedModel::Surrogate(s) => s.eval(x, lambda),
        }
    }
}

/// Log-posterior of the augmented parameters given the data.
pub struct Posterior<'a, M: ?Sized> {
    model: &'a M,
    data: &'a Dataset,
    spec: EmbeddingSpec,
    plan: NispPlan,
    likelihood: LikelihoodSpec,
    prior: PriorSpec,
    bank: Option<SampleBank>,
}

impl<'a, M: ForwardModel + ?Sized> Posterior<'a, M> {
    pub fn new(
        model: &'a M,
        data: &'a Dataset,
        spec: EmbeddingSpec,
        likelihood: LikelihoodSpec,
        prior: PriorSpec,
        nisp: NispConfig,
        bank_seed: u64,
    ) -> Result<Self> {
        likelihood.validate()?;
        prior.validate()?;
        if model.n_params() != spec.dim_lambda() {
            return Err(Error::DimensionMismatch {
                expected: spec.dim_lambda(),
                got: model.n_params(),
            });
        }
        if prior.lambda_bounds.len() != spec.dim_lambda() {
            return Err(Error::config(
                "prior.lambda_bounds",
                format!("expected {} intervals, found {}", spec.dim_lambda(), prior.lambda_bounds.len()),
            ));
        }
        if data.n_conditions() != model.n_conditions() {
            return Err(Error::DimensionMismatch {
                expected: model.n_conditions(),
                got: data.n_conditions(),
            });
        }
        let plan = NispPlan::new(&spec, nisp)?;
        let bank = match likelihood.sample_count() {
            Some(r) => Some(SampleBank::new(plan.basis(), data.len(), r, bank_seed)?),
            None => None,
        };
        Ok(Posterior {
            model,
            data,
            spec,
            plan,
            likelihood,
            prior,
            bank,
        })
    }

    pub fn spec(&self) -> &EmbeddingSpec {
        &self.spec
    }

    pub fn infer_sigma(&self) -> bool {
        self.likelihood.infers_sigma()
    }

    pub fn dim(&self) -> usize {
        self.spec.param_count(self.infer_sigma())
    }

    /// `-inf` outside the prior support and for states whose predictive
    /// distribution degenerates or whose model runs fail.
    pub fn log_posterior(&self, flat: &[f64]) -> Result<f64> {
        self.evaluate(flat, false)
    }

    /// Like [`Self::log_posterior`] but model failures are reported.
    pub fn log_posterior_strict(&self, flat: &[f64]) -> Result<f64> {
        self.evaluate(flat, true)
    }

    fn evaluate(&self, flat: &[f64], strict: bool) -> Result<f64> {
        let params = AugmentedParams::from_flat(&self.spec, self.infer_sigma(), flat)?;
        if self.prior.log_prior(&self.spec, &params) == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        let sigma = match self.likelihood.sigma {
            SigmaMode::Fixed(s) => s,
            SigmaMode::Inferred => params.sigma().unwrap_or(0.0),
        };
        let out = match self.plan.project(self.model, &self.data.xs, &params) {
            Ok(o) => o,
            Err(e @ Error::ModelEvaluation { .. }) if !strict => {
                log::trace!("rejecting state: {e}");
                return Ok(f64::NEG_INFINITY);
            }
            Err(e) => return Err(e),
        };
        match self.likelihood.log_likelihood(&out, sigma, self.data, self.bank.as_ref()) {
            Ok(l) if l.is_nan() => Ok(f64::NEG_INFINITY),
            Ok(l) => Ok(l),
            Err(Error::DegeneratePredictiveVariance { .. })
            | Err(Error::DegenerateMarginal { .. })
            | Err(Error::NotPositiveDefinite { .. })
                if !strict =>
            {
                Ok(f64::NEG_INFINITY)
            }
            Err(e) => Err(e),
        }
    }

    /// Least-squares fit of the nominal parameters inside the prior box.
    pub fn least_squares(&self, start: &[f64]) -> Vec<f64> {
        let bounds = &self.prior.lambda_bounds;
        let sse = |l: &[f64]| -> f64 {
            if l.iter().zip(bounds).any(|(v, (a, b))| v < a || v > b) {
                return f64::INFINITY;
            }
            let mut s = 0.0;
            for (x, y) in self.data.xs.iter().zip(&self.data.ys) {
                match self.model.eval(x, l) {
                    Ok(v) => s += (y - v).powi(2),
                    Err(_) => return f64::INFINITY,
                }
            }
            s
        };
        let steps: Vec<f64> = start
            .iter()
            .zip(bounds)
            .map(|(v, (a, b))| {
                let w = b - a;
                if w.is_finite() {
                    0.1 * w
                } else {
                    0.1 * v.abs().max(1.0)
                }
            })
            .collect();
        NelderMead::default().minimize(sse, start, &steps).x
    }

    /// A feasible starting point: least-squares `lambda`, embedding
    /// coefficients sized to the residual misfit, and the residual scale for
    /// an inferred noise level.
    pub fn initial_point(&self, lambda: &[f64]) -> Result<Vec<f64>> {
        let d = self.spec.dim_lambda();
        let resid: Vec<f64> = self
            .data
            .xs
            .iter()
            .zip(&self.data.ys)
            .map(|(x, y)| Ok(y - self.model.eval(x, lambda)?))
            .collect::<Result<_>>()?;
        let rms = (resid.iter().map(|r| r * r).sum::<f64>() / resid.len() as f64).sqrt();
        let m = self.spec.embedded().len().max(1) as f64;
        let mut alpha = vec![0.0; self.spec.alpha_len()];
        for (&pos, &j) in self.spec.diagonal_alpha_positions().iter().zip(self.spec.embedded()) {
            // RMS sensitivity of the outputs to lambda_j
            let h = 1e-6 * lambda[j].abs().max(1e-3);
            let mut up = lambda.to_vec();
            up[j] += h;
            let sens = self
                .data
                .xs
                .iter()
                .map(|x| Ok(((self.model.eval(x, &up)? - self.model.eval(x, lambda)?) / h).powi(2)))
                .collect::<Result<Vec<f64>>>()?;
            let s = stats::mean(&sens).sqrt().max(1e-8);
            let mut a = 0.5 * rms.max(1e-6) / (s * m.sqrt());
            let (lo, hi) = self.prior.lambda_bounds[j];
            if let crate::embed::EmbeddingVariant::UniformIid = self.spec.variant() {
                a = a.min(0.5 * (hi - lambda[j]).min(lambda[j] - lo).max(0.0));
            }
            if let Some(mx) = self.prior.alpha_max {
                a = a.min(0.5 * mx);
            }
            alpha[pos] = a;
        }
        let mut flat = lambda[..d].to_vec();
        flat.extend_from_slice(&alpha);
        if self.infer_sigma() {
            let (lo, hi) = self.prior.log_sigma_bounds;
            flat.push((0.5 * rms).max(1e-4).ln().clamp(lo, hi));
        }
        // shrink the embedding until the start is admissible
        let a0 = d;
        for _ in 0..30 {
            if self.log_posterior(&flat)?.is_finite() {
                return Ok(flat);
            }
            for v in &mut flat[a0..a0 + alpha.len()] {
                *v *= 0.5;
            }
        }
        Ok(flat)
    }
}

/// Proposal covariance from the curvature of `-logpost` at `x`, falling back
/// to per-coordinate curvature when the full Hessian is unusable.
pub fn local_covariance(neg_logpost: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> DMatrix<f64> {
    let p = x.len();
    let h: Vec<f64> = x.iter().map(|v| 1e-4 * v.abs().max(1e-2)).collect();
    if let Some(hess) = fd_hessian(neg_logpost, x, &h) {
        if let Some(ch) = hess.clone().cholesky() {
            let inv = ch.inverse();
            if inv.iter().all(|v| v.is_finite()) {
                return (&inv + inv.transpose()) * 0.5;
            }
        }
    }
    let f0 = neg_logpost(x);
    let mut var = DVector::<f64>::zeros(p);
    for i in 0..p {
        let at = |t: f64| {
            let mut y = x.to_vec();
            y[i] += t;
            neg_logpost(&y)
        };
        let hi = h[i];
        let central = (at(hi) - 2.0 * f0 + at(-hi)) / (hi * hi);
        let forward = (at(2.0 * hi) - 2.0 * at(hi) + f0) / (hi * hi);
        let backward = (at(-2.0 * hi) - 2.0 * at(-hi) + f0) / (hi * hi);
        let c = [central, forward, backward]
            .into_iter()
            .find(|c| c.is_finite() && *c > 0.0);
        var[i] = match c {
            Some(c) => 1.0 / c,
            None => (10.0 * hi).powi(2),
        };
    }
    DMatrix::from_diagonal(&var)
}

/// Inputs of one inference run.
pub struct InferenceSetup {
    pub mcmc: McmcConfig,
    pub init: Option<Vec<f64>>,
    pub warm_start: bool,
    pub lambda_start: Vec<f64>,
}

/// Runs adaptive MCMC, warm-started at the optimized posterior mode with a
/// curvature-shaped proposal unless disabled.
pub fn infer<M: ForwardModel + ?Sized>(post: &Posterior<'_, M>, setup: &InferenceSetup) -> Result<Chain> {
    let neg = |x: &[f64]| match post.log_posterior(x) {
        Ok(v) if v.is_finite() => -v,
        _ => f64::INFINITY,
    };
    let mut start = match &setup.init {
        Some(x) => {
            if x.len() != post.dim() {
                return Err(Error::config(
                    "mcmc.init",
                    format!("expected {} values, found {}", post.dim(), x.len()),
                ));
            }
            x.clone()
        }
        None => {
            let lambda = if setup.warm_start {
                post.least_squares(&setup.lambda_start)
            } else {
                setup.lambda_start.clone()
            };
            post.initial_point(&lambda)?
        }
    };
    let lp0 = post.log_posterior_strict(&start)?;
    if !lp0.is_finite() {
        return Err(Error::InfeasibleStart(lp0));
    }
    let mut mcmc = setup.mcmc.clone();
    if setup.warm_start {
        let steps: Vec<f64> = start.iter().map(|v| 0.1 * v.abs().max(0.05)).collect();
        let opt = NelderMead {
            max_evals: 4000 * start.len(),
            ..Default::default()
        }
        .minimize(neg, &start, &steps);
        if opt.f.is_finite() && opt.f <= -lp0 {
            start = opt.x;
        }
        if mcmc.initial_cov.is_none() && mcmc.initial_scales.is_none() {
            let scale = 2.4 * 2.4 / start.len() as f64;
            let mut cov = local_covariance(&neg, &start) * scale;
            for i in 0..start.len() {
                cov[(i, i)] += mcmc.cov_nugget;
            }
            mcmc.initial_cov = Some(cov);
        }
    }
    amcmc_run(|x| post.log_posterior(x), &start, &mcmc)
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub model: String,
    pub embedding: String,
    pub likelihood: String,
    pub n_data: usize,
    pub param_names: Vec<String>,
    pub map: Vec<f64>,
    pub map_logpost: f64,
    pub acceptance_rate: f64,
    pub chain_samples: usize,
    /// Averages over the data locations.
    pub mean_var_model_error: f64,
    pub mean_var_posterior: f64,
    pub mean_var_data_noise: f64,
    pub mean_abs_residual: f64,
    /// `mean(sd_total) / mean|mu_pf - y|` at the data locations.
    pub diagnostic_ratio: f64,
    pub posterior_mean_sigma: Option<f64>,
    /// Averages over the prediction locations.
    pub grid_mean_var_model_error: f64,
    pub grid_mean_var_posterior: f64,
}

/// Everything a calibration run produces.
pub struct Outcome {
    pub data: Dataset,
    pub model: LoadedModel,
    pub spec: EmbeddingSpec,
    pub param_names: Vec<String>,
    pub chain: Chain,
    /// Pushed-forward moments at the data locations.
    pub data_pf: PushForward,
    /// Posterior-predictive moments at the data locations.
    pub data_pp: Vec<PredictionMoments>,
    /// Prediction-grid moments in the configured mode.
    pub predictions: Vec<PredictionMoments>,
    pub summary: Summary,
}

fn load_data(source: &DataSource) -> Result<Dataset> {
    match source {
        DataSource::Demo { model, n, sigma, seed } => generate_data(*model, *n, *sigma, *seed),
        DataSource::Csv(p) => load_csv_dataset(p),
    }
}

fn load_model(source: &ModelSource) -> Result<LoadedModel> {
    Ok(match source {
        ModelSource::Builtin(m) => LoadedModel::Builtin(*m),
        ModelSource::Surrogate(p) => LoadedModel::Surrogate(SurrogateModel::load(p)?),
    })
}

fn prediction_points(r: &Resolved, data: &Dataset) -> Vec<Vec<f64>> {
    if let Some(p) = &r.grid {
        return p.clone();
    }
    let Some(n) = r.grid_size else {
        return data.xs.clone();
    };
    let domain = match (&r.data, &r.model) {
        (DataSource::Demo { model, .. }, _) | (_, ModelSource::Builtin(model)) => Some(model.family().domain()),
        _ => None,
    };
    match domain {
        Some((a, b)) => linspace(a, b, n).into_iter().map(|x| vec![x]).collect(),
        None if data.n_conditions() == 1 => {
            let lo = data.xs.iter().map(|x| x[0]).fold(f64::INFINITY, f64::min);
            let hi = data.xs.iter().map(|x| x[0]).fold(f64::NEG_INFINITY, f64::max);
            linspace(lo, hi, n).into_iter().map(|x| vec![x]).collect()
        }
        None => data.xs.clone(),
    }
}

fn mean_of(m: &[PredictionMoments], f: impl Fn(&PredictionMoments) -> f64) -> f64 {
    m.iter().map(f).sum::<f64>() / m.len().max(1) as f64
}

/// Executes a configured run without touching the filesystem beyond reading
/// its inputs.
pub fn run_calibration(cfg: &RunConfig) -> Result<Outcome> {
    let mut r = cfg.resolve()?;
    let data = load_data(&r.data).map_err(|e| e.in_stage("data"))?;
    let model = load_model(&r.model).map_err(|e| e.in_stage("surrogate"))?;
    if let LoadedModel::Surrogate(s) = &model {
        r.spec = cfg.embedding_spec(s.n_params())?;
        if r.prior.lambda_bounds.is_empty() {
            r.prior.lambda_bounds = s.ranges().to_vec();
        }
        r.prior.validate()?;
    }
    let lambda_start = match &model {
        LoadedModel::Builtin(m) => m.default_start(),
        LoadedModel::Surrogate(s) => s.ranges().iter().map(|(a, b)| 0.5 * (a + b)).collect(),
    };

    let post = Posterior::new(&model, &data, r.spec.clone(), r.likelihood, r.prior.clone(), r.nisp, r.bank_seed)
        .map_err(|e| e.in_stage("inference"))?;
    let setup = InferenceSetup {
        mcmc: r.mcmc.clone(),
        init: r.init.clone(),
        warm_start: r.warm_start,
        lambda_start,
    };
    let chain = infer(&post, &setup).map_err(|e| e.in_stage("inference"))?;

    let infer_sigma = r.likelihood.infers_sigma();
    let predict = |xs: &[Vec<f64>]| {
        pushed_forward(&chain, &model, &r.spec, infer_sigma, xs, r.nisp, r.subsample, r.estimator)
    };
    let data_pf = predict(&data.xs).map_err(|e| e.in_stage("prediction"))?;
    let data_pp = posterior_predictive(&data_pf.moments, &chain, &r.spec, r.likelihood.sigma)
        .map_err(|e| e.in_stage("prediction"))?;
    let points = prediction_points(&r, &data);
    let grid_pf = predict(&points).map_err(|e| e.in_stage("prediction"))?;
    let predictions = match r.mode {
        PredictMode::PushedForward => grid_pf.moments.clone(),
        PredictMode::PosteriorPredictive => posterior_predictive(&grid_pf.moments, &chain, &r.spec, r.likelihood.sigma)
            .map_err(|e| e.in_stage("prediction"))?,
    };

    let names = r.spec.param_names(infer_sigma);
    let abs_resid: Vec<f64> = data_pp.iter().zip(&data.ys).map(|(m, y)| (m.mu_pf - y).abs()).collect();
    let mean_abs_residual = stats::mean(&abs_resid);
    let posterior_mean_sigma = infer_sigma.then(|| {
        let k = chain.dim() - 1;
        stats::mean(&chain.samples.iter().map(|s| s[k].exp()).collect::<Vec<_>>())
    });
    let summary = Summary {
        model: model.name(),
        embedding: format!("{:?}", r.spec.variant()),
        likelihood: likelihood_name(&r.likelihood),
        n_data: data.len(),
        param_names: names.clone(),
        map: chain.map_point.clone(),
        map_logpost: chain.map_logpost,
        acceptance_rate: chain.acceptance_rate,
        chain_samples: chain.len(),
        mean_var_model_error: mean_of(&data_pp, |m| m.var_model_error),
        mean_var_posterior: mean_of(&data_pp, |m| m.var_posterior),
        mean_var_data_noise: mean_of(&data_pp, |m| m.var_data_noise),
        mean_abs_residual,
        diagnostic_ratio: mean_of(&data_pp, |m| m.var_total.sqrt()) / mean_abs_residual,
        posterior_mean_sigma,
        grid_mean_var_model_error: mean_of(&grid_pf.moments, |m| m.var_model_error),
        grid_mean_var_posterior: mean_of(&grid_pf.moments, |m| m.var_posterior),
    };
    Ok(Outcome {
        data,
        model,
        spec: r.spec,
        param_names: names,
        chain,
        data_pf,
        data_pp,
        predictions,
        summary,
    })
}

fn likelihood_name(l: &LikelihoodSpec) -> String {
    match l.kind {
        LikelihoodKind::ClassicalGaussian => "classical".into(),
        LikelihoodKind::IndependentNormal => "independent-normal".into(),
        LikelihoodKind::Abc { epsilon, gamma } => format!("abc(epsilon={epsilon}, gamma={gamma})"),
        LikelihoodKind::IndependentComponentKde { samples, .. } => format!("kde(samples={samples})"),
        LikelihoodKind::MultivariateNormal { samples, .. } => format!("mvn(samples={samples})"),
    }
}

/// Writes `data.csv`, `chain.csv`, `predictions.csv`,
/// `data_predictions.csv` and `summary.json` into `dir`.
pub fn write_outputs(out: &Outcome, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    out.data.write_csv(&dir.join("data.csv"))?;
    out.chain.write_csv(&dir.join("chain.csv"), &out.param_names)?;
    write_predictions(&dir.join("predictions.csv"), &out.predictions)?;
    write_predictions(&dir.join("data_predictions.csv"), &out.data_pp)?;
    let mut json = serde_json::to_string_pretty(&out.summary)?;
    json.push('\n');
    write_atomic(&dir.join("summary.json"), json.as_bytes())
}

/// Recomputes predictions from a stored chain.
pub fn predict_from_chain(cfg: &RunConfig, chain: &Chain) -> Result<Vec<PredictionMoments>> {
    let mut r = cfg.resolve()?;
    let data = load_data(&r.data).map_err(|e| e.in_stage("data"))?;
    let model = load_model(&r.model).map_err(|e| e.in_stage("surrogate"))?;
    if let LoadedModel::Surrogate(s) = &model {
        r.spec = cfg.embedding_spec(s.n_params())?;
    }
    let points = prediction_points(&r, &data);
    let pf = pushed_forward(chain, &model, &r.spec, r.likelihood.infers_sigma(), &points, r.nisp, r.subsample, r.estimator)
        .map_err(|e| e.in_stage("prediction"))?;
    match r.mode {
        PredictMode::PushedForward => Ok(pf.moments),
        PredictMode::PosteriorPredictive => posterior_predictive(&pf.moments, chain, &r.spec, r.likelihood.sigma),
    }
}

/// One (model, N) row of a replica study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicaRow {
    pub model: String,
    pub n: usize,
    pub me_median: f64,
    pub me_q25: f64,
    pub me_q75: f64,
    pub pu_median: f64,
    pub pu_q25: f64,
    pub pu_q75: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicaCell {
    pub model: String,
    pub n: usize,
    pub replica: usize,
    pub data_seed: u64,
    pub var_model_error: Option<f64>,
    pub var_posterior: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ReplicaTable {
    pub rows: Vec<ReplicaRow>,
    pub cells: Vec<ReplicaCell>,
}

impl ReplicaTable {
    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("model,N,me_median,me_q25,me_q75,pu_median,pu_q25,pu_q75\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{:?},{:?},{:?},{:?},{:?},{:?}\n",
                r.model, r.n, r.me_median, r.me_q25, r.me_q75, r.pu_median, r.pu_q25, r.pu_q75
            ));
        }
        s
    }

    pub fn failures(&self) -> impl Iterator<Item = &ReplicaCell> {
        self.cells.iter().filter(|c| c.error.is_some())
    }

    pub fn row(&self, model: &str, n: usize) -> Option<&ReplicaRow> {
        self.rows.iter().find(|r| r.model == model && r.n == n)
    }
}

/// Data seed of one replica; distinct across replicas and sizes.
pub fn replica_seed(base: u64, n: usize, replica: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((n as u64) << 20)
        .wrapping_add(replica as u64 + 1)
}

/// Repeats a demo calibration over fresh data for every model and size,
/// reporting median and quartiles of the spatially averaged model-error and
/// posterior variances over the prediction grid. Cells run concurrently and,
/// with `cell_dir`, each finished cell is written atomically.
pub fn run_replicas(
    base: &RunConfig,
    models: &[BuiltinModel],
    ns: &[usize],
    replicas: usize,
    cell_dir: Option<&Path>,
) -> Result<ReplicaTable> {
    if replicas < 3 {
        return Err(Error::config("replicas", "need at least 3 replicas"));
    }
    if base.data.demo.is_none() {
        return Err(Error::config("data.demo", "replica studies need demo data"));
    }
    let jobs: Vec<(BuiltinModel, usize, usize)> = models
        .iter()
        .flat_map(|&m| ns.iter().flat_map(move |&n| (0..replicas).map(move |r| (m, n, r))))
        .collect();
    let cells: Vec<ReplicaCell> = jobs
        .par_iter()
        .map(|&(m, n, rep)| {
            let seed = replica_seed(base.data.seed, n, rep);
            let mut cfg = base.clone();
            cfg.model.builtin = Some(m.id().to_string());
            cfg.model.surrogate = None;
            cfg.data.n = Some(n);
            cfg.data.seed = seed;
            cfg.mcmc.seed = base.mcmc.seed.wrapping_add(seed);
            cfg.prior.lambda_bounds = None;
            if cfg.predict.grid.is_none() && cfg.predict.points.is_none() {
                cfg.predict.grid = Some(101);
            }
            let res = run_calibration(&cfg);
            let cell = match res {
                Ok(o) => ReplicaCell {
                    model: m.id().into(),
                    n,
                    replica: rep,
                    data_seed: seed,
                    var_model_error: Some(o.summary.grid_mean_var_model_error),
                    var_posterior: Some(o.summary.grid_mean_var_posterior),
                    error: None,
                },
                Err(e) => {
                    log::warn!("replica {rep} of {m} at N={n} failed: {e}");
                    ReplicaCell {
                        model: m.id().into(),
                        n,
                        replica: rep,
                        data_seed: seed,
                        var_model_error: None,
                        var_posterior: None,
                        error: Some(e.to_string()),
                    }
                }
            };
            if let Some(dir) = cell_dir {
                let path: PathBuf = dir.join(format!("{}_N{}_r{}.json", cell.model, n, rep));
                let json = serde_json::to_string_pretty(&cell)?;
                write_atomic(&path, json.as_bytes())?;
            }
            Ok(cell)
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for &m in models {
        for &n in ns {
            let sel: Vec<&ReplicaCell> = cells.iter().filter(|c| c.model == m.id() && c.n == n).collect();
            let me: Vec<f64> = sel.iter().filter_map(|c| c.var_model_error).collect();
            let pu: Vec<f64> = sel.iter().filter_map(|c| c.var_posterior).collect();
            rows.push(ReplicaRow {
                model: m.id().into(),
                n,
                me_median: stats::median(&me),
                me_q25: stats::quantile(&me, 0.25),
                me_q75: stats::quantile(&me, 0.75),
                pu_median: stats::median(&pu),
                pu_q25: stats::quantile(&pu, 0.25),
                pu_q75: stats::quantile(&pu, 0.75),
            });
        }
    }
    Ok(ReplicaTable { rows, cells })
}

/// Failure listing for a replica study: `model,N,replica,data_seed,error`.
pub fn failures_csv(table: &ReplicaTable) -> String {
    let mut s = String::from("model,N,replica,data_seed,error\n");
    for c in table.failures() {
        let msg = c.error.as_deref().unwrap_or_default().replace('"', "'");
        s.push_str(&format!("{},{},{},{},\"{}\"\n", c.model, c.n, c.replica, c.data_seed, msg));
    }
    s
}
