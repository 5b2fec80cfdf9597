use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use merr_core::config::RunConfig;
use merr_core::data::{load_csv_dataset, parse_csv_dataset, Dataset};
use merr_core::demos::BuiltinModel;
use merr_core::embed::{sample_lambda, AugmentedParams, EmbeddingSpec, EmbeddingVariant};
use merr_core::mcmc::Chain;
use merr_core::nisp::{FnModel, ForwardModel, NispConfig, NispPlan};
use merr_core::predict::map_pushed_forward;
use merr_core::surrogate::{build_surrogate, SurrogateModel, TrainingSet};
use merr_core::workflow::{run_calibration, run_replicas, write_outputs};
use merr_core::Error;

fn smooth_model() -> FnModel<impl Fn(&[f64], &[f64]) -> f64 + Sync> {
    FnModel::new(2, 1, |x: &[f64], l: &[f64]| (0.3 * l[0] + x[0] * l[1]).sin() + 0.1 * l[0] * l[1])
}

#[test]
fn analytic_loo_matches_refits() {
    let model = smooth_model();
    let ranges = [(-1.0, 2.0), (0.5, 1.5)];
    let xs = vec![vec![0.0], vec![0.7], vec![1.3]];
    let ts = TrainingSet::sample(&model, &xs, &ranges, 40, 11).unwrap();
    let s = build_surrogate(&ts, 3, &ranges).unwrap();
    let r = ts.lambdas.len();
    let mut sq = vec![0.0; xs.len()];
    for left in 0..r {
        let reduced = TrainingSet {
            xs: ts.xs.clone(),
            lambdas: ts.lambdas.iter().enumerate().filter(|(k, _)| *k != left).map(|(_, l)| l.clone()).collect(),
            values: ts
                .values
                .iter()
                .map(|row| row.iter().enumerate().filter(|(k, _)| *k != left).map(|(_, v)| *v).collect())
                .collect(),
        };
        let refit = build_surrogate(&reduced, 3, &ranges).unwrap();
        for i in 0..xs.len() {
            let (pred, _) = refit.eval_at(i, &ts.lambdas[left]).unwrap();
            sq[i] += (ts.values[i][left] - pred).powi(2);
        }
    }
    for (i, e) in sq.iter().enumerate() {
        let brute = (e / r as f64).sqrt();
        let analytic = s.loo_errors()[i];
        assert!((brute - analytic).abs() <= 1e-8 * brute, "location {i}: {brute} vs {analytic}");
    }
}

#[test]
fn surrogate_of_smooth_model_is_accurate() {
    let model = smooth_model();
    let ranges = [(-1.0, 1.0), (0.5, 1.5)];
    let xs: Vec<Vec<f64>> = (0..5).map(|i| vec![0.25 * i as f64]).collect();
    let ts = TrainingSet::sample(&model, &xs, &ranges, 100, 3).unwrap();
    let s = build_surrogate(&ts, 3, &ranges).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut num, mut den) = (0.0, 0.0);
    for _ in 0..2000 {
        let l = [rng.random_range(-1.0..1.0), rng.random_range(0.5..1.5)];
        for (i, x) in xs.iter().enumerate() {
            let f = model.eval(x, &l).unwrap();
            num += (s.eval_at(i, &l).unwrap().0 - f).powi(2);
            den += f * f;
        }
    }
    assert!((num / den).sqrt() < 1e-2);
    assert!(s.loo_errors().iter().all(|&e| e < 1e-2));
}

#[test]
fn projection_through_surrogate_is_exact() {
    let model = smooth_model();
    let ranges = [(-1.0, 1.0), (0.0, 2.0)];
    let xs = vec![vec![0.2], vec![0.9]];
    let ts = TrainingSet::sample(&model, &xs, &ranges, 60, 4).unwrap();
    let s = build_surrogate(&ts, 3, &ranges).unwrap();
    let spec = EmbeddingSpec::all(EmbeddingVariant::UniformIid, 2).unwrap();
    let p = AugmentedParams {
        lambda: vec![0.1, 1.0],
        alpha: vec![0.4, 0.5],
        log_sigma: None,
    };
    let out = NispPlan::new(&spec, NispConfig::new(3)).unwrap().project(&s, &xs, &p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let xi = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let l = sample_lambda(&spec, &p, &xi).unwrap();
        for (i, x) in xs.iter().enumerate() {
            let direct = s.eval(x, &l).unwrap();
            let projected = out.expansion(i).eval(&xi).unwrap();
            assert!((direct - projected).abs() <= 1e-10 * direct.abs().max(1.0));
        }
    }
}

#[test]
fn surrogate_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ranges = [(-1.0, 1.0), (0.0, 2.0)];
    let ts = TrainingSet::sample(&smooth_model(), &[vec![0.5]], &ranges, 30, 1).unwrap();
    let csv = dir.path().join("train.csv");
    ts.write_csv(&csv).unwrap();
    assert_eq!(TrainingSet::load_csv(&csv).unwrap(), ts);
    let s = build_surrogate(&ts, 2, &ranges).unwrap();
    let path = dir.path().join("s.txt");
    s.save(&path).unwrap();
    assert_eq!(SurrogateModel::load(&path).unwrap(), s);
}

#[test]
fn map_moments_match_sampling() {
    let spec = EmbeddingSpec::all(EmbeddingVariant::TriangularMvn, 2).unwrap();
    let p = AugmentedParams {
        lambda: vec![0.5, 1.2],
        alpha: vec![0.1, 0.05, 0.08],
        log_sigma: None,
    };
    let m = BuiltinModel::Demo1;
    let xs = vec![vec![0.1], vec![0.8]];
    let pm = map_pushed_forward(&p, &m, &spec, &xs, NispConfig::new(5)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 200_000;
    let draws: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let xi: Vec<f64> = (0..2).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
            sample_lambda(&spec, &p, &xi).unwrap()
        })
        .collect();
    for (i, x) in xs.iter().enumerate() {
        let v: Vec<f64> = draws.iter().map(|l| m.fit(x[0], l)).collect();
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - pm[i].mu_pf).abs() < 3.0 * se);
        assert!((var - pm[i].var_model_error).abs() < 0.02 * var);
        assert_eq!(pm[i].var_posterior, 0.0);
    }
}

#[test]
fn dataset_csv_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = Dataset::from_scalar(&[0.1, 1.0 / 3.0], vec![2.0_f64.sqrt(), -1e-300]).unwrap();
    let path = dir.path().join("d.csv");
    d.write_csv(&path).unwrap();
    let back = load_csv_dataset(&path).unwrap();
    assert_eq!(back, d);
    assert_eq!(back.len(), 2);
    assert!(matches!(parse_csv_dataset("x1,y\n", "t"), Err(Error::EmptyDataset)));
    match parse_csv_dataset("x1,y\n1,2\n3,abc\n", "t") {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
}

fn config(text: &str) -> RunConfig {
    RunConfig::from_toml_str(text, "test").unwrap()
}

const DEMO2_ABC: &str = r#"
[data]
demo = "demo2"
[model]
builtin = "demo2"
[likelihood]
kind = "abc"
epsilon = 1e-3
gamma = 1.0
sigma = 0.0
[nisp]
order = 3
[mcmc]
steps = 4000
cov_nugget = 1e-14
seed = 5
[predict]
grid = 21
"#;

#[test]
fn demo2_abc_run_reports_model_error() {
    let out = run_calibration(&config(DEMO2_ABC)).unwrap();
    assert!(out.summary.mean_var_model_error > 0.0);
    assert!(out.summary.map_logpost.is_finite());
    assert_eq!(out.predictions.len(), 21);
}

#[test]
fn full_run_is_byte_reproducible() {
    let cfg = config(DEMO2_ABC);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_outputs(&run_calibration(&cfg).unwrap(), a.path()).unwrap();
    write_outputs(&run_calibration(&cfg).unwrap(), b.path()).unwrap();
    for f in ["data.csv", "chain.csv", "predictions.csv", "data_predictions.csv", "summary.json"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
    let (chain, names) = Chain::read_csv(&a.path().join("chain.csv")).unwrap();
    assert_eq!(names.len(), chain.dim());
    assert!(chain.len() > 0);
}

#[test]
fn demo3_quadratic_independent_normal_completes() {
    let cfg = config(
        r#"
[data]
demo = "demo3-quadratic"
n = 30
seed = 2
[model]
builtin = "demo3-quadratic"
[likelihood]
kind = "independent-normal"
sigma = 0.5
[mcmc]
steps = 3000
seed = 1
"#,
    );
    let out = run_calibration(&cfg).unwrap();
    assert!(out.summary.acceptance_rate > 0.0);
    assert!(out.predictions.iter().all(|p| p.var_total.is_finite()));
}

#[test]
fn classical_true_order_has_no_model_error() {
    let cfg = config(
        r#"
[data]
demo = "demo3-true"
n = 40
[model]
builtin = "demo3-true"
[embedding]
variant = "classical"
[likelihood]
kind = "classical"
sigma = 0.5
[mcmc]
steps = 3000
[predict]
grid = 11
"#,
    );
    let out = run_calibration(&cfg).unwrap();
    assert!(out.predictions.iter().all(|p| p.var_model_error == 0.0));
    assert!(out.data_pp.iter().all(|p| p.var_data_noise == 0.25));
}

#[test]
fn replica_table_shape_and_true_model() {
    let cfg = config(
        r#"
[data]
demo = "demo3-true"
sigma = 0.5
seed = 4
[model]
builtin = "demo3-true"
[embedding]
embedded = [0]
[likelihood]
kind = "independent-normal"
sigma = 0.5
[mcmc]
steps = 3000
cov_nugget = 1e-14
"#,
    );
    let dir = tempfile::tempdir().unwrap();
    let table = run_replicas(&cfg, &[BuiltinModel::Demo3True], &[100], 3, Some(dir.path())).unwrap();
    let csv = table.to_csv_string();
    assert!(csv.starts_with("model,N,me_median,me_q25,me_q75,pu_median,pu_q25,pu_q75\n"));
    assert_eq!(csv.lines().count(), 2);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 3);
    assert_eq!(table.failures().count(), 0);
    let row = table.row("demo3-true", 100).unwrap();
    assert!(row.me_median < 0.05, "{row:?}");
    assert!(run_replicas(&cfg, &[BuiltinModel::Demo3True], &[10], 2, None).is_err());
}

#[test]
fn config_errors_name_the_field() {
    let bad = [
        (DEMO2_ABC.replace("epsilon = 1e-3", "epsilon = -1.0"), "likelihood.epsilon"),
        (DEMO2_ABC.replace("epsilon = 1e-3\n", ""), "likelihood.epsilon"),
        (DEMO2_ABC.replace("builtin = \"demo2\"", "builtin = \"demo9\""), "model.builtin"),
        (DEMO2_ABC.replace("order = 3", "order = 3\npts_per_dim = 2"), "nisp.pts_per_dim"),
        (DEMO2_ABC.replace("grid = 21", "grid = 0"), "predict.grid"),
    ];
    for (text, field) in bad {
        let err = config(&text).resolve().unwrap_err().to_string();
        assert!(err.contains(field), "{err}");
    }
    let err = RunConfig::from_toml_str(&DEMO2_ABC.replace("[nisp]", "[nisp]\ncolour = 1"), "t")
        .unwrap_err()
        .to_string();
    assert!(err.contains("colour"), "{err}");
}

#[test]
fn failing_stage_is_named() {
    let mut cfg = config(DEMO2_ABC);
    cfg.model.builtin = None;
    cfg.model.surrogate = Some("/nonexistent/s.txt".into());
    assert!(cfg.resolve().unwrap_err().to_string().contains("model.surrogate"));
    let dir = tempfile::tempdir().unwrap();
    let broken = dir.path().join("s.txt");
    std::fs::write(&broken, "# surrogate nonsense\n").unwrap();
    cfg.model.surrogate = Some(broken);
    let err = run_calibration(&cfg).err().unwrap().to_string();
    assert!(err.contains("surrogate stage"), "{err}");
}
