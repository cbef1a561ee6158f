use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use copula_hmm::cmp::CmpParams;
use copula_hmm::copula::CopulaFamily;
use copula_hmm::estimation::fit;
use copula_hmm::io::{load_dataset, load_model, save_model, write_table};
use copula_hmm::model::{ModelParams, ModelSpec, TransitionCoefficients};
use copula_hmm::optim::OptimizerSettings;
use copula_hmm::simulate::{simulate_matches, CovariateGenerator};
use nalgebra::DMatrix;

fn chmm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chmm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

/// Writes a simulated data set and a model fitted to it (2 states, Clayton,
/// minute as covariate). States of the true model are deliberately listed
/// high-touch first.
fn setup(dir: &Path) -> (PathBuf, PathBuf) {
    let covs = vec!["minute".to_string()];
    let spec = ModelSpec::new(
        2,
        CopulaFamily::Clayton,
        covs.clone(),
        vec![copula_hmm::model::Standardization { mean: 48.0, sd: 27.0 }],
    )
    .unwrap();
    let gamma = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.1, 0.9]);
    let mut coef = TransitionCoefficients::from_matrix(&gamma, 1).unwrap();
    coef.get_mut(0, 1)[1] = 0.4;
    let truth = ModelParams::new(
        &spec,
        vec![
            [CmpParams::new(0.4, 1.0).unwrap(), CmpParams::new(9.0, 1.0).unwrap()],
            [CmpParams::new(0.1, 1.0).unwrap(), CmpParams::new(2.0, 1.0).unwrap()],
        ],
        vec![2.0, 0.5],
        vec![0.5, 0.5],
        coef,
    )
    .unwrap();
    let sims = simulate_matches(&spec, &truth, 6, 90, &CovariateGenerator::default(), 3).unwrap();
    let header: Vec<String> = ["match_id", "minute", "shots", "touches", "score_diff", "home", "opp_market_value"]
        .map(String::from)
        .to_vec();
    let mut rows = vec![];
    for s in &sims {
        for t in 0..s.series.len() {
            rows.push(vec![
                s.series.match_id.clone(),
                s.series.minutes[t].to_string(),
                s.series.counts[t][0].to_string(),
                s.series.counts[t][1].to_string(),
                s.score_diff[t].to_string(),
                "1".into(),
                "200".into(),
            ]);
        }
    }
    let data_path = dir.join("data.csv");
    write_table(&data_path, &header, &rows).unwrap();

    let data = load_dataset(&data_path, &covs, None).unwrap();
    let spec = ModelSpec::new(2, CopulaFamily::Clayton, covs, data.standardization().to_vec()).unwrap();
    let start = ModelParams::new(
        &spec,
        truth.marginals().to_vec(),
        truth.thetas(),
        truth.delta().to_vec(),
        truth.transitions().clone(),
    )
    .unwrap()
    .pack();
    let f = fit(&spec, &data, &start, &OptimizerSettings::default()).unwrap();
    let model_path = dir.join("model.toml");
    save_model(&f, &model_path).unwrap();
    (data_path, model_path)
}

#[test]
fn analysis_commands_write_touch_ordered_tables() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = setup(dir.path());
    let fitted = load_model(&model).unwrap();
    let means = fitted.params.state_means().unwrap();
    assert!(means[0][1] > means[1][1], "setup keeps the high-touch state first");

    let out = dir.path().join("decode.csv");
    let r = chmm(&["decode", "--model", p(&model), "--data", p(&data), "--match-id", "sim2", "--out", p(&out)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let rows = csv_rows(&out);
    assert_eq!(rows[0], ["match_id", "minute", "shots", "touches", "state"]);
    assert_eq!(rows.len(), 91);
    assert!(rows[1..].iter().all(|r| r[0] == "sim2"));
    // Minutes with many touches are decoded as the high-touch state, now labeled 2.
    let busy: Vec<_> = rows[1..].iter().filter(|r| r[3].parse::<u64>().unwrap() >= 12).collect();
    assert!(!busy.is_empty());
    assert!(busy.iter().all(|r| r[4] == "2"));

    let out = dir.path().join("profile.csv");
    let r = chmm(&["profile", "--model", p(&model), "--sweep", "minute", "--grid", "1:90:1", "--out", p(&out)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let rows = csv_rows(&out);
    assert_eq!(rows[0], ["minute", "state", "probability"]);
    assert_eq!(rows.len(), 1 + 90 * 2);
    for pair in rows[1..].chunks(2) {
        let s: f64 = pair.iter().map(|r| r[2].parse::<f64>().unwrap()).sum();
        assert!((s - 1.0).abs() < 1e-9);
    }

    let out = dir.path().join("curves.csv");
    let r = chmm(&[
        "curves", "--model", p(&model), "--grid", "1,45,90", "--draws", "200", "--seed", "5", "--out", p(&out),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let rows = csv_rows(&out);
    assert_eq!(rows[0], ["minute", "from", "to", "estimate", "lower", "upper"]);
    assert_eq!(rows.len(), 1 + 3 * 4);
    for r in &rows[1..] {
        let v: Vec<f64> = r[3..].iter().map(|x| x.parse().unwrap()).collect();
        assert!(v[1] <= v[2] && (0.0..=1.0).contains(&v[0]));
    }
    let again = dir.path().join("curves2.csv");
    chmm(&[
        "curves", "--model", p(&model), "--grid", "1,45,90", "--draws", "200", "--seed", "5", "--out", p(&again),
    ]);
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&again).unwrap());

    let out = dir.path().join("pmf.csv");
    let r = chmm(&["pmf", "--model", p(&model), "--out", p(&out)]);
    assert!(r.status.success());
    let rows = csv_rows(&out);
    assert_eq!(rows.len(), 1 + 2 * 4 * 29);
    let touches_mean = |state: &str| -> f64 {
        rows[1..]
            .iter()
            .filter(|r| r[0] == state)
            .map(|r| r[2].parse::<f64>().unwrap() * r[3].parse::<f64>().unwrap())
            .sum()
    };
    assert!(touches_mean("1") < touches_mean("2"));
}

#[test]
fn fit_and_simulate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = setup(dir.path());
    let sim = dir.path().join("sim.csv");
    let r = chmm(&[
        "simulate", "--model", p(&model), "--matches", "3", "--minutes", "40", "--seed", "9", "--out", p(&sim),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let rows = csv_rows(&sim);
    assert_eq!(rows[0].len(), 8);
    assert_eq!(rows.len(), 1 + 3 * 40);

    let out = dir.path().join("fit.toml");
    let args = [
        "fit", "--data", p(&data), "--states", "2", "--copula", "clayton", "--covariates", "minute", "--starts", "2",
        "--seed", "1", "--out", p(&out),
    ];
    let r = chmm(&args);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(String::from_utf8_lossy(&r.stdout).contains("loglik"));
    let f = load_model(&out).unwrap();
    let means = f.params.state_means().unwrap();
    assert!(means[0][1] < means[1][1]);
    assert_eq!(f.spec.family(), CopulaFamily::Clayton);

    let out2 = dir.path().join("fit2.toml");
    let mut args2 = args;
    args2[args2.len() - 1] = p(&out2);
    assert!(chmm(&args2).status.success());
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&out2).unwrap());
}

#[test]
fn select_writes_a_criteria_table() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = setup(dir.path());
    let out = dir.path().join("select.csv");
    let r = chmm(&[
        "select", "--data", p(&data), "--states", "1,2", "--copulas", "clayton,independence", "--starts", "2",
        "--seed", "4", "--out", p(&out),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let rows = csv_rows(&out);
    assert_eq!(
        rows[0],
        ["states", "clayton_aic", "clayton_bic", "independence_aic", "independence_bic"]
    );
    assert_eq!(rows.len(), 3);
    for r in &rows[1..] {
        let aic: f64 = r[1].parse().unwrap();
        let bic: f64 = r[2].parse().unwrap();
        assert!(bic > aic);
    }
}

#[test]
fn configuration_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = setup(dir.path());
    let out = dir.path().join("x.csv");
    // missing seed
    let r = chmm(&["fit", "--data", p(&data), "--states", "2", "--copula", "frank", "--out", p(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("seed"));
    // unknown copula
    let r = chmm(&["fit", "--data", p(&data), "--states", "2", "--copula", "gumbel", "--seed", "1", "--out", p(&out)]);
    assert_eq!(r.status.code(), Some(2));
    // covariate not in the model
    let r = chmm(&[
        "profile", "--model", p(&model), "--sweep", "home", "--grid", "0,1", "--out", p(&out),
    ]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("home"));
    // malformed data
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "match_id,minute,shots\na,1,0\n").unwrap();
    let r = chmm(&["decode", "--model", p(&model), "--data", p(&bad), "--out", p(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("missing column"));
    // config file with a typo
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "n_start = 3\n").unwrap();
    let r = chmm(&["fit", "--config", p(&cfg)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn run_config_supplies_fit_settings() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = setup(dir.path());
    let out = dir.path().join("cfg.toml");
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "data = {:?}\nstates = 1\ncopula = \"frank\"\nn_starts = 2\nseed = 11\nout = {:?}\n\n[optimizer]\nmax_iterations = 300\n\n[start_ranges]\ntheta_frank = [0.5, 1.0]\n",
            p(&data),
            p(&out)
        ),
    )
    .unwrap();
    let r = chmm(&["fit", "--config", p(&cfg)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let f = load_model(&out).unwrap();
    assert_eq!(f.spec.n_states(), 1);
    assert_eq!(f.n_starts, 2);
}

#[test]
fn numerical_failures_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let (_, model) = setup(dir.path());
    // A touches rate whose support cannot be truncated for simulation.
    let mut doc: toml::Table = std::fs::read_to_string(&model).unwrap().parse().unwrap();
    let state = doc["states"].as_array_mut().unwrap()[0].as_table_mut().unwrap();
    state["touches"].as_table_mut().unwrap()["lambda"] = toml::Value::Float(4900.0);
    let edited = doc.to_string();
    let hot = dir.path().join("hot.toml");
    std::fs::write(&hot, edited).unwrap();
    let out = dir.path().join("sim.csv");
    let r = chmm(&["simulate", "--model", p(&hot), "--matches", "1", "--minutes", "5", "--seed", "1", "--out", p(&out)]);
    assert_eq!(r.status.code(), Some(3), "{}", String::from_utf8_lossy(&r.stderr));
}
