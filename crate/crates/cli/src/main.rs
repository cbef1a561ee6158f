//! `chmm`: fit, select, decode and analyze copula hidden Markov models of
//! minute-level match counts.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use copula_hmm::copula::CopulaFamily;
use copula_hmm::data::Dataset;
use copula_hmm::decode::{covariate_profile, viterbi};
use copula_hmm::estimation::{
    multi_start_fit, relabel_by_touches, select_models, transition_curve_ci, FitResult, MultiStartSettings,
    StartRanges,
};
use copula_hmm::io::{load_dataset, load_dataset_for, load_model, save_model, write_table};
use copula_hmm::model::{ModelParams, ModelSpec};
use copula_hmm::optim::OptimizerSettings;
use copula_hmm::simulate::{simulate_matches, CovariateGenerator};
use copula_hmm::Error;

#[derive(Parser)]
#[command(name = "chmm", version, about = "Copula hidden Markov models for bivariate match counts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one model by multi-start maximum likelihood and save it.
    Fit(FitArgs),
    /// Fit a grid of state counts and copula families and tabulate AIC/BIC.
    Select(SelectArgs),
    /// Most likely state sequence per match.
    Decode(DecodeArgs),
    /// Stationary distribution as one covariate sweeps a grid.
    Profile(ProfileArgs),
    /// Transition probabilities with simulation-based confidence bands.
    Curves(CurvesArgs),
    /// State-dependent joint pmf over a grid of (shots, touches).
    Pmf(PmfArgs),
    /// Simulate matches from a fitted model.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Run-config TOML; command-line flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    states: Option<usize>,
    #[arg(long)]
    copula: Option<CopulaFamily>,
    /// Comma-separated transition covariates.
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    #[arg(long)]
    starts: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Model file to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "2,3,4,5")]
    states: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "frank,clayton,amh")]
    copulas: Vec<CopulaFamily>,
    #[arg(long, value_delimiter = ',')]
    covariates: Vec<String>,
    #[arg(long)]
    starts: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Decode only this match (all matches otherwise).
    #[arg(long)]
    match_id: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ProfileArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    sweep: String,
    /// Sweep values: `from:to:step` or a comma-separated list.
    #[arg(long)]
    grid: Grid,
    /// Values of the other covariates, as name=value.
    #[arg(long = "fix", value_parser = parse_fix)]
    fix: Vec<(String, f64)>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CurvesArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "minute")]
    sweep: String,
    #[arg(long, default_value = "1:90:1")]
    grid: Grid,
    #[arg(long = "fix", value_parser = parse_fix)]
    fix: Vec<(String, f64)>,
    #[arg(long, default_value_t = 1000)]
    draws: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PmfArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 3)]
    max_shots: u64,
    #[arg(long, default_value_t = 28)]
    max_touches: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    matches: usize,
    #[arg(long, default_value_t = 95)]
    minutes: usize,
    #[arg(long)]
    seed: u64,
    /// Covariate-generator TOML (conversion, opponent_goal_rate, constants).
    #[arg(long)]
    generator: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Debug)]
struct Grid(Vec<f64>);

impl FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| format!("bad number '{t}'"));
        let parts: Vec<&str> = s.split(':').collect();
        let values = match parts.as_slice() {
            [from, to, step] => {
                let (from, to, step) = (num(from)?, num(to)?, num(step)?);
                if !(step > 0.0) || to < from {
                    return Err("range needs from <= to and a positive step".into());
                }
                let n = ((to - from) / step + 1e-9).floor() as usize;
                (0..=n).map(|i| from + i as f64 * step).collect()
            }
            [_] => s.split(',').map(num).collect::<Result<Vec<_>, _>>()?,
            _ => return Err("expected from:to:step or a comma-separated list".into()),
        };
        if values.iter().any(|v| !v.is_finite()) {
            return Err("grid values must be finite".into());
        }
        Ok(Grid(values))
    }
}

fn parse_fix(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s.split_once('=').ok_or("expected name=value")?;
    let value: f64 = value.trim().parse().map_err(|_| format!("bad value '{value}'"))?;
    Ok((name.trim().to_string(), value))
}

/// Run configuration file. Every field may be overridden on the command line.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    data: Option<PathBuf>,
    states: Option<usize>,
    copula: Option<String>,
    covariates: Option<Vec<String>>,
    n_starts: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    optimizer: OptimizerSettings,
    start_ranges: StartRanges,
}

enum CliError {
    Config(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T> = Result<T, CliError>;

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn read_config(path: Option<&Path>) -> CliResult<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn required<T>(value: Option<T>, name: &str) -> CliResult<T> {
    value.ok_or_else(|| config_err(format!("--{name} is required (flag or config file)")))
}

fn multi_start_settings(cfg: &RunConfig, starts: Option<usize>, seed: Option<u64>) -> CliResult<MultiStartSettings> {
    Ok(MultiStartSettings {
        n_starts: starts.or(cfg.n_starts).unwrap_or(50),
        seed: required(seed.or(cfg.seed), "seed")?,
        ranges: cfg.start_ranges,
        optimizer: cfg.optimizer,
    })
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// Zero-based position of each state in ascending touch-mean order.
fn touch_ranks(params: &ModelParams) -> CliResult<Vec<usize>> {
    let order = params.touch_order()?;
    let mut rank = vec![0; order.len()];
    for (k, &o) in order.iter().enumerate() {
        rank[o] = k;
    }
    Ok(rank)
}

fn cmd_fit(a: FitArgs) -> CliResult<()> {
    let cfg = read_config(a.config.as_deref())?;
    let data_path = required(a.data.or(cfg.data.clone()), "data")?;
    let n_states = required(a.states.or(cfg.states), "states")?;
    let family = match (a.copula, &cfg.copula) {
        (Some(f), _) => f,
        (None, Some(s)) => s.parse().map_err(|e| config_err(format!("copula: {e}")))?,
        (None, None) => return Err(config_err("--copula is required (flag or config file)")),
    };
    let covariates = a.covariates.or(cfg.covariates.clone()).unwrap_or_default();
    let out = required(a.out.or(cfg.out.clone()), "out")?;
    let settings = multi_start_settings(&cfg, a.starts, a.seed)?;

    let data = load_dataset(&data_path, &covariates, None)?;
    let spec = ModelSpec::new(
        n_states,
        family,
        covariates,
        data.standardization().to_vec(),
    )?;
    eprintln!(
        "fitting {n_states}-state {family} model on {} observations from {} starts",
        data.n_obs(),
        settings.n_starts
    );
    let fit = multi_start_fit(&spec, &data, &settings)?;
    let fit = relabel_by_touches(&fit, &data)?;
    save_model(&fit, &out)?;
    print_summary(&fit)?;
    Ok(())
}

fn print_summary(fit: &FitResult) -> CliResult<()> {
    let ok = fit.start_logliks.iter().filter(|l| l.is_some()).count();
    println!(
        "loglik {:.4}  AIC {:.2}  BIC {:.2}  params {}  obs {}",
        fit.loglik,
        fit.aic,
        fit.bic,
        fit.spec.num_params(),
        fit.n_obs
    );
    println!(
        "best of {}/{} successful starts (start {}), converged: {}",
        ok,
        fit.n_starts,
        fit.best_start_index + 1,
        fit.converged
    );
    if fit.cov_flags.pseudo_inverse {
        println!(
            "warning: Hessian ill-conditioned (condition number {:.3e}); covariance uses a pseudo-inverse",
            fit.cov_flags.condition_number
        );
    }
    let means = fit.params.state_means()?;
    let thetas = fit.params.thetas();
    println!("state  lambda_shots  nu_shots  lambda_touches  nu_touches  mean_shots  mean_touches  theta");
    for (k, m) in fit.params.marginals().iter().enumerate() {
        println!(
            "{:>5}  {:>12.4}  {:>8.4}  {:>14.4}  {:>10.4}  {:>10.4}  {:>12.4}  {}",
            k + 1,
            m[0].lambda(),
            m[0].nu(),
            m[1].lambda(),
            m[1].nu(),
            means[k][0],
            means[k][1],
            thetas.get(k).map_or("-".to_string(), |t| format!("{t:.4}"))
        );
    }
    Ok(())
}

fn cmd_select(a: SelectArgs) -> CliResult<()> {
    let cfg = read_config(a.config.as_deref())?;
    let settings = multi_start_settings(&cfg, a.starts, a.seed)?;
    if a.states.is_empty() || a.copulas.is_empty() {
        return Err(config_err("need at least one state count and one copula"));
    }
    let data = load_dataset(&a.data, &a.covariates, None)?;
    let results = select_models(&data, &a.states, &a.copulas, &settings);

    let mut header = vec!["states".to_string()];
    for f in &a.copulas {
        header.push(format!("{f}_aic"));
        header.push(format!("{f}_bic"));
    }
    let mut rows = vec![];
    for &n in &a.states {
        let mut row = vec![n.to_string()];
        for &f in &a.copulas {
            let (_, _, r) = results
                .iter()
                .find(|(rn, rf, _)| *rn == n && *rf == f)
                .expect("every grid cell is reported");
            match r {
                Ok(s) => {
                    row.push(format!("{:.2}", s.aic));
                    row.push(format!("{:.2}", s.bic));
                }
                Err(e) => {
                    eprintln!("{n} states, {f}: {e}");
                    row.push(String::new());
                    row.push(String::new());
                }
            }
        }
        rows.push(row);
    }
    write_table(&a.out, &header, &rows)?;
    for r in std::iter::once(&header).chain(&rows) {
        println!("{}", r.join(","));
    }
    if results.iter().all(|(_, _, r)| r.is_err()) {
        return Err(CliError::Core(Error::Fit("no model in the grid could be fitted".into())));
    }
    Ok(())
}

fn model_and_data(model: &Path, data: &Path) -> CliResult<(FitResult, Dataset)> {
    let fit = load_model(model)?;
    let data = load_dataset_for(data, &fit.spec)?;
    Ok((fit, data))
}

fn cmd_decode(a: DecodeArgs) -> CliResult<()> {
    let (fit, data) = model_and_data(&a.model, &a.data)?;
    let rank = touch_ranks(&fit.params)?;
    let matches: Vec<_> = match &a.match_id {
        Some(id) => vec![data
            .get(id)
            .ok_or_else(|| config_err(format!("no match '{id}' in {}", a.data.display())))?],
        None => data.matches().iter().collect(),
    };
    let header: Vec<String> = ["match_id", "minute", "shots", "touches", "state"]
        .map(String::from)
        .to_vec();
    let mut rows = vec![];
    for m in matches {
        let d = viterbi(&fit.params, m)?;
        for (t, s) in d.states.iter().enumerate() {
            rows.push(vec![
                m.match_id.clone(),
                m.minutes[t].to_string(),
                m.counts[t][0].to_string(),
                m.counts[t][1].to_string(),
                (rank[*s] + 1).to_string(),
            ]);
        }
    }
    write_table(&a.out, &header, &rows)?;
    Ok(())
}

fn cmd_profile(a: ProfileArgs) -> CliResult<()> {
    let fit = load_model(&a.model)?;
    let rank = touch_ranks(&fit.params)?;
    let profile = covariate_profile(&fit.spec, &fit.params, &a.sweep, &a.grid.0, &a.fix)?;
    let header: Vec<String> = [a.sweep.clone(), "state".into(), "probability".into()].to_vec();
    let mut rows = vec![];
    for p in &profile {
        let mut by_rank = vec![0.0; rank.len()];
        for (s, v) in p.stationary.iter().enumerate() {
            by_rank[rank[s]] = *v;
        }
        for (k, v) in by_rank.iter().enumerate() {
            rows.push(vec![fmt(p.value), (k + 1).to_string(), fmt(*v)]);
        }
    }
    write_table(&a.out, &header, &rows)?;
    Ok(())
}

fn cmd_curves(a: CurvesArgs) -> CliResult<()> {
    let fit = load_model(&a.model)?;
    let rank = touch_ranks(&fit.params)?;
    let points = transition_curve_ci(&fit, &a.sweep, &a.grid.0, &a.fix, a.draws, a.seed)?;
    let header: Vec<String> = [a.sweep.as_str(), "from", "to", "estimate", "lower", "upper"]
        .map(String::from)
        .to_vec();
    let mut rows: Vec<(f64, usize, usize, Vec<String>)> = points
        .iter()
        .map(|p| {
            let (from, to) = (rank[p.from] + 1, rank[p.to] + 1);
            (
                p.value,
                from,
                to,
                vec![
                    fmt(p.value),
                    from.to_string(),
                    to.to_string(),
                    fmt(p.estimate),
                    fmt(p.lower),
                    fmt(p.upper),
                ],
            )
        })
        .collect();
    rows.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let rows: Vec<Vec<String>> = rows.into_iter().map(|r| r.3).collect();
    write_table(&a.out, &header, &rows)?;
    Ok(())
}

fn cmd_pmf(a: PmfArgs) -> CliResult<()> {
    let fit = load_model(&a.model)?;
    let rank = touch_ranks(&fit.params)?;
    let tables = fit.params.emission_tables(a.max_shots, a.max_touches)?;
    let mut order: Vec<usize> = (0..rank.len()).collect();
    order.sort_by_key(|&s| rank[s]);
    let header: Vec<String> = ["state", "shots", "touches", "probability"].map(String::from).to_vec();
    let mut rows = vec![];
    for s in order {
        for (y1, row) in tables[s].iter().enumerate() {
            for (y2, p) in row.iter().enumerate() {
                rows.push(vec![
                    (rank[s] + 1).to_string(),
                    y1.to_string(),
                    y2.to_string(),
                    fmt(*p),
                ]);
            }
        }
    }
    write_table(&a.out, &header, &rows)?;
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> CliResult<()> {
    let fit = load_model(&a.model)?;
    let generator = match &a.generator {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
            toml::from_str::<CovariateGenerator>(&text)
                .map_err(|e| config_err(format!("{}: {e}", path.display())))?
        }
        None => CovariateGenerator::default(),
    };
    if a.matches == 0 || a.minutes == 0 {
        return Err(config_err("--matches and --minutes must be positive"));
    }
    let rank = touch_ranks(&fit.params)?;
    let sims = simulate_matches(&fit.spec, &fit.params, a.matches, a.minutes, &generator, a.seed)?;
    let header: Vec<String> = [
        "match_id",
        "minute",
        "shots",
        "touches",
        "score_diff",
        "home",
        "opp_market_value",
        "state",
    ]
    .map(String::from)
    .to_vec();
    let constant = |name: &str| -> String {
        generator
            .constants
            .get(name)
            .copied()
            .or_else(|| CovariateGenerator::default().constants.get(name).copied())
            .map_or(String::new(), fmt)
    };
    let (home, market) = (constant("home"), constant("opp_market_value"));
    let mut rows = vec![];
    for s in &sims {
        let m = &s.series;
        for t in 0..m.len() {
            rows.push(vec![
                m.match_id.clone(),
                m.minutes[t].to_string(),
                m.counts[t][0].to_string(),
                m.counts[t][1].to_string(),
                s.score_diff[t].to_string(),
                home.clone(),
                market.clone(),
                (rank[s.states[t]] + 1).to_string(),
            ]);
        }
    }
    write_table(&a.out, &header, &rows)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Select(a) => cmd_select(a),
        Command::Decode(a) => cmd_decode(a),
        Command::Profile(a) => cmd_profile(a),
        Command::Curves(a) => cmd_curves(a),
        Command::Pmf(a) => cmd_pmf(a),
        Command::Simulate(a) => cmd_simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
