//! CSV ingestion, versioned model files, and CSV table output.
//!
//! Every file is written to a temporary sibling first and renamed into place.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cmp::CmpParams;
use crate::copula::CopulaFamily;
use crate::data::{Dataset, MatchSeries};
use crate::error::{Error, Result};
use crate::estimation::{CovarianceFlags, FitResult};
use crate::model::{ModelParams, ModelSpec, Standardization, TransitionCoefficients};

/// Columns every input file must provide.
pub const REQUIRED_COLUMNS: [&str; 4] = ["match_id", "minute", "shots", "touches"];
/// Covariates the input format knows about.
pub const KNOWN_COVARIATES: [&str; 4] = ["opp_market_value", "score_diff", "home", "minute"];
/// Covariates passed through unscaled.
pub const BINARY_COVARIATES: [&str; 1] = ["home"];
pub const SCHEMA_VERSION: u32 = 1;

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Mean and sample standard deviation; a constant column gets sd 1.
pub fn column_standardization(values: &[f64]) -> Standardization {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let sd = var.sqrt();
    Standardization {
        mean,
        sd: if sd > 0.0 && sd.is_finite() { sd } else { 1.0 },
    }
}

struct RawRow {
    line: u64,
    match_id: String,
    minute: i64,
    counts: [u64; 2],
    covariates: Vec<f64>,
}

/// Reads a minute-level CSV into a dataset.
///
/// `covariates` selects the transition covariates in order. Statistics for
/// standardization are computed over all rows unless `standardization` is
/// given (e.g. taken from a fitted model), in which case those are reused.
pub fn load_dataset(
    path: impl AsRef<Path>,
    covariates: &[String],
    standardization: Option<&[Standardization]>,
) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(path, 0, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let mut index = HashMap::new();
    for name in REQUIRED_COLUMNS {
        let i = column(name).ok_or_else(|| parse_err(path, 1, format!("missing column '{name}'")))?;
        index.insert(name, i);
    }
    let mut cov_index = Vec::with_capacity(covariates.len());
    for (k, name) in covariates.iter().enumerate() {
        if covariates[..k].contains(name) {
            return Err(parse_err(path, 1, format!("covariate '{name}' selected twice")));
        }
        let i = column(name).ok_or_else(|| {
            parse_err(path, 1, format!("missing column '{name}' for the selected covariate"))
        })?;
        cov_index.push(i);
    }
    if let Some(s) = standardization {
        if s.len() != covariates.len() {
            return Err(Error::Data(format!(
                "{} standardization entries for {} covariates",
                s.len(),
                covariates.len()
            )));
        }
    }

    let mut rows = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let line = k as u64 + 2;
        let record = record.map_err(|e| parse_err(path, line, e.to_string()))?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let match_id = field(index["match_id"]).to_string();
        if match_id.is_empty() {
            return Err(parse_err(path, line, "empty match_id"));
        }
        let minute: i64 = field(index["minute"])
            .parse()
            .map_err(|_| parse_err(path, line, format!("minute '{}' is not an integer", field(index["minute"]))))?;
        let mut counts = [0u64; 2];
        for (c, name) in counts.iter_mut().zip(["shots", "touches"]) {
            let raw = field(index[name]);
            *c = raw.parse().map_err(|_| {
                parse_err(path, line, format!("{name} '{raw}' is not a nonnegative integer"))
            })?;
        }
        let mut cov = Vec::with_capacity(covariates.len());
        for (name, &i) in covariates.iter().zip(&cov_index) {
            let raw = field(i);
            let v: f64 = raw
                .parse()
                .map_err(|_| parse_err(path, line, format!("{name} '{raw}' is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, format!("{name} is not finite")));
            }
            if BINARY_COVARIATES.contains(&name.as_str()) && v != 0.0 && v != 1.0 {
                return Err(parse_err(path, line, format!("{name} must be 0 or 1, got {raw}")));
            }
            cov.push(v);
        }
        rows.push(RawRow {
            line,
            match_id,
            minute,
            counts,
            covariates: cov,
        });
    }
    if rows.is_empty() {
        return Err(parse_err(path, 1, "no data rows"));
    }

    let stats: Vec<Standardization> = match standardization {
        Some(s) => s.to_vec(),
        None => covariates
            .iter()
            .enumerate()
            .map(|(k, name)| {
                if BINARY_COVARIATES.contains(&name.as_str()) {
                    Standardization::IDENTITY
                } else {
                    let col: Vec<f64> = rows.iter().map(|r| r.covariates[k]).collect();
                    column_standardization(&col)
                }
            })
            .collect(),
    };

    // Group by match in order of first appearance.
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<RawRow>> = HashMap::new();
    for row in rows {
        let group = groups.entry(row.match_id.clone()).or_insert_with(|| {
            order.push(row.match_id.clone());
            Vec::new()
        });
        if let Some(prev) = group.last() {
            if row.minute == prev.minute {
                return Err(parse_err(
                    path,
                    row.line,
                    format!("duplicate minute {} in match '{}'", row.minute, row.match_id),
                ));
            }
            if row.minute < prev.minute {
                return Err(parse_err(
                    path,
                    row.line,
                    format!(
                        "minute {} follows minute {} in match '{}'; rows must be sorted by minute",
                        row.minute, prev.minute, row.match_id
                    ),
                ));
            }
        }
        group.push(row);
    }
    let mut matches = Vec::with_capacity(order.len());
    for id in order {
        let group = groups.remove(&id).expect("grouped above");
        let minutes = group.iter().map(|r| r.minute).collect();
        let counts = group.iter().map(|r| r.counts).collect();
        let x = group
            .iter()
            .map(|r| r.covariates.iter().zip(&stats).map(|(&v, s)| s.apply(v)).collect())
            .collect();
        matches.push(MatchSeries::new(id, minutes, counts, x)?);
    }
    Dataset::new(matches, covariates.to_vec(), stats)
}

/// Loads data for an existing model, reusing the model's covariates and scaling.
pub fn load_dataset_for(path: impl AsRef<Path>, spec: &ModelSpec) -> Result<Dataset> {
    load_dataset(path, spec.covariate_names(), Some(spec.standardization()))
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let name = path
        .file_name()
        .ok_or_else(|| Error::Data(format!("'{}' is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

/// Serializes rows (with a header from the row type) into an atomically written CSV.
pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let bytes = csv_bytes(rows)?;
    write_atomic(path, &bytes)
}

pub fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Data(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Data(e.to_string()))
}

/// Writes a CSV with an explicit header and string rows.
pub fn write_table(path: impl AsRef<Path>, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| Error::Data(e.to_string()))?;
    for r in rows {
        w.write_record(r).map_err(|e| Error::Data(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    write_atomic(path, &bytes)
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    schema_version: u32,
    model: ModelSection,
    fit: FitSection,
    states: Vec<StateSection>,
    initial: Vec<f64>,
    transitions: Vec<TransitionSection>,
    working: Vec<f64>,
    working_cov: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelSection {
    n_states: usize,
    copula: CopulaFamily,
    covariates: Vec<CovariateSection>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CovariateSection {
    name: String,
    mean: f64,
    sd: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct FitSection {
    loglik: f64,
    aic: f64,
    bic: f64,
    n_obs: usize,
    num_params: usize,
    converged: bool,
    iterations: usize,
    gradient_norm: f64,
    n_starts: usize,
    best_start_index: usize,
    /// NaN marks a failed start.
    start_logliks: Vec<f64>,
    cov_indefinite: bool,
    cov_pseudo_inverse: bool,
    cov_condition_number: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct StateSection {
    shots: CmpParams,
    touches: CmpParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    theta: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TransitionSection {
    from: usize,
    to: usize,
    /// Intercept followed by one slope per covariate.
    coefficients: Vec<f64>,
}

fn model_err(msg: impl Into<String>) -> Error {
    Error::ModelFile(msg.into())
}

/// Renders a fitted model as TOML. States and transitions use 1-based labels.
pub fn model_to_string(fit: &FitResult) -> Result<String> {
    let spec = &fit.spec;
    let p = &fit.params;
    let n = spec.n_states();
    let thetas = p.thetas();
    let file = ModelFile {
        schema_version: SCHEMA_VERSION,
        model: ModelSection {
            n_states: n,
            copula: spec.family(),
            covariates: spec
                .covariate_names()
                .iter()
                .zip(spec.standardization())
                .map(|(name, s)| CovariateSection {
                    name: name.clone(),
                    mean: s.mean,
                    sd: s.sd,
                })
                .collect(),
        },
        fit: FitSection {
            loglik: fit.loglik,
            aic: fit.aic,
            bic: fit.bic,
            n_obs: fit.n_obs,
            num_params: spec.num_params(),
            converged: fit.converged,
            iterations: fit.iterations,
            gradient_norm: fit.gradient_norm,
            n_starts: fit.n_starts,
            best_start_index: fit.best_start_index,
            start_logliks: fit.start_logliks.iter().map(|v| v.unwrap_or(f64::NAN)).collect(),
            cov_indefinite: fit.cov_flags.indefinite,
            cov_pseudo_inverse: fit.cov_flags.pseudo_inverse,
            cov_condition_number: fit.cov_flags.condition_number,
        },
        states: (0..n)
            .map(|k| StateSection {
                shots: p.marginals()[k][0],
                touches: p.marginals()[k][1],
                theta: thetas.get(k).copied(),
            })
            .collect(),
        initial: p.delta().to_vec(),
        transitions: (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| TransitionSection {
                from: i + 1,
                to: j + 1,
                coefficients: p.transitions().get(i, j).to_vec(),
            })
            .collect(),
        working: fit.working.clone(),
        working_cov: fit.working_cov.row_iter().map(|r| r.iter().copied().collect()).collect(),
    };
    toml::to_string(&file).map_err(|e| model_err(e.to_string()))
}

pub fn model_from_str(text: &str) -> Result<FitResult> {
    #[derive(Deserialize)]
    struct Version {
        schema_version: Option<u32>,
    }
    let version: Version = toml::from_str(text).map_err(|e| model_err(e.to_string()))?;
    match version.schema_version {
        Some(SCHEMA_VERSION) => {}
        Some(v) => return Err(model_err(format!("schema version {v} is not supported (expected {SCHEMA_VERSION})"))),
        None => return Err(model_err("missing schema_version")),
    }
    let file: ModelFile = toml::from_str(text).map_err(|e| model_err(e.to_string()))?;
    let m = &file.model;
    let spec = ModelSpec::new(
        m.n_states,
        m.copula,
        m.covariates.iter().map(|c| c.name.clone()).collect(),
        m.covariates
            .iter()
            .map(|c| Standardization { mean: c.mean, sd: c.sd })
            .collect(),
    )
    .map_err(|e| model_err(e.to_string()))?;
    let n = spec.n_states();
    if file.states.len() != n {
        return Err(model_err(format!("{} state sections for {n} states", file.states.len())));
    }
    let thetas = if spec.family().has_parameter() {
        file.states
            .iter()
            .enumerate()
            .map(|(k, s)| s.theta.ok_or_else(|| model_err(format!("state {} has no theta", k + 1))))
            .collect::<Result<Vec<_>>>()?
    } else {
        if file.states.iter().any(|s| s.theta.is_some()) {
            return Err(model_err("independence model must not carry theta"));
        }
        vec![]
    };
    let p = spec.n_covariates();
    let mut trans = TransitionCoefficients::zeros(n, p);
    let mut seen = vec![false; n * n];
    for t in &file.transitions {
        if t.from == 0 || t.to == 0 || t.from > n || t.to > n || t.from == t.to {
            return Err(model_err(format!("bad transition {} -> {}", t.from, t.to)));
        }
        if std::mem::replace(&mut seen[(t.from - 1) * n + t.to - 1], true) {
            return Err(model_err(format!("transition {} -> {} given twice", t.from, t.to)));
        }
        if t.coefficients.len() != p + 1 {
            return Err(model_err(format!(
                "transition {} -> {} has {} coefficients, expected {}",
                t.from,
                t.to,
                t.coefficients.len(),
                p + 1
            )));
        }
        trans.get_mut(t.from - 1, t.to - 1).copy_from_slice(&t.coefficients);
    }
    if file.transitions.len() != n * (n - 1) {
        return Err(model_err(format!(
            "{} transitions given, expected {}",
            file.transitions.len(),
            n * (n - 1)
        )));
    }
    let params = ModelParams::new(
        &spec,
        file.states.iter().map(|s| [s.shots, s.touches]).collect(),
        thetas,
        file.initial.clone(),
        trans,
    )
    .map_err(|e| model_err(e.to_string()))?;
    let dim = spec.num_params();
    if file.working.len() != dim {
        return Err(model_err(format!("working vector has {} entries, expected {dim}", file.working.len())));
    }
    if file.working_cov.len() != dim || file.working_cov.iter().any(|r| r.len() != dim) {
        return Err(model_err(format!("working_cov must be {dim}x{dim}")));
    }
    let working_cov = DMatrix::from_fn(dim, dim, |i, j| file.working_cov[i][j]);
    let f = file.fit;
    Ok(FitResult {
        spec,
        params,
        working: file.working,
        loglik: f.loglik,
        aic: f.aic,
        bic: f.bic,
        n_obs: f.n_obs,
        working_cov,
        cov_flags: CovarianceFlags {
            indefinite: f.cov_indefinite,
            pseudo_inverse: f.cov_pseudo_inverse,
            condition_number: f.cov_condition_number,
        },
        n_starts: f.n_starts,
        best_start_index: f.best_start_index,
        converged: f.converged,
        iterations: f.iterations,
        gradient_norm: f.gradient_norm,
        start_logliks: f.start_logliks.iter().map(|v| (!v.is_nan()).then_some(*v)).collect(),
    })
}

pub fn save_model(fit: &FitResult, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, model_to_string(fit)?.as_bytes())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<FitResult> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    model_from_str(&text).map_err(|e| match e {
        Error::ModelFile(m) => Error::ModelFile(format!("{}: {m}", path.display())),
        other => other,
    })
}
