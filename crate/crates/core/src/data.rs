use crate::error::{invalid, Result};
use crate::model::{ModelSpec, Standardization};

/// One match: bivariate counts `(shots, touches)` per minute and the
/// standardized covariates governing the transition into each minute.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchSeries {
    pub match_id: String,
    pub minutes: Vec<i64>,
    pub counts: Vec<[u64; 2]>,
    pub covariates: Vec<Vec<f64>>,
}

impl MatchSeries {
    pub fn new(
        match_id: impl Into<String>,
        minutes: Vec<i64>,
        counts: Vec<[u64; 2]>,
        covariates: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let match_id = match_id.into();
        if counts.is_empty() {
            return Err(invalid(format!("match '{match_id}' has no observations")));
        }
        if minutes.len() != counts.len() || covariates.len() != counts.len() {
            return Err(invalid(format!(
                "match '{match_id}': {} minutes, {} count rows, {} covariate rows",
                minutes.len(),
                counts.len(),
                covariates.len()
            )));
        }
        let p = covariates[0].len();
        if covariates.iter().any(|row| row.len() != p) {
            return Err(invalid(format!("match '{match_id}': ragged covariate rows")));
        }
        Ok(MatchSeries {
            match_id,
            minutes,
            counts,
            covariates,
        })
    }

    /// A match without covariates, minutes numbered from 1.
    pub fn from_counts(match_id: impl Into<String>, counts: Vec<[u64; 2]>) -> Result<Self> {
        let t = counts.len();
        MatchSeries::new(match_id, (1..=t as i64).collect(), counts, vec![vec![]; t])
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.first().map_or(0, Vec::len)
    }

    pub fn max_counts(&self) -> [u64; 2] {
        self.counts.iter().fold([0, 0], |m, y| [m[0].max(y[0]), m[1].max(y[1])])
    }
}

/// A collection of independent matches sharing one covariate layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    matches: Vec<MatchSeries>,
    covariate_names: Vec<String>,
    standardization: Vec<Standardization>,
}

impl Dataset {
    pub fn new(
        matches: Vec<MatchSeries>,
        covariate_names: Vec<String>,
        standardization: Vec<Standardization>,
    ) -> Result<Self> {
        if matches.is_empty() {
            return Err(invalid("dataset has no matches"));
        }
        if covariate_names.len() != standardization.len() {
            return Err(invalid("covariate names and standardization differ in length"));
        }
        for (i, m) in matches.iter().enumerate() {
            if m.n_covariates() != covariate_names.len() {
                return Err(invalid(format!(
                    "match '{}' has {} covariates, dataset declares {}",
                    m.match_id,
                    m.n_covariates(),
                    covariate_names.len()
                )));
            }
            if matches[..i].iter().any(|o| o.match_id == m.match_id) {
                return Err(invalid(format!("duplicate match id '{}'", m.match_id)));
            }
        }
        Ok(Dataset {
            matches,
            covariate_names,
            standardization,
        })
    }

    /// Dataset without covariates.
    pub fn from_matches(matches: Vec<MatchSeries>) -> Result<Self> {
        Dataset::new(matches, vec![], vec![])
    }

    pub fn matches(&self) -> &[MatchSeries] {
        &self.matches
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn standardization(&self) -> &[Standardization] {
        &self.standardization
    }

    pub fn n_obs(&self) -> usize {
        self.matches.iter().map(MatchSeries::len).sum()
    }

    pub fn max_counts(&self) -> [u64; 2] {
        self.matches
            .iter()
            .map(MatchSeries::max_counts)
            .fold([0, 0], |m, y| [m[0].max(y[0]), m[1].max(y[1])])
    }

    pub fn get(&self, match_id: &str) -> Option<&MatchSeries> {
        self.matches.iter().find(|m| m.match_id == match_id)
    }

    /// Checks that covariate columns and scaling agree with `spec`.
    pub fn check_compatible(&self, spec: &ModelSpec) -> Result<()> {
        if self.covariate_names != spec.covariate_names() {
            return Err(invalid(format!(
                "model expects covariates {:?}, data provides {:?}",
                spec.covariate_names(),
                self.covariate_names
            )));
        }
        if self.standardization != spec.standardization() {
            return Err(invalid(
                "data was standardized with different statistics than the model",
            ));
        }
        Ok(())
    }
}
