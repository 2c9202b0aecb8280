//! Run configuration: a JSON file whose fields command-line flags override.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vcqr::basis::KnotPlacement;
use vcqr::hyptest::Calibration;
use vcqr::sim::SimulationConfig;

use crate::error::{CliError, CliResult};
use crate::ingest::Roles;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Stepwise search over candidate knots.
    #[default]
    Stepwise,
    /// Use the fixed knots as given.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnotConfig {
    pub selection: Selection,
    /// Candidate knots (index units) shared by all coefficients.
    pub candidates: Option<Vec<f64>>,
    /// Number of equispaced candidates; the guideline count when unset.
    pub candidate_count: Option<usize>,
    pub placement: KnotPlacement,
    /// Knots (index units) for `selection = fixed`.
    pub fixed_knots: Option<Vec<f64>>,
    /// Equispaced knot count for `selection = fixed` when no knots are listed.
    pub fixed_count: Option<usize>,
    pub max_iterations: usize,
    pub add_threshold: f64,
    pub delete_threshold: f64,
}

impl Default for KnotConfig {
    fn default() -> Self {
        Self {
            selection: Selection::Stepwise,
            candidates: None,
            candidate_count: None,
            placement: KnotPlacement::Equispaced,
            fixed_knots: None,
            fixed_count: None,
            max_iterations: 20,
            add_threshold: 0.95,
            delete_threshold: 0.90,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Emit {
    pub curves: bool,
    pub trace: bool,
    pub report: bool,
}

impl Default for Emit {
    fn default() -> Self {
        Self {
            curves: true,
            trace: true,
            report: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub response: Option<String>,
    pub index: Option<String>,
    pub covariates: Vec<String>,
    pub interactions: Vec<String>,
    pub taus: Vec<f64>,
    pub degree: usize,
    pub knots: KnotConfig,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub emit: Emit,
    pub min_rows: usize,
    pub calibration: Calibration,
    /// Rescale by an estimated linear scale before the score test.
    pub weighted: bool,
    /// Also run the bootstrap likelihood-ratio-type test.
    pub lr: bool,
    pub bootstrap: usize,
    pub simulation: SimulationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            response: None,
            index: None,
            covariates: Vec::new(),
            interactions: Vec::new(),
            taus: vec![0.5],
            degree: 1,
            knots: KnotConfig::default(),
            out_dir: PathBuf::from("."),
            seed: 0,
            emit: Emit::default(),
            min_rows: 10,
            calibration: Calibration::Auto,
            weighted: false,
            lr: false,
            bootstrap: 200,
            simulation: SimulationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))
    }

    /// Checks shared by `fit` and `test`.
    pub fn validate_data_run(&self) -> CliResult<()> {
        if self.input.is_none() {
            return Err(CliError::Config("no input file given".into()));
        }
        if self.response.is_none() || self.index.is_none() {
            return Err(CliError::Config("response and index columns are required".into()));
        }
        if self.taus.is_empty() {
            return Err(CliError::Config("no quantile levels given".into()));
        }
        if let Some(t) = self.taus.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(CliError::Config(format!("quantile level {t} is not in (0, 1)")));
        }
        if self.degree > 5 {
            return Err(CliError::Config(format!(
                "degree {} is not supported (max 5)",
                self.degree
            )));
        }
        for (name, v) in [
            ("add_threshold", self.knots.add_threshold),
            ("delete_threshold", self.knots.delete_threshold),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(CliError::Config(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if self.lr && self.bootstrap == 0 {
            return Err(CliError::Config(
                "the likelihood-ratio test needs --bootstrap ≥ 1".into(),
            ));
        }
        Ok(())
    }

    pub fn roles(&self) -> Roles {
        Roles {
            response: self.response.clone().unwrap_or_default(),
            index: self.index.clone().unwrap_or_default(),
            covariates: self.covariates.clone(),
            interactions: self.interactions.clone(),
        }
    }
}
