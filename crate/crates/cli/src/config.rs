//! Run configuration: a TOML file with `[scenario]`, `[priors]`,
//! `[sampler]`, `[output]`, `[data]` and `[summarize]` sections. Every key is
//! optional. Command-line flags take precedence over file values, which
//! take precedence over built-in defaults.

use std::path::{Path, PathBuf};

use cpjoint::model::{ModelKind, PriorConfig};
use cpjoint::sampler::SamplerConfig;
use cpjoint::sim::SimScenario;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModelChoice {
    #[default]
    Joint,
    LongitudinalOnly,
}

impl ModelChoice {
    pub fn kind(self) -> ModelKind {
        match self {
            ModelChoice::Joint => ModelKind::Joint,
            ModelChoice::LongitudinalOnly => ModelKind::LongitudinalOnly,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: ".".into() }
    }
}

/// Input files. Relative paths resolve against the working directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub longitudinal: Option<PathBuf>,
    pub survival: Option<PathBuf>,
    pub draws: Option<PathBuf>,
}

/// One survival covariate vector and its population weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateWeight {
    pub w: Vec<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SummarizeConfig {
    /// Event times at which mean curves are tabulated.
    pub t_star: Vec<f64>,
    /// Visit times of the mean curves; defaults to 21 points on `[0, t*]`.
    pub visit_times: Option<Vec<f64>>,
    /// Longitudinal covariate row used for every visit; defaults to zeros.
    pub x: Option<Vec<f64>>,
    /// Covariate distribution for the population mean change point.
    /// Defaults to the empirical distribution of the survival file when one
    /// is configured.
    pub covariates: Vec<CovariateWeight>,
    /// Absolute quadrature tolerance.
    pub tol: f64,
}

impl Default for SummarizeConfig {
    fn default() -> Self {
        Self {
            t_star: vec![0.5, 1.0, 1.5],
            visit_times: None,
            x: None,
            covariates: Vec::new(),
            tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelChoice,
    pub scenario: SimScenario,
    pub priors: PriorConfig,
    pub sampler: SamplerConfig,
    pub output: OutputConfig,
    pub data: DataConfig,
    pub summarize: SummarizeConfig,
}

/// Flag values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub model: Option<ModelChoice>,
    pub chains: Option<usize>,
    pub warmup: Option<usize>,
    pub samples: Option<usize>,
    /// Directory holding `longitudinal.csv` and `survival.csv`.
    pub data: Option<PathBuf>,
    pub draws: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
            .map_err(|e| CliError::config(format!("{}: {}", path.display(), e.message)))
    }

    /// `--seed` sets both the scenario and the sampler seed.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.scenario.seed = seed;
            self.sampler.seed = seed;
        }
        if let Some(out) = &o.out {
            self.output.dir = out.clone();
        }
        if let Some(m) = o.model {
            self.model = m;
        }
        if let Some(c) = o.chains {
            self.sampler.chains = c;
        }
        if let Some(w) = o.warmup {
            self.sampler.warmup = w;
        }
        if let Some(s) = o.samples {
            self.sampler.samples = s;
        }
        if let Some(dir) = &o.data {
            self.data.longitudinal = Some(dir.join("longitudinal.csv"));
            self.data.survival = Some(dir.join("survival.csv"));
        }
        if let Some(d) = &o.draws {
            self.data.draws = Some(d.clone());
        }
    }
}
