use std::path::{Path, PathBuf};

use balancekit::effects::{Estimand, Estimator};
use balancekit::nuisance::{OutcomeConfig, PropensityConfig};
use balancekit::pipeline::{AnalysisConfig, BalanceConfig};
use balancekit::sim::{DgpRef, MonteCarloConfig, NamedAnalysis};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::CliError;

/// Configuration shared by `estimate` and `balance`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// CSV file, relative to the config file's directory.
    pub input: PathBuf,
    #[serde(default = "default_treatment")]
    pub treatment: String,
    #[serde(default = "default_response")]
    pub response: String,
    pub propensity: PropensityConfig,
    #[serde(default)]
    pub outcome: Option<OutcomeConfig>,
    #[serde(default)]
    pub estimators: Option<Vec<Estimator>>,
    #[serde(default)]
    pub estimand: Option<Estimand>,
    #[serde(default = "default_true")]
    pub scale_response: bool,
    #[serde(default)]
    pub balance: Option<BalanceConfig>,
    #[serde(default)]
    pub seed: u64,
    /// Report directory, relative to the config file; `--output` overrides it.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_treatment() -> String {
    "z".into()
}

fn default_response() -> String {
    "r".into()
}

fn default_true() -> bool {
    true
}

impl RunConfig {
    pub fn analysis(&self, with_balance: bool) -> AnalysisConfig {
        let balance = if with_balance {
            Some(self.balance.clone().unwrap_or_default())
        } else {
            self.balance.clone()
        };
        AnalysisConfig {
            propensity: self.propensity.clone(),
            outcome: self.outcome.clone(),
            estimators: self.estimators.clone().unwrap_or_else(|| {
                if with_balance {
                    Vec::new()
                } else {
                    vec![Estimator::Aipw, Estimator::Tmle]
                }
            }),
            estimand: self.estimand.unwrap_or(Estimand::Treated),
            scale_response: self.scale_response,
            balance,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    /// A bundled name (`bench1`, `bench1c`, `bench3`) or an inline definition.
    pub dgp: DgpRef,
    pub n: usize,
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    pub analyses: Vec<NamedAnalysis>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl SimulateConfig {
    pub fn monte_carlo(&self) -> MonteCarloConfig {
        MonteCarloConfig {
            dgp: self.dgp.clone(),
            n: self.n,
            reps: self.reps,
            seed: self.seed,
            analyses: self.analyses.clone(),
        }
    }
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))
}

/// Resolves `p` against the directory holding the config file.
pub fn relative_to(config: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        config.parent().unwrap_or_else(|| Path::new(".")).join(p)
    }
}
