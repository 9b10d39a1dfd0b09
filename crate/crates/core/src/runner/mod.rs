//! Experiment orchestration: baseline retrieval, DIME/ECLIPSE runs, grid
//! sweeps, pool-size curves, bottom-window moon sampling and significance
//! tables.

mod config;
mod experiment;
mod report;

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{ExperimentConfig, GridConfig, SamplingConfig, Scope};
pub use experiment::{Experiment, QueryFailure, RunOutcome};
pub use report::{
    compare, write_sampling_report, write_sweep_report, Comparison, Curve, CurvePoint, SamplingReport,
    SignificanceTable, SweepReport, SweepRow,
};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("qrels queries missing from the query embeddings: {}", .0.join(", "))]
    MissingQueries(Vec<String>),
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Store(#[from] crate::store::StoreError),
    #[error(transparent)]
    Trec(#[from] crate::trec::TrecError),
    #[error(transparent)]
    Retrieval(#[from] crate::retrieval::RetrievalError),
    #[error(transparent)]
    Dime(#[from] crate::dime::DimeError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error(transparent)]
    Stats(#[from] crate::stats::StatsError),
    #[error(transparent)]
    Synth(#[from] crate::synth::SynthError),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl RunnerError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        RunnerError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, RunnerError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    PrfDime,
    LlmDime,
    PrfEclipse,
    LlmEclipse,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::PrfDime, Variant::LlmDime, Variant::PrfEclipse, Variant::LlmEclipse];

    pub fn name(self) -> &'static str {
        match self {
            Variant::PrfDime => "prf_dime",
            Variant::LlmDime => "llm_dime",
            Variant::PrfEclipse => "prf_eclipse",
            Variant::LlmEclipse => "llm_eclipse",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::PrfDime => "PRF DIME",
            Variant::LlmDime => "LLM DIME",
            Variant::PrfEclipse => "PRF ECLIPSE",
            Variant::LlmEclipse => "LLM ECLIPSE",
        }
    }

    pub fn uses_moon(self) -> bool {
        matches!(self, Variant::PrfEclipse | Variant::LlmEclipse)
    }

    pub fn uses_prf_sun(self) -> bool {
        matches!(self, Variant::PrfDime | Variant::PrfEclipse)
    }

    pub fn needs_answers(self) -> bool {
        !self.uses_prf_sun()
    }

    /// The standard DIME sharing this variant's sun.
    pub fn dime_counterpart(self) -> Variant {
        if self.uses_prf_sun() {
            Variant::PrfDime
        } else {
            Variant::LlmDime
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == norm)
            .ok_or_else(|| format!("unknown variant {s:?} (expected prf-dime, llm-dime, prf-eclipse or llm-eclipse)"))
    }
}

/// One hyperparameter setting. Fields a variant does not use are fixed:
/// standard DIME runs have `alpha = 1`, `beta = 0`, `k_minus = 0`, and the LLM
/// variants have `k_plus = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub alpha: f64,
    pub beta: f64,
    pub k_plus: usize,
    pub k_minus: usize,
    pub retained_fraction: f64,
    pub pool_size: usize,
}

impl GridPoint {
    pub fn normalized(mut self, variant: Variant) -> Self {
        if !variant.uses_moon() {
            self.alpha = 1.0;
            self.beta = 0.0;
            self.k_minus = 0;
        }
        if !variant.uses_prf_sun() {
            self.k_plus = 0;
        }
        self
    }

    pub fn validate(&self, variant: Variant) -> Result<()> {
        let bad = |msg: String| Err(RunnerError::Config(msg));
        if self.pool_size == 0 {
            return bad("pool_size must be positive".into());
        }
        if !(self.retained_fraction > 0.0 && self.retained_fraction <= 1.0) {
            return bad(format!("retained_fraction {} outside (0, 1]", self.retained_fraction));
        }
        if variant.uses_moon() {
            crate::dime::DimeConfig {
                variant: if variant.uses_prf_sun() {
                    crate::dime::SunSource::Prf
                } else {
                    crate::dime::SunSource::Llm
                },
                k_plus: self.k_plus,
                k_minus: self.k_minus,
                alpha: self.alpha,
                beta: self.beta,
                pool_size: self.pool_size,
                retained_fraction: self.retained_fraction,
            }
            .validate()?;
        } else if variant.uses_prf_sun() && (self.k_plus == 0 || self.k_plus >= self.pool_size) {
            return bad(format!(
                "k_plus must satisfy 0 < k_plus < pool_size (k_plus={}, pool_size={})",
                self.k_plus, self.pool_size
            ));
        }
        Ok(())
    }

    /// Stable file-name fragment.
    pub fn slug(&self) -> String {
        format!(
            "a{}_b{}_kp{}_km{}_f{}_k{}",
            self.alpha, self.beta, self.k_plus, self.k_minus, self.retained_fraction, self.pool_size
        )
    }
}
