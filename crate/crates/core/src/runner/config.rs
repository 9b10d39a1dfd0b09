use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{RunnerError, Variant};
use crate::retrieval::Similarity;

/// Where masked re-retrieval looks for documents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    #[default]
    FullCorpus,
    Pool,
}

fn tenths() -> Vec<f64> {
    (1..=10).map(|i| f64::from(i) / 10.0).collect()
}

/// Hyperparameter grids. Every list must be non-empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Sun size for PRF-ECLIPSE.
    pub k_plus: Vec<usize>,
    /// Sun size for standard PRF DIME.
    pub dime_k_plus: Vec<usize>,
    pub k_minus: Vec<usize>,
    pub retained_fraction: Vec<f64>,
    pub pool_size: Vec<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            alpha: tenths(),
            beta: tenths(),
            k_plus: (2..=14).collect(),
            dime_k_plus: vec![1],
            k_minus: (2..=6).collect(),
            retained_fraction: tenths(),
            pool_size: vec![1000],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    /// Size of the bottom window of the pool the moon documents are drawn from.
    pub window: usize,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_depth() -> usize {
    1000
}
fn default_tag() -> String {
    "dense".into()
}
fn default_cutoff() -> usize {
    crate::metrics::DEFAULT_NDCG_CUTOFF
}
fn default_threshold() -> u32 {
    crate::metrics::DEFAULT_GRADED_THRESHOLD
}
fn default_alpha() -> f64 {
    crate::stats::SIGNIFICANCE_LEVEL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub queries: PathBuf,
    pub corpus: PathBuf,
    pub qrels: PathBuf,
    /// LLM answer embeddings keyed by query id; required by the LLM variants.
    #[serde(default)]
    pub answers: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub similarity: Similarity,
    #[serde(default)]
    pub scope: Scope,
    /// Documents written per query in every run file.
    #[serde(default = "default_depth")]
    pub depth: usize,
    /// Run tag (sixth column of the run file).
    #[serde(default = "default_tag")]
    pub tag: String,
    #[serde(default = "default_cutoff")]
    pub ndcg_cutoff: usize,
    #[serde(default = "default_threshold")]
    pub relevance_threshold: u32,
    #[serde(default = "default_alpha")]
    pub significance_level: f64,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub sampling: Option<SamplingConfig>,
}

impl ExperimentConfig {
    pub fn new(queries: impl Into<PathBuf>, corpus: impl Into<PathBuf>, qrels: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            queries: queries.into(),
            corpus: corpus.into(),
            qrels: qrels.into(),
            answers: None,
            output_dir: default_output_dir(),
            similarity: Similarity::default(),
            scope: Scope::default(),
            depth: default_depth(),
            tag: default_tag(),
            ndcg_cutoff: default_cutoff(),
            relevance_threshold: default_threshold(),
            significance_level: default_alpha(),
            grid: GridConfig::default(),
            sampling: None,
        }
    }

    /// Parses a TOML config; relative paths resolve against the file's directory.
    pub fn from_file(path: &Path) -> Result<Self, RunnerError> {
        let text = fs::read_to_string(path).map_err(|e| RunnerError::io(path, e))?;
        let mut config: ExperimentConfig = toml::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.queries);
        resolve(&mut config.corpus);
        resolve(&mut config.qrels);
        resolve(&mut config.output_dir);
        if let Some(a) = config.answers.as_mut() {
            resolve(a);
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Static checks: grids, scalar settings and input paths.
    pub fn validate(&self) -> Result<(), RunnerError> {
        let bad = |msg: String| Err(RunnerError::Config(msg));
        let g = &self.grid;
        for (name, empty) in [
            ("alpha", g.alpha.is_empty()),
            ("beta", g.beta.is_empty()),
            ("k_plus", g.k_plus.is_empty()),
            ("dime_k_plus", g.dime_k_plus.is_empty()),
            ("k_minus", g.k_minus.is_empty()),
            ("retained_fraction", g.retained_fraction.is_empty()),
            ("pool_size", g.pool_size.is_empty()),
        ] {
            if empty {
                return bad(format!("grid.{name} must not be empty"));
            }
        }
        if let Some(a) = g.alpha.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
            return bad(format!("grid.alpha values must be positive, got {a}"));
        }
        if let Some(b) = g.beta.iter().find(|b| !(**b >= 0.0 && b.is_finite())) {
            return bad(format!("grid.beta values must be non-negative, got {b}"));
        }
        if let Some(f) = g.retained_fraction.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return bad(format!("grid.retained_fraction values must lie in (0, 1], got {f}"));
        }
        for (name, values) in [
            ("k_plus", &g.k_plus),
            ("dime_k_plus", &g.dime_k_plus),
            ("k_minus", &g.k_minus),
            ("pool_size", &g.pool_size),
        ] {
            if values.contains(&0) {
                return bad(format!("grid.{name} values must be positive"));
            }
        }
        if self.depth == 0 {
            return bad("depth must be positive".into());
        }
        if self.ndcg_cutoff == 0 {
            return bad("ndcg_cutoff must be positive".into());
        }
        if !(self.significance_level > 0.0 && self.significance_level < 1.0) {
            return bad(format!("significance_level must lie in (0, 1), got {}", self.significance_level));
        }
        if self.tag.is_empty() || self.tag.chars().any(char::is_whitespace) {
            return bad(format!("tag {:?} must be a single non-empty token", self.tag));
        }
        if let Some(s) = &self.sampling {
            if s.trials < 2 {
                return bad(format!("sampling.trials must be at least 2, got {}", s.trials));
            }
            if s.window == 0 {
                return bad("sampling.window must be positive".into());
            }
        }
        for (name, path) in [("queries", &self.queries), ("corpus", &self.corpus), ("qrels", &self.qrels)] {
            if path.as_os_str().is_empty() {
                return bad(format!("{name} path is empty"));
            }
            if !path.is_file() {
                return bad(format!("{name} file {} does not exist", path.display()));
            }
        }
        if let Some(a) = &self.answers {
            if !a.is_file() {
                return bad(format!("answers file {} does not exist", a.display()));
            }
        }
        Ok(())
    }

    /// Checks that every grid combination used by `variant` is a valid configuration.
    pub fn validate_for(&self, variant: Variant) -> Result<(), RunnerError> {
        if variant.needs_answers() && self.answers.is_none() {
            return Err(RunnerError::Config(format!("{variant} needs an `answers` embedding file")));
        }
        let g = &self.grid;
        for &pool in &g.pool_size {
            let k_minus = if variant.uses_moon() { g.k_minus.iter().copied().max().unwrap_or(0) } else { 0 };
            if variant.uses_moon() && k_minus >= pool {
                return Err(RunnerError::Config(format!(
                    "pool_size {pool} must exceed k_minus {k_minus}"
                )));
            }
            if variant.uses_prf_sun() {
                let k_plus = self.k_plus_grid(variant).iter().copied().max().unwrap_or(0);
                if k_plus + k_minus >= pool {
                    return Err(RunnerError::Config(format!(
                        "pool_size {pool} must exceed k_plus + k_minus = {}",
                        k_plus + k_minus
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn k_plus_grid(&self, variant: Variant) -> &[usize] {
        match variant {
            Variant::PrfDime => &self.grid.dime_k_plus,
            _ => &self.grid.k_plus,
        }
    }
}
