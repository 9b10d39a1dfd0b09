use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::report::{self, Curve, CurvePoint, SamplingReport, SweepReport, SweepRow};
use super::{ExperimentConfig, GridPoint, Result, RunnerError, Scope, Variant};
use crate::dime::{self, DimensionImportance};
use crate::metrics::{evaluate_run, MetricResult, RunMetrics};
use crate::retrieval::{self, CandidatePool, RerankScope};
use crate::store::{load_matrix, Embedding, EmbeddingMatrix, Format};
use crate::trec::{self, Qrels, RunEntry};

/// A query that could not be processed (for example, no LLM answer embedding).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryFailure {
    pub query_id: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub name: String,
    pub entries: Vec<RunEntry>,
    pub metrics: RunMetrics,
    pub failures: Vec<QueryFailure>,
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    name: &'a str,
    map: f64,
    ndcg: f64,
    per_query_ap: &'a BTreeMap<String, f64>,
    per_query_ndcg: &'a BTreeMap<String, f64>,
    undefined: &'a [String],
    failures: &'a [QueryFailure],
}

impl RunOutcome {
    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty()
    }

    /// Writes `<name>.run` and `<name>.metrics.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| RunnerError::io(dir, e))?;
        let run_path = dir.join(format!("{}.run", self.name));
        trec::write_run(&self.entries, &run_path)?;
        let metrics_path = dir.join(format!("{}.metrics.json", self.name));
        let body = MetricsFile {
            name: &self.name,
            map: self.metrics.ap.mean,
            ndcg: self.metrics.ndcg.mean,
            per_query_ap: &self.metrics.ap.per_query,
            per_query_ndcg: &self.metrics.ndcg.per_query,
            undefined: &self.metrics.undefined,
            failures: &self.failures,
        };
        fs::write(&metrics_path, serde_json::to_string_pretty(&body)?)
            .map_err(|e| RunnerError::io(&metrics_path, e))?;
        Ok(run_path)
    }
}

/// How the moon documents are chosen from a candidate pool.
#[derive(Debug, Clone, Copy)]
enum MoonSource {
    /// The last `k_minus` pool entries.
    Bottom,
    /// `k_minus` entries drawn without replacement from the last `window` entries.
    Sampled { window: usize, seed: u64, trial: u64 },
}

fn sampling_stream(seed: u64, trial: u64, query: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&trial.to_le_bytes());
    key[16..24].copy_from_slice(&query.to_le_bytes());
    key[24..].copy_from_slice(b"moonsamp");
    ChaCha8Rng::from_seed(key)
}

/// Removes repeated values keeping first occurrences; reports what was dropped.
fn dedup<T: PartialEq + Copy + std::fmt::Display>(name: &str, values: &[T], warnings: &mut Vec<String>) -> Vec<T> {
    let mut out: Vec<T> = Vec::with_capacity(values.len());
    for &v in values {
        if out.contains(&v) {
            let msg = format!("grid.{name}: duplicate value {v} ignored");
            warn!("{msg}");
            warnings.push(msg);
        } else {
            out.push(v);
        }
    }
    out
}

/// Loaded inputs for one experiment configuration.
pub struct Experiment {
    pub config: ExperimentConfig,
    queries: EmbeddingMatrix,
    corpus: EmbeddingMatrix,
    qrels: Qrels,
    answers: Option<EmbeddingMatrix>,
}

impl Experiment {
    /// Validates the config, then loads and cross-checks every input file.
    pub fn load(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let queries = load_matrix(&config.queries, Format::from_path(&config.queries))?;
        let corpus = load_matrix(&config.corpus, Format::from_path(&config.corpus))?;
        let qrels = trec::parse_qrels(&config.qrels)?;
        let answers = match &config.answers {
            Some(p) => Some(load_matrix(p, Format::from_path(p))?),
            None => None,
        };
        Self::from_parts(config, queries, corpus, qrels, answers)
    }

    /// Builds an experiment from in-memory inputs; input paths in `config` are not read.
    pub fn from_parts(
        config: ExperimentConfig,
        queries: EmbeddingMatrix,
        corpus: EmbeddingMatrix,
        qrels: Qrels,
        answers: Option<EmbeddingMatrix>,
    ) -> Result<Self> {
        if corpus.is_empty() {
            return Err(RunnerError::Config("corpus is empty".into()));
        }
        if queries.is_empty() {
            return Err(RunnerError::Config("query set is empty".into()));
        }
        if queries.dim() != corpus.dim() {
            return Err(RunnerError::Config(format!(
                "query dimension {} differs from corpus dimension {}",
                queries.dim(),
                corpus.dim()
            )));
        }
        if let Some(a) = &answers {
            if a.dim() != corpus.dim() {
                return Err(RunnerError::Config(format!(
                    "answer dimension {} differs from corpus dimension {}",
                    a.dim(),
                    corpus.dim()
                )));
            }
        }
        let missing: Vec<String> = qrels
            .query_ids()
            .filter(|q| queries.position(q).is_none())
            .map(str::to_owned)
            .collect();
        if !missing.is_empty() {
            return Err(RunnerError::MissingQueries(missing));
        }
        Ok(Experiment {
            config,
            queries,
            corpus,
            qrels,
            answers,
        })
    }

    pub fn queries(&self) -> &EmbeddingMatrix {
        &self.queries
    }

    pub fn corpus(&self) -> &EmbeddingMatrix {
        &self.corpus
    }

    pub fn qrels(&self) -> &Qrels {
        &self.qrels
    }

    /// Full-dimensional top-`size` pool for every query, in query order.
    pub fn candidate_pools(&self, size: usize) -> Result<Vec<CandidatePool>> {
        (0..self.queries.len())
            .into_par_iter()
            .map(|qi| {
                retrieval::top_k(
                    &self.queries.ids()[qi],
                    self.queries.row(qi),
                    &self.corpus,
                    size,
                    self.config.similarity,
                    None,
                )
                .map_err(RunnerError::from)
            })
            .collect()
    }

    pub fn evaluate(&self, entries: &[RunEntry]) -> Result<RunMetrics> {
        if entries.is_empty() {
            let zeros: BTreeMap<String, f64> = self.qrels.query_ids().map(|q| (q.to_owned(), 0.0)).collect();
            return Ok(RunMetrics {
                ap: MetricResult::from_per_query(zeros.clone()),
                ndcg: MetricResult::from_per_query(zeros),
                undefined: Vec::new(),
            });
        }
        Ok(evaluate_run(
            entries,
            &self.qrels,
            self.config.ndcg_cutoff,
            self.config.relevance_threshold,
        )?)
    }

    fn outcome(&self, name: String, rankings: Vec<std::result::Result<CandidatePool, QueryFailure>>) -> Result<RunOutcome> {
        let mut entries = Vec::new();
        let mut failures = Vec::new();
        for ranking in rankings {
            match ranking {
                Ok(pool) => entries.extend(pool.entries.into_iter().enumerate().map(|(i, e)| RunEntry {
                    query_id: pool.query_id.clone(),
                    doc_id: e.doc_id,
                    rank: i as u32 + 1,
                    score: e.score,
                    tag: self.config.tag.clone(),
                })),
                Err(f) => {
                    warn!("query {} skipped: {}", f.query_id, f.reason);
                    failures.push(f);
                }
            }
        }
        let metrics = self.evaluate(&entries)?;
        Ok(RunOutcome {
            name,
            entries,
            metrics,
            failures,
        })
    }

    /// Full-dimensional retrieval at the configured depth.
    pub fn run_baseline(&self) -> Result<RunOutcome> {
        let pools = self.candidate_pools(self.config.depth)?;
        self.outcome("baseline".into(), pools.into_iter().map(Ok).collect())
    }

    /// Checks a point against the pools actually available (the corpus may be smaller than `pool_size`).
    fn check_point(&self, variant: Variant, point: &GridPoint) -> Result<()> {
        point.validate(variant)?;
        if variant.needs_answers() && self.answers.is_none() {
            return Err(RunnerError::Config(format!("{variant} needs an `answers` embedding file")));
        }
        let effective = point.pool_size.min(self.corpus.len());
        let needed = point.k_plus + point.k_minus;
        if (variant.uses_moon() || variant.uses_prf_sun()) && needed >= effective {
            return Err(RunnerError::Config(format!(
                "pool of {effective} documents cannot hold k_plus + k_minus = {needed} with a margin"
            )));
        }
        Ok(())
    }

    fn importance(
        &self,
        qi: usize,
        variant: Variant,
        point: &GridPoint,
        pool: &CandidatePool,
        moon_source: MoonSource,
    ) -> Result<std::result::Result<DimensionImportance, QueryFailure>> {
        let qid = &self.queries.ids()[qi];
        let q = self.queries.row(qi);
        let sun: Embedding = if variant.uses_prf_sun() {
            dime::prf_centroid(pool, &self.corpus, point.k_plus)?
        } else {
            match self.answers.as_ref().and_then(|a| a.get(qid)) {
                Some(a) => Embedding::new(a.to_vec())?,
                None => {
                    return Ok(Err(QueryFailure {
                        query_id: qid.clone(),
                        reason: "no LLM answer embedding".into(),
                    }))
                }
            }
        };
        if !variant.uses_moon() {
            return Ok(Ok(dime::dime_score_standard(q, &sun)?));
        }
        let moon = match moon_source {
            MoonSource::Bottom => dime::moon_centroid(pool, &self.corpus, point.k_minus)?,
            MoonSource::Sampled { window, seed, trial } => {
                if window > pool.len() {
                    return Err(RunnerError::Config(format!(
                        "sampling window {window} exceeds pool of {} documents for {qid}",
                        pool.len()
                    )));
                }
                let start = pool.len() - window;
                let mut rng = sampling_stream(seed, trial, qi as u64);
                let mut picks = index::sample(&mut rng, window, point.k_minus).into_vec();
                // Bottom-up order, as the exact moon accumulates.
                picks.sort_unstable_by(|a, b| b.cmp(a));
                dime::centroid(picks.iter().map(|&p| pool.entries[start + p].doc_id.as_str()), &self.corpus)?
            }
        };
        Ok(Ok(dime::eclipse_score(q, &sun, &moon, point.alpha, point.beta)?))
    }

    fn rank_query(
        &self,
        qi: usize,
        variant: Variant,
        point: &GridPoint,
        pool: &CandidatePool,
        moon_source: MoonSource,
    ) -> Result<std::result::Result<CandidatePool, QueryFailure>> {
        let pool = pool.truncated(point.pool_size);
        let importance = match self.importance(qi, variant, point, &pool, moon_source)? {
            Ok(u) => u,
            Err(f) => return Ok(Err(f)),
        };
        let mask = dime::select_dimensions(&importance, point.retained_fraction)?;
        let scope = match self.config.scope {
            Scope::FullCorpus => RerankScope::FullCorpus,
            Scope::Pool => RerankScope::Pool(&pool),
        };
        Ok(Ok(retrieval::rerank(
            &self.queries.ids()[qi],
            self.queries.row(qi),
            &self.corpus,
            &mask,
            self.config.similarity,
            self.config.depth,
            scope,
        )?))
    }

    fn run_on_pools(
        &self,
        variant: Variant,
        point: &GridPoint,
        pools: &[CandidatePool],
        moon_source: MoonSource,
        name: String,
    ) -> Result<RunOutcome> {
        let point = point.normalized(variant);
        self.check_point(variant, &point)?;
        let rankings = pools
            .par_iter()
            .enumerate()
            .map(|(qi, pool)| self.rank_query(qi, variant, &point, pool, moon_source))
            .collect::<Result<Vec<_>>>()?;
        self.outcome(name, rankings)
    }

    /// One variant at one grid point: pool, sun (and moon), mask, masked re-retrieval.
    pub fn run_dime(&self, variant: Variant, point: &GridPoint) -> Result<RunOutcome> {
        let point = point.normalized(variant);
        self.check_point(variant, &point)?;
        let pools = self.candidate_pools(point.pool_size)?;
        self.run_on_pools(variant, &point, &pools, MoonSource::Bottom, format!("{variant}_{}", point.slug()))
    }

    /// Every grid point the variant uses, deduplicated, in a fixed order.
    pub fn grid_points(&self, variant: Variant) -> (Vec<GridPoint>, Vec<String>) {
        let g = &self.config.grid;
        let mut warnings = Vec::new();
        let pools = dedup("pool_size", &g.pool_size, &mut warnings);
        let fractions = dedup("retained_fraction", &g.retained_fraction, &mut warnings);
        let k_plus_name = if variant == Variant::PrfDime { "dime_k_plus" } else { "k_plus" };
        let k_plus = if variant.uses_prf_sun() {
            dedup(k_plus_name, self.config.k_plus_grid(variant), &mut warnings)
        } else {
            vec![0]
        };
        let (alphas, betas, k_minus) = if variant.uses_moon() {
            (
                dedup("alpha", &g.alpha, &mut warnings),
                dedup("beta", &g.beta, &mut warnings),
                dedup("k_minus", &g.k_minus, &mut warnings),
            )
        } else {
            (vec![1.0], vec![0.0], vec![0])
        };
        let mut points = Vec::new();
        for &pool_size in &pools {
            for &kp in &k_plus {
                for &km in &k_minus {
                    for &alpha in &alphas {
                        for &beta in &betas {
                            for &retained_fraction in &fractions {
                                points.push(GridPoint {
                                    alpha,
                                    beta,
                                    k_plus: kp,
                                    k_minus: km,
                                    retained_fraction,
                                    pool_size,
                                });
                            }
                        }
                    }
                }
            }
        }
        (points, warnings)
    }

    fn sweep_rows(&self, variant: Variant) -> Result<(Vec<SweepRow>, Vec<RunMetrics>, Vec<String>)> {
        self.config.validate_for(variant)?;
        let (points, warnings) = self.grid_points(variant);
        for p in &points {
            self.check_point(variant, p)?;
        }
        let max_pool = points.iter().map(|p| p.pool_size).max().unwrap_or(1);
        let pools = self.candidate_pools(max_pool)?;
        let mut rows = Vec::with_capacity(points.len());
        let mut per_query = Vec::with_capacity(points.len());
        for (index, point) in points.iter().enumerate() {
            let outcome = self.run_on_pools(variant, point, &pools, MoonSource::Bottom, variant.to_string())?;
            rows.push(SweepRow {
                index,
                point: *point,
                map: outcome.metrics.ap.mean,
                ndcg: outcome.metrics.ndcg.mean,
                failed_queries: outcome.failures.len(),
            });
            per_query.push(outcome.metrics);
        }
        Ok((rows, per_query, warnings))
    }

    /// Evaluates every grid point, picks the best row per metric, builds the
    /// metric-vs-fraction curves per pool size and tests the best rows against
    /// the baseline and (for ECLIPSE) the best standard DIME.
    pub fn sweep(&self, variant: Variant) -> Result<SweepReport> {
        let (rows, per_query, warnings) = self.sweep_rows(variant)?;
        let baseline = self.run_baseline()?;
        let counterpart = if variant.uses_moon() {
            let (c_rows, c_metrics, _) = self.sweep_rows(variant.dime_counterpart())?;
            let ap = report::best_by(&c_rows, |r| r.map);
            let nd = report::best_by(&c_rows, |r| r.ndcg);
            Some((c_rows[ap].clone(), c_metrics[ap].ap.clone(), c_rows[nd].clone(), c_metrics[nd].ndcg.clone()))
        } else {
            None
        };

        let best_ap = report::best_by(&rows, |r| r.map);
        let best_ndcg = report::best_by(&rows, |r| r.ndcg);
        let alpha = self.config.significance_level;
        let dime_label = variant.dime_counterpart().label().to_string();

        let mut ap_baselines = vec![("Baseline".to_string(), baseline.metrics.ap.clone())];
        let mut ndcg_baselines = vec![("Baseline".to_string(), baseline.metrics.ndcg.clone())];
        if let Some((_, ap, _, nd)) = &counterpart {
            ap_baselines.push((dime_label.clone(), ap.clone()));
            ndcg_baselines.push((dime_label.clone(), nd.clone()));
        }
        let system = variant.label().to_string();
        let significance_ap = report::compare(
            "AP",
            &ap_baselines,
            &[(system.clone(), per_query[best_ap].ap.clone())],
            alpha,
        )?;
        let significance_ndcg = report::compare(
            &format!("nDCG@{}", self.config.ndcg_cutoff),
            &ndcg_baselines,
            &[(system, per_query[best_ndcg].ndcg.clone())],
            alpha,
        )?;

        let mut pool_sizes: Vec<usize> = rows.iter().map(|r| r.point.pool_size).collect();
        pool_sizes.sort_unstable();
        pool_sizes.dedup();
        let curves = pool_sizes
            .into_iter()
            .map(|pool_size| {
                let mut fractions: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.point.pool_size == pool_size)
                    .map(|r| r.point.retained_fraction)
                    .collect();
                fractions.sort_unstable_by(f64::total_cmp);
                fractions.dedup();
                let points = fractions
                    .into_iter()
                    .map(|f| {
                        let at = rows.iter().filter(|r| r.point.pool_size == pool_size && r.point.retained_fraction == f);
                        let (map, ndcg) = at.fold((f64::NEG_INFINITY, f64::NEG_INFINITY), |(m, n), r| {
                            (m.max(r.map), n.max(r.ndcg))
                        });
                        CurvePoint {
                            retained_fraction: f,
                            map,
                            ndcg,
                        }
                    })
                    .collect();
                Curve { pool_size, points }
            })
            .collect();

        Ok(SweepReport {
            variant,
            rows,
            per_query,
            best_ap,
            best_ndcg,
            baseline_map: baseline.metrics.ap.mean,
            baseline_ndcg: baseline.metrics.ndcg.mean,
            counterpart_best_ap: counterpart.as_ref().map(|c| c.0.clone()),
            counterpart_best_ndcg: counterpart.as_ref().map(|c| c.2.clone()),
            curves,
            significance_ap,
            significance_ndcg,
            warnings,
        })
    }

    /// Repeats a PRF-ECLIPSE run with moons sampled from the bottom window of
    /// each pool, and reports mean and standard deviation across trials next to
    /// the exact bottom-`k_minus` run.
    pub fn sample_bottom(&self, point: &GridPoint) -> Result<SamplingReport> {
        let variant = Variant::PrfEclipse;
        let sampling = self
            .config
            .sampling
            .clone()
            .ok_or_else(|| RunnerError::Config("sample-bottom needs a [sampling] section".into()))?;
        let point = point.normalized(variant);
        self.check_point(variant, &point)?;
        if sampling.trials < 2 {
            return Err(RunnerError::Config(format!("sampling.trials must be at least 2, got {}", sampling.trials)));
        }
        if sampling.window < point.k_minus {
            return Err(RunnerError::Config(format!(
                "sampling window {} is smaller than k_minus {}",
                sampling.window, point.k_minus
            )));
        }
        if sampling.window > point.pool_size {
            return Err(RunnerError::Config(format!(
                "sampling window {} exceeds pool_size {}",
                sampling.window, point.pool_size
            )));
        }
        let pools = self.candidate_pools(point.pool_size)?;
        let exact = self.run_on_pools(variant, &point, &pools, MoonSource::Bottom, "exact".into())?;
        let mut trial_map = Vec::with_capacity(sampling.trials);
        let mut trial_ndcg = Vec::with_capacity(sampling.trials);
        for trial in 0..sampling.trials {
            let source = MoonSource::Sampled {
                window: sampling.window,
                seed: sampling.seed,
                trial: trial as u64,
            };
            let outcome = self.run_on_pools(variant, &point, &pools, source, format!("trial{trial}"))?;
            trial_map.push(outcome.metrics.ap.mean);
            trial_ndcg.push(outcome.metrics.ndcg.mean);
        }
        Ok(SamplingReport::new(
            point,
            sampling,
            trial_map,
            trial_ndcg,
            exact.metrics.ap.mean,
            exact.metrics.ndcg.mean,
        ))
    }
}
