use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{GridPoint, Result, RunnerError, SamplingConfig, Variant};
use crate::metrics::{MetricResult, RunMetrics};
use crate::stats::{compare_systems, holm_bonferroni, StatsError, TestOutcome};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub index: usize,
    pub point: GridPoint,
    pub map: f64,
    pub ndcg: f64,
    pub failed_queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub retained_fraction: f64,
    pub map: f64,
    pub ndcg: f64,
}

/// Best metric over all other hyperparameters at each retained fraction, for one pool size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Curve {
    pub pool_size: usize,
    pub points: Vec<CurvePoint>,
}

/// First index with the largest value.
pub(crate) fn best_by(rows: &[SweepRow], metric: impl Fn(&SweepRow) -> f64) -> usize {
    let mut best = 0;
    for (i, r) in rows.iter().enumerate() {
        if metric(r) > metric(&rows[best]) {
            best = i;
        }
    }
    best
}

/// One system-vs-baseline test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub system: String,
    pub baseline: String,
    pub letter: char,
    /// `None` when the paired differences were all zero.
    pub outcome: Option<TestOutcome>,
    /// Significant after Holm correction over the table's comparisons.
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignificanceTable {
    pub metric: String,
    pub alpha: f64,
    /// `(name, letter, mean)`.
    pub baselines: Vec<(String, char, f64)>,
    /// `(name, mean)`.
    pub systems: Vec<(String, f64)>,
    pub comparisons: Vec<Comparison>,
}

/// Tests every system against every baseline (one-sided, system better) and
/// applies Holm correction over the whole family. Baselines get letters
/// `a`, `b`, ... in the order given.
pub fn compare(
    metric: &str,
    baselines: &[(String, MetricResult)],
    systems: &[(String, MetricResult)],
    alpha: f64,
) -> Result<SignificanceTable> {
    let mut comparisons = Vec::new();
    for (system, sys_metric) in systems {
        for (i, (baseline, base_metric)) in baselines.iter().enumerate() {
            let outcome = match compare_systems(base_metric, sys_metric, alpha) {
                Ok(o) => Some(o),
                Err(StatsError::Degenerate(_)) => None,
                Err(e) => return Err(e.into()),
            };
            comparisons.push(Comparison {
                system: system.clone(),
                baseline: baseline.clone(),
                letter: (b'a' + (i % 26) as u8) as char,
                outcome,
                significant: false,
            });
        }
    }
    let tested: Vec<usize> = (0..comparisons.len()).filter(|&i| comparisons[i].outcome.is_some()).collect();
    let p: Vec<f64> = tested.iter().map(|&i| comparisons[i].outcome.unwrap().p_value).collect();
    if !p.is_empty() {
        for (&i, reject) in tested.iter().zip(holm_bonferroni(&p, alpha)?) {
            comparisons[i].significant = reject;
        }
    }
    Ok(SignificanceTable {
        metric: metric.to_owned(),
        alpha,
        baselines: baselines
            .iter()
            .enumerate()
            .map(|(i, (n, m))| (n.clone(), (b'a' + (i % 26) as u8) as char, m.mean))
            .collect(),
        systems: systems.iter().map(|(n, m)| (n.clone(), m.mean)).collect(),
        comparisons,
    })
}

impl SignificanceTable {
    /// Plain-text table; significant improvements are marked with the baseline's letter.
    pub fn render(&self) -> String {
        let width = self
            .baselines
            .iter()
            .map(|b| b.0.len() + 4)
            .chain(self.systems.iter().map(|s| s.0.len()))
            .max()
            .unwrap_or(0)
            .max(6);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {}", "System", self.metric);
        for (name, letter, mean) in &self.baselines {
            let _ = writeln!(out, "{:<width$}  {mean:.4}", format!("{name} ({letter})"));
        }
        for (name, mean) in &self.systems {
            let mut marks = String::new();
            let mut notes = Vec::new();
            for c in self.comparisons.iter().filter(|c| &c.system == name) {
                if c.outcome.is_none() {
                    notes.push(format!("{}: n/a", c.letter));
                } else if c.significant {
                    marks.push(c.letter);
                }
            }
            let note = if notes.is_empty() { String::new() } else { format!(" [{}]", notes.join(", ")) };
            let _ = writeln!(out, "{name:<width$}  {mean:.4}{marks}{note}");
        }
        let _ = writeln!(out, "Letters: significant improvement over that baseline (Holm, alpha = {}).", self.alpha);
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub variant: Variant,
    pub rows: Vec<SweepRow>,
    #[serde(skip)]
    pub per_query: Vec<RunMetrics>,
    pub best_ap: usize,
    pub best_ndcg: usize,
    pub baseline_map: f64,
    pub baseline_ndcg: f64,
    pub counterpart_best_ap: Option<SweepRow>,
    pub counterpart_best_ndcg: Option<SweepRow>,
    pub curves: Vec<Curve>,
    pub significance_ap: SignificanceTable,
    pub significance_ndcg: SignificanceTable,
    pub warnings: Vec<String>,
}

impl SweepReport {
    pub fn best_ap_row(&self) -> &SweepRow {
        &self.rows[self.best_ap]
    }

    pub fn best_ndcg_row(&self) -> &SweepRow {
        &self.rows[self.best_ndcg]
    }
}

const POINT_HEADER: [&str; 6] = ["alpha", "beta", "k_plus", "k_minus", "retained_fraction", "pool_size"];

fn point_fields(p: &GridPoint) -> [String; 6] {
    [
        p.alpha.to_string(),
        p.beta.to_string(),
        p.k_plus.to_string(),
        p.k_minus.to_string(),
        p.retained_fraction.to_string(),
        p.pool_size.to_string(),
    ]
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| RunnerError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

/// Writes the sweep table, per-query table, JSON summary and one curve file
/// per pool size. Returns the paths written.
pub fn write_sweep_report(report: &SweepReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| RunnerError::io(dir, e))?;
    let name = report.variant.name();
    let mut written = Vec::new();

    let path = dir.join(format!("sweep_{name}.csv"));
    let mut w = csv_writer(&path)?;
    let mut header = vec!["index"];
    header.extend(POINT_HEADER);
    header.extend(["map", "ndcg", "failed_queries"]);
    w.write_record(&header)?;
    for r in &report.rows {
        let mut rec = vec![r.index.to_string()];
        rec.extend(point_fields(&r.point));
        rec.extend([format!("{:.6}", r.map), format!("{:.6}", r.ndcg), r.failed_queries.to_string()]);
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| RunnerError::io(&path, e))?;
    written.push(path);

    let path = dir.join(format!("sweep_{name}_per_query.csv"));
    let mut w = csv_writer(&path)?;
    w.write_record(["index", "query_id", "ap", "ndcg"])?;
    for (r, m) in report.rows.iter().zip(&report.per_query) {
        for (qid, ap) in &m.ap.per_query {
            let nd = m.ndcg.per_query.get(qid).copied().unwrap_or(0.0);
            w.write_record([r.index.to_string(), qid.clone(), format!("{ap:.6}"), format!("{nd:.6}")])?;
        }
    }
    w.flush().map_err(|e| RunnerError::io(&path, e))?;
    written.push(path);

    let width = report
        .curves
        .iter()
        .map(|c| c.pool_size.to_string().len())
        .max()
        .unwrap_or(1);
    for curve in &report.curves {
        let path = dir.join(format!("sweep_{name}_curve_k{:0width$}.csv", curve.pool_size));
        let mut w = csv_writer(&path)?;
        w.write_record(["retained_fraction", "map", "ndcg"])?;
        for p in &curve.points {
            w.write_record([p.retained_fraction.to_string(), format!("{:.6}", p.map), format!("{:.6}", p.ndcg)])?;
        }
        w.flush().map_err(|e| RunnerError::io(&path, e))?;
        written.push(path);
    }

    let path = dir.join(format!("sweep_{name}_summary.json"));
    fs::write(&path, serde_json::to_string_pretty(report)?).map_err(|e| RunnerError::io(&path, e))?;
    written.push(path);

    let path = dir.join(format!("sweep_{name}_significance.txt"));
    let text = format!("{}\n{}", report.significance_ap.render(), report.significance_ndcg.render());
    fs::write(&path, text).map_err(|e| RunnerError::io(&path, e))?;
    written.push(path);
    Ok(written)
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Sampled-moon trials next to the exact bottom-`k_minus` run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplingReport {
    pub point: GridPoint,
    pub window: usize,
    pub trials: usize,
    pub seed: u64,
    pub trial_map: Vec<f64>,
    pub trial_ndcg: Vec<f64>,
    pub map_mean: f64,
    /// Sample standard deviation across trials.
    pub map_std: f64,
    pub ndcg_mean: f64,
    pub ndcg_std: f64,
    pub exact_map: f64,
    pub exact_ndcg: f64,
}

impl SamplingReport {
    pub fn new(
        point: GridPoint,
        sampling: SamplingConfig,
        trial_map: Vec<f64>,
        trial_ndcg: Vec<f64>,
        exact_map: f64,
        exact_ndcg: f64,
    ) -> Self {
        let (map_mean, map_std) = mean_and_std(&trial_map);
        let (ndcg_mean, ndcg_std) = mean_and_std(&trial_ndcg);
        SamplingReport {
            point,
            window: sampling.window,
            trials: sampling.trials,
            seed: sampling.seed,
            trial_map,
            trial_ndcg,
            map_mean,
            map_std,
            ndcg_mean,
            ndcg_std,
            exact_map,
            exact_ndcg,
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<28}  {:>16}  {:>16}", "Moon", "AP", "nDCG@10");
        let _ = writeln!(
            out,
            "{:<28}  {:>16.4}  {:>16.4}",
            format!("bottom {}", self.point.k_minus),
            self.exact_map,
            self.exact_ndcg
        );
        let _ = writeln!(
            out,
            "{:<28}  {:>16}  {:>16}",
            format!("sampled from bottom {} (n={})", self.window, self.trials),
            format!("{:.4} ± {:.4}", self.map_mean, self.map_std),
            format!("{:.4} ± {:.4}", self.ndcg_mean, self.ndcg_std)
        );
        out
    }
}

pub fn write_sampling_report(report: &SamplingReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| RunnerError::io(dir, e))?;
    let json = dir.join(format!("sample_bottom_w{}.json", report.window));
    fs::write(&json, serde_json::to_string_pretty(report)?).map_err(|e| RunnerError::io(&json, e))?;
    let txt = dir.join(format!("sample_bottom_w{}.txt", report.window));
    fs::write(&txt, report.render()).map_err(|e| RunnerError::io(&txt, e))?;
    Ok(vec![json, txt])
}
