use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info, warn};

use eclipse_dime::metrics::{evaluate_run, MetricResult};
use eclipse_dime::runner::{
    self, compare, write_sampling_report, write_sweep_report, Experiment, ExperimentConfig, GridPoint, RunnerError,
    Variant,
};
use eclipse_dime::store::{save_matrix, Format};
use eclipse_dime::synth::{self, SynthSpec};
use eclipse_dime::trec;

#[derive(Parser)]
#[command(name = "eclipse", version, about = "Dimension importance estimation for dense retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic planted-subspace corpus and a matching experiment config.
    Synth(SynthArgs),
    /// Full-dimensional baseline retrieval.
    Search {
        #[arg(long)]
        config: PathBuf,
    },
    /// One variant at one grid point.
    DimeRun {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        variant: Variant,
        #[command(flatten)]
        point: PointArgs,
    },
    /// Evaluate every grid point of a variant.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        variant: Variant,
    },
    /// PRF-ECLIPSE with moons sampled from the bottom window of the pool.
    SampleBottom {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        point: PointArgs,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a run file against qrels.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long, default_value_t = eclipse_dime::metrics::DEFAULT_NDCG_CUTOFF)]
        cutoff: usize,
        #[arg(long, default_value_t = eclipse_dime::metrics::DEFAULT_GRADED_THRESHOLD)]
        threshold: u32,
    },
    /// Significance table of systems against baselines.
    Compare {
        #[arg(long)]
        qrels: PathBuf,
        /// `name=path` of a baseline run; repeatable.
        #[arg(long, required = true)]
        baseline: Vec<String>,
        /// `name=path` of a system run; repeatable.
        #[arg(long, required = true)]
        system: Vec<String>,
        #[arg(long, default_value_t = eclipse_dime::stats::SIGNIFICANCE_LEVEL)]
        alpha: f64,
        #[arg(long, default_value_t = eclipse_dime::metrics::DEFAULT_NDCG_CUTOFF)]
        cutoff: usize,
        #[arg(long, default_value_t = eclipse_dime::metrics::DEFAULT_GRADED_THRESHOLD)]
        threshold: u32,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// TOML file with generator settings; flags override it.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    planted: Option<usize>,
    #[arg(long)]
    queries: Option<usize>,
    #[arg(long)]
    relevant: Option<usize>,
    #[arg(long)]
    irrelevant: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "binary")]
    format: Format,
}

/// Unset fields take the first value of the matching config grid.
#[derive(Args)]
struct PointArgs {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    k_plus: Option<usize>,
    #[arg(long)]
    k_minus: Option<usize>,
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    pool_size: Option<usize>,
}

impl PointArgs {
    fn resolve(&self, config: &ExperimentConfig, variant: Variant) -> GridPoint {
        let g = &config.grid;
        GridPoint {
            alpha: self.alpha.unwrap_or(g.alpha[0]),
            beta: self.beta.unwrap_or(g.beta[0]),
            k_plus: self.k_plus.unwrap_or(config.k_plus_grid(variant)[0]),
            k_minus: self.k_minus.unwrap_or(g.k_minus[0]),
            retained_fraction: self.fraction.unwrap_or(g.retained_fraction[0]),
            pool_size: self.pool_size.unwrap_or(g.pool_size[0]),
        }
    }
}

enum Failure {
    Validation(String),
    Partial(String),
}

impl From<RunnerError> for Failure {
    fn from(e: RunnerError) -> Self {
        Failure::Validation(e.to_string())
    }
}

impl From<trec::TrecError> for Failure {
    fn from(e: trec::TrecError) -> Self {
        Failure::Validation(e.to_string())
    }
}

type CliResult = Result<(), Failure>;
type Named = Vec<(String, MetricResult)>;

fn load(config: &Path) -> Result<Experiment, RunnerError> {
    let config = ExperimentConfig::from_file(config)?;
    Experiment::load(config)
}

fn synth_cmd(args: SynthArgs) -> CliResult {
    let mut spec = match &args.spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| RunnerError::io(p, e))?;
            toml::from_str(&text).map_err(RunnerError::from)?
        }
        None => SynthSpec::default(),
    };
    spec.dim = args.dim.unwrap_or(spec.dim);
    spec.planted_size = args.planted.unwrap_or(spec.planted_size);
    spec.queries = args.queries.unwrap_or(spec.queries);
    spec.relevant_per_query = args.relevant.unwrap_or(spec.relevant_per_query);
    spec.irrelevant_per_query = args.irrelevant.unwrap_or(spec.irrelevant_per_query);
    spec.noise_sigma = args.sigma.unwrap_or(spec.noise_sigma);
    spec.seed = args.seed.unwrap_or(spec.seed);
    let generated = synth::generate(&spec).map_err(RunnerError::from)?;

    let out = &args.out;
    fs::create_dir_all(out).map_err(|e| RunnerError::io(out, e))?;
    let ext = match args.format {
        Format::Binary => "emb",
        Format::Jsonl => "jsonl",
    };
    let queries = format!("queries.{ext}");
    let corpus = format!("corpus.{ext}");
    save_matrix(&generated.queries, &out.join(&queries), args.format).map_err(RunnerError::from)?;
    save_matrix(&generated.corpus, &out.join(&corpus), args.format).map_err(RunnerError::from)?;
    trec::write_qrels(&generated.qrels, &out.join("qrels.txt"))?;
    let planted = out.join("planted.json");
    let json = serde_json::to_string_pretty(&generated.planted).map_err(RunnerError::from)?;
    fs::write(&planted, json).map_err(|e| RunnerError::io(&planted, e))?;
    let spec_path = out.join("synth.toml");
    let spec_text = toml::to_string_pretty(&spec).expect("spec serializes");
    fs::write(&spec_path, spec_text).map_err(|e| RunnerError::io(&spec_path, e))?;

    let mut config = ExperimentConfig::new(queries, corpus, "qrels.txt");
    config.depth = spec.docs_per_query().min(generated.corpus.len());
    config.grid.pool_size = vec![config.grid.pool_size[0].min(generated.corpus.len())];
    let config_path = out.join("experiment.toml");
    fs::write(&config_path, config.to_toml()).map_err(|e| RunnerError::io(&config_path, e))?;
    println!(
        "wrote {} queries and {} documents (d={}) to {}",
        generated.queries.len(),
        generated.corpus.len(),
        spec.dim,
        out.display()
    );
    Ok(())
}

fn report_outcome(outcome: &runner::RunOutcome, config: &ExperimentConfig) -> CliResult {
    let path = outcome.write(&config.output_dir)?;
    println!(
        "{}: MAP {:.4}  nDCG@{} {:.4}  -> {}",
        outcome.name,
        outcome.metrics.ap.mean,
        config.ndcg_cutoff,
        outcome.metrics.ndcg.mean,
        path.display()
    );
    if outcome.is_partial() {
        return Err(Failure::Partial(format!("{} queries skipped", outcome.failures.len())));
    }
    Ok(())
}

fn parse_named(spec: &str) -> Result<(String, PathBuf), Failure> {
    match spec.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_owned(), PathBuf::from(path))),
        _ => Err(Failure::Validation(format!("expected name=path, got {spec:?}"))),
    }
}

fn evaluate_named(
    specs: &[String],
    qrels: &trec::Qrels,
    cutoff: usize,
    threshold: u32,
) -> Result<(Named, Named), Failure> {
    let mut ap = Vec::new();
    let mut ndcg = Vec::new();
    for spec in specs {
        let (name, path) = parse_named(spec)?;
        let run = trec::parse_run(&path)?;
        let m = evaluate_run(&run, qrels, cutoff, threshold).map_err(RunnerError::from)?;
        ap.push((name.clone(), m.ap));
        ndcg.push((name, m.ndcg));
    }
    Ok((ap, ndcg))
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Synth(args) => synth_cmd(args),
        Command::Search { config } => {
            let exp = load(&config)?;
            let outcome = exp.run_baseline()?;
            report_outcome(&outcome, &exp.config)
        }
        Command::DimeRun { config, variant, point } => {
            let exp = load(&config)?;
            exp.config.validate_for(variant)?;
            let point = point.resolve(&exp.config, variant);
            let outcome = exp.run_dime(variant, &point)?;
            report_outcome(&outcome, &exp.config)
        }
        Command::Sweep { config, variant } => {
            let exp = load(&config)?;
            let report = exp.sweep(variant)?;
            let written = write_sweep_report(&report, &exp.config.output_dir)?;
            let best_ap = report.best_ap_row();
            let best_ndcg = report.best_ndcg_row();
            println!("baseline: MAP {:.4}  nDCG {:.4}", report.baseline_map, report.baseline_ndcg);
            println!("best MAP  {:.4} at {}", best_ap.map, best_ap.point.slug());
            println!("best nDCG {:.4} at {}", best_ndcg.ndcg, best_ndcg.point.slug());
            print!("{}", report.significance_ap.render());
            print!("{}", report.significance_ndcg.render());
            for p in written {
                info!("wrote {}", p.display());
            }
            let failed = report.rows.iter().filter(|r| r.failed_queries > 0).count();
            if failed > 0 {
                return Err(Failure::Partial(format!("{failed} grid points skipped queries")));
            }
            Ok(())
        }
        Command::SampleBottom {
            config,
            point,
            window,
            trials,
            seed,
        } => {
            let mut config = ExperimentConfig::from_file(&config)?;
            if window.is_some() || trials.is_some() || seed.is_some() {
                let mut s = config.sampling.clone().unwrap_or(runner::SamplingConfig {
                    window: 0,
                    trials: 0,
                    seed: 0,
                });
                s.window = window.unwrap_or(s.window);
                s.trials = trials.unwrap_or(s.trials);
                s.seed = seed.unwrap_or(s.seed);
                config.sampling = Some(s);
            }
            let exp = Experiment::load(config)?;
            let point = point.resolve(&exp.config, Variant::PrfEclipse);
            let report = exp.sample_bottom(&point)?;
            write_sampling_report(&report, &exp.config.output_dir)?;
            print!("{}", report.render());
            Ok(())
        }
        Command::Eval {
            run,
            qrels,
            cutoff,
            threshold,
        } => {
            let qrels = trec::parse_qrels(&qrels)?;
            let entries = trec::parse_run(&run)?;
            let m = evaluate_run(&entries, &qrels, cutoff, threshold).map_err(RunnerError::from)?;
            for w in &m.undefined {
                warn!("query {w}: metric undefined, reported as 0");
            }
            let body = serde_json::json!({
                "map": m.ap.mean,
                "ndcg": m.ndcg.mean,
                "cutoff": cutoff,
                "per_query_ap": m.ap.per_query,
                "per_query_ndcg": m.ndcg.per_query,
            });
            println!("{}", serde_json::to_string_pretty(&body).map_err(RunnerError::from)?);
            Ok(())
        }
        Command::Compare {
            qrels,
            baseline,
            system,
            alpha,
            cutoff,
            threshold,
        } => {
            let qrels = trec::parse_qrels(&qrels)?;
            let (base_ap, base_ndcg) = evaluate_named(&baseline, &qrels, cutoff, threshold)?;
            let (sys_ap, sys_ndcg) = evaluate_named(&system, &qrels, cutoff, threshold)?;
            let ap = compare("AP", &base_ap, &sys_ap, alpha)?;
            let ndcg = compare(&format!("nDCG@{cutoff}"), &base_ndcg, &sys_ndcg, alpha)?;
            print!("{}\n{}", ap.render(), ndcg.render());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            error!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Partial(msg)) => {
            warn!("partial failure: {msg}");
            ExitCode::from(2)
        }
    }
}
