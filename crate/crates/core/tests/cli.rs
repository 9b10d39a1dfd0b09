use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use eclipse_dime::store::{load_matrix, save_matrix, EmbeddingMatrix, Format};

fn eclipse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eclipse"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn synth(dir: &Path) {
    let out = eclipse(&[
        "synth",
        "--out",
        dir.to_str().unwrap(),
        "--dim",
        "32",
        "--planted",
        "4",
        "--queries",
        "4",
        "--relevant",
        "5",
        "--irrelevant",
        "45",
        "--sigma",
        "0.3",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

const SMALL_GRID: &str = r#"
[grid]
alpha = [0.5, 1.0]
beta = [0.3]
k_plus = [2, 3]
dime_k_plus = [1]
k_minus = [2]
retained_fraction = [0.5, 1.0]
pool_size = [50, 100]
"#;

fn small_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("small.toml");
    let text = format!(
        "queries = \"queries.emb\"\ncorpus = \"corpus.emb\"\nqrels = \"qrels.txt\"\ndepth = 50\n{extra}\n{SMALL_GRID}"
    );
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn synth_writes_a_runnable_experiment() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    for f in ["queries.emb", "queries.emb.ids", "corpus.emb", "qrels.txt", "planted.json", "experiment.toml"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let config = dir.path().join("experiment.toml");
    let out = eclipse(&["search", "--config", config.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("out/baseline.run");
    assert!(run.is_file());

    let out = eclipse(&["eval", "--run", run.to_str().unwrap(), "--qrels", dir.path().join("qrels.txt").to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let json: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/baseline.metrics.json")).unwrap()).unwrap();
    assert_eq!(json["map"], metrics["map"]);
}

#[test]
fn dime_run_sweep_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let config = small_config(dir.path(), "");
    assert_eq!(code(&eclipse(&["search", "--config", &config])), 0);
    let out = eclipse(&[
        "dime-run", "--config", &config, "--variant", "prf-eclipse", "--alpha", "1", "--beta", "0.3", "--k-plus", "2",
        "--k-minus", "2", "--fraction", "0.5", "--pool-size", "100",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let system = dir.path().join("out/prf_eclipse_a1_b0.3_kp2_km2_f0.5_k100.run");
    assert!(system.is_file());

    let out = eclipse(&["sweep", "--config", &config, "--variant", "prf_eclipse"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(dir.path().join("out/sweep_prf_eclipse.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 2 * 2 * 2 * 2);
    assert!(dir.path().join("out/sweep_prf_eclipse_curve_k050.csv").is_file());
    assert!(dir.path().join("out/sweep_prf_eclipse_curve_k100.csv").is_file());

    let base = format!("Baseline={}", dir.path().join("out/baseline.run").display());
    let sys = format!("ECLIPSE={}", system.display());
    let qrels = dir.path().join("qrels.txt");
    let out = eclipse(&["compare", "--qrels", qrels.to_str().unwrap(), "--baseline", &base, "--system", &sys]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("Baseline (a)"));
    assert!(text.contains("ECLIPSE"));
}

#[test]
fn validation_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let config = small_config(dir.path(), "");
    fs::remove_file(dir.path().join("corpus.emb")).unwrap();
    assert_eq!(code(&eclipse(&["search", "--config", &config])), 1);

    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let config = small_config(dir.path(), "");
    let out = eclipse(&[
        "dime-run", "--config", &config, "--variant", "prf-eclipse", "--k-plus", "40", "--k-minus", "20", "--pool-size",
        "50",
    ]);
    assert_eq!(code(&out), 1);
    let out = eclipse(&["sample-bottom", "--config", &config, "--k-minus", "4", "--window", "3", "--trials", "3"]);
    assert_eq!(code(&out), 1);
    assert_eq!(code(&eclipse(&["search", "--config", dir.path().join("nope.toml").to_str().unwrap()])), 1);
}

#[test]
fn missing_answer_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let queries = load_matrix(&dir.path().join("queries.emb"), Format::Binary).unwrap();
    let answers =
        EmbeddingMatrix::from_rows(queries.rows().skip(1).map(|(id, v)| (id.to_owned(), v.to_vec()))).unwrap();
    save_matrix(&answers, &dir.path().join("answers.jsonl"), Format::Jsonl).unwrap();
    let config = small_config(dir.path(), "answers = \"answers.jsonl\"");
    let out = eclipse(&["dime-run", "--config", &config, "--variant", "llm-dime", "--fraction", "0.5"]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    let run = fs::read_to_string(dir.path().join("out/llm_dime_a1_b0_kp0_km0_f0.5_k50.run")).unwrap();
    assert!(!run.lines().any(|l| l.starts_with("q0000 ")));
}

#[test]
fn sample_bottom_reports_mean_and_std() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let config = small_config(dir.path(), "[sampling]\nwindow = 20\ntrials = 3\nseed = 4\n");
    let out = eclipse(&["sample-bottom", "--config", &config, "--beta", "1.0", "--pool-size", "100"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("sampled from bottom 20 (n=3)"));
    assert!(dir.path().join("out/sample_bottom_w20.json").is_file());
}
