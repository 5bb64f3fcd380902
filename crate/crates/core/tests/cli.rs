use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn benchvar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_benchvar"))
        .args(args)
        .env_remove("BENCHVAR_OUT_DIR")
        .output()
        .expect("run benchvar")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", stdout(o)))
}

#[test]
fn toy_score_table() {
    let o = benchvar(&["score", "--input", &fixture("toy.jsonl")]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("50.0 ("), "{out}");
    assert!(out.lines().next().unwrap().contains("delta_k1"));
}

#[test]
fn table_and_json_agree() {
    let t = benchvar(&["score", "--input", &fixture("toy.jsonl"), "--format", "csv"]);
    let j = json(&benchvar(&["score", "--input", &fixture("toy.jsonl"), "--format", "json"]));
    let csv = stdout(&t);
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    for field in ["mu_hat", "se", "ci_low", "ci_high", "sigma2_hat", "var_within", "var_between"] {
        let i = header.iter().position(|h| *h == field).unwrap();
        let from_table: f64 = row[i].parse().unwrap();
        let from_json = j["estimate"][field].as_f64().unwrap();
        // serde_json's default float parser may land one ulp away from the printed value.
        assert!((from_table - from_json).abs() <= 4.0 * f64::EPSILON * from_table.abs(), "{field}");
    }
    let i = header.iter().position(|h| *h == "delta_k1").unwrap();
    assert_eq!(row[i].parse::<f64>().unwrap(), j["run_gap"]["delta"].as_f64().unwrap());
}

#[test]
fn greedy_comparison() {
    let o = benchvar(&[
        "score",
        "--input",
        &fixture("toy.jsonl"),
        "--greedy-input",
        &fixture("toy_greedy.jsonl"),
        "--format",
        "json",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let j = json(&o);
    assert_eq!(j["greedy"]["greedy_score"], 0.5);
    assert_eq!(j["greedy"]["gap"], 0.0);
}

#[test]
fn no_arguments_prints_usage() {
    let o = benchvar(&[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn unknown_subcommand_is_usage_error() {
    assert_eq!(benchvar(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(benchvar(&["score"]).status.code(), Some(2), "missing --input");
}

#[test]
fn help_documents_flags() {
    let o = benchvar(&["datamap", "--help"]);
    assert_eq!(o.status.code(), Some(0));
    let h = stdout(&o);
    for flag in ["--input", "--benchmark", "--model", "--mode", "--tau-p", "--tau-s", "--out", "--format", "--seed", "--config"] {
        assert!(h.contains(flag), "{flag} missing from help");
    }
    assert!(h.contains("BENCHVAR_OUT_DIR"));
    let r = stdout(&benchvar(&["resample", "--help"]));
    for flag in ["--k-values", "--trials", "--confidence"] {
        assert!(r.contains(flag), "{flag} missing from resample help");
    }
    assert!(stdout(&benchvar(&["difficulty", "--help"])).contains("--bins"));
}

#[test]
fn invalid_record_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    let good = std::fs::read_to_string(fixture("toy.jsonl")).unwrap();
    let mut lines: Vec<String> = good.lines().map(String::from).collect();
    lines[6] = lines[6].replace("\"correct\": 1", "\"correct\": 2").replace("\"correct\": 0", "\"correct\": 2");
    std::fs::write(&path, lines.join("\n")).unwrap();
    let o = benchvar(&["score", "--input", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 7"), "{}", stderr(&o));
}

#[test]
fn missing_input_file() {
    let o = benchvar(&["score", "--input", "/nonexistent/records.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/nonexistent/records.jsonl"));
}

#[test]
fn svg_only_where_drawn() {
    let o = benchvar(&["score", "--input", &fixture("toy.jsonl"), "--format", "svg"]);
    assert_eq!(o.status.code(), Some(2));
    let o = benchvar(&["datamap", "--input", &fixture("toy.jsonl"), "--format", "svg"]);
    assert_eq!(o.status.code(), Some(0));
    let svg = stdout(&o);
    assert!(svg.contains("<svg") && svg.trim_end().ends_with("</svg>"));
    assert_eq!(svg.matches("<circle").count(), 4);
}

#[test]
fn out_dir_flag_and_env() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let o = benchvar(&["difficulty", "--input", &fixture("toy.jsonl"), "--out", d, "--format", "csv,json,svg"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    for f in ["difficulty.csv", "histogram.csv", "difficulty.json", "difficulty.svg"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let hist = std::fs::read_to_string(dir.path().join("histogram.csv")).unwrap();
    let total: usize = hist.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(total, 4);

    let env_dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_benchvar"))
        .args(["irt", "--input", &fixture("toy.jsonl"), "--format", "csv"])
        .env("BENCHVAR_OUT_DIR", env_dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let irt = std::fs::read_to_string(env_dir.path().join("irt.csv")).unwrap();
    assert!(irt.starts_with("prompt_id,p_hat,b,clamped\n"));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let conf: PathBuf = dir.path().join("run.conf");
    std::fs::write(
        &conf,
        format!("# toy run\ninput = {}\nbins = 4\nformat = json\n", fixture("toy.jsonl")),
    )
    .unwrap();
    let c = conf.to_str().unwrap();
    let j = json(&benchvar(&["--config", c, "difficulty"]));
    assert_eq!(j["histogram"].as_array().unwrap().len(), 4);
    let j = json(&benchvar(&["difficulty", "--config", c, "--bins", "5"]));
    assert_eq!(j["histogram"].as_array().unwrap().len(), 5);

    std::fs::write(&conf, "bogus-flag = 1\n").unwrap();
    let o = benchvar(&["--config", c, "difficulty", "--input", &fixture("toy.jsonl")]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn selection_filters() {
    let dir = tempfile::tempdir().unwrap();
    let both = dir.path().join("both.jsonl");
    let text = std::fs::read_to_string(fixture("toy.jsonl")).unwrap() + &std::fs::read_to_string(fixture("toy_b.jsonl")).unwrap();
    std::fs::write(&both, text).unwrap();
    let p = both.to_str().unwrap();
    let o = benchvar(&["ingest", "--input", p]);
    assert_eq!(o.status.code(), Some(1), "mixed models need a filter");
    let j = json(&benchvar(&["ingest", "--input", p, "--model", "model-b", "--format", "json"]));
    assert_eq!(j["report"]["model_id"], "model-b");
    assert_eq!(j["report"]["filtered_out"], 16);
    let o = benchvar(&["ingest", "--input", p, "--model", "nobody"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn datamap_and_flag_thresholds() {
    let toy = fixture("toy.jsonl");
    let j = json(&benchvar(&["datamap", "--input", &toy, "--format", "json"]));
    assert_eq!(j["flagged"]["count"], 0);
    assert_eq!(j["clusters"], "answer_key");
    let o = benchvar(&["flag", "--input", &toy, "--tau-p", "0.25", "--tau-s", "-0.6", "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "prompt_id,p_correct,s_consistency,num_sets\nq3,0.25,-0.5623351446188083,2\n");
    let o = benchvar(&["flag", "--input", &toy, "--tau-p", "2"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn datamap_with_labels_and_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let toy = fixture("toy.jsonl");
    let labels = dir.path().join("labels.jsonl");
    let texts = dir.path().join("texts.jsonl");
    let mut l = String::new();
    let mut t = String::new();
    for q in ["q1", "q2", "q3", "q4"] {
        for j in 0..4 {
            l.push_str(&format!("{{\"prompt_id\":\"{q}\",\"generation_index\":{j},\"label\":0}}\n"));
            t.push_str(&format!("{{\"prompt_id\":\"{q}\",\"generation_index\":{j},\"text\":\"same\"}}\n"));
        }
    }
    std::fs::write(&labels, l).unwrap();
    std::fs::write(&texts, t).unwrap();
    let j = json(&benchvar(&["datamap", "--input", &toy, "--labels", labels.to_str().unwrap(), "--format", "json"]));
    assert!(j["points"].as_array().unwrap().iter().all(|p| p["num_sets"] == 1));

    let oracle = "while read -r line; do echo '{\"equivalent\": true}'; done";
    let o = benchvar(&[
        "datamap", "--input", &toy, "--oracle-cmd", oracle, "--texts", texts.to_str().unwrap(), "--format", "json",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let j = json(&o);
    assert_eq!(j["clusters"], "oracle");
    assert!(j["points"].as_array().unwrap().iter().all(|p| p["s_consistency"] == 0.0));

    let o = benchvar(&["datamap", "--input", &toy, "--oracle-cmd", "true"]);
    assert_eq!(o.status.code(), Some(2), "--texts is required");
}

#[test]
fn resample_and_rank() {
    let toy = fixture("toy.jsonl");
    let j = json(&benchvar(&["resample", "--input", &toy, "--trials", "50", "--format", "json"]));
    let s = j["study"]["summaries"].as_array().unwrap();
    assert_eq!(s.len(), 1, "default k' list capped at k = 4");
    let o = benchvar(&["resample", "--input", &toy, "--k-values", "1,9"]);
    assert_eq!(o.status.code(), Some(1));

    let o = benchvar(&["rank", "--input", &toy, "--input-b", &fixture("toy_b.jsonl"), "--trials", "200", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let j = json(&o);
    let c = j["comparisons"].as_array().unwrap();
    assert_eq!(c.len(), 2);
    assert_eq!(c[0]["model_a"], "model-a");
    assert!(c.iter().all(|c| c["prob_a_over_b"].as_f64().unwrap() > 0.5));
}

#[test]
fn irt_theta_shift() {
    let toy = fixture("toy.jsonl");
    let a = json(&benchvar(&["irt", "--input", &toy, "--format", "json"]));
    let b = json(&benchvar(&["irt", "--input", &toy, "--theta", "-1.5", "--format", "json"]));
    for (x, y) in a["items"].as_array().unwrap().iter().zip(b["items"].as_array().unwrap()) {
        let d = x["b"].as_f64().unwrap() - y["b"].as_f64().unwrap();
        assert!((d - 1.5).abs() < 1e-12);
    }
}

#[test]
fn simulate_then_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let o = benchvar(&["simulate", "--n", "30", "--k", "6", "--dist", "two-point:0.1,0.9,0.5", "--format", "jsonl"]);
    assert_eq!(o.status.code(), Some(0));
    let path = dir.path().join("sim.jsonl");
    std::fs::write(&path, &o.stdout).unwrap();
    let j = json(&benchvar(&["ingest", "--input", path.to_str().unwrap(), "--format", "json"]));
    assert_eq!(j["report"]["n"], 30);
    assert_eq!(j["report"]["k"], 6);
    let again = benchvar(&["ingest", "--input", path.to_str().unwrap(), "--format", "jsonl"]);
    assert_eq!(again.stdout, o.stdout, "canonical records round-trip");
}

#[test]
fn lemma_validation_exit_status() {
    let o = benchvar(&["simulate", "--validate-lemma", "--k", "50", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let j = json(&o);
    assert_eq!(j["pass"], true);
    for c in j["checks"].as_array().unwrap() {
        for f in ["target", "empirical", "tolerance", "pass"] {
            assert!(!c[f].is_null(), "{f}");
        }
    }
    let o = benchvar(&["simulate", "--validate-lemma", "--replications", "500"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("1000"));
}
