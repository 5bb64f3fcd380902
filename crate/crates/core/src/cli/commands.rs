use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;
use std::time::Duration;

use clap::ValueEnum as _;
use serde_json::{json, Value};

use super::histogram::{difficulty_histogram, histogram_table, render_histogram};
use super::{Cli, Clustering, Command, Failure, Format, Rule, Source};
use crate::consistency::{
    cluster_by_key, cluster_by_labels, cluster_by_oracle, parse_labels, parse_texts, s_consistency_all,
    ClusterPartition, CommandOracle, OracleConfig,
};
use crate::datamap::{build_map, flagged_report, map_table, render_scatter, DataMapPoint, FlagRule, ScatterOptions};
use crate::error::{Error, Result};
use crate::estimator::{estimate_with_confidence, prompt_difficulties, run_gap};
use crate::irt::{irt_table, to_irt, EpsilonPolicy};
use crate::ranking::{comparison_table, empirical_flip_rate, rank_probability, Paired};
use crate::records::{
    check_rectangular, ingest_reader, matrix_to_records, serialize_records, DecodingMode, Ingested, Selection,
};
use crate::report::{write_atomic, Table};
use crate::resample::{compare_modes, mode_gap, render_chart, subsample_scores, summary_table, ResampleConfig};
use crate::rng::RNG_ALGORITHM;
use crate::synthetic::{ground_truth_of, simulate, validate_lemma, SyntheticConfig};

const DEFAULT_K_VALUES: [usize; 4] = [1, 5, 10, 20];

/// Everything a command can emit; which parts are written depends on `--format`.
struct Output {
    name: &'static str,
    tables: Vec<(&'static str, Table)>,
    json: Value,
    svg: Option<String>,
    jsonl: Option<String>,
}

impl Output {
    fn new(name: &'static str, tables: Vec<(&'static str, Table)>, json: Value) -> Self {
        Output {
            name,
            tables,
            json,
            svg: None,
            jsonl: None,
        }
    }

    fn render(&self, format: Format) -> Option<String> {
        match format {
            Format::Table => Some(self.joined_tables(Table::to_text)),
            Format::Csv => Some(self.joined_tables(Table::to_csv)),
            Format::Json => Some(serde_json::to_string_pretty(&self.json).expect("json value") + "\n"),
            Format::Svg => self.svg.clone(),
            Format::Jsonl => self.jsonl.clone(),
        }
    }

    fn joined_tables(&self, f: fn(&Table) -> String) -> String {
        if let [(_, t)] = self.tables.as_slice() {
            return f(t);
        }
        self.tables
            .iter()
            .map(|(name, t)| format!("[{name}]\n{}", f(t)))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

pub(super) fn execute(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), Failure> {
    let g = &cli.global;
    if !(g.confidence > 0.0 && g.confidence < 1.0) {
        return Err(Failure::Usage(format!("--confidence must lie in (0, 1), got {}", g.confidence)));
    }
    let mut formats = g.format.clone();
    let mut seen = Vec::new();
    formats.retain(|f| if seen.contains(f) { false } else { seen.push(*f); true });

    let (output, failed_check) = match &cli.command {
        Command::Ingest { source } => (ingest_cmd(source)?, None),
        Command::Score { source, greedy_input } => (score(source, greedy_input.as_deref(), g.confidence)?, None),
        Command::Difficulty { source, bins } => (difficulty(source, *bins)?, None),
        Command::Datamap {
            source,
            clustering,
            rule,
            swap_axes,
        } => (datamap(source, clustering, rule, *swap_axes, false)?, None),
        Command::Flag { source, clustering, rule } => (datamap(source, clustering, rule, false, true)?, None),
        Command::Resample {
            source,
            k_values,
            trials,
        } => (resample(source, k_values.as_deref(), *trials, g.seed, g.confidence)?, None),
        Command::Rank {
            source,
            input_b,
            model_b,
            k_values,
            trials,
        } => {
            let b = Source {
                input: input_b.clone(),
                benchmark: source.benchmark.clone(),
                model: model_b.clone(),
                mode: source.mode,
            };
            (rank(source, &b, k_values.as_deref(), *trials, g.seed, g.confidence, stderr)?, None)
        }
        Command::Irt { source, theta, epsilon } => (irt(source, *theta, *epsilon)?, None),
        Command::Simulate {
            dist,
            n,
            k,
            replications,
            validate_lemma: validate,
            benchmark,
            model,
        } => {
            let config = SyntheticConfig {
                n: *n,
                k: *k,
                difficulty: *dist,
                seed: g.seed,
                replications: *replications,
            };
            if *validate {
                lemma(&config)?
            } else {
                (simulated(&config, benchmark, model)?, None)
            }
        }
    };

    let mut rendered = Vec::with_capacity(formats.len());
    for &f in &formats {
        match output.render(f) {
            Some(text) => rendered.push((f, text)),
            None => {
                return Err(Failure::Usage(format!(
                    "`{}` has no {} output",
                    output.name,
                    f.to_possible_value().expect("no skipped variants").get_name()
                )))
            }
        }
    }
    match &g.out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            for (f, text) in &rendered {
                if matches!(f, Format::Csv) && output.tables.len() > 1 {
                    for (name, t) in &output.tables {
                        write_file(&dir.join(format!("{name}.csv")), &t.to_csv(), stderr)?;
                    }
                } else {
                    write_file(&dir.join(format!("{}.{}", output.name, f.extension())), text, stderr)?;
                }
            }
        }
        None => {
            let mut first = true;
            for (_, text) in &rendered {
                if !first {
                    let _ = writeln!(stdout);
                }
                first = false;
                stdout.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))?;
            }
        }
    }
    match failed_check {
        Some(msg) => Err(Failure::Check(msg)),
        None => Ok(()),
    }
}

fn write_file(path: &Path, text: &str, stderr: &mut dyn Write) -> Result<()> {
    write_atomic(path, text.as_bytes())?;
    let _ = writeln!(stderr, "wrote {}", path.display());
    Ok(())
}

fn load(src: &Source) -> Result<Ingested> {
    let file = File::open(&src.input).map_err(|e| Error::io(&src.input, e))?;
    let selection = Selection {
        benchmark: src.benchmark.clone(),
        model: src.model.clone(),
        mode: src.mode,
    };
    ingest_reader(BufReader::new(file), &selection)
}

fn kv_table(rows: &[(&str, String)]) -> Table {
    let mut t = Table::new(["field", "value"]);
    for (k, v) in rows {
        t.push([k.to_string(), v.clone()]);
    }
    t
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn ingest_cmd(src: &Source) -> Result<Output> {
    let ing = load(src)?;
    let r = &ing.report;
    let table = kv_table(&[
        ("benchmark_id", r.benchmark_id.clone()),
        ("model_id", r.model_id.clone()),
        ("decoding_mode", r.decoding_mode.to_string()),
        ("records", r.records.to_string()),
        ("filtered_out", r.filtered_out.to_string()),
        ("unknown_fields", r.unknown_fields.to_string()),
        ("n", r.n.to_string()),
        ("k", opt(r.k)),
        ("ragged", r.ragged.to_string()),
    ]);
    let records = matrix_to_records(&ing.matrix, &r.benchmark_id, &r.model_id, r.decoding_mode);
    let mut out = Output::new("ingest", vec![("ingest", table)], json!({ "report": r }));
    out.jsonl = Some(serialize_records(&records));
    Ok(out)
}

fn score(src: &Source, greedy_input: Option<&Path>, confidence: f64) -> Result<Output> {
    let ing = load(src)?;
    let est = estimate_with_confidence(&ing.matrix, confidence)?;
    let gap = if est.k >= 2 { Some(run_gap(&ing.matrix)?) } else { None };
    let greedy = match greedy_input {
        Some(path) => {
            let g = load(&Source {
                input: path.to_path_buf(),
                benchmark: src.benchmark.clone(),
                model: src.model.clone(),
                mode: Some(DecodingMode::Greedy),
            })?;
            let m = mode_gap(&g.matrix, &ing.matrix)?;
            Some(compare_modes(m.greedy_score, &est))
        }
        None => None,
    };
    let r = &ing.report;
    let mut header = vec![
        "benchmark", "model", "mode", "n", "k", "score", "mu_hat", "se", "ci_low", "ci_high", "sigma2_hat",
        "var_within", "var_between", "clamped", "delta_k1",
    ];
    let mut row = vec![
        r.benchmark_id.clone(),
        r.model_id.clone(),
        r.decoding_mode.to_string(),
        est.n.to_string(),
        est.k.to_string(),
        est.report_cell(),
        est.mu_hat.to_string(),
        est.se.to_string(),
        est.ci_low.to_string(),
        est.ci_high.to_string(),
        est.sigma2_hat.to_string(),
        est.var_within.to_string(),
        est.var_between.to_string(),
        est.clamped.to_string(),
        opt(gap.as_ref().map(|g| g.delta)),
    ];
    if let Some(m) = &greedy {
        header.extend(["greedy", "greedy_gap", "greedy_outside_ci"]);
        row.extend([
            format!("{:.1}", m.greedy_score * 100.0),
            m.gap.to_string(),
            m.outside_ci.to_string(),
        ]);
    }
    let mut t = Table::new(header);
    t.push(row);
    let json = json!({
        "report": r,
        "estimate": est,
        "run_gap": gap,
        "greedy": greedy,
    });
    Ok(Output::new("score", vec![("score", t)], json))
}

fn difficulty(src: &Source, bins: usize) -> Result<Output> {
    let ing = load(src)?;
    let ds = prompt_difficulties(&ing.matrix)?;
    let hist = difficulty_histogram(&ds, bins)?;
    let mut t = Table::new(["prompt_id", "correct", "k", "p_hat"]);
    for d in &ds {
        t.push([d.prompt_id.clone(), d.correct_count.to_string(), d.k.to_string(), d.p_hat.to_string()]);
    }
    let title = format!("P(correct): {} / {}", ing.report.benchmark_id, ing.report.model_id);
    let mut out = Output::new(
        "difficulty",
        vec![("difficulty", t), ("histogram", histogram_table(&hist))],
        json!({ "report": ing.report, "prompts": ds, "histogram": hist }),
    );
    out.svg = Some(render_histogram(&hist, &title));
    Ok(out)
}

fn partitions(ing: &Ingested, c: &Clustering) -> Result<(Vec<ClusterPartition>, &'static str)> {
    if let Some(path) = &c.labels {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        return Ok((cluster_by_labels(&ing.matrix, &parse_labels(&text)?)?, "labels"));
    }
    if let Some(cmd) = &c.oracle_cmd {
        let path = c.texts.as_ref().expect("clap requires --texts with --oracle-cmd");
        let texts = parse_texts(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)?;
        let mut oracle = CommandOracle::new(OracleConfig {
            timeout: Duration::from_secs(c.oracle_timeout),
            ..OracleConfig::shell(cmd)
        })?;
        return Ok((cluster_by_oracle(&ing.matrix, &texts, &mut oracle)?, "oracle"));
    }
    Ok((cluster_by_key(&ing.matrix)?, "answer_key"))
}

fn map_points(src: &Source, c: &Clustering, rule: FlagRule) -> Result<(Ingested, Vec<DataMapPoint>, &'static str)> {
    let ing = load(src)?;
    let (parts, source) = partitions(&ing, c)?;
    let ds = prompt_difficulties(&ing.matrix)?;
    let map = build_map(&ds, &s_consistency_all(&parts), rule)?;
    Ok((ing, map, source))
}

fn datamap(src: &Source, c: &Clustering, r: &Rule, swap_axes: bool, flags_only: bool) -> Result<Output> {
    let rule = FlagRule::new(r.tau_p, r.tau_s)?;
    let (ing, map, clusters) = map_points(src, c, rule)?;
    let report = flagged_report(&map);
    let rule_json = json!({ "tau_p": rule.tau_p, "tau_s": rule.tau_s });
    if flags_only {
        let mut t = Table::new(["prompt_id", "p_correct", "s_consistency", "num_sets"]);
        for p in &report.points {
            t.push([
                p.prompt_id.clone(),
                p.p_correct.to_string(),
                p.s_consistency.to_string(),
                p.num_sets.to_string(),
            ]);
        }
        let json = json!({ "report": ing.report, "clusters": clusters, "rule": rule_json, "flagged": report });
        return Ok(Output::new("flag", vec![("flagged", t)], json));
    }
    let opts = ScatterOptions {
        title: format!("Data map: {} / {}", ing.report.benchmark_id, ing.report.model_id),
        swap_axes,
        rule: Some(rule),
        ..ScatterOptions::default()
    };
    let svg = render_scatter(&map, &opts)?;
    let json = json!({
        "report": ing.report,
        "clusters": clusters,
        "rule": rule_json,
        "points": map,
        "flagged": report,
    });
    let mut out = Output::new("datamap", vec![("datamap", map_table(&map))], json);
    out.svg = Some(svg);
    Ok(out)
}

/// Explicit values are used as given; the default list is capped at `k`.
fn k_values(given: Option<&[usize]>, k: usize) -> Vec<usize> {
    match given {
        Some(v) => v.to_vec(),
        None => {
            let v: Vec<usize> = DEFAULT_K_VALUES.iter().copied().filter(|&kp| kp <= k).collect();
            if v.is_empty() {
                vec![k]
            } else {
                v
            }
        }
    }
}

fn resample(src: &Source, given: Option<&[usize]>, trials: usize, seed: u64, confidence: f64) -> Result<Output> {
    let ing = load(src)?;
    let k = check_rectangular(&ing.matrix)?;
    let config = ResampleConfig {
        k_values: k_values(given, k),
        trials,
        seed,
        confidence,
    };
    let study = subsample_scores(&ing.matrix, &config)?;
    let title = format!("Subsampled scores: {} / {}", ing.report.benchmark_id, ing.report.model_id);
    let mut out = Output::new(
        "resample",
        vec![("resample", summary_table(&study))],
        json!({ "report": ing.report, "config": config, "study": study }),
    );
    out.svg = Some(render_chart(&study, &title));
    Ok(out)
}

fn rank(
    a_src: &Source,
    b_src: &Source,
    given: Option<&[usize]>,
    trials: usize,
    seed: u64,
    confidence: f64,
    stderr: &mut dyn Write,
) -> Result<Output> {
    let a = load(a_src)?;
    let b = load(b_src)?;
    let (name_a, name_b) = (a.report.model_id.clone(), b.report.model_id.clone());
    let est_a = estimate_with_confidence(&a.matrix, confidence)?;
    let est_b = estimate_with_confidence(&b.matrix, confidence)?;
    let mut comparisons = vec![rank_probability(&est_a, &est_b, None)?.named(&name_a, &name_b)];
    match rank_probability(&est_a, &est_b, Some(Paired { a: &a.matrix, b: &b.matrix })) {
        Ok(c) => comparisons.push(c.named(&name_a, &name_b)),
        Err(Error::PromptMismatch(m)) => {
            let _ = writeln!(stderr, "note: paired comparison skipped: {m}");
        }
        Err(e) => return Err(e),
    }
    let k = est_a.k.min(est_b.k);
    let flips = k_values(given, k)
        .into_iter()
        .map(|kp| empirical_flip_rate(&a.matrix, &b.matrix, kp, trials, seed))
        .collect::<Result<Vec<_>>>()?;
    let mut ft = Table::new(["k_prime", "trials", "favourite", "flip_rate", "mc_se"]);
    for f in &flips {
        let fav = if f.favourite == "a" { &name_a } else { &name_b };
        ft.push([
            f.k_prime.to_string(),
            f.trials.to_string(),
            fav.clone(),
            f.rate.to_string(),
            f.mc_se.to_string(),
        ]);
    }
    let json = json!({
        "a": a.report,
        "b": b.report,
        "comparisons": comparisons,
        "flip_rates": flips,
        "rng": RNG_ALGORITHM,
    });
    Ok(Output::new(
        "rank",
        vec![("rank", comparison_table(&comparisons)), ("flip_rate", ft)],
        json,
    ))
}

fn irt(src: &Source, theta: f64, epsilon: Option<f64>) -> Result<Output> {
    if !theta.is_finite() {
        return Err(Error::invalid("theta must be finite"));
    }
    let ing = load(src)?;
    let ds = prompt_difficulties(&ing.matrix)?;
    let policy = epsilon.map_or(EpsilonPolicy::HalfCount, EpsilonPolicy::Fixed);
    let items = to_irt(&ds, theta, policy)?;
    Ok(Output::new(
        "irt",
        vec![("irt", irt_table(&items))],
        json!({ "report": ing.report, "theta": theta, "items": items }),
    ))
}

fn simulated(config: &SyntheticConfig, benchmark: &str, model: &str) -> Result<Output> {
    let truth = ground_truth_of(config)?;
    let m = simulate(config)?;
    let est = if config.n >= 2 { Some(estimate_with_confidence(&m, 0.95)?) } else { None };
    let table = kv_table(&[
        ("difficulty", config.difficulty.to_string()),
        ("n", config.n.to_string()),
        ("k", config.k.to_string()),
        ("seed", config.seed.to_string()),
        ("mu", truth.mu.to_string()),
        ("sigma2", truth.sigma2.to_string()),
        ("mu_hat", opt(est.as_ref().map(|e| e.mu_hat))),
        ("se", opt(est.as_ref().map(|e| e.se))),
    ]);
    let records = matrix_to_records(&m, benchmark, model, DecodingMode::Sampled);
    let mut out = Output::new(
        "simulate",
        vec![("simulate", table)],
        json!({ "config": config, "rng": RNG_ALGORITHM, "ground_truth": truth, "estimate": est }),
    );
    out.jsonl = Some(serialize_records(&records));
    Ok(out)
}

fn lemma(config: &SyntheticConfig) -> Result<(Output, Option<String>)> {
    let report = validate_lemma(config)?;
    let mut t = Table::new(["check", "target", "empirical", "mc_se", "tolerance", "pass"]);
    for c in &report.checks {
        t.push([
            c.name.clone(),
            c.target.to_string(),
            c.empirical.to_string(),
            c.mc_se.to_string(),
            c.tolerance.to_string(),
            c.pass.to_string(),
        ]);
    }
    let failed: Vec<&str> = report.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    let msg = (!failed.is_empty()).then(|| failed.join(", "));
    Ok((Output::new("lemma", vec![("lemma", t)], serde_json::to_value(&report)?), msg))
}
