//! Command-line front end.
//!
//! Exit status: 0 on success, 1 when the input or a validation check fails,
//! 2 on usage errors.

mod commands;
pub mod histogram;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

use crate::error::Error;
use crate::records::DecodingMode;
use crate::rng::DEFAULT_SEED;
use crate::synthetic::DifficultyDist;

pub use histogram::{difficulty_histogram, Bin};

/// Environment variable holding the default output directory.
pub const OUT_DIR_ENV: &str = "BENCHVAR_OUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "benchvar",
    version,
    about = "Variance-aware scoring of multi-generation benchmark runs",
    long_about = "Variance-aware scoring of multi-generation benchmark runs.\n\n\
        Input is line-delimited JSON, one judged generation per line with fields \
        benchmark_id, model_id, prompt_id, generation_index, correct (0/1), \
        decoding_mode (greedy|sampled) and optional answer_key and metadata.\n\n\
        Exit status: 0 success, 1 invalid input or failed validation, 2 usage error.",
    arg_required_else_help = true,
    args_override_self = true
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Flat `key = value` file mirroring the long flags; flags given on the command line win.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Directory for output files; without it results go to stdout.
    #[arg(long, global = true, value_name = "DIR", env = OUT_DIR_ENV)]
    pub out: Option<PathBuf>,

    /// Comma-separated output formats.
    #[arg(long, global = true, value_enum, value_delimiter = ',', default_value = "table")]
    pub format: Vec<Format>,

    /// Seed for every random stream.
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    pub seed: u64,

    /// Confidence level of reported intervals.
    #[arg(long, global = true, default_value_t = 0.95)]
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// Aligned text table (`.txt`).
    Table,
    /// Comma-separated table (`.csv`).
    Csv,
    /// Structured JSON object (`.json`).
    Json,
    /// Vector graphic (`.svg`), where the command draws one.
    Svg,
    /// Line-delimited records (`.jsonl`); ingest and simulate only.
    Jsonl,
}

impl Format {
    fn extension(self) -> &'static str {
        match self {
            Format::Table => "txt",
            Format::Csv => "csv",
            Format::Json => "json",
            Format::Svg => "svg",
            Format::Jsonl => "jsonl",
        }
    }
}

#[derive(Debug, Args)]
pub struct Source {
    /// Record file (line-delimited JSON).
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,

    /// Keep only this benchmark.
    #[arg(long)]
    pub benchmark: Option<String>,

    /// Keep only this model.
    #[arg(long)]
    pub model: Option<String>,

    /// Keep only this decoding mode (greedy or sampled).
    #[arg(long)]
    pub mode: Option<DecodingMode>,
}

#[derive(Debug, Args)]
pub struct Clustering {
    /// Label file assigning each generation to a semantic set; default clusters by answer_key.
    #[arg(long, value_name = "PATH", conflicts_with = "oracle_cmd")]
    pub labels: Option<PathBuf>,

    /// Shell command answering equivalence queries over stdin/stdout.
    #[arg(long, value_name = "CMD", requires = "texts")]
    pub oracle_cmd: Option<String>,

    /// Response texts for the oracle: lines of {prompt_id, generation_index, text}.
    #[arg(long, value_name = "PATH")]
    pub texts: Option<PathBuf>,

    /// Seconds to wait for each oracle reply.
    #[arg(long, default_value_t = 30)]
    pub oracle_timeout: u64,
}

#[derive(Debug, Args)]
pub struct Rule {
    /// Flag prompts with P(correct) at or below this.
    #[arg(long, default_value_t = 0.1, allow_hyphen_values = true)]
    pub tau_p: f64,

    /// Flag prompts with S(consistency) at or above this.
    #[arg(long, default_value_t = -0.8, allow_hyphen_values = true)]
    pub tau_s: f64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a record file and summarise the selected matrix.
    Ingest {
        #[command(flatten)]
        source: Source,
    },
    /// Benchmark score with decomposed variance, interval and single-run gap.
    Score {
        #[command(flatten)]
        source: Source,

        /// Greedy-decoding records (one generation per prompt) to compare against.
        #[arg(long, value_name = "PATH")]
        greedy_input: Option<PathBuf>,
    },
    /// Per-prompt P(correct) and its histogram.
    Difficulty {
        #[command(flatten)]
        source: Source,

        /// Number of equal-width bins over [0, 1].
        #[arg(long, default_value_t = 10)]
        bins: usize,
    },
    /// P(correct) against S(consistency), with flagged prompts.
    Datamap {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        clustering: Clustering,
        #[command(flatten)]
        rule: Rule,

        /// Draw P(correct) on the x axis.
        #[arg(long)]
        swap_axes: bool,
    },
    /// Only the prompts selected by the flag rule.
    Flag {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        clustering: Clustering,
        #[command(flatten)]
        rule: Rule,
    },
    /// Subsample k' generations per prompt and summarise the score spread.
    Resample {
        #[command(flatten)]
        source: Source,

        /// Generation counts to subsample [default: 1,5,10,20, capped at k].
        #[arg(long, value_delimiter = ',')]
        k_values: Option<Vec<usize>>,

        /// Trials per k'.
        #[arg(long, default_value_t = 1000)]
        trials: usize,
    },
    /// Probability that model A outscores model B, and single-run flip rates.
    Rank {
        #[command(flatten)]
        source: Source,

        /// Records of model B.
        #[arg(long, value_name = "PATH")]
        input_b: PathBuf,

        /// Model filter for the B file.
        #[arg(long)]
        model_b: Option<String>,

        /// k' values for the flip rate [default: 1,5,10,20, capped at k].
        #[arg(long, value_delimiter = ',')]
        k_values: Option<Vec<usize>>,

        /// Trials per k'.
        #[arg(long, default_value_t = 1000)]
        trials: usize,
    },
    /// 1PL difficulty parameters b from P(correct).
    Irt {
        #[command(flatten)]
        source: Source,

        /// Ability anchor of the model.
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        theta: f64,

        /// Fixed clamp bound; default is 1/(2k) per prompt.
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Draw synthetic matrices, optionally checking the variance formula by Monte Carlo.
    Simulate {
        /// beta:A,B | point:P | uniform | two-point:P1,P2,W
        #[arg(long, default_value = "beta:2,2")]
        dist: DifficultyDist,

        /// Prompts per replication.
        #[arg(long, default_value_t = 500)]
        n: usize,

        /// Generations per prompt.
        #[arg(long, default_value_t = 10)]
        k: usize,

        /// Replications for --validate-lemma.
        #[arg(long, default_value_t = 10_000)]
        replications: usize,

        /// Replicate and compare bias, variance and coverage with their targets; exit 1 on failure.
        #[arg(long)]
        validate_lemma: bool,

        /// benchmark_id written to simulated records.
        #[arg(long, default_value = "synthetic")]
        benchmark: String,

        /// model_id written to simulated records.
        #[arg(long, default_value = "simulated")]
        model: String,
    },
}

/// Failures mapped to exit codes.
#[derive(Debug)]
pub(crate) enum Failure {
    Usage(String),
    Invalid(Error),
    /// Results were produced but a check did not pass.
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Invalid(e)
    }
}

/// Runs the process command line.
pub fn main() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}

/// Parses `args` (program name first) and executes the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match with_config(args) {
        Ok(a) => a,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(stderr, "error: {m}");
            return EXIT_USAGE;
        }
        Err(Failure::Invalid(e)) => {
            let _ = writeln!(stderr, "error: {e}");
            return EXIT_INVALID;
        }
        Err(Failure::Check(_)) => unreachable!("config loading runs no checks"),
    };
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = write!(sink, "{text}");
            return code;
        }
    };
    match commands::execute(&cli, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(stderr, "error: {m}");
            EXIT_USAGE
        }
        Err(Failure::Invalid(e)) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_INVALID
        }
        Err(Failure::Check(m)) => {
            let _ = writeln!(stderr, "check failed: {m}");
            EXIT_INVALID
        }
    }
}

/// Global options that consume the following argument.
const GLOBAL_VALUE_FLAGS: [&str; 5] = ["--config", "--out", "--format", "--seed", "--confidence"];

/// Splices `--config` file entries in right after the subcommand, so that
/// flags typed later on the command line override them.
fn with_config(args: Vec<OsString>) -> Result<Vec<OsString>, Failure> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let Some(at) = subcommand_position(&args) else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let injected = parse_config(&text, &path)?;
    let mut out = args[..=at].to_vec();
    out.extend(injected.into_iter().map(OsString::from));
    out.extend_from_slice(&args[at + 1..]);
    Ok(out)
}

fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut found = None;
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            break;
        }
        if let Some(v) = s.strip_prefix("--config=") {
            found = Some(PathBuf::from(v));
        } else if s == "--config" {
            found = it.next().map(PathBuf::from);
        }
    }
    found
}

fn subcommand_position(args: &[OsString]) -> Option<usize> {
    let cmd = Cli::command();
    let names: Vec<&str> = cmd.get_subcommands().map(|c| c.get_name()).collect();
    let mut i = 1;
    while i < args.len() {
        let s = args[i].to_string_lossy();
        if names.contains(&s.as_ref()) {
            return Some(i);
        }
        i += if GLOBAL_VALUE_FLAGS.contains(&s.as_ref()) { 2 } else { 1 };
    }
    None
}

/// `key = value` per line; `#` starts a comment line. `true` turns a switch
/// on, `false` leaves it off.
fn parse_config(text: &str, path: &Path) -> Result<Vec<String>, Failure> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Failure::Usage(format!(
                "{}:{}: expected `key = value`",
                path.display(),
                no + 1
            )));
        };
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        let value = value.trim().trim_matches('"');
        if key.is_empty() || key == "config" {
            return Err(Failure::Usage(format!("{}:{}: invalid key", path.display(), no + 1)));
        }
        match value {
            "true" => out.push(format!("--{key}")),
            "false" => {}
            v => {
                out.push(format!("--{key}"));
                out.push(v.to_string());
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn subcommand_found_after_global_values() {
        let a = os(&["benchvar", "--seed", "5", "--format", "json", "score", "--input", "x"]);
        assert_eq!(subcommand_position(&a), Some(5));
        assert_eq!(subcommand_position(&os(&["benchvar", "--seed", "5"])), None);
    }

    #[test]
    fn config_lines() {
        let p = Path::new("c.conf");
        let got = parse_config("# c\ntrials = 50\n\nvalidate_lemma = true\nswap-axes=false\ninput=\"a b\"\n", p).unwrap();
        assert_eq!(got, vec!["--trials", "50", "--validate-lemma", "--input", "a b"]);
        assert!(parse_config("trials 50", p).is_err());
        assert!(parse_config("config = x", p).is_err());
    }

    #[test]
    fn no_arguments_is_a_usage_error() {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        assert_eq!(run(["benchvar"], &mut o, &mut e), EXIT_USAGE);
        assert!(String::from_utf8_lossy(&e).contains("Usage"));
    }

    #[test]
    fn unknown_subcommand() {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        assert_eq!(run(["benchvar", "explode"], &mut o, &mut e), EXIT_USAGE);
    }
}
