//! Simulation of the hierarchical Bernoulli model with known ground truth.
//!
//! Each replication draws `n` prompt difficulties `p_i` from a chosen family,
//! then `k` Bernoulli(`p_i`) outcomes per prompt. Repeating this many times
//! gives Monte Carlo reference values for the bias, variance and interval
//! coverage of the score estimator.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Beta, Distribution};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::{estimate_from_counts, variance_formula, VarianceTerms};
use crate::records::{GenerationMatrix, PromptRow};
use crate::rng::{self, DEFAULT_SEED, RNG_ALGORITHM};

/// Distribution of per-prompt success probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DifficultyDist {
    Beta { alpha: f64, beta: f64 },
    PointMass { p: f64 },
    Uniform,
    /// `p1` with probability `w`, otherwise `p2`.
    TwoPoint { p1: f64, p2: f64, w: f64 },
}

impl DifficultyDist {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        match *self {
            DifficultyDist::Beta { alpha, beta } if !(alpha > 0.0 && beta > 0.0) => Err(Error::invalid(
                format!("beta parameters must be positive, got ({alpha}, {beta})"),
            )),
            DifficultyDist::PointMass { p } if !unit(p) => {
                Err(Error::invalid(format!("point mass must lie in [0, 1], got {p}")))
            }
            DifficultyDist::TwoPoint { p1, p2, w } if !(unit(p1) && unit(p2) && unit(w)) => Err(
                Error::invalid(format!("two-point parameters must lie in [0, 1], got ({p1}, {p2}, {w})")),
            ),
            _ => Ok(()),
        }
    }

    pub fn ground_truth(&self) -> Result<GroundTruth> {
        self.validate()?;
        let (mu, sigma2) = match *self {
            DifficultyDist::Beta { alpha, beta } => {
                let s = alpha + beta;
                (alpha / s, alpha * beta / (s * s * (s + 1.0)))
            }
            DifficultyDist::PointMass { p } => (p, 0.0),
            DifficultyDist::Uniform => (0.5, 1.0 / 12.0),
            DifficultyDist::TwoPoint { p1, p2, w } => {
                let mu = w * p1 + (1.0 - w) * p2;
                // w(1-w)(p1-p2)^2 equals w p1^2 + (1-w) p2^2 - mu^2 without cancellation.
                (mu, w * (1.0 - w) * (p1 - p2) * (p1 - p2))
            }
        };
        Ok(GroundTruth { mu, sigma2 })
    }

    fn sampler(&self) -> Result<Sampler> {
        self.validate()?;
        Ok(match *self {
            DifficultyDist::Beta { alpha, beta } => {
                Sampler::Beta(Beta::new(alpha, beta).map_err(|e| Error::invalid(e.to_string()))?)
            }
            DifficultyDist::PointMass { p } => Sampler::Point(p),
            DifficultyDist::Uniform => Sampler::Uniform,
            DifficultyDist::TwoPoint { p1, p2, w } => Sampler::TwoPoint(p1, p2, w),
        })
    }
}

impl fmt::Display for DifficultyDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DifficultyDist::Beta { alpha, beta } => write!(f, "beta:{alpha},{beta}"),
            DifficultyDist::PointMass { p } => write!(f, "point:{p}"),
            DifficultyDist::Uniform => f.write_str("uniform"),
            DifficultyDist::TwoPoint { p1, p2, w } => write!(f, "two-point:{p1},{p2},{w}"),
        }
    }
}

/// Parses `beta:A,B`, `point:P`, `uniform` or `two-point:P1,P2,W`.
impl FromStr for DifficultyDist {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = s.split_once(':').unwrap_or((s, ""));
        let nums = || -> Result<Vec<f64>> {
            args.split(',')
                .filter(|a| !a.trim().is_empty())
                .map(|a| {
                    a.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::invalid(format!("bad number `{a}` in `{s}`")))
                })
                .collect()
        };
        let dist = match (name.trim(), nums()?.as_slice()) {
            ("beta", &[alpha, beta]) => DifficultyDist::Beta { alpha, beta },
            ("point" | "point-mass" | "point_mass", &[p]) => DifficultyDist::PointMass { p },
            ("uniform", &[]) => DifficultyDist::Uniform,
            ("two-point" | "two_point", &[p1, p2, w]) => DifficultyDist::TwoPoint { p1, p2, w },
            _ => {
                return Err(Error::invalid(format!(
                    "unknown difficulty family `{s}` (expected beta:A,B | point:P | uniform | two-point:P1,P2,W)"
                )))
            }
        };
        dist.validate()?;
        Ok(dist)
    }
}

enum Sampler {
    Beta(Beta<f64>),
    Point(f64),
    Uniform,
    TwoPoint(f64, f64, f64),
}

impl Sampler {
    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            Sampler::Beta(b) => b.sample(rng),
            Sampler::Point(p) => *p,
            Sampler::Uniform => rng.random::<f64>(),
            Sampler::TwoPoint(p1, p2, w) => {
                if rng.random::<f64>() < *w {
                    *p1
                } else {
                    *p2
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroundTruth {
    pub mu: f64,
    pub sigma2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticConfig {
    pub n: usize,
    pub k: usize,
    pub difficulty: DifficultyDist,
    pub seed: u64,
    pub replications: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n: 500,
            k: 10,
            difficulty: DifficultyDist::Beta { alpha: 2.0, beta: 2.0 },
            seed: DEFAULT_SEED,
            replications: 10_000,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.k == 0 {
            return Err(Error::invalid("n and k must be at least 1"));
        }
        if self.replications == 0 {
            return Err(Error::invalid("replications must be at least 1"));
        }
        self.difficulty.validate()
    }
}

pub fn ground_truth_of(config: &SyntheticConfig) -> Result<GroundTruth> {
    config.validate()?;
    config.difficulty.ground_truth()
}

/// Draws one replication, calling `emit(prompt, p_i, outcome)` per generation.
fn draw_replication<F>(config: &SyntheticConfig, sampler: &Sampler, replication: usize, mut emit: F)
where
    F: FnMut(usize, bool),
{
    let mut r = rng::stream(config.seed, &[replication as u64]);
    for i in 0..config.n {
        let p = sampler.draw(&mut r);
        for _ in 0..config.k {
            emit(i, r.random::<f64>() < p);
        }
    }
}

/// Replication 0 of the configured process.
pub fn simulate(config: &SyntheticConfig) -> Result<GenerationMatrix> {
    simulate_replication(config, 0)
}

/// One replication as a matrix; answer keys mirror correctness ("1"/"0").
pub fn simulate_replication(config: &SyntheticConfig, replication: usize) -> Result<GenerationMatrix> {
    config.validate()?;
    let sampler = config.difficulty.sampler()?;
    let mut outcomes = vec![Vec::with_capacity(config.k); config.n];
    draw_replication(config, &sampler, replication, |i, y| outcomes[i].push(y));
    let width = config.n.saturating_sub(1).to_string().len().max(4);
    let rows = outcomes
        .into_iter()
        .enumerate()
        .map(|(i, ys)| {
            let keys = ys.iter().map(|&y| Some(if y { "1" } else { "0" }.to_string())).collect();
            PromptRow::new(format!("p{i:0width$}"), ys).with_answer_keys(keys)
        })
        .collect();
    GenerationMatrix::new(rows)
}

/// Per-prompt correct counts of one replication; same draws as [`simulate_replication`].
pub fn simulate_counts(config: &SyntheticConfig, replication: usize) -> Result<Vec<u32>> {
    config.validate()?;
    let sampler = config.difficulty.sampler()?;
    let mut counts = vec![0u32; config.n];
    draw_replication(config, &sampler, replication, |i, y| counts[i] += u32::from(y));
    Ok(counts)
}

/// Pass thresholds for [`validate_lemma`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LemmaTolerances {
    /// Allowed relative error of the empirical variance.
    pub variance_rel: f64,
    /// Allowed bias in Monte Carlo standard errors.
    pub bias_mc_se: f64,
    /// Allowed distance of the empirical coverage from the nominal level.
    pub coverage_abs: f64,
    pub confidence: f64,
}

impl Default for LemmaTolerances {
    fn default() -> Self {
        LemmaTolerances {
            variance_rel: 0.05,
            bias_mc_se: 3.0,
            coverage_abs: 0.015,
            confidence: 0.95,
        }
    }
}

/// One comparison of a Monte Carlo quantity against its closed-form target.
/// Passes when `|empirical - target| <= tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub target: f64,
    pub empirical: f64,
    pub mc_se: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    fn new(name: &str, target: f64, empirical: f64, mc_se: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            target,
            empirical,
            mc_se,
            tolerance,
            pass: (empirical - target).abs() <= tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaReport {
    pub config: SyntheticConfig,
    pub rng: &'static str,
    pub ground_truth: GroundTruth,
    pub variance: VarianceTerms,
    pub tolerances: LemmaTolerances,
    /// Mean plug-in sigma^2 across replications.
    pub mean_sigma2_hat: f64,
    /// Fraction of replications whose within-prompt term was clamped.
    pub clamped_fraction: f64,
    /// Coverage of `mu_hat +- z * sqrt(true variance)`, for comparison with the plug-in interval.
    pub coverage_at_true_variance: f64,
    pub checks: Vec<Check>,
    pub pass: bool,
}

pub fn validate_lemma(config: &SyntheticConfig) -> Result<LemmaReport> {
    validate_lemma_with(config, LemmaTolerances::default())
}

/// Replicates the simulation and checks unbiasedness, the closed-form
/// variance and interval coverage.
pub fn validate_lemma_with(config: &SyntheticConfig, tol: LemmaTolerances) -> Result<LemmaReport> {
    config.validate()?;
    let reps = config.replications;
    if reps < 1000 {
        return Err(Error::invalid(format!("lemma validation needs at least 1000 replications, got {reps}")));
    }
    // Relative MC error of a sample variance is about sqrt(2 / (R - 1)); demand two of them inside the tolerance.
    let var_rel_se = (2.0 / (reps as f64 - 1.0)).sqrt();
    if 2.0 * var_rel_se > tol.variance_rel {
        return Err(Error::invalid(format!(
            "{reps} replications are too few for a {:.1}% variance tolerance (relative MC error {:.1}%)",
            tol.variance_rel * 100.0,
            var_rel_se * 100.0
        )));
    }
    if config.n < 2 {
        return Err(Error::invalid("lemma validation needs n >= 2"));
    }
    let truth = config.difficulty.ground_truth()?;
    let terms = variance_formula(truth.mu, truth.sigma2, config.n, config.k)?;
    let sampler = config.difficulty.sampler()?;

    let per_rep = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut counts = vec![0u32; config.n];
            draw_replication(config, &sampler, r, |i, y| counts[i] += u32::from(y));
            let e = estimate_from_counts(&counts, config.k, tol.confidence)?;
            let oracle_hit = (e.mu_hat - truth.mu).abs() <= e.z * terms.total.sqrt();
            Ok((e.mu_hat, e.sigma2_hat, e.ci_contains(truth.mu), e.clamped, oracle_hit))
        })
        .collect::<Result<Vec<_>>>()?;

    let rf = reps as f64;
    let mean = per_rep.iter().map(|t| t.0).sum::<f64>() / rf;
    let centred: Vec<f64> = per_rep.iter().map(|t| t.0 - mean).collect();
    let var = centred.iter().map(|d| d * d).sum::<f64>() / (rf - 1.0);
    let m4 = centred.iter().map(|d| d.powi(4)).sum::<f64>() / rf;
    let var_se = ((m4 - var * var * (rf - 3.0) / (rf - 1.0)).max(0.0) / rf).sqrt();
    let mean_se = (var / rf).sqrt();
    let covered = per_rep.iter().filter(|t| t.2).count() as f64 / rf;
    let cov_se = (covered * (1.0 - covered) / rf).sqrt();

    let checks = vec![
        Check::new("unbiasedness", truth.mu, mean, mean_se, tol.bias_mc_se * mean_se),
        Check::new("variance", terms.total, var, var_se, tol.variance_rel * terms.total),
        Check::new("coverage", tol.confidence, covered, cov_se, tol.coverage_abs),
    ];
    let pass = checks.iter().all(|c| c.pass);
    Ok(LemmaReport {
        config: config.clone(),
        rng: RNG_ALGORITHM,
        ground_truth: truth,
        variance: terms,
        tolerances: tol,
        mean_sigma2_hat: per_rep.iter().map(|t| t.1).sum::<f64>() / rf,
        clamped_fraction: per_rep.iter().filter(|t| t.3).count() as f64 / rf,
        coverage_at_true_variance: per_rep.iter().filter(|t| t.4).count() as f64 / rf,
        checks,
        pass,
    })
}
