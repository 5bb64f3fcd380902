//! Probability that one model's benchmark score estimate exceeds another's.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::BenchmarkEstimate;
use crate::normal;
use crate::records::{check_rectangular, GenerationMatrix, PromptRow};
use crate::report::Table;
use crate::resample::subsample_counts;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RankMethod {
    AnalyticUnpaired,
    AnalyticPaired,
    Empirical,
}

impl RankMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            RankMethod::AnalyticUnpaired => "analytic_unpaired",
            RankMethod::AnalyticPaired => "analytic_paired",
            RankMethod::Empirical => "empirical",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankComparison {
    pub model_a: String,
    pub model_b: String,
    pub mu_a: f64,
    pub mu_b: f64,
    pub var_a: f64,
    pub var_b: f64,
    pub prob_a_over_b: f64,
    pub method: RankMethod,
}

impl RankComparison {
    pub fn named(mut self, model_a: impl Into<String>, model_b: impl Into<String>) -> Self {
        self.model_a = model_a.into();
        self.model_b = model_b.into();
        self
    }
}

/// Two models' matrices over the same prompts, for the paired comparison.
#[derive(Debug, Clone, Copy)]
pub struct Paired<'a> {
    pub a: &'a GenerationMatrix,
    pub b: &'a GenerationMatrix,
}

/// Φ(numerator / sqrt(variance)), with Φ(-x) computed as 1 - Φ(x) so that
/// swapping the models yields exactly the complement.
fn prob_positive(numerator: f64, variance: f64) -> f64 {
    let sd = variance.max(0.0).sqrt();
    if sd == 0.0 || !sd.is_finite() {
        return match numerator.partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Greater) => 1.0,
            Some(std::cmp::Ordering::Less) => 0.0,
            _ => 0.5,
        };
    }
    let z = numerator / sd;
    if z >= 0.0 {
        normal::cdf(z)
    } else {
        1.0 - normal::cdf(-z)
    }
}

/// Normal-approximation probability that model A's score estimate is above B's.
///
/// Unpaired uses the sum of the two plug-in variances. Paired uses the
/// per-prompt differences of P(correct), which accounts for both models
/// answering the same prompts.
pub fn rank_probability(
    est_a: &BenchmarkEstimate,
    est_b: &BenchmarkEstimate,
    paired: Option<Paired<'_>>,
) -> Result<RankComparison> {
    let base = RankComparison {
        model_a: "a".into(),
        model_b: "b".into(),
        mu_a: est_a.mu_hat,
        mu_b: est_b.mu_hat,
        var_a: est_a.var_total,
        var_b: est_b.var_total,
        prob_a_over_b: 0.5,
        method: RankMethod::AnalyticUnpaired,
    };
    match paired {
        None => Ok(RankComparison {
            prob_a_over_b: prob_positive(est_a.mu_hat - est_b.mu_hat, est_a.var_total + est_b.var_total),
            ..base
        }),
        Some(Paired { a, b }) => {
            let diffs = paired_differences(a, b)?;
            let n = diffs.len();
            if n < 2 {
                return Err(Error::invalid("paired comparison needs at least 2 prompts"));
            }
            let mean = diffs.iter().sum::<f64>() / n as f64;
            let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            Ok(RankComparison {
                prob_a_over_b: prob_positive(mean, var / n as f64),
                method: RankMethod::AnalyticPaired,
                ..base
            })
        }
    }
}

fn align<'a>(a: &'a GenerationMatrix, b: &'a GenerationMatrix) -> Result<Vec<(&'a PromptRow, &'a PromptRow)>> {
    if a.n() != b.n() {
        return Err(Error::PromptMismatch(format!("{} prompts vs {}", a.n(), b.n())));
    }
    let by_id: HashMap<&str, &PromptRow> = b.rows().iter().map(|r| (r.prompt_id.as_str(), r)).collect();
    a.rows()
        .iter()
        .map(|ra| {
            by_id
                .get(ra.prompt_id.as_str())
                .map(|rb| (ra, *rb))
                .ok_or_else(|| Error::PromptMismatch(format!("prompt `{}` missing from second dataset", ra.prompt_id)))
        })
        .collect()
}

/// p_hat(a) - p_hat(b) per prompt, in A's prompt order.
pub fn paired_differences(a: &GenerationMatrix, b: &GenerationMatrix) -> Result<Vec<f64>> {
    let p_hat = |r: &PromptRow| r.correct_count() as f64 / r.len() as f64;
    Ok(align(a, b)?.into_iter().map(|(ra, rb)| p_hat(ra) - p_hat(rb)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlipRate {
    pub k_prime: usize,
    pub trials: usize,
    pub seed: u64,
    /// Model with the higher full-data score ("a" on ties).
    pub favourite: String,
    /// Fraction of trials in which the other model scores strictly higher; ties count half.
    pub rate: f64,
    pub mc_se: f64,
}

/// Rate at which subsampled single-run comparisons invert the full-data ranking.
pub fn empirical_flip_rate(
    a: &GenerationMatrix,
    b: &GenerationMatrix,
    k_prime: usize,
    trials: usize,
    seed: u64,
) -> Result<FlipRate> {
    use rayon::prelude::*;

    let ka = check_rectangular(a)?;
    let kb = check_rectangular(b)?;
    if k_prime == 0 || k_prime > ka.min(kb) {
        return Err(Error::invalid(format!(
            "k' = {k_prime} must lie in [1, {}]",
            ka.min(kb)
        )));
    }
    if trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    let pairs = align(a, b)?;
    let rows_a: Vec<&PromptRow> = pairs.iter().map(|p| p.0).collect();
    let rows_b: Vec<&PromptRow> = pairs.iter().map(|p| p.1).collect();

    // Compare oracle scores exactly: sum_a / (n ka) vs sum_b / (n kb).
    let sum_a: u64 = a.correct_counts().iter().map(|&c| u64::from(c)).sum();
    let sum_b: u64 = b.correct_counts().iter().map(|&c| u64::from(c)).sum();
    let a_favoured = sum_a as u128 * kb as u128 >= sum_b as u128 * ka as u128;

    let outcomes: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng_a = rng::stream(seed, &[k_prime as u64, t as u64, 0]);
            let mut rng_b = rng::stream(seed, &[k_prime as u64, t as u64, 1]);
            let sa: u64 = subsample_counts(&rows_a, k_prime, &mut rng_a).iter().map(|&c| u64::from(c)).sum();
            let sb: u64 = subsample_counts(&rows_b, k_prime, &mut rng_b).iter().map(|&c| u64::from(c)).sum();
            let (fav, other) = if a_favoured { (sa, sb) } else { (sb, sa) };
            match other.cmp(&fav) {
                std::cmp::Ordering::Greater => 1.0,
                std::cmp::Ordering::Equal => 0.5,
                std::cmp::Ordering::Less => 0.0,
            }
        })
        .collect();

    let t = trials as f64;
    let rate = outcomes.iter().sum::<f64>() / t;
    let mc_se = if trials > 1 {
        (outcomes.iter().map(|o| (o - rate).powi(2)).sum::<f64>() / (t - 1.0) / t).sqrt()
    } else {
        0.0
    };
    Ok(FlipRate {
        k_prime,
        trials,
        seed,
        favourite: if a_favoured { "a".into() } else { "b".into() },
        rate,
        mc_se,
    })
}

/// `model_a,model_b,method,mu_a,mu_b,prob_a_over_b`.
pub fn comparison_table(rows: &[RankComparison]) -> Table {
    let mut t = Table::new(["model_a", "model_b", "method", "mu_a", "mu_b", "prob_a_over_b"]);
    for r in rows {
        t.push([
            r.model_a.clone(),
            r.model_b.clone(),
            r.method.as_str().to_string(),
            r.mu_a.to_string(),
            r.mu_b.to_string(),
            r.prob_a_over_b.to_string(),
        ]);
    }
    t
}
