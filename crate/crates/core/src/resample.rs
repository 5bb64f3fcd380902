//! Subsampling study over the number of generations.
//!
//! The full matrix is treated as the population. For every `k'` and trial,
//! each prompt independently draws `k'` of its stored generations uniformly
//! with replacement; the resulting score estimate and interval are collected
//! and summarised per `k'`.

use std::fmt::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::{estimate_from_counts, estimate_with_confidence, BenchmarkEstimate};
use crate::records::{check_rectangular, GenerationMatrix, PromptRow};
use crate::report::Table;
use crate::rng::{self, DEFAULT_SEED, RNG_ALGORITHM};
use crate::svg::{Canvas, Range};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResampleConfig {
    pub k_values: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub confidence: f64,
}

impl Default for ResampleConfig {
    fn default() -> Self {
        ResampleConfig {
            k_values: vec![1, 5, 10, 20],
            trials: 1000,
            seed: DEFAULT_SEED,
            confidence: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResampleSummary {
    pub k: usize,
    pub trials: usize,
    pub mean: f64,
    pub sd: f64,
    /// Standard error of `sd` (normal approximation).
    pub sd_mc_se: f64,
    pub p2_5: f64,
    pub p97_5: f64,
    pub ci_width_mean: f64,
    pub coverage_of_oracle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResampleStudy {
    pub seed: u64,
    pub rng: &'static str,
    pub oracle: BenchmarkEstimate,
    pub summaries: Vec<ResampleSummary>,
}

/// Correct counts of one with-replacement draw of `k_prime` generations per prompt.
pub fn subsample_counts<R: Rng>(rows: &[&PromptRow], k_prime: usize, rng: &mut R) -> Vec<u32> {
    rows.iter()
        .map(|row| {
            let k = row.len();
            (0..k_prime)
                .map(|_| u32::from(row.outcomes[rng.random_range(0..k)]))
                .sum()
        })
        .collect()
}

/// Linear interpolation between order statistics of sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn subsample_scores(matrix: &GenerationMatrix, config: &ResampleConfig) -> Result<ResampleStudy> {
    let k = check_rectangular(matrix)?;
    if config.trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    if config.k_values.is_empty() {
        return Err(Error::invalid("no k values requested"));
    }
    if let Some(&bad) = config.k_values.iter().find(|&&kp| kp == 0 || kp > k) {
        return Err(Error::invalid(format!("k' = {bad} must lie in [1, {k}]")));
    }
    let oracle = estimate_with_confidence(matrix, config.confidence)?;
    let rows: Vec<&PromptRow> = matrix.rows().iter().collect();

    let summaries = config
        .k_values
        .iter()
        .map(|&kp| {
            let estimates = (0..config.trials)
                .into_par_iter()
                .map(|t| {
                    let mut r = rng::stream(config.seed, &[kp as u64, t as u64]);
                    let counts = subsample_counts(&rows, kp, &mut r);
                    estimate_from_counts(&counts, kp, config.confidence)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(summarise(kp, &estimates, oracle.mu_hat))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ResampleStudy {
        seed: config.seed,
        rng: RNG_ALGORITHM,
        oracle,
        summaries,
    })
}

fn summarise(k: usize, estimates: &[BenchmarkEstimate], oracle: f64) -> ResampleSummary {
    let t = estimates.len() as f64;
    let mut scores: Vec<f64> = estimates.iter().map(|e| e.mu_hat).collect();
    let mean = scores.iter().sum::<f64>() / t;
    let var = if estimates.len() > 1 {
        scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (t - 1.0)
    } else {
        0.0
    };
    let sd = var.sqrt();
    scores.sort_by(f64::total_cmp);
    let covered = estimates.iter().filter(|e| e.ci_contains(oracle)).count();
    ResampleSummary {
        k,
        trials: estimates.len(),
        mean,
        sd,
        sd_mc_se: if estimates.len() > 1 { sd / (2.0 * (t - 1.0)).sqrt() } else { 0.0 },
        p2_5: percentile(&scores, 0.025),
        p97_5: percentile(&scores, 0.975),
        ci_width_mean: estimates.iter().map(BenchmarkEstimate::ci_width).sum::<f64>() / t,
        coverage_of_oracle: covered as f64 / t,
    }
}

/// `k,mean,sd,p2.5,p97.5,ci_width_mean,coverage`.
pub fn summary_table(study: &ResampleStudy) -> Table {
    let mut t = Table::new(["k", "mean", "sd", "p2.5", "p97.5", "ci_width_mean", "coverage"]);
    for s in &study.summaries {
        t.push([
            s.k.to_string(),
            s.mean.to_string(),
            s.sd.to_string(),
            s.p2_5.to_string(),
            s.p97_5.to_string(),
            s.ci_width_mean.to_string(),
            s.coverage_of_oracle.to_string(),
        ]);
    }
    t
}

/// Error-bar chart: trial-score mean with its 2.5-97.5 percentile band per
/// k', and the full-data score as a reference line.
pub fn render_chart(study: &ResampleStudy, title: &str) -> String {
    let lo = study
        .summaries
        .iter()
        .map(|s| s.p2_5)
        .fold(study.oracle.mu_hat, f64::min);
    let hi = study
        .summaries
        .iter()
        .map(|s| s.p97_5)
        .fold(study.oracle.mu_hat, f64::max);
    let pad = ((hi - lo) * 0.1).max(0.01);
    let slots = study.summaries.len() as f64;
    let mut c = Canvas::new(
        560.0,
        400.0,
        Range::new(0.0, slots + 1.0),
        Range::new((lo - pad).max(0.0), (hi + pad).min(1.0)),
    );
    c.axes(title, "generations per prompt (k')", "benchmark score", 4);
    let y = c.py(study.oracle.mu_hat);
    c.raw(&format!(
        r#"<line class="reference" x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}"/>"#,
        c.px(0.0),
        c.px(slots + 1.0)
    ));
    let mut body = String::new();
    for (i, s) in study.summaries.iter().enumerate() {
        let x = c.px(i as f64 + 1.0);
        let _ = writeln!(
            body,
            r#"<line class="errorbar" x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}"/><rect class="estimate" x="{:.2}" y="{:.2}" width="6" height="6"/><text class="label" x="{x:.2}" y="{:.2}" text-anchor="middle">k={}</text>"#,
            c.py(s.p2_5),
            c.py(s.p97_5),
            x - 3.0,
            c.py(s.mean) - 3.0,
            c.py(s.p97_5) - 6.0,
            s.k
        );
    }
    c.raw(body.trim_end());
    c.finish()
}

/// Greedy decoding score compared with the sampled estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeGap {
    pub greedy_score: f64,
    pub sampled: BenchmarkEstimate,
    /// greedy minus sampled.
    pub gap: f64,
    pub abs_gap: f64,
    /// |gap| > z * se of the sampled estimate.
    pub outside_ci: bool,
}

pub fn compare_modes(greedy_score: f64, sampled: &BenchmarkEstimate) -> ModeGap {
    let gap = greedy_score - sampled.mu_hat;
    ModeGap {
        greedy_score,
        sampled: sampled.clone(),
        gap,
        abs_gap: gap.abs(),
        outside_ci: gap.abs() > sampled.z * sampled.se,
    }
}

pub fn mode_gap(greedy: &GenerationMatrix, sampled: &GenerationMatrix) -> Result<ModeGap> {
    if check_rectangular(greedy)? != 1 {
        return Err(Error::invalid("greedy matrix must hold exactly one generation per prompt"));
    }
    let mut g: Vec<&str> = greedy.prompt_ids().collect();
    let mut s: Vec<&str> = sampled.prompt_ids().collect();
    g.sort_unstable();
    s.sort_unstable();
    if g != s {
        let missing = g
            .iter()
            .find(|id| s.binary_search(id).is_err())
            .or_else(|| s.iter().find(|id| g.binary_search(id).is_err()))
            .copied()
            .unwrap_or("?");
        return Err(Error::PromptMismatch(format!(
            "greedy and sampled prompt sets differ (e.g. `{missing}`)"
        )));
    }
    let correct: u32 = greedy.correct_counts().iter().sum();
    let greedy_score = correct as f64 / greedy.n() as f64;
    Ok(compare_modes(greedy_score, &crate::estimator::estimate(sampled)?))
}
