//! Moment estimators for the benchmark score and the two-term variance
//! decomposition of the score estimate.
//!
//! With `n` prompts and `k` generations per prompt, the grand mean `mu_hat`
//! is unbiased for the benchmark score and
//!
//! ```text
//! Var(mu_hat) = (mu - mu^2 - sigma^2) / (n k)   (within-prompt)
//!             + sigma^2 / n                     (between-prompt)
//! ```
//!
//! where `sigma^2` is the variance of per-prompt success probabilities.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::normal;
use crate::records::{check_rectangular, GenerationMatrix};

/// Estimated P(correct) of a single prompt.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptDifficulty {
    pub prompt_id: String,
    pub p_hat: f64,
    pub k: usize,
    pub correct_count: usize,
}

impl PromptDifficulty {
    pub fn new(prompt_id: impl Into<String>, correct_count: usize, k: usize) -> Result<Self> {
        if k == 0 || correct_count > k {
            return Err(Error::invalid(format!("invalid count {correct_count}/{k}")));
        }
        Ok(PromptDifficulty {
            prompt_id: prompt_id.into(),
            p_hat: correct_count as f64 / k as f64,
            k,
            correct_count,
        })
    }
}

/// Per-prompt correct fractions. Ragged matrices are fine here.
pub fn prompt_difficulties(matrix: &GenerationMatrix) -> Result<Vec<PromptDifficulty>> {
    if matrix.is_empty() {
        return Err(Error::EmptyDataset);
    }
    matrix
        .rows()
        .iter()
        .map(|r| PromptDifficulty::new(r.prompt_id.clone(), r.correct_count() as usize, r.len()))
        .collect()
}

/// The two variance terms and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceTerms {
    pub within: f64,
    pub between: f64,
    pub total: f64,
}

/// Closed-form variance of the score estimate at known `mu` and `sigma2`.
pub fn variance_formula(mu: f64, sigma2: f64, n: usize, k: usize) -> Result<VarianceTerms> {
    if !(0.0..=1.0).contains(&mu) {
        return Err(Error::invalid(format!("mu must lie in [0, 1], got {mu}")));
    }
    if sigma2 < 0.0 {
        return Err(Error::invalid(format!("sigma2 must be non-negative, got {sigma2}")));
    }
    if n == 0 || k == 0 {
        return Err(Error::invalid("n and k must be at least 1"));
    }
    let spread = mu - mu * mu - sigma2;
    if spread < 0.0 {
        return Err(Error::invalid(format!(
            "sigma2 = {sigma2} exceeds mu(1 - mu) = {}",
            mu * (1.0 - mu)
        )));
    }
    let within = spread / (n as f64 * k as f64);
    let between = sigma2 / n as f64;
    Ok(VarianceTerms {
        within,
        between,
        total: within + between,
    })
}

/// Like [`variance_formula`] but clamps a negative within-prompt term to zero
/// instead of failing. The flag reports whether clamping happened.
pub fn plug_in_variance(mu: f64, sigma2: f64, n: usize, k: usize) -> Result<(VarianceTerms, bool)> {
    match variance_formula(mu, sigma2, n, k) {
        Ok(v) => Ok((v, false)),
        Err(_) if sigma2 > mu * (1.0 - mu) && (0.0..=1.0).contains(&mu) && n > 0 && k > 0 => {
            let between = sigma2 / n as f64;
            Ok((
                VarianceTerms {
                    within: 0.0,
                    between,
                    total: between,
                },
                true,
            ))
        }
        Err(e) => Err(e),
    }
}

/// Benchmark score with decomposed variance and a normal-theory interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkEstimate {
    pub mu_hat: f64,
    pub sigma2_hat: f64,
    pub var_within: f64,
    pub var_between: f64,
    pub var_total: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
    pub k: usize,
    pub clamped: bool,
    pub confidence: f64,
    pub z: f64,
}

impl BenchmarkEstimate {
    pub fn ci_width(&self) -> f64 {
        self.ci_high - self.ci_low
    }

    pub fn ci_contains(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }

    /// Score and SE in percent, e.g. `46.1 (0.39)`.
    pub fn report_cell(&self) -> String {
        format_score(self.mu_hat, self.se)
    }
}

/// Formats a proportion and its standard error as percentages: one decimal
/// for the score, two for the SE.
pub fn format_score(mu: f64, se: f64) -> String {
    format!("{:.1} ({:.2})", mu * 100.0, se * 100.0)
}

/// Estimate at the default 95% level (z = 1.96).
pub fn estimate(matrix: &GenerationMatrix) -> Result<BenchmarkEstimate> {
    estimate_with_confidence(matrix, 0.95)
}

pub fn estimate_with_confidence(matrix: &GenerationMatrix, confidence: f64) -> Result<BenchmarkEstimate> {
    let k = check_rectangular(matrix)?;
    estimate_from_counts(&matrix.correct_counts(), k, confidence)
}

/// Estimate from per-prompt correct counts out of a common `k`.
///
/// Sums are accumulated in integers, so the result is exact up to the final
/// divisions and independent of prompt order.
pub fn estimate_from_counts(counts: &[u32], k: usize, confidence: f64) -> Result<BenchmarkEstimate> {
    let n = counts.len();
    if n < 2 {
        return Err(Error::invalid(format!("estimate needs at least 2 prompts, got {n}")));
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::invalid(format!("confidence must lie in (0, 1), got {confidence}")));
    }
    if let Some(&c) = counts.iter().find(|&&c| c as usize > k) {
        return Err(Error::invalid(format!("count {c} exceeds k = {k}")));
    }

    let s1: u128 = counts.iter().map(|&c| c as u128).sum();
    let s2: u128 = counts.iter().map(|&c| (c as u128) * (c as u128)).sum();
    let (n128, k128) = (n as u128, k as u128);

    let mu_hat = s1 as f64 / (n as f64 * k as f64);
    // sum (c_i/k - mu)^2 = (n*S2 - S1^2) / (n k^2)
    let centred = n128 * s2 - s1 * s1;
    let sigma2_hat = centred as f64 / ((n128 * (n128 - 1) * k128 * k128) as f64);

    let (terms, clamped) = plug_in_variance(mu_hat, sigma2_hat, n, k)?;
    let z = normal::z_for_confidence(confidence);
    let se = terms.total.sqrt();
    Ok(BenchmarkEstimate {
        mu_hat,
        sigma2_hat,
        var_within: terms.within,
        var_between: terms.between,
        var_total: terms.total,
        se,
        ci_low: mu_hat - z * se,
        ci_high: mu_hat + z * se,
        n,
        k,
        clamped,
        confidence,
        z,
    })
}

/// Per-column scores and the gap between the best and worst single-generation run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunGap {
    pub column_scores: Vec<f64>,
    pub best: f64,
    pub worst: f64,
    pub delta: f64,
}

/// Gap between the best and worst generation column.
pub fn delta_k1(matrix: &GenerationMatrix) -> Result<f64> {
    run_gap(matrix).map(|g| g.delta)
}

pub fn run_gap(matrix: &GenerationMatrix) -> Result<RunGap> {
    let k = check_rectangular(matrix)?;
    if k < 2 {
        return Err(Error::invalid(format!("run gap needs k >= 2, got {k}")));
    }
    let mut sums = vec![0u64; k];
    for row in matrix.rows() {
        for (s, &y) in sums.iter_mut().zip(&row.outcomes) {
            *s += u64::from(y);
        }
    }
    let (lo, hi) = (*sums.iter().min().expect("k >= 2"), *sums.iter().max().expect("k >= 2"));
    let n = matrix.n() as f64;
    Ok(RunGap {
        column_scores: sums.iter().map(|&s| s as f64 / n).collect(),
        best: hi as f64 / n,
        worst: lo as f64 / n,
        delta: (hi - lo) as f64 / n,
    })
}
