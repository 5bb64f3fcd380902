//! One-parameter logistic bridge: P(correct) = sigmoid(theta - b).
//!
//! With a single model the ability `theta` is a fixed anchor and each prompt's
//! difficulty parameter is `b = theta - logit(p_hat)`. Estimates of exactly 0
//! or 1 are pulled inside the unit interval first.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::PromptDifficulty;
use crate::report::Table;

/// How far from 0 and 1 estimates are clamped before taking the logit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsilonPolicy {
    /// `1 / (2k)`: half a count at the prompt's own generation count.
    HalfCount,
    Fixed(f64),
}

impl EpsilonPolicy {
    fn epsilon(self, k: usize) -> Result<f64> {
        match self {
            EpsilonPolicy::HalfCount => Ok(1.0 / (2.0 * k as f64)),
            EpsilonPolicy::Fixed(e) if e > 0.0 && e < 0.5 => Ok(e),
            EpsilonPolicy::Fixed(e) => Err(Error::invalid(format!("epsilon must lie in (0, 0.5), got {e}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IrtDifficulty {
    pub prompt_id: String,
    pub theta: f64,
    pub b: f64,
    pub p_hat: f64,
    /// The clamped probability actually mapped.
    pub p_star: f64,
    pub p_clamped: bool,
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn to_irt(difficulties: &[PromptDifficulty], theta: f64, policy: EpsilonPolicy) -> Result<Vec<IrtDifficulty>> {
    if !theta.is_finite() {
        return Err(Error::invalid(format!("theta must be finite, got {theta}")));
    }
    difficulties
        .iter()
        .map(|d| {
            if d.k < 1 {
                return Err(Error::invalid(format!("prompt `{}` has k = 0", d.prompt_id)));
            }
            let eps = policy.epsilon(d.k)?;
            let p_star = d.p_hat.clamp(eps, 1.0 - eps);
            Ok(IrtDifficulty {
                prompt_id: d.prompt_id.clone(),
                theta,
                b: theta - logit(p_star),
                p_hat: d.p_hat,
                p_star,
                p_clamped: p_star != d.p_hat,
            })
        })
        .collect()
}

/// Probability of a correct answer at difficulty `b` and ability `theta`.
pub fn from_irt(b: f64, theta: f64) -> f64 {
    sigmoid(theta - b)
}

/// `prompt_id,p_hat,b,clamped`.
pub fn irt_table(items: &[IrtDifficulty]) -> Table {
    let mut t = Table::new(["prompt_id", "p_hat", "b", "clamped"]);
    for d in items {
        t.push([d.prompt_id.clone(), d.p_hat.to_string(), d.b.to_string(), d.p_clamped.to_string()]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn diff(p: f64, k: usize) -> PromptDifficulty {
        PromptDifficulty {
            prompt_id: "q".into(),
            p_hat: p,
            k,
            correct_count: (p * k as f64).round() as usize,
        }
    }

    fn b_of(p: f64, k: usize, theta: f64) -> IrtDifficulty {
        to_irt(&[diff(p, k)], theta, EpsilonPolicy::HalfCount).unwrap().remove(0)
    }

    #[test]
    fn examples() {
        assert_eq!(b_of(0.5, 10, 0.0).b, 0.0);
        assert!((b_of(0.731, 1000, 1.0).b - 0.0001).abs() < 1e-3);

        let edge = b_of(1.0, 50, 0.0);
        assert!(edge.p_clamped);
        assert!((edge.p_star - 0.99).abs() < 1e-15);
        assert!((edge.b + 99f64.ln()).abs() < 1e-12);
        assert!((edge.b + 4.595).abs() < 1e-3);
    }

    #[test]
    fn from_irt_examples() {
        assert_eq!(from_irt(0.0, 0.0), 0.5);
        assert_eq!(from_irt(1.7, 1.7), 0.5);
        assert!((from_irt(-2.0, 0.0) - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-15);
        assert!((from_irt(-2.0, 0.0) - 0.8808).abs() < 1e-4);
    }

    #[test]
    fn errors() {
        assert!(to_irt(&[diff(0.5, 0)], 0.0, EpsilonPolicy::HalfCount).is_err());
        assert!(to_irt(&[diff(0.5, 4)], f64::NAN, EpsilonPolicy::HalfCount).is_err());
        assert!(to_irt(&[diff(0.5, 4)], 0.0, EpsilonPolicy::Fixed(0.7)).is_err());
        let fixed = to_irt(&[diff(0.0, 4)], 0.0, EpsilonPolicy::Fixed(0.05)).unwrap();
        assert_eq!(fixed[0].p_star, 0.05);
    }

    #[test]
    fn sigmoid_is_stable_in_tails() {
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(-800.0) < 1e-300);
        assert_eq!(sigmoid(800.0), 1.0);
    }

    #[test]
    fn export_rows() {
        let t = irt_table(&[b_of(0.5, 2, 0.0)]);
        assert_eq!(t.to_csv(), "prompt_id,p_hat,b,clamped\nq,0.5,0,false\n");
    }

    proptest! {
        #[test]
        fn round_trip(p in 0.0f64..=1.0, k in 1usize..200, theta in -5.0f64..5.0) {
            let d = b_of(p, k, theta);
            let eps = 1.0 / (2.0 * k as f64);
            prop_assert!((from_irt(d.b, theta) - p.clamp(eps, 1.0 - eps)).abs() < 1e-12);
        }

        #[test]
        fn easier_means_lower_b(a in 0usize..=50, c in 0usize..=50) {
            prop_assume!(a < c);
            prop_assert!(b_of(c as f64 / 50.0, 50, 0.0).b < b_of(a as f64 / 50.0, 50, 0.0).b);
        }

        #[test]
        fn theta_shift(p in 0.0f64..=1.0, theta in -3.0f64..3.0, c in -3.0f64..3.0) {
            let base = b_of(p, 20, theta);
            let shifted = b_of(p, 20, theta + c);
            prop_assert!((shifted.b - (base.b + c)).abs() < 1e-12);
            prop_assert!((from_irt(base.b + c, theta + c) - from_irt(base.b, theta)).abs() < 1e-12);
        }
    }
}
