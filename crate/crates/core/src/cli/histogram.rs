//! Equal-width histogram of P(correct) over [0, 1].

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::PromptDifficulty;
use crate::report::Table;
use crate::svg::{Canvas, Range};

/// Values this close to a bin edge are treated as lying on it, so that
/// `i / k` lands in the bin it opens even when `p * bins` rounds below.
const EDGE_SNAP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
}

/// Bins are `[a, b)` except the last, which is `[a, 1]`.
pub fn difficulty_histogram(difficulties: &[PromptDifficulty], bins: usize) -> Result<Vec<Bin>> {
    if bins < 2 {
        return Err(Error::invalid(format!("bins must be at least 2, got {bins}")));
    }
    if difficulties.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut counts = vec![0usize; bins];
    for d in difficulties {
        counts[bin_index(d.p_hat, bins)] += 1;
    }
    let w = bins as f64;
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| Bin {
            low: i as f64 / w,
            high: (i + 1) as f64 / w,
            count,
        })
        .collect())
}

fn bin_index(p: f64, bins: usize) -> usize {
    let x = p.clamp(0.0, 1.0) * bins as f64;
    let r = x.round();
    let i = if (x - r).abs() < EDGE_SNAP { r } else { x.floor() };
    (i as usize).min(bins - 1)
}

/// `bin,low,high,count`.
pub fn histogram_table(bins: &[Bin]) -> Table {
    let mut t = Table::new(["bin", "low", "high", "count"]);
    for (i, b) in bins.iter().enumerate() {
        t.push([i.to_string(), b.low.to_string(), b.high.to_string(), b.count.to_string()]);
    }
    t
}

pub fn render_histogram(bins: &[Bin], title: &str) -> String {
    let top = bins.iter().map(|b| b.count).max().unwrap_or(0).max(1) as f64;
    let mut c = Canvas::new(560.0, 400.0, Range::new(0.0, 1.0), Range::new(0.0, top * 1.05));
    c.axes(title, "P(correct)", "prompts", 5);
    let mut body = String::new();
    for b in bins {
        let (x0, x1) = (c.px(b.low), c.px(b.high));
        let (y0, y1) = (c.py(b.count as f64), c.py(0.0));
        let _ = writeln!(
            body,
            r#"<rect class="bar" x="{:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}"/>"#,
            x0 + 1.0,
            (x1 - x0 - 2.0).max(0.5),
            y1 - y0
        );
    }
    c.raw(body.trim_end());
    c.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ds(ps: &[(usize, usize)]) -> Vec<PromptDifficulty> {
        ps.iter()
            .enumerate()
            .map(|(i, &(c, k))| PromptDifficulty::new(format!("q{i}"), c, k).unwrap())
            .collect()
    }

    fn counts(d: &[PromptDifficulty], bins: usize) -> Vec<usize> {
        difficulty_histogram(d, bins).unwrap().iter().map(|b| b.count).collect()
    }

    #[test]
    fn boundary_values() {
        assert_eq!(counts(&ds(&[(0, 4), (0, 4), (4, 4), (4, 4)]), 2), vec![2, 2]);
    }

    #[test]
    fn half_lands_in_the_bin_it_opens() {
        let d = ds(&[(1, 2); 7]);
        let c = counts(&d, 10);
        assert_eq!(c[5], 7);
        assert_eq!(c.iter().sum::<usize>(), 7);
    }

    #[test]
    fn uniform_grid_left_closed() {
        let d = ds(&(0..=50).map(|i| (i, 50)).collect::<Vec<_>>());
        assert_eq!(counts(&d, 10), vec![5, 5, 5, 5, 5, 5, 5, 5, 5, 6]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(difficulty_histogram(&[], 10).is_err());
        assert!(difficulty_histogram(&ds(&[(1, 2)]), 1).is_err());
    }

    #[test]
    fn chart_has_one_bar_per_bin() {
        let bins = difficulty_histogram(&ds(&[(1, 3), (2, 3)]), 4).unwrap();
        assert_eq!(render_histogram(&bins, "t").matches(r#"class="bar""#).count(), 4);
    }

    proptest! {
        #[test]
        fn counts_sum_to_n(k in 1usize..60, cs in prop::collection::vec(0usize..60, 1..80), bins in 2usize..40) {
            let d: Vec<_> = cs.iter().enumerate().map(|(i, &c)| PromptDifficulty::new(format!("q{i}"), c % (k + 1), k).unwrap()).collect();
            prop_assert_eq!(counts(&d, bins).iter().sum::<usize>(), d.len());
        }
    }
}
