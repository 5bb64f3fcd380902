//! Data maps: per-prompt difficulty against semantic consistency.
//!
//! Prompts the model almost never answers correctly while agreeing with
//! itself are candidates for a wrong or ambiguous reference label.

use std::collections::HashMap;
use std::fmt::Write;
use std::path::Path;

use serde::Serialize;

use crate::consistency::ConsistencyScore;
use crate::error::{Error, Result};
use crate::estimator::PromptDifficulty;
use crate::report::{write_atomic, Table};
use crate::svg::{escape, Canvas, Range};

/// Inclusive selection region `p_correct <= tau_p && s_consistency >= tau_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlagRule {
    pub tau_p: f64,
    pub tau_s: f64,
}

impl Default for FlagRule {
    fn default() -> Self {
        FlagRule {
            tau_p: 0.1,
            tau_s: -0.8,
        }
    }
}

impl FlagRule {
    pub fn new(tau_p: f64, tau_s: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau_p) {
            return Err(Error::invalid(format!("tau_p must lie in [0, 1], got {tau_p}")));
        }
        if tau_s.is_nan() || tau_s > 0.0 {
            return Err(Error::invalid(format!("tau_s must be <= 0, got {tau_s}")));
        }
        Ok(FlagRule { tau_p, tau_s })
    }

    pub fn flags(&self, p_correct: f64, s_consistency: f64) -> bool {
        p_correct <= self.tau_p && s_consistency >= self.tau_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataMapPoint {
    pub prompt_id: String,
    pub p_correct: f64,
    pub s_consistency: f64,
    pub num_sets: usize,
    pub flagged: bool,
}

/// Joins difficulties and consistency scores by prompt id, in difficulty order.
pub fn build_map(
    difficulties: &[PromptDifficulty],
    scores: &[ConsistencyScore],
    rule: FlagRule,
) -> Result<Vec<DataMapPoint>> {
    let by_id: HashMap<&str, &ConsistencyScore> = scores.iter().map(|s| (s.prompt_id.as_str(), s)).collect();
    if by_id.len() != scores.len() {
        return Err(Error::PromptMismatch("duplicate prompt in consistency scores".into()));
    }
    if difficulties.len() != scores.len() {
        return Err(Error::PromptMismatch(format!(
            "{} difficulties vs {} consistency scores",
            difficulties.len(),
            scores.len()
        )));
    }
    difficulties
        .iter()
        .map(|d| {
            let s = by_id.get(d.prompt_id.as_str()).ok_or_else(|| {
                Error::PromptMismatch(format!("no consistency score for prompt `{}`", d.prompt_id))
            })?;
            Ok(DataMapPoint {
                prompt_id: d.prompt_id.clone(),
                p_correct: d.p_hat,
                s_consistency: s.s_consistency,
                num_sets: s.num_sets,
                flagged: rule.flags(d.p_hat, s.s_consistency),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlagReport {
    pub count: usize,
    pub points: Vec<DataMapPoint>,
}

/// Flagged points, least likely correct first; ties go to the more consistent prompt.
pub fn flagged_report(map: &[DataMapPoint]) -> FlagReport {
    let mut points: Vec<DataMapPoint> = map.iter().filter(|p| p.flagged).cloned().collect();
    points.sort_by(|a, b| {
        a.p_correct
            .total_cmp(&b.p_correct)
            .then(b.s_consistency.total_cmp(&a.s_consistency))
            .then_with(|| a.prompt_id.cmp(&b.prompt_id))
    });
    FlagReport {
        count: points.len(),
        points,
    }
}

/// `prompt_id,p_correct,s_consistency,num_sets,flagged`, one row per point.
pub fn map_table(map: &[DataMapPoint]) -> Table {
    let mut t = Table::new(["prompt_id", "p_correct", "s_consistency", "num_sets", "flagged"]);
    for p in map {
        t.push([
            p.prompt_id.clone(),
            p.p_correct.to_string(),
            p.s_consistency.to_string(),
            p.num_sets.to_string(),
            p.flagged.to_string(),
        ]);
    }
    t
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterOptions {
    pub width: f64,
    pub height: f64,
    pub title: String,
    /// Put P(correct) on the x axis instead of the y axis.
    pub swap_axes: bool,
    /// Shade the selection region of this rule.
    pub rule: Option<FlagRule>,
}

impl Default for ScatterOptions {
    fn default() -> Self {
        ScatterOptions {
            width: 640.0,
            height: 480.0,
            title: "Data map".into(),
            swap_axes: false,
            rule: Some(FlagRule::default()),
        }
    }
}

/// SVG scatter of the map: x = S(consistency), y = P(correct) by default.
/// Each point is one `<circle>`; flagged points carry the `flagged` class.
pub fn render_scatter(map: &[DataMapPoint], opts: &ScatterOptions) -> Result<String> {
    if map.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let s_min = map.iter().map(|p| p.s_consistency).fold(0.0_f64, f64::min);
    let s_lo = if let Some(r) = opts.rule { s_min.min(r.tau_s) } else { s_min };
    let s_range = Range::new((s_lo * 2.0).floor() / 2.0, 0.0);
    let p_range = Range::new(0.0, 1.0);
    let (x_range, y_range) = if opts.swap_axes { (p_range, s_range) } else { (s_range, p_range) };
    let (x_label, y_label) = if opts.swap_axes {
        ("P(correct)", "S(consistency)")
    } else {
        ("S(consistency)", "P(correct)")
    };
    let mut canvas = Canvas::new(opts.width, opts.height, x_range, y_range);
    canvas.axes(&opts.title, x_label, y_label, 5);

    let place = |p_val: f64, s_val: f64| if opts.swap_axes { (p_val, s_val) } else { (s_val, p_val) };

    if let Some(rule) = opts.rule {
        let (xa, ya) = place(0.0, rule.tau_s);
        let (xb, yb) = place(rule.tau_p, 0.0);
        let (x0, x1) = (canvas.px(xa).min(canvas.px(xb)), canvas.px(xa).max(canvas.px(xb)));
        let (y0, y1) = (canvas.py(ya).min(canvas.py(yb)), canvas.py(ya).max(canvas.py(yb)));
        canvas.raw(&format!(
            r#"<rect class="region" x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}"/>"#,
            x1 - x0,
            y1 - y0
        ));
    }

    let mut markers = String::new();
    for p in map {
        let (x, y) = place(p.p_correct, p.s_consistency);
        let class = if p.flagged { "point flagged" } else { "point" };
        let _ = writeln!(
            markers,
            r#"<circle class="{class}" cx="{:.2}" cy="{:.2}" r="3.5"><title>{}</title></circle>"#,
            canvas.px(x),
            canvas.py(y),
            escape(&p.prompt_id)
        );
    }
    canvas.raw(markers.trim_end());
    Ok(canvas.finish())
}

pub fn write_scatter(map: &[DataMapPoint], opts: &ScatterOptions, path: &Path) -> Result<()> {
    let doc = render_scatter(map, opts)?;
    write_atomic(path, doc.as_bytes())
}
