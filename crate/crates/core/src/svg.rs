//! Minimal deterministic SVG plotting: a framed canvas with linear axes.
//!
//! Coordinates are printed with two decimals, so identical input always
//! yields identical bytes.

use std::fmt::Write;

const STYLE: &str = "\
.frame{fill:none;stroke:#333;stroke-width:1}\
.tick{stroke:#333;stroke-width:1}\
.grid{stroke:#ddd;stroke-width:0.5}\
.label{font-family:sans-serif;font-size:12px;fill:#222}\
.title{font-family:sans-serif;font-size:14px;fill:#111}\
.point{fill:#4477aa;fill-opacity:0.6;stroke:none}\
.point.flagged{fill:#cc3311;fill-opacity:0.9;stroke:#000;stroke-width:0.5}\
.region{fill:#cc3311;fill-opacity:0.06;stroke:#cc3311;stroke-dasharray:4 3}\
.bar{fill:#4477aa}\
.errorbar{stroke:#222;stroke-width:1.5}\
.estimate{fill:#222}\
.reference{stroke:#cc3311;stroke-width:1;stroke-dasharray:5 3}";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub fn new(min: f64, max: f64) -> Self {
        if (max - min).abs() < f64::EPSILON {
            Range { min: min - 0.5, max: max + 0.5 }
        } else {
            Range { min, max }
        }
    }

    fn frac(&self, v: f64) -> f64 {
        (v - self.min) / (self.max - self.min)
    }

    /// Evenly spaced tick values, `count` intervals.
    pub fn ticks(&self, count: usize) -> Vec<f64> {
        (0..=count)
            .map(|i| self.min + (self.max - self.min) * i as f64 / count as f64)
            .collect()
    }
}

pub struct Canvas {
    width: f64,
    height: f64,
    left: f64,
    right: f64,
    top: f64,
    bottom: f64,
    pub x: Range,
    pub y: Range,
    body: String,
}

impl Canvas {
    pub fn new(width: f64, height: f64, x: Range, y: Range) -> Self {
        Canvas {
            width,
            height,
            left: 64.0,
            right: 20.0,
            top: 36.0,
            bottom: 52.0,
            x,
            y,
            body: String::new(),
        }
    }

    pub fn px(&self, x: f64) -> f64 {
        self.left + self.x.frac(x) * (self.width - self.left - self.right)
    }

    pub fn py(&self, y: f64) -> f64 {
        self.height - self.bottom - self.y.frac(y) * (self.height - self.top - self.bottom)
    }

    /// Frame, ticks, tick labels, axis labels and title.
    pub fn axes(&mut self, title: &str, x_label: &str, y_label: &str, ticks: usize) {
        let (x0, x1) = (self.left, self.width - self.right);
        let (y0, y1) = (self.top, self.height - self.bottom);
        let mut s = String::new();
        for t in self.x.ticks(ticks) {
            let px = self.px(t);
            let _ = write!(
                s,
                r#"<line class="grid" x1="{px:.2}" y1="{y0:.2}" x2="{px:.2}" y2="{y1:.2}"/><line class="tick" x1="{px:.2}" y1="{y1:.2}" x2="{px:.2}" y2="{:.2}"/><text class="label" x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                y1 + 5.0,
                y1 + 18.0,
                tick_label(t)
            );
            s.push('\n');
        }
        for t in self.y.ticks(ticks) {
            let py = self.py(t);
            let _ = write!(
                s,
                r#"<line class="grid" x1="{x0:.2}" y1="{py:.2}" x2="{x1:.2}" y2="{py:.2}"/><line class="tick" x1="{:.2}" y1="{py:.2}" x2="{x0:.2}" y2="{py:.2}"/><text class="label" x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                x0 - 5.0,
                x0 - 8.0,
                py + 4.0,
                tick_label(t)
            );
            s.push('\n');
        }
        let _ = writeln!(
            s,
            r#"<rect class="frame" x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}"/>"#,
            x1 - x0,
            y1 - y0
        );
        let _ = writeln!(
            s,
            r#"<text class="label" x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            self.height - 12.0,
            escape(x_label)
        );
        let _ = writeln!(
            s,
            r#"<text class="label" transform="translate(16 {:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
            (y0 + y1) / 2.0,
            escape(y_label)
        );
        let _ = writeln!(
            s,
            r#"<text class="title" x="{:.2}" y="22" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            escape(title)
        );
        self.body.insert_str(0, &s);
    }

    pub fn raw(&mut self, element: &str) {
        self.body.push_str(element);
        self.body.push('\n');
    }

    pub fn finish(self) -> String {
        format!(
            concat!(
                r#"<?xml version="1.0" encoding="UTF-8"?>"#,
                "\n",
                r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
                "\n<style>{style}</style>\n",
                r##"<rect x="0" y="0" width="{w}" height="{h}" fill="#fff"/>"##,
                "\n{body}</svg>\n"
            ),
            w = self.width,
            h = self.height,
            style = STYLE,
            body = self.body
        )
    }
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

pub fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mapping_is_linear() {
        let c = Canvas::new(400.0, 300.0, Range::new(0.0, 1.0), Range::new(0.0, 1.0));
        assert_eq!(c.px(0.0), 64.0);
        assert_eq!(c.px(1.0), 380.0);
        assert_eq!(c.py(0.0), 248.0);
        assert_eq!(c.py(1.0), 36.0);
    }

    #[test]
    fn degenerate_range_is_widened() {
        let r = Range::new(2.0, 2.0);
        assert_eq!((r.min, r.max), (1.5, 2.5));
    }

    #[test]
    fn escapes_markup() {
        assert_eq!(escape("a<b & \"c\""), "a&lt;b &amp; &quot;c&quot;");
    }
}
