//! Wright maps: persons, raters, items and thresholds on one logit ruler.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::estimate::FacetEstimates;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WrightFormat {
    Ascii,
    #[default]
    Svg,
}

impl std::str::FromStr for WrightFormat {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.trim() {
            "ascii" | "txt" | "text" => Ok(WrightFormat::Ascii),
            "svg" => Ok(WrightFormat::Svg),
            other => Err(crate::Error::InvalidConfig(format!(
                "unknown wright format `{other}`"
            ))),
        }
    }
}

pub const DEFAULT_BUCKET: f64 = 0.25;
const MARGIN: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct WrightRow {
    /// Logit value of this row's tick.
    pub measure: f64,
    pub persons: usize,
    pub raters: Vec<String>,
    pub items: Vec<String>,
    pub thresholds: Vec<String>,
}

/// Bucketed map, rows from the highest measure down.
#[derive(Debug, Clone, PartialEq)]
pub struct WrightMap {
    pub bucket: f64,
    pub top: f64,
    pub bottom: f64,
    pub rows: Vec<WrightRow>,
}

fn tick(measure: f64, bucket: f64) -> i64 {
    (measure / bucket).round() as i64
}

impl WrightMap {
    pub fn build(est: &FacetEstimates, bucket: f64) -> Self {
        let bucket = if bucket > 0.0 && bucket.is_finite() {
            bucket
        } else {
            DEFAULT_BUCKET
        };
        let p = &est.params;
        let all = p
            .theta
            .iter()
            .chain(&p.tau)
            .chain(&p.delta)
            .chain(&p.beta)
            .copied()
            .filter(|v| v.is_finite());
        let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
        let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 0.0) };
        let top = ((hi + MARGIN) / bucket).ceil() as i64;
        let bottom = ((lo - MARGIN) / bucket).floor() as i64;
        let mut rows: Vec<WrightRow> = (bottom..=top)
            .rev()
            .map(|t| WrightRow {
                measure: t as f64 * bucket,
                persons: 0,
                raters: vec![],
                items: vec![],
                thresholds: vec![],
            })
            .collect();
        let row_of = |m: f64| (top - tick(m, bucket).clamp(bottom, top)) as usize;
        for th in p.theta.iter().filter(|v| v.is_finite()) {
            rows[row_of(*th)].persons += 1;
        }
        for (id, t) in est.ids.raters().iter().zip(&p.tau) {
            rows[row_of(*t)].raters.push(id.clone());
        }
        for (id, d) in est.ids.items().iter().zip(&p.delta) {
            rows[row_of(*d)].items.push(id.clone());
        }
        for (h, b) in p.beta.iter().enumerate() {
            rows[row_of(*b)]
                .thresholds
                .push(format!("T{}", est.scale.score(h + 1)));
        }
        WrightMap {
            bucket,
            top: top as f64 * bucket,
            bottom: bottom as f64 * bucket,
            rows,
        }
    }

    /// Row index holding `measure`.
    pub fn row_index(&self, measure: f64) -> usize {
        let top = (self.top / self.bucket).round() as i64;
        let bottom = (self.bottom / self.bucket).round() as i64;
        (top - tick(measure, self.bucket).clamp(bottom, top)) as usize
    }

    pub fn to_ascii(&self) -> String {
        const MAX_STARS: usize = 30;
        let persons = |n: usize| match n {
            0 => String::new(),
            n if n <= MAX_STARS => "*".repeat(n),
            n => format!("{} ({n})", "*".repeat(MAX_STARS)),
        };
        let cols: Vec<[String; 5]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    format!("{:+.2}", r.measure),
                    persons(r.persons),
                    r.raters.join(" "),
                    r.items.join(" "),
                    r.thresholds.join(" "),
                ]
            })
            .collect();
        let header = ["Measure", "Persons", "Raters", "Items", "Scale"];
        let mut widths = header.map(str::len);
        for c in &cols {
            for (w, s) in widths.iter_mut().zip(c) {
                *w = (*w).max(s.chars().count());
            }
        }
        let line = |cells: [&str; 5]| -> String {
            let mut s = String::new();
            for (k, (cell, w)) in cells.iter().zip(widths).enumerate() {
                if k == 0 {
                    let _ = write!(s, "{cell:>w$}");
                } else {
                    let _ = write!(s, " | {cell:<w$}");
                }
            }
            s.trim_end().to_string()
        };
        let mut out = String::new();
        out.push_str(&line(header));
        out.push('\n');
        let rule: usize = widths.iter().sum::<usize>() + 3 * (widths.len() - 1);
        out.push_str(&"-".repeat(rule));
        out.push('\n');
        for c in &cols {
            out.push_str(&line([&c[0], &c[1], &c[2], &c[3], &c[4]]));
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "(each row spans {:.2} logits; * = one person)",
            self.bucket
        );
        out
    }

    pub fn to_svg(&self) -> String {
        const ROW_PX: f64 = 16.0;
        const TOP_PAD: f64 = 40.0;
        const AXIS_X: f64 = 70.0;
        const PERSON_X: f64 = 80.0;
        const BAR_UNIT: f64 = 6.0;
        let max_persons = self.rows.iter().map(|r| r.persons).max().unwrap_or(0);
        let person_w = (max_persons as f64 * BAR_UNIT).clamp(60.0, 240.0);
        let bar_unit = if max_persons > 0 {
            (person_w / max_persons as f64).min(BAR_UNIT)
        } else {
            BAR_UNIT
        };
        let rater_x = PERSON_X + person_w + 20.0;
        let label_w = |f: fn(&WrightRow) -> &Vec<String>| {
            self.rows
                .iter()
                .map(|r| f(r).join(" ").chars().count())
                .max()
                .unwrap_or(0) as f64
                * 7.0
                + 20.0
        };
        let item_x = rater_x + label_w(|r| &r.raters).max(60.0);
        let thresh_x = item_x + label_w(|r| &r.items).max(60.0);
        let width = thresh_x + label_w(|r| &r.thresholds).max(60.0);
        let height = TOP_PAD * 2.0 + ROW_PX * self.rows.len().saturating_sub(1) as f64;
        let y = |m: f64| TOP_PAD + (self.top - m) / self.bucket * ROW_PX;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="monospace" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        for (x, label) in [
            (AXIS_X, "Measure"),
            (PERSON_X, "Persons"),
            (rater_x, "Raters"),
            (item_x, "Items"),
            (thresh_x, "Scale"),
        ] {
            let anchor = if x == AXIS_X { "end" } else { "start" };
            let _ = writeln!(
                s,
                r#"<text x="{x:.1}" y="{:.1}" text-anchor="{anchor}" font-weight="bold">{label}</text>"#,
                TOP_PAD - 20.0
            );
        }
        let _ = writeln!(
            s,
            r#"<line x1="{AXIS_X:.1}" y1="{:.1}" x2="{AXIS_X:.1}" y2="{:.1}" stroke="black"/>"#,
            y(self.top),
            y(self.bottom)
        );
        for r in &self.rows {
            let yy = y(r.measure);
            let whole = (r.measure.round() - r.measure).abs() < 1e-9;
            if whole {
                let _ = writeln!(
                    s,
                    r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:+.0}</text>"#,
                    AXIS_X - 6.0,
                    yy + 4.0,
                    r.measure
                );
                let _ = writeln!(
                    s,
                    r##"<line x1="{:.1}" y1="{yy:.1}" x2="{width:.1}" y2="{yy:.1}" stroke="#dddddd"/>"##,
                    AXIS_X
                );
            }
            if r.persons > 0 {
                let _ = writeln!(
                    s,
                    r##"<rect x="{PERSON_X:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#4a6fa5"><title>{} person(s)</title></rect>"##,
                    yy - ROW_PX * 0.4,
                    r.persons as f64 * bar_unit,
                    ROW_PX * 0.8,
                    r.persons
                );
            }
            for (x, labels) in [
                (rater_x, &r.raters),
                (item_x, &r.items),
                (thresh_x, &r.thresholds),
            ] {
                if !labels.is_empty() {
                    let _ = writeln!(
                        s,
                        r#"<text x="{x:.1}" y="{:.1}">{}</text>"#,
                        yy + 4.0,
                        escape(&labels.join(" "))
                    );
                }
            }
        }
        s.push_str("</svg>\n");
        s
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

pub fn render_wright(est: &FacetEstimates, format: WrightFormat) -> String {
    let map = WrightMap::build(est, DEFAULT_BUCKET);
    match format {
        WrightFormat::Ascii => map.to_ascii(),
        WrightFormat::Svg => map.to_svg(),
    }
}
