//! Measure tables and per-rater descriptive score tables.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{classify_severity, Extreme, FacetEstimates, Severity};
use crate::fit::{FitFlag, FitReport};
use crate::ratings::{Facet, RatingsTensor};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SortOrder {
    #[default]
    ByMeasure,
    ById,
}

impl std::str::FromStr for SortOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "by_measure" | "by-measure" | "measure" => Ok(SortOrder::ByMeasure),
            "by_id" | "by-id" | "id" => Ok(SortOrder::ById),
            other => Err(Error::InvalidConfig(format!(
                "unknown sort order `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureRow {
    pub id: String,
    pub measure: f64,
    pub se: f64,
    pub infit_ms: Option<f64>,
    pub outfit_ms: Option<f64>,
    pub n_obs: usize,
    pub extreme: Extreme,
    pub fit_flag: FitFlag,
    /// Raters only.
    pub severity: Option<Severity>,
}

impl MeasureRow {
    /// Labels joined with `;`, or `none`.
    pub fn flags(&self) -> String {
        let mut out: Vec<String> = Vec::new();
        match self.severity {
            Some(Severity::Severe) => out.push("severe".into()),
            Some(Severity::Lenient) => out.push("lenient".into()),
            _ => {}
        }
        if self.fit_flag != FitFlag::None {
            out.push(self.fit_flag.to_string());
        }
        match self.extreme {
            Extreme::MinExtreme => out.push("min_extreme".into()),
            Extreme::MaxExtreme => out.push("max_extreme".into()),
            Extreme::None => {}
        }
        if out.is_empty() {
            "none".into()
        } else {
            out.join(";")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureTable {
    pub facet: Facet,
    pub rows: Vec<MeasureRow>,
}

pub const MEASURE_COLUMNS: [&str; 7] = [
    "id",
    "measure",
    "se",
    "infit_ms",
    "outfit_ms",
    "n_obs",
    "flags",
];

fn fmt2(v: f64) -> String {
    let s = format!("{v:.2}");
    // avoid "-0.00"
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

impl MeasureTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(MEASURE_COLUMNS)?;
        for r in &self.rows {
            w.write_record([
                r.id.clone(),
                fmt2(r.measure),
                fmt2(r.se),
                r.infit_ms.map_or(String::new(), fmt2),
                r.outfit_ms.map_or(String::new(), fmt2),
                r.n_obs.to_string(),
                r.flags(),
            ])?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf-8"))
    }

    /// Full precision, plus the joined flag string per row.
    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Row<'a> {
            #[serde(flatten)]
            row: &'a MeasureRow,
            flags: String,
        }
        let rows: Vec<Row> = self
            .rows
            .iter()
            .map(|row| Row {
                row,
                flags: row.flags(),
            })
            .collect();
        Ok(serde_json::to_string_pretty(&serde_json::json!({
            "facet": self.facet,
            "rows": rows,
        }))?)
    }
}

/// One row per element of `fit.facet`. Severity labels use `severity_cut`
/// and apply to raters only.
pub fn measure_table(
    estimates: &FacetEstimates,
    fit: &FitReport,
    sort: SortOrder,
    severity_cut: f64,
) -> Result<MeasureTable> {
    let facet = fit.facet;
    let ids = estimates.ids.of(facet);
    let measures = estimates.params.of(facet);
    let ses = estimates.se.of(facet);
    let extremes = estimates.extreme_flags.of(facet);
    for e in &fit.elements {
        if ids.get(e.index) != Some(&e.id) {
            return Err(Error::DimensionMismatch(format!(
                "fit report {facet} `{}` does not line up with the estimates",
                e.id
            )));
        }
    }
    let mut rows: Vec<MeasureRow> = ids
        .iter()
        .enumerate()
        .map(|(k, id)| {
            let f = fit.elements.iter().find(|e| e.index == k);
            MeasureRow {
                id: id.clone(),
                measure: measures[k],
                se: ses[k],
                infit_ms: f.map(|f| f.infit_ms),
                outfit_ms: f.map(|f| f.outfit_ms),
                n_obs: f.map_or(0, |f| f.n_obs),
                extreme: extremes[k],
                fit_flag: f.map_or(FitFlag::None, |f| f.flag),
                severity: (facet == Facet::Rater)
                    .then(|| classify_severity(measures[k], severity_cut)),
            }
        })
        .collect();
    if sort == SortOrder::ByMeasure {
        // stable: ties keep facet order
        rows.sort_by(|a, b| a.measure.total_cmp(&b.measure));
    } else {
        rows.sort_by(|a, b| a.id.cmp(&b.id));
    }
    Ok(MeasureTable { facet, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescCell {
    pub n: usize,
    pub mean: Option<f64>,
    /// Sample SD; `None` with fewer than two scores.
    pub sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescRow {
    pub rater: String,
    pub cells: Vec<DescCell>,
    /// Averages of the defined cell values across items.
    pub average_mean: Option<f64>,
    pub average_sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveTable {
    pub items: Vec<String>,
    pub rows: Vec<DescRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Statistic {
    Mean,
    Sd,
}

fn mean_sd(values: &[f64]) -> DescCell {
    let n = values.len();
    if n == 0 {
        return DescCell {
            n,
            mean: None,
            sd: None,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = (n > 1).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    });
    DescCell {
        n,
        mean: Some(mean),
        sd,
    }
}

fn average(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Mean and sample SD of present scores per (rater, item).
pub fn descriptive_table(tensor: &RatingsTensor) -> DescriptiveTable {
    let (np, ni, nr) = tensor.dims();
    let ids = tensor.ids();
    let rows = (0..nr)
        .map(|r| {
            let cells: Vec<DescCell> = (0..ni)
                .map(|i| {
                    let v: Vec<f64> = (0..np)
                        .filter_map(|p| tensor.score(p, i, r))
                        .map(f64::from)
                        .collect();
                    mean_sd(&v)
                })
                .collect();
            DescRow {
                rater: ids.raters()[r].clone(),
                average_mean: average(cells.iter().map(|c| c.mean)),
                average_sd: average(cells.iter().map(|c| c.sd)),
                cells,
            }
        })
        .collect();
    DescriptiveTable {
        items: ids.items().to_vec(),
        rows,
    }
}

impl DescriptiveTable {
    pub fn get(&self, rater: &str, item: &str) -> Option<&DescCell> {
        let i = self.items.iter().position(|x| x == item)?;
        self.rows
            .iter()
            .find(|r| r.rater == rater)
            .map(|r| &r.cells[i])
    }

    /// One line per (rater, item), then a per-rater `average` line.
    pub fn to_csv(&self) -> Result<String> {
        let opt = |v: Option<f64>| v.map_or(String::new(), fmt2);
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["rater", "item", "n", "mean", "sd"])?;
        for row in &self.rows {
            for (item, c) in self.items.iter().zip(&row.cells) {
                w.write_record([&row.rater, item, &c.n.to_string(), &opt(c.mean), &opt(c.sd)])?;
            }
            let n: usize = row.cells.iter().map(|c| c.n).sum();
            w.write_record([
                row.rater.as_str(),
                "average",
                &n.to_string(),
                &opt(row.average_mean),
                &opt(row.average_sd),
            ])?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf-8"))
    }

    /// Rater × item grid of one statistic with a trailing `average` column.
    pub fn to_wide_csv(&self, stat: Statistic) -> Result<String> {
        let pick = |c: &DescCell| match stat {
            Statistic::Mean => c.mean,
            Statistic::Sd => c.sd,
        };
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["rater".to_string()];
        header.extend(self.items.iter().cloned());
        header.push("average".into());
        w.write_record(&header)?;
        for row in &self.rows {
            let mut line = vec![row.rater.clone()];
            line.extend(
                row.cells
                    .iter()
                    .map(|c| pick(c).map_or(String::new(), fmt2)),
            );
            let avg = match stat {
                Statistic::Mean => row.average_mean,
                Statistic::Sd => row.average_sd,
            };
            line.push(avg.map_or(String::new(), fmt2));
            w.write_record(&line)?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf-8"))
    }
}
