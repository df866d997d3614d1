//! Wright maps, measure tables, descriptive tables and the bundled report.

mod tables;
mod wright;

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

pub use tables::{
    descriptive_table, measure_table, DescCell, DescRow, DescriptiveTable, MeasureRow,
    MeasureTable, SortOrder, Statistic, MEASURE_COLUMNS,
};
pub use wright::{render_wright, WrightFormat, WrightMap, WrightRow, DEFAULT_BUCKET};

use crate::error::Result;
use crate::estimate::{FacetEstimates, DEFAULT_SEVERITY_CUT};
use crate::fit::{fit_statistics, FitCuts};
use crate::ratings::{Facet, RatingsTensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOptions {
    pub wright: WrightFormat,
    pub bucket: f64,
    pub cuts: FitCuts,
    pub severity_cut: f64,
    pub sort: SortOrder,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            wright: WrightFormat::Svg,
            bucket: DEFAULT_BUCKET,
            cuts: FitCuts::default(),
            severity_cut: DEFAULT_SEVERITY_CUT,
            sort: SortOrder::ByMeasure,
        }
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    n_persons: usize,
    n_items: usize,
    n_raters: usize,
    n_observations: usize,
    n_missing: usize,
    min_score: i32,
    max_score: i32,
    converged: bool,
    iterations_used: usize,
    log_likelihood: f64,
    fit_cuts: FitCuts,
    severity_cut: f64,
    raters: &'a [MeasureRow],
    items: &'a [MeasureRow],
    thresholds: Vec<f64>,
    threshold_se: Vec<f64>,
    warnings: Vec<String>,
}

/// Write the report files into `dir` and return their paths.
///
/// `wright.txt` is always written; `wright.svg` too when the SVG format is
/// requested.
pub fn write_report(
    dir: &Path,
    tensor: &RatingsTensor,
    estimates: &FacetEstimates,
    options: &ReportOptions,
) -> Result<Vec<PathBuf>> {
    estimates.check_aligned(tensor)?;
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, body)?;
        written.push(path);
        Ok(())
    };

    let map = WrightMap::build(estimates, options.bucket);
    put("wright.txt", map.to_ascii())?;
    if options.wright == WrightFormat::Svg {
        put("wright.svg", map.to_svg())?;
    }

    let rater_fit = fit_statistics(tensor, estimates, Facet::Rater)?.with_cuts(options.cuts);
    let item_fit = fit_statistics(tensor, estimates, Facet::Item)?.with_cuts(options.cuts);
    let person_fit = fit_statistics(tensor, estimates, Facet::Person)?.with_cuts(options.cuts);
    let raters = measure_table(estimates, &rater_fit, options.sort, options.severity_cut)?;
    let items = measure_table(estimates, &item_fit, options.sort, options.severity_cut)?;
    let persons = measure_table(estimates, &person_fit, options.sort, options.severity_cut)?;
    put("raters.csv", raters.to_csv()?)?;
    put("items.csv", items.to_csv()?)?;
    put("persons.csv", persons.to_csv()?)?;
    put("descriptives.csv", descriptive_table(tensor).to_csv()?)?;

    let (np, ni, nr) = tensor.dims();
    let mut warnings = estimates.warnings.clone();
    warnings.extend(rater_fit.warnings.iter().cloned());
    let summary = Summary {
        n_persons: np,
        n_items: ni,
        n_raters: nr,
        n_observations: tensor.len(),
        n_missing: tensor.missing_count(),
        min_score: tensor.scale().min_score(),
        max_score: tensor.scale().max_score(),
        converged: estimates.converged,
        iterations_used: estimates.iterations_used,
        log_likelihood: estimates.log_likelihood_final,
        fit_cuts: options.cuts,
        severity_cut: options.severity_cut,
        raters: &raters.rows,
        items: &items.rows,
        thresholds: estimates.params.beta.clone(),
        threshold_se: estimates.se.beta.clone(),
        warnings,
    };
    put(
        "summary.json",
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    Ok(written)
}
