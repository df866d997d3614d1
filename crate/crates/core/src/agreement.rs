//! Inter-rater accuracy (weighted kappa) and intra-rater consistency
//! (Cronbach alpha).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ratings::{Facet, RatingsTensor, ScaleSpec};

/// Disagreement weighting of the kappa contingency table.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    /// `w(a, b) = (a − b)² / K²`
    #[default]
    Quadratic,
    /// `w(a, b) = |a − b| / K`
    Linear,
    /// `w(a, b) = 1` when `a ≠ b`
    Unweighted,
}

impl Weighting {
    fn integer_weight(self, a: usize, b: usize) -> u64 {
        let d = a.abs_diff(b) as u64;
        match self {
            Weighting::Quadratic => d * d,
            Weighting::Linear => d,
            Weighting::Unweighted => u64::from(d != 0),
        }
    }

    fn normalizer(self, max_category: usize) -> f64 {
        let k = max_category as f64;
        match self {
            Weighting::Quadratic => k * k,
            Weighting::Linear => k,
            Weighting::Unweighted => 1.0,
        }
    }
}

/// Kappa and its two disagreement terms for one set of paired scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaStats {
    pub n_pairs: usize,
    pub kappa: f64,
    pub observed_disagreement: f64,
    pub expected_disagreement: f64,
}

/// Weighted kappa over paired raw scores, with the contingency table
/// spanning every category of `scale`.
///
/// Sums run over integer counts, so the result is exactly symmetric in the
/// two raters and exactly invariant to the order of the pairs.
pub fn weighted_kappa(
    scale: ScaleSpec,
    pairs: &[(i32, i32)],
    weighting: Weighting,
) -> Result<KappaStats> {
    let n = pairs.len();
    if n < 2 {
        return Err(Error::TooFewPairs(n));
    }
    let c = scale.num_categories();
    let mut joint = vec![0u64; c * c];
    let mut row = vec![0u64; c];
    let mut col = vec![0u64; c];
    for &(a, b) in pairs {
        if !scale.contains(a) || !scale.contains(b) {
            return Err(Error::ScoreOutOfRange {
                line: 0,
                score: if scale.contains(a) { b } else { a },
                min: scale.min_score(),
                max: scale.max_score(),
            });
        }
        let (a, b) = (scale.category(a), scale.category(b));
        joint[a * c + b] += 1;
        row[a] += 1;
        col[b] += 1;
    }
    // Σ_{i<j} w_ij (x_ij + x_ji): the diagonal has zero weight.
    let mut observed: u128 = 0;
    let mut expected: u128 = 0;
    for i in 0..c {
        for j in i + 1..c {
            let w = weighting.integer_weight(i, j) as u128;
            observed += w * (joint[i * c + j] + joint[j * c + i]) as u128;
            expected += w * (row[i] as u128 * col[j] as u128 + row[j] as u128 * col[i] as u128);
        }
    }
    if expected == 0 {
        return Err(Error::DegenerateMarginals);
    }
    let nf = n as f64;
    let norm = weighting.normalizer(scale.max_category());
    let kappa = 1.0 - (nf * observed as f64) / expected as f64;
    Ok(KappaStats {
        n_pairs: n,
        kappa,
        observed_disagreement: observed as f64 / (norm * nf),
        expected_disagreement: expected as f64 / (norm * nf * nf),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QwkResult {
    pub rater_a: String,
    pub rater_b: String,
    pub item_group: Vec<String>,
    pub n_pairs: usize,
    pub kappa: f64,
    pub observed_disagreement: f64,
    pub expected_disagreement: f64,
}

/// Paired scores of two raters over `items`, one pair per (person, item)
/// where both scores are present. Person-major order.
pub fn paired_scores(
    tensor: &RatingsTensor,
    rater_a: usize,
    rater_b: usize,
    items: &[usize],
) -> Vec<(i32, i32)> {
    let (np, _, _) = tensor.dims();
    let mut out = Vec::new();
    for p in 0..np {
        for &i in items {
            if let (Some(a), Some(b)) = (tensor.score(p, i, rater_a), tensor.score(p, i, rater_b)) {
                out.push((a, b));
            }
        }
    }
    out
}

/// Quadratic weighted kappa between two raters, pooled over `items`.
pub fn qwk<S: AsRef<str>>(
    tensor: &RatingsTensor,
    rater_a: &str,
    rater_b: &str,
    items: &[S],
) -> Result<QwkResult> {
    qwk_weighted(tensor, rater_a, rater_b, items, Weighting::Quadratic)
}

pub fn qwk_weighted<S: AsRef<str>>(
    tensor: &RatingsTensor,
    rater_a: &str,
    rater_b: &str,
    items: &[S],
    weighting: Weighting,
) -> Result<QwkResult> {
    let ids = tensor.ids();
    let a = ids.require(Facet::Rater, rater_a)?;
    let b = ids.require(Facet::Rater, rater_b)?;
    if items.is_empty() {
        return Err(Error::EmptyFacet(Facet::Item));
    }
    let item_pos = ids.resolve(Facet::Item, items)?;
    let pairs = paired_scores(tensor, a, b, &item_pos);
    let stats = weighted_kappa(tensor.scale(), &pairs, weighting)?;
    Ok(QwkResult {
        rater_a: rater_a.to_string(),
        rater_b: rater_b.to_string(),
        item_group: item_pos.iter().map(|&i| ids.items()[i].clone()).collect(),
        n_pairs: stats.n_pairs,
        kappa: stats.kappa,
        observed_disagreement: stats.observed_disagreement,
        expected_disagreement: stats.expected_disagreement,
    })
}

/// A named set of items analysed together.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemGroup {
    pub name: String,
    pub items: Vec<String>,
}

impl ItemGroup {
    pub fn new(name: impl Into<String>, items: Vec<String>) -> Self {
        Self {
            name: name.into(),
            items,
        }
    }

    /// One single-item group per item of the tensor.
    pub fn per_item(tensor: &RatingsTensor) -> Vec<ItemGroup> {
        tensor
            .ids()
            .items()
            .iter()
            .map(|i| ItemGroup::new(i.clone(), vec![i.clone()]))
            .collect()
    }
}

/// One (candidate, benchmark, item group) cell of an agreement table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QwkRow {
    pub candidate: String,
    pub benchmark: String,
    pub group: String,
    pub n_pairs: usize,
    /// `None` when the cell is undefined; see `note`.
    pub kappa: Option<f64>,
    pub observed_disagreement: Option<f64>,
    pub expected_disagreement: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgreementTable {
    pub rows: Vec<QwkRow>,
}

impl AgreementTable {
    pub fn get(&self, candidate: &str, benchmark: &str, group: &str) -> Option<&QwkRow> {
        self.rows
            .iter()
            .find(|r| r.candidate == candidate && r.benchmark == benchmark && r.group == group)
    }

    /// CSV with one row per cell, kappa printed to 3 decimals.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "candidate",
            "benchmark",
            "group",
            "n_pairs",
            "kappa",
            "note",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.candidate.as_str(),
                r.benchmark.as_str(),
                r.group.as_str(),
                &r.n_pairs.to_string(),
                &r.kappa.map_or(String::new(), |k| format!("{k:.3}")),
                r.note.as_deref().unwrap_or(""),
            ])?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf-8"))
    }

    /// Wide layout: one line per candidate, one column per (group, benchmark).
    pub fn to_wide_csv(&self) -> Result<String> {
        let mut cols: Vec<(String, String)> = Vec::new();
        let mut cands: Vec<String> = Vec::new();
        for r in &self.rows {
            let key = (r.group.clone(), r.benchmark.clone());
            if !cols.contains(&key) {
                cols.push(key);
            }
            if !cands.contains(&r.candidate) {
                cands.push(r.candidate.clone());
            }
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["rater".to_string()];
        header.extend(cols.iter().map(|(g, b)| format!("{g}:{b}")));
        w.write_record(&header)?;
        for c in &cands {
            let mut line = vec![c.clone()];
            for (g, b) in &cols {
                let cell = self
                    .get(c, b, g)
                    .and_then(|r| r.kappa)
                    .map_or(String::new(), |k| format!("{k:.3}"));
                line.push(cell);
            }
            w.write_record(&line)?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf-8"))
    }
}

/// QWK of every candidate against every benchmark on every group.
/// Rows are candidate-major, then benchmark, then group in the order given.
/// A degenerate cell is kept with `kappa = None`.
pub fn qwk_matrix<S: AsRef<str>>(
    tensor: &RatingsTensor,
    benchmarks: &[S],
    candidates: &[S],
    groups: &[ItemGroup],
) -> Result<AgreementTable> {
    let ids = tensor.ids();
    for r in benchmarks.iter().chain(candidates) {
        ids.require(Facet::Rater, r.as_ref())?;
    }
    for g in groups {
        if g.items.is_empty() {
            return Err(Error::EmptyFacet(Facet::Item));
        }
        ids.resolve(Facet::Item, &g.items)?;
    }
    let mut rows = Vec::with_capacity(candidates.len() * benchmarks.len() * groups.len());
    for c in candidates {
        for b in benchmarks {
            for g in groups {
                let (c, b) = (c.as_ref(), b.as_ref());
                let row = match qwk(tensor, c, b, &g.items) {
                    Ok(q) => QwkRow {
                        candidate: c.to_string(),
                        benchmark: b.to_string(),
                        group: g.name.clone(),
                        n_pairs: q.n_pairs,
                        kappa: Some(q.kappa),
                        observed_disagreement: Some(q.observed_disagreement),
                        expected_disagreement: Some(q.expected_disagreement),
                        note: None,
                    },
                    Err(e @ (Error::DegenerateMarginals | Error::TooFewPairs(_))) => {
                        let a = ids.require(Facet::Rater, c)?;
                        let bb = ids.require(Facet::Rater, b)?;
                        let items = ids.resolve(Facet::Item, &g.items)?;
                        QwkRow {
                            candidate: c.to_string(),
                            benchmark: b.to_string(),
                            group: g.name.clone(),
                            n_pairs: paired_scores(tensor, a, bb, &items).len(),
                            kappa: None,
                            observed_disagreement: None,
                            expected_disagreement: None,
                            note: Some(e.to_string()),
                        }
                    }
                    Err(e) => return Err(e),
                };
                rows.push(row);
            }
        }
    }
    Ok(AgreementTable { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaResult {
    pub rater: String,
    pub item_group: Vec<String>,
    pub n_items: usize,
    pub n_persons: usize,
    pub alpha: f64,
}

/// Cronbach alpha of a persons × items score matrix (rows are persons).
/// Sample variances use the `n − 1` denominator. Alpha may be negative.
pub fn alpha_from_rows(rows: &[Vec<f64>]) -> Result<f64> {
    let n = rows.len();
    let k = rows.first().map_or(0, Vec::len);
    if k < 2 {
        return Err(Error::TooFewItems(k));
    }
    if n < 2 {
        return Err(Error::TooFewPersons(n));
    }
    if rows.iter().any(|r| r.len() != k) {
        return Err(Error::DimensionMismatch("ragged score matrix".into()));
    }
    let item_var_sum: f64 = (0..k)
        .map(|j| sample_variance(rows.iter().map(|r| r[j])))
        .sum();
    let total_var = sample_variance(rows.iter().map(|r| r.iter().sum::<f64>()));
    if total_var <= 0.0 {
        return Err(Error::NoPersonVariance);
    }
    let kf = k as f64;
    Ok(kf / (kf - 1.0) * (1.0 - item_var_sum / total_var))
}

fn sample_variance(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let (n, sum) = values
        .clone()
        .fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    let mean = sum / n as f64;
    values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)
}

/// Cronbach alpha of one rater's scores across `items`, with listwise
/// deletion of persons missing any item.
pub fn cronbach_alpha<S: AsRef<str>>(
    tensor: &RatingsTensor,
    rater: &str,
    items: &[S],
) -> Result<AlphaResult> {
    let ids = tensor.ids();
    let r = ids.require(Facet::Rater, rater)?;
    let item_pos = ids.resolve(Facet::Item, items)?;
    if item_pos.len() < 2 {
        return Err(Error::TooFewItems(item_pos.len()));
    }
    let rows: Vec<Vec<f64>> = (0..tensor.dims().0)
        .filter_map(|p| {
            item_pos
                .iter()
                .map(|&i| tensor.score(p, i, r).map(f64::from))
                .collect::<Option<Vec<_>>>()
        })
        .collect();
    let alpha = alpha_from_rows(&rows)?;
    Ok(AlphaResult {
        rater: rater.to_string(),
        item_group: item_pos.iter().map(|&i| ids.items()[i].clone()).collect(),
        n_items: item_pos.len(),
        n_persons: rows.len(),
        alpha,
    })
}

/// One (rater, group) alpha cell; `alpha = None` when undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaRow {
    pub rater: String,
    pub group: String,
    pub n_items: usize,
    pub n_persons: usize,
    pub alpha: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AlphaTable {
    pub rows: Vec<AlphaRow>,
}

/// Alpha for every rater on every group; rater-major.
pub fn alpha_table<S: AsRef<str>>(
    tensor: &RatingsTensor,
    raters: &[S],
    groups: &[ItemGroup],
) -> Result<AlphaTable> {
    let mut rows = Vec::new();
    for r in raters {
        for g in groups {
            let row = match cronbach_alpha(tensor, r.as_ref(), &g.items) {
                Ok(a) => AlphaRow {
                    rater: a.rater,
                    group: g.name.clone(),
                    n_items: a.n_items,
                    n_persons: a.n_persons,
                    alpha: Some(a.alpha),
                    note: None,
                },
                Err(
                    e @ (Error::NoPersonVariance | Error::TooFewPersons(_) | Error::TooFewItems(_)),
                ) => AlphaRow {
                    rater: r.as_ref().to_string(),
                    group: g.name.clone(),
                    n_items: g.items.len(),
                    n_persons: 0,
                    alpha: None,
                    note: Some(e.to_string()),
                },
                Err(e) => return Err(e),
            };
            rows.push(row);
        }
    }
    Ok(AlphaTable { rows })
}

impl AlphaTable {
    /// Wide layout: one line per rater, one column per group.
    pub fn to_csv(&self) -> Result<String> {
        let mut groups: Vec<&str> = Vec::new();
        let mut raters: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !groups.contains(&r.group.as_str()) {
                groups.push(&r.group);
            }
            if !raters.contains(&r.rater.as_str()) {
                raters.push(&r.rater);
            }
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["rater"];
        header.extend(&groups);
        w.write_record(&header)?;
        for rater in raters {
            let mut line = vec![rater.to_string()];
            for g in &groups {
                let v = self
                    .rows
                    .iter()
                    .find(|r| r.rater == rater && r.group == *g)
                    .and_then(|r| r.alpha)
                    .map_or(String::new(), |a| format!("{a:.3}"));
                line.push(v);
            }
            w.write_record(&line)?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ratings::FacetIds;

    fn scale(min: i32, max: i32) -> ScaleSpec {
        ScaleSpec::new(min, max).unwrap()
    }

    fn two_rater_tensor(s: ScaleSpec, a: &[i32], b: &[i32]) -> RatingsTensor {
        let ids = FacetIds::new(
            (0..a.len()).map(|p| format!("p{p}")).collect(),
            vec!["I1".into()],
            vec!["A".into(), "B".into()],
        )
        .unwrap();
        let cells = a
            .iter()
            .zip(b)
            .enumerate()
            .flat_map(|(p, (&x, &y))| [(p, 0, 0, Some(x)), (p, 0, 1, Some(y))]);
        RatingsTensor::from_cells(s, ids, cells).unwrap()
    }

    #[test]
    fn perfect_agreement() {
        let s = scale(0, 6);
        let v = [0, 3, 6, 2, 2, 5];
        let pairs: Vec<_> = v.iter().map(|&x| (x, x)).collect();
        assert_eq!(
            weighted_kappa(s, &pairs, Weighting::Quadratic)
                .unwrap()
                .kappa,
            1.0
        );
    }

    #[test]
    fn perfect_reversal() {
        let t = two_rater_tensor(scale(0, 2), &[0, 1, 2], &[2, 1, 0]);
        let q = qwk(&t, "A", "B", &["I1"]).unwrap();
        assert_eq!(q.kappa, -1.0);
        assert!((q.observed_disagreement - 2.0 / 3.0).abs() < 1e-15);
        assert!((q.expected_disagreement - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(q.n_pairs, 3);
    }

    #[test]
    fn degenerate_and_short() {
        let s = scale(0, 6);
        assert!(matches!(
            weighted_kappa(s, &[(3, 3), (3, 3)], Weighting::Quadratic),
            Err(Error::DegenerateMarginals)
        ));
        assert!(matches!(
            weighted_kappa(s, &[(3, 4)], Weighting::Quadratic),
            Err(Error::TooFewPairs(1))
        ));
    }

    #[test]
    fn matrix_layout_and_flags() {
        let t = two_rater_tensor(scale(0, 6), &[3, 3, 3], &[1, 2, 3]);
        let groups = ItemGroup::per_item(&t);
        let table = qwk_matrix(&t, &["B"], &["B"], &groups).unwrap();
        assert_eq!(table.rows.len(), 1);
        assert_eq!(table.rows[0].kappa, Some(1.0));
        // A is constant and B varies: expected disagreement > 0, kappa = 0
        let table = qwk_matrix(&t, &["A", "B"], &["A"], &groups).unwrap();
        assert_eq!(table.rows.len(), 2);
        assert_eq!(table.rows[0].benchmark, "A");
        assert!(table.rows[0].kappa.is_none());
        assert!(table.rows[0]
            .note
            .as_deref()
            .unwrap()
            .contains("degenerate"));
        assert_eq!(table.rows[1].kappa, Some(0.0));
    }

    #[test]
    fn alpha_hand_cases() {
        let a = alpha_from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0], vec![3.0, 3.0]]).unwrap();
        assert!((a - 2.0 / 3.0).abs() < 1e-15);
        let a = alpha_from_rows(&[vec![1.0, 2.0], vec![2.0, 2.0], vec![3.0, 2.0]]).unwrap();
        assert_eq!(a, 0.0);
        let a = alpha_from_rows(&[vec![1.0; 3], vec![4.0; 3], vec![2.0; 3]]).unwrap();
        assert!((a - 1.0).abs() < 1e-15);
        assert!(matches!(
            alpha_from_rows(&[vec![2.0, 2.0], vec![2.0, 2.0]]),
            Err(Error::NoPersonVariance)
        ));
        assert!(matches!(
            alpha_from_rows(&[vec![1.0], vec![2.0]]),
            Err(Error::TooFewItems(1))
        ));
    }

    #[test]
    fn alpha_listwise_deletion() {
        let ids = FacetIds::new(
            vec!["p1".into(), "p2".into(), "p3".into(), "p4".into()],
            vec!["I1".into(), "I2".into()],
            vec!["R".into()],
        )
        .unwrap();
        let cells = vec![
            (0, 0, 0, Some(1)),
            (0, 1, 0, Some(2)),
            (1, 0, 0, Some(2)),
            (1, 1, 0, Some(1)),
            (2, 0, 0, Some(3)),
            (2, 1, 0, Some(3)),
            (3, 0, 0, Some(6)),
            (3, 1, 0, None),
        ];
        let t = RatingsTensor::from_cells(scale(0, 6), ids, cells).unwrap();
        let a = cronbach_alpha(&t, "R", &["I1", "I2"]).unwrap();
        assert_eq!(a.n_persons, 3);
        assert!((a.alpha - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(
            cronbach_alpha(&t, "R", &["I1"]),
            Err(Error::TooFewItems(1))
        ));
    }
}
