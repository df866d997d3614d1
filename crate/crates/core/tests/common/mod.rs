#![allow(dead_code)]

use facetkit_core::{FacetIds, RatingsTensor, ScaleSpec};
use proptest::prelude::*;

/// Weighted kappa straight from the relative-frequency contingency table.
/// `None` when the expected disagreement is zero.
pub fn brute_qwk(min: i32, max: i32, a: &[i32], b: &[i32]) -> Option<f64> {
    let c = (max - min + 1) as usize;
    let n = a.len() as f64;
    let mut obs = vec![vec![0.0; c]; c];
    for (x, y) in a.iter().zip(b) {
        obs[(x - min) as usize][(y - min) as usize] += 1.0 / n;
    }
    let row: Vec<f64> = (0..c).map(|i| obs[i].iter().sum()).collect();
    let col: Vec<f64> = (0..c).map(|j| (0..c).map(|i| obs[i][j]).sum()).collect();
    let k2 = ((c - 1) * (c - 1)) as f64;
    let (mut o, mut e) = (0.0, 0.0);
    for i in 0..c {
        for j in 0..c {
            let w = ((i as f64) - (j as f64)).powi(2) / k2;
            o += w * obs[i][j];
            e += w * row[i] * col[j];
        }
    }
    (e > 0.0).then(|| 1.0 - o / e)
}

/// Alpha from the sample covariance matrix: k/(k−1)·(1 − tr C / ΣC).
pub fn covariance_alpha(rows: &[Vec<f64>]) -> Option<f64> {
    let n = rows.len();
    let k = rows[0].len();
    let means: Vec<f64> = (0..k)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let mut total = 0.0;
    let mut trace = 0.0;
    for a in 0..k {
        for b in 0..k {
            let cov = rows
                .iter()
                .map(|r| (r[a] - means[a]) * (r[b] - means[b]))
                .sum::<f64>()
                / (n as f64 - 1.0);
            total += cov;
            if a == b {
                trace += cov;
            }
        }
    }
    (total > 1e-12).then(|| k as f64 / (k as f64 - 1.0) * (1.0 - trace / total))
}

pub fn ids(np: usize, ni: usize, nr: usize) -> FacetIds {
    FacetIds::new(
        (0..np).map(|p| format!("p{p}")).collect(),
        (0..ni).map(|i| format!("i{i}")).collect(),
        (0..nr).map(|r| format!("r{r}")).collect(),
    )
    .unwrap()
}

/// Every (person, item, rater) triple listed; `None` entries are missing.
pub fn full_tensor(
    min: i32,
    max: i32,
    np: usize,
    ni: usize,
    nr: usize,
    cells: &[Option<i32>],
) -> RatingsTensor {
    let entries = (0..np).flat_map(move |p| {
        (0..ni).flat_map(move |i| (0..nr).map(move |r| (p, i, r, cells[(p * ni + i) * nr + r])))
    });
    RatingsTensor::from_cells(ScaleSpec::new(min, max).unwrap(), ids(np, ni, nr), entries).unwrap()
}

/// A fully listed tensor with some missing cells and at least one score.
pub fn arb_tensor() -> impl Strategy<Value = RatingsTensor> {
    (-3i32..3, 1i32..7, 1usize..6, 1usize..4, 1usize..4)
        .prop_flat_map(|(min, width, np, ni, nr)| {
            let max = min + width;
            let cell = prop_oneof![4 => (min..=max).prop_map(Some), 1 => Just(None)];
            (
                Just((min, max, np, ni, nr)),
                prop::collection::vec(cell, np * ni * nr),
            )
        })
        .prop_filter("needs a score", |(_, cells)| {
            cells.iter().any(Option::is_some)
        })
        .prop_map(|((min, max, np, ni, nr), cells)| full_tensor(min, max, np, ni, nr, &cells))
}
