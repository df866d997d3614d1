//! Sampling rating data from the model, with optional rater pathologies.
//!
//! Random numbers come from ChaCha8 (`rand_chacha`), whose output stream
//! is fixed for a given seed. Stream 0 draws design-level quantities
//! (rater severities from a uniform range); person `p` draws from stream
//! `p + 1`, so results do not depend on evaluation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{category_probs_into, ModelParams};
use crate::ratings::{FacetIds, RatingsTensor, ScaleSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThetaDist {
    Normal { mean: f64, sd: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TauSpec {
    Values(Vec<f64>),
    Uniform { a: f64, b: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pathology {
    /// With probability `p`, replace the score by a uniformly drawn category.
    Noise { p: f64 },
    /// Pull the score toward the middle category by the fraction `shrink`.
    Compression { shrink: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaterPathology {
    pub rater: String,
    #[serde(flatten)]
    pub kind: Pathology,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub n_persons: usize,
    pub n_items: usize,
    pub n_raters: usize,
    pub scale: ScaleSpec,
    pub theta_dist: ThetaDist,
    pub tau: TauSpec,
    pub delta: Vec<f64>,
    pub beta: Vec<f64>,
    pub seed: u64,
    #[serde(default)]
    pub pathologies: Vec<RaterPathology>,
    #[serde(default)]
    pub person_ids: Option<Vec<String>>,
    #[serde(default)]
    pub item_ids: Option<Vec<String>>,
    #[serde(default)]
    pub rater_ids: Option<Vec<String>>,
}

/// Evenly spaced, centered values from `lo` to `hi`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n)
            .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Rater severities of the form used for the bundled example data: one
/// clearly severe rater, a lenient pair and a neutral middle. Sums to zero.
pub const ESSAY_PANEL_TAU: [f64; 12] = [
    -0.20, -0.81, -0.37, 0.02, 0.10, 0.23, -0.30, 0.50, 1.25, -0.10, -0.14, -0.18,
];

impl SimSpec {
    /// 30 persons × 4 items × 12 raters on a 0–6 scale.
    pub fn essay_panel(seed: u64) -> Self {
        Self {
            n_persons: 30,
            n_items: 4,
            n_raters: 12,
            scale: ScaleSpec::new(0, 6).expect("valid scale"),
            theta_dist: ThetaDist::Normal { mean: 0.0, sd: 1.0 },
            tau: TauSpec::Values(ESSAY_PANEL_TAU.to_vec()),
            delta: vec![-0.3, 0.1, 0.35, -0.15],
            beta: linspace(-3.0, 3.0, 6),
            seed,
            pathologies: Vec::new(),
            person_ids: None,
            item_ids: None,
            rater_ids: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_persons == 0 || self.n_items == 0 || self.n_raters == 0 {
            return bad("facet counts must be ≥ 1".into());
        }
        if self
            .n_persons
            .checked_mul(self.n_items)
            .and_then(|v| v.checked_mul(self.n_raters))
            .is_none_or(|n| n > crate::ratings::MAX_GRID_CELLS)
        {
            return bad("simulated design is too large".into());
        }
        if self.beta.len() != self.scale.max_category() {
            return bad(format!(
                "{} thresholds given for a {}-category scale",
                self.beta.len(),
                self.scale.num_categories()
            ));
        }
        if self.beta.iter().sum::<f64>().abs() > 1e-9 {
            return bad("thresholds must sum to zero".into());
        }
        if self.delta.len() != self.n_items {
            return bad(format!(
                "{} item difficulties for {} items",
                self.delta.len(),
                self.n_items
            ));
        }
        match &self.tau {
            TauSpec::Values(v) if v.len() != self.n_raters => {
                return bad(format!(
                    "{} rater severities for {} raters",
                    v.len(),
                    self.n_raters
                ))
            }
            TauSpec::Uniform { a, b } if !(a <= b) => return bad("uniform tau needs a ≤ b".into()),
            _ => {}
        }
        let ThetaDist::Normal { mean, sd } = self.theta_dist;
        let finite = [mean, sd]
            .iter()
            .chain(&self.delta)
            .chain(&self.beta)
            .chain(match &self.tau {
                TauSpec::Values(v) => v.as_slice(),
                TauSpec::Uniform { .. } => &[],
            })
            .all(|v| v.is_finite());
        if !finite || !(sd >= 0.0) {
            return bad("parameters must be finite and sd ≥ 0".into());
        }
        for (name, list, n) in [
            ("person_ids", &self.person_ids, self.n_persons),
            ("item_ids", &self.item_ids, self.n_items),
            ("rater_ids", &self.rater_ids, self.n_raters),
        ] {
            if let Some(l) = list {
                if l.len() != n {
                    return bad(format!("{name} has {} entries, expected {n}", l.len()));
                }
            }
        }
        let raters = self.rater_names();
        for pth in &self.pathologies {
            if !raters.contains(&pth.rater) {
                return bad(format!("pathology for unknown rater `{}`", pth.rater));
            }
            match pth.kind {
                Pathology::Noise { p } if !(0.0..=1.0).contains(&p) => {
                    return bad(format!("noise probability {p} outside [0, 1]"))
                }
                Pathology::Compression { shrink } if !(0.0..=1.0).contains(&shrink) => {
                    return bad(format!("compression factor {shrink} outside [0, 1]"))
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn rater_names(&self) -> Vec<String> {
        self.rater_ids
            .clone()
            .unwrap_or_else(|| (1..=self.n_raters).map(|r| format!("R{r}")).collect())
    }

    fn facet_ids(&self) -> Result<FacetIds> {
        let width = self.n_persons.to_string().len();
        FacetIds::new(
            self.person_ids.clone().unwrap_or_else(|| {
                (1..=self.n_persons)
                    .map(|p| format!("P{p:0width$}"))
                    .collect()
            }),
            self.item_ids
                .clone()
                .unwrap_or_else(|| (1..=self.n_items).map(|i| format!("I{i}")).collect()),
            self.rater_names(),
        )
    }
}

/// Round to the nearest integer, breaking ties toward `mid`.
fn round_toward(v: f64, mid: f64) -> f64 {
    let f = v.floor();
    let frac = v - f;
    if (frac - 0.5).abs() < 1e-9 {
        if v > mid {
            f
        } else {
            f + 1.0
        }
    } else {
        v.round()
    }
}

/// Move category `x` toward the middle of `0..=k` by the fraction `shrink`.
pub fn compress_category(x: usize, k: usize, shrink: f64) -> usize {
    let mid = k as f64 / 2.0;
    let v = x as f64 + shrink * (mid - x as f64);
    round_toward(v, mid).clamp(0.0, k as f64) as usize
}

/// Draw a tensor and its generating parameters.
pub fn simulate(spec: &SimSpec) -> Result<(RatingsTensor, ModelParams)> {
    spec.validate()?;
    let ids = spec.facet_ids()?;
    let k = spec.scale.max_category();

    let mut design_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    design_rng.set_stream(0);
    let tau = match &spec.tau {
        TauSpec::Values(v) => v.clone(),
        TauSpec::Uniform { a, b } => (0..spec.n_raters)
            .map(|_| a + (b - a) * design_rng.random::<f64>())
            .collect(),
    };
    let ThetaDist::Normal { mean, sd } = spec.theta_dist;
    let normal = Normal::new(mean, sd).map_err(|e| Error::InvalidConfig(e.to_string()))?;

    let mut pathology = vec![None; spec.n_raters];
    for pth in &spec.pathologies {
        let r = ids.require(crate::ratings::Facet::Rater, &pth.rater)?;
        pathology[r] = Some(pth.kind);
    }

    let mut theta = Vec::with_capacity(spec.n_persons);
    let mut cells = Vec::with_capacity(spec.n_persons * spec.n_items * spec.n_raters);
    let mut probs = vec![0.0; k + 1];
    for p in 0..spec.n_persons {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(p as u64 + 1);
        let th = normal.sample(&mut rng);
        theta.push(th);
        for (i, d) in spec.delta.iter().enumerate() {
            for (r, t) in tau.iter().enumerate() {
                category_probs_into(th - t - d, &spec.beta, &mut probs);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut x = k;
                for (cat, pr) in probs.iter().enumerate() {
                    acc += pr;
                    if u < acc {
                        x = cat;
                        break;
                    }
                }
                match pathology[r] {
                    Some(Pathology::Noise { p: prob }) => {
                        let hit = rng.random::<f64>() < prob;
                        let replacement = rng.random_range(0..=k);
                        if hit {
                            x = replacement;
                        }
                    }
                    Some(Pathology::Compression { shrink }) => {
                        x = compress_category(x, k, shrink);
                    }
                    None => {}
                }
                cells.push((p, i, r, Some(spec.scale.score(x))));
            }
        }
    }
    let tensor = RatingsTensor::from_cells(spec.scale, ids, cells)?;
    Ok((
        tensor,
        ModelParams {
            theta,
            tau,
            delta: spec.delta.clone(),
            beta: spec.beta.clone(),
        },
    ))
}
