//! Infit and outfit mean squares, and the rule-based flags derived from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::FacetEstimates;
use crate::model::moments_with;
use crate::ratings::{Facet, RatingsTensor};

/// Lower/upper mean-square cut pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitCuts {
    pub lower: f64,
    pub upper: f64,
}

impl FitCuts {
    pub const WIDE: FitCuts = FitCuts {
        lower: 0.5,
        upper: 1.5,
    };
    pub const STRINGENT: FitCuts = FitCuts {
        lower: 0.7,
        upper: 1.3,
    };
    pub const HIGH_STAKES: FitCuts = FitCuts {
        lower: 0.8,
        upper: 1.2,
    };

    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower > 0.0 && lower < 1.0 && upper > 1.0 && upper.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "fit cuts need 0 < lower < 1 < upper, got {lower},{upper}"
            )));
        }
        Ok(Self { lower, upper })
    }

    /// Parse `lower,upper` or a preset name (`wide`, `stringent`, `high-stakes`).
    pub fn parse(text: &str) -> Result<Self> {
        match text.trim() {
            "wide" => Ok(Self::WIDE),
            "stringent" => Ok(Self::STRINGENT),
            "high-stakes" => Ok(Self::HIGH_STAKES),
            other => {
                let (a, b) = other
                    .split_once(',')
                    .ok_or_else(|| Error::InvalidConfig(format!("bad fit cuts `{other}`")))?;
                let num = |s: &str| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::InvalidConfig(format!("bad fit cuts `{other}`")))
                };
                Self::new(num(a)?, num(b)?)
            }
        }
    }
}

impl Default for FitCuts {
    fn default() -> Self {
        Self::STRINGENT
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitFlag {
    CentralTendency,
    Misfit,
    #[default]
    None,
}

impl std::fmt::Display for FitFlag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FitFlag::CentralTendency => "central_tendency",
            FitFlag::Misfit => "misfit",
            FitFlag::None => "none",
        })
    }
}

/// Both mean squares below `lower` is central tendency; either above
/// `upper` is misfit.
pub fn classify_pair(infit_ms: f64, outfit_ms: f64, cuts: FitCuts) -> FitFlag {
    if infit_ms > cuts.upper || outfit_ms > cuts.upper {
        FitFlag::Misfit
    } else if infit_ms < cuts.lower && outfit_ms < cuts.lower {
        FitFlag::CentralTendency
    } else {
        FitFlag::None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementFit {
    pub id: String,
    /// Position of the element within its facet.
    pub index: usize,
    pub infit_ms: f64,
    pub outfit_ms: f64,
    pub n_obs: usize,
    pub flag: FitFlag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub facet: Facet,
    pub cuts: FitCuts,
    pub elements: Vec<ElementFit>,
    pub warnings: Vec<String>,
}

impl FitReport {
    pub fn get(&self, id: &str) -> Option<&ElementFit> {
        self.elements.iter().find(|e| e.id == id)
    }

    /// Re-derive every flag under `cuts`.
    pub fn with_cuts(mut self, cuts: FitCuts) -> Self {
        self.cuts = cuts;
        for e in &mut self.elements {
            e.flag = classify_pair(e.infit_ms, e.outfit_ms, cuts);
        }
        self
    }
}

/// Floor on the model variance of a cell, keeping `r²/W` finite at saturation.
const MIN_VARIANCE: f64 = 1e-12;

/// Infit and outfit mean squares for every element of `facet`, flagged
/// under the default cuts.
pub fn fit_statistics(
    tensor: &RatingsTensor,
    estimates: &FacetEstimates,
    facet: Facet,
) -> Result<FitReport> {
    estimates.check_aligned(tensor)?;
    let params = &estimates.params;
    let n = tensor.ids().len(facet);
    let mut sum_r2 = vec![0.0; n];
    let mut sum_w = vec![0.0; n];
    let mut sum_z2 = vec![0.0; n];
    let mut count = vec![0usize; n];
    let mut buf = vec![0.0; params.beta.len() + 1];
    for o in tensor.observations() {
        let e = match facet {
            Facet::Person => o.person,
            Facet::Item => o.item,
            Facet::Rater => o.rater,
        };
        let m = moments_with(
            params.eta(o.person, o.item, o.rater),
            &params.beta,
            &mut buf,
        );
        let r = o.category as f64 - m.expected;
        let w = m.variance.max(MIN_VARIANCE);
        sum_r2[e] += r * r;
        sum_w[e] += w;
        sum_z2[e] += r * r / w;
        count[e] += 1;
    }
    let cuts = FitCuts::default();
    let mut elements = Vec::with_capacity(n);
    let mut warnings = Vec::new();
    for (e, id) in tensor.ids().of(facet).iter().enumerate() {
        if count[e] == 0 {
            let msg = format!("{facet} `{id}` has no observations; excluded from fit");
            log::warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        let infit_ms = sum_r2[e] / sum_w[e];
        let outfit_ms = sum_z2[e] / count[e] as f64;
        elements.push(ElementFit {
            id: id.clone(),
            index: e,
            infit_ms,
            outfit_ms,
            n_obs: count[e],
            flag: classify_pair(infit_ms, outfit_ms, cuts),
        });
    }
    Ok(FitReport {
        facet,
        cuts,
        elements,
        warnings,
    })
}

/// Flag of every element of `report` under `cuts`.
pub fn classify_fit(report: &FitReport, cuts: FitCuts) -> Vec<(String, FitFlag)> {
    report
        .elements
        .iter()
        .map(|e| (e.id.clone(), classify_pair(e.infit_ms, e.outfit_ms, cuts)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_rows() {
        let c = FitCuts::STRINGENT;
        assert_eq!(classify_pair(0.60, 0.60, c), FitFlag::CentralTendency);
        assert_eq!(classify_pair(0.58, 0.59, c), FitFlag::CentralTendency);
        assert_eq!(classify_pair(1.41, 1.41, c), FitFlag::Misfit);
        assert_eq!(classify_pair(1.0, 1.0, c), FitFlag::None);
        // one mean square low is not enough for central tendency
        assert_eq!(classify_pair(0.70, 0.69, c), FitFlag::None);
        assert_eq!(classify_pair(0.9, 1.31, c), FitFlag::Misfit);
    }

    #[test]
    fn cut_parsing() {
        assert_eq!(FitCuts::parse("0.7,1.3").unwrap(), FitCuts::STRINGENT);
        assert_eq!(FitCuts::parse("wide").unwrap(), FitCuts::WIDE);
        assert_eq!(FitCuts::parse("high-stakes").unwrap(), FitCuts::HIGH_STAKES);
        for bad in ["1.2,1.3", "0.7", "0,2", "a,b", "0.7,inf"] {
            assert!(FitCuts::parse(bad).is_err(), "{bad}");
        }
    }
}
