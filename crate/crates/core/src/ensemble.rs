//! Averaged ensemble raters and greedy leave-worst-out pruning.

use serde::{Deserialize, Serialize};

use crate::agreement::weighted_kappa;
use crate::agreement::Weighting;
use crate::error::{Error, Result};
use crate::ratings::{Facet, RatingsTensor, ScaleSpec};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rounding {
    #[default]
    HalfAwayFromZero,
    HalfToEven,
    /// Keep fractional means; such an ensemble cannot be stored as a rater.
    None,
}

impl std::str::FromStr for Rounding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "half-away" | "half-away-from-zero" => Ok(Rounding::HalfAwayFromZero),
            "half-even" | "half-to-even" => Ok(Rounding::HalfToEven),
            "none" => Ok(Rounding::None),
            other => Err(Error::InvalidConfig(format!("unknown rounding `{other}`"))),
        }
    }
}

impl Rounding {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Rounding::HalfAwayFromZero => v.round(),
            Rounding::HalfToEven => v.round_ties_even(),
            Rounding::None => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub name: String,
    pub members: Vec<String>,
    #[serde(default)]
    pub rounding: Rounding,
}

impl EnsembleSpec {
    pub fn new(name: impl Into<String>, members: Vec<String>) -> Self {
        Self {
            name: name.into(),
            members,
            rounding: Rounding::default(),
        }
    }

    /// Same members minus `removed`, under a new name.
    pub fn without<S: AsRef<str>>(&self, name: impl Into<String>, removed: &[S]) -> Self {
        Self {
            name: name.into(),
            members: self
                .members
                .iter()
                .filter(|m| !removed.iter().any(|r| r.as_ref() == m.as_str()))
                .cloned()
                .collect(),
            rounding: self.rounding,
        }
    }
}

/// A chain of nested ensembles, each dropping raters from the previous one.
pub fn removal_chain<S: AsRef<str>>(
    base: &EnsembleSpec,
    steps: &[(String, Vec<S>)],
) -> Vec<EnsembleSpec> {
    let mut out = vec![base.clone()];
    for (name, removed) in steps {
        let next = out
            .last()
            .expect("non-empty")
            .without(name.clone(), removed);
        out.push(next);
    }
    out
}

/// Per (person, item) mean of the members' present scores, person-major.
/// Cells where no member scored are `None`.
pub fn ensemble_means(tensor: &RatingsTensor, members: &[usize]) -> Vec<Option<f64>> {
    let (np, ni, _) = tensor.dims();
    let mut out = Vec::with_capacity(np * ni);
    for p in 0..np {
        for i in 0..ni {
            let (mut sum, mut n) = (0i64, 0i64);
            for &r in members {
                if let Some(s) = tensor.score(p, i, r) {
                    sum += i64::from(s);
                    n += 1;
                }
            }
            out.push((n > 0).then(|| sum as f64 / n as f64));
        }
    }
    out
}

fn rounded_scores(means: &[Option<f64>], rounding: Rounding, scale: ScaleSpec) -> Vec<Option<i32>> {
    means
        .iter()
        .map(|m| m.map(|v| (rounding.apply(v) as i32).clamp(scale.min_score(), scale.max_score())))
        .collect()
}

fn resolve_members(tensor: &RatingsTensor, members: &[String]) -> Result<Vec<usize>> {
    if members.is_empty() {
        return Err(Error::InvalidConfig("ensemble has no members".into()));
    }
    tensor.ids().resolve(Facet::Rater, members)
}

/// Unrounded ensemble means for any rounding mode.
pub fn ensemble_scores(tensor: &RatingsTensor, spec: &EnsembleSpec) -> Result<Vec<Option<f64>>> {
    let members = resolve_members(tensor, &spec.members)?;
    Ok(ensemble_means(tensor, &members))
}

/// The tensor extended with the ensemble as a new rater.
pub fn build_ensemble(tensor: &RatingsTensor, spec: &EnsembleSpec) -> Result<RatingsTensor> {
    if spec.rounding == Rounding::None {
        return Err(Error::UnroundedEnsemble(spec.name.clone()));
    }
    let members = resolve_members(tensor, &spec.members)?;
    let means = ensemble_means(tensor, &members);
    let empty = means.iter().filter(|m| m.is_none()).count();
    if empty > 0 {
        log::warn!(
            "ensemble `{}`: {empty} person×item cell(s) have no member score",
            spec.name
        );
    }
    let scores = rounded_scores(&means, spec.rounding, tensor.scale());
    tensor.with_rater(&spec.name, &scores)
}

/// One step of greedy pruning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneStep {
    pub step: usize,
    /// Rater removed at this step; `None` for the full ensemble.
    pub removed: Option<String>,
    pub members: Vec<String>,
    /// Mean QWK over (benchmark, item); `None` if any cell is undefined.
    pub mean_qwk: Option<f64>,
    /// `(benchmark, item, kappa)` for every cell.
    pub cells: Vec<(String, String, Option<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneTrace {
    pub steps: Vec<PruneStep>,
}

impl PruneTrace {
    pub fn removal_order(&self) -> Vec<&str> {
        self.steps
            .iter()
            .filter_map(|s| s.removed.as_deref())
            .collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["step", "removed", "n_members", "mean_qwk", "members"])?;
        for s in &self.steps {
            w.write_record([
                s.step.to_string(),
                s.removed.clone().unwrap_or_default(),
                s.members.len().to_string(),
                s.mean_qwk.map_or(String::new(), |q| format!("{q:.4}")),
                s.members.join(" "),
            ])?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf-8"))
    }
}

/// `(benchmark, item, kappa)` per cell.
type CellKappas = Vec<(String, String, Option<f64>)>;

struct PruneContext<'a> {
    tensor: &'a RatingsTensor,
    benchmarks: Vec<usize>,
    items: Vec<usize>,
    rounding: Rounding,
}

impl PruneContext<'_> {
    /// Per-cell QWK of the rounded ensemble of `members`, and their mean.
    fn evaluate(&self, members: &[usize]) -> (Option<f64>, CellKappas) {
        let t = self.tensor;
        let scale = t.scale();
        let (np, ni, _) = t.dims();
        let scores = rounded_scores(&ensemble_means(t, members), self.rounding, scale);
        let ids = t.ids();
        let mut cells = Vec::new();
        let mut sum = 0.0;
        let mut defined = true;
        for &b in &self.benchmarks {
            for &i in &self.items {
                let pairs: Vec<(i32, i32)> = (0..np)
                    .filter_map(|p| Some((scores[p * ni + i]?, t.score(p, i, b)?)))
                    .collect();
                let kappa = weighted_kappa(scale, &pairs, Weighting::Quadratic)
                    .ok()
                    .map(|k| k.kappa);
                match kappa {
                    Some(k) => sum += k,
                    None => defined = false,
                }
                cells.push((ids.raters()[b].clone(), ids.items()[i].clone(), kappa));
            }
        }
        let n = cells.len() as f64;
        (defined.then_some(sum / n), cells)
    }
}

/// Greedily remove, `steps` times, the member whose removal maximizes the
/// mean ensemble-vs-benchmark QWK over every (benchmark, item) cell. Ties
/// go to the member earliest in rater order. A candidate with any undefined
/// cell scores −∞ and is never chosen.
pub fn greedy_prune<S: AsRef<str>>(
    tensor: &RatingsTensor,
    members: &[S],
    benchmarks: &[S],
    items: &[S],
    steps: usize,
) -> Result<PruneTrace> {
    let ids = tensor.ids();
    let mut current = ids.resolve(Facet::Rater, members)?;
    let bench = ids.resolve(Facet::Rater, benchmarks)?;
    if bench.is_empty() {
        return Err(Error::InvalidConfig("no benchmark raters".into()));
    }
    if let Some(b) = bench.iter().find(|b| current.contains(b)) {
        return Err(Error::InvalidConfig(format!(
            "benchmark `{}` is also an ensemble member",
            ids.raters()[*b]
        )));
    }
    if current.len() <= steps {
        return Err(Error::InvalidConfig(format!(
            "cannot remove {steps} of {} members",
            current.len()
        )));
    }
    let items = if items.is_empty() {
        (0..ids.len(Facet::Item)).collect()
    } else {
        ids.resolve(Facet::Item, items)?
    };
    let ctx = PruneContext {
        tensor,
        benchmarks: bench,
        items,
        rounding: Rounding::default(),
    };
    let names = |set: &[usize]| set.iter().map(|&r| ids.raters()[r].clone()).collect();

    let (mean, cells) = ctx.evaluate(&current);
    let mut trace = vec![PruneStep {
        step: 0,
        removed: None,
        members: names(&current),
        mean_qwk: mean,
        cells,
    }];
    for step in 1..=steps {
        let mut best: Option<(usize, f64, CellKappas)> = None;
        for (pos, _) in current.iter().enumerate() {
            let mut rest = current.clone();
            rest.remove(pos);
            let (mean, cells) = ctx.evaluate(&rest);
            let score = mean.unwrap_or(f64::NEG_INFINITY);
            if score > f64::NEG_INFINITY && best.as_ref().is_none_or(|b| score > b.1) {
                best = Some((pos, score, cells));
            }
        }
        let Some((pos, score, cells)) = best else {
            return Err(Error::DegenerateMarginals);
        };
        let removed = current.remove(pos);
        trace.push(PruneStep {
            step,
            removed: Some(ids.raters()[removed].clone()),
            members: names(&current),
            mean_qwk: Some(score),
            cells,
        });
    }
    Ok(PruneTrace { steps: trace })
}
