//! Joint maximum-likelihood estimation of the rating-scale model.
//!
//! Each iteration sweeps persons, raters, items and then the threshold
//! vector. Within a facet every element's parameter only enters its own
//! cells, so the per-element Newton updates are independent. Every update
//! is a capped Newton step with step halving until the element's own
//! log-likelihood does not decrease; the threshold update is a joint
//! K-dimensional Newton step with the same safeguard. After each sweep
//! `τ`, `δ` and `β` are re-centered and persons shifted to compensate,
//! which leaves every category probability unchanged.
//!
//! Elements with all-minimum or all-maximum response strings are held out
//! of the joint solution and afterwards solved one at a time against the
//! fixed remaining parameters, with their raw score pulled `extreme_adjust`
//! points inside the bounds.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{log_prob_with, moments_with, ModelParams, Moments};
use crate::ratings::{Facet, FacetIds, Observation, RatingsTensor, ScaleSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationConfig {
    pub max_iterations: usize,
    /// Largest absolute parameter change in a sweep, logits.
    pub convergence_tol: f64,
    /// Largest absolute marginal score residual, score points.
    pub residual_tol: f64,
    /// Bound on the absolute value of any estimate.
    pub logit_clamp: f64,
    /// Score points moved inside the bounds for extreme response strings.
    pub extreme_adjust: f64,
    /// Cap on the size of one Newton step, logits.
    pub newton_damping: f64,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            convergence_tol: 1e-4,
            residual_tol: 0.01,
            logit_clamp: 10.0,
            extreme_adjust: 0.25,
            newton_damping: 1.0,
        }
    }
}

impl EstimationConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("convergence_tol", self.convergence_tol),
            ("residual_tol", self.residual_tol),
            ("extreme_adjust", self.extreme_adjust),
            ("newton_damping", self.newton_damping),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.logit_clamp >= 5.0 && self.logit_clamp.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "logit_clamp must be at least 5, got {}",
                self.logit_clamp
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Extreme {
    #[default]
    None,
    MinExtreme,
    MaxExtreme,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremeFlags {
    pub persons: Vec<Extreme>,
    pub items: Vec<Extreme>,
    pub raters: Vec<Extreme>,
}

impl ExtremeFlags {
    pub fn of(&self, facet: Facet) -> &[Extreme] {
        match facet {
            Facet::Person => &self.persons,
            Facet::Item => &self.items,
            Facet::Rater => &self.raters,
        }
    }
}

/// Standard errors share the layout of the parameters they belong to.
pub type StandardErrors = ModelParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacetEstimates {
    pub ids: FacetIds,
    pub scale: ScaleSpec,
    pub params: ModelParams,
    pub se: StandardErrors,
    pub extreme_flags: ExtremeFlags,
    pub iterations_used: usize,
    pub converged: bool,
    /// Log-likelihood of all present cells at the final estimates.
    pub log_likelihood_final: f64,
    /// Log-likelihood of the jointly estimated cells: start value, then one per sweep.
    pub log_likelihood_trace: Vec<f64>,
    pub max_change: f64,
    pub max_residual: f64,
    pub warnings: Vec<String>,
    pub config: EstimationConfig,
}

impl FacetEstimates {
    /// Wrap externally supplied measures (anchored values) with standard
    /// errors and extreme flags computed from `tensor`.
    pub fn from_params(tensor: &RatingsTensor, params: ModelParams) -> Result<Self> {
        params.check_dims(tensor)?;
        let obs: Vec<Observation> = tensor.observations().collect();
        let k = tensor.scale().max_category();
        let se = standard_errors(&obs, &params, tensor.dims());
        let ll = crate::model::log_likelihood(tensor, &params)?;
        Ok(Self {
            ids: tensor.ids().clone(),
            scale: tensor.scale(),
            se,
            extreme_flags: raw_extremes(&obs, tensor.dims(), k),
            params,
            iterations_used: 0,
            converged: true,
            log_likelihood_final: ll,
            log_likelihood_trace: vec![ll],
            max_change: 0.0,
            max_residual: 0.0,
            warnings: Vec::new(),
            config: EstimationConfig::default(),
        })
    }

    pub fn check_aligned(&self, tensor: &RatingsTensor) -> Result<()> {
        if &self.ids != tensor.ids() || self.scale != tensor.scale() {
            return Err(Error::DimensionMismatch(
                "estimates were computed on a different tensor".into(),
            ));
        }
        self.params.check_dims(tensor)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let est: Self = serde_json::from_str(text)?;
        let (np, ni, nr) = (
            est.ids.len(Facet::Person),
            est.ids.len(Facet::Item),
            est.ids.len(Facet::Rater),
        );
        let k = est.scale.max_category();
        let lens_ok = |p: &ModelParams| {
            p.theta.len() == np && p.delta.len() == ni && p.tau.len() == nr && p.beta.len() == k
        };
        let flags = &est.extreme_flags;
        if !lens_ok(&est.params)
            || !lens_ok(&est.se)
            || flags.persons.len() != np
            || flags.items.len() != ni
            || flags.raters.len() != nr
        {
            return Err(Error::InvalidDocument(
                "estimate vectors do not match facet sizes".into(),
            ));
        }
        Ok(est)
    }
}

fn raw_extremes(obs: &[Observation], dims: (usize, usize, usize), k: usize) -> ExtremeFlags {
    let (np, ni, nr) = dims;
    let mut sums = [vec![0usize; np], vec![0; ni], vec![0; nr]];
    let mut counts = [vec![0usize; np], vec![0; ni], vec![0; nr]];
    for o in obs {
        for (f, e) in [o.person, o.item, o.rater].into_iter().enumerate() {
            sums[f][e] += o.category;
            counts[f][e] += 1;
        }
    }
    let flag = |f: usize| -> Vec<Extreme> {
        (0..sums[f].len())
            .map(|e| classify_raw(sums[f][e], counts[f][e], k))
            .collect()
    };
    ExtremeFlags {
        persons: flag(0),
        items: flag(1),
        raters: flag(2),
    }
}

fn classify_raw(sum: usize, count: usize, k: usize) -> Extreme {
    if count == 0 {
        Extreme::None
    } else if sum == 0 {
        Extreme::MinExtreme
    } else if sum == k * count {
        Extreme::MaxExtreme
    } else {
        Extreme::None
    }
}

fn standard_errors(
    obs: &[Observation],
    params: &ModelParams,
    dims: (usize, usize, usize),
) -> StandardErrors {
    let (np, ni, nr) = dims;
    let k = params.beta.len();
    let mut info = ModelParams {
        theta: vec![0.0; np],
        tau: vec![0.0; nr],
        delta: vec![0.0; ni],
        beta: vec![0.0; k],
    };
    let mut buf = vec![0.0; k + 1];
    for o in obs {
        let m = moments_with(
            params.eta(o.person, o.item, o.rater),
            &params.beta,
            &mut buf,
        );
        info.theta[o.person] += m.variance;
        info.tau[o.rater] += m.variance;
        info.delta[o.item] += m.variance;
        // buf holds category probabilities; P(X ≥ h) accumulated from the top
        let mut upper = 0.0;
        for h in (1..=k).rev() {
            upper += buf[h];
            info.beta[h - 1] += upper * (1.0 - upper);
        }
    }
    let inv = |v: &mut Vec<f64>| {
        v.iter_mut().for_each(|x| {
            *x = if *x > 0.0 {
                1.0 / x.sqrt()
            } else {
                f64::INFINITY
            };
        })
    };
    inv(&mut info.theta);
    inv(&mut info.tau);
    inv(&mut info.delta);
    inv(&mut info.beta);
    info
}

/// A facet element's position together with which way `η` moves with it.
#[derive(Clone, Copy)]
struct Target {
    facet: Facet,
    index: usize,
}

impl Target {
    /// `∂η/∂parameter`.
    fn sign(self) -> f64 {
        match self.facet {
            Facet::Person => 1.0,
            Facet::Item | Facet::Rater => -1.0,
        }
    }
}

fn param_mut(params: &mut ModelParams, t: Target) -> &mut f64 {
    match t.facet {
        Facet::Person => &mut params.theta[t.index],
        Facet::Item => &mut params.delta[t.index],
        Facet::Rater => &mut params.tau[t.index],
    }
}

fn param(params: &ModelParams, t: Target) -> f64 {
    params.of(t.facet)[t.index]
}

struct Design {
    obs: Vec<Observation>,
    k: usize,
    dims: (usize, usize, usize),
    /// Per facet (person, item, rater), per element: indices into `obs`.
    cells: [Vec<Vec<usize>>; 3],
    /// Indices of cells whose three elements are all jointly estimated.
    active_cells: Vec<usize>,
    /// Same per element, restricted to active cells.
    active_by: [Vec<Vec<usize>>; 3],
    active: [Vec<bool>; 3],
}

fn facet_slot(f: Facet) -> usize {
    match f {
        Facet::Person => 0,
        Facet::Item => 1,
        Facet::Rater => 2,
    }
}

fn element_of(o: &Observation, f: Facet) -> usize {
    match f {
        Facet::Person => o.person,
        Facet::Item => o.item,
        Facet::Rater => o.rater,
    }
}

/// `ln p_x`, mean and variance of one cell; leaves the category
/// probabilities in `buf`. The log-probability is computed with the same
/// operations as [`log_prob_with`], so the two agree bit for bit.
fn eval_cell(eta: f64, beta: &[f64], x: usize, buf: &mut [f64]) -> (f64, Moments) {
    buf[0] = 0.0;
    for (k, b) in beta.iter().enumerate() {
        buf[k + 1] = buf[k] + (eta - b);
    }
    let psi_x = buf[x];
    let max = buf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in buf.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let ll = psi_x - (sum.ln() + max);
    let mut expected = 0.0;
    for (k, v) in buf.iter_mut().enumerate() {
        *v /= sum;
        expected += k as f64 * *v;
    }
    let variance = buf
        .iter()
        .enumerate()
        .map(|(k, p)| (k as f64 - expected).powi(2) * p)
        .sum();
    (ll, Moments { expected, variance })
}

struct Estimator<'a> {
    cfg: &'a EstimationConfig,
    d: Design,
    buf: Vec<f64>,
    warnings: Vec<String>,
}

impl Estimator<'_> {
    fn cell_ll(&mut self, params: &ModelParams, cells: &[usize]) -> f64 {
        let mut ll = 0.0;
        for &c in cells {
            let o = self.d.obs[c];
            ll += log_prob_with(
                params.eta(o.person, o.item, o.rater),
                &params.beta,
                o.category,
                &mut self.buf,
            );
        }
        ll
    }

    fn active_ll(&mut self, params: &ModelParams) -> f64 {
        let cells = std::mem::take(&mut self.d.active_cells);
        let ll = self.cell_ll(params, &cells);
        self.d.active_cells = cells;
        ll
    }

    /// Σ (x − E)·∂η/∂v, Σ W and Σ ln p over `cells` for parameter `t`.
    fn score_and_info(
        &mut self,
        params: &ModelParams,
        t: Target,
        cells: &[usize],
    ) -> (f64, f64, f64) {
        let s = t.sign();
        let (mut g, mut h, mut ll) = (0.0, 0.0, 0.0);
        for &c in cells {
            let o = self.d.obs[c];
            let (l, m) = eval_cell(
                params.eta(o.person, o.item, o.rater),
                &params.beta,
                o.category,
                &mut self.buf,
            );
            g += s * (o.category as f64 - m.expected);
            h += m.variance;
            ll += l;
        }
        (g, h, ll)
    }

    /// One safeguarded Newton update of a single element parameter.
    fn update_element(&mut self, params: &mut ModelParams, t: Target) {
        let cells = std::mem::take(&mut self.d.active_by[facet_slot(t.facet)][t.index]);
        if !cells.is_empty() {
            let (g, h, base_ll) = self.score_and_info(params, t, &cells);
            let clamp = self.cfg.logit_clamp;
            let damping = self.cfg.newton_damping;
            let mut step = if h > 1e-12 {
                g / h
            } else {
                g.signum() * damping
            };
            step = step.clamp(-damping, damping);
            let start = param(params, t);
            let mut accepted = start;
            for _ in 0..40 {
                let cand = (start + step).clamp(-clamp, clamp);
                if cand == start {
                    break;
                }
                *param_mut(params, t) = cand;
                if self.cell_ll(params, &cells) >= base_ll {
                    accepted = cand;
                    break;
                }
                step *= 0.5;
            }
            *param_mut(params, t) = accepted;
        }
        self.d.active_by[facet_slot(t.facet)][t.index] = cells;
    }

    /// Threshold gradient `g_h = Σ P(X ≥ h) − [x ≥ h]` and information
    /// matrix `Σ Cov([X ≥ h], [X ≥ g])` over active cells.
    fn threshold_score(&mut self, params: &ModelParams) -> (DVector<f64>, DMatrix<f64>, f64) {
        let k = self.d.k;
        let mut g = DVector::zeros(k);
        let mut info = DMatrix::zeros(k, k);
        let mut upper = vec![0.0; k + 1];
        let mut ll = 0.0;
        for &c in &self.d.active_cells {
            let o = self.d.obs[c];
            ll += eval_cell(
                params.eta(o.person, o.item, o.rater),
                &params.beta,
                o.category,
                &mut self.buf,
            )
            .0;
            upper[k] = self.buf[k];
            for h in (1..k).rev() {
                upper[h] = upper[h + 1] + self.buf[h];
            }
            for h in 1..=k {
                g[h - 1] += upper[h] - f64::from(u8::from(o.category >= h));
                for q in h..=k {
                    let cov = upper[q] - upper[h] * upper[q];
                    info[(h - 1, q - 1)] += cov;
                    if q != h {
                        info[(q - 1, h - 1)] += cov;
                    }
                }
            }
        }
        (g, info, ll)
    }

    fn update_thresholds(&mut self, params: &mut ModelParams) {
        let (g, info, base_ll) = self.threshold_score(params);
        let k = self.d.k;
        let mut ridge = 0.0;
        let scale = info.trace().max(1e-12) / k as f64;
        let step = loop {
            let mut m = info.clone();
            for h in 0..k {
                m[(h, h)] += ridge;
            }
            if let Some(ch) = m.cholesky() {
                break ch.solve(&g);
            }
            ridge = if ridge == 0.0 {
                1e-10 * scale
            } else {
                ridge * 10.0
            };
            if ridge > 1e6 * scale {
                return;
            }
        };
        let biggest = step.amax();
        let mut factor = if biggest > self.cfg.newton_damping {
            self.cfg.newton_damping / biggest
        } else {
            1.0
        };
        let clamp = self.cfg.logit_clamp;
        let start = params.beta.clone();
        for _ in 0..40 {
            for h in 0..k {
                params.beta[h] = (start[h] + factor * step[h]).clamp(-clamp, clamp);
            }
            if params.beta == start {
                return;
            }
            if self.active_ll(params) >= base_ll {
                return;
            }
            factor *= 0.5;
        }
        params.beta = start;
    }

    fn recenter(&self, params: &mut ModelParams) {
        let mut shift = 0.0;
        for (f, values) in [(1usize, &mut params.delta), (2, &mut params.tau)] {
            let active = &self.d.active[f];
            let n = active.iter().filter(|a| **a).count();
            let m = values
                .iter()
                .zip(active)
                .filter(|(_, a)| **a)
                .map(|(v, _)| *v)
                .sum::<f64>()
                / n as f64;
            for (v, a) in values.iter_mut().zip(active) {
                if *a {
                    *v -= m;
                }
            }
            shift += m;
        }
        let mb = params.beta.iter().sum::<f64>() / params.beta.len() as f64;
        params.beta.iter_mut().for_each(|b| *b -= mb);
        shift += mb;
        for (v, a) in params.theta.iter_mut().zip(&self.d.active[0]) {
            if *a {
                *v -= shift;
            }
        }
    }

    fn at_bound(&self, v: f64) -> bool {
        v.abs() >= self.cfg.logit_clamp - 1e-9
    }

    /// Log-likelihood of the active cells and the largest marginal score
    /// residual among unclamped active parameters, in one pass.
    fn ll_and_residual(&mut self, params: &ModelParams) -> (f64, f64) {
        let (np, ni, nr) = self.d.dims;
        let k = self.d.k;
        let mut res = [vec![0.0; np], vec![0.0; ni], vec![0.0; nr]];
        let mut res_beta = vec![0.0; k];
        let mut ll = 0.0;
        for &c in &self.d.active_cells {
            let o = self.d.obs[c];
            let (l, m) = eval_cell(
                params.eta(o.person, o.item, o.rater),
                &params.beta,
                o.category,
                &mut self.buf,
            );
            ll += l;
            let r = o.category as f64 - m.expected;
            res[0][o.person] += r;
            res[1][o.item] += r;
            res[2][o.rater] += r;
            let mut upper = 0.0;
            for h in (1..=k).rev() {
                upper += self.buf[h];
                res_beta[h - 1] += upper - f64::from(u8::from(o.category >= h));
            }
        }
        let mut worst: f64 = 0.0;
        for facet in Facet::ALL {
            let f = facet_slot(facet);
            for (e, r) in res[f].iter().enumerate() {
                if self.d.active[f][e] && !self.at_bound(params.of(facet)[e]) {
                    worst = worst.max(r.abs());
                }
            }
        }
        for (h, r) in res_beta.iter().enumerate() {
            if !self.at_bound(params.beta[h]) {
                worst = worst.max(r.abs());
            }
        }
        (ll, worst)
    }

    /// Solve one held-out element's parameter so its expected raw score
    /// matches its (adjusted) observed raw score, other parameters fixed.
    fn solve_single(&mut self, params: &mut ModelParams, t: Target) {
        let cells = self.d.cells[facet_slot(t.facet)][t.index].clone();
        if cells.is_empty() {
            return;
        }
        let k = self.d.k as f64;
        let n = cells.len() as f64;
        let raw: f64 = cells.iter().map(|&c| self.d.obs[c].category as f64).sum();
        let adj = self.cfg.extreme_adjust.min(k * n / 2.0);
        let target = if raw <= 0.0 {
            adj
        } else if raw >= k * n {
            k * n - adj
        } else {
            raw
        };
        let clamp = self.cfg.logit_clamp;
        let s = t.sign();
        // f(v) = s·(Σ E − target) is increasing in v
        let f = |est: &mut Self, params: &mut ModelParams, v: f64| {
            *param_mut(params, t) = v;
            let mut e_sum = 0.0;
            let mut w_sum = 0.0;
            for &c in &cells {
                let o = est.d.obs[c];
                let m = moments_with(
                    params.eta(o.person, o.item, o.rater),
                    &params.beta,
                    &mut est.buf,
                );
                e_sum += m.expected;
                w_sum += m.variance;
            }
            (s * (e_sum - target), w_sum)
        };
        let (mut lo, mut hi) = (-clamp, clamp);
        if f(self, params, lo).0 >= 0.0 {
            *param_mut(params, t) = lo;
            return;
        }
        if f(self, params, hi).0 <= 0.0 {
            *param_mut(params, t) = hi;
            return;
        }
        let mut v = param(params, t).clamp(lo, hi);
        for _ in 0..200 {
            let (fv, w) = f(self, params, v);
            if fv.abs() < 1e-10 {
                break;
            }
            if fv > 0.0 {
                hi = v;
            } else {
                lo = v;
            }
            let newton = if w > 1e-12 { v - fv / w } else { f64::NAN };
            v = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo < 1e-12 {
                break;
            }
        }
        *param_mut(params, t) = v;
    }
}

/// Fit the rating-scale model by joint maximum likelihood.
pub fn estimate(tensor: &RatingsTensor, config: &EstimationConfig) -> Result<FacetEstimates> {
    config.validate()?;
    let ids = tensor.ids();
    for facet in Facet::ALL {
        if let Some(e) = tensor.counts(facet).iter().position(|&n| n == 0) {
            return Err(Error::EmptyElement {
                facet,
                id: ids.of(facet)[e].clone(),
            });
        }
    }
    if !tensor.is_connected() {
        return Err(Error::Disconnected);
    }
    let scale = tensor.scale();
    let k = scale.max_category();
    let dims = tensor.dims();
    let obs: Vec<Observation> = tensor.observations().collect();
    let mut seen = vec![false; k + 1];
    obs.iter().for_each(|o| seen[o.category] = true);
    if seen.iter().filter(|s| **s).count() < 2 {
        return Err(Error::TooFewCategories);
    }

    let (np, ni, nr) = dims;
    let mut cells: [Vec<Vec<usize>>; 3] = [vec![vec![]; np], vec![vec![]; ni], vec![vec![]; nr]];
    for (c, o) in obs.iter().enumerate() {
        for facet in Facet::ALL {
            cells[facet_slot(facet)][element_of(o, facet)].push(c);
        }
    }

    // Hold out extreme elements until none remain among the rest.
    let mut active = [vec![true; np], vec![true; ni], vec![true; nr]];
    let mut flags = [
        vec![Extreme::None; np],
        vec![Extreme::None; ni],
        vec![Extreme::None; nr],
    ];
    loop {
        let mut sums = [vec![0usize; np], vec![0; ni], vec![0; nr]];
        let mut counts = [vec![0usize; np], vec![0; ni], vec![0; nr]];
        for o in &obs {
            if active[0][o.person] && active[1][o.item] && active[2][o.rater] {
                for facet in Facet::ALL {
                    let (f, e) = (facet_slot(facet), element_of(o, facet));
                    sums[f][e] += o.category;
                    counts[f][e] += 1;
                }
            }
        }
        let mut changed = false;
        for f in 0..3 {
            for e in 0..active[f].len() {
                if !active[f][e] {
                    continue;
                }
                let class = classify_raw(sums[f][e], counts[f][e], k);
                if counts[f][e] == 0 || class != Extreme::None {
                    active[f][e] = false;
                    flags[f][e] = class;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    for facet in Facet::ALL {
        if !active[facet_slot(facet)].iter().any(|a| *a) {
            return Err(Error::NotEstimable(facet));
        }
    }

    let mut warnings = Vec::new();
    let held_out: usize = active.iter().flatten().filter(|a| !**a).count();
    if held_out > 0 {
        warnings.push(format!(
            "{held_out} element(s) with extreme scores estimated separately"
        ));
    }

    let active_cells: Vec<usize> = (0..obs.len())
        .filter(|&c| {
            let o = &obs[c];
            active[0][o.person] && active[1][o.item] && active[2][o.rater]
        })
        .collect();
    let mut active_by: [Vec<Vec<usize>>; 3] =
        [vec![vec![]; np], vec![vec![]; ni], vec![vec![]; nr]];
    for &c in &active_cells {
        for facet in Facet::ALL {
            active_by[facet_slot(facet)][element_of(&obs[c], facet)].push(c);
        }
    }

    let mut freq = vec![0usize; k + 1];
    active_cells
        .iter()
        .for_each(|&c| freq[obs[c].category] += 1);
    for (cat, n) in freq.iter().enumerate() {
        if *n == 0 {
            warnings.push(format!(
                "score {} is never observed; its threshold is bounded by the logit clamp",
                scale.score(cat)
            ));
        }
    }

    let design = Design {
        obs,
        k,
        dims,
        cells,
        active_cells,
        active_by,
        active,
    };
    let mut params = initial_params(&design, config.logit_clamp, &freq);

    let mut est = Estimator {
        cfg: config,
        d: design,
        buf: vec![0.0; k + 1],
        warnings,
    };
    est.recenter(&mut params);

    let mut trace = vec![est.active_ll(&params)];
    let mut converged = false;
    let mut iterations = 0;
    let mut max_change = f64::INFINITY;
    let mut max_residual = f64::INFINITY;
    for iter in 1..=config.max_iterations {
        iterations = iter;
        let before = params.clone();
        for facet in [Facet::Person, Facet::Rater, Facet::Item] {
            for e in 0..est.d.active[facet_slot(facet)].len() {
                if est.d.active[facet_slot(facet)][e] {
                    est.update_element(&mut params, Target { facet, index: e });
                }
            }
        }
        est.update_thresholds(&mut params);
        est.recenter(&mut params);
        let (ll, residual) = est.ll_and_residual(&params);
        trace.push(ll);
        max_change = active_change(&est.d, &before, &params);
        max_residual = residual;
        if max_change < config.convergence_tol && max_residual < config.residual_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        let msg = format!(
            "did not converge in {iterations} iterations (max change {max_change:.2e}, max residual {max_residual:.2e})"
        );
        log::warn!("{msg}");
        est.warnings.push(msg);
    }

    // Held-out elements, persons first; two passes let held-out raters and
    // items see updated held-out persons.
    for _ in 0..2 {
        for facet in [Facet::Person, Facet::Rater, Facet::Item] {
            for e in 0..est.d.active[facet_slot(facet)].len() {
                if !est.d.active[facet_slot(facet)][e] {
                    est.solve_single(&mut params, Target { facet, index: e });
                }
            }
        }
    }

    let se = standard_errors(&est.d.obs, &params, est.d.dims);
    let ll_final = crate::model::log_likelihood(tensor, &params)?;
    let [persons, items, raters] = flags;
    Ok(FacetEstimates {
        ids: ids.clone(),
        scale,
        params,
        se,
        extreme_flags: ExtremeFlags {
            persons,
            items,
            raters,
        },
        iterations_used: iterations,
        converged,
        log_likelihood_final: ll_final,
        log_likelihood_trace: trace,
        max_change,
        max_residual,
        warnings: est.warnings,
        config: *config,
    })
}

fn active_change(d: &Design, a: &ModelParams, b: &ModelParams) -> f64 {
    let mut worst: f64 = 0.0;
    for facet in Facet::ALL {
        let f = facet_slot(facet);
        for (e, on) in d.active[f].iter().enumerate() {
            if *on {
                worst = worst.max((a.of(facet)[e] - b.of(facet)[e]).abs());
            }
        }
    }
    for (x, y) in a.beta.iter().zip(&b.beta) {
        worst = worst.max((x - y).abs());
    }
    worst
}

/// Log-odds starting values from raw scores and category frequencies.
fn initial_params(d: &Design, clamp: f64, freq: &[usize]) -> ModelParams {
    let (np, ni, nr) = d.dims;
    let k = d.k as f64;
    let mut sums = [vec![0.0; np], vec![0.0; ni], vec![0.0; nr]];
    let mut counts = [vec![0.0; np], vec![0.0; ni], vec![0.0; nr]];
    for &c in &d.active_cells {
        let o = &d.obs[c];
        for facet in Facet::ALL {
            let (f, e) = (facet_slot(facet), element_of(o, facet));
            sums[f][e] += o.category as f64;
            counts[f][e] += 1.0;
        }
    }
    let logit = |f: usize, e: usize| -> f64 {
        let s = sums[f][e];
        let max = k * counts[f][e];
        if counts[f][e] == 0.0 {
            return 0.0;
        }
        let s = s.clamp(0.25, max - 0.25);
        (s / (max - s)).ln().clamp(-clamp, clamp)
    };
    let beta = (1..=d.k)
        .map(|h| {
            ((freq[h - 1] as f64 + 0.5) / (freq[h] as f64 + 0.5))
                .ln()
                .clamp(-clamp, clamp)
        })
        .collect();
    ModelParams {
        theta: (0..np).map(|e| logit(0, e)).collect(),
        delta: (0..ni).map(|e| -logit(1, e)).collect(),
        tau: (0..nr).map(|e| -logit(2, e)).collect(),
        beta,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Severe,
    Lenient,
    Neutral,
}

pub const DEFAULT_SEVERITY_CUT: f64 = 0.3;

/// `τ > cut` is severe, `τ < −cut` lenient.
pub fn classify_severity(tau: f64, cut: f64) -> Severity {
    if tau > cut {
        Severity::Severe
    } else if tau < -cut {
        Severity::Lenient
    } else {
        Severity::Neutral
    }
}

/// Severity label for every rater, in facet order.
pub fn severity_classification(estimates: &FacetEstimates, cut: f64) -> Vec<(String, Severity)> {
    if !estimates.converged {
        log::warn!("classifying severity from estimates that did not converge");
    }
    estimates
        .ids
        .raters()
        .iter()
        .zip(&estimates.params.tau)
        .map(|(id, &t)| (id.clone(), classify_severity(t, cut)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ratings::FacetIds;

    fn tensor(
        np: usize,
        ni: usize,
        nr: usize,
        f: impl Fn(usize, usize, usize) -> i32,
    ) -> RatingsTensor {
        let ids = FacetIds::new(
            (0..np).map(|p| format!("p{p}")).collect(),
            (0..ni).map(|i| format!("i{i}")).collect(),
            (0..nr).map(|r| format!("r{r}")).collect(),
        )
        .unwrap();
        let mut cells = Vec::new();
        for p in 0..np {
            for i in 0..ni {
                for r in 0..nr {
                    cells.push((p, i, r, Some(f(p, i, r))));
                }
            }
        }
        RatingsTensor::from_cells(ScaleSpec::new(0, 6).unwrap(), ids, cells).unwrap()
    }

    #[test]
    fn identical_raters_have_zero_severity() {
        let t = tensor(12, 3, 4, |p, i, _| ((p * 7 + i * 3) % 6 + (p % 2)) as i32);
        let est = estimate(&t, &EstimationConfig::default()).unwrap();
        assert!(est.converged, "{:?}", est.warnings);
        for tau in &est.params.tau {
            assert!(tau.abs() < 1e-12, "{tau}");
        }
    }

    #[test]
    fn severity_cut() {
        assert_eq!(classify_severity(1.25, 0.3), Severity::Severe);
        assert_eq!(classify_severity(-0.37, 0.3), Severity::Lenient);
        assert_eq!(classify_severity(0.0, 0.3), Severity::Neutral);
        assert_eq!(classify_severity(0.3, 0.3), Severity::Neutral);
    }

    #[test]
    fn extreme_person_is_held_out() {
        let t = tensor(10, 3, 3, |p, i, r| {
            if p == 0 {
                6
            } else if p == 1 {
                0
            } else {
                ((p + i + r) % 7) as i32
            }
        });
        let est = estimate(&t, &EstimationConfig::default()).unwrap();
        assert_eq!(est.extreme_flags.persons[0], Extreme::MaxExtreme);
        assert_eq!(est.extreme_flags.persons[1], Extreme::MinExtreme);
        let theta = &est.params.theta;
        assert!(theta[0] > theta[2..].iter().cloned().fold(f64::MIN, f64::max));
        assert!(theta[1] < theta[2..].iter().cloned().fold(f64::MAX, f64::min));
        assert!(theta[0] < est.config.logit_clamp);
        assert!(est.se.theta.iter().all(|s| s.is_finite() && *s > 0.0));
    }

    #[test]
    fn rejects_bad_designs() {
        let ids = FacetIds::new(
            vec!["a".into(), "b".into()],
            vec!["i".into(), "j".into()],
            vec!["r".into(), "s".into()],
        )
        .unwrap();
        let scale = ScaleSpec::new(0, 6).unwrap();
        let t =
            RatingsTensor::from_cells(scale, ids.clone(), [(0, 0, 0, Some(1)), (1, 1, 1, Some(3))])
                .unwrap();
        assert!(matches!(
            estimate(&t, &EstimationConfig::default()),
            Err(Error::Disconnected)
        ));
        let t = RatingsTensor::from_cells(scale, ids, [(0, 0, 0, Some(1)), (0, 1, 0, Some(3))])
            .unwrap();
        assert!(matches!(
            estimate(&t, &EstimationConfig::default()),
            Err(Error::EmptyElement { .. })
        ));
        let bad = EstimationConfig {
            logit_clamp: 2.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
