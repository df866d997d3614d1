//! Rating-scale many-facet Rasch model.
//!
//! The log-odds of category `k` over `k − 1` is `θ − τ − δ − β_k`, with
//! `η = θ − τ − δ`. Category indices are 0-based; reporting adds the
//! scale minimum. Positive `τ` is a severe rater.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ratings::{Facet, FacetIds, RatingsTensor, ScaleSpec};

/// Unnormalized log-weights `ψ_k = Σ_{h≤k} (η − β_h)`, `ψ_0 = 0`, written into `out`.
fn cumulative_logits(eta: f64, beta: &[f64], out: &mut [f64]) {
    debug_assert_eq!(out.len(), beta.len() + 1);
    out[0] = 0.0;
    for (k, b) in beta.iter().enumerate() {
        out[k + 1] = out[k] + (eta - b);
    }
}

/// Category probabilities written into `out` (length `beta.len() + 1`).
pub fn category_probs_into(eta: f64, beta: &[f64], out: &mut [f64]) {
    cumulative_logits(eta, beta, out);
    let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in out.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in out.iter_mut() {
        *v /= sum;
    }
}

pub fn category_probs(eta: f64, beta: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; beta.len() + 1];
    category_probs_into(eta, beta, &mut out);
    out
}

/// Expected category and its variance under the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub expected: f64,
    pub variance: f64,
}

/// Mean and variance of the category index, using `buf` as scratch.
pub fn moments_with(eta: f64, beta: &[f64], buf: &mut [f64]) -> Moments {
    category_probs_into(eta, beta, buf);
    let expected: f64 = buf.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
    let variance: f64 = buf
        .iter()
        .enumerate()
        .map(|(k, p)| (k as f64 - expected).powi(2) * p)
        .sum();
    Moments { expected, variance }
}

pub fn moments(eta: f64, beta: &[f64]) -> Moments {
    let mut buf = vec![0.0; beta.len() + 1];
    moments_with(eta, beta, &mut buf)
}

/// Expected 0-based category `Σ k·p_k`.
pub fn expected_score(eta: f64, beta: &[f64]) -> f64 {
    moments(eta, beta).expected
}

/// Model variance of the category, `Σ (k − E)²·p_k`.
pub fn score_variance(eta: f64, beta: &[f64]) -> f64 {
    moments(eta, beta).variance
}

/// `ln p_x` for 0-based category `x`, using `buf` as scratch.
pub fn log_prob_with(eta: f64, beta: &[f64], x: usize, buf: &mut [f64]) -> f64 {
    cumulative_logits(eta, beta, buf);
    let max = buf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = buf.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    buf[x] - lse
}

/// Parameters of the rating-scale model, in logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Person abilities.
    pub theta: Vec<f64>,
    /// Rater severities.
    pub tau: Vec<f64>,
    /// Item difficulties.
    pub delta: Vec<f64>,
    /// Thresholds `β_1..β_K`.
    pub beta: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(ids: &FacetIds, scale: ScaleSpec) -> Self {
        Self {
            theta: vec![0.0; ids.len(Facet::Person)],
            tau: vec![0.0; ids.len(Facet::Rater)],
            delta: vec![0.0; ids.len(Facet::Item)],
            beta: vec![0.0; scale.max_category()],
        }
    }

    pub fn eta(&self, person: usize, item: usize, rater: usize) -> f64 {
        self.theta[person] - self.tau[rater] - self.delta[item]
    }

    pub fn of(&self, facet: Facet) -> &[f64] {
        match facet {
            Facet::Person => &self.theta,
            Facet::Item => &self.delta,
            Facet::Rater => &self.tau,
        }
    }

    pub fn check_dims(&self, tensor: &RatingsTensor) -> Result<()> {
        let (np, ni, nr) = tensor.dims();
        let k = tensor.scale().max_category();
        if self.theta.len() != np
            || self.delta.len() != ni
            || self.tau.len() != nr
            || self.beta.len() != k
        {
            return Err(Error::DimensionMismatch(format!(
                "params {}×{}×{} with {} thresholds vs tensor {np}×{ni}×{nr} with {k}",
                self.theta.len(),
                self.delta.len(),
                self.tau.len(),
                self.beta.len()
            )));
        }
        Ok(())
    }

    /// Equivalent parameters with `τ`, `δ` and `β` centered at 0. Persons are
    /// shifted so every category probability is unchanged.
    pub fn identified(&self) -> Self {
        let mut p = self.clone();
        let shift = mean(&p.tau) + mean(&p.delta) + mean(&p.beta);
        for group in [&mut p.tau, &mut p.delta, &mut p.beta] {
            let m = mean(group);
            group.iter_mut().for_each(|v| *v -= m);
        }
        p.theta.iter_mut().for_each(|v| *v -= shift);
        p
    }

    /// Largest absolute sum among `τ`, `δ` and `β`.
    pub fn centering_residual(&self) -> f64 {
        [&self.tau, &self.delta, &self.beta]
            .iter()
            .map(|g| g.iter().sum::<f64>().abs())
            .fold(0.0, f64::max)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Σ over present cells of `ln p_x`.
pub fn log_likelihood(tensor: &RatingsTensor, params: &ModelParams) -> Result<f64> {
    params.check_dims(tensor)?;
    let mut buf = vec![0.0; params.beta.len() + 1];
    Ok(tensor
        .observations()
        .map(|o| {
            log_prob_with(
                params.eta(o.person, o.item, o.rater),
                &params.beta,
                o.category,
                &mut buf,
            )
        })
        .sum())
}
