//! Focal, cross-entropy and cosine triplet losses, plus semi-hard mining.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{dot, log_sigmoid, sigmoid, Scalar};

/// Probabilities are clamped to this floor before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocalConfig {
    pub gamma: f64,
}

impl Default for FocalConfig {
    fn default() -> Self {
        FocalConfig { gamma: 2.0 }
    }
}

impl FocalConfig {
    pub fn cross_entropy() -> Self {
        FocalConfig { gamma: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(Error::invalid("gamma", "must be finite and non-negative"));
        }
        Ok(())
    }
}

fn clamped_ln<S: Scalar>(p: S) -> S {
    p.max(S::lit(LOG_FLOOR)).ln()
}

/// `-Σ t_i (1 - p_i)^γ ln p_i` with a one-hot target given by index.
pub fn focal_loss<S: Scalar>(probs: &[S], target: usize, gamma: S) -> S {
    assert!(target < probs.len(), "target class out of range");
    let p = probs[target];
    -(S::one() - p).powf(gamma) * clamped_ln(p)
}

/// Same as [`focal_loss`] with an explicit one-hot target vector.
pub fn focal_loss_one_hot<S: Scalar>(probs: &[S], one_hot: &[S], gamma: S) -> Result<S> {
    if probs.len() != one_hot.len() {
        return Err(Error::invalid("one_hot", "length differs from probabilities"));
    }
    let sum: S = probs.iter().copied().sum();
    if (sum - S::one()).abs() > S::lit(1e-9) {
        return Err(Error::invalid("probs", format!("sum to {sum}, not 1")));
    }
    let hot: Vec<usize> = (0..one_hot.len()).filter(|&i| one_hot[i] == S::one()).collect();
    let valid = hot.len() == 1 && one_hot.iter().all(|&t| t == S::zero() || t == S::one());
    if !valid {
        return Err(Error::invalid("one_hot", "exactly one entry must be 1, the rest 0"));
    }
    Ok(focal_loss(probs, hot[0], gamma))
}

/// `d(focal)/d(logit_j)` where `probs = softmax(logits)`.
pub fn focal_softmax_grad<S: Scalar>(probs: &[S], target: usize, gamma: S) -> Vec<S> {
    let pt = probs[target];
    let q = S::one() - pt;
    // (dL/dp_t) * p_t = γ (1-p_t)^(γ-1) p_t ln p_t - (1-p_t)^γ
    let first = if gamma == S::zero() || q == S::zero() {
        S::zero()
    } else {
        gamma * q.powf(gamma - S::one()) * pt * clamped_ln(pt)
    };
    let coeff = first - q.powf(gamma);
    probs
        .iter()
        .enumerate()
        .map(|(j, &pj)| {
            let delta = if j == target { S::one() } else { S::zero() };
            coeff * (delta - pj)
        })
        .collect()
}

/// Binary focal loss on a logit: `p = σ(z)`, classes `(p, 1 - p)`.
///
/// Returns `(loss, dloss/dz)`.
pub fn binary_focal_from_logit<S: Scalar>(logit: S, label: bool, gamma: S) -> (S, S) {
    let (sign, z) = if label { (S::one(), logit) } else { (-S::one(), -logit) };
    let pt = sigmoid(z);
    let ln_pt = log_sigmoid(z).max(S::lit(LOG_FLOOR).ln());
    let q = S::one() - pt;
    let weight = q.powf(gamma);
    let loss = -weight * ln_pt;
    // d/dz of -(1-pt)^γ ln pt, with dpt/dz = pt (1 - pt).
    let grad = weight * (gamma * pt * ln_pt - q);
    (loss, sign * grad)
}

/// Binary focal loss on a probability.
pub fn binary_focal<S: Scalar>(p: S, label: bool, gamma: S) -> S {
    let probs = [p, S::one() - p];
    focal_loss(&probs, if label { 0 } else { 1 }, gamma)
}

/// `-[y ln p + (1 - y) ln(1 - p)]`.
pub fn binary_cross_entropy<S: Scalar>(p: S, label: bool) -> S {
    if label {
        -clamped_ln(p)
    } else {
        -clamped_ln(S::one() - p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripletConfig {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for TripletConfig {
    fn default() -> Self {
        TripletConfig { alpha: 0.2, beta: 0.01 }
    }
}

impl TripletConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < self.alpha) {
            return Err(Error::invalid("alpha/beta", "require 0 < beta < alpha"));
        }
        Ok(())
    }
}

/// Cosine similarity with its gradients with respect to both inputs.
pub fn cosine_with_grad<S: Scalar>(a: &[S], b: &[S]) -> Result<(S, Vec<S>, Vec<S>)> {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == S::zero() || nb == S::zero() {
        return Err(Error::invalid("vectors", "cosine of a zero-norm vector"));
    }
    let cos = dot(a, b) / (na * nb);
    let ga = a
        .iter()
        .zip(b)
        .map(|(&ai, &bi)| bi / (na * nb) - cos * ai / (na * na))
        .collect();
    let gb = a
        .iter()
        .zip(b)
        .map(|(&ai, &bi)| ai / (na * nb) - cos * bi / (nb * nb))
        .collect();
    Ok((cos, ga, gb))
}

/// Gradients of the triplet loss with respect to anchor, positive and negative.
#[derive(Clone, Debug, PartialEq)]
pub struct TripletGrads<S> {
    pub anchor: Vec<S>,
    pub positive: Vec<S>,
    pub negative: Vec<S>,
}

/// `max(0, cos(a, n) - cos(a, p) + α)` and its gradients (zero on the flat side).
pub fn triplet_cosine_loss_with_grad<S: Scalar>(
    anchor: &[S],
    positive: &[S],
    negative: &[S],
    alpha: S,
) -> Result<(S, TripletGrads<S>)> {
    let (sim_p, ga_p, gp) = cosine_with_grad(anchor, positive)?;
    let (sim_n, ga_n, gn) = cosine_with_grad(anchor, negative)?;
    let margin = sim_n - sim_p + alpha;
    let d = anchor.len();
    if margin <= S::zero() {
        let zeros = vec![S::zero(); d];
        return Ok((
            S::zero(),
            TripletGrads {
                anchor: zeros.clone(),
                positive: zeros.clone(),
                negative: zeros,
            },
        ));
    }
    let anchor_grad = ga_n.iter().zip(&ga_p).map(|(&n, &p)| n - p).collect();
    let positive_grad = gp.into_iter().map(|g| -g).collect();
    Ok((
        margin,
        TripletGrads {
            anchor: anchor_grad,
            positive: positive_grad,
            negative: gn,
        },
    ))
}

pub fn triplet_cosine_loss<S: Scalar>(anchor: &[S], positive: &[S], negative: &[S], alpha: S) -> Result<S> {
    triplet_cosine_loss_with_grad(anchor, positive, negative, alpha).map(|(l, _)| l)
}

/// Picks the negative whose gap `cos(a, p) - cos(a, n)` lies strictly inside
/// `(β, α)`, preferring the smallest gap; `None` when no negative qualifies.
pub fn semi_hard_mine<S: Scalar>(
    anchor: &[S],
    positive: &[S],
    negatives: &[&[S]],
    cfg: &TripletConfig,
) -> Option<usize> {
    let sim_p = crate::textproc::cosine(anchor, positive);
    let gaps: Vec<S> = negatives
        .iter()
        .map(|n| sim_p - crate::textproc::cosine(anchor, n))
        .collect();
    select_semi_hard(&gaps, cfg)
}

/// Band selection on precomputed gaps.
pub fn select_semi_hard<S: Scalar>(gaps: &[S], cfg: &TripletConfig) -> Option<usize> {
    let (alpha, beta) = (S::lit(cfg.alpha), S::lit(cfg.beta));
    gaps.iter()
        .enumerate()
        .filter(|(_, &g)| beta < g && g < alpha)
        .min_by(|a, b| a.1.partial_cmp(b.1).expect("finite gaps"))
        .map(|(i, _)| i)
}
