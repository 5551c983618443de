//! Fusion-weight math.
//!
//! Per sample and modality `m`, starting from a predicted true-class
//! probability `p̂ᵐ` and the modality's logits:
//!
//! ```text
//! ℓ̂ᵐ         = −ln p̂ᵐ
//! mono_confᵐ = p̂ᵐ
//! holo_confᵐ = Σ_{j≠m} ℓ̂ʲ / Σᵢ ℓ̂ⁱ
//! co_beliefᵐ = mono_confᵐ + holo_confᵐ
//! duᵐ        = (1/C) Σᵢ |softmax(zᵐ)ᵢ − 1/C|
//! rcᵐ        = duᵐ·(|M|−1) / Σ_{i≠m} duⁱ
//! kᵐ         = rcᵐ if rcᵐ < 1 else 1
//! ccbᵐ       = co_beliefᵐ · kᵐ
//! ω          = softmax(ccb)
//! fused      = Σₘ ωᵐ zᵐ
//! ```
//!
//! Everything here is a pure function. The differentiable per-sample version
//! used during training lives in [`SampleFusion`].

mod strategy;
mod uncertainty;

use serde::{Deserialize, Serialize};

pub use strategy::{FusionStrategy, SampleFusion};
pub(crate) use uncertainty::calibration_score_grad;
pub use uncertainty::{
    alt_uncertainty, calibration_score, distribution_uniformity, du_upper_bound, UncertaintyKind,
    UncertaintyMeasure,
};

use crate::netcore::ops::softmax_unchecked;
use crate::{Error, Result};

/// Predicted probabilities are clamped to `[P_HAT_MIN, 1 − P_HAT_MIN]`.
pub const P_HAT_MIN: f64 = 1e-6;
/// Below this total predicted loss, holo-confidence takes its uniform limit.
pub const HOLO_DEGENERATE_SUM: f64 = 1e-8;
/// Added to the relative-calibration denominator.
pub const RC_EPSILON: f64 = 1e-12;

#[inline]
pub fn clamp_p_hat(p: f64) -> f64 {
    p.clamp(P_HAT_MIN, 1.0 - P_HAT_MIN)
}

/// Per-modality predicted true-class probabilities for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceVector(Vec<f64>);

impl ConfidenceVector {
    /// Clamps every entry; needs at least two modalities.
    pub fn new(p_hat: &[f64]) -> Result<Self> {
        if p_hat.len() < 2 {
            return Err(Error::field(
                "modalities",
                format!("need at least 2 modalities, got {}", p_hat.len()),
            ));
        }
        if let Some(bad) = p_hat.iter().find(|p| !p.is_finite()) {
            return Err(Error::field(
                "p_hat",
                format!("non-finite confidence {bad}"),
            ));
        }
        Ok(Self(p_hat.iter().map(|&p| clamp_p_hat(p)).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Every intermediate of the weight computation for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionBreakdown {
    pub p_hat: Vec<f64>,
    pub loss_hat: Vec<f64>,
    pub mono_conf: Vec<f64>,
    pub holo_conf: Vec<f64>,
    pub co_belief: Vec<f64>,
    /// Certainty score in the calibration slot (distribution uniformity by default).
    pub du: Vec<f64>,
    pub rc: Vec<f64>,
    pub k: Vec<f64>,
    pub ccb: Vec<f64>,
    /// Fusion weights actually applied (depends on the strategy).
    pub weight: Vec<f64>,
}

impl FusionBreakdown {
    pub fn modalities(&self) -> usize {
        self.weight.len()
    }
}

/// `−ln p̂` on the clamped probability.
pub fn predicted_loss(p_hat: f64) -> f64 {
    -clamp_p_hat(p_hat).ln()
}

pub fn mono_confidence(p_hat: &ConfidenceVector) -> Vec<f64> {
    p_hat.as_slice().to_vec()
}

pub fn holo_confidence(losses: &[f64]) -> Result<Vec<f64>> {
    let m = losses.len();
    if m < 2 {
        return Err(Error::field(
            "modalities",
            format!("need at least 2 modalities, got {m}"),
        ));
    }
    if let Some(bad) = losses.iter().find(|l| !(**l >= 0.0)) {
        return Err(Error::field(
            "losses",
            format!("negative or NaN predicted loss {bad}"),
        ));
    }
    let total: f64 = losses.iter().sum();
    if total < HOLO_DEGENERATE_SUM {
        return Ok(vec![(m as f64 - 1.0) / m as f64; m]);
    }
    Ok(losses.iter().map(|l| (total - l) / total).collect())
}

pub fn co_belief(p_hat: &ConfidenceVector) -> Vec<f64> {
    let losses: Vec<f64> = p_hat
        .as_slice()
        .iter()
        .map(|&p| predicted_loss(p))
        .collect();
    let holo =
        holo_confidence(&losses).expect("clamped probabilities give finite non-negative losses");
    mono_confidence(p_hat)
        .into_iter()
        .zip(holo)
        .map(|(m, h)| m + h)
        .collect()
}

/// `rcᵐ = scoreᵐ·(|M|−1) / (Σ_{i≠m} scoreⁱ + ε)`; for two modalities this is
/// the plain ratio `scoreᵐ / scoreⁿ`.
pub fn relative_calibration(du: &[f64]) -> Vec<f64> {
    let m = du.len() as f64;
    (0..du.len())
        .map(|i| {
            let others: f64 = du
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, d)| d)
                .sum();
            du[i] * (m - 1.0) / (others + RC_EPSILON)
        })
        .collect()
}

/// Truncates calibration at one: only relatively uncertain modalities shrink.
pub fn asymmetric_term(rc: &[f64]) -> Vec<f64> {
    rc.iter().map(|&r| if r < 1.0 { r } else { 1.0 }).collect()
}

pub fn calibrated_co_belief(co_belief: &[f64], k: &[f64]) -> Result<Vec<f64>> {
    if co_belief.len() != k.len() {
        return Err(Error::dims(
            "calibrated_co_belief",
            co_belief.len(),
            k.len(),
        ));
    }
    Ok(co_belief.iter().zip(k).map(|(c, k)| c * k).collect())
}

/// Softmax over modalities.
pub fn fusion_weights(ccb: &[f64]) -> Vec<f64> {
    if ccb.is_empty() {
        return Vec::new();
    }
    softmax_unchecked(ccb)
}

/// `Σₘ ωᵐ · zᵐ`.
pub fn fuse_logits(weights: &[f64], logits: &[&[f64]]) -> Result<Vec<f64>> {
    if weights.len() != logits.len() {
        return Err(Error::dims(
            "fuse_logits modalities",
            weights.len(),
            logits.len(),
        ));
    }
    let classes = logits.first().map_or(0, |z| z.len());
    let mut out = vec![0.0; classes];
    for (w, z) in weights.iter().zip(logits) {
        if z.len() != classes {
            return Err(Error::dims("fuse_logits classes", classes, z.len()));
        }
        for (o, v) in out.iter_mut().zip(z.iter()) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// Runs the complete calibrated pipeline on one sample.
pub fn breakdown(
    p_hat: &ConfidenceVector,
    logits: &[&[f64]],
    measure: UncertaintyMeasure,
) -> Result<FusionBreakdown> {
    Ok(
        SampleFusion::forward(p_hat.as_slice(), logits, FusionStrategy::Ccb, measure)?
            .into_breakdown(),
    )
}
