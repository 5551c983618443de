//! Certainty scores computed from one modality's logits.
//!
//! Every score is oriented higher-is-more-certain so any of them can stand in
//! for distribution uniformity inside the relative calibration.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::netcore::ops::{log_softmax, logsumexp, softmax_unchecked, softmax_vjp};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyKind {
    /// Mean absolute deviation of the softmax from uniform.
    Du,
    /// One minus normalized entropy.
    Entropy,
    /// Maximum class probability.
    Mcp,
    /// Negated free energy, `T·logsumexp(z/T)`.
    Energy,
}

impl UncertaintyKind {
    pub const ALL: [UncertaintyKind; 4] = [
        UncertaintyKind::Du,
        UncertaintyKind::Entropy,
        UncertaintyKind::Mcp,
        UncertaintyKind::Energy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            UncertaintyKind::Du => "du",
            UncertaintyKind::Entropy => "entropy",
            UncertaintyKind::Mcp => "mcp",
            UncertaintyKind::Energy => "energy",
        }
    }
}

impl fmt::Display for UncertaintyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UncertaintyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        UncertaintyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::field("uncertainty.kind", format!("unknown measure `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UncertaintyMeasure {
    pub kind: UncertaintyKind,
    /// Only used by [`UncertaintyKind::Energy`].
    pub temperature: f64,
}

impl Default for UncertaintyMeasure {
    fn default() -> Self {
        Self {
            kind: UncertaintyKind::Du,
            temperature: 1.0,
        }
    }
}

impl UncertaintyMeasure {
    pub fn new(kind: UncertaintyKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::field(
                "uncertainty.temperature",
                format!("{} must be a positive finite number", self.temperature),
            ));
        }
        Ok(())
    }
}

fn check_classes(logits: &[f64]) -> Result<usize> {
    if logits.len() < 2 {
        return Err(Error::field(
            "classes",
            format!("need at least 2 classes, got {}", logits.len()),
        ));
    }
    Ok(logits.len())
}

/// `(1/C) Σᵢ |softmax(z)ᵢ − 1/C|`.
pub fn distribution_uniformity(logits: &[f64]) -> Result<f64> {
    check_classes(logits)?;
    Ok(du_of_probs(&softmax_unchecked(logits)))
}

fn du_of_probs(probs: &[f64]) -> f64 {
    let c = probs.len() as f64;
    probs.iter().map(|p| (p - 1.0 / c).abs()).sum::<f64>() / c
}

/// Largest value distribution uniformity can take for `classes` classes.
pub fn du_upper_bound(classes: usize) -> f64 {
    let c = classes as f64;
    2.0 * (c - 1.0) / (c * c)
}

/// Higher-is-more-certain score of the given kind.
pub fn alt_uncertainty(logits: &[f64], measure: UncertaintyMeasure) -> Result<f64> {
    let classes = check_classes(logits)?;
    measure.validate()?;
    let c = classes as f64;
    Ok(match measure.kind {
        UncertaintyKind::Du => du_of_probs(&softmax_unchecked(logits)),
        UncertaintyKind::Entropy => {
            let p = softmax_unchecked(logits);
            let logp = log_softmax(logits);
            let h: f64 = -p.iter().zip(&logp).map(|(pi, li)| pi * li).sum::<f64>();
            (c.ln() - h) / c.ln()
        }
        UncertaintyKind::Mcp => softmax_unchecked(logits).into_iter().fold(0.0, f64::max),
        UncertaintyKind::Energy => energy(logits, measure.temperature),
    })
}

fn energy(logits: &[f64], t: f64) -> f64 {
    let scaled: Vec<f64> = logits.iter().map(|z| z / t).collect();
    t * logsumexp(&scaled)
}

/// The score placed in the relative-calibration slot.
///
/// Identical to [`alt_uncertainty`] except for energy, which is offset by its
/// value at flat logits with the same mean, `T·ln C + mean(z)`. That makes it
/// non-negative, zero exactly on uniform outputs, and invariant to adding a
/// constant to every logit, like the other three scores.
pub fn calibration_score(logits: &[f64], measure: UncertaintyMeasure) -> Result<f64> {
    match measure.kind {
        UncertaintyKind::Energy => {
            let c = check_classes(logits)? as f64;
            measure.validate()?;
            let mean = logits.iter().sum::<f64>() / c;
            Ok(
                (energy(logits, measure.temperature) - measure.temperature * c.ln() - mean)
                    .max(0.0),
            )
        }
        _ => alt_uncertainty(logits, measure),
    }
}

/// Gradient of [`calibration_score`] with respect to the logits.
///
/// Kinks (`|·|` at zero, ties in the max) take the zero subgradient.
pub(crate) fn calibration_score_grad(logits: &[f64], measure: UncertaintyMeasure) -> Vec<f64> {
    let c = logits.len() as f64;
    match measure.kind {
        UncertaintyKind::Du => {
            let p = softmax_unchecked(logits);
            let dp: Vec<f64> = p
                .iter()
                .map(|&pi| {
                    let d = pi - 1.0 / c;
                    if d > 0.0 {
                        1.0 / c
                    } else if d < 0.0 {
                        -1.0 / c
                    } else {
                        0.0
                    }
                })
                .collect();
            softmax_vjp(&p, &dp)
        }
        UncertaintyKind::Entropy => {
            let p = softmax_unchecked(logits);
            let dp: Vec<f64> = log_softmax(logits)
                .iter()
                .map(|l| (l + 1.0) / c.ln())
                .collect();
            softmax_vjp(&p, &dp)
        }
        UncertaintyKind::Mcp => {
            let p = softmax_unchecked(logits);
            let best = crate::netcore::ops::argmax(&p);
            let mut dp = vec![0.0; p.len()];
            dp[best] = 1.0;
            softmax_vjp(&p, &dp)
        }
        UncertaintyKind::Energy => {
            let t = measure.temperature;
            let scaled: Vec<f64> = logits.iter().map(|z| z / t).collect();
            softmax_unchecked(&scaled)
                .into_iter()
                .map(|s| s - 1.0 / c)
                .collect()
        }
    }
}
