use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{
    asymmetric_term, calibration_score, calibration_score_grad, clamp_p_hat, holo_confidence,
    relative_calibration, FusionBreakdown, UncertaintyMeasure, HOLO_DEGENERATE_SUM, P_HAT_MIN,
    RC_EPSILON,
};
use crate::netcore::ops::{softmax_unchecked, softmax_vjp};
use crate::{Error, Result};

/// Which confidence terms make up the fusion weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionStrategy {
    /// `ω = 1/|M|` (plain late fusion).
    EqualWeight,
    MonoOnly,
    HoloOnly,
    CoBelief,
    /// Calibrated co-belief: the full method.
    Ccb,
    MonoRc,
    HoloRc,
    /// Asymmetric calibration term alone, `ω = softmax(k)`.
    RcOnly,
}

impl FusionStrategy {
    pub const ALL: [FusionStrategy; 8] = [
        FusionStrategy::EqualWeight,
        FusionStrategy::MonoOnly,
        FusionStrategy::HoloOnly,
        FusionStrategy::CoBelief,
        FusionStrategy::Ccb,
        FusionStrategy::MonoRc,
        FusionStrategy::HoloRc,
        FusionStrategy::RcOnly,
    ];

    /// Component-ablation arms in table order.
    pub const ABLATION_ARMS: [FusionStrategy; 7] = [
        FusionStrategy::MonoOnly,
        FusionStrategy::HoloOnly,
        FusionStrategy::RcOnly,
        FusionStrategy::CoBelief,
        FusionStrategy::HoloRc,
        FusionStrategy::MonoRc,
        FusionStrategy::Ccb,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionStrategy::EqualWeight => "equal_weight",
            FusionStrategy::MonoOnly => "mono_only",
            FusionStrategy::HoloOnly => "holo_only",
            FusionStrategy::CoBelief => "co_belief",
            FusionStrategy::Ccb => "ccb",
            FusionStrategy::MonoRc => "mono_rc",
            FusionStrategy::HoloRc => "holo_rc",
            FusionStrategy::RcOnly => "rc_only",
        }
    }

    /// Component label (`MC`, `HC`, `RC` joined by `+`); `None` for equal weights.
    pub fn components(self) -> Option<&'static str> {
        Some(match self {
            FusionStrategy::EqualWeight => return None,
            FusionStrategy::MonoOnly => "MC",
            FusionStrategy::HoloOnly => "HC",
            FusionStrategy::RcOnly => "RC",
            FusionStrategy::CoBelief => "MC+HC",
            FusionStrategy::HoloRc => "HC+RC",
            FusionStrategy::MonoRc => "MC+RC",
            FusionStrategy::Ccb => "MC+HC+RC",
        })
    }

    pub fn component_count(self) -> usize {
        self.components().map_or(0, |c| c.split('+').count())
    }

    fn uses_mono(self) -> bool {
        matches!(
            self,
            Self::MonoOnly | Self::CoBelief | Self::Ccb | Self::MonoRc
        )
    }

    fn uses_holo(self) -> bool {
        matches!(
            self,
            Self::HoloOnly | Self::CoBelief | Self::Ccb | Self::HoloRc
        )
    }

    fn uses_rc(self) -> bool {
        matches!(self, Self::Ccb | Self::MonoRc | Self::HoloRc | Self::RcOnly)
    }
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionStrategy::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::field("strategy", format!("unknown fusion strategy `{s}`")))
    }
}

/// Differentiable fusion of one sample, keeping what the backward pass needs.
#[derive(Debug, Clone)]
pub struct SampleFusion {
    strategy: FusionStrategy,
    measure: UncertaintyMeasure,
    /// Whether the raw confidence sat strictly inside the clamp range.
    unclamped: Vec<bool>,
    logits: Vec<Vec<f64>>,
    loss_sum: f64,
    score: Vec<f64>,
    rc_denominator: Vec<f64>,
    breakdown: FusionBreakdown,
}

impl SampleFusion {
    /// `p_hat` holds raw predicted true-class probabilities (clamped here),
    /// `logits` one slice per modality.
    pub fn forward(
        p_hat: &[f64],
        logits: &[&[f64]],
        strategy: FusionStrategy,
        measure: UncertaintyMeasure,
    ) -> Result<Self> {
        let m = p_hat.len();
        if m < 2 {
            return Err(Error::field(
                "modalities",
                format!("need at least 2 modalities, got {m}"),
            ));
        }
        if logits.len() != m {
            return Err(Error::dims("fusion logits modalities", m, logits.len()));
        }
        let classes = logits[0].len();
        for z in logits {
            if z.len() != classes {
                return Err(Error::dims("fusion logits classes", classes, z.len()));
            }
        }
        if let Some(bad) = p_hat.iter().find(|p| !p.is_finite()) {
            return Err(Error::field(
                "p_hat",
                format!("non-finite confidence {bad}"),
            ));
        }

        let p: Vec<f64> = p_hat.iter().map(|&v| clamp_p_hat(v)).collect();
        let unclamped = p_hat
            .iter()
            .map(|&v| v > P_HAT_MIN && v < 1.0 - P_HAT_MIN)
            .collect();
        let loss_hat: Vec<f64> = p.iter().map(|v| -v.ln()).collect();
        let loss_sum: f64 = loss_hat.iter().sum();
        let holo = holo_confidence(&loss_hat)?;
        let co: Vec<f64> = p.iter().zip(&holo).map(|(a, b)| a + b).collect();

        let du = logits
            .iter()
            .map(|z| calibration_score(z, measure))
            .collect::<Result<Vec<f64>>>()?;
        let rc = relative_calibration(&du);
        let k = asymmetric_term(&rc);
        let ccb: Vec<f64> = co.iter().zip(&k).map(|(c, k)| c * k).collect();
        let rc_denominator = (0..m)
            .map(|i| {
                let others: f64 = du
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, d)| d)
                    .sum();
                others + RC_EPSILON
            })
            .collect();

        let score: Vec<f64> = (0..m)
            .map(|i| {
                let mut s = 0.0;
                if strategy.uses_mono() {
                    s += p[i];
                }
                if strategy.uses_holo() {
                    s += holo[i];
                }
                if strategy == FusionStrategy::RcOnly {
                    s = 1.0;
                }
                s
            })
            .collect();
        let weight = if strategy == FusionStrategy::EqualWeight {
            vec![1.0 / m as f64; m]
        } else {
            let applied: Vec<f64> = if strategy.uses_rc() {
                score.iter().zip(&k).map(|(s, k)| s * k).collect()
            } else {
                score.clone()
            };
            softmax_unchecked(&applied)
        };

        Ok(Self {
            strategy,
            measure,
            unclamped,
            logits: logits.iter().map(|z| z.to_vec()).collect(),
            loss_sum,
            score,
            rc_denominator,
            breakdown: FusionBreakdown {
                mono_conf: p.clone(),
                p_hat: p,
                loss_hat,
                holo_conf: holo,
                co_belief: co,
                du,
                rc,
                k,
                ccb,
                weight,
            },
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.breakdown.weight
    }

    pub fn breakdown(&self) -> &FusionBreakdown {
        &self.breakdown
    }

    pub fn into_breakdown(self) -> FusionBreakdown {
        self.breakdown
    }

    /// Pulls `dL/dω` back to the raw confidences and the logits (through the
    /// calibration score only; the direct `ω·z` path belongs to the caller).
    pub fn backward(&self, grad_weights: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let m = self.breakdown.weight.len();
        let classes = self.logits[0].len();
        let mut grad_p = vec![0.0; m];
        let mut grad_logits = vec![vec![0.0; classes]; m];
        if self.strategy == FusionStrategy::EqualWeight {
            return (grad_p, grad_logits);
        }
        let b = &self.breakdown;
        let grad_applied = softmax_vjp(&b.weight, grad_weights);

        let uses_rc = self.strategy.uses_rc();
        let grad_score: Vec<f64> = (0..m)
            .map(|i| grad_applied[i] * if uses_rc { b.k[i] } else { 1.0 })
            .collect();

        if uses_rc {
            let mut grad_cert = vec![0.0; m];
            let scale = m as f64 - 1.0;
            for i in 0..m {
                if b.rc[i] >= 1.0 {
                    continue;
                }
                let grad_rc = grad_applied[i] * self.score[i];
                let denom = self.rc_denominator[i];
                grad_cert[i] += grad_rc * scale / denom;
                let cross = -grad_rc * b.du[i] * scale / (denom * denom);
                for (j, g) in grad_cert.iter_mut().enumerate() {
                    if j != i {
                        *g += cross;
                    }
                }
            }
            for i in 0..m {
                if grad_cert[i] != 0.0 {
                    let dz = calibration_score_grad(&self.logits[i], self.measure);
                    for (g, d) in grad_logits[i].iter_mut().zip(dz) {
                        *g += grad_cert[i] * d;
                    }
                }
            }
        }

        if self.strategy.uses_mono() {
            for i in 0..m {
                grad_p[i] += grad_score[i];
            }
        }
        if self.strategy.uses_holo() && self.loss_sum >= HOLO_DEGENERATE_SUM {
            // holoᵢ = 1 − ℓᵢ/S  ⇒  ∂holoᵢ/∂ℓⱼ = ℓᵢ/S² − δᵢⱼ/S
            let s = self.loss_sum;
            let weighted: f64 =
                (0..m).map(|i| grad_score[i] * b.loss_hat[i]).sum::<f64>() / (s * s);
            for j in 0..m {
                let grad_loss = weighted - grad_score[j] / s;
                grad_p[j] += grad_loss * (-1.0 / b.p_hat[j]);
            }
        }
        for (g, &inside) in grad_p.iter_mut().zip(&self.unclamped) {
            if !inside {
                *g = 0.0;
            }
        }
        (grad_p, grad_logits)
    }
}
