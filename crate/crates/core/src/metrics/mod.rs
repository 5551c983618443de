//! Evaluation and theory-check metrics.
//!
//! Covariances use population normalization `(1/n) Σ (x − x̄)(y − ȳ)`.
//! The aggregate covariance of a model is
//!
//! ```text
//! AC = Σₘ ( Cov(ωᵐ, ℓᵐ) − (|M|−1) Σ_{j≠m} Cov(ωᵐ, ℓʲ) )
//! ```
//!
//! where `ℓʲ` is the true-label cross-entropy of modality `j`. A negative AC
//! means the weights shrink the generalization bound; GDP is the share of an
//! ensemble of models with AC strictly below zero.

use serde::{Deserialize, Serialize};

use crate::netcore::ops::argmax;
use crate::netcore::Matrix;
use crate::{Error, Result};

/// Population covariance of two equally long series.
pub fn empirical_cov(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::dims("empirical_cov", xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(Error::field(
            "samples",
            format!("covariance needs n >= 2, got {}", xs.len()),
        ));
    }
    let n = xs.len() as f64;
    // shifting by the first element keeps constant series exactly at zero
    let (x0, y0) = (xs[0], ys[0]);
    let mx = xs.iter().map(|x| x - x0).sum::<f64>() / n;
    let my = ys.iter().map(|y| y - y0).sum::<f64>() / n;
    Ok(xs
        .iter()
        .zip(ys)
        .map(|(x, y)| ((x - x0) - mx) * ((y - y0) - my))
        .sum::<f64>()
        / n)
}

/// `Cov(ωᵐ, ℓʲ)` for every modality pair over an evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceRecord {
    pub samples: usize,
    /// Row `m`, column `j`: `Cov(ωᵐ, ℓʲ)`.
    pub values: Vec<Vec<f64>>,
}

impl CovarianceRecord {
    /// `weights` and `losses` are both `[n × |M|]`.
    pub fn new(weights: &Matrix, losses: &Matrix) -> Result<Self> {
        if weights.rows() != losses.rows() || weights.cols() != losses.cols() {
            return Err(Error::dims(
                "covariance weights vs losses",
                weights.rows() * weights.cols(),
                losses.rows() * losses.cols(),
            ));
        }
        let m = weights.cols();
        let w_cols: Vec<Vec<f64>> = (0..m).map(|k| weights.column(k)).collect();
        let l_cols: Vec<Vec<f64>> = (0..m).map(|k| losses.column(k)).collect();
        let values = w_cols
            .iter()
            .map(|w| {
                l_cols
                    .iter()
                    .map(|l| empirical_cov(w, l))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            samples: weights.rows(),
            values,
        })
    }

    pub fn modalities(&self) -> usize {
        self.values.len()
    }

    /// `Cov(ωᵐ, ℓᵐ)`.
    pub fn mono(&self, m: usize) -> f64 {
        self.values[m][m]
    }

    /// `Cov(ωᵐ, ℓʲ)` for `j ≠ m`.
    pub fn holo(&self, m: usize, j: usize) -> f64 {
        self.values[m][j]
    }

    pub fn aggregate(&self) -> f64 {
        let m = self.modalities();
        let scale = m as f64 - 1.0;
        (0..m)
            .map(|i| {
                let cross: f64 = (0..m).filter(|&j| j != i).map(|j| self.values[i][j]).sum();
                self.values[i][i] - scale * cross
            })
            .sum()
    }
}

pub fn aggregate_covariance(weights: &Matrix, losses: &Matrix) -> Result<f64> {
    Ok(CovarianceRecord::new(weights, losses)?.aggregate())
}

/// Fraction of values strictly below zero.
pub fn gdp(ac_values: &[f64]) -> Result<f64> {
    if ac_values.is_empty() {
        return Err(Error::Empty("gdp ac_values"));
    }
    Ok(ac_values.iter().filter(|&&v| v < 0.0).count() as f64 / ac_values.len() as f64)
}

/// GDP of one (strategy, noise) cell over an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdpReport {
    pub strategy: String,
    pub noise_kind: String,
    pub noise_degree: f64,
    pub ac_values: Vec<f64>,
    pub gdp: f64,
}

impl GdpReport {
    pub fn new(
        strategy: impl Into<String>,
        noise_kind: impl Into<String>,
        noise_degree: f64,
        ac_values: Vec<f64>,
    ) -> Result<Self> {
        let gdp = gdp(&ac_values)?;
        Ok(Self {
            strategy: strategy.into(),
            noise_kind: noise_kind.into(),
            noise_degree,
            ac_values,
            gdp,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub avg: f64,
    pub worst: f64,
    /// Sample standard deviation (zero for one seed).
    pub stddev: f64,
}

pub fn avg_worst_accuracy(per_seed: &[f64]) -> Result<AccuracySummary> {
    if per_seed.is_empty() {
        return Err(Error::Empty("per-seed accuracies"));
    }
    let n = per_seed.len() as f64;
    let avg = per_seed.iter().sum::<f64>() / n;
    let worst = per_seed.iter().copied().fold(f64::INFINITY, f64::min);
    let stddev = if per_seed.len() > 1 {
        (per_seed.iter().map(|a| (a - avg) * (a - avg)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(AccuracySummary { avg, worst, stddev })
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::dims("accuracy", labels.len(), predictions.len()));
    }
    if labels.is_empty() {
        return Err(Error::Empty("accuracy labels"));
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConflictStats {
    /// Share of samples whose unimodal decisions are not all equal.
    pub conflict_fraction: f64,
    /// Among conflicting samples, the share the fused decision gets right;
    /// `None` when there are no conflicts.
    pub correct_given_conflict: Option<f64>,
}

pub fn conflict_resolution_rate(
    modality_logits: &[Matrix],
    fused_predictions: &[usize],
    labels: &[usize],
) -> Result<ConflictStats> {
    let n = labels.len();
    if fused_predictions.len() != n {
        return Err(Error::dims(
            "conflict fused predictions",
            n,
            fused_predictions.len(),
        ));
    }
    if n == 0 {
        return Err(Error::Empty("conflict labels"));
    }
    for (m, z) in modality_logits.iter().enumerate() {
        if z.rows() != n {
            return Err(Error::dims(
                format!("conflict modality {m} rows"),
                n,
                z.rows(),
            ));
        }
    }
    let mut conflicts = 0usize;
    let mut resolved = 0usize;
    for i in 0..n {
        let mut decisions = modality_logits.iter().map(|z| argmax(z.row(i)));
        let first = decisions.next();
        if decisions.any(|d| Some(d) != first) {
            conflicts += 1;
            if fused_predictions[i] == labels[i] {
                resolved += 1;
            }
        }
    }
    Ok(ConflictStats {
        conflict_fraction: conflicts as f64 / n as f64,
        correct_given_conflict: (conflicts > 0).then(|| resolved as f64 / conflicts as f64),
    })
}

/// Mean absolute change between two `[n × |M|]` weight matrices.
pub fn delta_omega(prev: &Matrix, curr: &Matrix) -> Result<f64> {
    if prev.rows() != curr.rows() || prev.cols() != curr.cols() {
        return Err(Error::dims(
            "delta_omega",
            prev.rows() * prev.cols(),
            curr.rows() * curr.cols(),
        ));
    }
    if prev.data().is_empty() {
        return Err(Error::Empty("delta_omega weights"));
    }
    let total: f64 = prev
        .data()
        .iter()
        .zip(curr.data())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(total / prev.data().len() as f64)
}

/// Per-epoch Δω on a fixed validation set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub delta_omega: Vec<f64>,
}

impl ConvergenceTrace {
    pub fn push(&mut self, value: f64) {
        self.delta_omega.push(value);
    }

    pub fn len(&self) -> usize {
        self.delta_omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta_omega.is_empty()
    }

    /// Mean over the first `window` epochs.
    pub fn head_mean(&self, window: usize) -> Option<f64> {
        mean(self.delta_omega.get(..window.min(self.len()))?)
    }

    /// Mean over the last `window` epochs.
    pub fn tail_mean(&self, window: usize) -> Option<f64> {
        mean(&self.delta_omega[self.len().saturating_sub(window)..])
    }
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn covariance_examples() {
        assert_eq!(
            empirical_cov(&[2.0; 5], &[1.0, 4.0, 2.0, 0.0, 3.0]).unwrap(),
            0.0
        );
        assert_abs_diff_eq!(empirical_cov(&[0.0, 1.0], &[0.0, 1.0]).unwrap(), 0.25);
        assert_abs_diff_eq!(empirical_cov(&[0.0, 1.0], &[1.0, 0.0]).unwrap(), -0.25);
        assert!(empirical_cov(&[1.0], &[1.0]).is_err());
        assert!(empirical_cov(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn constant_weights_have_zero_ac() {
        let w = Matrix::from_rows(&[vec![0.3, 0.7], vec![0.3, 0.7], vec![0.3, 0.7]]).unwrap();
        let l = Matrix::from_rows(&[vec![0.1, 2.0], vec![1.5, 0.2], vec![0.7, 0.9]]).unwrap();
        assert_eq!(aggregate_covariance(&w, &l).unwrap(), 0.0);
    }

    #[test]
    fn two_sample_ac_matches_brute_force() {
        let w = Matrix::from_rows(&[vec![0.8, 0.2], vec![0.2, 0.8]]).unwrap();
        let l = Matrix::from_rows(&[vec![0.1, 0.9], vec![0.9, 0.1]]).unwrap();
        // Cov(ω¹,ℓ¹) = −0.12, Cov(ω¹,ℓ²) = 0.12, Cov(ω²,ℓ¹) = 0.12, Cov(ω²,ℓ²) = −0.12
        let rec = CovarianceRecord::new(&w, &l).unwrap();
        assert_abs_diff_eq!(rec.mono(0), -0.12, epsilon = 1e-12);
        assert_abs_diff_eq!(rec.holo(0, 1), 0.12, epsilon = 1e-12);
        let ac = aggregate_covariance(&w, &l).unwrap();
        assert_abs_diff_eq!(ac, -0.48, epsilon = 1e-12);
        assert!(aggregate_covariance(&w, &Matrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn gdp_examples() {
        assert_eq!(gdp(&[-1.0, 2.0, -3.0, 0.0]).unwrap(), 0.5);
        assert_eq!(gdp(&[-1.0, -0.1]).unwrap(), 1.0);
        assert_eq!(gdp(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!(gdp(&[]).is_err());
    }

    #[test]
    fn accuracy_summary_examples() {
        let s = avg_worst_accuracy(&[0.8, 0.9]).unwrap();
        assert_abs_diff_eq!(s.avg, 0.85, epsilon = 1e-12);
        assert_eq!(s.worst, 0.8);
        assert_abs_diff_eq!(s.stddev, 0.070_710_678, epsilon = 1e-8);
        let one = avg_worst_accuracy(&[0.7]).unwrap();
        assert_eq!((one.avg, one.worst, one.stddev), (0.7, 0.7, 0.0));
        assert_eq!(avg_worst_accuracy(&[0.9, 0.8]).unwrap(), s);
        assert!(avg_worst_accuracy(&[]).is_err());
    }

    #[test]
    fn conflict_examples() {
        let agree = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let none = conflict_resolution_rate(&[agree.clone(), agree], &[0, 1], &[0, 1]).unwrap();
        assert_eq!(none.conflict_fraction, 0.0);
        assert_eq!(none.correct_given_conflict, None);

        // samples 0..3 conflict, fusion right on 0 and 1 only; sample 3 agrees
        let a = Matrix::from_rows(&[
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![1.0, 0.0],
        ])
        .unwrap();
        let b = Matrix::from_rows(&[
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
        ])
        .unwrap();
        let stats = conflict_resolution_rate(&[a, b], &[0, 1, 0, 0], &[0, 1, 1, 0]).unwrap();
        assert_abs_diff_eq!(stats.conflict_fraction, 0.75);
        assert_abs_diff_eq!(stats.correct_given_conflict.unwrap(), 2.0 / 3.0);
    }

    #[test]
    fn fused_following_a_correct_modality_resolves_every_conflict() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let labels = [0, 1, 1];
        let stats = conflict_resolution_rate(&[a, b], &labels, &labels).unwrap();
        assert_eq!(stats.correct_given_conflict, Some(1.0));
    }

    #[test]
    fn delta_omega_examples() {
        let a = Matrix::from_rows(&[vec![0.5, 0.5], vec![0.2, 0.8]]).unwrap();
        assert_eq!(delta_omega(&a, &a).unwrap(), 0.0);
        let shifted = Matrix::from_vec(2, 2, a.data().iter().map(|v| v + 0.1).collect()).unwrap();
        assert_abs_diff_eq!(delta_omega(&a, &shifted).unwrap(), 0.1, epsilon = 1e-12);
        let b = Matrix::from_rows(&[vec![0.6, 0.4], vec![0.5, 0.5]]).unwrap();
        // |0.1| + |0.1| + |0.3| + |0.3| over 4
        assert_abs_diff_eq!(delta_omega(&a, &b).unwrap(), 0.2, epsilon = 1e-12);
        assert!(delta_omega(&a, &Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn trace_windows() {
        let t = ConvergenceTrace {
            delta_omega: vec![4.0, 2.0, 1.0, 0.5],
        };
        assert_eq!(t.head_mean(2), Some(3.0));
        assert_eq!(t.tail_mean(2), Some(0.75));
        assert_eq!(ConvergenceTrace::default().tail_mean(3), None);
    }
}
