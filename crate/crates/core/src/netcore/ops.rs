//! Scalar and row-wise primitives shared by the networks and the fusion math.

use super::Matrix;
use crate::{Error, Result};

/// Lower clamp applied to every probability before taking a log.
pub const PROB_FLOOR: f64 = 1e-12;

pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Empty("softmax logits"));
    }
    Ok(softmax_unchecked(logits))
}

pub(crate) fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = logsumexp(logits);
    logits.iter().map(|x| x - lse).collect()
}

/// Applies [`softmax`] to every row.
pub fn softmax_rows(logits: &Matrix) -> Result<Matrix> {
    if logits.cols() == 0 {
        return Err(Error::Empty("softmax logits"));
    }
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let p = softmax_unchecked(logits.row(r));
        out.row_mut(r).copy_from_slice(&p);
    }
    Ok(out)
}

/// Mean over the batch of `-ln p[label]`, with `p` clamped to [`PROB_FLOOR`].
pub fn cross_entropy(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    if probs.rows() != labels.len() {
        return Err(Error::dims(
            "cross_entropy labels",
            probs.rows(),
            labels.len(),
        ));
    }
    if labels.is_empty() {
        return Err(Error::Empty("cross_entropy batch"));
    }
    let classes = probs.cols();
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        total -= probs.get(r, y).clamp(PROB_FLOOR, 1.0).ln();
    }
    Ok(total / labels.len() as f64)
}

/// Mean squared difference.
pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::dims("mse", pred.len(), target.len()));
    }
    if pred.is_empty() {
        return Err(Error::Empty("mse input"));
    }
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / pred.len() as f64)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Vector-Jacobian product of softmax: given `p = softmax(z)` and `dL/dp`,
/// returns `dL/dz`.
pub(crate) fn softmax_vjp(p: &[f64], grad_p: &[f64]) -> Vec<f64> {
    let inner: f64 = p.iter().zip(grad_p).map(|(a, b)| a * b).sum();
    p.iter()
        .zip(grad_p)
        .map(|(pi, gi)| pi * (gi - inner))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);

        let p = softmax(&[1000.0, 0.0]).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.0, epsilon = 1e-12);

        // mpmath, 30 digits
        let p = softmax(&[1.0, 2.0, 3.0]).unwrap();
        for (got, want) in p
            .iter()
            .zip([0.090_030_573_17, 0.244_728_471_05, 0.665_240_955_77])
        {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-5);
        }

        assert!(matches!(softmax(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn cross_entropy_examples() {
        let c = 5;
        let uniform = Matrix::from_vec(2, c, vec![1.0 / c as f64; 2 * c]).unwrap();
        assert_abs_diff_eq!(
            cross_entropy(&uniform, &[0, 3]).unwrap(),
            (c as f64).ln(),
            epsilon = 1e-12
        );

        let sure = Matrix::from_rows(&[vec![0.0, 1.0]]).unwrap();
        assert_eq!(cross_entropy(&sure, &[1]).unwrap(), 0.0);

        let p = Matrix::from_rows(&[vec![0.7, 0.3]]).unwrap();
        assert_abs_diff_eq!(
            cross_entropy(&p, &[0]).unwrap(),
            0.356_674_94,
            epsilon = 1e-6
        );

        // zero probability is clamped, not infinite
        assert_abs_diff_eq!(
            cross_entropy(&sure, &[0]).unwrap(),
            -(PROB_FLOOR.ln()),
            epsilon = 1e-9
        );

        assert!(matches!(
            cross_entropy(&p, &[2]),
            Err(Error::LabelOutOfRange {
                label: 2,
                classes: 2
            })
        ));
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[0.3, 0.1], &[0.3, 0.1]).unwrap(), 0.0);
        assert_eq!(mse(&[0.0], &[1.0]).unwrap(), 1.0);
        assert_abs_diff_eq!(
            mse(&[0.2, 0.8], &[0.4, 0.4]).unwrap(),
            0.10,
            epsilon = 1e-12
        );
        assert!(mse(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[2.0, 1.0]), 0);
        assert_eq!(argmax(&[1.0, 1.0]), 0);
        assert_eq!(argmax(&[0.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn softplus_and_sigmoid_are_stable() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_abs_diff_eq!(sigmoid(0.0), 0.5);
    }
}
