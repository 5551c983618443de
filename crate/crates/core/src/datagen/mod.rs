//! Synthetic multimodal classification data and test-time corruption.
//!
//! Every class has one prototype per modality. A sample's modality-`m`
//! features are the prototype of its label (or, with probability `ρᵐ`, of a
//! random wrong class) plus isotropic noise `σᵐ`. Features are then
//! standardized per dimension with train-split statistics.

mod format;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use format::{
    decode_batch, decode_batch_header, encode_batch, load_batch, read_batch_header, save_batch,
    BatchHeader,
};

use crate::netcore::Matrix;
use crate::{seeding, Error, Result};

/// One modality of the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalitySpec {
    pub dim: usize,
    /// Euclidean norm of every class prototype.
    pub signal_scale: f64,
    /// Standard deviation of the per-coordinate intrinsic noise.
    pub noise_std: f64,
    /// Fraction of samples drawn around a wrong class's prototype.
    #[serde(default)]
    pub flip_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    pub classes: usize,
    pub modalities: Vec<ModalitySpec>,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            modalities: vec![
                ModalitySpec {
                    dim: 16,
                    signal_scale: 3.0,
                    noise_std: 1.0,
                    flip_rate: 0.1,
                },
                ModalitySpec {
                    dim: 16,
                    signal_scale: 3.0,
                    noise_std: 1.0,
                    flip_rate: 0.1,
                },
            ],
            train: 800,
            val: 200,
            test: 400,
            seed: 7,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::field(
                "generator.classes",
                format!("need at least 2, got {}", self.classes),
            ));
        }
        if self.modalities.len() < 2 {
            return Err(Error::field(
                "generator.modalities",
                format!("need at least 2, got {}", self.modalities.len()),
            ));
        }
        for (m, spec) in self.modalities.iter().enumerate() {
            let name = |f: &str| format!("generator.modalities[{m}].{f}");
            if spec.dim == 0 {
                return Err(Error::field(name("dim"), "must be positive"));
            }
            if !(spec.signal_scale > 0.0 && spec.signal_scale.is_finite()) {
                return Err(Error::field(
                    name("signal_scale"),
                    format!("{} must be > 0", spec.signal_scale),
                ));
            }
            if !(spec.noise_std >= 0.0 && spec.noise_std.is_finite()) {
                return Err(Error::field(
                    name("noise_std"),
                    format!("{} must be >= 0", spec.noise_std),
                ));
            }
            if !(0.0..0.5).contains(&spec.flip_rate) {
                return Err(Error::field(
                    name("flip_rate"),
                    format!("{} not in [0, 0.5)", spec.flip_rate),
                ));
            }
        }
        if self.train < 2 {
            return Err(Error::field(
                "generator.train",
                "need at least 2 training samples",
            ));
        }
        Ok(())
    }

    pub fn modality_dims(&self) -> Vec<usize> {
        self.modalities.iter().map(|m| m.dim).collect()
    }
}

/// Per-modality feature matrices `[n × dᵐ]` with shared labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalBatch {
    features: Vec<Matrix>,
    labels: Vec<usize>,
    classes: usize,
    /// Free-form single-line note carried through the batch file header.
    pub provenance: String,
}

impl MultimodalBatch {
    pub fn new(features: Vec<Matrix>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Empty("batch modalities"));
        }
        if classes < 2 {
            return Err(Error::field(
                "classes",
                format!("need at least 2, got {classes}"),
            ));
        }
        for (m, x) in features.iter().enumerate() {
            if x.rows() != labels.len() {
                return Err(Error::dims(
                    format!("modality {m} rows"),
                    labels.len(),
                    x.rows(),
                ));
            }
        }
        if let Some(&label) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        Ok(Self {
            features,
            labels,
            classes,
            provenance: String::new(),
        })
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = provenance.into();
        self
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn modalities(&self) -> usize {
        self.features.len()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dims(&self) -> Vec<usize> {
        self.features.iter().map(Matrix::cols).collect()
    }

    pub fn features(&self) -> &[Matrix] {
        &self.features
    }

    pub fn modality(&self, m: usize) -> &Matrix {
        &self.features[m]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> MultimodalBatch {
        MultimodalBatch {
            features: self
                .features
                .iter()
                .map(|x| x.select_rows(indices))
                .collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            provenance: self.provenance.clone(),
        }
    }
}

/// Per-modality, per-dimension extremes of the standardized train split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBounds {
    pub min: Vec<Vec<f64>>,
    pub max: Vec<Vec<f64>>,
}

impl FeatureBounds {
    pub fn of(batch: &MultimodalBatch) -> Self {
        let mut min = Vec::with_capacity(batch.modalities());
        let mut max = Vec::with_capacity(batch.modalities());
        for x in batch.features() {
            let mut lo = vec![f64::INFINITY; x.cols()];
            let mut hi = vec![f64::NEG_INFINITY; x.cols()];
            for r in 0..x.rows() {
                for (j, &v) in x.row(r).iter().enumerate() {
                    lo[j] = lo[j].min(v);
                    hi[j] = hi[j].max(v);
                }
            }
            min.push(lo);
            max.push(hi);
        }
        Self { min, max }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSplits {
    pub train: MultimodalBatch,
    pub val: MultimodalBatch,
    pub test: MultimodalBatch,
    /// Bounds of the standardized train split, used by salt-and-pepper noise.
    pub bounds: FeatureBounds,
}

/// Draws train/val/test splits; a pure function of the spec.
pub fn generate(spec: &GeneratorSpec) -> Result<SyntheticSplits> {
    spec.validate()?;
    let c = spec.classes;
    let mut proto_rng = seeding::rng(spec.seed, "prototypes", 0);
    let prototypes: Vec<Vec<Vec<f64>>> = spec
        .modalities
        .iter()
        .map(|ms| {
            (0..c)
                .map(|_| {
                    let v: Vec<f64> = (0..ms.dim)
                        .map(|_| proto_rng.sample(StandardNormal))
                        .collect();
                    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                    v.into_iter().map(|x| x * ms.signal_scale / norm).collect()
                })
                .collect()
        })
        .collect();

    let draw = |split: &str, n: usize| -> (Vec<Matrix>, Vec<usize>) {
        let mut rng = seeding::rng(spec.seed, split, 0);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let features = spec
            .modalities
            .iter()
            .enumerate()
            .map(|(m, ms)| {
                let mut data = Vec::with_capacity(n * ms.dim);
                for &y in &labels {
                    let source = if rng.random::<f64>() < ms.flip_rate {
                        (y + rng.random_range(1..c)) % c
                    } else {
                        y
                    };
                    for &p in &prototypes[m][source] {
                        let e: f64 = rng.sample(StandardNormal);
                        data.push(p + ms.noise_std * e);
                    }
                }
                Matrix::from_vec(n, ms.dim, data).expect("sized above")
            })
            .collect();
        (features, labels)
    };

    let (mut train_x, train_y) = draw("train", spec.train);
    let (mut val_x, val_y) = draw("val", spec.val);
    let (mut test_x, test_y) = draw("test", spec.test);

    for m in 0..spec.modalities.len() {
        let (mean, std) = column_stats(&train_x[m]);
        for x in [&mut train_x[m], &mut val_x[m], &mut test_x[m]] {
            standardize(x, &mean, &std);
        }
    }

    let tag = |split: &str| format!("generator seed={} split={split}", spec.seed);
    let train = MultimodalBatch::new(train_x, train_y, c)?.with_provenance(tag("train"));
    let val = MultimodalBatch::new(val_x, val_y, c)?.with_provenance(tag("val"));
    let test = MultimodalBatch::new(test_x, test_y, c)?.with_provenance(tag("test"));
    let bounds = FeatureBounds::of(&train);
    Ok(SyntheticSplits {
        train,
        val,
        test,
        bounds,
    })
}

fn column_stats(x: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = x.rows() as f64;
    let mut mean = vec![0.0; x.cols()];
    for r in 0..x.rows() {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; x.cols()];
    for r in 0..x.rows() {
        for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    // constant columns are only centred
    let std = var
        .into_iter()
        .map(|s| (s / n).sqrt())
        .map(|s| if s > 1e-12 { s } else { 1.0 })
        .collect();
    (mean, std)
}

fn standardize(x: &mut Matrix, mean: &[f64], std: &[f64]) {
    for r in 0..x.rows() {
        for ((v, m), s) in x.row_mut(r).iter_mut().zip(mean).zip(std) {
            *v = (*v - m) / s;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian,
    SaltPepper,
    None,
}

impl NoiseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::SaltPepper => "salt_pepper",
            NoiseKind::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Noise degree `ε`, in standardized-feature units for Gaussian noise.
    pub degree: f64,
    /// Share of modalities corrupted in every sample.
    pub modality_fraction: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            kind: NoiseKind::Gaussian,
            degree: 0.0,
            modality_fraction: 0.5,
            seed: 0,
        }
    }
}

/// Largest salt-and-pepper replacement probability.
pub const SALT_PEPPER_MAX_PROB: f64 = 0.9;

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.degree >= 0.0 && self.degree.is_finite()) {
            return Err(Error::field(
                "noise.degree",
                format!("{} must be >= 0", self.degree),
            ));
        }
        if !(0.0..=1.0).contains(&self.modality_fraction) {
            return Err(Error::field(
                "noise.modality_fraction",
                format!("{} not in [0, 1]", self.modality_fraction),
            ));
        }
        Ok(())
    }

    /// Per-coordinate replacement probability of salt-and-pepper noise.
    pub fn salt_pepper_prob(&self) -> f64 {
        (self.degree / 20.0).min(SALT_PEPPER_MAX_PROB)
    }

    /// Number of modalities corrupted per sample.
    pub fn corrupted_count(&self, modalities: usize) -> usize {
        ((self.modality_fraction * modalities as f64).ceil() as usize).min(modalities)
    }

    fn is_identity(&self) -> bool {
        self.kind == NoiseKind::None || self.degree == 0.0 || self.modality_fraction == 0.0
    }
}

/// Returns a corrupted copy of `batch`; the input is left untouched.
///
/// Each sample gets its own seeded choice of modalities to corrupt.
pub fn corrupt(
    batch: &MultimodalBatch,
    noise: &NoiseSpec,
    bounds: &FeatureBounds,
) -> Result<MultimodalBatch> {
    noise.validate()?;
    if noise.is_identity() {
        return Ok(batch.clone());
    }
    let m = batch.modalities();
    if noise.kind == NoiseKind::SaltPepper {
        if bounds.min.len() != m || bounds.max.len() != m {
            return Err(Error::dims(
                "feature bounds modalities",
                m,
                bounds.min.len(),
            ));
        }
        for (i, d) in batch.dims().into_iter().enumerate() {
            if bounds.min[i].len() != d || bounds.max[i].len() != d {
                return Err(Error::dims(
                    format!("feature bounds modality {i}"),
                    d,
                    bounds.min[i].len(),
                ));
            }
        }
    }
    let mut out = batch.clone();
    let mut rng = seeding::rng(noise.seed, "corrupt", 0);
    let per_sample = noise.corrupted_count(m);
    let p = noise.salt_pepper_prob();
    for r in 0..batch.len() {
        for modality in sample_indices(&mut rng, m, per_sample) {
            let row = out.features[modality].row_mut(r);
            match noise.kind {
                NoiseKind::Gaussian => {
                    for v in row.iter_mut() {
                        let g: f64 = rng.sample(StandardNormal);
                        *v += noise.degree * g;
                    }
                }
                NoiseKind::SaltPepper => {
                    for (j, v) in row.iter_mut().enumerate() {
                        if rng.random::<f64>() < p {
                            *v = if rng.random::<bool>() {
                                bounds.max[modality][j]
                            } else {
                                bounds.min[modality][j]
                            };
                        }
                    }
                }
                NoiseKind::None => unreachable!("identity noise returns early"),
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small_spec() -> GeneratorSpec {
        GeneratorSpec {
            classes: 3,
            modalities: vec![
                ModalitySpec {
                    dim: 4,
                    signal_scale: 2.0,
                    noise_std: 0.5,
                    flip_rate: 0.1,
                },
                ModalitySpec {
                    dim: 3,
                    signal_scale: 1.0,
                    noise_std: 1.0,
                    flip_rate: 0.0,
                },
            ],
            train: 300,
            val: 50,
            test: 60,
            seed: 11,
        }
    }

    #[test]
    fn generation_is_deterministic_and_shaped() {
        let a = generate(&small_spec()).unwrap();
        let b = generate(&small_spec()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train.len(), 300);
        assert_eq!(a.val.len(), 50);
        assert_eq!(a.test.len(), 60);
        assert_eq!(a.train.dims(), vec![4, 3]);
        let mut other = small_spec();
        other.seed = 12;
        assert_ne!(generate(&other).unwrap().train, a.train);
    }

    #[test]
    fn train_split_is_standardized() {
        let s = generate(&small_spec()).unwrap();
        for x in s.train.features() {
            let (mean, std) = column_stats(x);
            for (m, sd) in mean.iter().zip(&std) {
                assert!(m.abs() < 1e-6);
                assert!((0.99..=1.01).contains(&(sd * sd)));
            }
        }
    }

    #[test]
    fn invalid_specs_name_the_field() {
        let mut s = small_spec();
        s.modalities[1].flip_rate = 0.5;
        let err = generate(&s).unwrap_err().to_string();
        assert!(err.contains("generator.modalities[1].flip_rate"), "{err}");
        let mut s = small_spec();
        s.classes = 1;
        assert!(generate(&s).is_err());
        let mut s = small_spec();
        s.modalities.truncate(1);
        assert!(generate(&s).is_err());
    }

    #[test]
    fn batch_rejects_bad_labels() {
        let x = Matrix::zeros(2, 3);
        assert!(matches!(
            MultimodalBatch::new(vec![x.clone(), x], vec![0, 3], 3),
            Err(Error::LabelOutOfRange {
                label: 3,
                classes: 3
            })
        ));
    }

    #[test]
    fn zero_degree_is_identity() {
        let s = generate(&small_spec()).unwrap();
        for kind in [NoiseKind::Gaussian, NoiseKind::SaltPepper, NoiseKind::None] {
            let noise = NoiseSpec {
                kind,
                ..NoiseSpec::default()
            };
            assert_eq!(corrupt(&s.test, &noise, &s.bounds).unwrap(), s.test);
        }
    }

    #[test]
    fn exactly_one_of_two_modalities_is_corrupted() {
        let s = generate(&small_spec()).unwrap();
        let noise = NoiseSpec {
            degree: 3.0,
            seed: 4,
            ..NoiseSpec::default()
        };
        let noisy = corrupt(&s.test, &noise, &s.bounds).unwrap();
        let mut hits = [0usize; 2];
        for r in 0..s.test.len() {
            let changed: Vec<bool> = (0..2)
                .map(|m| noisy.modality(m).row(r) != s.test.modality(m).row(r))
                .collect();
            assert_eq!(changed.iter().filter(|&&c| c).count(), 1);
            hits[changed.iter().position(|&c| c).unwrap()] += 1;
        }
        assert!(hits[0] > 10 && hits[1] > 10);
    }

    #[test]
    fn gaussian_variance_matches_degree() {
        let n = 10_000;
        let zero = MultimodalBatch::new(
            vec![Matrix::zeros(n, 1), Matrix::zeros(n, 1)],
            vec![0; n],
            2,
        )
        .unwrap();
        let bounds = FeatureBounds::of(&zero);
        let noise = NoiseSpec {
            degree: 5.0,
            seed: 9,
            ..NoiseSpec::default()
        };
        let noisy = corrupt(&zero, &noise, &bounds).unwrap();
        let values: Vec<f64> = (0..n)
            .map(|r| noisy.modality(0).get(r, 0) + noisy.modality(1).get(r, 0))
            .collect();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        assert!((var - 25.0).abs() < 2.5, "variance {var}");
    }

    #[test]
    fn salt_pepper_rate_and_values() {
        let s = generate(&small_spec()).unwrap();
        let noise = NoiseSpec {
            kind: NoiseKind::SaltPepper,
            degree: 10.0,
            seed: 2,
            ..NoiseSpec::default()
        };
        assert_abs_diff_eq!(noise.salt_pepper_prob(), 0.5);
        let noisy = corrupt(&s.train, &noise, &s.bounds).unwrap();
        for m in 0..2 {
            for r in 0..s.train.len() {
                for (j, (&a, &b)) in noisy
                    .modality(m)
                    .row(r)
                    .iter()
                    .zip(s.train.modality(m).row(r))
                    .enumerate()
                {
                    if a != b {
                        assert!(a == s.bounds.min[m][j] || a == s.bounds.max[m][j]);
                    }
                }
            }
        }
    }
}
