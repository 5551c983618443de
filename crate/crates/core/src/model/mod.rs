//! The end-to-end classifier.
//!
//! Per modality `m`: an encoder maps features to a hidden representation
//! `hᵐ`, a head maps `hᵐ` to logits `zᵐ`, and a confidence predictor maps
//! `hᵐ` to `p̂ᵐ`. The logits are fused with per-sample weights from
//! [`SampleFusion`]. Training minimizes
//!
//! ```text
//! CE(fused) + Σₘ CE(zᵐ) + Σₘ MSE(p̂ᵐ, p_trueᵐ)
//! ```
//!
//! with gradients flowing through the fusion weights unless
//! `detach_weights` is set.

mod checkpoint;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};

use crate::datagen::MultimodalBatch;
use crate::fusion::{
    clamp_p_hat, FusionBreakdown, FusionStrategy, SampleFusion, UncertaintyMeasure, P_HAT_MIN,
};
use crate::netcore::ops::{argmax, log_softmax, softmax_unchecked};
use crate::netcore::{
    adam_step_with_lr, Activation, AdamConfig, AdamState, Dropout, Matrix, MlpNetwork,
    NetGradients, Parameterized,
};
use crate::{Error, Result};

/// What the confidence predictor is trained to output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorTarget {
    /// Softmax probability of the true class (sigmoid output).
    PTrue,
    /// Cross-entropy `−ln p_true` (softplus output); fused via `p̂ = e^{−ℓ̂}`.
    Loss,
}

impl PredictorTarget {
    pub fn as_str(self) -> &'static str {
        match self {
            PredictorTarget::PTrue => "p_true",
            PredictorTarget::Loss => "loss",
        }
    }

    fn output_activation(self) -> Activation {
        match self {
            PredictorTarget::PTrue => Activation::Sigmoid,
            PredictorTarget::Loss => Activation::Softplus,
        }
    }
}

/// Sizes and fusion settings shared by every modality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOptions {
    pub encoder_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub predictor_hidden: Vec<usize>,
    /// Dropout rate on encoder layers in training mode.
    pub dropout: f64,
    pub strategy: FusionStrategy,
    pub predictor_target: PredictorTarget,
    pub uncertainty: UncertaintyMeasure,
    /// Stop gradients at the fusion weights.
    pub detach_weights: bool,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            encoder_hidden: vec![64, 32],
            head_hidden: Vec::new(),
            predictor_hidden: vec![16],
            dropout: 0.1,
            strategy: FusionStrategy::Ccb,
            predictor_target: PredictorTarget::PTrue,
            uncertainty: UncertaintyMeasure::default(),
            detach_weights: false,
        }
    }
}

impl ModelOptions {
    pub fn validate(&self) -> Result<()> {
        for (name, sizes) in [
            ("model.encoder_hidden", &self.encoder_hidden),
            ("model.head_hidden", &self.head_hidden),
            ("model.predictor_hidden", &self.predictor_hidden),
        ] {
            if sizes.contains(&0) {
                return Err(Error::field(name, "layer sizes must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::field(
                "model.dropout",
                format!("{} not in [0, 1)", self.dropout),
            ));
        }
        self.uncertainty.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub modality_dims: Vec<usize>,
    pub classes: usize,
    #[serde(default)]
    pub options: ModelOptions,
}

impl ModelConfig {
    pub fn new(modality_dims: Vec<usize>, classes: usize, options: ModelOptions) -> Self {
        Self {
            modality_dims,
            classes,
            options,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.modality_dims.len() < 2 {
            return Err(Error::field(
                "modality_dims",
                format!(
                    "need at least 2 modalities, got {}",
                    self.modality_dims.len()
                ),
            ));
        }
        if self.modality_dims.contains(&0) {
            return Err(Error::field(
                "modality_dims",
                "feature dims must be positive",
            ));
        }
        if self.classes < 2 {
            return Err(Error::field(
                "classes",
                format!("need at least 2, got {}", self.classes),
            ));
        }
        self.options.validate()
    }

    fn hidden_dim(&self, m: usize) -> usize {
        self.options
            .encoder_hidden
            .last()
            .copied()
            .unwrap_or(self.modality_dims[m])
    }
}

/// Encoder, classifier head and confidence predictor of one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityNets {
    pub encoder: MlpNetwork,
    pub head: MlpNetwork,
    pub predictor: MlpNetwork,
}

impl ModalityNets {
    fn networks(&self) -> [&MlpNetwork; 3] {
        [&self.encoder, &self.head, &self.predictor]
    }

    fn networks_mut(&mut self) -> [&mut MlpNetwork; 3] {
        [&mut self.encoder, &mut self.head, &mut self.predictor]
    }
}

/// Everything produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardResult {
    /// Per-modality logits `[n × C]`.
    pub logits: Vec<Matrix>,
    /// Raw predictor outputs per modality and sample.
    pub predictor_output: Vec<Vec<f64>>,
    /// Predicted true-class probability per modality and sample (before clamping).
    pub p_hat: Vec<Vec<f64>>,
    /// `Σₘ ωᵐ zᵐ` per sample, `[n × C]`.
    pub fused: Matrix,
    samples: Vec<SampleFusion>,
}

impl ForwardResult {
    pub fn len(&self) -> usize {
        self.fused.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.fused.rows() == 0
    }

    pub fn breakdown(&self, sample: usize) -> &FusionBreakdown {
        self.samples[sample].breakdown()
    }

    pub fn breakdowns(&self) -> impl Iterator<Item = &FusionBreakdown> {
        self.samples.iter().map(SampleFusion::breakdown)
    }

    /// Fusion weights `[n × |M|]`.
    pub fn weights(&self) -> Matrix {
        let m = self.logits.len();
        let mut out = Matrix::zeros(self.len(), m);
        for (i, s) in self.samples.iter().enumerate() {
            out.row_mut(i).copy_from_slice(s.weights());
        }
        out
    }

    /// Argmax of the fused logits, ties toward the lowest class.
    pub fn predictions(&self) -> Vec<usize> {
        (0..self.len()).map(|i| argmax(self.fused.row(i))).collect()
    }

    pub fn modality_predictions(&self, m: usize) -> Vec<usize> {
        (0..self.len())
            .map(|i| argmax(self.logits[m].row(i)))
            .collect()
    }

    /// True-label cross-entropy `−ln softmax(zᵐ)_y` per sample and modality, `[n × |M|]`.
    pub fn true_losses(&self, labels: &[usize]) -> Result<Matrix> {
        let m = self.logits.len();
        let mut out = Matrix::zeros(self.len(), m);
        if labels.len() != self.len() {
            return Err(Error::dims("true_losses labels", self.len(), labels.len()));
        }
        for (k, z) in self.logits.iter().enumerate() {
            for (i, &y) in labels.iter().enumerate() {
                if y >= z.cols() {
                    return Err(Error::LabelOutOfRange {
                        label: y,
                        classes: z.cols(),
                    });
                }
                out.set(i, k, -log_softmax(z.row(i))[y]);
            }
        }
        Ok(out)
    }
}

/// Components of the training objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub fused_ce: f64,
    pub unimodal_ce: Vec<f64>,
    /// Predictor MSE of each modality.
    pub predictor_mse: Vec<f64>,
    /// `Σₘ predictor_mse`.
    pub predictor_loss: f64,
    pub total: f64,
}

/// Gradients for every network, in [`PdfModel::parameter_groups`] order.
#[derive(Debug, Clone)]
pub struct ModelGradients {
    pub groups: Vec<NetGradients>,
}

impl ModelGradients {
    pub fn flatten(&self) -> Vec<f64> {
        self.groups.iter().flat_map(NetGradients::flatten).collect()
    }
}

/// Softmax probability of the labelled class for every row.
pub fn p_true_target(logits: &Matrix, labels: &[usize]) -> Result<Vec<f64>> {
    if logits.rows() != labels.len() {
        return Err(Error::dims(
            "p_true_target labels",
            logits.rows(),
            labels.len(),
        ));
    }
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            if y >= logits.cols() {
                return Err(Error::LabelOutOfRange {
                    label: y,
                    classes: logits.cols(),
                });
            }
            Ok(log_softmax(logits.row(i))[y].exp())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdfModel {
    config: ModelConfig,
    modalities: Vec<ModalityNets>,
}

impl PdfModel {
    /// Randomly initialized model.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let opts = &config.options;
        let modalities = (0..config.modality_dims.len())
            .map(|m| {
                let hidden = config.hidden_dim(m);
                let enc_dims: Vec<usize> = std::iter::once(config.modality_dims[m])
                    .chain(opts.encoder_hidden.iter().copied())
                    .collect();
                let head_dims: Vec<usize> = std::iter::once(hidden)
                    .chain(opts.head_hidden.iter().copied())
                    .chain(std::iter::once(config.classes))
                    .collect();
                let pred_dims: Vec<usize> = std::iter::once(hidden)
                    .chain(opts.predictor_hidden.iter().copied())
                    .chain(std::iter::once(1))
                    .collect();
                ModalityNets {
                    encoder: MlpNetwork::random(&enc_dims, Activation::Relu, rng),
                    head: MlpNetwork::random(&head_dims, Activation::Identity, rng),
                    predictor: MlpNetwork::random(
                        &pred_dims,
                        opts.predictor_target.output_activation(),
                        rng,
                    ),
                }
            })
            .collect();
        Ok(Self { config, modalities })
    }

    /// Assembles a model from given networks, checking every dimension.
    pub fn from_parts(config: ModelConfig, modalities: Vec<ModalityNets>) -> Result<Self> {
        config.validate()?;
        if modalities.len() != config.modality_dims.len() {
            return Err(Error::dims(
                "model modalities",
                config.modality_dims.len(),
                modalities.len(),
            ));
        }
        let out_act = config.options.predictor_target.output_activation();
        for (m, nets) in modalities.iter().enumerate() {
            let input = config.modality_dims[m];
            let hidden = nets.encoder.out_dim().unwrap_or(input);
            let check = |what: &str, expected: usize, actual: Option<usize>| -> Result<()> {
                match actual {
                    Some(a) if a != expected => {
                        Err(Error::dims(format!("modality {m} {what}"), expected, a))
                    }
                    None if what != "encoder input" => Err(Error::field(
                        format!("modality {m} {what}"),
                        "network has no layers",
                    )),
                    _ => Ok(()),
                }
            };
            check("encoder input", input, nets.encoder.in_dim())?;
            check("head input", hidden, nets.head.in_dim())?;
            check("head output", config.classes, nets.head.out_dim())?;
            check("predictor input", hidden, nets.predictor.in_dim())?;
            check("predictor output", 1, nets.predictor.out_dim())?;
            let last = nets.predictor.layers().last().map(|l| l.activation);
            if last != Some(out_act) {
                return Err(Error::field(
                    format!("modality {m} predictor"),
                    format!(
                        "output activation must be {out_act:?} for target {}",
                        config.options.predictor_target.as_str()
                    ),
                ));
            }
        }
        Ok(Self { config, modalities })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn modalities(&self) -> &[ModalityNets] {
        &self.modalities
    }

    pub fn modality_count(&self) -> usize {
        self.modalities.len()
    }

    pub fn classes(&self) -> usize {
        self.config.classes
    }

    pub fn strategy(&self) -> FusionStrategy {
        self.config.options.strategy
    }

    /// Switches the fusion strategy without touching any parameters.
    pub fn set_strategy(&mut self, strategy: FusionStrategy) {
        self.config.options.strategy = strategy;
    }

    pub fn set_uncertainty(&mut self, measure: UncertaintyMeasure) -> Result<()> {
        measure.validate()?;
        self.config.options.uncertainty = measure;
        Ok(())
    }

    /// Networks in optimizer order: encoder, head, predictor per modality.
    pub fn parameter_groups(&self) -> Vec<&MlpNetwork> {
        self.modalities
            .iter()
            .flat_map(ModalityNets::networks)
            .collect()
    }

    fn parameter_groups_mut(&mut self) -> Vec<&mut MlpNetwork> {
        self.modalities
            .iter_mut()
            .flat_map(ModalityNets::networks_mut)
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.parameter_groups()
            .iter()
            .map(|n| n.param_count())
            .sum()
    }

    fn check_batch(&self, batch: &MultimodalBatch) -> Result<()> {
        if batch.modalities() != self.modality_count() {
            return Err(Error::dims(
                "batch modalities",
                self.modality_count(),
                batch.modalities(),
            ));
        }
        for (m, (&want, got)) in self
            .config
            .modality_dims
            .iter()
            .zip(batch.dims())
            .enumerate()
        {
            if want != got {
                return Err(Error::dims(format!("modality {m} feature dim"), want, got));
            }
        }
        if batch.classes() > self.classes() {
            return Err(Error::dims(
                "batch classes",
                self.classes(),
                batch.classes(),
            ));
        }
        Ok(())
    }

    /// Forward pass that caches activations for [`PdfModel::backward`].
    /// Passing an RNG selects training mode (encoder dropout on).
    pub fn forward_full(
        &mut self,
        batch: &MultimodalBatch,
        train_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardResult> {
        let (logits, outputs) = self.run_networks(batch, train_rng)?;
        self.assemble(logits, outputs)
    }

    fn run_networks(
        &mut self,
        batch: &MultimodalBatch,
        mut train_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Vec<Matrix>, Vec<Vec<f64>>)> {
        self.check_batch(batch)?;
        let rate = self.config.options.dropout;
        let mut logits = Vec::with_capacity(self.modality_count());
        let mut outputs = Vec::with_capacity(self.modality_count());
        for (m, nets) in self.modalities.iter_mut().enumerate() {
            let x = batch.modality(m);
            let h = match train_rng.as_deref_mut() {
                Some(rng) => nets
                    .encoder
                    .forward_with_dropout(x, Dropout { rate, rng })?,
                None => nets.encoder.forward(x)?,
            };
            logits.push(nets.head.forward(&h)?);
            outputs.push(nets.predictor.forward(&h)?.into_vec());
        }
        Ok((logits, outputs))
    }

    /// Inference without dropout or cached state; safe to share across threads.
    pub fn evaluate(&self, batch: &MultimodalBatch) -> Result<ForwardResult> {
        self.check_batch(batch)?;
        let mut logits = Vec::with_capacity(self.modality_count());
        let mut outputs = Vec::with_capacity(self.modality_count());
        for (m, nets) in self.modalities.iter().enumerate() {
            let h = nets.encoder.infer(batch.modality(m))?;
            logits.push(nets.head.infer(&h)?);
            outputs.push(nets.predictor.infer(&h)?.into_vec());
        }
        self.assemble(logits, outputs)
    }

    /// Fused class decisions (ties toward the lowest index) and the full result.
    pub fn predict(&self, batch: &MultimodalBatch) -> Result<(Vec<usize>, ForwardResult)> {
        let result = self.evaluate(batch)?;
        Ok((result.predictions(), result))
    }

    fn assemble(
        &self,
        logits: Vec<Matrix>,
        predictor_output: Vec<Vec<f64>>,
    ) -> Result<ForwardResult> {
        let opts = &self.config.options;
        let n = logits[0].rows();
        let m = logits.len();
        let c = self.classes();
        let p_hat: Vec<Vec<f64>> = predictor_output
            .iter()
            .map(|q| match opts.predictor_target {
                PredictorTarget::PTrue => q.clone(),
                PredictorTarget::Loss => q.iter().map(|v| (-v).exp()).collect(),
            })
            .collect();
        let mut fused = Matrix::zeros(n, c);
        let mut samples = Vec::with_capacity(n);
        let mut p = vec![0.0; m];
        for i in 0..n {
            for k in 0..m {
                p[k] = p_hat[k][i];
            }
            let rows: Vec<&[f64]> = logits.iter().map(|z| z.row(i)).collect();
            let fusion = SampleFusion::forward(&p, &rows, opts.strategy, opts.uncertainty)?;
            let out = fused.row_mut(i);
            for (w, z) in fusion.weights().iter().zip(&rows) {
                for (o, v) in out.iter_mut().zip(z.iter()) {
                    *o += w * v;
                }
            }
            samples.push(fusion);
        }
        Ok(ForwardResult {
            logits,
            predictor_output,
            p_hat,
            fused,
            samples,
        })
    }

    fn predictor_targets(&self, result: &ForwardResult, labels: &[usize]) -> Result<Vec<Vec<f64>>> {
        result
            .logits
            .iter()
            .map(|z| {
                let t = p_true_target(z, labels)?;
                Ok(match self.config.options.predictor_target {
                    PredictorTarget::PTrue => t,
                    PredictorTarget::Loss => t.into_iter().map(|v| -clamp_p_hat(v).ln()).collect(),
                })
            })
            .collect()
    }

    pub fn compute_loss(
        &self,
        batch: &MultimodalBatch,
        result: &ForwardResult,
    ) -> Result<LossReport> {
        let labels = batch.labels();
        if result.len() != labels.len() {
            return Err(Error::dims(
                "compute_loss samples",
                result.len(),
                labels.len(),
            ));
        }
        if labels.is_empty() {
            return Err(Error::Empty("compute_loss batch"));
        }
        let fused_ce = mean_ce(&result.fused, labels)?;
        let unimodal_ce = result
            .logits
            .iter()
            .map(|z| mean_ce(z, labels))
            .collect::<Result<Vec<_>>>()?;
        let targets = self.predictor_targets(result, labels)?;
        let predictor_mse: Vec<f64> = result
            .predictor_output
            .iter()
            .zip(&targets)
            .map(|(q, t)| {
                q.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / q.len() as f64
            })
            .collect();
        let predictor_loss: f64 = predictor_mse.iter().sum();
        let total = fused_ce + unimodal_ce.iter().sum::<f64>() + predictor_loss;
        Ok(LossReport {
            fused_ce,
            unimodal_ce,
            predictor_mse,
            predictor_loss,
            total,
        })
    }

    /// Gradients of the total loss. `result` must come from the latest
    /// [`PdfModel::forward_full`] on the same batch.
    pub fn backward(
        &self,
        batch: &MultimodalBatch,
        result: &ForwardResult,
    ) -> Result<ModelGradients> {
        let labels = batch.labels();
        let n = labels.len();
        if result.len() != n {
            return Err(Error::dims("backward samples", result.len(), n));
        }
        let opts = &self.config.options;
        let m = self.modality_count();
        let c = self.classes();
        let inv_n = 1.0 / n as f64;
        let targets = self.predictor_targets(result, labels)?;

        let mut grad_z: Vec<Matrix> = (0..m).map(|_| Matrix::zeros(n, c)).collect();
        let mut grad_q: Vec<Vec<f64>> = vec![vec![0.0; n]; m];

        for i in 0..n {
            let y = labels[i];
            let fusion = &result.samples[i];
            let mut d_fused = softmax_unchecked(result.fused.row(i));
            d_fused[y] -= 1.0;
            d_fused.iter_mut().for_each(|g| *g *= inv_n);

            let mut d_weight = vec![0.0; m];
            for k in 0..m {
                let z = result.logits[k].row(i);
                let w = fusion.weights()[k];
                d_weight[k] = d_fused.iter().zip(z).map(|(a, b)| a * b).sum();
                for (g, d) in grad_z[k].row_mut(i).iter_mut().zip(&d_fused) {
                    *g += w * d;
                }
            }
            if !opts.detach_weights {
                let (d_p, d_z) = fusion.backward(&d_weight);
                for k in 0..m {
                    grad_q[k][i] += match opts.predictor_target {
                        PredictorTarget::PTrue => d_p[k],
                        PredictorTarget::Loss => -d_p[k] * result.p_hat[k][i],
                    };
                    for (g, d) in grad_z[k].row_mut(i).iter_mut().zip(&d_z[k]) {
                        *g += d;
                    }
                }
            }

            for k in 0..m {
                let z = result.logits[k].row(i);
                let probs = softmax_unchecked(z);
                // unimodal cross-entropy
                for (j, g) in grad_z[k].row_mut(i).iter_mut().enumerate() {
                    *g += inv_n * (probs[j] - if j == y { 1.0 } else { 0.0 });
                }
                // predictor regression, differentiated on both sides
                let resid = result.predictor_output[k][i] - targets[k][i];
                grad_q[k][i] += 2.0 * resid * inv_n;
                let d_target = -2.0 * resid * inv_n;
                let d_ptrue = match opts.predictor_target {
                    PredictorTarget::PTrue => d_target,
                    PredictorTarget::Loss => {
                        let p = probs[y];
                        if p > P_HAT_MIN && p < 1.0 - P_HAT_MIN {
                            -d_target / p
                        } else {
                            0.0
                        }
                    }
                };
                let py = probs[y];
                for (j, g) in grad_z[k].row_mut(i).iter_mut().enumerate() {
                    let dp = if j == y {
                        py * (1.0 - py)
                    } else {
                        -py * probs[j]
                    };
                    *g += d_ptrue * dp;
                }
            }
        }

        let mut groups = Vec::with_capacity(3 * m);
        for (k, nets) in self.modalities.iter().enumerate() {
            let head = nets.head.backward(&grad_z[k])?;
            let dq = Matrix::from_vec(n, 1, std::mem::take(&mut grad_q[k]))?;
            let pred = nets.predictor.backward(&dq)?;
            let mut dh = head.input.clone();
            dh.add_assign(&pred.input)?;
            let enc = nets.encoder.backward(&dh)?;
            groups.push(enc);
            groups.push(head);
            groups.push(pred);
        }
        Ok(ModelGradients { groups })
    }

    /// Forward (training mode when `train_rng` is given), loss, backward and
    /// one Adam step per parameter group.
    pub fn train_step(
        &mut self,
        batch: &MultimodalBatch,
        optimizer: &mut Optimizer,
        train_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<LossReport> {
        let (logits, outputs) = self.run_networks(batch, train_rng)?;
        let broken = (0..logits.len())
            .find(|&m| !logits[m].is_finite() || outputs[m].iter().any(|v| !v.is_finite()));
        if let Some(m) = broken {
            return Err(Error::NonFiniteLoss {
                epoch: optimizer.epoch,
                step: optimizer.steps as usize,
                detail: format!("modality {m} produced non-finite logits or confidences"),
            });
        }
        let result = self.assemble(logits, outputs)?;
        let report = self.compute_loss(batch, &result)?;
        if !report.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: optimizer.epoch,
                step: optimizer.steps as usize,
                detail: format!(
                    "fused_ce={} unimodal_ce={:?} predictor_mse={:?}",
                    report.fused_ce, report.unimodal_ce, report.predictor_mse
                ),
            });
        }
        let grads = self.backward(batch, &result)?;
        optimizer.apply(self, &grads)?;
        Ok(report)
    }
}

fn mean_ce(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= logits.cols() {
            return Err(Error::LabelOutOfRange {
                label: y,
                classes: logits.cols(),
            });
        }
        total -= log_softmax(logits.row(i))[y];
    }
    Ok(total / labels.len() as f64)
}

impl Parameterized for PdfModel {
    fn flat_params(&self) -> Vec<f64> {
        self.parameter_groups()
            .iter()
            .flat_map(|n| n.flat_params())
            .collect()
    }

    fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        let total = self.param_count();
        if params.len() != total {
            return Err(Error::dims("set_flat_params", total, params.len()));
        }
        let mut offset = 0;
        for net in self.parameter_groups_mut() {
            let len = net.param_count();
            net.set_flat_params(&params[offset..offset + len])?;
            offset += len;
        }
        Ok(())
    }
}

/// Adam states for every parameter group of a model.
#[derive(Debug, Clone)]
pub struct Optimizer {
    groups: Vec<AdamState>,
    group_lr: Vec<f64>,
    /// Multiplies every group's rate (for schedules).
    pub lr_scale: f64,
    /// Reported in non-finite-loss errors.
    pub epoch: usize,
    steps: u64,
}

impl Optimizer {
    /// `predictor_lr` overrides the rate of the confidence predictors.
    pub fn new(model: &PdfModel, adam: AdamConfig, predictor_lr: Option<f64>) -> Result<Self> {
        if let Some(lr) = predictor_lr {
            AdamConfig { lr, ..adam }.validate()?;
        }
        let mut groups = Vec::new();
        let mut group_lr = Vec::new();
        for (i, net) in model.parameter_groups().into_iter().enumerate() {
            groups.push(AdamState::new(&net.param_shapes(), adam)?);
            let is_predictor = i % 3 == 2;
            group_lr.push(if is_predictor {
                predictor_lr.unwrap_or(adam.lr)
            } else {
                adam.lr
            });
        }
        Ok(Self {
            groups,
            group_lr,
            lr_scale: 1.0,
            epoch: 0,
            steps: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn apply(&mut self, model: &mut PdfModel, grads: &ModelGradients) -> Result<()> {
        if grads.groups.len() != self.groups.len() {
            return Err(Error::dims(
                "optimizer groups",
                self.groups.len(),
                grads.groups.len(),
            ));
        }
        for (k, net) in model.parameter_groups_mut().into_iter().enumerate() {
            let g = grads.groups[k].slices();
            let mut params = net.param_slices_mut();
            adam_step_with_lr(
                &mut params,
                &g,
                &mut self.groups[k],
                self.group_lr[k] * self.lr_scale,
            )?;
        }
        self.steps += 1;
        Ok(())
    }
}
