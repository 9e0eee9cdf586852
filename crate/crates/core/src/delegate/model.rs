use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{dataset_hash, Delegate, HighLevelAction, LabeledFrame, Observation, FEATURE_COUNT};
use crate::autopilot::EgoView;

/// Version of the [`Observation`] layout; bump on any change to it.
pub const FEATURE_SPEC_VERSION: u32 = 1;

const CLASSES: usize = 3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("frame {0} has a non-finite feature")]
    NonFiniteFeature(usize),
    #[error("loss became non-finite ({loss}) at epoch {epoch} with lr {lr}; lower the learning rate")]
    Diverged { epoch: usize, loss: f64, lr: f64 },
    #[error("invalid hyperparameter {name}: {value}")]
    Hyper { name: &'static str, value: f64 },
    #[error("model feature_spec_version {found} does not match observation layout v{expected}")]
    FeatureSpec { expected: u32, found: u32 },
    #[error("model has non-finite parameters")]
    NonFiniteParams,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.5,
            epochs: 500,
            lambda: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
    pub lambda: f64,
    pub class_weights: [f64; CLASSES],
    pub target_brand: String,
    pub dataset_hash: String,
}

/// Multinomial logistic delegate: `softmax(W x + b)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DelegateModel {
    pub feature_spec_version: u32,
    pub weights: [[f64; FEATURE_COUNT]; CLASSES],
    pub bias: [f64; CLASSES],
    pub training_meta: TrainingMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: DelegateModel,
    pub final_loss: f64,
    /// Loss before each epoch's update, followed by the final loss.
    pub loss_history: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Gradient of the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Gradient {
    pub weights: [[f64; FEATURE_COUNT]; CLASSES],
    pub bias: [f64; CLASSES],
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64; CLASSES]) -> [f64; CLASSES] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; CLASSES];
    let mut sum = 0.0;
    for (o, z) in out.iter_mut().zip(logits) {
        *o = libm::exp(z - max);
        sum += *o;
    }
    for o in &mut out {
        *o /= sum;
    }
    out
}

fn logits(weights: &[[f64; FEATURE_COUNT]; CLASSES], bias: &[f64; CLASSES], x: &Observation) -> [f64; CLASSES] {
    let mut z = *bias;
    for (zc, row) in z.iter_mut().zip(weights) {
        for (w, xi) in row.iter().zip(&x.0) {
            *zc += w * xi;
        }
    }
    z
}

/// `N / (3 N_c)` per class, zero for classes absent from the data.
pub fn class_weights(frames: &[LabeledFrame]) -> [f64; CLASSES] {
    let mut counts = [0usize; CLASSES];
    for f in frames {
        counts[f.label.index()] += 1;
    }
    let n = frames.len() as f64;
    let mut w = [0.0; CLASSES];
    for (wc, &c) in w.iter_mut().zip(&counts) {
        if c > 0 {
            *wc = n / (CLASSES as f64 * c as f64);
        }
    }
    w
}

/// Class-weighted cross-entropy with L2 on the weights (not the bias), and
/// its gradient. Summation order is the frame order.
pub fn weighted_objective(
    weights: &[[f64; FEATURE_COUNT]; CLASSES],
    bias: &[f64; CLASSES],
    frames: &[LabeledFrame],
    class_weights: &[f64; CLASSES],
    lambda: f64,
) -> (f64, Gradient) {
    let n = frames.len() as f64;
    let mut grad = Gradient::default();
    let mut data_loss = 0.0;
    for f in frames {
        let z = logits(weights, bias, &f.obs);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for zc in &z {
            sum += libm::exp(zc - max);
        }
        let y = f.label.index();
        let wy = class_weights[y];
        let log_py = z[y] - max - libm::log(sum);
        data_loss -= wy * log_py;
        for c in 0..CLASSES {
            let p = libm::exp(z[c] - max) / sum;
            let dz = wy * (p - if c == y { 1.0 } else { 0.0 }) / n;
            grad.bias[c] += dz;
            for (g, xi) in grad.weights[c].iter_mut().zip(&f.obs.0) {
                *g += dz * xi;
            }
        }
    }
    let mut reg = 0.0;
    for c in 0..CLASSES {
        for j in 0..FEATURE_COUNT {
            let w = weights[c][j];
            reg += w * w;
            grad.weights[c][j] += lambda * w;
        }
    }
    (data_loss / n + 0.5 * lambda * reg, grad)
}

/// Full-batch gradient descent from zero on the weighted objective.
pub fn train_delegate(frames: &[LabeledFrame], cfg: &TrainConfig, target_brand: &str) -> Result<TrainOutcome, ModelError> {
    if frames.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    for (name, value) in [("lr", cfg.lr), ("lambda", cfg.lambda)] {
        if !(value.is_finite() && value >= 0.0) {
            return Err(ModelError::Hyper { name, value });
        }
    }
    if let Some(i) = frames.iter().position(|f| !f.obs.is_finite()) {
        return Err(ModelError::NonFiniteFeature(i));
    }

    let cw = class_weights(frames);
    let mut warnings = Vec::new();
    if frames.iter().all(|f| f.label == HighLevelAction::KeepLane) {
        warnings.push(String::from(
            "dataset has no lane-change examples; the model will only ever predict KeepLane",
        ));
    }

    let mut weights = [[0.0; FEATURE_COUNT]; CLASSES];
    let mut bias = [0.0; CLASSES];
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..cfg.epochs {
        let (loss, grad) = weighted_objective(&weights, &bias, frames, &cw, cfg.lambda);
        if !loss.is_finite() {
            return Err(ModelError::Diverged { epoch, loss, lr: cfg.lr });
        }
        history.push(loss);
        for c in 0..CLASSES {
            bias[c] -= cfg.lr * grad.bias[c];
            for j in 0..FEATURE_COUNT {
                weights[c][j] -= cfg.lr * grad.weights[c][j];
            }
        }
    }
    let (final_loss, _) = weighted_objective(&weights, &bias, frames, &cw, cfg.lambda);
    if !final_loss.is_finite() {
        return Err(ModelError::Diverged {
            epoch: cfg.epochs,
            loss: final_loss,
            lr: cfg.lr,
        });
    }
    history.push(final_loss);
    if history.windows(2).any(|w| w[1] > w[0] + 1e-12) {
        warnings.push(format!("training loss increased at some epoch with lr {}", cfg.lr));
    }

    let model = DelegateModel {
        feature_spec_version: FEATURE_SPEC_VERSION,
        weights,
        bias,
        training_meta: TrainingMeta {
            seed: cfg.seed,
            epochs: cfg.epochs,
            lr: cfg.lr,
            lambda: cfg.lambda,
            class_weights: cw,
            target_brand: String::from(target_brand),
            dataset_hash: dataset_hash(frames),
        },
    };
    Ok(TrainOutcome {
        model,
        final_loss,
        loss_history: history,
        warnings,
    })
}

fn argmax(probs: &[f64; CLASSES]) -> HighLevelAction {
    let mut best = 0;
    for c in 1..CLASSES {
        if probs[c] > probs[best] {
            best = c;
        }
    }
    HighLevelAction::ALL[best]
}

impl DelegateModel {
    /// A model with all parameters zero.
    pub fn zeros(target_brand: &str) -> Self {
        DelegateModel {
            feature_spec_version: FEATURE_SPEC_VERSION,
            weights: [[0.0; FEATURE_COUNT]; CLASSES],
            bias: [0.0; CLASSES],
            training_meta: TrainingMeta {
                seed: 0,
                epochs: 0,
                lr: 0.0,
                lambda: 0.0,
                class_weights: [0.0; CLASSES],
                target_brand: String::from(target_brand),
                dataset_hash: String::new(),
            },
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.feature_spec_version != FEATURE_SPEC_VERSION {
            return Err(ModelError::FeatureSpec {
                expected: FEATURE_SPEC_VERSION,
                found: self.feature_spec_version,
            });
        }
        let finite = self.weights.iter().flatten().chain(&self.bias).all(|x| x.is_finite());
        if !finite {
            return Err(ModelError::NonFiniteParams);
        }
        Ok(())
    }

    /// Class probabilities and the argmax action (ties go to the lower class).
    pub fn infer(&self, obs: &Observation) -> Result<([f64; CLASSES], HighLevelAction), ModelError> {
        if self.feature_spec_version != FEATURE_SPEC_VERSION {
            return Err(ModelError::FeatureSpec {
                expected: FEATURE_SPEC_VERSION,
                found: self.feature_spec_version,
            });
        }
        let probs = softmax(&logits(&self.weights, &self.bias, obs));
        Ok((probs, argmax(&probs)))
    }
}

/// A validated [`DelegateModel`] usable as a [`Delegate`].
#[derive(Debug, Clone)]
pub struct LearnedDelegate {
    model: DelegateModel,
}

impl LearnedDelegate {
    pub fn new(model: DelegateModel) -> Result<Self, ModelError> {
        model.validate()?;
        Ok(LearnedDelegate { model })
    }

    pub fn model(&self) -> &DelegateModel {
        &self.model
    }
}

impl Delegate for LearnedDelegate {
    fn predict(&self, view: &EgoView) -> HighLevelAction {
        let probs = softmax(&logits(&self.model.weights, &self.model.bias, &Observation::from_view(view)));
        argmax(&probs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(x: [f64; FEATURE_COUNT], label: HighLevelAction) -> LabeledFrame {
        LabeledFrame {
            obs: Observation(x),
            label,
            t: 0.0,
            rollout_id: 0,
        }
    }

    #[test]
    fn zero_model_is_uniform_and_keeps_lane() {
        let m = DelegateModel::zeros("x");
        let (p, a) = m.infer(&Observation([0.3, 1.0, -0.2, 0.5, 0.1, 1.0, 0.0])).unwrap();
        assert_eq!(p, [1.0 / 3.0; 3]);
        assert_eq!(a, HighLevelAction::KeepLane);
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let mut m = DelegateModel::zeros("x");
        m.feature_spec_version = 99;
        assert!(matches!(m.infer(&Observation([0.0; 7])), Err(ModelError::FeatureSpec { found: 99, .. })));
        assert!(LearnedDelegate::new(m).is_err());
    }

    #[test]
    fn class_weights_balance_counts() {
        let mut frames = alloc::vec![frame([0.0; 7], HighLevelAction::KeepLane); 8];
        frames.push(frame([0.0; 7], HighLevelAction::ChangeLeft));
        frames.push(frame([0.0; 7], HighLevelAction::ChangeLeft));
        let w = class_weights(&frames);
        assert_eq!(w, [10.0 / 24.0, 10.0 / 6.0, 0.0]);
    }

    #[test]
    fn empty_and_nonfinite_inputs_fail() {
        assert_eq!(train_delegate(&[], &TrainConfig::default(), "x"), Err(ModelError::EmptyDataset));
        let bad = [frame([f64::NAN; 7], HighLevelAction::KeepLane)];
        assert_eq!(train_delegate(&bad, &TrainConfig::default(), "x"), Err(ModelError::NonFiniteFeature(0)));
    }

    #[test]
    fn huge_learning_rate_diverges_with_diagnostics() {
        let frames = [
            frame([1e200, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], HighLevelAction::KeepLane),
            frame([-1e200, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], HighLevelAction::ChangeLeft),
        ];
        let cfg = TrainConfig {
            lr: 1e200,
            epochs: 5,
            ..Default::default()
        };
        assert!(matches!(train_delegate(&frames, &cfg, "x"), Err(ModelError::Diverged { .. })));
    }

    #[test]
    fn keep_only_dataset_warns() {
        let frames = [frame([0.1; 7], HighLevelAction::KeepLane)];
        let cfg = TrainConfig {
            epochs: 3,
            ..Default::default()
        };
        let out = train_delegate(&frames, &cfg, "x").unwrap();
        assert!(!out.warnings.is_empty());
        assert_eq!(out.loss_history.len(), 4);
    }
}
