//! Classifier built on the nested flow (embed → flow → project → softmax),
//! trained with exact reverse-mode gradients and Riemannian descent, on
//! synthetic datasets or CSV files.

use std::path::Path;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::es::{riemannian_project, srgd_step};
use crate::flows::{
    gradient_ratio_bounds, FlowConfig, GatedGenerator, Generator, GeneratorKind, IsoGenerator,
    Nonlinearity, ThetaDims, ThetaParams, WeightPath,
};
use crate::grad::{
    activation_gradients_on_path, gradient_ratio_profile, parameter_gradients_batch, BatchExample,
};
use crate::linalg;

/// Labeled feature vectors with a fixed class count.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Vec<DVector<f64>>,
    labels: Vec<usize>,
    class_count: usize,
}

impl Dataset {
    pub fn new(features: Vec<DVector<f64>>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Dataset("dataset is empty".into()));
        }
        if features.len() != labels.len() {
            return Err(Error::Dataset(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        let width = features[0].len();
        if width == 0 {
            return Err(Error::Dataset("feature vectors are empty".into()));
        }
        if let Some(row) = features.iter().position(|f| f.len() != width) {
            return Err(Error::Dataset(format!(
                "row {row} has {} features, expected {width}",
                features[row].len()
            )));
        }
        if class_count < 2 {
            return Err(Error::Dataset("need at least two classes".into()));
        }
        if let Some(row) = labels.iter().position(|&l| l >= class_count) {
            return Err(Error::Dataset(format!(
                "label {} at row {row} exceeds class count {class_count}",
                labels[row]
            )));
        }
        Ok(Dataset {
            features,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features[0].len()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn feature(&self, i: usize) -> &DVector<f64> {
        &self.features[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }
}

/// Synthetic dataset family: linearly separable Gaussian blobs or concentric
/// rings (not linearly separable).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    Blobs,
    Rings,
}

/// Two-class synthetic data in the plane. Blobs place unit-variance
/// Gaussians at ±4σ along a random direction, so each mean sits four
/// standard deviations from the separating midplane. Counts split evenly,
/// with any odd remainder going to class 0.
pub fn synth_dataset(kind: SynthKind, count: usize, seed: u64) -> Result<Dataset> {
    if count < 2 {
        return Err(Error::Dataset("need at least two points".into()));
    }
    let mut rng = linalg::rng_from_seed(seed);
    let class0 = count - count / 2;
    let mut features = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    match kind {
        SynthKind::Blobs => {
            let direction = linalg::random_unit_vector(2, &mut rng);
            for i in 0..count {
                let label = usize::from(i >= class0);
                let sign = if label == 0 { -1.0 } else { 1.0 };
                let center = sign * 4.0 * &direction;
                features.push(center + linalg::gaussian_vector(2, &mut rng));
                labels.push(label);
            }
        }
        SynthKind::Rings => {
            for i in 0..count {
                let label = usize::from(i >= class0);
                let radius = if label == 0 { 1.0 } else { 2.0 };
                let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let r = radius + 0.1 * rng.sample::<f64, _>(rand_distr::StandardNormal);
                features.push(DVector::from_vec(vec![r * angle.cos(), r * angle.sin()]));
                labels.push(label);
            }
        }
    }
    Dataset::new(features, labels, 2)
}

/// Loads `label,f0,f1,...` rows; the first line must be a header. Errors
/// carry 1-based line numbers.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| Error::Dataset(format!("cannot read {}: {e}", path.as_ref().display())))?;
    let mut lines = text.lines().enumerate();
    let header = lines
        .next()
        .ok_or_else(|| Error::Dataset("file is empty".into()))?;
    if !header.1.trim_start().starts_with("label") {
        return Err(Error::Dataset(format!(
            "line 1: header must start with 'label', got '{}'",
            header.1
        )));
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut cells = line.split(',');
        let label_cell = cells.next().unwrap_or("");
        let label: usize = label_cell.trim().parse().map_err(|_| {
            Error::Dataset(format!("line {line_no}: label '{label_cell}' is not an index"))
        })?;
        let mut row = Vec::new();
        for cell in cells {
            let value: f64 = cell.trim().parse().map_err(|_| {
                Error::Dataset(format!("line {line_no}: feature '{cell}' is not numeric"))
            })?;
            row.push(value);
        }
        if row.is_empty() {
            return Err(Error::Dataset(format!("line {line_no}: no feature columns")));
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::Dataset(format!(
                    "line {line_no}: {} features, expected {w}",
                    row.len()
                )));
            }
            _ => {}
        }
        features.push(DVector::from_vec(row));
        labels.push(label);
    }
    if features.is_empty() {
        return Err(Error::Dataset("no data rows".into()));
    }
    let class_count = labels.iter().copied().max().unwrap_or(0) + 1;
    Dataset::new(features, labels, class_count.max(2))
}

/// Training configuration. Width/step/epoch defaults follow the supervised
/// setup (width 128, step 0.01 on the unit horizon, 100 epochs); desk-scale
/// runs override them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupervisedConfig {
    pub hidden_dim: usize,
    pub depth_steps: usize,
    pub step: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub nonlinearity: Nonlinearity,
    pub generator: GeneratorKind,
    /// Gate count when `generator` is gated.
    pub gate_count: usize,
    pub seed: u64,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        SupervisedConfig {
            hidden_dim: 128,
            depth_steps: 100,
            step: 0.01,
            epochs: 100,
            learning_rate: 0.1,
            batch_size: 32,
            nonlinearity: Nonlinearity::Abs,
            generator: GeneratorKind::Iso,
            gate_count: 3,
            seed: 0,
        }
    }
}

impl SupervisedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0
            || self.depth_steps == 0
            || self.epochs == 0
            || self.batch_size == 0
            || self.gate_count == 0
        {
            return Err(Error::Config(
                "hidden_dim, depth_steps, epochs, batch_size and gate_count must be positive"
                    .into(),
            ));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::Config(format!("step must be positive, got {}", self.step)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if matches!(self.generator, GeneratorKind::TrigBaseline) {
            return Err(Error::Config(
                "gradient training supports iso and gated generators".into(),
            ));
        }
        Ok(())
    }

    pub fn flow_config(&self) -> FlowConfig {
        FlowConfig {
            depth_steps: self.depth_steps,
            horizon: self.depth_steps as f64 * self.step,
            step: self.step,
            nonlinearity: self.nonlinearity,
        }
    }
}

/// Classifier state: θ with the readout sized to the class count, plus the
/// (frozen) gate networks when the flow is gated.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub theta: ThetaParams,
    pub generator: Generator,
}

impl Classifier {
    pub fn init(feature_dim: usize, class_count: usize, cfg: &SupervisedConfig) -> Result<Self> {
        cfg.validate()?;
        if class_count > cfg.hidden_dim {
            return Err(Error::Config(format!(
                "class count {class_count} exceeds hidden width {}",
                cfg.hidden_dim
            )));
        }
        let dims = ThetaDims::new(feature_dim, cfg.hidden_dim, class_count);
        let theta = ThetaParams::random(dims, 1.0, 0.0, cfg.seed);
        let generator = match cfg.generator {
            GeneratorKind::Iso => {
                Generator::Iso(IsoGenerator::new(theta.q.clone(), theta.n_mat.clone())?)
            }
            GeneratorKind::Gated => Generator::Gated(GatedGenerator::random(
                cfg.hidden_dim,
                cfg.gate_count,
                cfg.seed.wrapping_add(1),
            )),
            GeneratorKind::TrigBaseline => unreachable!("rejected by validate"),
        };
        Ok(Classifier { theta, generator })
    }

    /// Generator view that tracks the current θ for iso flows.
    fn current_generator(&self) -> Result<Generator> {
        Ok(match &self.generator {
            Generator::Iso(_) => Generator::Iso(IsoGenerator::new(
                self.theta.q.clone(),
                self.theta.n_mat.clone(),
            )?),
            Generator::Gated(g) => Generator::Gated(g.clone()),
        })
    }

    pub fn weight_path(&self, flow: &FlowConfig) -> Result<WeightPath> {
        WeightPath::from_generator(&self.theta.w0, &self.current_generator()?, flow)
    }
}

/// Logits of one input under the given classifier parameters.
pub fn classify_forward(
    x: &DVector<f64>,
    classifier: &Classifier,
    flow: &FlowConfig,
) -> Result<DVector<f64>> {
    let path = classifier.weight_path(flow)?;
    logits_on_path(&path, &classifier.theta, x).map(|(logits, _, _)| logits)
}

fn logits_on_path(
    path: &WeightPath,
    theta: &ThetaParams,
    x: &DVector<f64>,
) -> Result<(DVector<f64>, Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    if x.len() != theta.dims().state_dim {
        return Err(Error::dimension(
            "classify_forward",
            format!("feature vector of dimension {}", theta.dims().state_dim),
            format!("{}", x.len()),
        ));
    }
    let x0 = theta.omega1.as_matrix() * x;
    let (xs, zs) = path.roll_states(&x0, Some(&theta.bias))?;
    let logits = theta.omega2.as_matrix() * &xs[path.depth()];
    Ok((logits, xs, zs))
}

/// Numerically stable softmax; the outputs sum to one.
pub fn softmax(logits: &DVector<f64>) -> DVector<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps = DVector::from_fn(logits.len(), |i, _| (logits[i] - max).exp());
    let total: f64 = exps.iter().sum();
    exps / total
}

/// One epoch record of a supervised run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    /// Smallest activation-gradient ratio seen over the epoch's batches.
    pub min_ratio: f64,
    /// Largest ratio seen over the epoch's batches.
    pub max_ratio: f64,
}

/// Supervised training history plus the ratio bounds the run was checked
/// against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisedHistory {
    pub epochs: Vec<EpochRecord>,
    pub ratio_lower_bound: f64,
    pub ratio_upper_bound: f64,
}

impl SupervisedHistory {
    pub fn final_accuracy(&self) -> f64 {
        self.epochs.last().map(|e| e.accuracy).unwrap_or(0.0)
    }

    pub fn final_loss(&self) -> f64 {
        self.epochs.last().map(|e| e.loss).unwrap_or(f64::NAN)
    }

    /// True when every epoch's ratio span stayed inside the bounds with the
    /// given slack.
    pub fn ratios_within_bounds(&self, slack: f64) -> bool {
        self.epochs.iter().all(|e| {
            e.min_ratio >= self.ratio_lower_bound - slack
                && e.max_ratio <= self.ratio_upper_bound + slack
        })
    }
}

/// Minimizes mean softmax cross-entropy by Riemannian gradient descent,
/// recording loss, accuracy and the activation-gradient ratio span per
/// epoch.
pub fn train_supervised(
    dataset: &Dataset,
    cfg: &SupervisedConfig,
) -> Result<(Classifier, SupervisedHistory)> {
    cfg.validate()?;
    let flow = cfg.flow_config();
    let mut classifier = Classifier::init(dataset.feature_dim(), dataset.class_count(), cfg)?;
    let (lower, upper) = gradient_ratio_bounds(cfg.depth_steps, cfg.step);
    let mut history = SupervisedHistory {
        epochs: Vec::with_capacity(cfg.epochs),
        ratio_lower_bound: lower,
        ratio_upper_bound: upper,
    };
    let mut shuffle_rng = linalg::rng_from_seed(cfg.seed.wrapping_add(2));
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut correct = 0usize;
        let mut min_ratio = f64::INFINITY;
        let mut max_ratio = f64::NEG_INFINITY;

        for batch in order.chunks(cfg.batch_size) {
            let path = classifier.weight_path(&flow)?;
            let batch_len = batch.len() as f64;

            let mut stored: Vec<(usize, Vec<DVector<f64>>, Vec<DVector<f64>>, DVector<f64>)> =
                Vec::with_capacity(batch.len());
            for &idx in batch {
                let (logits, xs, zs) = logits_on_path(&path, &classifier.theta, dataset.feature(idx))?;
                let probs = softmax(&logits);
                let label = dataset.label(idx);
                epoch_loss += -probs[label].max(f64::MIN_POSITIVE).ln();
                let predicted = probs
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).expect("probabilities are finite"))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                if predicted == label {
                    correct += 1;
                }
                let mut grad_action = probs;
                grad_action[label] -= 1.0;
                // mean reduction over the batch
                grad_action /= batch_len;
                stored.push((idx, xs, zs, grad_action));
            }

            // ratio span of this batch (scale-invariant, so the 1/batch
            // factor in the seeds is irrelevant)
            for (_, _, zs, grad_action) in &stored {
                let grad_final = classifier.theta.omega2.as_matrix().transpose() * grad_action;
                if grad_final.norm() == 0.0 {
                    continue;
                }
                let activations = activation_gradients_on_path(&path, zs, &grad_final)?;
                let ratios = gradient_ratio_profile(&activations)?;
                for r in ratios {
                    min_ratio = min_ratio.min(r);
                    max_ratio = max_ratio.max(r);
                }
            }

            let examples: Vec<BatchExample<'_>> = stored
                .iter()
                .map(|(idx, xs, zs, grad_action)| BatchExample {
                    input: dataset.feature(*idx),
                    xs,
                    zs,
                    grad_action,
                })
                .collect();
            let mut euclid = parameter_gradients_batch(&path, &classifier.theta, &examples)?;
            // descend: the update rule ascends along the projected gradient
            euclid.scale(-1.0);
            let rgrad = riemannian_project(&euclid, &classifier.theta)?;
            classifier.theta = srgd_step(&classifier.theta, &rgrad, cfg.learning_rate)?;
        }

        let loss = epoch_loss / dataset.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Training {
                iteration: epoch,
                reason: "non-finite training loss".into(),
            });
        }
        history.epochs.push(EpochRecord {
            epoch,
            loss,
            accuracy: correct as f64 / dataset.len() as f64,
            min_ratio,
            max_ratio,
        });
    }
    Ok((classifier, history))
}

/// Accuracy of the classifier over a dataset.
pub fn evaluate_accuracy(
    classifier: &Classifier,
    dataset: &Dataset,
    flow: &FlowConfig,
) -> Result<f64> {
    let path = classifier.weight_path(flow)?;
    let mut correct = 0usize;
    for i in 0..dataset.len() {
        let (logits, _, _) = logits_on_path(&path, &classifier.theta, dataset.feature(i))?;
        let predicted = logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("logits are finite"))
            .map(|(i, _)| i)
            .unwrap_or(0);
        if predicted == dataset.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

#[cfg(test)]
mod tests;
