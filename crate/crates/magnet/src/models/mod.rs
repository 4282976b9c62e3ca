//! Target classifiers and defensive autoencoders: architectures, training,
//! inference and the gradient contract the attack suite consumes.

mod archive;
#[cfg(test)]
mod tests;

pub use archive::{load_autoencoder, load_classifier, save_autoencoder, save_classifier};

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Array4, Axis};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::data::{augment, AugmentPolicy, DatasetSplits, ExampleBatch};
use crate::error::{Error, Result};
use crate::nn::{
    fan_in_uniform, mse_loss_and_grad, softmax_ce_mean, softmax_rows, Activation, Conv2d, Dense,
    GradWants, Layer, Network, Optimizer, OptimizerKind, Shape,
};

/// Supported target-classifier architectures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierArch {
    Mnist,
    Cifar10,
}

impl ClassifierArch {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(ClassifierArch::Mnist),
            "cifar10" => Ok(ClassifierArch::Cifar10),
            other => Err(Error::Config(format!("unknown classifier architecture `{other}`"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassifierArch::Mnist => "mnist",
            ClassifierArch::Cifar10 => "cifar10",
        }
    }

    pub fn input_shape(self) -> Shape {
        match self {
            ClassifierArch::Mnist => (28, 28, 1),
            ClassifierArch::Cifar10 => (32, 32, 3),
        }
    }
}

/// Supported autoencoder architectures.
///
/// `MnistI` (also the MNIST reformer) is the pooling/upsampling stack,
/// `MnistII` and `Cifar` are plain three-convolution stacks, and the
/// `Diverse*` variants are the small ReLU autoencoders used for
/// diversity-trained ensembles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoencoderArch {
    MnistI,
    MnistII,
    Cifar,
    DiverseMnist,
    DiverseCifar,
}

impl AutoencoderArch {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mnist_i" => Ok(AutoencoderArch::MnistI),
            "mnist_ii" => Ok(AutoencoderArch::MnistII),
            "cifar" => Ok(AutoencoderArch::Cifar),
            "diverse_mnist" => Ok(AutoencoderArch::DiverseMnist),
            "diverse_cifar" => Ok(AutoencoderArch::DiverseCifar),
            other => Err(Error::Config(format!("unknown autoencoder architecture `{other}`"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AutoencoderArch::MnistI => "mnist_i",
            AutoencoderArch::MnistII => "mnist_ii",
            AutoencoderArch::Cifar => "cifar",
            AutoencoderArch::DiverseMnist => "diverse_mnist",
            AutoencoderArch::DiverseCifar => "diverse_cifar",
        }
    }

    pub fn input_shape(self) -> Shape {
        match self {
            AutoencoderArch::MnistI | AutoencoderArch::MnistII | AutoencoderArch::DiverseMnist => {
                (28, 28, 1)
            }
            AutoencoderArch::Cifar | AutoencoderArch::DiverseCifar => (32, 32, 3),
        }
    }
}

/// Optimizer selection for [`TrainingConfig`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerId {
    Sgd,
    Adam,
}

/// Hyper-parameters of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub optimizer: OptimizerId,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// SGD momentum; 0 disables it.
    #[serde(default)]
    pub momentum: f64,
    /// L2 weight-decay coefficient.
    #[serde(default)]
    pub l2: f64,
    #[serde(default)]
    pub augment: AugmentPolicy,
    pub seed: u64,
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        Ok(())
    }

    fn optimizer_kind(&self) -> OptimizerKind {
        match self.optimizer {
            OptimizerId::Sgd => OptimizerKind::Sgd { momentum: self.momentum },
            OptimizerId::Adam => OptimizerKind::adam_default(),
        }
    }
}

/// One row of the per-epoch training log.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// Validation accuracy for classifiers, validation MSE for autoencoders.
    pub val_metric: f64,
}

/// Provenance and training history stored alongside the weights.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ModelMeta {
    pub seed: u64,
    pub training: Option<TrainingConfig>,
    pub epochs_trained: usize,
    #[serde(default)]
    pub history: Vec<EpochStats>,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
}

/// A (possibly trained) softmax classifier exposing pre-softmax logits.
#[derive(Clone, Debug)]
pub struct Classifier {
    pub arch: String,
    pub net: Network<f32>,
    pub num_classes: usize,
    pub meta: ModelMeta,
}

/// A (possibly trained) autoencoder mapping images to `[0, 1]` images of the
/// same shape.
#[derive(Clone, Debug)]
pub struct Autoencoder {
    pub arch: String,
    pub net: Network<f32>,
    pub meta: ModelMeta,
}

fn conv3(cin: usize, cout: usize, act: Activation, rng: &mut StdRng) -> Layer<f32> {
    let fan_in = 9 * cin;
    let (weight, bias) = fan_in_uniform(fan_in, cout, fan_in, rng);
    Layer::Conv(Conv2d { weight, bias, kernel: 3, cin, cout, act })
}

fn conv1(cin: usize, cout: usize, act: Activation, rng: &mut StdRng) -> Layer<f32> {
    let (weight, bias) = fan_in_uniform(cin, cout, cin, rng);
    Layer::Conv(Conv2d { weight, bias, kernel: 1, cin, cout, act })
}

fn dense(cin: usize, cout: usize, act: Activation, rng: &mut StdRng) -> Layer<f32> {
    let (weight, bias) = fan_in_uniform(cin, cout, cin, rng);
    Layer::Dense(Dense { weight, bias, act })
}

/// Builds an untrained classifier with seeded fan-in-scaled initialization.
pub fn build_classifier(arch: ClassifierArch, seed: u64) -> Classifier {
    use Activation::{Linear, Relu};
    let mut rng = StdRng::seed_from_u64(seed);
    let layers = match arch {
        ClassifierArch::Mnist => vec![
            conv3(1, 32, Relu, &mut rng),
            conv3(32, 32, Relu, &mut rng),
            Layer::MaxPool2,
            conv3(32, 64, Relu, &mut rng),
            conv3(64, 64, Relu, &mut rng),
            Layer::MaxPool2,
            Layer::Flatten,
            dense(7 * 7 * 64, 200, Relu, &mut rng),
            dense(200, 200, Relu, &mut rng),
            dense(200, 10, Linear, &mut rng),
        ],
        ClassifierArch::Cifar10 => vec![
            conv3(3, 96, Relu, &mut rng),
            conv3(96, 96, Relu, &mut rng),
            conv3(96, 96, Relu, &mut rng),
            Layer::MaxPool2,
            conv3(96, 192, Relu, &mut rng),
            conv3(192, 192, Relu, &mut rng),
            conv3(192, 192, Relu, &mut rng),
            Layer::MaxPool2,
            conv3(192, 192, Relu, &mut rng),
            conv1(192, 192, Relu, &mut rng),
            conv1(192, 10, Relu, &mut rng),
            Layer::GlobalAvgPool,
        ],
    };
    let net = Network::new(arch.input_shape(), layers).expect("builtin architecture is consistent");
    Classifier {
        arch: arch.as_str().to_string(),
        net,
        num_classes: 10,
        meta: ModelMeta { seed, ..ModelMeta::default() },
    }
}

/// Builds an untrained autoencoder with seeded initialization. All
/// architectures end in a sigmoid convolution so outputs stay in `[0, 1]`.
pub fn build_autoencoder(arch: AutoencoderArch, seed: u64) -> Autoencoder {
    use Activation::{Relu, Sigmoid};
    let mut rng = StdRng::seed_from_u64(seed);
    let layers = match arch {
        AutoencoderArch::MnistI => vec![
            conv3(1, 3, Sigmoid, &mut rng),
            Layer::AvgPool2,
            conv3(3, 3, Sigmoid, &mut rng),
            conv3(3, 3, Sigmoid, &mut rng),
            Layer::Upsample2,
            conv3(3, 3, Sigmoid, &mut rng),
            conv3(3, 1, Sigmoid, &mut rng),
        ],
        AutoencoderArch::MnistII => vec![
            conv3(1, 3, Sigmoid, &mut rng),
            conv3(3, 3, Sigmoid, &mut rng),
            conv3(3, 1, Sigmoid, &mut rng),
        ],
        AutoencoderArch::Cifar => vec![
            conv3(3, 3, Sigmoid, &mut rng),
            conv3(3, 3, Sigmoid, &mut rng),
            conv3(3, 3, Sigmoid, &mut rng),
        ],
        AutoencoderArch::DiverseMnist => vec![
            conv3(1, 8, Relu, &mut rng),
            conv3(8, 8, Relu, &mut rng),
            conv3(8, 1, Sigmoid, &mut rng),
        ],
        AutoencoderArch::DiverseCifar => vec![
            conv3(3, 8, Relu, &mut rng),
            conv3(8, 8, Relu, &mut rng),
            conv3(8, 3, Sigmoid, &mut rng),
        ],
    };
    let net = Network::new(arch.input_shape(), layers).expect("builtin architecture is consistent");
    Autoencoder {
        arch: arch.as_str().to_string(),
        net,
        meta: ModelMeta { seed, ..ModelMeta::default() },
    }
}

impl Classifier {
    /// Wraps an arbitrary network as a classifier (used for toy problems and
    /// custom compositions). The final layer must emit `num_classes` values.
    pub fn from_network(net: Network<f32>, num_classes: usize, label: &str) -> Result<Self> {
        let out = net.output_shape()?;
        if out.0 * out.1 * out.2 != num_classes {
            return Err(Error::Shape(format!(
                "network emits {} values, expected {num_classes} classes",
                out.0 * out.1 * out.2
            )));
        }
        Ok(Classifier {
            arch: label.to_string(),
            net,
            num_classes,
            meta: ModelMeta::default(),
        })
    }

    /// Hex SHA-256 over all weight tensors, used to fingerprint derived
    /// artifacts.
    pub fn fingerprint(&self) -> String {
        archive::network_fingerprint(&self.net)
    }
}

impl Autoencoder {
    /// Reconstructs a batch of images.
    pub fn reconstruct(&self, images: &Array4<f32>) -> Array4<f32> {
        self.net.forward(images)
    }

    pub fn fingerprint(&self) -> String {
        archive::network_fingerprint(&self.net)
    }
}

/// Classifier outputs for one batch.
pub struct ClassifyOutput {
    pub logits: Array2<f32>,
    pub probabilities: Array2<f32>,
    pub predicted: Array1<u8>,
}

fn logits_matrix(out: &Array4<f32>) -> Array2<f32> {
    let (b, h, w, c) = out.dim();
    out.view().into_shape((b, h * w * c)).unwrap().to_owned()
}

fn argmax_rows(m: &Array2<f32>) -> Array1<u8> {
    Array1::from_iter(m.rows().into_iter().map(|row| {
        row.iter()
            .enumerate()
            .fold((0_usize, f32::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
            .0 as u8
    }))
}

/// Runs the classifier: logits, softmax probabilities (temperature 1) and
/// argmax labels.
pub fn classify(c: &Classifier, batch: &ExampleBatch) -> Result<ClassifyOutput> {
    check_input_shape(&c.net, batch)?;
    let logits = logits_matrix(&c.net.forward(&batch.images));
    let probabilities = softmax_rows(&logits);
    let predicted = argmax_rows(&logits);
    Ok(ClassifyOutput { logits, probabilities, predicted })
}

/// Fraction of examples whose argmax prediction matches the label,
/// evaluated in fixed-size chunks to bound memory.
pub fn accuracy(c: &Classifier, batch: &ExampleBatch) -> Result<f64> {
    let mut correct = 0_usize;
    for chunk in batch_chunks(batch.len(), 512) {
        let sub = batch.select(&chunk);
        let out = classify(c, &sub)?;
        correct += out
            .predicted
            .iter()
            .zip(sub.labels.iter())
            .filter(|(p, l)| p == l)
            .count();
    }
    Ok(correct as f64 / batch.len() as f64)
}

/// Loss whose input gradient [`input_gradient`] returns.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Cross-entropy of the softmax output against the given labels.
    CrossEntropy,
    /// Hinge margin on logits: `max(z_label - max_other z, -kappa)`.
    CarliniF { kappa: f32 },
}

/// Cotangent on the logits for the per-example (unreduced) loss.
pub(crate) fn loss_cotangent(loss: LossKind, logits: &Array2<f32>, labels: &[u8]) -> Array2<f32> {
    match loss {
        LossKind::CrossEntropy => {
            let mut d = softmax_rows(logits);
            for (i, mut row) in d.rows_mut().into_iter().enumerate() {
                let l = labels[i] as usize;
                row[l] -= 1.0;
            }
            d
        }
        LossKind::CarliniF { kappa } => {
            let mut d = Array2::<f32>::zeros(logits.raw_dim());
            for (i, row) in logits.rows().into_iter().enumerate() {
                let l = labels[i] as usize;
                let (top_other, _) = row
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != l)
                    .fold((l, f32::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best });
                let f = row[l] - row[top_other];
                if f > -kappa {
                    d[(i, l)] = 1.0;
                    d[(i, top_other)] = -1.0;
                }
            }
            d
        }
    }
}

/// Per-example value of the Carlini hinge `max(z_l - max_other z, -kappa)`.
pub fn carlini_f_values(logits: &Array2<f32>, labels: &[u8], kappa: f32) -> Array1<f32> {
    Array1::from_iter(logits.rows().into_iter().zip(labels).map(|(row, &l)| {
        let l = l as usize;
        let top_other = row
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != l)
            .fold(f32::NEG_INFINITY, |m, (_, &v)| m.max(v));
        (row[l] - top_other).max(-kappa)
    }))
}

/// Exact gradient of the chosen per-example loss w.r.t. the input pixels.
pub fn input_gradient(
    c: &Classifier,
    batch: &ExampleBatch,
    labels: &[u8],
    loss: LossKind,
) -> Result<Array4<f32>> {
    check_input_shape(&c.net, batch)?;
    let trace = c.net.forward_trace(&batch.images);
    let logits = logits_matrix(trace.output());
    let d_logits = loss_cotangent(loss, &logits, labels);
    let b = batch.len();
    let d_out = d_logits.into_shape((b, 1, 1, c.num_classes)).unwrap();
    let grads = c.net.backward(&trace, d_out, GradWants::INPUT);
    Ok(grads.input.expect("input gradient requested"))
}

fn check_input_shape(net: &Network<f32>, batch: &ExampleBatch) -> Result<()> {
    if batch.image_shape() != net.input_shape {
        return Err(Error::Shape(format!(
            "batch shape {:?} does not match network input {:?}",
            batch.image_shape(),
            net.input_shape
        )));
    }
    Ok(())
}

/// Fixed-size index chunks `[0..n)` for batched evaluation.
pub(crate) fn batch_chunks(n: usize, size: usize) -> Vec<Vec<usize>> {
    (0..n)
        .collect::<Vec<_>>()
        .chunks(size)
        .map(|c| c.to_vec())
        .collect()
}

/// Trains the classifier with cross-entropy. Reports per-epoch loss and
/// validation accuracy in the returned model's history and the final
/// test/validation accuracy in its metrics.
pub fn train_classifier(
    mut c: Classifier,
    data: &DatasetSplits,
    cfg: &TrainingConfig,
) -> Result<Classifier> {
    cfg.validate()?;
    check_input_shape(&c.net, &data.train)?;
    if data.num_classes != c.num_classes {
        return Err(Error::Config(format!(
            "classifier has {} classes but dataset has {}",
            c.num_classes, data.num_classes
        )));
    }

    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let mut opt = Optimizer::new(cfg.optimizer_kind(), cfg.learning_rate, cfg.l2, &c.net);
    let n = data.train.len();
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut batch = data.train.select(chunk);
            if cfg.augment != AugmentPolicy::None {
                batch = augment(&batch, cfg.augment, &mut rng);
            }
            let trace = c.net.forward_trace(&batch.images);
            let logits = logits_matrix(trace.output());
            let (loss, d_logits) = softmax_ce_mean(&logits, batch.labels.as_slice().unwrap());
            if !loss.is_finite() {
                return Err(Error::Training { epoch, reason: format!("loss became {loss}") });
            }
            let d_out = d_logits.into_shape((batch.len(), 1, 1, c.num_classes)).unwrap();
            let grads = c.net.backward(&trace, d_out, GradWants::PARAMS);
            opt.step(&mut c.net, &grads);
            epoch_loss += loss;
            batches += 1;
        }
        let val_acc = if data.validation.is_empty() { f64::NAN } else { accuracy(&c, &data.validation)? };
        c.meta.history.push(EpochStats {
            epoch,
            train_loss: epoch_loss / batches.max(1) as f64,
            val_metric: val_acc,
        });
    }

    c.meta.training = Some(cfg.clone());
    c.meta.epochs_trained = cfg.epochs;
    if !data.validation.is_empty() {
        let v = accuracy(&c, &data.validation)?;
        c.meta.metrics.insert("validation_accuracy".into(), v);
    }
    if !data.test.is_empty() {
        let t = accuracy(&c, &data.test)?;
        c.meta.metrics.insert("test_accuracy".into(), t);
    }
    Ok(c)
}

/// Mean squared reconstruction error of the autoencoder over a batch.
pub fn reconstruction_mse(ae: &Autoencoder, batch: &ExampleBatch) -> f64 {
    let mut total = 0.0;
    let mut count = 0_usize;
    for chunk in batch_chunks(batch.len(), 512) {
        let sub = batch.select(&chunk);
        let rec = ae.net.forward(&sub.images);
        let diff = &rec - &sub.images;
        total += diff.iter().map(|d| (*d as f64) * (*d as f64)).sum::<f64>();
        count += diff.len();
    }
    total / count as f64
}

/// Trains the autoencoder to reconstruct its input under MSE.
///
/// `noise_sigma > 0` trains it as a denoising autoencoder: the input is
/// corrupted with scaled unit Gaussian noise (then clipped to `[0, 1]`)
/// while the target stays clean.
pub fn train_autoencoder(
    mut ae: Autoencoder,
    data: &DatasetSplits,
    cfg: &TrainingConfig,
    noise_sigma: f64,
) -> Result<Autoencoder> {
    cfg.validate()?;
    if noise_sigma < 0.0 {
        return Err(Error::Config("noise_sigma must be >= 0".into()));
    }
    check_input_shape(&ae.net, &data.train)?;

    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let mut opt = Optimizer::new(cfg.optimizer_kind(), cfg.learning_rate, cfg.l2, &ae.net);
    let n = data.train.len();
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let clean = data.train.select(chunk);
            let input = if noise_sigma > 0.0 {
                corrupt(&clean.images, noise_sigma, &mut rng)
            } else {
                clean.images.clone()
            };
            let trace = ae.net.forward_trace(&input);
            let (loss, d_out) = mse_loss_and_grad(trace.output(), &clean.images);
            if !loss.is_finite() {
                return Err(Error::Training { epoch, reason: format!("loss became {loss}") });
            }
            let grads = ae.net.backward(&trace, d_out, GradWants::PARAMS);
            opt.step(&mut ae.net, &grads);
            epoch_loss += loss;
            batches += 1;
        }
        let val_mse = if data.validation.is_empty() {
            f64::NAN
        } else {
            reconstruction_mse(&ae, &data.validation)
        };
        ae.meta.history.push(EpochStats {
            epoch,
            train_loss: epoch_loss / batches.max(1) as f64,
            val_metric: val_mse,
        });
    }

    ae.meta.training = Some(cfg.clone());
    ae.meta.epochs_trained = cfg.epochs;
    if !data.validation.is_empty() {
        ae.meta.metrics.insert("validation_mse".into(), reconstruction_mse(&ae, &data.validation));
    }
    Ok(ae)
}

fn corrupt(images: &Array4<f32>, sigma: f64, rng: &mut StdRng) -> Array4<f32> {
    let normal = rand_distr::StandardNormal;
    images.mapv(|v| {
        let noise: f64 = rng.sample(normal);
        (v as f64 + sigma * noise).clamp(0.0, 1.0) as f32
    })
}

/// Anything attacks can differentiate through: a bare classifier or a
/// reformer-classifier composite.
pub trait DifferentiableModel {
    fn num_classes(&self) -> usize;
    fn input_shape(&self) -> Shape;

    /// Pre-softmax logits for a batch, `[batch, num_classes]`.
    fn logits(&self, images: &Array4<f32>) -> Array2<f32>;

    /// One forward pass, then one input-gradient backward pass per cotangent
    /// produced by `make_cotangents` from the logits.
    fn logits_and_input_grads(
        &self,
        images: &Array4<f32>,
        make_cotangents: &mut dyn FnMut(&Array2<f32>) -> Vec<Array2<f32>>,
    ) -> (Array2<f32>, Vec<Array4<f32>>);
}

impl DifferentiableModel for Classifier {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn input_shape(&self) -> Shape {
        self.net.input_shape
    }

    fn logits(&self, images: &Array4<f32>) -> Array2<f32> {
        logits_matrix(&self.net.forward(images))
    }

    fn logits_and_input_grads(
        &self,
        images: &Array4<f32>,
        make_cotangents: &mut dyn FnMut(&Array2<f32>) -> Vec<Array2<f32>>,
    ) -> (Array2<f32>, Vec<Array4<f32>>) {
        let b = images.dim().0;
        let trace = self.net.forward_trace(images);
        let logits = logits_matrix(trace.output());
        let cots = make_cotangents(&logits);
        let grads = cots
            .into_iter()
            .map(|c| {
                let d_out = c.into_shape((b, 1, 1, self.num_classes)).unwrap();
                self.net
                    .backward(&trace, d_out, GradWants::INPUT)
                    .input
                    .expect("input gradient requested")
            })
            .collect();
        (logits, grads)
    }
}

/// Convenience: predictions of any differentiable model.
pub fn predict<M: DifferentiableModel + ?Sized>(model: &M, images: &Array4<f32>) -> Array1<u8> {
    argmax_rows(&model.logits(images))
}

/// Accuracy of any differentiable model against ground-truth labels,
/// evaluated in chunks.
pub fn model_accuracy<M: DifferentiableModel + ?Sized>(
    model: &M,
    images: &Array4<f32>,
    labels: &Array1<u8>,
) -> f64 {
    let n = images.dim().0;
    let mut correct = 0_usize;
    for chunk in batch_chunks(n, 512) {
        let sub = images.select(Axis(0), &chunk);
        let preds = predict(model, &sub);
        correct += chunk
            .iter()
            .zip(preds.iter())
            .filter(|(i, p)| labels[**i] == **p)
            .count();
    }
    correct as f64 / n as f64
}
