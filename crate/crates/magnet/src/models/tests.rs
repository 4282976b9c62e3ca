use ndarray::{Array1, Array2, Array4};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use super::*;

fn zero_batch(shape: Shape, n: usize) -> ExampleBatch {
    ExampleBatch::new(Array4::zeros((n, shape.0, shape.1, shape.2)), Array1::zeros(n)).unwrap()
}

#[test]
fn mnist_classifier_emits_ten_normalized_probabilities() {
    let c = build_classifier(ClassifierArch::Mnist, 0);
    let batch = zero_batch((28, 28, 1), 2);
    let out = classify(&c, &batch).unwrap();
    assert_eq!(out.logits.dim(), (2, 10));
    for row in out.probabilities.rows() {
        let sum: f32 = row.sum();
        assert!((sum - 1.0).abs() < 1e-5);
    }
}

#[test]
fn cifar_classifier_accepts_its_input_shape() {
    let c = build_classifier(ClassifierArch::Cifar10, 0);
    let batch = zero_batch((32, 32, 3), 1);
    let out = classify(&c, &batch).unwrap();
    assert_eq!(out.logits.dim(), (1, 10));

    let wrong = zero_batch((28, 28, 1), 1);
    assert!(classify(&c, &wrong).is_err());
}

#[test]
fn predicted_label_is_argmax_of_logits() {
    let mut rng = StdRng::seed_from_u64(0);
    let c = build_classifier(ClassifierArch::Mnist, 1);
    let images = Array4::from_shape_simple_fn((4, 28, 28, 1), || rng.gen_range(0.0..1.0));
    let batch = ExampleBatch::new(images, Array1::zeros(4)).unwrap();
    let out = classify(&c, &batch).unwrap();
    for (row, &pred) in out.logits.rows().into_iter().zip(out.predicted.iter()) {
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        assert_eq!(row[pred as usize], max);
    }
}

#[test]
fn uniform_logits_give_uniform_probabilities() {
    let logits = Array2::<f32>::zeros((1, 10));
    let p = crate::nn::softmax_rows(&logits);
    for &v in p.iter() {
        assert!((v - 0.1).abs() < 1e-6);
    }
}

#[test]
fn autoencoders_preserve_shape_and_unit_range() {
    let mut rng = StdRng::seed_from_u64(3);
    for arch in [
        AutoencoderArch::MnistI,
        AutoencoderArch::MnistII,
        AutoencoderArch::Cifar,
        AutoencoderArch::DiverseMnist,
        AutoencoderArch::DiverseCifar,
    ] {
        let ae = build_autoencoder(arch, 7);
        let (h, w, c) = arch.input_shape();
        let x = Array4::from_shape_simple_fn((2, h, w, c), || rng.gen_range(0.0..1.0_f32));
        let y = ae.reconstruct(&x);
        assert_eq!(y.dim(), x.dim(), "{arch:?}");
        assert!(y.iter().all(|&v| (0.0..=1.0).contains(&v)), "{arch:?} left [0,1]");
    }
}

#[test]
fn input_gradient_has_batch_shape_and_zero_for_constant_network() {
    let c = build_classifier(ClassifierArch::Mnist, 2);
    let batch = zero_batch((28, 28, 1), 3);
    let g = input_gradient(&c, &batch, &[0, 1, 2], LossKind::CrossEntropy).unwrap();
    assert_eq!(g.dim(), batch.images.dim());

    // A network whose logits do not depend on the input has zero gradient.
    let mut rng = StdRng::seed_from_u64(0);
    let mut net = Network::new(
        (4, 4, 1),
        vec![
            Layer::Flatten,
            {
                let (w, b) = fan_in_uniform::<f32>(16, 3, 16, &mut rng);
                Layer::Dense(Dense { weight: w, bias: b, act: Activation::Linear })
            },
        ],
    )
    .unwrap();
    if let Layer::Dense(d) = &mut net.layers[1] {
        d.weight.fill(0.0);
    }
    let toy = Classifier::from_network(net, 3, "constant").unwrap();
    let batch = zero_batch((4, 4, 1), 2);
    let g = input_gradient(&toy, &batch, &[0, 1], LossKind::CrossEntropy).unwrap();
    assert!(g.iter().all(|&v| v == 0.0));
}

#[test]
fn carlini_cotangent_marks_label_and_runner_up() {
    let logits = Array2::from_shape_vec((2, 4), vec![5.0, 1.0, 3.0, 0.0, 0.0, 2.0, 9.0, 1.0]).unwrap();
    let labels = [0_u8, 2];
    let d = loss_cotangent(LossKind::CarliniF { kappa: 0.0 }, &logits, &labels);
    // Row 0: label logit 5 beats runner-up 3 (index 2) => f = 2 > 0, active.
    assert_eq!(d[(0, 0)], 1.0);
    assert_eq!(d[(0, 2)], -1.0);
    assert_eq!(d[(0, 1)], 0.0);
    // Row 1: label logit 9 beats runner-up 2 => f = 7 > 0, active.
    assert_eq!(d[(1, 2)], 1.0);
    assert_eq!(d[(1, 1)], -1.0);

    // With a huge kappa the hinge never clamps; with f already below -kappa
    // the gradient vanishes.
    let clamped = loss_cotangent(LossKind::CarliniF { kappa: f32::MAX }, &logits, &labels);
    assert_eq!(clamped, d);
    let labels_wrong = [1_u8, 0];
    let vals = carlini_f_values(&logits, &labels_wrong, 10.0);
    assert!(vals[0] < 0.0); // label 1 logit 1 vs max-other 5
}

fn blob_splits(n_train: usize, n_eval: usize, seed: u64) -> DatasetSplits {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut make = |n: usize| {
        let mut images = Array4::<f32>::zeros((n, 6, 6, 1));
        let mut labels = Array1::<u8>::zeros(n);
        for i in 0..n {
            let class = (i % 2) as u8;
            labels[i] = class;
            let (lo, hi) = if class == 0 { (0.0, 0.35) } else { (0.65, 1.0) };
            images
                .index_axis_mut(ndarray::Axis(0), i)
                .mapv_inplace(|_| rng.gen_range(lo..hi));
        }
        ExampleBatch::new(images, labels).unwrap()
    };
    DatasetSplits {
        train: make(n_train),
        validation: make(n_eval),
        test: make(n_eval),
        num_classes: 2,
    }
}

fn blob_classifier(seed: u64) -> Classifier {
    let mut rng = StdRng::seed_from_u64(seed);
    let (w, b) = fan_in_uniform::<f32>(36, 2, 36, &mut rng);
    let net = Network::new(
        (6, 6, 1),
        vec![Layer::Flatten, Layer::Dense(Dense { weight: w, bias: b, act: Activation::Linear })],
    )
    .unwrap();
    Classifier::from_network(net, 2, "blobs").unwrap()
}

#[test]
fn linearly_separable_blobs_are_learnable_in_five_epochs() {
    let data = blob_splits(300, 60, 5);
    let cfg = TrainingConfig {
        optimizer: OptimizerId::Sgd,
        learning_rate: 0.1,
        batch_size: 16,
        epochs: 5,
        momentum: 0.0,
        l2: 0.0,
        augment: AugmentPolicy::None,
        seed: 9,
    };
    let trained = train_classifier(blob_classifier(1), &data, &cfg).unwrap();
    let acc = accuracy(&trained, &data.test).unwrap();
    assert!(acc > 0.9, "expected > 90% on separable blobs, got {acc}");
    // Loss decreased on average over training.
    let h = &trained.meta.history;
    assert!(h.last().unwrap().train_loss < h.first().unwrap().train_loss);
    assert_eq!(trained.meta.metrics.len(), 2);
}

#[test]
fn zero_epochs_is_rejected() {
    let data = blob_splits(16, 4, 0);
    let cfg = TrainingConfig {
        optimizer: OptimizerId::Sgd,
        learning_rate: 0.1,
        batch_size: 4,
        epochs: 0,
        momentum: 0.0,
        l2: 0.0,
        augment: AugmentPolicy::None,
        seed: 0,
    };
    assert!(matches!(train_classifier(blob_classifier(0), &data, &cfg), Err(Error::Config(_))));
}

#[test]
fn autoencoder_training_reduces_reconstruction_error() {
    let data = blob_splits(128, 32, 11);
    // Reuse blob images at 6x6; build a tiny sigmoid autoencoder for them.
    let mut rng = StdRng::seed_from_u64(4);
    let net = Network::new(
        (6, 6, 1),
        vec![
            {
                let (w, b) = fan_in_uniform::<f32>(9, 2, 9, &mut rng);
                Layer::Conv(Conv2d { weight: w, bias: b, kernel: 3, cin: 1, cout: 2, act: Activation::Sigmoid })
            },
            {
                let (w, b) = fan_in_uniform::<f32>(18, 1, 18, &mut rng);
                Layer::Conv(Conv2d { weight: w, bias: b, kernel: 3, cin: 2, cout: 1, act: Activation::Sigmoid })
            },
        ],
    )
    .unwrap();
    let ae = Autoencoder { arch: "toy".into(), net, meta: ModelMeta::default() };
    let before = reconstruction_mse(&ae, &data.validation);
    let cfg = TrainingConfig {
        optimizer: OptimizerId::Adam,
        learning_rate: 0.01,
        batch_size: 32,
        epochs: 30,
        momentum: 0.0,
        l2: 0.0,
        augment: AugmentPolicy::None,
        seed: 2,
    };
    let trained = train_autoencoder(ae, &data, &cfg, 0.0).unwrap();
    let after = reconstruction_mse(&trained, &data.validation);
    assert!(after < before * 0.5, "val mse {before} -> {after}");

    // Denoising mode accepts a positive sigma and still trains.
    let noisy = train_autoencoder(
        build_toy_ae(8),
        &data,
        &TrainingConfig { epochs: 2, ..cfg },
        0.025,
    )
    .unwrap();
    assert_eq!(noisy.meta.epochs_trained, 2);
    assert!(train_autoencoder(build_toy_ae(8), &data, &TrainingConfig { epochs: 1, ..cfg }, -0.1).is_err());
}

fn build_toy_ae(seed: u64) -> Autoencoder {
    let mut rng = StdRng::seed_from_u64(seed);
    let (w, b) = fan_in_uniform::<f32>(9, 1, 9, &mut rng);
    let net = Network::new(
        (6, 6, 1),
        vec![Layer::Conv(Conv2d { weight: w, bias: b, kernel: 3, cin: 1, cout: 1, act: Activation::Sigmoid })],
    )
    .unwrap();
    Autoencoder { arch: "toy".into(), net, meta: ModelMeta::default() }
}

#[test]
fn archive_round_trip_preserves_logits_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = StdRng::seed_from_u64(21);
    let data = blob_splits(64, 16, 3);
    let cfg = TrainingConfig {
        optimizer: OptimizerId::Sgd,
        learning_rate: 0.1,
        batch_size: 16,
        epochs: 2,
        momentum: 0.0,
        l2: 0.0,
        augment: AugmentPolicy::None,
        seed: 13,
    };
    let c = train_classifier(build_classifier(ClassifierArch::Mnist, 17), &mnist_like(&data), &cfg)
        .unwrap();
    let path = dir.path().join("clf");
    save_classifier(&c, &path).unwrap();
    let loaded = load_classifier(&path).unwrap();

    let probe = Array4::from_shape_simple_fn((3, 28, 28, 1), || rng.gen_range(0.0..1.0_f32));
    let probe = ExampleBatch::new(probe, Array1::zeros(3)).unwrap();
    let a = classify(&c, &probe).unwrap();
    let b = classify(&loaded, &probe).unwrap();
    assert_eq!(a.logits, b.logits);
    assert_eq!(loaded.meta.training.as_ref().unwrap().epochs, 2);
    assert_eq!(loaded.meta.epochs_trained, 2);

    // Tampering with a blob breaks the fingerprint check.
    let blob = path.join("weights/000_conv.weight.bin");
    let mut bytes = std::fs::read(&blob).unwrap();
    bytes[0] ^= 0xff;
    std::fs::write(&blob, bytes).unwrap();
    assert!(matches!(load_classifier(&path), Err(Error::Archive(_))));
}

/// Repackages 6x6 blob data as 28x28 so the MNIST architecture accepts it.
fn mnist_like(src: &DatasetSplits) -> DatasetSplits {
    let grow = |b: &ExampleBatch| {
        let n = b.len();
        let mut images = Array4::<f32>::zeros((n, 28, 28, 1));
        for i in 0..n {
            for y in 0..6 {
                for x in 0..6 {
                    images[(i, y, x, 0)] = b.images[(i, y, x, 0)];
                }
            }
        }
        ExampleBatch::new(images, b.labels.clone()).unwrap()
    };
    DatasetSplits {
        train: grow(&src.train),
        validation: grow(&src.validation),
        test: grow(&src.test),
        num_classes: 10,
    }
}

#[test]
fn loading_the_wrong_archive_kind_or_arch_fails() {
    let dir = tempfile::tempdir().unwrap();
    let ae = build_autoencoder(AutoencoderArch::MnistII, 0);
    let path = dir.path().join("ae");
    save_autoencoder(&ae, &path).unwrap();
    let err = load_classifier(&path).unwrap_err();
    assert!(matches!(err, Error::Archive(_)), "{err}");
    assert!(load_autoencoder(&path).is_ok());

    // Corrupt the declared architecture id.
    let meta_path = path.join("metadata.json");
    let meta = std::fs::read_to_string(&meta_path).unwrap().replace("mnist_ii", "mnist_ix");
    std::fs::write(&meta_path, meta).unwrap();
    assert!(matches!(load_autoencoder(&path), Err(Error::Archive(_))));
}

#[test]
fn training_is_reproducible_under_a_fixed_seed() {
    let data = blob_splits(64, 16, 3);
    let cfg = TrainingConfig {
        optimizer: OptimizerId::Adam,
        learning_rate: 0.005,
        batch_size: 16,
        epochs: 2,
        momentum: 0.0,
        l2: 1e-9,
        augment: AugmentPolicy::None,
        seed: 313,
    };
    let a = train_classifier(blob_classifier(5), &data, &cfg).unwrap();
    let b = train_classifier(blob_classifier(5), &data, &cfg).unwrap();
    assert_eq!(a.fingerprint(), b.fingerprint());
}
