// Temporary probe; will be removed.
use magnet::data::load_dataset;
use magnet::models::*;
use std::time::Instant;

#[test]
#[ignore]
fn time_mnist_batches() {
    std::env::set_var("OPENBLAS_NUM_THREADS", "1");
    let dir = std::path::Path::new("/root/data/mnist");
    let t0 = Instant::now();
    let splits = load_dataset("mnist", dir, (55000, 5000, 1000), 7).unwrap();
    println!("load: {:?}", t0.elapsed());
    let cfg = TrainingConfig {
        optimizer: OptimizerId::Sgd,
        learning_rate: 0.01,
        batch_size: 128,
        epochs: 1,
        momentum: 0.0,
        l2: 0.0,
        augment: magnet::data::AugmentPolicy::None,
        seed: 1,
    };
    let sub = magnet::data::DatasetSplits {
        train: splits.train.take(4096),
        validation: splits.validation.take(512),
        test: splits.test.take(512),
        num_classes: 10,
    };
    let c = build_classifier(ClassifierArch::Mnist, 1);
    let t = Instant::now();
    let c = train_classifier(c, &sub, &cfg).unwrap();
    let dt = t.elapsed().as_secs_f64();
    println!(
        "4096 examples in {:.1}s -> est {:.1} min/epoch, est {:.1} h for 50 epochs; val_acc {:.3}",
        dt,
        dt * (55000.0 / 4096.0) / 60.0,
        dt * (55000.0 / 4096.0) * 50.0 / 3600.0,
        c.meta.history[0].val_metric
    );
}
