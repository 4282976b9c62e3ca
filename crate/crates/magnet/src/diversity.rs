//! Diversity-trained autoencoder ensembles for the graybox defense.
//!
//! `n` autoencoders are first trained independently on reconstruction MSE,
//! then jointly under a loss that subtracts an `alpha`-weighted resemblance
//! term: each member is penalized for staying close to the ensemble mean.
//! At test time one member is picked uniformly at random.

use ndarray::Array4;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use crate::data::{DatasetSplits, ExampleBatch};
use crate::error::{Error, Result};
use crate::models::{
    build_autoencoder, train_autoencoder, Autoencoder, AutoencoderArch, TrainingConfig,
};
use crate::nn::{mse_loss_and_grad, GradWants, Optimizer, Scalar};

/// A jointly trained collection of autoencoders.
pub struct Ensemble {
    pub members: Vec<Autoencoder>,
    pub alpha: f64,
}

impl Ensemble {
    pub fn new(members: Vec<Autoencoder>, alpha: f64) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Config("ensemble must have at least one member".into()));
        }
        if !(alpha >= 0.0) {
            return Err(Error::Config(format!("alpha must be >= 0, got {alpha}")));
        }
        let shape = members[0].net.input_shape;
        if members.iter().any(|m| m.net.input_shape != shape) {
            return Err(Error::Config("ensemble members must share an input shape".into()));
        }
        Ok(Ensemble { members, alpha })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Global-mean MSE between two equally shaped arrays.
fn mse<F: Scalar>(a: &Array4<F>, b: &Array4<F>) -> f64 {
    let mut acc = 0.0_f64;
    ndarray::Zip::from(a).and(b).for_each(|&x, &y| {
        let d = x.to_f64() - y.to_f64();
        acc += d * d;
    });
    acc / a.len() as f64
}

/// Loss value and per-member output gradients for the joint objective
/// `sum_i MSE(x, y_i) - alpha * sum_i MSE(y_i, mean_j y_j)`.
///
/// The ensemble-mean term's indirect dependence cancels exactly, so each
/// member's gradient is `2/N (y_i - x) - alpha 2/N (y_i - m)`.
pub(crate) fn resemblance_loss_and_grads<F: Scalar>(
    x: &Array4<F>,
    outputs: &[Array4<F>],
    alpha: f64,
) -> (f64, Vec<Array4<F>>) {
    assert!(!outputs.is_empty());
    let n_members = outputs.len();
    let inv_n = F::from_f64(1.0 / n_members as f64);
    let mut mean = outputs[0].clone();
    for y in &outputs[1..] {
        mean += y;
    }
    mean.mapv_inplace(|v| v * inv_n);

    let elems = F::from_f64(x.len() as f64);
    let two = F::from_f64(2.0);
    let alpha_f = F::from_f64(alpha);
    let mut loss = 0.0_f64;
    let mut grads = Vec::with_capacity(n_members);
    for y in outputs {
        loss += mse(x, y) - alpha * mse(y, &mean);
        let mut g = y.clone();
        ndarray::Zip::from(&mut g).and(x).and(&mean).for_each(|gy, &xv, &mv| {
            let yv = *gy;
            *gy = two / elems * ((yv - xv) - alpha_f * (yv - mv));
        });
        grads.push(g);
    }
    (loss, grads)
}

/// The joint objective averaged over the batch (the MSE terms are global
/// means over batch and pixels).
pub fn diversity_loss(batch: &ExampleBatch, ensemble: &Ensemble) -> Result<f64> {
    if ensemble.is_empty() {
        return Err(Error::Config("ensemble must have at least one member".into()));
    }
    let outputs: Vec<Array4<f32>> =
        ensemble.members.iter().map(|m| m.reconstruct(&batch.images)).collect();
    Ok(resemblance_loss_and_grads(&batch.images, &outputs, ensemble.alpha).0)
}

/// Picks a member index uniformly at random.
pub fn pick_random(ensemble: &Ensemble, rng: &mut StdRng) -> usize {
    rng.gen_range(0..ensemble.len())
}

/// Trains a diverse ensemble: `pre_epochs` of independent reconstruction
/// training per member, then `div_epochs` of joint training under the
/// resemblance-penalized loss.
///
/// Member `i` is initialized and trained with seed `cfg.seed + i`. The
/// reconstruction term is monitored during the joint phase; if it exceeds
/// ten times its phase-1 value the run aborts with a training error, since
/// the joint objective is unbounded below for large `alpha`.
pub fn train_diverse_ensemble(
    archs: &[AutoencoderArch],
    data: &DatasetSplits,
    cfg: &TrainingConfig,
    alpha: f64,
    pre_epochs: usize,
    div_epochs: usize,
) -> Result<Ensemble> {
    if archs.is_empty() {
        return Err(Error::Config("ensemble needs at least one architecture".into()));
    }
    cfg.validate().or_else(|e| {
        // epochs is supplied via the phase arguments here; accept epochs >=
        // 0 in cfg but keep the other checks.
        if pre_epochs == 0 && div_epochs == 0 {
            Err(Error::Config("both training phases are empty".into()))
        } else if cfg.learning_rate > 0.0 && cfg.batch_size > 0 {
            Ok(())
        } else {
            Err(e)
        }
    })?;

    // Phase 1: independent reconstruction training.
    let mut members = Vec::with_capacity(archs.len());
    for (i, &arch) in archs.iter().enumerate() {
        let seed = cfg.seed.wrapping_add(i as u64);
        let member = build_autoencoder(arch, seed);
        let member = if pre_epochs > 0 {
            let member_cfg = TrainingConfig { epochs: pre_epochs, seed, ..cfg.clone() };
            train_autoencoder(member, data, &member_cfg, 0.0)?
        } else {
            member
        };
        members.push(member);
    }

    if div_epochs == 0 {
        return Ensemble::new(members, alpha);
    }

    // Reconstruction level to defend during the joint phase.
    let recon_baseline: f64 = {
        let probe = if data.validation.is_empty() { &data.train } else { &data.validation };
        let probe = probe.take(1024);
        members
            .iter()
            .map(|m| {
                let (l, _) = mse_loss_and_grad(&m.reconstruct(&probe.images), &probe.images);
                l
            })
            .sum()
    };
    let recon_limit = (recon_baseline * 10.0).max(1e-6);

    // Phase 2: joint training, one optimizer step per member per batch.
    let mut rng = StdRng::seed_from_u64(cfg.seed.wrapping_add(0x9e37));
    let mut optimizers: Vec<Optimizer<f32>> = members
        .iter()
        .map(|m| Optimizer::new(optimizer_kind(cfg), cfg.learning_rate, cfg.l2, &m.net))
        .collect();
    let n = data.train.len();
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 1..=div_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.train.select(chunk);
            let traces: Vec<_> =
                members.iter().map(|m| m.net.forward_trace(&batch.images)).collect();
            let outputs: Vec<Array4<f32>> = traces.iter().map(|t| t.output().clone()).collect();
            let (loss, grads) = resemblance_loss_and_grads(&batch.images, &outputs, alpha);
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    reason: format!("joint loss became {loss}; try a smaller alpha"),
                });
            }
            let recon_term: f64 =
                outputs.iter().map(|y| mse(y, &batch.images)).sum();
            if recon_term > recon_limit {
                return Err(Error::Training {
                    epoch,
                    reason: format!(
                        "reconstruction term {recon_term:.6} exceeded 10x its phase-1 value \
                         {recon_baseline:.6}; try a smaller alpha"
                    ),
                });
            }
            for ((member, trace), (opt, d_out)) in members
                .iter_mut()
                .zip(&traces)
                .zip(optimizers.iter_mut().zip(grads))
            {
                let g = member.net.backward(trace, d_out, GradWants::PARAMS);
                opt.step(&mut member.net, &g);
            }
            epoch_loss += loss;
            batches += 1;
        }
        for member in &mut members {
            member.meta.history.push(crate::models::EpochStats {
                epoch: pre_epochs + epoch,
                train_loss: epoch_loss / batches.max(1) as f64,
                val_metric: f64::NAN,
            });
        }
    }
    for member in &mut members {
        member.meta.epochs_trained = pre_epochs + div_epochs;
        member.meta.training = Some(cfg.clone());
    }
    Ensemble::new(members, alpha)
}

fn optimizer_kind(cfg: &TrainingConfig) -> crate::nn::OptimizerKind {
    match cfg.optimizer {
        crate::models::OptimizerId::Sgd => {
            crate::nn::OptimizerKind::Sgd { momentum: cfg.momentum }
        }
        crate::models::OptimizerId::Adam => crate::nn::OptimizerKind::adam_default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ExampleBatch;
    use crate::models::OptimizerId;
    use ndarray::Array1;

    fn tiny_splits(n: usize, seed: u64) -> DatasetSplits {
        let mut rng = StdRng::seed_from_u64(seed);
        let images = Array4::from_shape_simple_fn((n, 28, 28, 1), || rng.gen_range(0.0..1.0_f32));
        let labels = Array1::zeros(n);
        let batch = ExampleBatch::new(images, labels).unwrap();
        DatasetSplits {
            train: batch.clone(),
            validation: batch.take(n / 4),
            test: batch.take(n / 4),
            num_classes: 10,
        }
    }

    fn base_cfg(epochs: usize) -> TrainingConfig {
        TrainingConfig {
            optimizer: OptimizerId::Adam,
            learning_rate: 0.001,
            batch_size: 16,
            epochs,
            momentum: 0.0,
            l2: 0.0,
            augment: crate::data::AugmentPolicy::None,
            seed: 77,
        }
    }

    #[test]
    fn alpha_zero_reduces_to_sum_of_reconstruction_losses() {
        let mut rng = StdRng::seed_from_u64(1);
        let x = Array4::from_shape_simple_fn((4, 6, 6, 1), || rng.gen_range(0.0..1.0_f64));
        let ys: Vec<_> = (0..3)
            .map(|_| Array4::from_shape_simple_fn((4, 6, 6, 1), || rng.gen_range(0.0..1.0_f64)))
            .collect();
        let (loss, _) = resemblance_loss_and_grads(&x, &ys, 0.0);
        let expected: f64 = ys.iter().map(|y| mse(&x, y)).sum();
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn single_member_has_zero_diversity_term() {
        let mut rng = StdRng::seed_from_u64(2);
        let x = Array4::from_shape_simple_fn((2, 4, 4, 1), || rng.gen_range(0.0..1.0_f64));
        let y = Array4::from_shape_simple_fn((2, 4, 4, 1), || rng.gen_range(0.0..1.0_f64));
        let (with_alpha, _) = resemblance_loss_and_grads(&x, std::slice::from_ref(&y), 5.0);
        let (without, _) = resemblance_loss_and_grads(&x, std::slice::from_ref(&y), 0.0);
        assert!((with_alpha - without).abs() < 1e-12);
    }

    #[test]
    fn identical_members_have_zero_diversity_term() {
        let mut rng = StdRng::seed_from_u64(3);
        let x = Array4::from_shape_simple_fn((2, 4, 4, 1), || rng.gen_range(0.0..1.0_f64));
        let y = Array4::from_shape_simple_fn((2, 4, 4, 1), || rng.gen_range(0.0..1.0_f64));
        let (loss, _) = resemblance_loss_and_grads(&x, &[y.clone(), y.clone()], 0.7);
        assert!((loss - 2.0 * mse(&x, &y)).abs() < 1e-12);
    }

    #[test]
    fn loss_is_invariant_under_member_permutation() {
        let mut rng = StdRng::seed_from_u64(4);
        let x = Array4::from_shape_simple_fn((3, 5, 5, 1), || rng.gen_range(0.0..1.0_f64));
        let ys: Vec<_> = (0..4)
            .map(|_| Array4::from_shape_simple_fn((3, 5, 5, 1), || rng.gen_range(0.0..1.0_f64)))
            .collect();
        let (a, _) = resemblance_loss_and_grads(&x, &ys, 0.3);
        let permuted: Vec<_> = vec![ys[2].clone(), ys[0].clone(), ys[3].clone(), ys[1].clone()];
        let (b, _) = resemblance_loss_and_grads(&x, &permuted, 0.3);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = StdRng::seed_from_u64(5);
        let x = Array4::from_shape_simple_fn((2, 3, 3, 1), || rng.gen_range(0.0..1.0_f64));
        let ys: Vec<_> = (0..3)
            .map(|_| Array4::from_shape_simple_fn((2, 3, 3, 1), || rng.gen_range(0.0..1.0_f64)))
            .collect();
        let alpha = 0.4;
        let (_, grads) = resemblance_loss_and_grads(&x, &ys, alpha);
        let h = 1e-6;
        for member in 0..3 {
            for idx in [(0, 0, 0, 0), (1, 2, 1, 0), (0, 1, 2, 0)] {
                let mut yp = ys.clone();
                yp[member][idx] += h;
                let mut ym = ys.clone();
                ym[member][idx] -= h;
                let (fp, _) = resemblance_loss_and_grads(&x, &yp, alpha);
                let (fm, _) = resemblance_loss_and_grads(&x, &ym, alpha);
                let num = (fp - fm) / (2.0 * h);
                let ana = grads[member][idx];
                assert!((ana - num).abs() < 1e-8, "member {member} {idx:?}: {ana} vs {num}");
            }
        }
    }

    #[test]
    fn pick_random_is_uniform_and_seeded() {
        let members = vec![build_autoencoder(AutoencoderArch::DiverseMnist, 0)];
        let single = Ensemble::new(members, 0.2).unwrap();
        let mut rng = StdRng::seed_from_u64(0);
        assert_eq!(pick_random(&single, &mut rng), 0);

        let members: Vec<_> =
            (0..8).map(|i| build_autoencoder(AutoencoderArch::DiverseMnist, i)).collect();
        let eight = Ensemble::new(members, 0.2).unwrap();
        let mut r1 = StdRng::seed_from_u64(42);
        let mut r2 = StdRng::seed_from_u64(42);
        assert_eq!(pick_random(&eight, &mut r1), pick_random(&eight, &mut r2));

        // 10_000 draws: every index within 5 sigma of 1250.
        let mut rng = StdRng::seed_from_u64(7);
        let mut counts = [0_usize; 8];
        for _ in 0..10_000 {
            counts[pick_random(&eight, &mut rng)] += 1;
        }
        let sigma = (10_000.0_f64 * (1.0 / 8.0) * (7.0 / 8.0)).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - 1250.0).abs() <= 5.0 * sigma,
                "index {i} drawn {c} times (5 sigma = {:.1})",
                5.0 * sigma
            );
        }
    }

    #[test]
    fn alpha_zero_without_joint_phase_equals_independent_training() {
        let data = tiny_splits(64, 9);
        let cfg = base_cfg(2);
        let ensemble = train_diverse_ensemble(
            &[AutoencoderArch::DiverseMnist; 2],
            &data,
            &cfg,
            0.0,
            2,
            0,
        )
        .unwrap();

        for i in 0..2 {
            let seed = cfg.seed.wrapping_add(i as u64);
            let solo = train_autoencoder(
                build_autoencoder(AutoencoderArch::DiverseMnist, seed),
                &data,
                &TrainingConfig { seed, ..cfg.clone() },
                0.0,
            )
            .unwrap();
            assert_eq!(ensemble.members[i].fingerprint(), solo.fingerprint());
        }
    }

    #[test]
    fn joint_phase_separates_members() {
        let data = tiny_splits(96, 13);
        let cfg = base_cfg(1);
        let ensemble = train_diverse_ensemble(
            &[AutoencoderArch::DiverseMnist; 3],
            &data,
            &cfg,
            0.2,
            1,
            2,
        )
        .unwrap();

        // Pairwise distinct parameters.
        let prints: Vec<_> = ensemble.members.iter().map(|m| m.fingerprint()).collect();
        for i in 0..3 {
            for j in i + 1..3 {
                assert_ne!(prints[i], prints[j], "members {i} and {j} are identical");
            }
        }
        // Mean pairwise output MSE on a probe batch is strictly positive.
        let probe = data.test.take(16);
        let outs: Vec<_> = ensemble.members.iter().map(|m| m.reconstruct(&probe.images)).collect();
        let mut pairwise = 0.0;
        let mut pairs = 0;
        for i in 0..3 {
            for j in i + 1..3 {
                pairwise += mse(&outs[i], &outs[j]);
                pairs += 1;
            }
        }
        assert!(pairwise / pairs as f64 > 0.0);
    }

    #[test]
    fn runaway_alpha_aborts_with_advice() {
        let data = tiny_splits(64, 21);
        let cfg = base_cfg(1);
        let err = train_diverse_ensemble(
            &[AutoencoderArch::DiverseMnist; 2],
            &data,
            &TrainingConfig { learning_rate: 0.05, ..cfg },
            1e6,
            1,
            50,
        )
        .unwrap_err();
        match err {
            Error::Training { reason, .. } => {
                assert!(reason.contains("alpha"), "unhelpful message: {reason}")
            }
            other => panic!("expected training error, got {other}"),
        }
    }

    #[test]
    fn empty_ensemble_is_rejected() {
        assert!(Ensemble::new(vec![], 0.1).is_err());
        let data = tiny_splits(16, 2);
        assert!(train_diverse_ensemble(&[], &data, &base_cfg(1), 0.2, 1, 1).is_err());
    }
}
