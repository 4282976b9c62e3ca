//! Reformers move test inputs toward the manifold of normal examples before
//! classification.

use std::sync::Arc;

use ndarray::Array4;
use rand::rngs::StdRng;
use rand::Rng;

use crate::data::ExampleBatch;
use crate::models::Autoencoder;

/// The reformer applied to every non-rejected input.
#[derive(Clone)]
pub enum Reformer {
    /// Pass-through.
    Identity,
    /// Adds `epsilon`-scaled unit Gaussian noise, clipped to `[0, 1]`.
    /// Kept for ablations; not part of the deployed pipeline.
    Noise { epsilon: f32 },
    /// Replaces the input with its autoencoder reconstruction.
    Autoencoder(Arc<Autoencoder>),
}

impl Reformer {
    /// Reforms a batch of images; output shape equals input shape and values
    /// stay in `[0, 1]`. The generator is only consulted by the noise kind.
    pub fn reform(&self, images: &Array4<f32>, rng: &mut StdRng) -> Array4<f32> {
        match self {
            Reformer::Identity => images.clone(),
            Reformer::Noise { epsilon } => {
                let normal = rand_distr::StandardNormal;
                images.mapv(|v| {
                    let n: f64 = rng.sample(normal);
                    (v as f64 + *epsilon as f64 * n).clamp(0.0, 1.0) as f32
                })
            }
            Reformer::Autoencoder(ae) => ae.reconstruct(images),
        }
    }

    pub fn reform_batch(&self, batch: &ExampleBatch, rng: &mut StdRng) -> ExampleBatch {
        ExampleBatch { images: self.reform(&batch.images, rng), labels: batch.labels.clone() }
    }

    pub fn describe(&self) -> String {
        match self {
            Reformer::Identity => "identity".into(),
            Reformer::Noise { epsilon } => format!("noise_eps{epsilon}"),
            Reformer::Autoencoder(_) => "autoencoder".into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_autoencoder, AutoencoderArch};
    use ndarray::Array4;
    use rand::SeedableRng;

    fn probe() -> Array4<f32> {
        let mut rng = StdRng::seed_from_u64(4);
        Array4::from_shape_simple_fn((3, 28, 28, 1), || rng.gen_range(0.0..1.0))
    }

    #[test]
    fn identity_reformer_returns_the_input() {
        let x = probe();
        let mut rng = StdRng::seed_from_u64(0);
        assert_eq!(Reformer::Identity.reform(&x, &mut rng), x);
    }

    #[test]
    fn zero_noise_is_the_identity() {
        let x = probe();
        let mut rng = StdRng::seed_from_u64(0);
        let y = Reformer::Noise { epsilon: 0.0 }.reform(&x, &mut rng);
        assert_eq!(y, x);
    }

    #[test]
    fn noise_reformer_is_seeded_and_stays_in_range() {
        let x = probe();
        let mut r1 = StdRng::seed_from_u64(11);
        let mut r2 = StdRng::seed_from_u64(11);
        let a = Reformer::Noise { epsilon: 0.1 }.reform(&x, &mut r1);
        let b = Reformer::Noise { epsilon: 0.1 }.reform(&x, &mut r2);
        assert_eq!(a, b);
        assert_ne!(a, x);
        assert!(a.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn autoencoder_reformer_outputs_unit_range_and_same_shape() {
        let ae = Arc::new(build_autoencoder(AutoencoderArch::MnistI, 1));
        let x = probe();
        let mut rng = StdRng::seed_from_u64(0);
        let y = Reformer::Autoencoder(ae).reform(&x, &mut rng);
        assert_eq!(y.dim(), x.dim());
        assert!(y.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
