//! SGD and Adam parameter updates.

use ndarray::{Array1, Array2};

use super::{Gradients, Network, Scalar};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl OptimizerKind {
    pub fn adam_default() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

struct Slot<F> {
    layer: usize,
    // SGD: velocity; Adam: first moment.
    m_w: Array2<F>,
    m_b: Array1<F>,
    // Adam second moment (unused for SGD).
    v_w: Array2<F>,
    v_b: Array1<F>,
}

/// Optimizer state bound to one network's parameter layout.
pub struct Optimizer<F> {
    kind: OptimizerKind,
    lr: f64,
    /// L2 penalty coefficient; contributes `2 * l2 * w` to weight gradients.
    l2: f64,
    slots: Vec<Slot<F>>,
    step_count: u64,
}

impl<F: Scalar> Optimizer<F> {
    pub fn new(kind: OptimizerKind, lr: f64, l2: f64, net: &Network<F>) -> Self {
        let slots = net
            .layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| {
                let (wdim, bdim) = match l {
                    super::Layer::Conv(c) => (c.weight.raw_dim(), c.bias.raw_dim()),
                    super::Layer::Dense(d) => (d.weight.raw_dim(), d.bias.raw_dim()),
                    _ => return None,
                };
                Some(Slot {
                    layer: i,
                    m_w: Array2::zeros(wdim),
                    m_b: Array1::zeros(bdim),
                    v_w: Array2::zeros(wdim),
                    v_b: Array1::zeros(bdim),
                })
            })
            .collect();
        Optimizer { kind, lr, l2, slots, step_count: 0 }
    }

    /// Applies one update from `grads` (as produced by `Network::backward`
    /// with parameter gradients enabled).
    pub fn step(&mut self, net: &mut Network<F>, grads: &Gradients<F>) {
        self.step_count += 1;
        let mut params = net.param_layers_mut();
        for (slot_idx, slot) in self.slots.iter_mut().enumerate() {
            let (layer, w, b) = &mut params[slot_idx];
            assert_eq!(*layer, slot.layer, "optimizer bound to a different network");
            let g = grads.params[slot.layer]
                .as_ref()
                .expect("backward was run without parameter gradients");

            let l2 = F::from_f64(2.0 * self.l2);
            match self.kind {
                OptimizerKind::Sgd { momentum } => {
                    let mu = F::from_f64(momentum);
                    let lr = F::from_f64(self.lr);
                    ndarray::Zip::from(&mut slot.m_w).and(&g.weight).and(&**w).for_each(
                        |m, &gw, &wv| {
                            *m = mu * *m + gw + l2 * wv;
                        },
                    );
                    ndarray::Zip::from(&mut **w).and(&slot.m_w).for_each(|wv, &m| {
                        *wv = *wv - lr * m;
                    });
                    ndarray::Zip::from(&mut slot.m_b).and(&g.bias).for_each(|m, &gb| {
                        *m = mu * *m + gb;
                    });
                    ndarray::Zip::from(&mut **b).and(&slot.m_b).for_each(|bv, &m| {
                        *bv = *bv - lr * m;
                    });
                }
                OptimizerKind::Adam { beta1, beta2, epsilon } => {
                    let b1 = F::from_f64(beta1);
                    let b2 = F::from_f64(beta2);
                    let one = F::one();
                    let eps = F::from_f64(epsilon);
                    let t = self.step_count as i32;
                    let corr1 = F::from_f64(1.0 - beta1.powi(t));
                    let corr2 = F::from_f64(1.0 - beta2.powi(t));
                    let lr = F::from_f64(self.lr);

                    ndarray::Zip::from(&mut slot.m_w)
                        .and(&mut slot.v_w)
                        .and(&g.weight)
                        .and(&mut **w)
                        .for_each(|m, v, &gw0, wv| {
                            let gw = gw0 + l2 * *wv;
                            *m = b1 * *m + (one - b1) * gw;
                            *v = b2 * *v + (one - b2) * gw * gw;
                            let mhat = *m / corr1;
                            let vhat = *v / corr2;
                            *wv = *wv - lr * mhat / (vhat.sqrt() + eps);
                        });
                    ndarray::Zip::from(&mut slot.m_b)
                        .and(&mut slot.v_b)
                        .and(&g.bias)
                        .and(&mut **b)
                        .for_each(|m, v, &gb, bv| {
                            *m = b1 * *m + (one - b1) * gb;
                            *v = b2 * *v + (one - b2) * gb * gb;
                            let mhat = *m / corr1;
                            let vhat = *v / corr2;
                            *bv = *bv - lr * mhat / (vhat.sqrt() + eps);
                        });
                }
            }
        }
    }
}
