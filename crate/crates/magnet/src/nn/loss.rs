//! Training losses with fused logit gradients.

use ndarray::{Array2, Array4};

use super::Scalar;

/// Row-wise stable softmax.
pub fn softmax_rows<F: Scalar>(logits: &Array2<F>) -> Array2<F> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    out
}

/// Mean cross-entropy from logits, with the gradient w.r.t. the logits.
///
/// The gradient is scaled by `1/batch`, matching the mean reduction of the
/// returned loss.
pub fn softmax_ce_mean<F: Scalar>(logits: &Array2<F>, labels: &[u8]) -> (f64, Array2<F>) {
    let b = logits.nrows();
    assert_eq!(b, labels.len(), "one label per logit row");
    let inv_b = F::from_f64(1.0 / b as f64);
    let mut d = softmax_rows(logits);
    let mut loss = 0.0_f64;
    for (i, mut row) in d.rows_mut().into_iter().enumerate() {
        let l = labels[i] as usize;
        let p = row[l].to_f64().max(1e-45);
        loss -= p.ln();
        row[l] = row[l] - F::one();
        for v in row.iter_mut() {
            *v = *v * inv_b;
        }
    }
    (loss / b as f64, d)
}

/// Mean squared error over every element, with the gradient w.r.t. `pred`.
pub fn mse_loss_and_grad<F: Scalar>(pred: &Array4<F>, target: &Array4<F>) -> (f64, Array4<F>) {
    assert_eq!(pred.dim(), target.dim());
    let n = pred.len() as f64;
    let mut loss = 0.0_f64;
    let mut grad = pred.clone();
    ndarray::Zip::from(&mut grad).and(target).for_each(|p, &t| {
        let diff = *p - t;
        loss += diff.to_f64() * diff.to_f64();
        *p = F::from_f64(2.0 / n) * diff;
    });
    (loss / n, grad)
}
