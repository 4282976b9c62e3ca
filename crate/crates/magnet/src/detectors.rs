//! Adversarial-input detectors and threshold calibration.
//!
//! Two scoring rules are provided: the p-norm reconstruction error of an
//! autoencoder, and the Jensen-Shannon divergence between the classifier's
//! temperature-softmax outputs on an input and on its reconstruction.
//! Thresholds are chosen on normal validation data so that the empirical
//! false-positive rate stays at or below a target `t_fp`; inputs scoring
//! strictly above the threshold are flagged.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::ExampleBatch;
use crate::error::{Error, Result};
use crate::models::{Autoencoder, Classifier, DifferentiableModel};

/// Norm used for reconstruction error.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Norm {
    L1,
    L2,
}

impl Norm {
    pub fn parse(p: u32) -> Result<Norm> {
        match p {
            1 => Ok(Norm::L1),
            2 => Ok(Norm::L2),
            other => Err(Error::Config(format!("reconstruction norm must be 1 or 2, got {other}"))),
        }
    }

    pub fn as_u32(self) -> u32 {
        match self {
            Norm::L1 => 1,
            Norm::L2 => 2,
        }
    }
}

/// Target false-positive rate on normal validation data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPolicy {
    pub t_fp: f64,
}

impl CalibrationPolicy {
    pub fn new(t_fp: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&t_fp) || !t_fp.is_finite() {
            return Err(Error::Config(format!("t_fp must lie in [0, 1], got {t_fp}")));
        }
        Ok(CalibrationPolicy { t_fp })
    }
}

/// Per-example p-norm of `x - ae(x)`.
pub fn reconstruction_error(ae: &Autoencoder, batch: &ExampleBatch, norm: Norm) -> Vec<f64> {
    let mut scores = Vec::with_capacity(batch.len());
    for chunk in crate::models::batch_chunks(batch.len(), 512) {
        let sub = batch.select(&chunk);
        let rec = ae.reconstruct(&sub.images);
        for i in 0..sub.len() {
            let x = sub.images.index_axis(ndarray::Axis(0), i);
            let r = rec.index_axis(ndarray::Axis(0), i);
            let mut acc = 0.0_f64;
            match norm {
                Norm::L1 => {
                    ndarray::Zip::from(&x).and(&r).for_each(|&a, &b| {
                        acc += (a as f64 - b as f64).abs();
                    });
                    scores.push(acc);
                }
                Norm::L2 => {
                    ndarray::Zip::from(&x).and(&r).for_each(|&a, &b| {
                        let d = a as f64 - b as f64;
                        acc += d * d;
                    });
                    scores.push(acc.sqrt());
                }
            }
        }
    }
    scores
}

/// Numerical floor applied to probabilities before logarithms, so saturated
/// softmax outputs cannot produce `0 * log 0` artifacts.
const PROB_FLOOR: f64 = 1e-12;

/// Kullback-Leibler divergence `sum p_i ln(p_i / q_i)` with floored inputs.
fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| {
            let pi = pi.max(PROB_FLOOR);
            let qi = qi.max(PROB_FLOOR);
            pi * (pi / qi).ln()
        })
        .sum()
}

/// Jensen-Shannon divergence between two probability mass functions.
/// Symmetric, non-negative, bounded by `ln 2`.
pub fn jensen_shannon_divergence(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "distributions must have equal support");
    let m: Vec<f64> = p.iter().zip(q).map(|(&a, &b)| 0.5 * (a + b)).collect();
    0.5 * kl_divergence(p, &m) + 0.5 * kl_divergence(q, &m)
}

/// Softmax with temperature, computed in `f64` from `f32` logits.
pub fn softmax_with_temperature(logits: &[f32], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits.iter().map(|&l| l as f64 / temperature).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Smallest threshold such that the fraction of `scores` strictly above it
/// is at most `policy.t_fp`; flagging uses `score > threshold`.
///
/// With `t_fp = 0` this is the maximum validation score (nothing flagged);
/// degenerate policies that would allow flagging everything return 0, which
/// is at or below any non-negative score.
pub fn calibrate(scores: &[f64], policy: CalibrationPolicy) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Calibration("cannot calibrate on an empty score set".into()));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Calibration(format!("non-finite validation score {bad}")));
    }
    let n = scores.len();
    let allowed = (policy.t_fp * n as f64).floor() as usize;
    if allowed >= n {
        return Ok(0.0);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(sorted[n - 1 - allowed])
}

/// Reconstruction-error detector: flags inputs whose autoencoder
/// reconstruction error exceeds a calibrated threshold.
#[derive(Clone)]
pub struct ReconstructionDetector {
    pub autoencoder: Arc<Autoencoder>,
    pub norm: Norm,
    pub policy: CalibrationPolicy,
    threshold: Option<f64>,
}

impl ReconstructionDetector {
    pub fn new(autoencoder: Arc<Autoencoder>, norm: Norm, policy: CalibrationPolicy) -> Self {
        ReconstructionDetector { autoencoder, norm, policy, threshold: None }
    }

    pub fn score(&self, batch: &ExampleBatch) -> Vec<f64> {
        reconstruction_error(&self.autoencoder, batch, self.norm)
    }
}

/// Probability-divergence detector: flags inputs when the classifier's
/// temperature-softmax output changes too much under reconstruction.
#[derive(Clone)]
pub struct DivergenceDetector {
    pub autoencoder: Arc<Autoencoder>,
    pub classifier: Arc<Classifier>,
    pub temperature: f64,
    pub policy: CalibrationPolicy,
    threshold: Option<f64>,
}

impl DivergenceDetector {
    pub fn new(
        autoencoder: Arc<Autoencoder>,
        classifier: Arc<Classifier>,
        temperature: f64,
        policy: CalibrationPolicy,
    ) -> Result<Self> {
        if !(temperature > 1.0) {
            return Err(Error::Config(format!("temperature must be > 1, got {temperature}")));
        }
        Ok(DivergenceDetector { autoencoder, classifier, temperature, policy, threshold: None })
    }

    pub fn score(&self, batch: &ExampleBatch) -> Vec<f64> {
        let mut scores = Vec::with_capacity(batch.len());
        for chunk in crate::models::batch_chunks(batch.len(), 512) {
            let sub = batch.select(&chunk);
            let rec = self.autoencoder.reconstruct(&sub.images);
            let logits_x = self.classifier.logits(&sub.images);
            let logits_r = self.classifier.logits(&rec);
            for (rx, rr) in logits_x.rows().into_iter().zip(logits_r.rows()) {
                let p = softmax_with_temperature(rx.as_slice().unwrap(), self.temperature);
                let q = softmax_with_temperature(rr.as_slice().unwrap(), self.temperature);
                scores.push(jensen_shannon_divergence(&p, &q));
            }
        }
        scores
    }
}

/// Either detector kind, behind one calibrate/score/detect surface.
#[derive(Clone)]
pub enum Detector {
    Reconstruction(ReconstructionDetector),
    Divergence(DivergenceDetector),
}

impl Detector {
    pub fn score(&self, batch: &ExampleBatch) -> Vec<f64> {
        match self {
            Detector::Reconstruction(d) => d.score(batch),
            Detector::Divergence(d) => d.score(batch),
        }
    }

    pub fn policy(&self) -> CalibrationPolicy {
        match self {
            Detector::Reconstruction(d) => d.policy,
            Detector::Divergence(d) => d.policy,
        }
    }

    pub fn threshold(&self) -> Option<f64> {
        match self {
            Detector::Reconstruction(d) => d.threshold,
            Detector::Divergence(d) => d.threshold,
        }
    }

    pub fn set_threshold(&mut self, threshold: f64) -> Result<()> {
        if !threshold.is_finite() || threshold < 0.0 {
            return Err(Error::Calibration(format!(
                "threshold must be finite and >= 0, got {threshold}"
            )));
        }
        match self {
            Detector::Reconstruction(d) => d.threshold = Some(threshold),
            Detector::Divergence(d) => d.threshold = Some(threshold),
        }
        Ok(())
    }

    /// Calibrates the rejection threshold on normal validation scores.
    pub fn calibrate_on(&mut self, validation: &ExampleBatch) -> Result<f64> {
        let scores = self.score(validation);
        let threshold = calibrate(&scores, self.policy())?;
        self.set_threshold(threshold)?;
        Ok(threshold)
    }

    /// Flags each example whose score strictly exceeds the threshold.
    pub fn detect(&self, batch: &ExampleBatch) -> Result<Vec<bool>> {
        let threshold = self
            .threshold()
            .ok_or_else(|| Error::State("detector used before calibration".into()))?;
        Ok(self.score(batch).into_iter().map(|s| s > threshold).collect())
    }

    /// Short id of the scoring rule, for reports.
    pub fn describe(&self) -> String {
        match self {
            Detector::Reconstruction(d) => format!("reconstruction_l{}", d.norm.as_u32()),
            Detector::Divergence(d) => format!("divergence_t{}", d.temperature),
        }
    }
}
