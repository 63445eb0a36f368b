//! Adaptive weighted cross-entropy over H x W x 3 class tensors, with the
//! analytic gradient. This is a standalone verifiable kernel: it proves the
//! loss math without any network attached.
//!
//! L = -(1 / 3HW) sum_ijk M_ijk Psi_ijk log softmax_k(Theta_ij), where the
//! adaptive mask M carries, on each labeled entry, the class weight
//! lambda_c = (sum_c' N_c') / N_c (0 for empty classes). The weight rebalances
//! the rare grasp labels against the dominant background.

use crate::error::{Error, Result};
use crate::labels::AffordanceMap;

pub const CLASSES: usize = 3;

/// Network-output logits, H x W x 3, row-major with the class axis innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTensor {
    pub height: usize,
    pub width: usize,
    pub logits: Vec<f64>,
}

impl PredictionTensor {
    pub fn new(height: usize, width: usize, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != height * width * CLASSES {
            return Err(Error::DimensionMismatch(format!(
                "logits length {} != {height}x{width}x3",
                logits.len()
            )));
        }
        if !logits.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidRecord("non-finite logit".into()));
        }
        Ok(Self { height, width, logits })
    }
}

/// One-hot ground truth with cached per-class pixel counts.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelTensor {
    pub height: usize,
    pub width: usize,
    /// Class index per pixel (the one-hot position).
    pub class_of: Vec<u8>,
    /// Pixel counts per class.
    pub counts: [u64; CLASSES],
}

impl LabelTensor {
    pub fn new(height: usize, width: usize, class_of: Vec<u8>) -> Result<Self> {
        if class_of.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "label length {} != {height}x{width}",
                class_of.len()
            )));
        }
        let mut counts = [0u64; CLASSES];
        for &c in &class_of {
            if usize::from(c) >= CLASSES {
                return Err(Error::InvalidRecord(format!("class index {c} out of range")));
            }
            counts[usize::from(c)] += 1;
        }
        Ok(Self { height, width, class_of, counts })
    }

    pub fn from_map(map: &AffordanceMap) -> Self {
        let class_of = map.classes().iter().map(|&c| c as u8).collect();
        Self::new(map.height() as usize, map.width() as usize, class_of).expect("map is well formed")
    }

    /// One-hot value Psi_ijk.
    #[inline]
    pub fn one_hot(&self, i: usize, j: usize, k: usize) -> f64 {
        if usize::from(self.class_of[i * self.width + j]) == k {
            1.0
        } else {
            0.0
        }
    }
}

/// Per-class penalty weights lambda_c = total / N_c, 0 when N_c = 0.
pub fn penalty_weights(labels: &LabelTensor) -> [f64; CLASSES] {
    let total: u64 = labels.counts.iter().sum();
    let mut lambda = [0.0; CLASSES];
    for (k, &n) in labels.counts.iter().enumerate() {
        if n > 0 {
            lambda[k] = total as f64 / n as f64;
        }
    }
    lambda
}

/// The full H x W x 3 adaptive mask: lambda of the pixel's class on its
/// one-hot entry, zero elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMask {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

pub fn adaptive_weight_mask(labels: &LabelTensor) -> WeightMask {
    let lambda = penalty_weights(labels);
    let mut values = vec![0.0; labels.height * labels.width * CLASSES];
    for (p, &c) in labels.class_of.iter().enumerate() {
        values[p * CLASSES + usize::from(c)] = lambda[usize::from(c)];
    }
    WeightMask { height: labels.height, width: labels.width, values }
}

#[inline]
fn log_softmax(row: &[f64; CLASSES]) -> [f64; CLASSES] {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row {
        sum += (v - max).exp();
    }
    let log_z = max + sum.ln();
    [row[0] - log_z, row[1] - log_z, row[2] - log_z]
}

fn check_shapes(pred: &PredictionTensor, labels: &LabelTensor) -> Result<()> {
    if pred.height != labels.height || pred.width != labels.width {
        return Err(Error::DimensionMismatch(format!(
            "prediction {}x{} vs labels {}x{}",
            pred.height, pred.width, labels.height, labels.width
        )));
    }
    Ok(())
}

/// The adaptive weighted cross-entropy loss.
pub fn weighted_ce_loss(pred: &PredictionTensor, labels: &LabelTensor) -> Result<f64> {
    check_shapes(pred, labels)?;
    let lambda = penalty_weights(labels);
    let norm = 1.0 / (CLASSES as f64 * pred.height as f64 * pred.width as f64);
    let mut loss = 0.0;
    for p in 0..labels.class_of.len() {
        let c = usize::from(labels.class_of[p]);
        let row = [pred.logits[p * CLASSES], pred.logits[p * CLASSES + 1], pred.logits[p * CLASSES + 2]];
        let ls = log_softmax(&row);
        loss -= lambda[c] * ls[c];
    }
    Ok(loss * norm)
}

/// Analytic gradient dL/dTheta: (lambda(pixel) / 3HW) * (softmax_k - Psi_k).
pub fn weighted_ce_grad(pred: &PredictionTensor, labels: &LabelTensor) -> Result<Vec<f64>> {
    check_shapes(pred, labels)?;
    let lambda = penalty_weights(labels);
    let norm = 1.0 / (CLASSES as f64 * pred.height as f64 * pred.width as f64);
    let mut grad = vec![0.0; pred.logits.len()];
    for p in 0..labels.class_of.len() {
        let c = usize::from(labels.class_of[p]);
        let row = [pred.logits[p * CLASSES], pred.logits[p * CLASSES + 1], pred.logits[p * CLASSES + 2]];
        let ls = log_softmax(&row);
        for k in 0..CLASSES {
            let softmax = ls[k].exp();
            let psi = if k == c { 1.0 } else { 0.0 };
            grad[p * CLASSES + k] = norm * lambda[c] * (softmax - psi);
        }
    }
    Ok(grad)
}

/// Report of a finite-difference check of the analytic gradient.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub loss: f64,
    pub max_abs_grad: f64,
    pub max_rel_error: f64,
    pub entries_checked: usize,
}

/// Compare the analytic gradient against central finite differences with
/// step `h` on every entry.
pub fn gradient_check(pred: &PredictionTensor, labels: &LabelTensor, h: f64) -> Result<GradCheckReport> {
    let loss = weighted_ce_loss(pred, labels)?;
    let grad = weighted_ce_grad(pred, labels)?;
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    let mut work = pred.clone();
    for e in 0..grad.len() {
        let orig = work.logits[e];
        work.logits[e] = orig + h;
        let up = weighted_ce_loss(&work, labels)?;
        work.logits[e] = orig - h;
        let down = weighted_ce_loss(&work, labels)?;
        work.logits[e] = orig;
        let fd = (up - down) / (2.0 * h);
        let denom = grad[e].abs().max(fd.abs()).max(1e-8);
        max_rel = max_rel.max((grad[e] - fd).abs() / denom);
        max_abs = max_abs.max(grad[e].abs());
    }
    Ok(GradCheckReport { loss, max_abs_grad: max_abs, max_rel_error: max_rel, entries_checked: grad.len() })
}
