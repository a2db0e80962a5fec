//! Scalar objectives and their gradients with respect to their direct inputs.
//!
//! All per-sample terms are averaged over the batch. Logarithms are taken of
//! `max(p, LOG_EPS)`, so the gradient of a clamped entry is zero.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, input_err, Result};
use crate::model::ClassProbabilities;
use crate::tensor::Tensor;

pub const LOG_EPS: f64 = 1e-7;

/// Weights of the reconstruction, expression and adversarial terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { beta1: 0.0, beta2: 1.0, beta3: 1.0 }
    }
}

impl LossWeights {
    pub fn new(beta1: f64, beta2: f64, beta3: f64) -> Result<Self> {
        let w = Self { beta1, beta2, beta3 };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2), ("beta3", self.beta3)] {
            if !v.is_finite() || v < 0.0 {
                return Err(config_err!("{name} must be finite and non-negative, got {v}"));
            }
        }
        Ok(())
    }
}

/// Loss values of one training step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub l_r: f64,
    pub l_exp: f64,
    pub l_adv_exp: f64,
    pub l_adv_en: f64,
    /// Identity adversary's classification loss (dual-adversary mode only).
    pub l_adv_id: Option<f64>,
    /// Fooling loss against the identity adversary (dual-adversary mode only).
    pub l_adv_en_id: Option<f64>,
    pub l_final: f64,
}

impl LossReport {
    pub fn new(l_r: f64, l_exp: f64, l_adv_exp: f64, l_adv_en: f64, weights: &LossWeights) -> Self {
        let mut r = Self { l_r, l_exp, l_adv_exp, l_adv_en, ..Self::default() };
        r.l_final = total_loss(&r, weights);
        r
    }

    pub fn with_identity_terms(mut self, l_adv_id: f64, l_adv_en_id: f64, weights: &LossWeights) -> Self {
        self.l_adv_id = Some(l_adv_id);
        self.l_adv_en_id = Some(l_adv_en_id);
        self.l_final = total_loss(&self, weights);
        self
    }

    pub fn all_finite(&self) -> bool {
        [self.l_r, self.l_exp, self.l_adv_exp, self.l_adv_en, self.l_final]
            .into_iter()
            .chain(self.l_adv_id)
            .chain(self.l_adv_en_id)
            .all(f64::is_finite)
    }
}

/// `β1·L_r + β2·L_exp + β3·(L_adv_exp + L_adv_en)`, plus the identity-adversary
/// pair under `β3` when present. `l_final` of the input is ignored.
pub fn total_loss(parts: &LossReport, weights: &LossWeights) -> f64 {
    let adv = parts.l_adv_exp + parts.l_adv_en + parts.l_adv_id.unwrap_or(0.0) + parts.l_adv_en_id.unwrap_or(0.0);
    weights.beta1 * parts.l_r + weights.beta2 * parts.l_exp + weights.beta3 * adv
}

/// Mean over the batch of the per-sample squared L2 distance.
pub fn reconstruction_loss(x: &Tensor, x_hat: &Tensor) -> Result<f64> {
    check_same_shape(x, x_hat)?;
    let n = x.rows().max(1) as f64;
    Ok(x.data().iter().zip(x_hat.data()).map(|(a, b)| (b - a) * (b - a)).sum::<f64>() / n)
}

/// Gradient of [`reconstruction_loss`] with respect to `x_hat`.
pub fn reconstruction_loss_grad(x: &Tensor, x_hat: &Tensor) -> Result<Tensor> {
    check_same_shape(x, x_hat)?;
    let scale = 2.0 / x.rows().max(1) as f64;
    let mut g = x_hat.clone();
    for (gv, xv) in g.data_mut().iter_mut().zip(x.data()) {
        *gv = scale * (*gv - xv);
    }
    Ok(g)
}

fn check_same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(input_err!("shape mismatch: {:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

/// Checks that `labels` is a one-hot matrix matching `probs` and returns the class of each row.
fn label_classes(probs: &ClassProbabilities, labels: &Tensor) -> Result<alloc::vec::Vec<usize>> {
    check_same_shape(&probs.probs, labels)?;
    (0..labels.rows())
        .map(|i| {
            let row = labels.row(i);
            let ones = row.iter().filter(|&&v| v == 1.0).count();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || zeros + 1 != row.len() {
                return Err(input_err!("label row {i} is not one-hot"));
            }
            Ok(row.iter().position(|&v| v == 1.0).expect("one entry is 1"))
        })
        .collect()
}

fn clamped_ln(p: f64) -> f64 {
    libm::log(p.max(LOG_EPS))
}

/// Mean cross-entropy `−Σ_i y_i log p_i` of the expression classifier.
pub fn expression_loss(probs: &ClassProbabilities, labels: &Tensor) -> Result<f64> {
    let classes = label_classes(probs, labels)?;
    let n = classes.len().max(1) as f64;
    Ok(classes.iter().enumerate().map(|(i, &c)| -clamped_ln(probs.probs.row(i)[c])).sum::<f64>() / n)
}

/// Gradient of [`expression_loss`] with respect to the probabilities.
pub fn expression_loss_grad(probs: &ClassProbabilities, labels: &Tensor) -> Result<Tensor> {
    let classes = label_classes(probs, labels)?;
    let n = classes.len().max(1) as f64;
    let mut g = Tensor::zeros(probs.probs.shape());
    for (i, &c) in classes.iter().enumerate() {
        let p = probs.probs.row(i)[c];
        if p > LOG_EPS {
            g.row_mut(i)[c] = -1.0 / (n * p);
        }
    }
    Ok(g)
}

/// The adversary's own cross-entropy; same formula as [`expression_loss`].
pub fn adversary_classification_loss(probs: &ClassProbabilities, labels: &Tensor) -> Result<f64> {
    expression_loss(probs, labels)
}

pub fn adversary_classification_loss_grad(probs: &ClassProbabilities, labels: &Tensor) -> Result<Tensor> {
    expression_loss_grad(probs, labels)
}

/// Cross-entropy against the uniform distribution, `−(1/N) Σ_i log p_i`,
/// averaged over the batch. Minimal (`ln N`) exactly at the uniform row.
pub fn fooling_loss(probs: &ClassProbabilities) -> f64 {
    let (rows, n) = (probs.probs.rows(), probs.n_classes());
    if rows == 0 || n == 0 {
        return 0.0;
    }
    let total: f64 = probs.probs.data().iter().map(|&p| -clamped_ln(p)).sum();
    total / (rows * n) as f64
}

/// Gradient of [`fooling_loss`] with respect to the probabilities.
pub fn fooling_loss_grad(probs: &ClassProbabilities) -> Tensor {
    let (rows, n) = (probs.probs.rows(), probs.n_classes());
    let scale = (rows * n).max(1) as f64;
    let mut g = probs.probs.clone();
    for v in g.data_mut() {
        *v = if *v > LOG_EPS { -1.0 / (scale * *v) } else { 0.0 };
    }
    g
}
