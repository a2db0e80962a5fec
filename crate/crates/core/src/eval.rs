//! Measurements on trained models: head accuracies, linear probes on frozen
//! codes, code similarity, factor-swap synthesis and the reconstruction-weight
//! ablation.

use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{one_hot, Dataset};
use crate::error::{config_err, input_err, Error, Result};
use crate::losses;
use crate::model::{argmax, softmax_backward, ClassProbabilities, ModelConfig, ModelParams, Network, ParamGroup, RepresentationPair};
use crate::optim::{Adam, AdamMoments};
use crate::tensor::{gemm, MatRef, Tensor};
use crate::training::{train, NoObserver, TrainConfig};

const EVAL_BATCH: usize = 256;

/// Which classifier head to score, each on its designated code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// `c_exp` on `code_exp`, against expression labels.
    Expression,
    /// `c_adv_exp` on `code_non_exp`, against expression labels.
    Adversary,
    /// `c_adv_id` on `code_exp`, against identity labels.
    IdentityAdversary,
}

/// Encodes a whole dataset in fixed-size chunks.
pub fn encode_dataset(net: &Network, params: &ModelParams, dataset: &Dataset) -> Result<RepresentationPair> {
    let d = net.config().code_dim;
    let mut exp = Vec::with_capacity(dataset.len() * d);
    let mut non = Vec::with_capacity(dataset.len() * d);
    let all: Vec<usize> = (0..dataset.len()).collect();
    for chunk in all.chunks(EVAL_BATCH) {
        let pair = net.encode(params, &dataset.images(chunk))?;
        exp.extend_from_slice(pair.code_exp.data());
        non.extend_from_slice(pair.code_non_exp.data());
    }
    Ok(RepresentationPair {
        code_exp: Tensor::from_vec(&[dataset.len(), d], exp)?,
        code_non_exp: Tensor::from_vec(&[dataset.len(), d], non)?,
    })
}

/// Fraction of argmax-correct predictions (ties go to the lowest class index).
pub fn head_accuracy(net: &Network, params: &ModelParams, dataset: &Dataset, head: Head) -> Result<f64> {
    if dataset.is_empty() {
        return Err(input_err!("cannot score a head on an empty dataset"));
    }
    let pair = encode_dataset(net, params, dataset)?;
    let (probs, labels) = match head {
        Head::Expression => (net.classify_expression(params, &pair.code_exp)?, dataset.exp_labels()),
        Head::Adversary => (net.adversary_predict(params, &pair.code_non_exp)?, dataset.exp_labels()),
        Head::IdentityAdversary => (net.identity_adversary_predict(params, &pair.code_exp)?, dataset.id_labels()),
    };
    Ok(accuracy(&probs.argmax(), &labels))
}

fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    let correct = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    correct as f64 / labels.len().max(1) as f64
}

/// `⟨a, b⟩ / (‖a‖ ‖b‖)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(input_err!("vector lengths differ: {} vs {}", a.len(), b.len()));
    }
    let na = libm::sqrt(a.iter().map(|v| v * v).sum::<f64>());
    let nb = libm::sqrt(b.iter().map(|v| v * v).sum::<f64>());
    if na == 0.0 || nb == 0.0 {
        return Err(input_err!("cosine similarity is undefined for a zero vector"));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Mean pairwise cosine similarity within and across classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilaritySummary {
    pub same_class: f64,
    pub cross_class: f64,
    pub same_pairs: usize,
    pub cross_pairs: usize,
}

impl SimilaritySummary {
    pub fn gap(&self) -> f64 {
        self.same_class - self.cross_class
    }
}

/// Averages cosine similarity over all unordered pairs of rows of `codes`,
/// separately for pairs sharing a label and pairs that do not. Zero rows are skipped.
pub fn class_similarity(codes: &Tensor, labels: &[usize]) -> Result<SimilaritySummary> {
    if codes.rows() != labels.len() {
        return Err(input_err!("{} codes but {} labels", codes.rows(), labels.len()));
    }
    let (mut same, mut cross) = ((0.0, 0usize), (0.0, 0usize));
    for i in 0..codes.rows() {
        for j in i + 1..codes.rows() {
            let Ok(c) = cosine_similarity(codes.row(i), codes.row(j)) else { continue };
            let acc = if labels[i] == labels[j] { &mut same } else { &mut cross };
            acc.0 += c;
            acc.1 += 1;
        }
    }
    if same.1 == 0 || cross.1 == 0 {
        return Err(input_err!("need at least one same-class and one cross-class pair"));
    }
    Ok(SimilaritySummary {
        same_class: same.0 / same.1 as f64,
        cross_class: cross.0 / cross.1 as f64,
        same_pairs: same.1,
        cross_pairs: cross.1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    /// Mean held-out accuracy over the folds.
    pub accuracy: f64,
    /// Frequency of the most common class.
    pub chance: f64,
    pub gap: f64,
    /// Number of held-out predictions made.
    pub n_eval: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub folds: usize,
    pub learning_rate: f64,
    /// Full-batch optimizer iterations per fold.
    pub iterations: usize,
    pub seed: u64,
    /// Rescale each feature to unit variance on the training fold.
    pub standardize: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { folds: 5, learning_rate: 0.02, iterations: 300, seed: 0, standardize: true }
    }
}

/// Trains a fresh affine+softmax classifier per fold on frozen codes and
/// reports the mean accuracy on the held-out folds.
///
/// Folds are stratified by label. Features are standardized with the
/// training fold's statistics.
pub fn linear_probe(codes: &Tensor, labels: &[usize], config: &ProbeConfig) -> Result<ProbeResult> {
    let n = codes.rows();
    if n != labels.len() || codes.shape().len() != 2 {
        return Err(input_err!("expected codes [n, d] with n labels"));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        counts[l] += 1;
    }
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(input_err!("linear probe needs at least two distinct labels"));
    }
    if config.folds < 2 || n < config.folds * n_classes {
        return Err(config_err!("need folds >= 2 and at least folds * classes = {} samples, got {n}", config.folds * n_classes));
    }

    // stratified fold assignment
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut fold_of = vec![0usize; n];
    for class in 0..n_classes {
        let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        for (k, i) in members.into_iter().enumerate() {
            fold_of[i] = k % config.folds;
        }
    }

    let mut total_acc = 0.0;
    let mut n_eval = 0;
    for fold in 0..config.folds {
        let train_idx: Vec<usize> = (0..n).filter(|&i| fold_of[i] != fold).collect();
        let test_idx: Vec<usize> = (0..n).filter(|&i| fold_of[i] == fold).collect();
        let mut in_train = vec![false; n];
        for &i in &train_idx {
            in_train[i] = true;
        }
        if test_idx.iter().any(|&i| in_train[i]) {
            return Err(Error::Input("probe fold overlaps its training data".into()));
        }
        let probe = AffineProbe::fit(codes, labels, &train_idx, n_classes, config)?;
        let pred = probe.predict(&codes.gather_rows(&test_idx));
        let truth: Vec<usize> = test_idx.iter().map(|&i| labels[i]).collect();
        total_acc += accuracy(&pred, &truth);
        n_eval += test_idx.len();
    }
    let accuracy = total_acc / config.folds as f64;
    let chance = *counts.iter().max().expect("non-empty") as f64 / n as f64;
    Ok(ProbeResult { accuracy, chance, gap: accuracy - chance, n_eval })
}

struct AffineProbe {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
    weight: Tensor,
    bias: Tensor,
}

impl AffineProbe {
    fn standardize(&self, x: &Tensor) -> Tensor {
        let mut z = x.clone();
        for i in 0..z.rows() {
            for ((v, m), s) in z.row_mut(i).iter_mut().zip(&self.mean).zip(&self.inv_std) {
                *v = (*v - m) * s;
            }
        }
        z
    }

    fn logits(&self, z: &Tensor) -> Tensor {
        let (n, d) = (z.rows(), z.row_len());
        let k = self.bias.len();
        let mut out = Tensor::zeros(&[n, k]);
        for i in 0..n {
            out.row_mut(i).copy_from_slice(self.bias.data());
        }
        gemm(MatRef::new(z.data(), n, d), MatRef::new(self.weight.data(), d, k), 1.0, out.data_mut());
        out
    }

    fn fit(codes: &Tensor, labels: &[usize], idx: &[usize], n_classes: usize, config: &ProbeConfig) -> Result<Self> {
        let x = codes.gather_rows(idx);
        let d = x.row_len();
        let n = x.rows() as f64;
        let mut mean = vec![0.0; d];
        for i in 0..x.rows() {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for i in 0..x.rows() {
            for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let inv_std = if config.standardize {
            var.iter().map(|v| if *v > 1e-24 { 1.0 / libm::sqrt(*v) } else { 0.0 }).collect()
        } else {
            vec![1.0; d]
        };
        let mut probe = Self { mean, inv_std, weight: Tensor::zeros(&[d, n_classes]), bias: Tensor::zeros(&[n_classes]) };
        let z = probe.standardize(&x);
        let y = one_hot(&idx.iter().map(|&i| labels[i]).collect::<Vec<_>>(), n_classes);

        let adam = Adam::new(config.learning_rate);
        let mut group = ParamGroup { arrays: vec![probe.weight.clone(), probe.bias.clone()] };
        let mut moments = AdamMoments::for_group(&group);
        for _ in 0..config.iterations {
            probe.weight = group.arrays[0].clone();
            probe.bias = group.arrays[1].clone();
            let probs = ClassProbabilities::from_logits(&probe.logits(&z));
            let dp = losses::expression_loss_grad(&probs, &y)?;
            let dl = softmax_backward(&probs.probs, &dp);
            let mut gw = Tensor::zeros(&[d, n_classes]);
            gemm(MatRef::new(z.data(), z.rows(), d).t(), MatRef::new(dl.data(), z.rows(), n_classes), 0.0, gw.data_mut());
            let mut gb = Tensor::zeros(&[n_classes]);
            for i in 0..dl.rows() {
                for (g, v) in gb.data_mut().iter_mut().zip(dl.row(i)) {
                    *g += v;
                }
            }
            adam.step(&mut group, &ParamGroup { arrays: vec![gw, gb] }, &mut moments);
        }
        probe.weight = group.arrays[0].clone();
        probe.bias = group.arrays[1].clone();
        Ok(probe)
    }

    fn predict(&self, x: &Tensor) -> Vec<usize> {
        let logits = self.logits(&self.standardize(x));
        (0..logits.rows()).map(|i| argmax(logits.row(i))).collect()
    }
}

/// Originals, reconstructions and cross-factor syntheses of two image batches.
#[derive(Debug, Clone, PartialEq)]
pub struct SwapQuad {
    pub x1: Tensor,
    pub x2: Tensor,
    pub x1_rec: Tensor,
    pub x2_rec: Tensor,
    /// Expression of `x2` on the non-expression code of `x1`.
    pub x1_swap: Tensor,
    /// Expression of `x1` on the non-expression code of `x2`.
    pub x2_swap: Tensor,
}

/// Decodes each image's own codes and the codes with expression swapped.
pub fn swap_synthesis(net: &Network, params: &ModelParams, x1: &Tensor, x2: &Tensor) -> Result<SwapQuad> {
    if params.de.is_none() {
        return Err(Error::Config("swap synthesis needs the decoder".into()));
    }
    if x1.shape() != x2.shape() {
        return Err(input_err!("image batches differ in shape: {:?} vs {:?}", x1.shape(), x2.shape()));
    }
    let a = net.encode(params, x1)?;
    let b = net.encode(params, x2)?;
    let mix = |exp: &RepresentationPair, non: &RepresentationPair| RepresentationPair {
        code_exp: exp.code_exp.clone(),
        code_non_exp: non.code_non_exp.clone(),
    };
    Ok(SwapQuad {
        x1_rec: net.decode(params, &a)?,
        x2_rec: net.decode(params, &b)?,
        x1_swap: net.decode(params, &mix(&b, &a))?,
        x2_swap: net.decode(params, &mix(&a, &b))?,
        x1: x1.clone(),
        x2: x2.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub beta1: f64,
    pub acc_c_exp: f64,
    pub acc_c_adv: f64,
}

/// Trains one model per reconstruction weight, all else equal, and scores both
/// heads on `eval_set`. The decoder is enabled for every run when any weight
/// is positive so the runs differ only in `beta1`.
pub fn ablation_reconstruction(
    model: &ModelConfig,
    config: &TrainConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    eval_set: &Dataset,
    beta1_values: &[f64],
) -> Result<Vec<AblationRow>> {
    if beta1_values.is_empty() {
        return Err(config_err!("need at least one beta1 value"));
    }
    if let Some(b) = beta1_values.iter().find(|b| !(b.is_finite() && **b >= 0.0)) {
        return Err(config_err!("beta1 must be finite and non-negative, got {b}"));
    }
    let mut model = model.clone();
    if beta1_values.iter().any(|&b| b > 0.0) {
        model.enable_decoder = true;
    }
    let net = Network::new(model.clone())?;
    beta1_values
        .iter()
        .map(|&beta1| {
            let mut cfg = config.clone();
            cfg.weights.beta1 = beta1;
            let (state, _) = train(&model, &cfg, train_set, val_set, &mut NoObserver)?;
            Ok(AblationRow {
                beta1,
                acc_c_exp: head_accuracy(&net, &state.params, eval_set, Head::Expression)?,
                acc_c_adv: head_accuracy(&net, &state.params, eval_set, Head::Adversary)?,
            })
        })
        .collect()
}
