//! Network topology and pure forward operations.
//!
//! A shared convolutional trunk (`en_base`) feeds two branches producing the
//! expression code and the non-expression code. Linear softmax heads read the
//! codes, and an optional decoder reconstructs the image from their
//! concatenation.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, input_err, Error, Result};
use crate::nn::{Activation, Layer, Stack};
use crate::tensor::{Tensor, FNV_OFFSET};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Side length of the square input images, in pixels.
    pub image_size: usize,
    /// 1 (grayscale) or 3 (RGB).
    pub channels: usize,
    /// Length of each of the two codes.
    pub code_dim: usize,
    pub n_exp_classes: usize,
    /// Only needed with the identity adversary.
    pub n_id_classes: Option<usize>,
    /// Channel widths of the stride-2 convolutions of the shared trunk.
    pub encoder_widths: Vec<usize>,
    pub branch_width: usize,
    pub branch_depth: usize,
    pub decoder_width: usize,
    pub decoder_depth: usize,
    pub leaky_slope: f64,
    pub enable_decoder: bool,
    pub enable_identity_adversary: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            channels: 1,
            code_dim: 64,
            n_exp_classes: 4,
            n_id_classes: None,
            encoder_widths: vec![8, 16],
            branch_width: 16,
            branch_depth: 4,
            decoder_width: 16,
            decoder_depth: 6,
            leaky_slope: 0.2,
            enable_decoder: false,
            enable_identity_adversary: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 {
            return Err(config_err!("image_size must be positive"));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(config_err!("channels must be 1 or 3, got {}", self.channels));
        }
        if self.code_dim == 0 || self.n_exp_classes == 0 {
            return Err(config_err!("code_dim and n_exp_classes must be positive"));
        }
        if self.encoder_widths.is_empty() || self.encoder_widths.contains(&0) {
            return Err(config_err!("encoder_widths must be a non-empty list of positive widths"));
        }
        if self.branch_depth == 0 || self.branch_width == 0 {
            return Err(config_err!("branch_depth and branch_width must be positive"));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(config_err!("leaky_slope must lie in (0, 1), got {}", self.leaky_slope));
        }
        if self.enable_decoder && (self.decoder_depth == 0 || self.decoder_width == 0) {
            return Err(config_err!("decoder enabled with depth {} and width {}", self.decoder_depth, self.decoder_width));
        }
        if self.enable_identity_adversary && !matches!(self.n_id_classes, Some(n) if n > 0) {
            return Err(config_err!("identity adversary requires n_id_classes"));
        }
        Ok(())
    }

    /// Number of upsampling layers and the side of the decoder's starting grid.
    ///
    /// The side is halved while it stays even and at least 2; the remaining
    /// decoder layers keep the resolution.
    fn decoder_plan(&self) -> (usize, usize) {
        let mut side = self.image_size;
        let mut ups = 0;
        while ups < self.decoder_depth && side.is_multiple_of(2) && side / 2 >= 2 {
            side /= 2;
            ups += 1;
        }
        (ups, side)
    }
}

/// Names of the parameter groups; each learnable array belongs to exactly one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GroupId {
    EnBase,
    BExp,
    BNonExp,
    De,
    CExp,
    CAdvExp,
    CAdvId,
}

impl GroupId {
    pub const ALL: [GroupId; 7] = [
        GroupId::EnBase,
        GroupId::BExp,
        GroupId::BNonExp,
        GroupId::De,
        GroupId::CExp,
        GroupId::CAdvExp,
        GroupId::CAdvId,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GroupId::EnBase => "en_base",
            GroupId::BExp => "b_exp",
            GroupId::BNonExp => "b_non_exp",
            GroupId::De => "de",
            GroupId::CExp => "c_exp",
            GroupId::CAdvExp => "c_adv_exp",
            GroupId::CAdvId => "c_adv_id",
        }
    }

    fn stream(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Flat list of arrays (weight, bias, weight, bias, ...) for one component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub arrays: Vec<Tensor>,
}

impl ParamGroup {
    pub fn fingerprint(&self) -> u64 {
        self.arrays.iter().fold(FNV_OFFSET, |h, a| a.fingerprint(h))
    }

    pub fn zeros_like(&self) -> Self {
        Self { arrays: self.arrays.iter().map(|a| Tensor::zeros(a.shape())).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.arrays.iter().all(Tensor::all_finite)
    }

    pub fn num_values(&self) -> usize {
        self.arrays.iter().map(Tensor::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub en_base: ParamGroup,
    pub b_exp: ParamGroup,
    pub b_non_exp: ParamGroup,
    pub de: Option<ParamGroup>,
    pub c_exp: ParamGroup,
    pub c_adv_exp: ParamGroup,
    pub c_adv_id: Option<ParamGroup>,
}

impl ModelParams {
    pub fn group(&self, id: GroupId) -> Option<&ParamGroup> {
        match id {
            GroupId::EnBase => Some(&self.en_base),
            GroupId::BExp => Some(&self.b_exp),
            GroupId::BNonExp => Some(&self.b_non_exp),
            GroupId::De => self.de.as_ref(),
            GroupId::CExp => Some(&self.c_exp),
            GroupId::CAdvExp => Some(&self.c_adv_exp),
            GroupId::CAdvId => self.c_adv_id.as_ref(),
        }
    }

    pub fn group_mut(&mut self, id: GroupId) -> Option<&mut ParamGroup> {
        match id {
            GroupId::EnBase => Some(&mut self.en_base),
            GroupId::BExp => Some(&mut self.b_exp),
            GroupId::BNonExp => Some(&mut self.b_non_exp),
            GroupId::De => self.de.as_mut(),
            GroupId::CExp => Some(&mut self.c_exp),
            GroupId::CAdvExp => Some(&mut self.c_adv_exp),
            GroupId::CAdvId => self.c_adv_id.as_mut(),
        }
    }

    /// Present groups in canonical order.
    pub fn groups(&self) -> impl Iterator<Item = (GroupId, &ParamGroup)> {
        GroupId::ALL.into_iter().filter_map(move |id| self.group(id).map(|g| (id, g)))
    }

    /// Fingerprint of every present group, in canonical order.
    pub fn fingerprints(&self) -> Vec<(GroupId, u64)> {
        self.groups().map(|(id, g)| (id, g.fingerprint())).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.groups().all(|(_, g)| g.all_finite())
    }
}

/// `code_exp` and `code_non_exp` for a batch, each `[batch, code_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationPair {
    pub code_exp: Tensor,
    pub code_non_exp: Tensor,
}

/// Softmax outputs of a classifier head, `[batch, n_classes]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbabilities {
    pub probs: Tensor,
}

impl ClassProbabilities {
    pub fn from_logits(logits: &Tensor) -> Self {
        let mut probs = logits.clone();
        for i in 0..probs.rows() {
            softmax_in_place(probs.row_mut(i));
        }
        Self { probs }
    }

    pub fn n_classes(&self) -> usize {
        self.probs.row_len()
    }

    /// Index of the largest probability of each row, ties resolved to the lowest index.
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.probs.rows()).map(|i| argmax(self.probs.row(i))).collect()
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - max);
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Gradient through a row-wise softmax: `dz = p ⊙ (dp − ⟨dp, p⟩)`.
pub fn softmax_backward(probs: &Tensor, dprobs: &Tensor) -> Tensor {
    let mut dz = dprobs.clone();
    for i in 0..probs.rows() {
        let p = probs.row(i);
        let dot: f64 = p.iter().zip(dprobs.row(i)).map(|(a, b)| a * b).sum();
        for (d, &pp) in dz.row_mut(i).iter_mut().zip(p) {
            *d = pp * (*d - dot);
        }
    }
    dz
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// The network topology derived from a [`ModelConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: ModelConfig,
    pub(crate) en_base: Stack,
    pub(crate) b_exp: Stack,
    pub(crate) b_non_exp: Stack,
    pub(crate) de: Option<Stack>,
    pub(crate) c_exp: Stack,
    pub(crate) c_adv_exp: Stack,
    pub(crate) c_adv_id: Option<Stack>,
}

impl Network {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let act = Activation::LeakyRelu(config.leaky_slope);

        let mut shape = (config.image_size, config.image_size, config.channels);
        let mut trunk = Vec::new();
        for &w in &config.encoder_widths {
            let layer = Layer::conv(shape, w, 3, 2, 1, act);
            shape = layer.output;
            trunk.push(layer);
        }
        let en_base = Stack::new(trunk);

        let branch = || {
            let mut s = shape;
            let mut layers = Vec::new();
            for _ in 0..config.branch_depth {
                let stride = if s.0 > 2 { 2 } else { 1 };
                let layer = Layer::conv(s, config.branch_width, 3, stride, 1, act);
                s = layer.output;
                layers.push(layer);
            }
            layers.push(Layer::dense(s.0 * s.1 * s.2, config.code_dim, Activation::Identity));
            Stack::new(layers)
        };

        let de = config.enable_decoder.then(|| {
            let (ups, side) = config.decoder_plan();
            let width = config.decoder_width;
            let mut layers = vec![Layer::dense(2 * config.code_dim, side * side * width, act)];
            let mut s = (side, side, width);
            let refine = config.decoder_depth - ups;
            for i in 0..config.decoder_depth {
                let last = i + 1 == config.decoder_depth;
                let (out_ch, layer_act) = if last { (config.channels, Activation::Sigmoid) } else { (width, act) };
                let layer = if i < refine {
                    Layer::deconv(s, out_ch, 3, 1, 1, layer_act)
                } else {
                    Layer::deconv(s, out_ch, 4, 2, 1, layer_act)
                };
                s = layer.output;
                layers.push(layer);
            }
            Stack::new(layers)
        });

        let head = |n: usize| Stack::new(vec![Layer::dense(config.code_dim, n, Activation::Identity)]);
        let c_adv_id = if config.enable_identity_adversary {
            Some(head(config.n_id_classes.expect("validated")))
        } else {
            None
        };

        let net = Self {
            b_exp: branch(),
            b_non_exp: branch(),
            en_base,
            de,
            c_exp: head(config.n_exp_classes),
            c_adv_exp: head(config.n_exp_classes),
            c_adv_id,
            config,
        };
        if let Some(de) = &net.de {
            let out = de.output_shape();
            if out != (net.config.image_size, net.config.image_size, net.config.channels) {
                return Err(config_err!("decoder produces {:?}, expected image shape", out));
            }
        }
        Ok(net)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub(crate) fn stack(&self, id: GroupId) -> Option<&Stack> {
        match id {
            GroupId::EnBase => Some(&self.en_base),
            GroupId::BExp => Some(&self.b_exp),
            GroupId::BNonExp => Some(&self.b_non_exp),
            GroupId::De => self.de.as_ref(),
            GroupId::CExp => Some(&self.c_exp),
            GroupId::CAdvExp => Some(&self.c_adv_exp),
            GroupId::CAdvId => self.c_adv_id.as_ref(),
        }
    }

    /// Deterministic initialization; each group draws from its own stream so
    /// toggling optional components leaves the other groups unchanged.
    pub fn init_params(&self, seed: u64) -> ModelParams {
        let init = |id: GroupId| {
            self.stack(id).map(|stack| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(id.stream());
                ParamGroup { arrays: stack.init(&mut rng) }
            })
        };
        ModelParams {
            en_base: init(GroupId::EnBase).expect("always present"),
            b_exp: init(GroupId::BExp).expect("always present"),
            b_non_exp: init(GroupId::BNonExp).expect("always present"),
            de: init(GroupId::De),
            c_exp: init(GroupId::CExp).expect("always present"),
            c_adv_exp: init(GroupId::CAdvExp).expect("always present"),
            c_adv_id: init(GroupId::CAdvId),
        }
    }

    /// Checks that `params` has exactly the groups and shapes this topology needs.
    pub fn check_params(&self, params: &ModelParams) -> Result<()> {
        for id in GroupId::ALL {
            match (self.stack(id), params.group(id)) {
                (None, None) => {}
                (Some(stack), Some(group)) => {
                    let shapes = stack.param_shapes();
                    let ok = shapes.len() == group.arrays.len()
                        && shapes.iter().zip(&group.arrays).all(|(s, a)| s.as_slice() == a.shape());
                    if !ok {
                        return Err(config_err!("parameter group {id} does not match the model configuration"));
                    }
                }
                (Some(_), None) => return Err(config_err!("parameter group {id} missing")),
                (None, Some(_)) => return Err(config_err!("unexpected parameter group {id}")),
            }
        }
        Ok(())
    }

    pub(crate) fn check_images(&self, x: &Tensor) -> Result<()> {
        let c = &self.config;
        let expected = [c.image_size, c.image_size, c.channels];
        if x.shape().len() != 4 || x.shape()[1..] != expected {
            return Err(input_err!("expected images [batch, {}, {}, {}], got {:?}", expected[0], expected[1], expected[2], x.shape()));
        }
        if !x.all_finite() {
            return Err(input_err!("images contain non-finite values"));
        }
        Ok(())
    }

    fn check_code(&self, code: &Tensor) -> Result<()> {
        if code.shape().len() != 2 || code.shape()[1] != self.config.code_dim {
            return Err(input_err!("expected codes [batch, {}], got {:?}", self.config.code_dim, code.shape()));
        }
        Ok(())
    }

    /// `(B_exp(En_base(x)), B_non_exp(En_base(x)))`.
    pub fn encode(&self, params: &ModelParams, x: &Tensor) -> Result<RepresentationPair> {
        self.check_images(x)?;
        let h = self.en_base.forward(&params.en_base.arrays, x, None);
        Ok(RepresentationPair {
            code_exp: self.b_exp.forward(&params.b_exp.arrays, &h, None),
            code_non_exp: self.b_non_exp.forward(&params.b_non_exp.arrays, &h, None),
        })
    }

    fn head(&self, stack: &Stack, group: &ParamGroup, code: &Tensor) -> Result<ClassProbabilities> {
        self.check_code(code)?;
        Ok(ClassProbabilities::from_logits(&stack.forward(&group.arrays, code, None)))
    }

    /// Expression classifier on `code_exp`.
    pub fn classify_expression(&self, params: &ModelParams, code_exp: &Tensor) -> Result<ClassProbabilities> {
        self.head(&self.c_exp, &params.c_exp, code_exp)
    }

    /// Expression adversary on `code_non_exp`.
    pub fn adversary_predict(&self, params: &ModelParams, code_non_exp: &Tensor) -> Result<ClassProbabilities> {
        self.head(&self.c_adv_exp, &params.c_adv_exp, code_non_exp)
    }

    /// Identity adversary on `code_exp`.
    pub fn identity_adversary_predict(&self, params: &ModelParams, code_exp: &Tensor) -> Result<ClassProbabilities> {
        match (&self.c_adv_id, &params.c_adv_id) {
            (Some(stack), Some(group)) => self.head(stack, group, code_exp),
            _ => Err(config_err!("identity adversary is not enabled")),
        }
    }

    /// Decodes the concatenation `code_exp ⊕ code_non_exp` into images.
    pub fn decode(&self, params: &ModelParams, pair: &RepresentationPair) -> Result<Tensor> {
        let (Some(stack), Some(group)) = (&self.de, &params.de) else {
            return Err(Error::Config("decoder is not enabled".into()));
        };
        self.check_code(&pair.code_exp)?;
        self.check_code(&pair.code_non_exp)?;
        if pair.code_exp.rows() != pair.code_non_exp.rows() {
            return Err(input_err!("code batches differ: {} vs {}", pair.code_exp.rows(), pair.code_non_exp.rows()));
        }
        let z = Tensor::concat_cols(&pair.code_exp, &pair.code_non_exp)?;
        Ok(stack.forward(&group.arrays, &z, None))
    }
}
