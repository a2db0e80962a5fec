//! Alternating, parameter-partitioned optimization.
//!
//! Every round takes `adv_steps_per_main` adversary steps followed by one main
//! step. The main step minimizes `β1·L_r + β2·L_exp + β3·L_adv_en` with the
//! adversary heads treated as constants; the adversary step minimizes the
//! adversaries' own cross-entropy with the codes treated as constants.
//!
//! | term         | updated groups                      |
//! |--------------|-------------------------------------|
//! | `L_exp`      | en_base, b_exp, c_exp               |
//! | `L_adv_en`   | en_base, b_non_exp                  |
//! | `L_adv_en` (identity adversary) | en_base, b_exp   |
//! | `L_r`        | en_base, b_exp, b_non_exp, de       |
//! | `L_adv_exp`  | c_adv_exp (and c_adv_id)            |
//!
//! A term whose weight is zero routes nothing.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Batch, Dataset};
use crate::error::{config_err, Error, Result};
use crate::eval::{head_accuracy, Head};
use crate::losses::{self, LossReport, LossWeights};
use crate::model::{softmax_backward, ClassProbabilities, GroupId, ModelConfig, ModelParams, Network, ParamGroup, RepresentationPair};
use crate::nn::{Stack, StackTape};
use crate::optim::{Adam, OptimizerState};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate_main: f64,
    pub learning_rate_adv: f64,
    pub adv_steps_per_main: usize,
    pub seed: u64,
    /// Metrics are recorded after every `log_every` rounds.
    pub log_every: u64,
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            epochs: 10,
            batch_size: 32,
            learning_rate_main: 1e-4,
            learning_rate_adv: 1e-4,
            adv_steps_per_main: 1,
            seed: 0,
            log_every: 50,
            checkpoint_every: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch_size == 0 || self.adv_steps_per_main == 0 || self.log_every == 0 || self.checkpoint_every == 0 {
            return Err(config_err!("batch_size, adv_steps_per_main, log_every and checkpoint_every must be positive"));
        }
        for (name, lr) in [("learning_rate_main", self.learning_rate_main), ("learning_rate_adv", self.learning_rate_adv)] {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(config_err!("{name} must be finite and non-negative, got {lr}"));
            }
        }
        Ok(())
    }
}

/// Seed of the per-epoch shuffles; epoch `e` uses stream `e` of a ChaCha8 generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
}

impl RngState {
    fn epoch_order(&self, epoch: u64, n: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        order
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    /// Completed rounds (one main step each).
    pub step: u64,
    pub rng: RngState,
}

/// One row of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub report: LossReport,
    pub acc_c_exp: f64,
    pub acc_c_adv: f64,
}

/// Receives metrics rows and checkpoint requests while training runs.
pub trait TrainObserver {
    fn on_metrics(&mut self, _row: &MetricsRow) -> Result<()> {
        Ok(())
    }

    fn on_checkpoint(&mut self, _state: &TrainState) -> Result<()> {
        Ok(())
    }
}

/// Observer that ignores everything.
pub struct NoObserver;

impl TrainObserver for NoObserver {}

/// Groups the main step updates under `weights`.
pub fn main_step_groups(weights: &LossWeights, identity_adversary: bool, decoder: bool) -> Vec<GroupId> {
    let mut groups = Vec::new();
    let mut add = |ids: &[GroupId]| {
        for id in ids {
            if !groups.contains(id) {
                groups.push(*id);
            }
        }
    };
    if weights.beta2 > 0.0 {
        add(&[GroupId::EnBase, GroupId::BExp, GroupId::CExp]);
    }
    if weights.beta3 > 0.0 {
        add(&[GroupId::EnBase, GroupId::BNonExp]);
        if identity_adversary {
            add(&[GroupId::BExp]);
        }
    }
    if weights.beta1 > 0.0 && decoder {
        add(&[GroupId::EnBase, GroupId::BExp, GroupId::BNonExp, GroupId::De]);
    }
    groups.sort_unstable();
    groups
}

/// Groups the adversary step updates.
pub fn adversary_step_groups(identity_adversary: bool) -> Vec<GroupId> {
    if identity_adversary {
        alloc::vec![GroupId::CAdvExp, GroupId::CAdvId]
    } else {
        alloc::vec![GroupId::CAdvExp]
    }
}

fn grads_for(params: &ModelParams, ids: &[GroupId]) -> Vec<(GroupId, ParamGroup)> {
    ids.iter().map(|&id| (id, params.group(id).expect("routed group exists").zeros_like())).collect()
}

fn grad_slot(grads: &mut [(GroupId, ParamGroup)], id: GroupId) -> Option<&mut [Tensor]> {
    grads.iter_mut().find(|(g, _)| *g == id).map(|(_, p)| p.arrays.as_mut_slice())
}

struct HeadPass<'a> {
    stack: &'a Stack,
    params: &'a ParamGroup,
    tape: StackTape,
    probs: ClassProbabilities,
}

impl<'a> HeadPass<'a> {
    fn run(stack: &'a Stack, params: &'a ParamGroup, code: &Tensor) -> Self {
        let mut tape = StackTape::default();
        let logits = stack.forward(&params.arrays, code, Some(&mut tape));
        Self { stack, params, tape, probs: ClassProbabilities::from_logits(&logits) }
    }

    /// Backpropagates a probability gradient to the code, optionally collecting head gradients.
    fn backward(&self, dprobs: &Tensor, grads: Option<&mut [Tensor]>) -> Tensor {
        let dz = softmax_backward(&self.probs.probs, dprobs);
        self.stack.backward(&self.params.arrays, &self.tape, &dz, grads, true).expect("input gradient requested")
    }
}

fn scaled(mut t: Tensor, factor: f64) -> Tensor {
    t.scale(factor);
    t
}

fn check_finite(grads: &[(GroupId, ParamGroup)]) -> Result<()> {
    let bad: Vec<String> = grads.iter().filter(|(_, g)| !g.all_finite()).map(|(id, _)| format!("{id}")).collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("non-finite gradient in groups [{}]", bad.join(", "))))
    }
}

/// Runs the alternating optimization for one model/training configuration pair.
#[derive(Debug, Clone)]
pub struct Trainer {
    net: Network,
    config: TrainConfig,
}

impl Trainer {
    pub fn new(model: ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if config.weights.beta1 > 0.0 && !model.enable_decoder {
            return Err(config_err!("beta1 > 0 requires the decoder to be enabled"));
        }
        Ok(Self { net: Network::new(model)?, config })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn init_state(&self) -> TrainState {
        let params = self.net.init_params(self.config.seed);
        TrainState { optimizer: OptimizerState::new(&params), params, step: 0, rng: RngState { seed: self.config.seed } }
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        self.net.check_images(&batch.images)?;
        let cfg = self.net.config();
        if batch.exp.shape() != [batch.len(), cfg.n_exp_classes] {
            return Err(Error::Input(format!("expression labels have shape {:?}", batch.exp.shape())));
        }
        if cfg.enable_identity_adversary && batch.id.shape() != [batch.len(), cfg.n_id_classes.unwrap_or(0)] {
            return Err(Error::Input(format!("identity labels have shape {:?}", batch.id.shape())));
        }
        Ok(())
    }

    /// One gradient step on `β1·L_r + β2·L_exp + β3·L_adv_en`.
    ///
    /// On error the state is left untouched.
    pub fn main_step(&self, state: &mut TrainState, batch: &Batch, weights: &LossWeights) -> Result<LossReport> {
        self.check_batch(batch)?;
        weights.validate()?;
        let net = &self.net;
        let p = &state.params;
        let dual = p.c_adv_id.is_some();
        let routed = main_step_groups(weights, dual, p.de.is_some());
        let mut grads = grads_for(p, &routed);

        let mut tape_base = StackTape::default();
        let mut tape_exp = StackTape::default();
        let mut tape_non = StackTape::default();
        let h = net.en_base.forward(&p.en_base.arrays, &batch.images, Some(&mut tape_base));
        let code_exp = net.b_exp.forward(&p.b_exp.arrays, &h, Some(&mut tape_exp));
        let code_non = net.b_non_exp.forward(&p.b_non_exp.arrays, &h, Some(&mut tape_non));
        let mut d_exp = Tensor::zeros(code_exp.shape());
        let mut d_non = Tensor::zeros(code_non.shape());

        let cls = HeadPass::run(&net.c_exp, &p.c_exp, &code_exp);
        let l_exp = losses::expression_loss(&cls.probs, &batch.exp)?;
        if weights.beta2 > 0.0 {
            let dp = scaled(losses::expression_loss_grad(&cls.probs, &batch.exp)?, weights.beta2);
            d_exp.add_assign(&cls.backward(&dp, grad_slot(&mut grads, GroupId::CExp)));
        }

        // adversary parameters are constants here: no gradient slot
        let adv = HeadPass::run(&net.c_adv_exp, &p.c_adv_exp, &code_non);
        let l_adv_exp = losses::adversary_classification_loss(&adv.probs, &batch.exp)?;
        let l_adv_en = losses::fooling_loss(&adv.probs);
        if weights.beta3 > 0.0 {
            let dp = scaled(losses::fooling_loss_grad(&adv.probs), weights.beta3);
            d_non.add_assign(&adv.backward(&dp, None));
        }

        let mut id_terms = None;
        if let (Some(stack), Some(group)) = (&net.c_adv_id, &p.c_adv_id) {
            let adv_id = HeadPass::run(stack, group, &code_exp);
            let l_adv_id = losses::adversary_classification_loss(&adv_id.probs, &batch.id)?;
            let l_en_id = losses::fooling_loss(&adv_id.probs);
            if weights.beta3 > 0.0 {
                let dp = scaled(losses::fooling_loss_grad(&adv_id.probs), weights.beta3);
                d_exp.add_assign(&adv_id.backward(&dp, None));
            }
            id_terms = Some((l_adv_id, l_en_id));
        }

        let mut l_r = 0.0;
        if let (Some(stack), Some(group)) = (&net.de, &p.de) {
            let z = Tensor::concat_cols(&code_exp, &code_non)?;
            if weights.beta1 > 0.0 {
                let mut tape = StackTape::default();
                let x_hat = stack.forward(&group.arrays, &z, Some(&mut tape));
                l_r = losses::reconstruction_loss(&batch.images, &x_hat)?;
                let dx = scaled(losses::reconstruction_loss_grad(&batch.images, &x_hat)?, weights.beta1);
                let dz = stack
                    .backward(&group.arrays, &tape, &dx, grad_slot(&mut grads, GroupId::De), true)
                    .expect("input gradient requested");
                let (de, dn) = dz.split_cols(code_exp.row_len());
                d_exp.add_assign(&de);
                d_non.add_assign(&dn);
            } else {
                let x_hat = stack.forward(&group.arrays, &z, None);
                l_r = losses::reconstruction_loss(&batch.images, &x_hat)?;
            }
        }

        let mut dh = Tensor::zeros(h.shape());
        if routed.contains(&GroupId::BExp) {
            let g = net.b_exp.backward(&p.b_exp.arrays, &tape_exp, &d_exp, grad_slot(&mut grads, GroupId::BExp), true);
            dh.add_assign(&g.expect("input gradient requested"));
        }
        if routed.contains(&GroupId::BNonExp) {
            let g = net.b_non_exp.backward(&p.b_non_exp.arrays, &tape_non, &d_non, grad_slot(&mut grads, GroupId::BNonExp), true);
            dh.add_assign(&g.expect("input gradient requested"));
        }
        if routed.contains(&GroupId::EnBase) {
            net.en_base.backward(&p.en_base.arrays, &tape_base, &dh, grad_slot(&mut grads, GroupId::EnBase), false);
        }

        let mut report = LossReport::new(l_r, l_exp, l_adv_exp, l_adv_en, weights);
        if let Some((a, b)) = id_terms {
            report = report.with_identity_terms(a, b, weights);
        }
        if !report.all_finite() {
            return Err(Error::NonFinite(format!("non-finite loss in main step {}: {report:?}", state.step)));
        }
        check_finite(&grads)?;

        let adam = Adam::new(self.config.learning_rate_main);
        for (id, g) in &grads {
            let group = state.params.group_mut(*id).expect("routed group exists");
            adam.step(group, g, state.optimizer.moments_mut(*id));
        }
        Ok(report)
    }

    /// One gradient step on the adversaries' cross-entropy; only the adversary
    /// heads change. Returns the expression adversary's loss.
    pub fn adversary_step(&self, state: &mut TrainState, batch: &Batch) -> Result<f64> {
        self.adversary_steps(state, batch, 1)
    }

    /// `k` consecutive adversary steps on one batch. The encoder is frozen
    /// meanwhile, so the codes are computed once. Returns the last loss.
    pub fn adversary_steps(&self, state: &mut TrainState, batch: &Batch, k: usize) -> Result<f64> {
        self.check_batch(batch)?;
        let pair = self.net.encode(&state.params, &batch.images)?;
        let mut loss = f64::NAN;
        for _ in 0..k {
            loss = self.adversary_update(state, batch, &pair)?;
        }
        Ok(loss)
    }

    fn adversary_update(&self, state: &mut TrainState, batch: &Batch, pair: &RepresentationPair) -> Result<f64> {
        let net = &self.net;
        let p = &state.params;
        let dual = p.c_adv_id.is_some();
        let mut grads = grads_for(p, &adversary_step_groups(dual));

        let adv = HeadPass::run(&net.c_adv_exp, &p.c_adv_exp, &pair.code_non_exp);
        let loss = losses::adversary_classification_loss(&adv.probs, &batch.exp)?;
        let dp = losses::adversary_classification_loss_grad(&adv.probs, &batch.exp)?;
        let dz = softmax_backward(&adv.probs.probs, &dp);
        net.c_adv_exp.backward(&p.c_adv_exp.arrays, &adv.tape, &dz, grad_slot(&mut grads, GroupId::CAdvExp), false);

        let mut id_loss = 0.0;
        if let (Some(stack), Some(group)) = (&net.c_adv_id, &p.c_adv_id) {
            let head = HeadPass::run(stack, group, &pair.code_exp);
            id_loss = losses::adversary_classification_loss(&head.probs, &batch.id)?;
            let dp = losses::adversary_classification_loss_grad(&head.probs, &batch.id)?;
            let dz = softmax_backward(&head.probs.probs, &dp);
            stack.backward(&group.arrays, &head.tape, &dz, grad_slot(&mut grads, GroupId::CAdvId), false);
        }

        if !(loss.is_finite() && id_loss.is_finite()) {
            return Err(Error::NonFinite(format!("non-finite adversary loss in step {}", state.step)));
        }
        check_finite(&grads)?;
        let adam = Adam::new(self.config.learning_rate_adv);
        for (id, g) in &grads {
            let group = state.params.group_mut(*id).expect("adversary group exists");
            adam.step(group, g, state.optimizer.moments_mut(*id));
        }
        Ok(loss)
    }

    pub fn rounds_per_epoch(&self, train_len: usize) -> u64 {
        train_len.div_ceil(self.config.batch_size) as u64
    }

    pub fn total_rounds(&self, train_len: usize) -> u64 {
        self.rounds_per_epoch(train_len) * self.config.epochs as u64
    }

    /// Continues training from `state` until all epochs are done or
    /// `state.step` reaches `stop_at`. Returns the metrics rows emitted.
    pub fn run(
        &self,
        state: &mut TrainState,
        train: &Dataset,
        val: &Dataset,
        observer: &mut dyn TrainObserver,
        stop_at: Option<u64>,
    ) -> Result<Vec<MetricsRow>> {
        if train.is_empty() || val.is_empty() {
            return Err(config_err!("training and validation sets must be non-empty"));
        }
        self.net.check_params(&state.params)?;
        let per_epoch = self.rounds_per_epoch(train.len());
        let end = stop_at.map_or(self.total_rounds(train.len()), |s| s.min(self.total_rounds(train.len())));
        let bs = self.config.batch_size;
        let mut rows = Vec::new();
        let mut order: Option<(u64, Vec<usize>)> = None;
        let mut failures = 0;

        while state.step < end {
            let epoch = state.step / per_epoch;
            if order.as_ref().map(|(e, _)| *e) != Some(epoch) {
                order = Some((epoch, state.rng.epoch_order(epoch, train.len())));
            }
            let idx = &order.as_ref().expect("set above").1;
            let b = (state.step % per_epoch) as usize;
            let batch = train.batch(&idx[b * bs..((b + 1) * bs).min(idx.len())]);

            let outcome = self
                .adversary_steps(state, &batch, self.config.adv_steps_per_main)
                .and_then(|_| self.main_step(state, &batch, &self.config.weights));
            state.step += 1;
            let report = match outcome {
                Ok(r) => {
                    failures = 0;
                    r
                }
                Err(Error::NonFinite(msg)) => {
                    failures += 1;
                    if failures >= 3 {
                        return Err(Error::NonFinite(format!("aborting after 3 consecutive non-finite rounds (last at step {}): {msg}", state.step)));
                    }
                    continue;
                }
                Err(e) => return Err(e),
            };

            if state.step.is_multiple_of(self.config.log_every) {
                let row = MetricsRow {
                    step: state.step,
                    report,
                    acc_c_exp: head_accuracy(&self.net, &state.params, val, Head::Expression)?,
                    acc_c_adv: head_accuracy(&self.net, &state.params, val, Head::Adversary)?,
                };
                observer.on_metrics(&row)?;
                rows.push(row);
            }
            if state.step.is_multiple_of(self.config.checkpoint_every) {
                observer.on_checkpoint(state)?;
            }
        }
        Ok(rows)
    }
}

/// Trains from scratch; returns the final state and all metrics rows.
pub fn train(
    model: &ModelConfig,
    config: &TrainConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    observer: &mut dyn TrainObserver,
) -> Result<(TrainState, Vec<MetricsRow>)> {
    let trainer = Trainer::new(model.clone(), config.clone())?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(config_err!("training and validation sets must be non-empty"));
    }
    let mut state = trainer.init_state();
    if config.epochs == 0 {
        return Ok((state, Vec::new()));
    }
    let rows = trainer.run(&mut state, train_set, val_set, observer, None)?;
    Ok((state, rows))
}
