#![allow(dead_code)]

use disentangle_core::{generate_synthetic_dataset, split, ModelConfig, Splits, SyntheticSpec};

pub fn tiny_spec() -> SyntheticSpec {
    SyntheticSpec { n_exp_classes: 4, n_id_classes: 3, image_size: 16, samples_per_combo: 6, jitter: 0.05, ..SyntheticSpec::default() }
}

pub fn tiny_model(decoder: bool, identity: bool) -> ModelConfig {
    ModelConfig {
        image_size: 16,
        code_dim: 6,
        n_exp_classes: 4,
        n_id_classes: identity.then_some(3),
        encoder_widths: vec![4],
        branch_width: 4,
        branch_depth: 2,
        decoder_width: 4,
        decoder_depth: 3,
        enable_decoder: decoder,
        enable_identity_adversary: identity,
        ..ModelConfig::default()
    }
}

pub fn tiny_splits() -> Splits {
    let ds = generate_synthetic_dataset(&tiny_spec()).unwrap();
    split(&ds, [0.6, 0.2, 0.2], 0).unwrap()
}
