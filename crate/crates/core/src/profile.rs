//! Desk-scale settings: a 2-block, 64-wide encoder sized for the default
//! synthetic data (8 landmarks in 2-D) and short training budgets.

use crate::eval::EvalConfig;
use crate::model::{EncoderConfig, HeadConfig, ModelConfig, PositionalEncoding};
use crate::trainer::PretrainConfig;

pub const TINY_LEARNING_RATE: f64 = 0.02;
pub const TINY_HEAD_INIT_STD: f64 = 0.125;
/// At two blocks the 0.02 default leaves the encoder close to order-blind.
pub const TINY_ENCODER_INIT_STD: f64 = 0.1;

pub fn tiny_model() -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            input_dim: 16,
            blocks: 2,
            heads: 4,
            embed_dim: 64,
            ffn_dim: 128,
            max_len: 64,
            positional_encoding: PositionalEncoding::Sinusoidal,
            init_std: TINY_ENCODER_INIT_STD,
            ..EncoderConfig::default()
        },
        head: HeadConfig {
            projection_hidden: 64,
            projection_out: 64,
            predictor_hidden: 64,
            init_std: TINY_HEAD_INIT_STD,
        },
    }
}

pub fn tiny_pretrain() -> PretrainConfig {
    PretrainConfig {
        epochs: 20,
        batch_size: 32,
        learning_rate: TINY_LEARNING_RATE,
        ..PretrainConfig::default()
    }
}

pub fn tiny_eval() -> EvalConfig {
    EvalConfig {
        finetune_epochs: 100,
        warmup_steps: 60,
        repeats: 3,
        ..EvalConfig::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_profile_is_valid() {
        let m = tiny_model();
        m.validate().unwrap();
        assert_eq!((m.encoder.blocks, m.encoder.embed_dim), (2, 64));
        let p = tiny_pretrain();
        p.validate().unwrap();
        assert_eq!((p.batch_size, p.epochs), (32, 20));
        tiny_eval().validate().unwrap();
    }
}
