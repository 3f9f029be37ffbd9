use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::tokenizer::TOKENS_PER_NOTE;

/// Notes per training example and inference window.
pub const EXAMPLE_NOTES: usize = 50;
/// Tokens per training example.
pub const EXAMPLE_TOKENS: usize = EXAMPLE_NOTES * TOKENS_PER_NOTE;

fn default_init_std() -> f64 {
    0.02
}

/// Encoder-decoder shape. Both stacks use `num_layers` layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden_size: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub intermediate_size: usize,
    pub dropout: f64,
    pub max_positions: usize,
    pub vocab_size: usize,
    pub pad_id: u32,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
}

impl ModelConfig {
    /// Half of `bert-base`: 384 hidden, 6 layers, 6 heads, 1536 intermediate.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            hidden_size: 384,
            num_layers: 6,
            num_heads: 6,
            intermediate_size: 1536,
            dropout: 0.1,
            max_positions: 256,
            vocab_size,
            pad_id: 0,
            init_std: default_init_std(),
        }
    }

    /// Small enough to train on a laptop core in minutes.
    pub fn micro(vocab_size: usize) -> Self {
        Self {
            hidden_size: 32,
            num_layers: 2,
            num_heads: 2,
            intermediate_size: 128,
            dropout: 0.0,
            max_positions: 256,
            vocab_size,
            pad_id: 0,
            init_std: default_init_std(),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.hidden_size == 0 || self.num_heads == 0 || self.num_layers == 0 {
            return bad("hidden_size, num_heads and num_layers must be positive".into());
        }
        if self.hidden_size % self.num_heads != 0 {
            return bad(format!(
                "hidden_size {} is not divisible by num_heads {}",
                self.hidden_size, self.num_heads
            ));
        }
        if self.intermediate_size == 0 {
            return bad("intermediate_size must be positive".into());
        }
        if self.max_positions < EXAMPLE_TOKENS + 1 {
            return bad(format!(
                "max_positions {} cannot hold {} tokens plus BOS",
                self.max_positions, EXAMPLE_TOKENS
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} not in [0, 1)", self.dropout));
        }
        if self.vocab_size == 0 || self.pad_id as usize >= self.vocab_size {
            return bad("pad_id must be inside the vocabulary".into());
        }
        if !(self.init_std.is_finite() && self.init_std > 0.0) {
            return bad("init_std must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Finetune,
}

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub phase: Phase,
    pub learning_rate: f64,
    pub warmup_fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub weight_decay: f64,
    pub grad_clip: f64,
}

impl TrainConfig {
    pub fn pretrain() -> Self {
        Self {
            phase: Phase::Pretrain,
            learning_rate: 1e-4,
            warmup_fraction: 0.1,
            epochs: 100,
            batch_size: 32,
            seed: 0,
            weight_decay: 0.01,
            grad_clip: 1.0,
        }
    }

    pub fn finetune() -> Self {
        Self {
            phase: Phase::Finetune,
            learning_rate: 1e-5,
            ..Self::pretrain()
        }
    }

    pub fn for_phase(phase: Phase) -> Self {
        match phase {
            Phase::Pretrain => Self::pretrain(),
            Phase::Finetune => Self::finetune(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad("warmup_fraction must be in [0, 1)");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return bad("weight_decay must be non-negative");
        }
        if self.grad_clip <= 0.0 {
            return bad("grad_clip must be positive");
        }
        Ok(())
    }

    /// Linear warm-up to the peak rate, then linear decay to zero.
    pub fn lr_at(&self, step: usize, total_steps: usize) -> f64 {
        let warmup = (self.warmup_fraction * total_steps as f64).floor() as usize;
        if step < warmup {
            self.learning_rate * (step + 1) as f64 / warmup as f64
        } else {
            let remaining = total_steps.saturating_sub(step) as f64;
            let span = total_steps.saturating_sub(warmup).max(1) as f64;
            self.learning_rate * remaining / span
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let d = ModelConfig::desk(245);
        assert_eq!(
            (d.hidden_size, d.num_layers, d.num_heads, d.intermediate_size),
            (384, 6, 6, 1536)
        );
        assert_eq!(d.dropout, 0.1);
        d.validate().unwrap();
        ModelConfig::micro(245).validate().unwrap();
        let p = TrainConfig::pretrain();
        assert_eq!((p.learning_rate, p.epochs, p.batch_size), (1e-4, 100, 32));
        assert_eq!(TrainConfig::finetune().learning_rate, 1e-5);
    }

    #[test]
    fn invalid_configs() {
        let mut c = ModelConfig::micro(245);
        c.num_heads = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::micro(245);
        c.max_positions = 200;
        assert!(c.validate().is_err());
        let mut t = TrainConfig::pretrain();
        t.warmup_fraction = 1.0;
        assert!(t.validate().is_err());
        t.warmup_fraction = 0.1;
        t.learning_rate = 0.0;
        assert!(t.validate().is_err());
    }

    #[test]
    fn schedule_warms_up_then_decays() {
        let t = TrainConfig::pretrain();
        let total = 100;
        assert!((t.lr_at(0, total) - 1e-5).abs() < 1e-18);
        assert!((t.lr_at(9, total) - 1e-4).abs() < 1e-18);
        assert!((t.lr_at(10, total) - 1e-4).abs() < 1e-18);
        assert!((t.lr_at(55, total) - 0.5e-4).abs() < 1e-18);
        assert!(t.lr_at(99, total) > 0.0);
        let lrs: Vec<f64> = (10..total).map(|s| t.lr_at(s, total)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }
}
