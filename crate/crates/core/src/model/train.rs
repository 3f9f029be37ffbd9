//! String-masked training with AdamW.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{decays, Params};
use super::transformer::{LossTerms, Transformer};
use super::{ModelError, TrainConfig};
use crate::tokenizer::{is_string_position, mask_strings, TokenSequence, Vocabulary};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
/// Mixed into the seed so dropout and shuffling draw from distinct streams.
const DROPOUT_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

/// One note-framed example, possibly padded at the end.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub ids: Vec<u32>,
    /// Real (unpadded) notes.
    pub note_count: usize,
}

impl From<TokenSequence> for TrainingExample {
    fn from(seq: TokenSequence) -> Self {
        Self {
            note_count: seq.note_count,
            ids: seq.ids,
        }
    }
}

/// Encoder input, decoder input and targets for an example.
///
/// The encoder sees every string masked; the decoder sees BOS followed by
/// the targets shifted right. Trailing padding is dropped: padded keys are
/// masked and padded targets are never scored, so it cannot change the
/// result.
pub fn lm_inputs(example: &TrainingExample, vocab: &Vocabulary) -> (Vec<u32>, Vec<u32>, Vec<u32>) {
    let pad = vocab.pad_id();
    let len = example.ids.iter().rposition(|&t| t != pad).map_or(0, |i| i + 1);
    let targets = example.ids[..len].to_vec();
    let framed = TokenSequence {
        ids: targets.clone(),
        note_count: len.div_ceil(crate::tokenizer::TOKENS_PER_NOTE),
    };
    let encoder = mask_strings(&framed, vocab).ids;
    let mut decoder = Vec::with_capacity(len);
    if len > 0 {
        decoder.push(vocab.bos_id());
        decoder.extend_from_slice(&targets[..len - 1]);
    }
    (encoder, decoder, targets)
}

fn scored_positions(targets: &[u32], pad: u32) -> usize {
    targets
        .iter()
        .enumerate()
        .filter(|&(i, &t)| is_string_position(i) && t != pad)
        .count()
}

/// Decoupled weight-decay Adam.
#[derive(Debug, Clone)]
pub struct AdamW {
    m: Params,
    v: Params,
    t: i32,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(like: &Params, weight_decay: f64) -> Self {
        let mut m = like.clone();
        m.fill(0.0);
        Self {
            v: m.clone(),
            m,
            t: 0,
            weight_decay,
        }
    }

    pub fn step(&mut self, params: &mut Params, grads: &Params, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t);
        let bc2 = 1.0 - BETA2.powi(self.t);
        let grads = grads.tensors();
        for (((name, p), g), ((_, m), (_, v))) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.iter())
            .zip(self.m.tensors_mut().into_iter().zip(self.v.tensors_mut()))
        {
            let wd = if decays(&name) { self.weight_decay } else { 0.0 };
            for (((p, &g), m), v) in p.iter_mut().zip(g.data).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                let update = (*m / bc1) / ((*v / bc2).sqrt() + ADAM_EPS);
                *p -= lr * (update + wd * *p);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    /// Mean training loss over the epoch's string positions.
    pub loss: f64,
    /// Teacher-forced string accuracy during the epoch (dropout on).
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Transformer,
    pub curve: Vec<LossPoint>,
    pub epochs: Vec<EpochReport>,
    pub steps: usize,
    pub stopped_early: bool,
}

/// `step,lr,loss` rows.
pub fn loss_curve_csv(curve: &[LossPoint]) -> String {
    let mut out = String::from("step,lr,loss\n");
    for p in curve {
        out.push_str(&format!("{},{:e},{}\n", p.step, p.lr, p.loss));
    }
    out
}

/// Trains `model` in place of a copy. `on_epoch` runs after every epoch and
/// returns `false` to stop early.
pub fn train<F>(
    mut model: Transformer,
    examples: &[TrainingExample],
    vocab: &Vocabulary,
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainOutcome, ModelError>
where
    F: FnMut(&EpochReport, &Transformer) -> bool,
{
    config.validate()?;
    if examples.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if vocab.len() != model.config().vocab_size {
        return Err(ModelError::Config(format!(
            "vocabulary has {} tokens, model expects {}",
            vocab.len(),
            model.config().vocab_size
        )));
    }
    let prepared: Vec<_> = examples.iter().map(|e| lm_inputs(e, vocab)).collect();
    let string_ids = vocab.string_ids();
    let pad = vocab.pad_id();
    let batches_per_epoch = examples.len().div_ceil(config.batch_size);
    let total_steps = config.epochs * batches_per_epoch;

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed ^ DROPOUT_STREAM);
    let mut optimizer = AdamW::new(&model.params, config.weight_decay);
    let mut grads = model.params.clone();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut curve = Vec::with_capacity(total_steps);
    let mut reports = Vec::with_capacity(config.epochs);
    let mut step = 0;
    let mut stopped_early = false;

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_terms = LossTerms::default();
        for batch in order.chunks(config.batch_size) {
            let count: usize = batch.iter().map(|&i| scored_positions(&prepared[i].2, pad)).sum();
            let lr = config.lr_at(step, total_steps);
            if count > 0 {
                grads.fill(0.0);
                let scale = 1.0 / count as f64;
                let mut terms = LossTerms::default();
                for &i in batch {
                    let (enc, dec, tgt) = &prepared[i];
                    terms.add(model.string_loss(
                        enc,
                        dec,
                        tgt,
                        &string_ids,
                        Some((&mut grads, scale)),
                        Some(&mut dropout_rng),
                    )?);
                }
                let loss = terms.mean();
                let norm = grads.norm();
                if !loss.is_finite() || !norm.is_finite() {
                    return Err(ModelError::NonFiniteLoss {
                        step,
                        batch: batch.to_vec(),
                    });
                }
                if norm > config.grad_clip {
                    grads.scale(config.grad_clip / norm);
                }
                optimizer.step(&mut model.params, &grads, lr);
                curve.push(LossPoint { step, lr, loss });
                epoch_terms.add(terms);
            }
            step += 1;
        }
        let report = EpochReport {
            epoch,
            loss: epoch_terms.mean(),
            accuracy: epoch_terms.accuracy(),
        };
        log::info!(
            "epoch {} loss {:.4} accuracy {:.4}",
            epoch + 1,
            report.loss,
            report.accuracy
        );
        reports.push(report);
        if !on_epoch(&report, &model) {
            stopped_early = epoch + 1 < config.epochs;
            break;
        }
    }
    Ok(TrainOutcome {
        model,
        curve,
        epochs: reports,
        steps: step,
        stopped_early,
    })
}

/// Teacher-forced loss and string accuracy with dropout off.
pub fn evaluate(model: &Transformer, examples: &[TrainingExample], vocab: &Vocabulary) -> Result<LossTerms, ModelError> {
    let string_ids = vocab.string_ids();
    let mut total = LossTerms::default();
    for example in examples {
        let (enc, dec, tgt) = lm_inputs(example, vocab);
        total.add(model.string_loss(&enc, &dec, &tgt, &string_ids, None, None)?);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::tokenizer::Token;
    use rand::Rng;

    fn examples(n: usize, notes: usize, seed: u64) -> Vec<TrainingExample> {
        let v = Vocabulary::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let ids = (0..notes)
                    .flat_map(|_| {
                        let pitch = rng.random_range(40..80u8);
                        [
                            v.id(Token::TimeShift(4)),
                            v.id(Token::String(1 + pitch % 6)),
                            v.id(Token::Pitch(pitch)),
                            v.id(Token::Velocity(4)),
                            v.id(Token::Duration(3)),
                        ]
                    })
                    .collect();
                TrainingExample { ids, note_count: notes }
            })
            .collect()
    }

    fn quick_config() -> TrainConfig {
        TrainConfig {
            learning_rate: 3e-3,
            epochs: 3,
            batch_size: 2,
            ..TrainConfig::pretrain()
        }
    }

    #[test]
    fn lm_inputs_shift_and_mask() {
        let v = Vocabulary::default();
        let mut ex = examples(1, 2, 0).remove(0);
        ex.ids.extend([v.pad_id(); 5]);
        let (enc, dec, tgt) = lm_inputs(&ex, &v);
        assert_eq!(tgt.len(), 10);
        assert_eq!(enc[1], v.mask_id());
        assert_eq!(enc[6], v.mask_id());
        assert_eq!(enc[2], tgt[2]);
        assert_eq!(dec[0], v.bos_id());
        assert_eq!(&dec[1..], &tgt[..9]);
    }

    #[test]
    fn adamw_first_step_by_hand() {
        let config = ModelConfig::micro(245);
        let mut params = Params::zeros(&config);
        params.fill(1.0);
        let mut grads = params.clone();
        grads.fill(0.5);
        let mut opt = AdamW::new(&params, 0.01);
        opt.step(&mut params, &grads, 0.1);
        // m̂ = 0.5, v̂ = 0.25, so the Adam direction is 0.5 / (0.5 + eps)
        let adam = 0.5 / (0.5 + ADAM_EPS);
        let decayed = 1.0 - 0.1 * (adam + 0.01);
        let plain = 1.0 - 0.1 * adam;
        assert!((params.token_embedding[[0, 0]] - decayed).abs() < 1e-15);
        assert!((params.output_bias[0] - plain).abs() < 1e-15);
        assert!((params.encoder[0].ff_norm.gamma[0] - plain).abs() < 1e-15);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let v = Vocabulary::default();
        let model = Transformer::new(ModelConfig::micro(v.len()), 0).unwrap();
        let err = train(model, &[], &v, &quick_config(), |_, _| true).unwrap_err();
        assert_eq!(err, ModelError::EmptyDataset);
    }

    #[test]
    fn training_is_reproducible_and_lowers_loss() {
        let v = Vocabulary::default();
        let data = examples(4, 6, 1);
        let run = || {
            let model = Transformer::new(ModelConfig::micro(v.len()), 0).unwrap();
            train(model, &data, &v, &quick_config(), |_, _| true).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.model, b.model);
        assert_eq!(a.steps, 6);
        assert_eq!(a.curve.len(), 6);
        let before = evaluate(&Transformer::new(ModelConfig::micro(v.len()), 0).unwrap(), &data, &v).unwrap();
        let after = evaluate(&a.model, &data, &v).unwrap();
        assert!(after.mean() < before.mean());
        let csv = loss_curve_csv(&a.curve);
        assert!(csv.starts_with("step,lr,loss\n0,"));
        assert_eq!(csv.lines().count(), 7);
    }

    #[test]
    fn callback_can_stop_training() {
        let v = Vocabulary::default();
        let data = examples(2, 3, 2);
        let model = Transformer::new(ModelConfig::micro(v.len()), 0).unwrap();
        let out = train(model, &data, &v, &quick_config(), |r, _| r.epoch < 1).unwrap();
        assert_eq!(out.epochs.len(), 2);
        assert!(out.stopped_early);
    }

    #[test]
    fn non_finite_loss_aborts() {
        let v = Vocabulary::default();
        let data = examples(3, 3, 3);
        let mut model = Transformer::new(ModelConfig::micro(v.len()), 0).unwrap();
        model.params.output_bias[v.string_ids()[0] as usize] = f64::NAN;
        let err = train(model, &data, &v, &quick_config(), |_, _| true).unwrap_err();
        match err {
            ModelError::NonFiniteLoss { step, batch } => {
                assert_eq!(step, 0);
                assert_eq!(batch.len(), 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
