//! Encoder/decoder contract, generation and token-level loss.

mod transformer;
mod vocab;

pub use transformer::{positional_encoding, BackboneConfig, TransformerLayout};
pub use vocab::{Vocabulary, BOS, EOS, PAD, UNK};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One decoder step: last hidden state and next-token distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderStepOutput<T> {
    pub hidden: Vec<T>,
    pub probs: Vec<T>,
}

/// Anything that can encode features and predict the next token. A pretrained
/// backbone can be plugged in by implementing this trait.
pub trait Seq2SeqBackbone<T: Scalar> {
    fn vocab_size(&self) -> usize;

    /// Log-mel (or synthetic) frames to encoded features.
    fn encode(&self, x: &FeatureMatrix<T>) -> Result<FeatureMatrix<T>>;

    /// Next-token distribution after `prefix`, attending to `h`.
    fn decode_step(&self, h: &FeatureMatrix<T>, prefix: &[usize]) -> Result<DecoderStepOutput<T>>;

    /// Longest decoder input the backbone accepts.
    fn max_len(&self) -> usize;
}

/// Mean `-ln p[target]` over masked-in positions.
pub fn ce_loss<T: Scalar>(step_probs: &[Vec<T>], targets: &[usize], mask: &[bool]) -> Result<T> {
    if step_probs.len() != targets.len() || targets.len() != mask.len() {
        return Err(Error::Contract(format!(
            "ce_loss lengths differ: {} prob rows, {} targets, {} mask flags",
            step_probs.len(),
            targets.len(),
            mask.len()
        )));
    }
    let mut total = T::zero();
    let mut count = 0usize;
    for ((p, &t), &m) in step_probs.iter().zip(targets).zip(mask) {
        if !m {
            continue;
        }
        let pt = *p
            .get(t)
            .ok_or_else(|| Error::Contract(format!("target id {t} outside distribution of {}", p.len())))?;
        total -= pt.max(T::min_positive_value()).ln();
        count += 1;
    }
    if count == 0 {
        return Err(Error::Contract("ce_loss with no masked-in positions".into()));
    }
    Ok(total / T::c(count as f64))
}

/// Tokens produced by [`greedy_generate`], without the prompt prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generation {
    pub tokens: Vec<usize>,
    /// Set when decoding stopped at the length limit rather than at EOS.
    pub truncated: bool,
}

/// Argmax over `probs` ignoring PAD and BOS; ties go to the lowest id.
pub fn greedy_pick<T: Scalar>(probs: &[T]) -> usize {
    let mut best = None::<(usize, T)>;
    for (i, &p) in probs.iter().enumerate() {
        if i == Vocabulary::PAD_ID || i == Vocabulary::BOS_ID {
            continue;
        }
        match best {
            Some((_, bp)) if !(p > bp) => {}
            _ => best = Some((i, p)),
        }
    }
    best.map_or(Vocabulary::EOS_ID, |(i, _)| i)
}

/// Appends argmax tokens to `prefix` until EOS, `max_new` tokens, or the
/// backbone's length limit. EOS is not included in the result.
pub fn greedy_generate<T: Scalar, B: Seq2SeqBackbone<T> + ?Sized>(
    backbone: &B,
    h: &FeatureMatrix<T>,
    prefix: &[usize],
    max_new: usize,
) -> Result<Generation> {
    let mut seq = prefix.to_vec();
    let mut tokens = Vec::new();
    loop {
        if tokens.len() >= max_new || seq.len() >= backbone.max_len() {
            return Ok(Generation {
                tokens,
                truncated: true,
            });
        }
        let out = backbone.decode_step(h, &seq)?;
        let next = greedy_pick(&out.probs);
        if next == Vocabulary::EOS_ID {
            return Ok(Generation {
                tokens,
                truncated: false,
            });
        }
        tokens.push(next);
        seq.push(next);
    }
}
