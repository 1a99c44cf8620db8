//! The full model: backbone, relation head, vocabulary and schema sharing one
//! parameter store.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::autograd::{softmax_in_place, Graph, ParamStore, Tensor};
use crate::backbone::{BackboneConfig, DecoderStepOutput, Seq2SeqBackbone, TransformerLayout, Vocabulary};
use crate::codec::{ctrl_tokens, prompt_tokens, OrderView, TokenRole, TokenSequence};
use crate::data::{FeatureConfig, FeatureKind, FeatureMatrix, RelationSchema};
use crate::error::{Error, Result};
use crate::lrph::{lrph_forward, predict_relations, LrphConfig, LrphParams, RelationScores};
use crate::rng::substream;
use crate::scalar::Scalar;

/// Architecture settings that fix the parameter layout.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub lrph: LrphConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.lrph.validate()
    }
}

#[derive(Debug, Clone)]
pub struct SpeechReModel<T: Scalar> {
    pub schema: RelationSchema,
    pub vocab: Vocabulary,
    pub features: FeatureConfig,
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub layout: TransformerLayout,
    pub lrph: LrphParams,
}

impl<T: Scalar> SpeechReModel<T> {
    /// Fresh parameters drawn from the `init` substream of `seed`.
    pub fn new(
        schema: RelationSchema,
        vocab: Vocabulary,
        features: FeatureConfig,
        config: ModelConfig,
        input_dims: usize,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if input_dims == 0 {
            return Err(Error::Config("input feature dimension must be positive".into()));
        }
        let mut store = ParamStore::new();
        let mut rng = substream(seed, "init");
        let layout = TransformerLayout::init(&mut store, &config.backbone, input_dims, vocab.len(), &mut rng);
        let lrph = LrphParams::init(&mut store, &config.lrph, schema.len(), &mut rng);
        Ok(SpeechReModel {
            schema,
            vocab,
            features,
            config,
            store,
            layout,
            lrph,
        })
    }

    /// Rebuilds the layout for `config` and adopts `store`, which must match
    /// it name for name and shape for shape.
    pub fn from_parts(
        schema: RelationSchema,
        vocab: Vocabulary,
        features: FeatureConfig,
        config: ModelConfig,
        input_dims: usize,
        store: ParamStore<T>,
    ) -> Result<Self> {
        let mut model = Self::new(schema, vocab, features, config, input_dims, 0)?;
        if model.store.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameter tensors, configuration expects {}",
                store.len(),
                model.store.len()
            )));
        }
        for id in model.store.ids() {
            let (want, got) = (model.store.get(id), store.get(id));
            if model.store.name(id) != store.name(id) || want.shape != got.shape {
                return Err(Error::Checkpoint(format!(
                    "parameter {} {:?} does not match expected {} {:?}",
                    store.name(id),
                    got.shape,
                    model.store.name(id),
                    want.shape
                )));
            }
            if got.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Checkpoint(format!("parameter {} is not finite", store.name(id))));
            }
        }
        model.store = store;
        Ok(model)
    }

    pub fn input_dims(&self) -> usize {
        self.layout.input_dims()
    }

    pub fn relation_scores(&self, h: &FeatureMatrix<T>) -> Result<RelationScores<T>> {
        lrph_forward(h, &self.store, &self.lrph, &self.config.lrph, false, None)
    }

    /// Relation ids the head predicts present in `h`.
    pub fn predict_prompt(&self, h: &FeatureMatrix<T>) -> Result<BTreeSet<usize>> {
        Ok(predict_relations(&self.relation_scores(h)?, &self.config.lrph))
    }

    /// `T_rel + T_ctrl` for a prompt set and view.
    pub fn prompt_block(&self, prompt_ids: &BTreeSet<usize>, view: OrderView) -> Result<TokenSequence> {
        let mut seq = prompt_tokens(prompt_ids, &self.schema)?;
        seq.extend(ctrl_tokens(view));
        Ok(seq)
    }

    /// BOS followed by the ids of `seq`.
    pub fn prefix_ids(&self, seq: &TokenSequence) -> Vec<usize> {
        std::iter::once(Vocabulary::BOS_ID)
            .chain(seq.tokens().iter().map(|t| self.vocab.encode(t)))
            .collect()
    }
}

/// Teacher-forcing arrays for one decoder sequence `T_dec`: inputs start with
/// BOS, targets end with EOS, and only marker/text/EOS targets are supervised.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TeacherForcing {
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
    pub loss_mask: Vec<bool>,
}

impl TeacherForcing {
    pub fn new(seq: &TokenSequence, vocab: &Vocabulary) -> Self {
        let ids: Vec<usize> = seq.tokens().iter().map(|t| vocab.encode(t)).collect();
        let mut inputs = vec![Vocabulary::BOS_ID];
        inputs.extend(&ids);
        let mut targets = ids;
        targets.push(Vocabulary::EOS_ID);
        let loss_mask = seq
            .roles()
            .iter()
            .map(|r| matches!(r, TokenRole::Marker | TokenRole::Text))
            .chain(std::iter::once(true))
            .collect();
        TeacherForcing {
            inputs,
            targets,
            loss_mask,
        }
    }
}

impl<T: Scalar> Seq2SeqBackbone<T> for SpeechReModel<T> {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn encode(&self, x: &FeatureMatrix<T>) -> Result<FeatureMatrix<T>> {
        let mut g = Graph::new(&self.store);
        let h = self.layout.encode(&mut g, x, None)?;
        let t = g.value(h);
        let (l, d) = t.as_matrix();
        FeatureMatrix::new(l, d, t.data.clone(), FeatureKind::Encoded)
    }

    fn decode_step(&self, h: &FeatureMatrix<T>, prefix: &[usize]) -> Result<DecoderStepOutput<T>> {
        if prefix.is_empty() {
            return Err(Error::Contract("decode_step needs a non-empty prefix".into()));
        }
        if h.kind() != FeatureKind::Encoded || h.dims() != self.config.backbone.d_model {
            return Err(Error::Contract(format!(
                "decoder expects encoded features of width {}",
                self.config.backbone.d_model
            )));
        }
        let mut g = Graph::new(&self.store);
        let hv = g.input(Tensor::new(vec![h.frames(), h.dims()], h.data().to_vec()));
        let (hidden, logits) = self.layout.decode(&mut g, hv, prefix, None)?;
        let n = prefix.len();
        let d = self.config.backbone.d_model;
        let v = self.vocab.len();
        let hidden = g.value(hidden).data[(n - 1) * d..n * d].to_vec();
        let mut probs = g.value(logits).data[(n - 1) * v..n * v].to_vec();
        softmax_in_place(&mut probs);
        Ok(DecoderStepOutput { hidden, probs })
    }

    fn max_len(&self) -> usize {
        self.config.backbone.max_len
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::toy::{toy_samples, toy_schema};
    use crate::data::RelationTriple;

    fn tiny() -> SpeechReModel<f64> {
        let schema = toy_schema();
        let samples = toy_samples(10, 3, "m");
        let vocab = Vocabulary::build(&schema, &samples).unwrap();
        let config = ModelConfig {
            backbone: BackboneConfig {
                d_model: 16,
                heads: 2,
                encoder_layers: 1,
                decoder_layers: 1,
                ffn_dim: 32,
                ..BackboneConfig::default()
            },
            lrph: LrphConfig {
                channels: vec![2, 2],
                ..LrphConfig::default()
            },
        };
        SpeechReModel::new(schema, vocab, FeatureConfig::default(), config, 6, 9).unwrap()
    }

    #[test]
    fn encode_shapes_and_determinism() {
        let m = tiny();
        let x = FeatureMatrix::zeros(32, 6, FeatureKind::LogMel).unwrap();
        let h = m.encode(&x).unwrap();
        assert_eq!((h.frames(), h.dims()), (16, 16));
        assert_eq!(h, m.encode(&x).unwrap());
        let odd = FeatureMatrix::zeros(5, 6, FeatureKind::LogMel).unwrap();
        assert_eq!(m.encode(&odd).unwrap().frames(), 3);
        let long = FeatureMatrix::zeros(3001, 6, FeatureKind::LogMel).unwrap();
        let err = m.encode(&long).unwrap_err().to_string();
        assert!(err.contains("3000"), "{err}");
    }

    #[test]
    fn decode_step_is_a_distribution() {
        let m = tiny();
        let x = FeatureMatrix::new(4, 6, (0..24).map(|i| (i as f64).sin()).collect(), FeatureKind::LogMel).unwrap();
        let h = m.encode(&x).unwrap();
        let out = m.decode_step(&h, &[Vocabulary::BOS_ID, 7, 4]).unwrap();
        assert_eq!(out.probs.len(), m.vocab.len());
        assert_eq!(out.hidden.len(), 16);
        assert!((out.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(m.decode_step(&h, &[]).is_err());
    }

    #[test]
    fn teacher_forcing_masks_prompt_and_ctrl() {
        let m = tiny();
        let mut triples = crate::data::TripleSet::default();
        triples.insert(RelationTriple::new("John Smith", "Work_For", "Acme"));
        let mut seq = m.prompt_block(&[1usize].into_iter().collect(), OrderView::CANONICAL).unwrap();
        seq.extend(crate::codec::linearize_triples(&triples, OrderView::CANONICAL));
        let tf = TeacherForcing::new(&seq, &m.vocab);
        assert_eq!(tf.inputs.len(), tf.targets.len());
        assert_eq!(tf.inputs[0], Vocabulary::BOS_ID);
        assert_eq!(*tf.targets.last().unwrap(), Vocabulary::EOS_ID);
        // 1 prompt + 3 ctrl positions unsupervised
        assert_eq!(&tf.loss_mask[..4], &[false; 4]);
        assert!(tf.loss_mask[4..].iter().all(|&b| b));
    }

    #[test]
    fn from_parts_rejects_mismatched_store() {
        let m = tiny();
        let mut cfg = m.config.clone();
        let again = SpeechReModel::from_parts(
            m.schema.clone(),
            m.vocab.clone(),
            m.features.clone(),
            cfg.clone(),
            6,
            m.store.clone(),
        )
        .unwrap();
        assert_eq!(again.store.tensors(), m.store.tensors());
        cfg.backbone.ffn_dim = 8;
        assert!(SpeechReModel::from_parts(m.schema.clone(), m.vocab.clone(), m.features.clone(), cfg, 6, m.store.clone()).is_err());
    }
}
