//! Latent relation prediction head: a small CNN over the encoder output
//! `H` that scores every relation type, trained with binary cross entropy.
//! Relations scoring above a threshold become the decoder's prompt tokens.
//!
//! `H` is read as a one-channel `L_H x d_h` image. Each stage is a stride-1,
//! same-padded convolution followed by ReLU (and dropout while training).
//! Adaptive average pooling to `pool_out` makes the flattened size independent
//! of `L_H`, so the final affine map has a fixed input width.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autograd::{bce_value, Graph, ParamId, ParamStore, Tensor, Var};
use crate::data::{FeatureKind, FeatureMatrix, RelationLabelVector};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Score clamp used by the BCE objective.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrphConfig {
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub pool_out: (usize, usize),
    pub dropout_p: f64,
    pub threshold: f64,
}

impl Default for LrphConfig {
    fn default() -> Self {
        LrphConfig {
            channels: vec![16, 32, 64, 128],
            kernel: 3,
            pool_out: (4, 4),
            dropout_p: 0.5,
            threshold: 0.5,
        }
    }
}

impl LrphConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::Config("lrph.channels must be non-empty and positive".into()));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("lrph.kernel must be odd, got {}", self.kernel)));
        }
        if self.pool_out.0 == 0 || self.pool_out.1 == 0 {
            return Err(Error::Config("lrph.pool_out must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config("lrph.dropout_p must be in [0, 1)".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config("lrph.threshold must be in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn flat_dim(&self) -> usize {
        self.channels.last().copied().unwrap_or(1) * self.pool_out.0 * self.pool_out.1
    }
}

/// Per-relation presence scores in `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationScores<T>(pub Vec<T>);

/// Handles of the head's parameters inside a shared [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrphParams {
    pub convs: Vec<(ParamId, ParamId)>,
    pub weight: ParamId,
    pub bias: ParamId,
    pub num_relations: usize,
}

fn uniform<T: Scalar>(shape: Vec<usize>, bound: f64, rng: &mut Rng) -> Tensor<T> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| T::c(rng.random_range(-bound..=bound))).collect())
}

impl LrphParams {
    /// He-uniform convolutions, Xavier-uniform affine map, zero biases.
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        config: &LrphConfig,
        num_relations: usize,
        rng: &mut Rng,
    ) -> Self {
        let k = config.kernel;
        let mut cin = 1;
        let mut convs = Vec::new();
        for (i, &cout) in config.channels.iter().enumerate() {
            let bound = (6.0 / (cin * k * k) as f64).sqrt();
            let w = store.add(format!("lrph.conv{i}.weight"), uniform(vec![cout, cin, k, k], bound, rng));
            let b = store.add(format!("lrph.conv{i}.bias"), Tensor::zeros(vec![cout]));
            convs.push((w, b));
            cin = cout;
        }
        let flat = config.flat_dim();
        let bound = (6.0 / (flat + num_relations) as f64).sqrt();
        let weight = store.add("lrph.out.weight", uniform(vec![flat, num_relations], bound, rng));
        let bias = store.add("lrph.out.bias", Tensor::zeros(vec![num_relations]));
        LrphParams {
            convs,
            weight,
            bias,
            num_relations,
        }
    }

    /// Appends the head to `g` and returns the `[1, |R|]` logits. Dropout is
    /// applied only when `dropout` carries an RNG.
    pub fn logits<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        h: Var,
        config: &LrphConfig,
        mut dropout: Option<&mut Rng>,
    ) -> Var {
        let (l, d) = g.value(h).as_matrix();
        let mut x = g.reshape(h, vec![1, l, d]);
        for &(w, b) in &self.convs {
            let (w, b) = (g.param(w), g.param(b));
            x = g.conv2d(x, w, b);
            x = g.relu(x);
            if let Some(rng) = dropout.as_deref_mut() {
                x = g.dropout(x, config.dropout_p, rng);
            }
        }
        let x = g.adaptive_avg_pool2d(x, config.pool_out.0, config.pool_out.1);
        let mut flat = g.reshape(x, vec![1, config.flat_dim()]);
        if let Some(rng) = dropout {
            flat = g.dropout(flat, config.dropout_p, rng);
        }
        let (w, b) = (g.param(self.weight), g.param(self.bias));
        let z = g.matmul(flat, w);
        g.add_row(z, b)
    }
}

/// Scores for encoded features `h`. `dropout_rng` is only consulted when
/// `training` is set.
pub fn lrph_forward<T: Scalar>(
    h: &FeatureMatrix<T>,
    store: &ParamStore<T>,
    params: &LrphParams,
    config: &LrphConfig,
    training: bool,
    dropout_rng: Option<&mut Rng>,
) -> Result<RelationScores<T>> {
    if h.kind() != FeatureKind::Encoded {
        return Err(Error::Contract("relation head expects encoded features".into()));
    }
    let mut g = Graph::new(store);
    let hv = g.input(Tensor::new(vec![h.frames(), h.dims()], h.data().to_vec()));
    let rng = if training { dropout_rng } else { None };
    let z = params.logits(&mut g, hv, config, rng);
    let s = g.sigmoid(z);
    Ok(RelationScores(g.value(s).data.clone()))
}

/// Mean binary cross entropy with scores clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss<T: Scalar>(scores: &RelationScores<T>, y: &RelationLabelVector) -> Result<T> {
    if scores.0.len() != y.len() {
        return Err(Error::Contract(format!(
            "{} scores for {} labels",
            scores.0.len(),
            y.len()
        )));
    }
    let labels: Vec<T> = y.0.iter().map(|&b| if b { T::one() } else { T::zero() }).collect();
    Ok(bce_value(&scores.0, &labels, T::c(BCE_EPS)))
}

/// Ids whose score is strictly above the threshold.
pub fn predict_relations<T: Scalar>(scores: &RelationScores<T>, config: &LrphConfig) -> BTreeSet<usize> {
    let th = T::c(config.threshold);
    scores
        .0
        .iter()
        .enumerate()
        .filter_map(|(i, &s)| (s > th).then_some(i))
        .collect()
}

/// Drops `floor(f * n)` uniformly chosen ids with `f ~ U[0, 0.5]`; identity
/// when not training.
pub fn mask_positive_relations(
    relation_ids: &BTreeSet<usize>,
    rng: &mut Rng,
    training: bool,
) -> BTreeSet<usize> {
    if !training || relation_ids.is_empty() {
        return relation_ids.clone();
    }
    let f: f64 = rng.random_range(0.0..=0.5);
    let n = relation_ids.len();
    let remove = ((f * n as f64).floor() as usize).min(n / 2);
    let ids: Vec<usize> = relation_ids.iter().copied().collect();
    let dropped: BTreeSet<usize> = ids.choose_multiple(rng, remove).copied().collect();
    ids.into_iter().filter(|i| !dropped.contains(i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn ids(v: &[usize]) -> BTreeSet<usize> {
        v.iter().copied().collect()
    }

    #[test]
    fn zero_input_gives_half() {
        let mut store = ParamStore::<f64>::new();
        let cfg = LrphConfig::default();
        let p = LrphParams::init(&mut store, &cfg, 3, &mut substream(1, "init"));
        let h = FeatureMatrix::zeros(10, 8, FeatureKind::Encoded).unwrap();
        let s = lrph_forward(&h, &store, &p, &cfg, false, None).unwrap();
        assert_eq!(s.0, vec![0.5; 3]);
    }

    #[test]
    fn eval_mode_deterministic_training_stochastic() {
        let mut store = ParamStore::<f32>::new();
        let cfg = LrphConfig::default();
        let p = LrphParams::init(&mut store, &cfg, 4, &mut substream(1, "init"));
        let data: Vec<f32> = (0..60).map(|i| ((i * 7) % 11) as f32 / 5.0 - 1.0).collect();
        let h = FeatureMatrix::new(6, 10, data, FeatureKind::Encoded).unwrap();
        let a = lrph_forward(&h, &store, &p, &cfg, false, None).unwrap();
        let b = lrph_forward(&h, &store, &p, &cfg, false, Some(&mut substream(5, "x"))).unwrap();
        assert_eq!(a, b);
        let c = lrph_forward(&h, &store, &p, &cfg, true, Some(&mut substream(5, "x"))).unwrap();
        assert_ne!(a, c);
        assert!(c.0.iter().all(|&s| s > 0.0 && s < 1.0));
    }

    #[test]
    fn rejects_log_mel_input() {
        let mut store = ParamStore::<f32>::new();
        let cfg = LrphConfig::default();
        let p = LrphParams::init(&mut store, &cfg, 2, &mut substream(1, "init"));
        let x = FeatureMatrix::zeros(4, 4, FeatureKind::LogMel).unwrap();
        assert!(lrph_forward(&x, &store, &p, &cfg, false, None).is_err());
    }

    #[test]
    fn bce_examples() {
        let y = RelationLabelVector(vec![true, false, true]);
        let half = RelationScores(vec![0.5f64; 3]);
        assert!((bce_loss(&half, &y).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        let exact = RelationScores(vec![1.0f64, 0.0, 1.0]);
        assert!(bce_loss(&exact, &y).unwrap() <= 1e-6);
        let s = RelationScores(vec![0.9f64, 0.1]);
        let v = bce_loss(&s, &RelationLabelVector(vec![true, false])).unwrap();
        assert!((v - 0.105_360_515_657_826_3).abs() < 1e-9);
        assert!(bce_loss(&s, &y).is_err());
    }

    #[test]
    fn threshold_is_strict() {
        let cfg = LrphConfig::default();
        assert_eq!(predict_relations(&RelationScores(vec![0.9, 0.4, 0.6]), &cfg), ids(&[0, 2]));
        assert_eq!(predict_relations(&RelationScores(vec![0.5f32; 4]), &cfg), ids(&[]));
        assert_eq!(predict_relations(&RelationScores(vec![0.99f32; 3]), &cfg), ids(&[0, 1, 2]));
    }

    #[test]
    fn masking_bounds_and_determinism() {
        let mut rng = substream(3, "mask");
        assert!(mask_positive_relations(&ids(&[]), &mut rng, true).is_empty());
        let four = ids(&[0, 1, 2, 3]);
        for _ in 0..500 {
            let out = mask_positive_relations(&four, &mut rng, true);
            assert!((2..=4).contains(&out.len()));
            assert!(out.is_subset(&four));
        }
        let a = mask_positive_relations(&four, &mut substream(9, "m"), true);
        let b = mask_positive_relations(&four, &mut substream(9, "m"), true);
        assert_eq!(a, b);
        assert_eq!(mask_positive_relations(&four, &mut rng, false), four);
    }
}
