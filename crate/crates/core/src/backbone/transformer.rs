//! Small pre-LayerNorm transformer encoder-decoder trained from scratch.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use rand::Rng as _;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    pub d_model: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub ffn_dim: usize,
    /// Consecutive input frames stacked into one encoder position.
    pub downsample: usize,
    pub max_frames: usize,
    /// Upper bound on decoder prefix length and on generated tokens.
    pub max_len: usize,
    /// Residual dropout, active only while training.
    pub dropout: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            d_model: 64,
            heads: 4,
            encoder_layers: 2,
            decoder_layers: 2,
            ffn_dim: 256,
            downsample: 2,
            max_frames: 3000,
            max_len: 256,
            dropout: 0.1,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "model.d_model ({}) must be a positive multiple of model.heads ({})",
                self.d_model, self.heads
            )));
        }
        if self.ffn_dim == 0 || self.downsample == 0 || self.max_frames == 0 || self.max_len == 0 {
            return Err(Error::Config(
                "model.ffn_dim, downsample, max_frames and max_len must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("model.dropout must be in [0, 1)".into()));
        }
        Ok(())
    }

    /// Encoder length for `frames` input frames.
    pub fn encoded_len(&self, frames: usize) -> usize {
        frames.div_ceil(self.downsample)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EncoderLayer {
    norm1: Norm,
    attn: Attention,
    norm2: Norm,
    ff1: Linear,
    ff2: Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DecoderLayer {
    norm1: Norm,
    self_attn: Attention,
    norm2: Norm,
    cross_attn: Attention,
    norm3: Norm,
    ff1: Linear,
    ff2: Linear,
}

/// Parameter handles of the encoder-decoder inside a shared store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerLayout {
    config: BackboneConfig,
    input_dims: usize,
    vocab_size: usize,
    input_proj: Linear,
    encoder: Vec<EncoderLayer>,
    encoder_norm: Norm,
    embed: ParamId,
    decoder: Vec<DecoderLayer>,
    decoder_norm: Norm,
    lm_head: Linear,
}

struct Init<'a, T: Scalar> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut Rng,
}

impl<T: Scalar> Init<'_, T> {
    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| T::c(self.rng.random_range(-bound..=bound)))
            .collect();
        Linear {
            w: self
                .store
                .add(format!("{name}.weight"), Tensor::new(vec![fan_in, fan_out], data)),
            b: self.store.add(format!("{name}.bias"), Tensor::zeros(vec![fan_out])),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            gamma: self
                .store
                .add(format!("{name}.gamma"), Tensor::new(vec![d], vec![T::one(); d])),
            beta: self.store.add(format!("{name}.beta"), Tensor::zeros(vec![d])),
        }
    }

    fn attention(&mut self, name: &str, d: usize) -> Attention {
        Attention {
            q: self.linear(&format!("{name}.q"), d, d),
            k: self.linear(&format!("{name}.k"), d, d),
            v: self.linear(&format!("{name}.v"), d, d),
            o: self.linear(&format!("{name}.o"), d, d),
        }
    }
}

/// Sinusoidal position table `[len, d]`.
pub fn positional_encoding<T: Scalar>(len: usize, d: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(len * d);
    for pos in 0..len {
        for i in 0..d {
            let rate = 10_000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 / rate;
            data.push(T::c(if i % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    Tensor::new(vec![len, d], data)
}

impl TransformerLayout {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        config: &BackboneConfig,
        input_dims: usize,
        vocab_size: usize,
        rng: &mut Rng,
    ) -> Self {
        let d = config.d_model;
        let f = config.ffn_dim;
        let mut init = Init { store, rng };
        let input_proj = init.linear("enc.input", input_dims * config.downsample, d);
        let encoder = (0..config.encoder_layers)
            .map(|i| EncoderLayer {
                norm1: init.norm(&format!("enc{i}.norm1"), d),
                attn: init.attention(&format!("enc{i}.attn"), d),
                norm2: init.norm(&format!("enc{i}.norm2"), d),
                ff1: init.linear(&format!("enc{i}.ff1"), d, f),
                ff2: init.linear(&format!("enc{i}.ff2"), f, d),
            })
            .collect();
        let encoder_norm = init.norm("enc.norm", d);
        let bound = (6.0 / (vocab_size + d) as f64).sqrt();
        let emb = (0..vocab_size * d)
            .map(|_| T::c(init.rng.random_range(-bound..=bound)))
            .collect();
        let embed = init
            .store
            .add("dec.embed", Tensor::new(vec![vocab_size, d], emb));
        let decoder = (0..config.decoder_layers)
            .map(|i| DecoderLayer {
                norm1: init.norm(&format!("dec{i}.norm1"), d),
                self_attn: init.attention(&format!("dec{i}.self"), d),
                norm2: init.norm(&format!("dec{i}.norm2"), d),
                cross_attn: init.attention(&format!("dec{i}.cross"), d),
                norm3: init.norm(&format!("dec{i}.norm3"), d),
                ff1: init.linear(&format!("dec{i}.ff1"), d, f),
                ff2: init.linear(&format!("dec{i}.ff2"), f, d),
            })
            .collect();
        let decoder_norm = init.norm("dec.norm", d);
        let lm_head = init.linear("dec.lm_head", d, vocab_size);
        TransformerLayout {
            config: config.clone(),
            input_dims,
            vocab_size,
            input_proj,
            encoder,
            encoder_norm,
            embed,
            decoder,
            decoder_norm,
            lm_head,
        }
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn input_dims(&self) -> usize {
        self.input_dims
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn linear<T: Scalar>(g: &mut Graph<'_, T>, l: &Linear, x: Var) -> Var {
        let (w, b) = (g.param(l.w), g.param(l.b));
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }

    fn norm<T: Scalar>(g: &mut Graph<'_, T>, n: &Norm, x: Var) -> Var {
        let (gm, bt) = (g.param(n.gamma), g.param(n.beta));
        g.layer_norm(x, gm, bt, T::c(LN_EPS))
    }

    fn attend<T: Scalar>(&self, g: &mut Graph<'_, T>, a: &Attention, x: Var, src: Var, causal: bool) -> Var {
        let q = Self::linear(g, &a.q, x);
        let k = Self::linear(g, &a.k, src);
        let v = Self::linear(g, &a.v, src);
        let y = g.attention(q, k, v, self.config.heads, causal);
        Self::linear(g, &a.o, y)
    }

    fn drop<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, rng: &mut Option<&mut Rng>) -> Var {
        match rng.as_deref_mut() {
            Some(r) if self.config.dropout > 0.0 => g.dropout(x, self.config.dropout, r),
            _ => x,
        }
    }

    fn feed_forward<T: Scalar>(g: &mut Graph<'_, T>, ff1: &Linear, ff2: &Linear, x: Var) -> Var {
        let h = Self::linear(g, ff1, x);
        let h = g.relu(h);
        Self::linear(g, ff2, h)
    }

    /// Appends the encoder; returns `H` as `[L_H, d_model]`. Dropout is
    /// applied when `rng` is given.
    pub fn encode<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        x: &FeatureMatrix<T>,
        mut rng: Option<&mut Rng>,
    ) -> Result<Var> {
        if x.frames() > self.config.max_frames {
            return Err(Error::TooManyFrames {
                got: x.frames(),
                limit: self.config.max_frames,
            });
        }
        if x.dims() != self.input_dims {
            return Err(Error::Contract(format!(
                "encoder expects {}-dim features, got {}",
                self.input_dims,
                x.dims()
            )));
        }
        let ds = self.config.downsample;
        let len = self.config.encoded_len(x.frames());
        let mut data = x.data().to_vec();
        data.resize(len * ds * self.input_dims, T::zero());
        let xv = g.input(Tensor::new(vec![len, ds * self.input_dims], data));
        let h = Self::linear(g, &self.input_proj, xv);
        let pe = g.input(positional_encoding(len, self.config.d_model));
        let h = g.add(h, pe);
        let mut h = self.drop(g, h, &mut rng);
        for layer in &self.encoder {
            let n = Self::norm(g, &layer.norm1, h);
            let a = self.attend(g, &layer.attn, n, n, false);
            let a = self.drop(g, a, &mut rng);
            h = g.add(h, a);
            let n = Self::norm(g, &layer.norm2, h);
            let f = Self::feed_forward(g, &layer.ff1, &layer.ff2, n);
            let f = self.drop(g, f, &mut rng);
            h = g.add(h, f);
        }
        Ok(Self::norm(g, &self.encoder_norm, h))
    }

    /// Appends the decoder over `ids` attending to `h`; returns
    /// `(hidden [n, d], logits [n, |V|])`.
    pub fn decode<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        h: Var,
        ids: &[usize],
        mut rng: Option<&mut Rng>,
    ) -> Result<(Var, Var)> {
        if ids.is_empty() {
            return Err(Error::Contract("decoder input is empty".into()));
        }
        if ids.len() > self.config.max_len {
            return Err(Error::Contract(format!(
                "decoder input of {} tokens exceeds max_len {}",
                ids.len(),
                self.config.max_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab_size) {
            return Err(Error::Contract(format!("token id {bad} outside the vocabulary")));
        }
        let d = self.config.d_model;
        let table = g.param(self.embed);
        let e = g.embedding(table, ids);
        let e = g.scale(e, T::c((d as f64).sqrt()));
        let pe = g.input(positional_encoding(ids.len(), d));
        let x = g.add(e, pe);
        let mut x = self.drop(g, x, &mut rng);
        for layer in &self.decoder {
            let n = Self::norm(g, &layer.norm1, x);
            let a = self.attend(g, &layer.self_attn, n, n, true);
            let a = self.drop(g, a, &mut rng);
            x = g.add(x, a);
            let n = Self::norm(g, &layer.norm2, x);
            let c = self.attend(g, &layer.cross_attn, n, h, false);
            let c = self.drop(g, c, &mut rng);
            x = g.add(x, c);
            let n = Self::norm(g, &layer.norm3, x);
            let f = Self::feed_forward(g, &layer.ff1, &layer.ff2, n);
            let f = self.drop(g, f, &mut rng);
            x = g.add(x, f);
        }
        let hidden = Self::norm(g, &self.decoder_norm, x);
        let logits = Self::linear(g, &self.lm_head, hidden);
        Ok((hidden, logits))
    }
}
