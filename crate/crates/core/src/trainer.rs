//! Six-view target expansion, the joint objective and the training loop.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autograd::{Gradients, Graph, ParamStore};
use crate::checkpoint::{save_checkpoint, CheckpointMeta};
use crate::codec::{linearize_triples, OrderView, TokenSequence};
use crate::data::{relation_labels, FeatureMatrix, RelationLabelVector, RelationSchema, Sample, TripleSet};
use crate::ensemble::{infer_features, EnsembleConfig, SampleInference};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport, Normalization};
use crate::lrph::{mask_positive_relations, BCE_EPS};
use crate::model::{SpeechReModel, TeacherForcing};
use crate::rng::{indexed_substream, substream, Rng};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptSource {
    /// Gold relations with 0-50% of them masked out per target.
    #[default]
    GoldMasked,
    /// The relation head's own predictions, refreshed every epoch.
    LrphPredicted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Set from the run's global seed rather than read from the train table.
    #[serde(skip)]
    pub seed: u64,
    pub prompt_source: PromptSource,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 12,
            epochs: 30,
            seed: 0,
            prompt_source: PromptSource::GoldMasked,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("train.learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("train.{name} must be in [0, 1)")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config("train.adam_eps must be positive".into()));
        }
        Ok(())
    }
}

/// One (sample, view) generation target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingTarget {
    /// Position of the source sample in the list given to expansion.
    pub sample_index: usize,
    pub sample_id: String,
    pub view: OrderView,
    pub prompt_ids: BTreeSet<usize>,
    /// `T_rel + T_ctrl + T_lin`.
    pub decoder_input: TokenSequence,
    pub label_vector: RelationLabelVector,
}

pub fn build_target(
    sample_index: usize,
    sample: &Sample,
    schema: &RelationSchema,
    view: OrderView,
    prompt_ids: BTreeSet<usize>,
) -> Result<TrainingTarget> {
    let mut decoder_input = crate::codec::prompt_tokens(&prompt_ids, schema)?;
    decoder_input.extend(crate::codec::ctrl_tokens(view));
    decoder_input.extend(linearize_triples(&sample.triples, view));
    Ok(TrainingTarget {
        sample_index,
        sample_id: sample.id.clone(),
        view,
        prompt_ids,
        decoder_input,
        label_vector: relation_labels(sample, schema),
    })
}

/// Six targets per sample with independently masked gold prompts.
pub fn expand_targets(samples: &[Sample], schema: &RelationSchema, rng: &mut Rng) -> Result<Vec<TrainingTarget>> {
    let mut out = Vec::with_capacity(samples.len() * OrderView::ALL.len());
    for (i, s) in samples.iter().enumerate() {
        let gold: BTreeSet<usize> = relation_labels(s, schema).positive_ids().into_iter().collect();
        for view in OrderView::ALL {
            let prompt = mask_positive_relations(&gold, rng, true);
            out.push(build_target(i, s, schema, view, prompt)?);
        }
    }
    Ok(out)
}

/// Six targets per sample sharing the given per-sample prompt sets.
pub fn expand_targets_with_prompts(
    samples: &[Sample],
    schema: &RelationSchema,
    prompts: &[BTreeSet<usize>],
) -> Result<Vec<TrainingTarget>> {
    if prompts.len() != samples.len() {
        return Err(Error::Contract("one prompt set per sample required".into()));
    }
    let mut out = Vec::with_capacity(samples.len() * OrderView::ALL.len());
    for (i, (s, p)) in samples.iter().zip(prompts).enumerate() {
        for view in OrderView::ALL {
            out.push(build_target(i, s, schema, view, p.clone())?);
        }
    }
    Ok(out)
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, config: &TrainConfig) -> Self {
        let zeros: Vec<Vec<T>> = store.tensors().iter().map(|t| vec![T::zero(); t.len()]).collect();
        Adam {
            lr: config.learning_rate,
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            eps: config.adam_eps,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>) {
        self.t += 1;
        let (b1, b2) = (T::c(self.beta1), T::c(self.beta2));
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = T::c(self.lr * c2.sqrt() / c1);
        let eps = T::c(self.eps * c2.sqrt());
        let one = T::one();
        for (id, g) in grads.iter() {
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let p = &mut store.get_mut(id).data;
            for i in 0..g.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                p[i] -= step * m[i] / (v[i].sqrt() + eps);
            }
        }
    }
}

/// Batch-mean losses; `total` is computed as `lrp + dec`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub total: f64,
    pub lrp: f64,
    pub dec: f64,
}

/// Joint loss of one target and its parameter gradients. Dropout is applied
/// when `dropout` is given.
pub fn target_loss<T: Scalar>(
    model: &SpeechReModel<T>,
    x: &FeatureMatrix<T>,
    target: &TrainingTarget,
    mut dropout: Option<&mut Rng>,
) -> Result<(T, T, Gradients<T>)> {
    let tf = TeacherForcing::new(&target.decoder_input, &model.vocab);
    let labels: Vec<T> = target
        .label_vector
        .0
        .iter()
        .map(|&b| if b { T::one() } else { T::zero() })
        .collect();
    let mut g = Graph::new(&model.store);
    let h = model.layout.encode(&mut g, x, dropout.as_deref_mut())?;
    let z = model.lrph.logits(&mut g, h, &model.config.lrph, dropout.as_deref_mut());
    let lrp = g.sigmoid_bce(z, &labels, T::c(BCE_EPS));
    let (_, logits) = model.layout.decode(&mut g, h, &tf.inputs, dropout)?;
    let dec = g.cross_entropy(logits, &tf.targets, &tf.loss_mask);
    let total = g.add(lrp, dec);
    let grads = g.backward(total);
    Ok((g.value(lrp).item(), g.value(dec).item(), grads))
}

/// Owns the model and optimizer state during training.
pub struct Trainer<T: Scalar> {
    pub model: SpeechReModel<T>,
    pub config: TrainConfig,
    pub step: u64,
    optimizer: Adam<T>,
    dropout_rng: Rng,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: SpeechReModel<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = Adam::new(&model.store, &config);
        let dropout_rng = substream(config.seed, "dropout");
        Ok(Trainer {
            model,
            config,
            step: 0,
            optimizer,
            dropout_rng,
        })
    }

    pub fn dropout_rng(&self) -> &Rng {
        &self.dropout_rng
    }

    /// One optimizer update from the batch-mean gradient. `inputs[i]` holds
    /// the features of the sample with `sample_index == i`.
    pub fn train_step(&mut self, batch: &[TrainingTarget], inputs: &[FeatureMatrix<T>]) -> Result<StepLosses> {
        if batch.is_empty() {
            return Err(Error::Contract("train_step on an empty batch".into()));
        }
        let scale = T::c(1.0 / batch.len() as f64);
        let mut grads = Gradients::new(self.model.store.len());
        let (mut lrp, mut dec) = (0.0, 0.0);
        for t in batch {
            let x = inputs
                .get(t.sample_index)
                .ok_or_else(|| Error::Contract(format!("no features for sample {}", t.sample_id)))?;
            let (l, d, g) = target_loss(&self.model, x, t, Some(&mut self.dropout_rng))?;
            lrp += l.f64();
            dec += d.f64();
            grads.add_scaled(&g, scale);
        }
        let n = batch.len() as f64;
        let losses = StepLosses {
            total: lrp / n + dec / n,
            lrp: lrp / n,
            dec: dec / n,
        };
        if !losses.total.is_finite() || !grads.is_finite() {
            let ids: BTreeSet<String> = batch.iter().map(|t| t.sample_id.clone()).collect();
            return Err(Error::NonFiniteLoss {
                step: self.step,
                ids: ids.into_iter().collect(),
            });
        }
        self.optimizer.step(&mut self.model.store, &grads);
        self.step += 1;
        Ok(losses)
    }

    /// Training targets for `epoch` under the configured prompt source.
    pub fn epoch_targets(&self, samples: &[Sample], inputs: &[FeatureMatrix<T>], epoch: usize) -> Result<Vec<TrainingTarget>> {
        let schema = &self.model.schema;
        let mut targets = match self.config.prompt_source {
            PromptSource::GoldMasked => {
                expand_targets(samples, schema, &mut indexed_substream(self.config.seed, "mask", epoch as u64))?
            }
            PromptSource::LrphPredicted => {
                let prompts = inputs
                    .iter()
                    .map(|x| self.model.predict_prompt(&crate::backbone::Seq2SeqBackbone::encode(&self.model, x)?))
                    .collect::<Result<Vec<_>>>()?;
                expand_targets_with_prompts(samples, schema, &prompts)?
            }
        };
        targets.shuffle(&mut indexed_substream(self.config.seed, "shuffle", epoch as u64));
        Ok(targets)
    }
}

/// Dev-set scores of the ensemble and of every single view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevMetrics {
    pub report: EvalReport,
    /// Triplet F1 of each view alone, in canonical view order.
    pub view_triplet_f1: Vec<f64>,
}

/// Runs ensemble inference over `samples` and scores it.
pub fn dev_metrics<T: Scalar>(
    model: &SpeechReModel<T>,
    samples: &[Sample],
    inputs: &[FeatureMatrix<T>],
    ensemble: &EnsembleConfig,
) -> Result<(DevMetrics, Vec<SampleInference>)> {
    let gold: BTreeMap<String, TripleSet> = samples.iter().map(|s| (s.id.clone(), s.triples.clone())).collect();
    let mut inferences = Vec::with_capacity(samples.len());
    for (s, x) in samples.iter().zip(inputs) {
        inferences.push(infer_features(model, &s.id, x, ensemble)?);
    }
    let norm = Normalization::default();
    let finals = inferences
        .iter()
        .map(|i| (i.sample_id.clone(), i.final_triples.clone()))
        .collect();
    let report = evaluate(&finals, &gold, &norm)?;
    let mut view_triplet_f1 = Vec::with_capacity(OrderView::ALL.len());
    for (k, _) in OrderView::ALL.iter().enumerate() {
        let preds = inferences
            .iter()
            .map(|i| (i.sample_id.clone(), i.per_view[k].triples.clone()))
            .collect();
        view_triplet_f1.push(evaluate(&preds, &gold, &norm)?.triplet.f1);
    }
    Ok((DevMetrics { report, view_triplet_f1 }, inferences))
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub step: u64,
    pub loss_total: f64,
    pub loss_lrp: f64,
    pub loss_dec: f64,
    pub dev_triplet_f1: Option<f64>,
    pub dev_entity_f1: Option<f64>,
    pub dev_relation_f1: Option<f64>,
    pub dev_view_triplet_f1: Option<Vec<f64>>,
}

pub struct FitOptions<'a, T: Scalar> {
    pub out_dir: &'a Path,
    pub train_inputs: &'a [FeatureMatrix<T>],
    pub dev: &'a [Sample],
    pub dev_inputs: &'a [FeatureMatrix<T>],
    pub ensemble: EnsembleConfig,
    /// Stored verbatim in the checkpoint.
    pub config_echo: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub checkpoint: PathBuf,
    pub metrics_path: PathBuf,
    pub metrics: Vec<EpochMetrics>,
    /// Epoch whose parameters were kept (0 means the initial parameters).
    pub best_epoch: usize,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const METRICS_FILE: &str = "metrics.jsonl";

/// Trains for the configured epochs, logging one metrics line per epoch and
/// keeping the checkpoint with the best dev triplet F1 (the latest one when
/// there is no dev set).
pub fn fit<T: Scalar>(
    trainer: &mut Trainer<T>,
    train: &[Sample],
    opts: &FitOptions<'_, T>,
    mut progress: impl FnMut(&EpochMetrics),
) -> Result<FitOutcome> {
    if opts.train_inputs.len() != train.len() || opts.dev_inputs.len() != opts.dev.len() {
        return Err(Error::Contract("features must be given for every sample".into()));
    }
    std::fs::create_dir_all(opts.out_dir).map_err(|e| Error::io(opts.out_dir, e))?;
    let checkpoint = opts.out_dir.join(CHECKPOINT_FILE);
    let metrics_path = opts.out_dir.join(METRICS_FILE);
    let mut log = std::fs::File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let save = |trainer: &Trainer<T>, epoch: usize| {
        let meta = CheckpointMeta {
            step: trainer.step,
            epoch,
            rng: trainer.dropout_rng.clone(),
            config: opts.config_echo.clone(),
        };
        save_checkpoint(&checkpoint, &trainer.model, &meta)
    };
    save(trainer, 0)?;
    let mut best: Option<f64> = None;
    let mut best_epoch = 0;
    let mut metrics = Vec::new();
    for epoch in 1..=trainer.config.epochs {
        let targets = trainer.epoch_targets(train, opts.train_inputs, epoch)?;
        let (mut lrp, mut dec, mut batches) = (0.0, 0.0, 0usize);
        for batch in targets.chunks(trainer.config.batch_size) {
            let l = trainer.train_step(batch, opts.train_inputs)?;
            lrp += l.lrp;
            dec += l.dec;
            batches += 1;
        }
        let n = batches.max(1) as f64;
        let mut m = EpochMetrics {
            epoch,
            step: trainer.step,
            loss_total: lrp / n + dec / n,
            loss_lrp: lrp / n,
            loss_dec: dec / n,
            dev_triplet_f1: None,
            dev_entity_f1: None,
            dev_relation_f1: None,
            dev_view_triplet_f1: None,
        };
        let improved = if opts.dev.is_empty() {
            true
        } else {
            let (dev, _) = dev_metrics(&trainer.model, opts.dev, opts.dev_inputs, &opts.ensemble)?;
            m.dev_triplet_f1 = Some(dev.report.triplet.f1);
            m.dev_entity_f1 = Some(dev.report.entity.f1);
            m.dev_relation_f1 = Some(dev.report.relation.f1);
            m.dev_view_triplet_f1 = Some(dev.view_triplet_f1);
            let f1 = dev.report.triplet.f1;
            best.is_none_or(|b| f1 > b)
        };
        if improved {
            best = m.dev_triplet_f1.or(Some(0.0));
            best_epoch = epoch;
            save(trainer, epoch)?;
        }
        serde_json::to_writer(&mut log, &m)?;
        log.write_all(b"\n").map_err(|e| Error::io(&metrics_path, e))?;
        progress(&m);
        metrics.push(m);
    }
    Ok(FitOutcome {
        checkpoint,
        metrics_path,
        metrics,
        best_epoch,
    })
}
