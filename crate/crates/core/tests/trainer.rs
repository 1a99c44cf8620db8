use std::collections::BTreeSet;

use speechre_core::backbone::{BackboneConfig, Vocabulary};
use speechre_core::checkpoint::load_checkpoint;
use speechre_core::codec::{linearize_triples, OrderView, TokenRole};
use speechre_core::data::toy::{toy_samples, toy_schema};
use speechre_core::data::{relation_labels, FeatureConfig, FeatureMatrix, Sample, SynthConfig};
use speechre_core::ensemble::EnsembleConfig;
use speechre_core::lrph::LrphConfig;
use speechre_core::model::{ModelConfig, SpeechReModel, TeacherForcing};
use speechre_core::rng::substream;
use speechre_core::trainer::{dev_metrics, expand_targets, fit, FitOptions, TrainConfig, Trainer};

fn features() -> FeatureConfig {
    FeatureConfig {
        synth: SynthConfig {
            dims: 8,
            frames_per_token: 1,
            noise_std: 0.05,
            master_seed: 0,
        },
        ..FeatureConfig::default()
    }
}

fn small_model(train: &[Sample], seed: u64, dropout: bool) -> SpeechReModel<f32> {
    let schema = toy_schema();
    let vocab = Vocabulary::build(&schema, train).unwrap();
    let config = ModelConfig {
        backbone: BackboneConfig {
            d_model: 16,
            heads: 2,
            encoder_layers: 1,
            decoder_layers: 1,
            ffn_dim: 32,
            dropout: if dropout { 0.1 } else { 0.0 },
            ..BackboneConfig::default()
        },
        lrph: LrphConfig {
            channels: vec![2, 4],
            dropout_p: if dropout { 0.5 } else { 0.0 },
            ..LrphConfig::default()
        },
    };
    SpeechReModel::new(schema, vocab, features(), config, 8, seed).unwrap()
}

fn inputs(samples: &[Sample]) -> Vec<FeatureMatrix<f32>> {
    let f = features();
    samples.iter().map(|s| f.extract(s, None).unwrap()).collect()
}

#[test]
fn six_targets_per_sample_with_composed_inputs() {
    let schema = toy_schema();
    let samples = toy_samples(2, 5, "t");
    let targets = expand_targets(&samples, &schema, &mut substream(1, "mask")).unwrap();
    assert_eq!(targets.len(), 12);
    for (i, _s) in samples.iter().enumerate() {
        let views: BTreeSet<OrderView> = targets.iter().filter(|t| t.sample_index == i).map(|t| t.view).collect();
        assert_eq!(views.len(), 6);
    }
    for t in &targets {
        let s = &samples[t.sample_index];
        let gold = relation_labels(s, &schema);
        assert_eq!(t.label_vector, gold);
        assert!(t.prompt_ids.is_subset(&gold.positive_ids()));
        let roles = t.decoder_input.roles();
        let p = t.prompt_ids.len();
        assert!(roles[..p].iter().all(|&r| r == TokenRole::Prompt));
        assert!(roles[p..p + 3].iter().all(|&r| r == TokenRole::Ctrl));
        let ctrl: Vec<&str> = t.decoder_input.tokens()[p..p + 3].iter().map(String::as_str).collect();
        assert_eq!(ctrl, t.view.roles().map(|r| r.marker()));
        assert_eq!(t.decoder_input.tokens()[p + 3..], *linearize_triples(&s.triples, t.view).tokens());
    }
    let again = expand_targets(&samples, &schema, &mut substream(1, "mask")).unwrap();
    assert_eq!(targets, again);
}

#[test]
fn loss_masks_skip_prompt_and_ctrl() {
    let samples = toy_samples(6, 2, "m");
    let model = small_model(&samples, 1, false);
    for t in expand_targets(&samples, &model.schema, &mut substream(3, "mask")).unwrap() {
        let tf = TeacherForcing::new(&t.decoder_input, &model.vocab);
        let roles = t.decoder_input.roles();
        for (k, &m) in tf.loss_mask.iter().enumerate() {
            let supervised = match roles.get(k) {
                Some(r) => matches!(r, TokenRole::Marker | TokenRole::Text),
                None => true,
            };
            assert_eq!(m, supervised);
        }
        assert_eq!(*tf.targets.last().unwrap(), Vocabulary::EOS_ID);
    }
}

#[test]
fn steps_are_additive_and_reproducible() {
    let samples = toy_samples(8, 4, "s");
    let xs = inputs(&samples);
    let run = |seed: u64| {
        let cfg = TrainConfig { seed, batch_size: 6, ..TrainConfig::default() };
        let mut tr = Trainer::new(small_model(&samples, seed, true), cfg).unwrap();
        let targets = tr.epoch_targets(&samples, &xs, 1).unwrap();
        let losses: Vec<_> = targets.chunks(6).take(3).map(|b| tr.train_step(b, &xs).unwrap()).collect();
        (losses, tr.model.store.tensors().to_vec())
    };
    let (a, pa) = run(11);
    let (b, pb) = run(11);
    let (c, _) = run(12);
    assert_eq!(a, b);
    assert_eq!(pa, pb);
    assert_ne!(a, c);
    for l in &a {
        assert_eq!(l.total, l.lrp + l.dec);
        assert!(l.total.is_finite());
    }
}

#[test]
fn empty_batch_is_rejected() {
    let samples = toy_samples(2, 4, "e");
    let mut tr = Trainer::new(small_model(&samples, 1, false), TrainConfig::default()).unwrap();
    assert!(tr.train_step(&[], &inputs(&samples)).is_err());
}

/// Full-batch steps on a fixed target list with dropout off: the reported
/// decoder loss must fall at every one of the first 50 steps.
#[test]
fn decoder_loss_falls_over_first_fifty_steps() {
    let samples = toy_samples(20, 8, "d");
    let xs = inputs(&samples);
    let seeds = 0..10u64;
    let mut monotone = 0;
    for seed in seeds.clone() {
        let cfg = TrainConfig { seed, batch_size: 120, ..TrainConfig::default() };
        let mut tr = Trainer::new(small_model(&samples, seed, false), cfg).unwrap();
        let batch = tr.epoch_targets(&samples, &xs, 1).unwrap();
        let dec: Vec<f64> = (0..50).map(|_| tr.train_step(&batch, &xs).unwrap().dec).collect();
        if dec.windows(2).all(|w| w[1] < w[0]) {
            monotone += 1;
        }
    }
    assert!(monotone * 10 >= seeds.count() * 9, "{monotone}/10 runs strictly decreasing");
}

#[test]
fn fit_keeps_best_checkpoint_and_reproduces() {
    let train = toy_samples(10, 6, "f");
    let dev = toy_samples(4, 7, "g");
    let (xs, dxs) = (inputs(&train), inputs(&dev));
    let ens = EnsembleConfig { max_len: 24, ..EnsembleConfig::default() };
    let run = |dir: &std::path::Path, epochs: usize| {
        let cfg = TrainConfig { seed: 3, epochs, batch_size: 12, ..TrainConfig::default() };
        let mut tr = Trainer::new(small_model(&train, 3, true), cfg).unwrap();
        let opts = FitOptions {
            out_dir: dir,
            train_inputs: &xs,
            dev: &dev,
            dev_inputs: &dxs,
            ensemble: ens.clone(),
            config_echo: serde_json::json!({"note": "test"}),
        };
        fit(&mut tr, &train, &opts, |_| {}).unwrap()
    };
    let d0 = tempfile::tempdir().unwrap();
    let zero = run(d0.path(), 0);
    assert!(zero.metrics.is_empty() && zero.best_epoch == 0);
    assert_eq!(std::fs::read_to_string(&zero.metrics_path).unwrap(), "");
    let (m0, _) = load_checkpoint::<f32>(&zero.checkpoint).unwrap();
    assert_eq!(m0.store.tensors(), small_model(&train, 3, true).store.tensors());

    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let a = run(d1.path(), 3);
    let b = run(d2.path(), 3);
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(
        std::fs::read(&a.checkpoint).unwrap(),
        std::fs::read(&b.checkpoint).unwrap()
    );
    assert_eq!(a.metrics.len(), 3);
    for m in &a.metrics {
        assert_eq!(m.loss_total, m.loss_lrp + m.loss_dec);
    }

    let (model, meta) = load_checkpoint::<f32>(&a.checkpoint).unwrap();
    assert_eq!(meta.epoch, a.best_epoch);
    assert_eq!(meta.config["note"], "test");
    let (reloaded, _) = dev_metrics(&model, &dev, &dxs, &ens).unwrap();
    if a.best_epoch > 0 {
        let logged = &a.metrics[a.best_epoch - 1];
        assert_eq!(Some(reloaded.report.triplet.f1), logged.dev_triplet_f1);
        assert_eq!(Some(reloaded.view_triplet_f1.clone()), logged.dev_view_triplet_f1);
    }
    let (again, _) = dev_metrics(&model, &dev, &dxs, &ens).unwrap();
    assert_eq!(reloaded, again);
}
