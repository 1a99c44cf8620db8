use std::collections::BTreeMap;
use std::error::Error;
use std::path::{Path, PathBuf};

use speechre_core::backbone::Vocabulary;
use speechre_core::checkpoint::load_checkpoint;
use speechre_core::codec::round_trip_sample;
use speechre_core::config::RunConfig;
use speechre_core::data::toy::{toy_samples, toy_schema};
use speechre_core::data::{
    dataset_stats, load_manifest, write_manifest, FeatureConfig, FeatureMatrix, LoadOptions, RelationSchema, Sample,
    TripleSet,
};
use speechre_core::ensemble::{infer_sample, read_predictions, write_predictions, PredictionRecord};
use speechre_core::eval::evaluate;
use speechre_core::trainer::{fit, FitOptions, Trainer};
use speechre_core::{Model32, Scalar};

type CmdResult = Result<(), Box<dyn Error>>;

pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const STATS_FILE: &str = "stats.json";

fn required(p: Option<PathBuf>, what: &str, flag: &str) -> Result<PathBuf, String> {
    p.ok_or_else(|| format!("no {what}: pass {flag} or set it in the config"))
}

fn load(path: &Path, schema: &RelationSchema, options: &LoadOptions) -> Result<Vec<Sample>, Box<dyn Error>> {
    let loaded = load_manifest(path, schema, options)?;
    for w in &loaded.warnings {
        eprintln!("warning: {}: {w}", path.display());
    }
    for r in &loaded.rejected {
        eprintln!("rejected: {}: {r}", path.display());
    }
    Ok(loaded.samples)
}

fn extract_all<T: Scalar>(
    features: &FeatureConfig,
    samples: &[Sample],
    base_dir: Option<&Path>,
) -> Result<Vec<FeatureMatrix<T>>, Box<dyn Error>> {
    Ok(samples
        .iter()
        .map(|s| features.extract(s, base_dir))
        .collect::<Result<_, _>>()?)
}

/// All samples must agree on the encoder input width.
fn input_dims<'a>(features: &FeatureConfig, samples: impl IntoIterator<Item = &'a Sample>) -> Result<usize, String> {
    let mut dims = None;
    for s in samples {
        let d = features.input_dims(&s.source);
        match dims {
            None => dims = Some((d, s.id.clone())),
            Some((d0, ref first)) if d0 != d => {
                return Err(format!(
                    "sample {} has {d}-dim features but sample {first} has {d0}; mixing audio and synthetic sources needs matching widths",
                    s.id
                ))
            }
            _ => {}
        }
    }
    Ok(dims.map_or(features.synth.dims, |(d, _)| d))
}

pub struct TrainArgs {
    pub config: PathBuf,
    pub schema: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub dev_manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

pub fn train(a: TrainArgs) -> CmdResult {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    cfg.paths.schema = a.schema.or(cfg.paths.schema);
    cfg.paths.train_manifest = a.manifest.or(cfg.paths.train_manifest);
    cfg.paths.dev_manifest = a.dev_manifest.or(cfg.paths.dev_manifest);
    cfg.paths.out_dir = a.out.or(cfg.paths.out_dir);
    let schema_path = required(cfg.paths.schema.clone(), "schema", "--schema")?;
    let train_path = required(cfg.paths.train_manifest.clone(), "training manifest", "--manifest")?;
    let out_dir = required(cfg.paths.out_dir.clone(), "output directory", "--out")?;

    let schema = RelationSchema::load(&schema_path)?;
    let train = load(&train_path, &schema, &cfg.data)?;
    let dev = match &cfg.paths.dev_manifest {
        Some(p) => load(p, &schema, &cfg.data)?,
        None => Vec::new(),
    };
    let vocab = Vocabulary::build(&schema, &train)?;
    let dims = input_dims(&cfg.features, train.iter().chain(&dev))?;
    let train_x = extract_all::<f32>(&cfg.features, &train, train_path.parent())?;
    let dev_x = match &cfg.paths.dev_manifest {
        Some(p) => extract_all::<f32>(&cfg.features, &dev, p.parent())?,
        None => Vec::new(),
    };

    let model = Model32::new(schema, vocab, cfg.features.clone(), cfg.model.clone(), dims, cfg.seed)?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = cfg.seed;
    let mut trainer = Trainer::new(model, train_cfg)?;
    cfg.echo_into(&out_dir)?;
    eprintln!(
        "training on {} samples ({} targets per epoch), {} dev samples, {} parameters",
        train.len(),
        train.len() * 6,
        dev.len(),
        trainer.model.store.scalar_count()
    );
    let opts = FitOptions {
        out_dir: &out_dir,
        train_inputs: &train_x,
        dev: &dev,
        dev_inputs: &dev_x,
        ensemble: cfg.ensemble.clone(),
        config_echo: serde_json::to_value(&cfg)?,
    };
    let outcome = fit(&mut trainer, &train, &opts, |m| {
        let dev = m
            .dev_triplet_f1
            .map(|f| format!(" dev_triplet_f1={f:.4}"))
            .unwrap_or_default();
        eprintln!(
            "epoch {} step {} loss_total={:.4} loss_lrp={:.4} loss_dec={:.4}{dev}",
            m.epoch, m.step, m.loss_total, m.loss_lrp, m.loss_dec
        );
    })?;
    println!("checkpoint: {}", outcome.checkpoint.display());
    println!("metrics: {}", outcome.metrics_path.display());
    println!("best epoch: {}", outcome.best_epoch);
    Ok(())
}

pub struct InferArgs {
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
    pub lambda_vote: Option<usize>,
    pub vote_rule: Option<String>,
    pub threshold: Option<f64>,
}

pub fn infer(a: InferArgs) -> CmdResult {
    let (mut model, meta) = load_checkpoint::<f32>(&a.checkpoint)?;
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => serde_json::from_value(meta.config).unwrap_or_default(),
    };
    if let Some(t) = a.threshold {
        if !(t > 0.0 && t < 1.0) {
            return Err(format!("--threshold must be in (0, 1), got {t}").into());
        }
        model.config.lrph.threshold = t;
    }
    if let Some(l) = a.lambda_vote {
        cfg.ensemble.lambda_vote = l;
    }
    if let Some(r) = &a.vote_rule {
        cfg.ensemble.vote_rule = r.parse()?;
    }
    cfg.ensemble.validate()?;
    cfg.model = model.config.clone();
    cfg.features = model.features.clone();
    cfg.paths.checkpoint = Some(a.checkpoint.clone());
    cfg.paths.out_dir = Some(a.out.clone());

    let samples = load(&a.manifest, &model.schema, &cfg.data)?;
    let mut records = Vec::with_capacity(samples.len());
    let mut truncated = 0;
    for s in &samples {
        let inf = infer_sample(s, &model, a.manifest.parent(), &cfg.ensemble)?;
        truncated += inf.per_view.iter().filter(|v| v.truncated).count();
        records.push(PredictionRecord::from_inference(&inf, &model));
    }
    std::fs::create_dir_all(&a.out)?;
    let path = a.out.join(PREDICTIONS_FILE);
    write_predictions(&path, &records)?;
    cfg.echo_into(&a.out)?;
    println!("predictions: {} ({} samples)", path.display(), records.len());
    if truncated > 0 {
        eprintln!("warning: {truncated} view generations hit the length limit");
    }
    Ok(())
}

pub struct EvalArgs {
    pub predictions: PathBuf,
    pub manifest: PathBuf,
    pub schema: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub lowercase: bool,
    pub out: Option<PathBuf>,
}

pub fn eval(a: EvalArgs) -> CmdResult {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.paths.schema = a.schema.or(cfg.paths.schema);
    let schema = RelationSchema::load(required(cfg.paths.schema.clone(), "schema", "--schema")?)?;
    if a.lowercase {
        cfg.eval.lowercase = true;
    }
    let gold: BTreeMap<String, TripleSet> = load(&a.manifest, &schema, &cfg.data)?
        .into_iter()
        .map(|s| (s.id, s.triples))
        .collect();
    let mut preds = BTreeMap::new();
    for r in read_predictions(&a.predictions)? {
        let set = r.final_set();
        if preds.insert(r.id.clone(), set).is_some() {
            return Err(format!("duplicate prediction for sample {}", r.id).into());
        }
    }
    let report = evaluate(&preds, &gold, &cfg.eval)?;
    print!("{report}");
    if let Some(out) = &a.out {
        cfg.paths.out_dir = Some(out.clone());
        cfg.echo_into(out)?;
        std::fs::write(out.join(REPORT_FILE), serde_json::to_string_pretty(&report)? + "\n")?;
    }
    Ok(())
}

pub fn codec_check(manifest: &Path, schema: &Path) -> CmdResult {
    let schema = RelationSchema::load(schema)?;
    let samples = load(manifest, &schema, &LoadOptions::default())?;
    let (mut failed, mut diagnostics) = (0usize, 0usize);
    for s in &samples {
        let r = round_trip_sample(s, &schema);
        if !r.is_clean() {
            failed += 1;
            let views: Vec<String> = r.failed_views.iter().map(|v| v.to_string()).collect();
            eprintln!("sample {}: failed views [{}]", s.id, views.join(", "));
            for (v, d) in &r.diagnostics {
                eprintln!("  {v}: {d}");
            }
        }
        diagnostics += r.diagnostics.len();
    }
    println!(
        "{} samples x 6 views: {failed} failing samples, {diagnostics} diagnostics",
        samples.len()
    );
    if failed > 0 {
        return Err(format!("{failed} samples failed the round trip").into());
    }
    Ok(())
}

pub fn data_stats(manifest: &Path, schema: &Path, out: Option<&Path>) -> CmdResult {
    let schema = RelationSchema::load(schema)?;
    let samples = load(manifest, &schema, &LoadOptions::default())?;
    let stats = dataset_stats(&samples);
    print!("{stats}");
    if let Some(out) = out {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join(STATS_FILE), serde_json::to_string_pretty(&stats)? + "\n")?;
    }
    Ok(())
}

pub fn toy_data(out: &Path, train: usize, dev: usize, seed: u64) -> CmdResult {
    std::fs::create_dir_all(out)?;
    let schema = toy_schema();
    schema.save(out.join("schema.json"))?;
    write_manifest(out.join("train.jsonl"), &toy_samples(train, seed, "train"))?;
    write_manifest(out.join("dev.jsonl"), &toy_samples(dev, seed, "dev"))?;
    let mut cfg = RunConfig::toy();
    cfg.paths.schema = Some("schema.json".into());
    cfg.paths.train_manifest = Some("train.jsonl".into());
    cfg.paths.dev_manifest = Some("dev.jsonl".into());
    cfg.paths.out_dir = Some("run".into());
    std::fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    println!("wrote {}", out.display());
    Ok(())
}
