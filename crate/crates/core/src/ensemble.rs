//! Voting-ensemble inference: one relation-head call per sample, one greedy
//! generation per order view, and a vote over the parsed triple sets.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backbone::{greedy_generate, Seq2SeqBackbone};
use crate::codec::{parse, Diagnostic, OrderView, TokenSequence};
use crate::data::{FeatureMatrix, RelationTriple, Sample, TripleSet};
use crate::error::{Error, Result};
use crate::model::SpeechReModel;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteRule {
    /// Keep a triple seen in more than `lambda_vote` views.
    #[default]
    StrictGreater,
    /// Keep a triple seen in at least `lambda_vote` views.
    AtLeast,
}

impl FromStr for VoteRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict_greater" => Ok(VoteRule::StrictGreater),
            "at_least" => Ok(VoteRule::AtLeast),
            _ => Err(Error::Config(format!(
                "unknown vote rule {s:?} (expected strict_greater or at_least)"
            ))),
        }
    }
}

impl fmt::Display for VoteRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VoteRule::StrictGreater => "strict_greater",
            VoteRule::AtLeast => "at_least",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    pub lambda_vote: usize,
    pub vote_rule: VoteRule,
    /// Maximum generated tokens per view.
    pub max_len: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            lambda_vote: 2,
            vote_rule: VoteRule::StrictGreater,
            max_len: 256,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_vote > OrderView::ALL.len() {
            return Err(Error::Config(format!(
                "ensemble.lambda_vote must be in 0..=6, got {}",
                self.lambda_vote
            )));
        }
        if self.max_len == 0 {
            return Err(Error::Config("ensemble.max_len must be positive".into()));
        }
        Ok(())
    }

    pub fn keeps(&self, count: usize) -> bool {
        match self.vote_rule {
            VoteRule::StrictGreater => count > self.lambda_vote,
            VoteRule::AtLeast => count >= self.lambda_vote,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewPrediction {
    pub view: OrderView,
    pub raw_tokens: TokenSequence,
    pub triples: TripleSet,
    pub diagnostics: Vec<Diagnostic>,
    pub truncated: bool,
}

/// Triples present in enough of the given per-view sets.
pub fn vote_sets<'a>(sets: impl IntoIterator<Item = &'a TripleSet>, config: &EnsembleConfig) -> TripleSet {
    let mut counts: BTreeMap<&RelationTriple, usize> = BTreeMap::new();
    for set in sets {
        for t in set.iter() {
            *counts.entry(t).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .filter(|&(_, c)| config.keeps(c))
        .map(|(t, _)| t.clone())
        .collect()
}

pub fn vote(per_view: &[ViewPrediction], config: &EnsembleConfig) -> TripleSet {
    vote_sets(per_view.iter().map(|v| &v.triples), config)
}

/// Everything inference produced for one sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleInference {
    pub sample_id: String,
    pub prompted_relations: BTreeSet<usize>,
    pub per_view: Vec<ViewPrediction>,
    pub final_triples: TripleSet,
}

/// Runs the full ensemble on already-extracted features `x`.
pub fn infer_features<T: Scalar>(
    model: &SpeechReModel<T>,
    sample_id: &str,
    x: &FeatureMatrix<T>,
    config: &EnsembleConfig,
) -> Result<SampleInference> {
    let h = model.encode(x)?;
    let prompted = model.predict_prompt(&h)?;
    let mut per_view = Vec::with_capacity(OrderView::ALL.len());
    for view in OrderView::ALL {
        let prefix = model.prefix_ids(&model.prompt_block(&prompted, view)?);
        let gen = greedy_generate(model, &h, &prefix, config.max_len)?;
        let words = model.vocab.decode(&gen.tokens);
        let out = parse(&words, view, &model.schema);
        per_view.push(ViewPrediction {
            view,
            raw_tokens: TokenSequence::from_generated(&words),
            triples: out.triples,
            diagnostics: out.diagnostics,
            truncated: gen.truncated,
        });
    }
    let final_triples = vote(&per_view, config);
    Ok(SampleInference {
        sample_id: sample_id.to_string(),
        prompted_relations: prompted,
        per_view,
        final_triples,
    })
}

/// Extracts features for `sample` and runs [`infer_features`].
pub fn infer_sample<T: Scalar>(
    sample: &Sample,
    model: &SpeechReModel<T>,
    base_dir: Option<&Path>,
    config: &EnsembleConfig,
) -> Result<SampleInference> {
    let x = model.features.extract(sample, base_dir)?;
    infer_features(model, &sample.id, &x, config)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewRecord {
    pub view: OrderView,
    pub raw: String,
    pub triples: Vec<[String; 3]>,
    pub diagnostics: Vec<String>,
    pub truncated: bool,
}

/// One line of a prediction file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub id: String,
    pub prompted_relations: Vec<String>,
    pub views: Vec<ViewRecord>,
    #[serde(rename = "final")]
    pub final_triples: Vec<[String; 3]>,
}

fn triple_rows(set: &TripleSet) -> Vec<[String; 3]> {
    set.iter()
        .map(|t| [t.head.clone(), t.relation.clone(), t.tail.clone()])
        .collect()
}

impl PredictionRecord {
    pub fn from_inference<T: Scalar>(inf: &SampleInference, model: &SpeechReModel<T>) -> Self {
        PredictionRecord {
            id: inf.sample_id.clone(),
            prompted_relations: inf
                .prompted_relations
                .iter()
                .filter_map(|&i| model.schema.name(i).map(str::to_string))
                .collect(),
            views: inf
                .per_view
                .iter()
                .map(|v| ViewRecord {
                    view: v.view,
                    raw: v.raw_tokens.to_string(),
                    triples: triple_rows(&v.triples),
                    diagnostics: v.diagnostics.iter().map(|d| d.to_string()).collect(),
                    truncated: v.truncated,
                })
                .collect(),
            final_triples: triple_rows(&inf.final_triples),
        }
    }

    pub fn final_set(&self) -> TripleSet {
        self.final_triples
            .iter()
            .map(|[h, r, t]| RelationTriple::new(h, r, t))
            .collect()
    }

    /// Parsed triples of one view, if recorded.
    pub fn view_set(&self, view: OrderView) -> Option<TripleSet> {
        self.views.iter().find(|v| v.view == view).map(|v| {
            v.triples
                .iter()
                .map(|[h, r, t]| RelationTriple::new(h, r, t))
                .collect()
        })
    }
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(ts: &[&str]) -> TripleSet {
        ts.iter().map(|h| RelationTriple::new(h, "r", "x")).collect()
    }

    fn preds(sets: Vec<TripleSet>) -> Vec<ViewPrediction> {
        sets.into_iter()
            .zip(OrderView::ALL)
            .map(|(triples, view)| ViewPrediction {
                view,
                raw_tokens: TokenSequence::new(),
                triples,
                diagnostics: vec![],
                truncated: false,
            })
            .collect()
    }

    #[test]
    fn rule_boundary() {
        let p = preds(vec![set(&["a", "b"]), set(&["a", "b"]), set(&["a"])]);
        let strict = EnsembleConfig::default();
        assert_eq!(vote(&p, &strict), set(&["a"]));
        let incl = EnsembleConfig {
            vote_rule: VoteRule::AtLeast,
            ..strict
        };
        assert_eq!(vote(&p, &incl), set(&["a", "b"]));
    }

    #[test]
    fn extremes() {
        let p = preds(vec![set(&["a"]); 6]);
        let all6 = EnsembleConfig {
            lambda_vote: 6,
            ..EnsembleConfig::default()
        };
        assert!(vote(&p, &all6).is_empty());
        let union = EnsembleConfig {
            lambda_vote: 0,
            vote_rule: VoteRule::AtLeast,
            ..EnsembleConfig::default()
        };
        let q = preds(vec![set(&["a"]), set(&["b"]), set(&[])]);
        assert_eq!(vote(&q, &union), set(&["a", "b"]));
        assert_eq!(vote(&p, &EnsembleConfig::default()), set(&["a"]));
        assert!(EnsembleConfig { lambda_vote: 7, ..EnsembleConfig::default() }.validate().is_err());
    }

    #[test]
    fn vote_rule_parses() {
        assert_eq!("at_least".parse::<VoteRule>().unwrap(), VoteRule::AtLeast);
        assert!("majority".parse::<VoteRule>().is_err());
    }
}
