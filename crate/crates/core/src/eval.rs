//! Exact-match micro precision/recall/F1 for entities, relations and triplets.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::triple::collapse_whitespace;
use crate::data::{RelationTriple, TripleSet};
use crate::error::{Error, Result};

/// String normalization applied to both sides before matching. Whitespace is
/// always trimmed and collapsed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Normalization {
    pub lowercase: bool,
}

impl Normalization {
    pub fn apply(&self, s: &str) -> String {
        let s = collapse_whitespace(s);
        if self.lowercase {
            s.to_lowercase()
        } else {
            s
        }
    }

    pub fn triple(&self, t: &RelationTriple) -> [String; 3] {
        [self.apply(&t.head), self.apply(&t.relation), self.apply(&t.tail)]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub true_positives: usize,
    pub predicted: usize,
    pub gold: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl CategoryScore {
    pub fn from_counts(true_positives: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(true_positives, predicted);
        let recall = ratio(true_positives, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        CategoryScore {
            true_positives,
            predicted,
            gold,
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub entity: CategoryScore,
    pub relation: CategoryScore,
    pub triplet: CategoryScore,
}

#[derive(Default)]
struct Counts {
    tp: usize,
    pred: usize,
    gold: usize,
}

impl Counts {
    fn add<K: Ord>(&mut self, pred: &BTreeSet<K>, gold: &BTreeSet<K>) {
        self.tp += pred.intersection(gold).count();
        self.pred += pred.len();
        self.gold += gold.len();
    }

    fn score(&self) -> CategoryScore {
        CategoryScore::from_counts(self.tp, self.pred, self.gold)
    }
}

struct Views {
    triples: BTreeSet<[String; 3]>,
    entities: BTreeSet<String>,
    relations: BTreeSet<String>,
}

fn views(set: Option<&TripleSet>, norm: &Normalization) -> Views {
    let triples: BTreeSet<[String; 3]> = set
        .into_iter()
        .flat_map(|s| s.iter())
        .map(|t| norm.triple(t))
        .collect();
    let entities = triples
        .iter()
        .flat_map(|[h, _, t]| [h.clone(), t.clone()])
        .collect();
    let relations = triples.iter().map(|[_, r, _]| r.clone()).collect();
    Views {
        triples,
        entities,
        relations,
    }
}

/// Micro-averaged scores over `gold`'s samples. Samples absent from
/// `predictions` count as empty predictions; prediction ids unknown to
/// `gold` are an error.
pub fn evaluate(
    predictions: &BTreeMap<String, TripleSet>,
    gold: &BTreeMap<String, TripleSet>,
    norm: &Normalization,
) -> Result<EvalReport> {
    let unknown: Vec<String> = predictions
        .keys()
        .filter(|id| !gold.contains_key(*id))
        .cloned()
        .collect();
    if !unknown.is_empty() {
        return Err(Error::UnknownSampleIds(unknown));
    }
    let (mut ent, mut rel, mut tri) = (Counts::default(), Counts::default(), Counts::default());
    for (id, g) in gold {
        let p = views(predictions.get(id), norm);
        let g = views(Some(g), norm);
        tri.add(&p.triples, &g.triples);
        ent.add(&p.entities, &g.entities);
        rel.add(&p.relations, &g.relations);
    }
    Ok(EvalReport {
        samples: gold.len(),
        entity: ent.score(),
        relation: rel.score(),
        triplet: tri.score(),
    })
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "samples: {}", self.samples)?;
        writeln!(
            f,
            "{:<9} {:>6} {:>6} {:>6} {:>9} {:>9} {:>9}",
            "category", "tp", "pred", "gold", "precision", "recall", "f1"
        )?;
        for (name, s) in [
            ("entity", &self.entity),
            ("relation", &self.relation),
            ("triplet", &self.triplet),
        ] {
            writeln!(
                f,
                "{:<9} {:>6} {:>6} {:>6} {:>9.4} {:>9.4} {:>9.4}",
                name, s.true_positives, s.predicted, s.gold, s.precision, s.recall, s.f1
            )?;
        }
        Ok(())
    }
}
