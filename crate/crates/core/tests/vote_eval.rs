use std::collections::BTreeMap;

use proptest::prelude::*;
use speechre_core::data::{RelationTriple, TripleSet};
use speechre_core::ensemble::{vote_sets, EnsembleConfig, VoteRule};
use speechre_core::eval::{evaluate, CategoryScore, Normalization};

fn triple_pool() -> Vec<RelationTriple> {
    let mut v = Vec::new();
    for h in ["a", "b", "c"] {
        for r in ["R1", "R2"] {
            for t in ["x", "y"] {
                v.push(RelationTriple::new(h, r, t));
            }
        }
    }
    v
}

fn small_set() -> impl Strategy<Value = TripleSet> {
    prop::collection::vec(0..12usize, 0..5).prop_map(|ix| {
        let pool = triple_pool();
        ix.into_iter().map(|i| pool[i].clone()).collect()
    })
}

fn vote_oracle(sets: &[TripleSet], lambda: usize, at_least: bool) -> Vec<RelationTriple> {
    let mut out = Vec::new();
    for t in triple_pool() {
        let n = sets.iter().filter(|s| s.contains(&t)).count();
        if n == 0 {
            continue;
        }
        let keep = if at_least { n >= lambda } else { n > lambda };
        if keep {
            out.push(t);
        }
    }
    out.sort();
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn voting_matches_counting(sets in prop::collection::vec(small_set(), 6), lambda in 0usize..=6) {
        for (rule, at_least) in [(VoteRule::StrictGreater, false), (VoteRule::AtLeast, true)] {
            let cfg = EnsembleConfig { lambda_vote: lambda, vote_rule: rule, ..EnsembleConfig::default() };
            let got: Vec<RelationTriple> = vote_sets(&sets, &cfg).iter().cloned().collect();
            prop_assert_eq!(got, vote_oracle(&sets, lambda, at_least));
        }
    }
}

#[test]
fn vote_boundary_at_lambda() {
    let t = RelationTriple::new("a", "R1", "x");
    let with: TripleSet = [t.clone()].into_iter().collect();
    let sets: Vec<TripleSet> = (0..6).map(|i| if i < 2 { with.clone() } else { TripleSet::new() }).collect();
    let strict = EnsembleConfig::default();
    assert!(vote_sets(&sets, &strict).is_empty());
    let at_least = EnsembleConfig { vote_rule: VoteRule::AtLeast, ..strict.clone() };
    assert!(vote_sets(&sets, &at_least).contains(&t));
    let zero = EnsembleConfig { lambda_vote: 0, ..at_least };
    // at_least 0 keeps only triples some view produced
    assert_eq!(vote_sets(&sets, &zero).len(), 1);
    assert_eq!("at_least".parse::<VoteRule>().unwrap(), VoteRule::AtLeast);
    assert!("majority".parse::<VoteRule>().is_err());
}

fn norm_text(s: &str, lower: bool) -> String {
    let s = s.split_whitespace().collect::<Vec<_>>().join(" ");
    if lower { s.to_lowercase() } else { s }
}

/// Brute-force micro counts over lists with manual de-duplication.
fn eval_oracle(
    preds: &BTreeMap<String, TripleSet>,
    gold: &BTreeMap<String, TripleSet>,
    lower: bool,
) -> [(usize, usize, usize); 3] {
    fn dedup(mut v: Vec<String>) -> Vec<String> {
        v.sort();
        v.dedup();
        v
    }
    let mut acc = [(0, 0, 0); 3];
    for (id, g) in gold {
        let empty = TripleSet::new();
        let p = preds.get(id).unwrap_or(&empty);
        let views = |s: &TripleSet| {
            let mut trip = Vec::new();
            let mut ent = Vec::new();
            let mut rel = Vec::new();
            for t in s.iter() {
                let (h, r, tl) = (norm_text(&t.head, lower), norm_text(&t.relation, lower), norm_text(&t.tail, lower));
                trip.push(format!("{h}\u{1}{r}\u{1}{tl}"));
                ent.push(h);
                ent.push(tl);
                rel.push(r);
            }
            [dedup(ent), dedup(rel), dedup(trip)]
        };
        let (pv, gv) = (views(p), views(g));
        for k in 0..3 {
            let tp = pv[k].iter().filter(|x| gv[k].contains(x)).count();
            acc[k].0 += tp;
            acc[k].1 += pv[k].len();
            acc[k].2 += gv[k].len();
        }
    }
    acc
}

fn cased_set() -> impl Strategy<Value = TripleSet> {
    prop::collection::vec((0..4usize, 0..2usize, 0..4usize), 0..4).prop_map(|v| {
        let ents = ["Ann", "ann", "Bob  Lee", "Cy"];
        v.into_iter()
            .map(|(h, r, t)| RelationTriple::new(ents[h], ["Kill", "Live_In"][r], ents[t]))
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn evaluator_matches_brute_force(
        gold in prop::collection::vec(cased_set(), 0..6),
        preds in prop::collection::vec(prop::option::of(cased_set()), 0..6),
        lower in any::<bool>(),
    ) {
        let gold: BTreeMap<String, TripleSet> = gold.into_iter().enumerate().map(|(i, s)| (format!("s{i}"), s)).collect();
        let preds: BTreeMap<String, TripleSet> = preds
            .into_iter()
            .enumerate()
            .filter(|(i, _)| *i < gold.len())
            .filter_map(|(i, s)| s.map(|s| (format!("s{i}"), s)))
            .collect();
        let report = evaluate(&preds, &gold, &Normalization { lowercase: lower }).unwrap();
        let want = eval_oracle(&preds, &gold, lower);
        for (k, got) in [report.entity, report.relation, report.triplet].into_iter().enumerate() {
            prop_assert_eq!((got.true_positives, got.predicted, got.gold), want[k]);
            prop_assert_eq!(got, CategoryScore::from_counts(want[k].0, want[k].1, want[k].2));
        }
    }
}

#[test]
fn one_of_two_correct_gives_half() {
    let gold: BTreeMap<String, TripleSet> = [(
        "s".to_string(),
        [RelationTriple::new("A", "Kill", "B"), RelationTriple::new("C", "Kill", "D")]
            .into_iter()
            .collect(),
    )]
    .into();
    let preds: BTreeMap<String, TripleSet> = [(
        "s".to_string(),
        [RelationTriple::new("A", "Kill", "B"), RelationTriple::new("C", "Kill", "E")]
            .into_iter()
            .collect(),
    )]
    .into();
    let r = evaluate(&preds, &gold, &Normalization::default()).unwrap();
    assert_eq!((r.triplet.precision, r.triplet.recall, r.triplet.f1), (0.5, 0.5, 0.5));
    assert_eq!(CategoryScore::from_counts(0, 0, 0).f1, 0.0);
    assert_eq!(CategoryScore::from_counts(0, 3, 0).precision, 0.0);
}

#[test]
fn unknown_prediction_ids_are_rejected() {
    let gold: BTreeMap<String, TripleSet> = [("a".to_string(), TripleSet::new())].into();
    let preds: BTreeMap<String, TripleSet> = [("zz".to_string(), TripleSet::new()), ("b".to_string(), TripleSet::new())].into();
    let err = evaluate(&preds, &gold, &Normalization::default()).unwrap_err().to_string();
    assert!(err.contains("b") && err.contains("zz"), "{err}");
}
