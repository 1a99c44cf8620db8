use std::collections::BTreeSet;

use proptest::prelude::*;
use speechre_core::codec::{linearize_triples, parse, treeify, OrderView, TokenRole};
use speechre_core::data::{RelationSchema, RelationTriple, TripleSet};

const RELATIONS: [&str; 5] = ["Work_For", "Live_In", "Kill", "Located_In", "OrgBased_In"];

fn schema() -> RelationSchema {
    RelationSchema::from_names(&RELATIONS).unwrap()
}

fn value() -> impl Strategy<Value = String> {
    "[a-z]{1,3}( [a-z]{1,3}){0,2}"
}

fn triple_set(max: usize) -> impl Strategy<Value = TripleSet> {
    prop::collection::vec((value(), 0..RELATIONS.len(), value()), 0..=max).prop_map(|v| {
        v.into_iter()
            .map(|(h, r, t)| RelationTriple::new(&h, RELATIONS[r], &t))
            .collect()
    })
}

fn view() -> impl Strategy<Value = OrderView> {
    (0..6usize).prop_map(|i| OrderView::ALL[i])
}

/// Sort the arranged triples and emit a marker wherever a layer value starts.
fn linearize_oracle(ts: &TripleSet, view: OrderView) -> String {
    let mut rows: Vec<[String; 3]> = ts
        .iter()
        .map(|t| view.arrange(t).map(str::to_string))
        .collect();
    rows.sort();
    let markers = view.roles().map(|r| r.marker());
    let mut out: Vec<String> = Vec::new();
    let mut prev: Option<&[String; 3]> = None;
    for row in &rows {
        let first_diff = match prev {
            None => 0,
            Some(p) => (0..3).find(|&k| p[k] != row[k]).unwrap_or(3),
        };
        for k in first_diff..3 {
            out.push(markers[k].to_string());
            out.extend(row[k].split(' ').map(str::to_string));
        }
        prev = Some(row);
    }
    out.join(" ")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn round_trip_is_identity(ts in triple_set(8), v in view()) {
        let seq = linearize_triples(&ts, v);
        let out = parse(seq.tokens(), v, &schema());
        prop_assert!(out.diagnostics.is_empty(), "{:?}", out.diagnostics);
        prop_assert_eq!(out.triples, ts.clone());
        prop_assert_eq!(treeify(&ts, v).to_triples(), ts);
    }

    #[test]
    fn linearization_matches_sorted_oracle(ts in triple_set(8), v in view()) {
        prop_assert_eq!(linearize_triples(&ts, v).to_string(), linearize_oracle(&ts, v));
    }

    #[test]
    fn layer_counts_match_grouping(ts in triple_set(8), v in view()) {
        let tree = treeify(&ts, v);
        let firsts: BTreeSet<String> = ts.iter().map(|t| v.arrange(t)[0].to_string()).collect();
        let pairs: BTreeSet<(String, String)> = ts
            .iter()
            .map(|t| {
                let a = v.arrange(t);
                (a[0].to_string(), a[1].to_string())
            })
            .collect();
        prop_assert_eq!(tree.level2_count(), firsts.len());
        prop_assert_eq!(tree.level3_count(), pairs.len());
        prop_assert_eq!(tree.leaf_count(), ts.len());
    }

    #[test]
    fn roles_are_markers_then_text(ts in triple_set(6), v in view()) {
        let seq = linearize_triples(&ts, v);
        for (tok, role) in seq.iter() {
            let is_marker = ["<h>", "<r>", "<t>"].contains(&tok);
            prop_assert_eq!(role == TokenRole::Marker, is_marker);
            prop_assert!(matches!(role, TokenRole::Marker | TokenRole::Text));
        }
    }

    #[test]
    fn parser_survives_noise(
        toks in prop::collection::vec(
            prop_oneof![
                Just("<h>".to_string()),
                Just("<r>".to_string()),
                Just("<t>".to_string()),
                Just("<rel:Kill>".to_string()),
                (0..RELATIONS.len()).prop_map(|i| RELATIONS[i].to_string()),
                "[a-z]{1,3}",
            ],
            0..40,
        ),
        v in view(),
    ) {
        let schema = schema();
        let out = parse(&toks, v, &schema);
        prop_assert_eq!(&out, &parse(&toks, v, &schema));
        for t in out.triples.iter() {
            prop_assert!(schema.id_of(&t.relation).is_some());
            prop_assert!(!t.head.is_empty() && !t.tail.is_empty());
            prop_assert!(schema.reserved_substring(&t.head).is_none());
            prop_assert!(schema.reserved_substring(&t.tail).is_none());
        }
    }

    #[test]
    fn cut_at_a_marker_keeps_a_subset(ts in triple_set(6), v in view(), cut in 0usize..64) {
        let seq = linearize_triples(&ts, v);
        let mut cut = cut.min(seq.len());
        while cut < seq.len() && seq.roles()[cut] != TokenRole::Marker {
            cut += 1;
        }
        let out = parse(&seq.tokens()[..cut], v, &schema());
        prop_assert!(out.triples.is_subset(&ts));
    }
}

#[test]
fn worked_example_in_every_view() {
    let ts: TripleSet = [
        RelationTriple::new("John Smith", "Work_For", "Acme"),
        RelationTriple::new("John Smith", "Live_In", "Boston"),
        RelationTriple::new("Acme", "OrgBased_In", "Boston"),
    ]
    .into_iter()
    .collect();
    let expect = [
        ("HRT", "<h> Acme <r> OrgBased_In <t> Boston <h> John Smith <r> Live_In <t> Boston <r> Work_For <t> Acme"),
        ("TRH", "<t> Acme <r> Work_For <h> John Smith <t> Boston <r> Live_In <h> John Smith <r> OrgBased_In <h> Acme"),
        ("RTH", "<r> Live_In <t> Boston <h> John Smith <r> OrgBased_In <t> Boston <h> Acme <r> Work_For <t> Acme <h> John Smith"),
    ];
    for (v, text) in expect {
        let view: OrderView = v.parse().unwrap();
        assert_eq!(linearize_triples(&ts, view).to_string(), text, "{v}");
    }
    let thr: OrderView = "THR".parse().unwrap();
    assert_eq!(treeify(&ts, thr).level2_count(), 2);
    assert_eq!(treeify(&ts, thr).level3_count(), 3);
}

#[test]
fn malformed_fragments_are_skipped() {
    let schema = schema();
    let v = OrderView::CANONICAL;
    let toks = ["<r>", "Kill", "<t>", "x", "<h>", "a", "<r>", "Nope", "<t>", "y", "<r>", "Kill", "<t>", "b"];
    let out = parse(&toks, v, &schema);
    let want: TripleSet = [RelationTriple::new("a", "Kill", "b")].into_iter().collect();
    assert_eq!(out.triples, want);
    assert!(out.diagnostics.len() >= 2, "{:?}", out.diagnostics);
}
