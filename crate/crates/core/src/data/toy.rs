//! Template-generated toy corpus over five relation types, used for smoke
//! runs and the end-to-end tests.

use rand::seq::IndexedRandom;
use rand::Rng as _;

use super::manifest::{FeatureSource, Sample};
use super::schema::RelationSchema;
use super::triple::{RelationTriple, TripleSet};
use crate::rng::substream;

#[derive(Clone, Copy, PartialEq, Eq)]
enum EntityType {
    Person,
    Org,
    Location,
}

const PEOPLE: &[&str] = &[
    "Alice", "Bruno", "Chiara", "Dmitri", "Elena", "Farid", "Greta", "Hiro", "Ingrid", "Jonas",
    "Keiko", "Luis", "Mara", "Nikolai", "Olga", "Pavel",
];
const ORGS: &[&str] = &[
    "Acme", "Borealis", "Cygnet", "Dynamo", "Evergreen", "Fulcrum", "Globex", "Helix", "Initech",
    "Juniper",
];
const LOCATIONS: &[&str] = &[
    "Paris", "Berlin", "Madrid", "Oslo", "Lima", "Quito", "Dakar", "Hanoi", "Perth", "Austin",
    "New York", "Buenos Aires",
];

struct RelationTemplate {
    name: &'static str,
    head: EntityType,
    tail: EntityType,
    phrase: &'static str,
}

const RELATIONS: &[RelationTemplate] = &[
    RelationTemplate {
        name: "Work_For",
        head: EntityType::Person,
        tail: EntityType::Org,
        phrase: "works for",
    },
    RelationTemplate {
        name: "Live_In",
        head: EntityType::Person,
        tail: EntityType::Location,
        phrase: "lives in",
    },
    RelationTemplate {
        name: "OrgBased_In",
        head: EntityType::Org,
        tail: EntityType::Location,
        phrase: "is based in",
    },
    RelationTemplate {
        name: "Located_In",
        head: EntityType::Location,
        tail: EntityType::Location,
        phrase: "is located in",
    },
    RelationTemplate {
        name: "Kill",
        head: EntityType::Person,
        tail: EntityType::Person,
        phrase: "killed",
    },
];

fn pool(t: EntityType) -> &'static [&'static str] {
    match t {
        EntityType::Person => PEOPLE,
        EntityType::Org => ORGS,
        EntityType::Location => LOCATIONS,
    }
}

pub fn toy_schema() -> RelationSchema {
    let names: Vec<&str> = RELATIONS.iter().map(|r| r.name).collect();
    RelationSchema::from_names(&names).expect("toy schema is valid")
}

/// `count` samples with 1..=3 triples each; ids are `{prefix}-{index}`.
pub fn toy_samples(count: usize, seed: u64, prefix: &str) -> Vec<Sample> {
    let mut rng = substream(seed, &format!("toy-corpus/{prefix}"));
    let mut out = Vec::with_capacity(count);
    for index in 0..count {
        let n_triples = rng.random_range(1..=3);
        let mut clauses: Vec<String> = Vec::new();
        let mut triples = TripleSet::new();
        let mut last_head: Option<(&'static str, EntityType)> = None;
        while triples.len() < n_triples {
            let rel = &RELATIONS[rng.random_range(0..RELATIONS.len())];
            let head = match last_head {
                Some((h, t)) if t == rel.head && rng.random_bool(0.35) => h,
                _ => *pool(rel.head).choose(&mut rng).expect("non-empty pool"),
            };
            let tail = *pool(rel.tail).choose(&mut rng).expect("non-empty pool");
            if head == tail {
                continue;
            }
            if triples.insert(RelationTriple::new(head, rel.name, tail)) {
                clauses.push(format!("{head} {} {tail}", rel.phrase));
                last_head = Some((head, rel.head));
            }
        }
        out.push(Sample {
            id: format!("{prefix}-{index:04}"),
            transcript: clauses.join(" and "),
            triples,
            source: FeatureSource::Synthetic(rng.random()),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_are_valid_and_deterministic() {
        let schema = toy_schema();
        assert_eq!(schema.len(), 5);
        let a = toy_samples(50, 3, "train");
        assert_eq!(a, toy_samples(50, 3, "train"));
        for s in &a {
            assert!((1..=3).contains(&s.triples.len()));
            for t in &s.triples {
                assert!(schema.id_of(&t.relation).is_some());
                assert!(s.transcript.contains(&t.head));
                assert!(s.transcript.contains(&t.tail));
            }
        }
    }
}
