//! Line-delimited JSON manifests of samples.
//!
//! One record per line:
//! `{"id": "...", "transcript": "...", "triples": [["head", "Relation", "tail"]], "synthetic_seed": 7}`
//! with exactly one of `audio_path` / `synthetic_seed`.

use std::collections::{BTreeSet, HashSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::schema::RelationSchema;
use super::triple::{RelationTriple, TripleSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureSource {
    Audio(String),
    Synthetic(u64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub transcript: String,
    pub triples: TripleSet,
    pub source: FeatureSource,
}

/// Binary multi-label target over the schema's relations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationLabelVector(pub Vec<bool>);

impl RelationLabelVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn positive_ids(&self) -> BTreeSet<usize> {
        self.0
            .iter()
            .enumerate()
            .filter_map(|(i, &y)| y.then_some(i))
            .collect()
    }
}

impl Sample {
    /// Ids of the relations appearing in this sample's triples.
    pub fn relation_ids(&self, schema: &RelationSchema) -> BTreeSet<usize> {
        self.triples
            .iter()
            .filter_map(|t| schema.id_of(&t.relation))
            .collect()
    }

    pub fn to_record(&self) -> ManifestRecord {
        let (audio_path, synthetic_seed) = match &self.source {
            FeatureSource::Audio(p) => (Some(p.clone()), None),
            FeatureSource::Synthetic(s) => (None, Some(*s)),
        };
        ManifestRecord {
            id: self.id.clone(),
            transcript: self.transcript.clone(),
            triples: self
                .triples
                .iter()
                .map(|t| [t.head.clone(), t.relation.clone(), t.tail.clone()])
                .collect(),
            audio_path,
            synthetic_seed,
        }
    }
}

/// `y_i = 1` iff relation `i` appears in any triple of the sample.
pub fn relation_labels(sample: &Sample, schema: &RelationSchema) -> RelationLabelVector {
    let mut y = vec![false; schema.len()];
    for id in sample.relation_ids(schema) {
        y[id] = true;
    }
    RelationLabelVector(y)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub transcript: String,
    pub triples: Vec<[String; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic_seed: Option<u64>,
}

/// What to do with a triple whose entity does not occur in the transcript.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityCheck {
    #[default]
    Warn,
    Reject,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoadOptions {
    pub entity_check: EntityCheck,
}

#[derive(Debug, Clone, Default)]
pub struct LoadedManifest {
    pub samples: Vec<Sample>,
    pub warnings: Vec<String>,
    pub rejected: Vec<String>,
}

pub fn load_manifest(
    path: impl AsRef<Path>,
    schema: &RelationSchema,
    options: &LoadOptions,
) -> Result<LoadedManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path, schema, options)
}

pub fn parse_manifest(
    text: &str,
    path: &Path,
    schema: &RelationSchema,
    options: &LoadOptions,
) -> Result<LoadedManifest> {
    let mut out = LoadedManifest::default();
    let mut seen = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        let record: ManifestRecord =
            serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        if !seen.insert(record.id.clone()) {
            return Err(malformed(format!("duplicate sample id `{}`", record.id)));
        }
        let (sample, problems) =
            validate_record(record, schema).map_err(|e| match e {
                Error::Contract(m) => malformed(m),
                other => other,
            })?;
        if problems.is_empty() {
            out.samples.push(sample);
        } else {
            match options.entity_check {
                EntityCheck::Warn => {
                    out.warnings.extend(problems);
                    out.samples.push(sample);
                }
                EntityCheck::Reject => {
                    out.warnings.extend(problems);
                    out.rejected.push(sample.id);
                }
            }
        }
    }
    Ok(out)
}

/// Validates a record into a sample; the returned strings are soft
/// entity-not-in-transcript problems.
pub fn validate_record(
    record: ManifestRecord,
    schema: &RelationSchema,
) -> Result<(Sample, Vec<String>)> {
    if record.id.trim().is_empty() {
        return Err(Error::Contract("empty sample id".into()));
    }
    let source = match (record.audio_path, record.synthetic_seed) {
        (Some(p), None) => FeatureSource::Audio(p),
        (None, Some(s)) => FeatureSource::Synthetic(s),
        _ => {
            return Err(Error::Contract(format!(
                "sample `{}` needs exactly one of audio_path / synthetic_seed",
                record.id
            )))
        }
    };
    let mut triples = TripleSet::new();
    let mut problems = Vec::new();
    for [head, relation, tail] in &record.triples {
        if schema.id_of(relation.trim()).is_none() {
            return Err(Error::UnknownRelation {
                sample: record.id.clone(),
                relation: relation.clone(),
            });
        }
        let triple = RelationTriple::new(head, relation, tail);
        for entity in [&triple.head, &triple.tail] {
            if entity.is_empty() {
                return Err(Error::Ingestion {
                    sample: record.id.clone(),
                    message: "empty entity surface form".into(),
                });
            }
            if let Some(tok) = schema.reserved_substring(entity) {
                return Err(Error::Ingestion {
                    sample: record.id.clone(),
                    message: format!("entity {entity:?} contains reserved token {tok}"),
                });
            }
            if !record.transcript.contains(entity.as_str()) {
                problems.push(format!(
                    "sample `{}`: entity {entity:?} does not occur in the transcript",
                    record.id
                ));
            }
        }
        triples.insert(triple);
    }
    Ok((
        Sample {
            id: record.id,
            transcript: record.transcript,
            triples,
            source,
        },
        problems,
    ))
}

pub fn write_manifest(path: impl AsRef<Path>, samples: &[Sample]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for s in samples {
        serde_json::to_writer(&mut buf, &s.to_record())?;
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> RelationSchema {
        RelationSchema::from_names(&["Kill", "LocatedIn", "WorkFor"]).unwrap()
    }

    fn parse(text: &str, options: LoadOptions) -> Result<LoadedManifest> {
        parse_manifest(text, Path::new("m.jsonl"), &schema(), &options)
    }

    #[test]
    fn minimal_record() {
        let m = parse(
            r#"{"id":"a","transcript":"Paris is in France","triples":[["Paris","LocatedIn","France"]],"synthetic_seed":7}"#,
            LoadOptions::default(),
        )
        .unwrap();
        assert_eq!(m.samples.len(), 1);
        assert_eq!(m.samples[0].source, FeatureSource::Synthetic(7));
        assert_eq!(m.samples[0].triples.len(), 1);
        assert!(m.warnings.is_empty());
    }

    #[test]
    fn negative_sample_admitted() {
        let m = parse(
            r#"{"id":"n","transcript":"nothing here","triples":[],"synthetic_seed":1}"#,
            LoadOptions::default(),
        )
        .unwrap();
        assert!(m.samples[0].triples.is_empty());
    }

    #[test]
    fn reserved_substring_rejected() {
        let err = parse(
            r#"{"id":"bad","transcript":"x","triples":[["<r>x","Kill","y"]],"synthetic_seed":1}"#,
            LoadOptions::default(),
        )
        .unwrap_err();
        match err {
            Error::Ingestion { sample, .. } => assert_eq!(sample, "bad"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn unknown_relation_named() {
        let err = parse(
            r#"{"id":"u","transcript":"a b","triples":[["a","Bogus","b"]],"synthetic_seed":1}"#,
            LoadOptions::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("Bogus"));
    }

    #[test]
    fn malformed_line_number() {
        let text = "{\"id\":\"a\",\"transcript\":\"t\",\"triples\":[],\"synthetic_seed\":1}\n\n{oops";
        match parse(text, LoadOptions::default()).unwrap_err() {
            Error::MalformedRecord { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn both_sources_is_malformed() {
        let text = r#"{"id":"a","transcript":"t","triples":[],"synthetic_seed":1,"audio_path":"x.wav"}"#;
        assert!(matches!(
            parse(text, LoadOptions::default()),
            Err(Error::MalformedRecord { line: 1, .. })
        ));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let line = r#"{"id":"a","transcript":"t","triples":[],"synthetic_seed":1}"#;
        assert!(parse(&format!("{line}\n{line}"), LoadOptions::default()).is_err());
    }

    #[test]
    fn entity_check_warn_and_reject() {
        let line = r#"{"id":"w","transcript":"Bob met Al","triples":[["Bob","Kill","Carl"]],"synthetic_seed":1}"#;
        let warn = parse(line, LoadOptions::default()).unwrap();
        assert_eq!(warn.samples.len(), 1);
        assert_eq!(warn.warnings.len(), 1);
        let reject = parse(
            line,
            LoadOptions {
                entity_check: EntityCheck::Reject,
            },
        )
        .unwrap();
        assert!(reject.samples.is_empty());
        assert_eq!(reject.rejected, vec!["w".to_string()]);
    }

    #[test]
    fn labels_from_triples() {
        let s = schema();
        let m = parse(
            r#"{"id":"a","transcript":"a b c d","triples":[["a","LocatedIn","b"],["c","LocatedIn","d"]],"synthetic_seed":1}
{"id":"b","transcript":"e","triples":[],"synthetic_seed":2}
{"id":"c","transcript":"a b c d","triples":[["a","Kill","b"],["c","WorkFor","d"]],"synthetic_seed":3}"#,
            LoadOptions::default(),
        )
        .unwrap();
        let y: Vec<_> = m.samples.iter().map(|x| relation_labels(x, &s).0).collect();
        assert_eq!(y[0], vec![false, true, false]);
        assert_eq!(y[1], vec![false, false, false]);
        assert_eq!(y[2], vec![true, false, true]);
    }
}
