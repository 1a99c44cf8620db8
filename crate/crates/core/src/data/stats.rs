use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::manifest::{FeatureSource, Sample};

/// Corpus counts for one manifest.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub samples: usize,
    pub triples: usize,
    /// Distinct relation types that occur at least once.
    pub relations: usize,
    pub entities: usize,
    pub empty_samples: usize,
    pub audio_samples: usize,
    pub synthetic_samples: usize,
    pub max_triples_per_sample: usize,
    pub per_relation: BTreeMap<String, usize>,
}

pub fn dataset_stats(samples: &[Sample]) -> DatasetStats {
    let mut s = DatasetStats {
        samples: samples.len(),
        ..DatasetStats::default()
    };
    let mut entities = BTreeSet::new();
    for sample in samples {
        s.triples += sample.triples.len();
        s.max_triples_per_sample = s.max_triples_per_sample.max(sample.triples.len());
        if sample.triples.is_empty() {
            s.empty_samples += 1;
        }
        match sample.source {
            FeatureSource::Audio(_) => s.audio_samples += 1,
            FeatureSource::Synthetic(_) => s.synthetic_samples += 1,
        }
        for t in &sample.triples {
            *s.per_relation.entry(t.relation.clone()).or_default() += 1;
            entities.insert(t.head.as_str());
            entities.insert(t.tail.as_str());
        }
    }
    s.relations = s.per_relation.len();
    s.entities = entities.len();
    s
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "samples:   {}", self.samples)?;
        writeln!(f, "triples:   {}", self.triples)?;
        writeln!(f, "relations: {}", self.relations)?;
        writeln!(f, "entities:  {}", self.entities)?;
        writeln!(f, "empty samples: {}", self.empty_samples)?;
        writeln!(f, "max triples per sample: {}", self.max_triples_per_sample)?;
        writeln!(
            f,
            "feature sources: {} audio, {} synthetic",
            self.audio_samples, self.synthetic_samples
        )?;
        for (name, n) in &self.per_relation {
            writeln!(f, "  {name:<20} {n}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{RelationTriple, TripleSet};

    fn sample(id: &str, ts: &[(&str, &str, &str)]) -> Sample {
        Sample {
            id: id.into(),
            transcript: String::new(),
            triples: ts.iter().map(|(h, r, t)| RelationTriple::new(h, r, t)).collect::<TripleSet>(),
            source: FeatureSource::Synthetic(1),
        }
    }

    #[test]
    fn counts() {
        let samples = vec![
            sample("a", &[("A", "r1", "B"), ("A", "r2", "C")]),
            sample("b", &[("B", "r1", "D"), ("E", "r1", "F")]),
            sample("c", &[("A", "r2", "B")]),
        ];
        let s = dataset_stats(&samples);
        assert_eq!((s.samples, s.triples, s.relations), (3, 5, 2));
        assert_eq!(s.entities, 6);
        assert_eq!(s.per_relation["r1"], 3);
        assert_eq!(dataset_stats(&[]), DatasetStats::default());
    }
}
