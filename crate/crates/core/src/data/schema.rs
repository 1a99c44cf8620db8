use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::Role;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationDef {
    pub id: usize,
    pub name: String,
    pub prompt_token: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaFile {
    relations: Vec<RelationDef>,
}

/// The closed set of relation types with stable ids and prompt tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationSchema {
    relations: Vec<RelationDef>,
    by_name: HashMap<String, usize>,
    by_prompt: HashMap<String, usize>,
}

impl RelationSchema {
    pub fn new(relations: Vec<RelationDef>) -> Result<Self> {
        let mut by_name = HashMap::new();
        let mut by_prompt = HashMap::new();
        let markers: Vec<&str> = Role::ALL.iter().map(|r| r.marker()).collect();
        for (pos, def) in relations.iter().enumerate() {
            if def.id != pos {
                return Err(Error::Schema(format!(
                    "relation ids must be contiguous from 0; `{}` has id {} at position {pos}",
                    def.name, def.id
                )));
            }
            let name = def.name.trim();
            if name.is_empty() || name != def.name || name.split_whitespace().count() != 1 {
                return Err(Error::Schema(format!(
                    "relation name {:?} must be a single non-empty word",
                    def.name
                )));
            }
            if def.prompt_token.is_empty() || def.prompt_token.split_whitespace().count() != 1
            {
                return Err(Error::Schema(format!(
                    "prompt token {:?} must be a single non-empty word",
                    def.prompt_token
                )));
            }
            if markers.contains(&def.prompt_token.as_str()) {
                return Err(Error::Schema(format!(
                    "prompt token {} collides with a structural marker",
                    def.prompt_token
                )));
            }
            if let Some(m) = markers.iter().find(|m| def.name.contains(*m)) {
                return Err(Error::Schema(format!(
                    "relation name {} contains marker {m}",
                    def.name
                )));
            }
            if by_name.insert(def.name.clone(), pos).is_some() {
                return Err(Error::Schema(format!("duplicate relation name {}", def.name)));
            }
            if by_prompt.insert(def.prompt_token.clone(), pos).is_some() {
                return Err(Error::Schema(format!(
                    "duplicate prompt token {}",
                    def.prompt_token
                )));
            }
        }
        let schema = RelationSchema {
            relations,
            by_name,
            by_prompt,
        };
        for def in &schema.relations {
            if let Some(tok) = schema.reserved_substring(&def.name) {
                return Err(Error::Schema(format!(
                    "relation name {} contains reserved token {tok}",
                    def.name
                )));
            }
        }
        Ok(schema)
    }

    /// Schema whose prompt tokens are `<rel:NAME>`.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        Self::new(
            names
                .iter()
                .enumerate()
                .map(|(id, n)| RelationDef {
                    id,
                    name: n.as_ref().to_string(),
                    prompt_token: format!("<rel:{}>", n.as_ref()),
                })
                .collect(),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: SchemaFile = serde_json::from_str(&text)
            .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        Self::new(file.relations)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&SchemaFile {
            relations: self.relations.clone(),
        })?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }

    pub fn relations(&self) -> &[RelationDef] {
        &self.relations
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.relations.get(id).map(|d| d.name.as_str())
    }

    pub fn prompt_token(&self, id: usize) -> Option<&str> {
        self.relations.get(id).map(|d| d.prompt_token.as_str())
    }

    pub fn id_of_prompt(&self, token: &str) -> Option<usize> {
        self.by_prompt.get(token).copied()
    }

    /// Structural markers followed by every prompt token.
    pub fn reserved_tokens(&self) -> impl Iterator<Item = &str> {
        Role::ALL
            .iter()
            .map(|r| r.marker())
            .chain(self.relations.iter().map(|d| d.prompt_token.as_str()))
    }

    /// First reserved token occurring as a substring of `text`, if any.
    pub fn reserved_substring(&self, text: &str) -> Option<&str> {
        self.reserved_tokens().find(|tok| text.contains(tok))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_must_be_contiguous() {
        let defs = vec![
            RelationDef {
                id: 0,
                name: "A".into(),
                prompt_token: "<a>".into(),
            },
            RelationDef {
                id: 2,
                name: "B".into(),
                prompt_token: "<b>".into(),
            },
        ];
        assert!(matches!(RelationSchema::new(defs), Err(Error::Schema(_))));
    }

    #[test]
    fn prompt_token_cannot_be_a_marker() {
        let defs = vec![RelationDef {
            id: 0,
            name: "A".into(),
            prompt_token: "<h>".into(),
        }];
        assert!(RelationSchema::new(defs).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        assert!(RelationSchema::from_names(&["A", "A"]).is_err());
        assert!(RelationSchema::from_names(&[""]).is_err());
    }

    #[test]
    fn lookup_and_reserved() {
        let s = RelationSchema::from_names(&["LocatedIn", "WorkFor"]).unwrap();
        assert_eq!(s.id_of("WorkFor"), Some(1));
        assert_eq!(s.prompt_token(0), Some("<rel:LocatedIn>"));
        assert_eq!(s.id_of_prompt("<rel:WorkFor>"), Some(1));
        assert_eq!(s.reserved_substring("a<r>b"), Some("<r>"));
        assert_eq!(s.reserved_substring("x <rel:WorkFor>"), Some("<rel:WorkFor>"));
        assert_eq!(s.reserved_substring("plain"), None);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("schema.json");
        let s = RelationSchema::from_names(&["A", "B", "C"]).unwrap();
        s.save(&p).unwrap();
        assert_eq!(RelationSchema::load(&p).unwrap(), s);
    }
}
