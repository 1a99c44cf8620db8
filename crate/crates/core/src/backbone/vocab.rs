use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::codec::Role;
use crate::data::{RelationSchema, Sample};
use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";

/// Decoder vocabulary. Layout: `<pad> <bos> <eos> <unk>`, the three markers,
/// the schema's prompt tokens in id order, then sorted words.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub const PAD_ID: usize = 0;
    pub const BOS_ID: usize = 1;
    pub const EOS_ID: usize = 2;
    pub const UNK_ID: usize = 3;

    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Contract(format!("duplicate vocabulary token {t}")));
            }
        }
        let v = Vocabulary { tokens, index };
        for (tok, id) in [
            (PAD, Self::PAD_ID),
            (BOS, Self::BOS_ID),
            (EOS, Self::EOS_ID),
            (UNK, Self::UNK_ID),
        ] {
            if v.id(tok) != Some(id) {
                return Err(Error::Contract(format!("vocabulary must reserve {tok} at id {id}")));
            }
        }
        for r in Role::ALL {
            if v.id(r.marker()).is_none() {
                return Err(Error::Contract(format!("vocabulary lacks marker {}", r.marker())));
            }
        }
        Ok(v)
    }

    /// Words are taken from triple surface forms and relation names.
    pub fn build(schema: &RelationSchema, samples: &[Sample]) -> Result<Self> {
        let mut tokens: Vec<String> = [PAD, BOS, EOS, UNK].iter().map(|s| s.to_string()).collect();
        tokens.extend(Role::ALL.iter().map(|r| r.marker().to_string()));
        tokens.extend(schema.relations().iter().map(|d| d.prompt_token.clone()));
        let mut words = BTreeSet::new();
        for d in schema.relations() {
            words.extend(d.name.split_whitespace().map(str::to_string));
        }
        for s in samples {
            for t in &s.triples {
                for part in [&t.head, &t.tail] {
                    words.extend(part.split_whitespace().map(str::to_string));
                }
            }
        }
        for w in words {
            if !tokens.contains(&w) {
                tokens.push(w);
            }
        }
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Unknown tokens map to `<unk>`.
    pub fn encode(&self, token: &str) -> usize {
        self.id(token).unwrap_or(Self::UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(UNK).to_string())
            .collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Self::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}
