use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::view::{OrderView, Role};
use crate::data::RelationSchema;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenRole {
    Prompt,
    Ctrl,
    Marker,
    Text,
}

/// Tokens with a role annotation per position.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenSequence {
    tokens: Vec<String>,
    roles: Vec<TokenRole>,
}

impl TokenSequence {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, token: impl Into<String>, role: TokenRole) {
        self.tokens.push(token.into());
        self.roles.push(role);
    }

    pub fn extend(&mut self, other: TokenSequence) {
        self.tokens.extend(other.tokens);
        self.roles.extend(other.roles);
    }

    /// Tags markers as `Marker` and everything else as `Text`.
    pub fn from_generated<S: AsRef<str>>(tokens: &[S]) -> Self {
        let mut seq = TokenSequence::new();
        for t in tokens {
            let t = t.as_ref();
            let role = if Role::from_marker(t).is_some() {
                TokenRole::Marker
            } else {
                TokenRole::Text
            };
            seq.push(t, role);
        }
        seq
    }

    /// Splits on whitespace, see [`TokenSequence::from_generated`].
    pub fn from_whitespace(text: &str) -> Self {
        Self::from_generated(&text.split_whitespace().collect::<Vec<_>>())
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn roles(&self) -> &[TokenRole] {
        &self.roles
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, TokenRole)> {
        self.tokens.iter().map(String::as_str).zip(self.roles.iter().copied())
    }
}

impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tokens.join(" "))
    }
}

/// The three markers in view order.
pub fn ctrl_tokens(view: OrderView) -> TokenSequence {
    let mut seq = TokenSequence::new();
    for role in view.roles() {
        seq.push(role.marker(), TokenRole::Ctrl);
    }
    seq
}

/// Prompt tokens of the given relations, ascending by id.
pub fn prompt_tokens(relation_ids: &BTreeSet<usize>, schema: &RelationSchema) -> Result<TokenSequence> {
    let mut seq = TokenSequence::new();
    for &id in relation_ids {
        let tok = schema
            .prompt_token(id)
            .ok_or_else(|| Error::Contract(format!("relation id {id} not in schema")))?;
        seq.push(tok, TokenRole::Prompt);
    }
    Ok(seq)
}
