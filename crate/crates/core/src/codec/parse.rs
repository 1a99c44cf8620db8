//! Recovering triples from (possibly malformed) generated token sequences.
//!
//! A marker for view position `k` opens a value at depth `k` and clears every
//! deeper value; closing a depth-2 value emits a triple. Bad fragments are
//! skipped together with everything nested under them and logged as
//! diagnostics. Parsing never fails.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::view::{OrderView, Role};
use crate::data::{RelationSchema, TripleSet};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiagnosticKind {
    /// Marker opened a value whose parent layer has no value.
    MissingParent { marker: String },
    EmptyValue { marker: String },
    UnknownRelation { name: String },
    ReservedInValue { value: String },
    /// Text outside any open value.
    StrayText { count: usize },
    /// Prompt token inside generated triples.
    UnexpectedPrompt { token: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub position: usize,
    #[serde(flatten)]
    pub kind: DiagnosticKind,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "@{}: ", self.position)?;
        match &self.kind {
            DiagnosticKind::MissingParent { marker } => {
                write!(f, "marker {marker} has no parent value")
            }
            DiagnosticKind::EmptyValue { marker } => write!(f, "empty value after {marker}"),
            DiagnosticKind::UnknownRelation { name } => write!(f, "unknown relation `{name}`"),
            DiagnosticKind::ReservedInValue { value } => {
                write!(f, "value {value:?} contains a reserved token")
            }
            DiagnosticKind::StrayText { count } => {
                write!(f, "{count} text token(s) outside any value")
            }
            DiagnosticKind::UnexpectedPrompt { token } => {
                write!(f, "unexpected prompt token {token}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseOutput {
    pub triples: TripleSet,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Clone, PartialEq)]
enum Slot {
    Empty,
    Value(String),
    /// Rejected value; descendants are dropped silently.
    Poisoned,
}

enum Open {
    None,
    /// Collecting words for depth `k`, opened at `position`.
    Value {
        depth: usize,
        position: usize,
        words: Vec<String>,
    },
    /// Inside a skipped fragment.
    Skip,
}

struct Parser<'a> {
    view: OrderView,
    schema: &'a RelationSchema,
    slots: [Slot; 3],
    open: Open,
    stray: Option<(usize, usize)>,
    out: ParseOutput,
}

impl Parser<'_> {
    fn diag(&mut self, position: usize, kind: DiagnosticKind) {
        self.out.diagnostics.push(Diagnostic { position, kind });
    }

    fn flush_stray(&mut self) {
        if let Some((position, count)) = self.stray.take() {
            self.diag(position, DiagnosticKind::StrayText { count });
        }
    }

    fn close(&mut self) {
        let Open::Value {
            depth,
            position,
            words,
        } = std::mem::replace(&mut self.open, Open::None)
        else {
            return;
        };
        let marker = self.view.role_at(depth).marker().to_string();
        let value = words.join(" ");
        let slot = if value.is_empty() {
            self.diag(position, DiagnosticKind::EmptyValue { marker });
            Slot::Poisoned
        } else if self.schema.reserved_substring(&value).is_some() {
            self.diag(position, DiagnosticKind::ReservedInValue { value });
            Slot::Poisoned
        } else if self.view.role_at(depth) == Role::Relation && self.schema.id_of(&value).is_none()
        {
            self.diag(position, DiagnosticKind::UnknownRelation { name: value });
            Slot::Poisoned
        } else {
            Slot::Value(value)
        };
        self.slots[depth] = slot;
        if depth == 2 {
            if let [Slot::Value(a), Slot::Value(b), Slot::Value(c)] = &self.slots {
                let triple = self.view.restore([a, b, c]);
                self.out.triples.insert(triple);
            }
        }
    }

    fn marker(&mut self, position: usize, role: Role) {
        self.close();
        self.flush_stray();
        let depth = self.view.position_of(role);
        for slot in &mut self.slots[depth..] {
            *slot = Slot::Empty;
        }
        let parent = if depth == 0 {
            Some(true)
        } else {
            match self.slots[depth - 1] {
                Slot::Value(_) => Some(true),
                Slot::Poisoned => Some(false),
                Slot::Empty => None,
            }
        };
        self.open = match parent {
            Some(true) => Open::Value {
                depth,
                position,
                words: Vec::new(),
            },
            Some(false) => {
                self.slots[depth] = Slot::Poisoned;
                Open::Skip
            }
            None => {
                self.diag(
                    position,
                    DiagnosticKind::MissingParent {
                        marker: role.marker().to_string(),
                    },
                );
                self.slots[depth] = Slot::Poisoned;
                Open::Skip
            }
        };
    }

    fn text(&mut self, position: usize, token: &str) {
        if self.schema.id_of_prompt(token).is_some() {
            self.diag(
                position,
                DiagnosticKind::UnexpectedPrompt {
                    token: token.to_string(),
                },
            );
            // the current value can no longer be trusted
            if let Open::Value { depth, .. } = self.open {
                self.slots[depth] = Slot::Poisoned;
                self.open = Open::Skip;
            }
            return;
        }
        match &mut self.open {
            Open::Value { words, .. } => words.push(token.to_string()),
            Open::Skip => {}
            Open::None => match &mut self.stray {
                Some((_, count)) => *count += 1,
                None => self.stray = Some((position, 1)),
            },
        }
    }
}

/// Inverse of linearization under `view`; see the module docs for recovery.
pub fn parse<S: AsRef<str>>(tokens: &[S], view: OrderView, schema: &RelationSchema) -> ParseOutput {
    let mut p = Parser {
        view,
        schema,
        slots: [Slot::Empty, Slot::Empty, Slot::Empty],
        open: Open::None,
        stray: None,
        out: ParseOutput::default(),
    };
    for (position, token) in tokens.iter().enumerate() {
        let token = token.as_ref();
        match Role::from_marker(token) {
            Some(role) => p.marker(position, role),
            None => p.text(position, token),
        }
    }
    p.close();
    p.flush_stray();
    p.out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::RelationTriple;

    fn schema() -> RelationSchema {
        RelationSchema::from_names(&["r1", "r2"]).unwrap()
    }

    fn run(text: &str, view: &str) -> ParseOutput {
        let toks: Vec<&str> = text.split_whitespace().collect();
        parse(&toks, view.parse().unwrap(), &schema())
    }

    #[test]
    fn canonical_sequence() {
        let out = run("<h> A <r> r1 <t> B <t> C <r> r2 <t> D", "HRT");
        assert!(out.diagnostics.is_empty());
        let expect: TripleSet = [("A", "r1", "B"), ("A", "r1", "C"), ("A", "r2", "D")]
            .iter()
            .map(|(h, r, t)| RelationTriple::new(h, r, t))
            .collect();
        assert_eq!(out.triples, expect);
    }

    #[test]
    fn deepest_marker_without_prefix() {
        let out = run("<t> B", "HRT");
        assert!(out.triples.is_empty());
        assert_eq!(out.diagnostics.len(), 1);
        assert!(matches!(out.diagnostics[0].kind, DiagnosticKind::MissingParent { .. }));
    }

    #[test]
    fn unknown_relation_skipped() {
        let out = run("<h> A <r> bogus_rel <t> B", "HRT");
        assert!(out.triples.is_empty());
        assert_eq!(out.diagnostics.len(), 1);
        assert!(out.diagnostics[0].to_string().contains("unknown relation"));
    }

    #[test]
    fn recovery_keeps_later_fragments() {
        let out = run("<h> A <r> bad <t> B <r> r1 <t> C", "HRT");
        assert_eq!(out.triples.len(), 1);
        assert!(out.triples.contains(&RelationTriple::new("A", "r1", "C")));
        assert_eq!(out.diagnostics.len(), 1);
    }

    #[test]
    fn empty_value_and_stray_text() {
        let out = run("junk junk <h> <r> r1 <t> B", "HRT");
        assert!(out.triples.is_empty());
        let kinds: Vec<_> = out.diagnostics.iter().map(|d| d.kind.clone()).collect();
        assert_eq!(
            kinds,
            vec![
                DiagnosticKind::StrayText { count: 2 },
                DiagnosticKind::EmptyValue {
                    marker: "<h>".into()
                }
            ]
        );
    }

    #[test]
    fn prompt_token_in_value() {
        let out = run("<h> A <rel:r1> <r> r1 <t> B", "HRT");
        assert!(out.triples.is_empty());
        assert!(matches!(out.diagnostics[0].kind, DiagnosticKind::UnexpectedPrompt { .. }));
    }

    #[test]
    fn other_view() {
        let out = run("<t> B <r> r1 <h> A <h> C", "TRH");
        assert!(out.diagnostics.is_empty());
        assert!(out.triples.contains(&RelationTriple::new("A", "r1", "B")));
        assert!(out.triples.contains(&RelationTriple::new("C", "r1", "B")));
    }

    #[test]
    fn multiword_and_duplicates() {
        let out = run("<h> New York <r> r1 <t> USA <t> USA", "HRT");
        assert_eq!(out.triples.len(), 1);
        assert!(out.triples.contains(&RelationTriple::new("New York", "r1", "USA")));
    }
}
