//! Multi-view relation trees: building, linearizing into marker/text token
//! sequences, and parsing generated sequences back into triples.

pub mod parse;
pub mod tokens;
pub mod tree;
pub mod view;

pub use parse::{parse, Diagnostic, DiagnosticKind, ParseOutput};
pub use tokens::{ctrl_tokens, prompt_tokens, TokenRole, TokenSequence};
pub use tree::{linearize, treeify, RelationTree};
pub use view::{OrderView, Role};

use crate::data::{RelationSchema, Sample, TripleSet};

/// `linearize(treeify(triples, view), view)`.
pub fn linearize_triples(triples: &TripleSet, view: OrderView) -> TokenSequence {
    linearize(&treeify(triples, view), view).expect("tree built under the same view")
}

/// Outcome of round-tripping one sample's triples through every view.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundTripReport {
    pub sample_id: String,
    pub failed_views: Vec<OrderView>,
    pub diagnostics: Vec<(OrderView, Diagnostic)>,
}

impl RoundTripReport {
    pub fn is_clean(&self) -> bool {
        self.failed_views.is_empty() && self.diagnostics.is_empty()
    }
}

/// Checks `parse(linearize(treeify(T, v)), v) == T` for all six views.
pub fn round_trip_sample(sample: &Sample, schema: &RelationSchema) -> RoundTripReport {
    let mut report = RoundTripReport {
        sample_id: sample.id.clone(),
        failed_views: Vec::new(),
        diagnostics: Vec::new(),
    };
    for view in OrderView::ALL {
        let seq = linearize_triples(&sample.triples, view);
        let out = parse(seq.tokens(), view, schema);
        if out.triples != sample.triples {
            report.failed_views.push(view);
        }
        report
            .diagnostics
            .extend(out.diagnostics.into_iter().map(|d| (view, d)));
    }
    report
}
