use super::tokens::{TokenRole, TokenSequence};
use super::view::OrderView;
use crate::data::TripleSet;
use crate::error::{Error, Result};

/// Level-3 node: second-role value with its third-role leaves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecondNode {
    pub value: String,
    pub leaves: Vec<String>,
}

/// Level-2 node: first-role value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FirstNode {
    pub value: String,
    pub children: Vec<SecondNode>,
}

/// Four-layer tree (root, then one layer per role in view order) whose
/// root-to-leaf paths are the triples, with shared prefixes merged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationTree {
    view: OrderView,
    branches: Vec<FirstNode>,
}

impl RelationTree {
    pub fn view(&self) -> OrderView {
        self.view
    }

    pub fn branches(&self) -> &[FirstNode] {
        &self.branches
    }

    pub fn level2_count(&self) -> usize {
        self.branches.len()
    }

    pub fn level3_count(&self) -> usize {
        self.branches.iter().map(|b| b.children.len()).sum()
    }

    pub fn leaf_count(&self) -> usize {
        self.branches
            .iter()
            .flat_map(|b| &b.children)
            .map(|c| c.leaves.len())
            .sum()
    }

    /// Root-to-leaf paths in view order.
    pub fn paths(&self) -> impl Iterator<Item = [&str; 3]> {
        self.branches.iter().flat_map(|b| {
            b.children.iter().flat_map(move |c| {
                c.leaves
                    .iter()
                    .map(move |l| [b.value.as_str(), c.value.as_str(), l.as_str()])
            })
        })
    }

    /// Paths mapped back to triples.
    pub fn to_triples(&self) -> TripleSet {
        self.paths().map(|p| self.view.restore(p)).collect()
    }
}

/// Groups triples into a relation tree under `view`. Triples are inserted in
/// lexicographic order of their view-ordered values.
pub fn treeify(triples: &TripleSet, view: OrderView) -> RelationTree {
    let mut paths: Vec<[&str; 3]> = triples.iter().map(|t| view.arrange(t)).collect();
    paths.sort_unstable();
    paths.dedup();
    let mut branches: Vec<FirstNode> = Vec::new();
    for [a, b, c] in paths {
        if branches.last().map(|n| n.value.as_str()) != Some(a) {
            branches.push(FirstNode {
                value: a.to_string(),
                children: Vec::new(),
            });
        }
        let first = branches.last_mut().expect("just pushed");
        if first.children.last().map(|n| n.value.as_str()) != Some(b) {
            first.children.push(SecondNode {
                value: b.to_string(),
                leaves: Vec::new(),
            });
        }
        first
            .children
            .last_mut()
            .expect("just pushed")
            .leaves
            .push(c.to_string());
    }
    RelationTree { view, branches }
}

fn emit(seq: &mut TokenSequence, marker: &str, value: &str) {
    seq.push(marker, TokenRole::Marker);
    for word in value.split_whitespace() {
        seq.push(word, TokenRole::Text);
    }
}

/// Depth-first serialization: entering a node emits the marker of its layer's
/// role followed by the node's words.
pub fn linearize(tree: &RelationTree, view: OrderView) -> Result<TokenSequence> {
    if tree.view != view {
        return Err(Error::Contract(format!(
            "tree built under view {} linearized under {view}",
            tree.view
        )));
    }
    let [m1, m2, m3] = view.roles().map(|r| r.marker());
    let mut seq = TokenSequence::new();
    for first in &tree.branches {
        emit(&mut seq, m1, &first.value);
        for second in &first.children {
            emit(&mut seq, m2, &second.value);
            for leaf in &second.leaves {
                emit(&mut seq, m3, leaf);
            }
        }
    }
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::RelationTriple;

    fn set(ts: &[(&str, &str, &str)]) -> TripleSet {
        ts.iter().map(|(h, r, t)| RelationTriple::new(h, r, t)).collect()
    }

    #[test]
    fn empty_tree() {
        let tree = treeify(&TripleSet::new(), OrderView::CANONICAL);
        assert_eq!(tree.leaf_count(), 0);
        assert!(linearize(&tree, OrderView::CANONICAL).unwrap().is_empty());
    }

    #[test]
    fn single_triple() {
        let tree = treeify(&set(&[("A", "r1", "B")]), OrderView::CANONICAL);
        assert_eq!(tree.paths().collect::<Vec<_>>(), vec![["A", "r1", "B"]]);
        assert_eq!(
            linearize(&tree, OrderView::CANONICAL).unwrap().to_string(),
            "<h> A <r> r1 <t> B"
        );
    }

    #[test]
    fn shared_prefixes() {
        let ts = set(&[("A", "r1", "B"), ("A", "r1", "C"), ("A", "r2", "D")]);
        let tree = treeify(&ts, OrderView::CANONICAL);
        assert_eq!((tree.level2_count(), tree.level3_count(), tree.leaf_count()), (1, 2, 3));
        assert_eq!(
            linearize(&tree, OrderView::CANONICAL).unwrap().to_string(),
            "<h> A <r> r1 <t> B <t> C <r> r2 <t> D"
        );
        // relation-first view groups by relation
        let rht: OrderView = "RHT".parse().unwrap();
        let tree = treeify(&ts, rht);
        assert_eq!(
            linearize(&tree, rht).unwrap().to_string(),
            "<r> r1 <h> A <t> B <t> C <r> r2 <h> A <t> D"
        );
        assert_eq!(tree.to_triples(), ts);
    }

    #[test]
    fn multiword_values_split_into_text_tokens() {
        let tree = treeify(&set(&[("New York", "r", "USA")]), OrderView::CANONICAL);
        let seq = linearize(&tree, OrderView::CANONICAL).unwrap();
        assert_eq!(seq.len(), 7);
        assert_eq!(seq.roles()[1], TokenRole::Text);
        assert_eq!(seq.roles()[2], TokenRole::Text);
    }

    #[test]
    fn view_mismatch_is_contract_error() {
        let tree = treeify(&set(&[("A", "r", "B")]), OrderView::CANONICAL);
        assert!(linearize(&tree, OrderView::ALL[3]).is_err());
    }
}
