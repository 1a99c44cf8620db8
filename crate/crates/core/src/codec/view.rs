use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::RelationTriple;
use crate::error::{Error, Result};

/// One element role of a triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    Head,
    Relation,
    Tail,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Head, Role::Relation, Role::Tail];

    pub fn marker(self) -> &'static str {
        match self {
            Role::Head => "<h>",
            Role::Relation => "<r>",
            Role::Tail => "<t>",
        }
    }

    pub fn from_marker(token: &str) -> Option<Role> {
        match token {
            "<h>" => Some(Role::Head),
            "<r>" => Some(Role::Relation),
            "<t>" => Some(Role::Tail),
            _ => None,
        }
    }

    fn letter(self) -> char {
        match self {
            Role::Head => 'H',
            Role::Relation => 'R',
            Role::Tail => 'T',
        }
    }
}

/// A permutation of the three roles: the layer order of a relation tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct OrderView([Role; 3]);

impl OrderView {
    pub const ALL: [OrderView; 6] = [
        OrderView([Role::Head, Role::Relation, Role::Tail]),
        OrderView([Role::Head, Role::Tail, Role::Relation]),
        OrderView([Role::Relation, Role::Head, Role::Tail]),
        OrderView([Role::Relation, Role::Tail, Role::Head]),
        OrderView([Role::Tail, Role::Head, Role::Relation]),
        OrderView([Role::Tail, Role::Relation, Role::Head]),
    ];

    pub const CANONICAL: OrderView = OrderView::ALL[0];

    pub fn new(order: [Role; 3]) -> Result<Self> {
        let distinct = order[0] != order[1] && order[0] != order[2] && order[1] != order[2];
        if !distinct {
            return Err(Error::Contract(format!("{order:?} is not a permutation of roles")));
        }
        Ok(OrderView(order))
    }

    pub fn roles(self) -> [Role; 3] {
        self.0
    }

    pub fn role_at(self, position: usize) -> Role {
        self.0[position]
    }

    pub fn position_of(self, role: Role) -> usize {
        self.0.iter().position(|&r| r == role).expect("views are permutations")
    }

    /// Position in [`OrderView::ALL`].
    pub fn index(self) -> usize {
        OrderView::ALL.iter().position(|&v| v == self).expect("views are permutations")
    }

    /// Triple values in this view's layer order.
    pub fn arrange(self, triple: &RelationTriple) -> [&str; 3] {
        let pick = |r: Role| match r {
            Role::Head => triple.head.as_str(),
            Role::Relation => triple.relation.as_str(),
            Role::Tail => triple.tail.as_str(),
        };
        [pick(self.0[0]), pick(self.0[1]), pick(self.0[2])]
    }

    /// Inverse of [`OrderView::arrange`].
    pub fn restore(self, values: [&str; 3]) -> RelationTriple {
        let v = |r: Role| values[self.position_of(r)];
        RelationTriple::new(v(Role::Head), v(Role::Relation), v(Role::Tail))
    }
}

impl fmt::Display for OrderView {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in self.0 {
            write!(f, "{}", r.letter())?;
        }
        Ok(())
    }
}

impl FromStr for OrderView {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let roles: Vec<Role> = s
            .chars()
            .map(|c| match c.to_ascii_uppercase() {
                'H' => Ok(Role::Head),
                'R' => Ok(Role::Relation),
                'T' => Ok(Role::Tail),
                _ => Err(Error::Contract(format!("bad order view `{s}`"))),
            })
            .collect::<Result<_>>()?;
        let order: [Role; 3] = roles
            .try_into()
            .map_err(|_| Error::Contract(format!("bad order view `{s}`")))?;
        OrderView::new(order)
    }
}

impl TryFrom<String> for OrderView {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<OrderView> for String {
    fn from(v: OrderView) -> String {
        v.to_string()
    }
}
