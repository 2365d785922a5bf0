use std::fmt;

use serde::{Deserialize, Serialize};

/// Which interaction stream a sequence or encoder belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Domain {
    A,
    B,
    /// Chronological merge of A and B.
    M,
}

impl Domain {
    pub fn name(self) -> &'static str {
        match self {
            Domain::A => "A",
            Domain::B => "B",
            Domain::M => "M",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An item identified within its own domain catalog.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ItemRef {
    pub domain: Domain,
    pub item: usize,
}

impl ItemRef {
    pub fn a(item: usize) -> Self {
        Self { domain: Domain::A, item }
    }

    pub fn b(item: usize) -> Self {
        Self { domain: Domain::B, item }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub item: ItemRef,
    pub ts: i64,
}

/// One user's events, sorted ascending by timestamp.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InteractionSequence {
    pub user: usize,
    pub events: Vec<Event>,
}

impl InteractionSequence {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn items(&self) -> Vec<ItemRef> {
        self.events.iter().map(|e| e.item).collect()
    }

    pub fn is_sorted(&self) -> bool {
        self.events.windows(2).all(|w| w[0].ts <= w[1].ts)
    }
}
