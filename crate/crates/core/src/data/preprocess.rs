use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{Domain, Event, InteractionSequence, ItemRef, RawInteraction};
use crate::error::{Error, Result};

fn default_min_user() -> usize {
    10
}
fn default_min_item() -> usize {
    10
}
fn default_min_domain() -> usize {
    3
}

/// Iterated frequency filters applied before the split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    /// Users need strictly more interactions than this, summed over both domains.
    #[serde(default = "default_min_user")]
    pub min_user_interactions: usize,
    /// Items need strictly more occurrences than this.
    #[serde(default = "default_min_item")]
    pub min_item_count: usize,
    /// Users need at least this many interactions in each domain.
    #[serde(default = "default_min_domain")]
    pub min_domain_interactions: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_user_interactions: default_min_user(),
            min_item_count: default_min_item(),
            min_domain_interactions: default_min_domain(),
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_domain_interactions < 3 {
            return Err(Error::Config(format!(
                "data.filter.min_domain_interactions = {} but the train/validation/test split needs 3",
                self.min_domain_interactions
            )));
        }
        Ok(())
    }
}

/// Leave-one-out split of one user's two domain sequences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserSplit {
    pub user: usize,
    pub train_a: Vec<Event>,
    pub val_a: Event,
    pub test_a: Event,
    pub train_b: Vec<Event>,
    pub val_b: Event,
    pub test_b: Event,
}

impl UserSplit {
    pub fn train(&self, domain: Domain) -> &[Event] {
        match domain {
            Domain::B => &self.train_b,
            _ => &self.train_a,
        }
    }

    pub fn val(&self, domain: Domain) -> Event {
        if domain == Domain::B {
            self.val_b
        } else {
            self.val_a
        }
    }

    pub fn test(&self, domain: Domain) -> Event {
        if domain == Domain::B {
            self.test_b
        } else {
            self.test_a
        }
    }

    /// Every item the user touched in `domain`, across all splits.
    pub fn all_items(&self, domain: Domain) -> BTreeSet<usize> {
        self.train(domain)
            .iter()
            .chain([self.val(domain), self.test(domain)].iter())
            .map(|e| e.item.item)
            .collect()
    }

    fn sequence(&self, events: Vec<Event>) -> InteractionSequence {
        InteractionSequence { user: self.user, events }
    }

    /// Chronological merge of the two training sequences.
    pub fn mixed_train(&self) -> InteractionSequence {
        build_mixed_sequence(&self.sequence(self.train_a.clone()), &self.sequence(self.train_b.clone()))
    }

    /// Chronological merge of training plus validation events.
    pub fn mixed_with_val(&self) -> InteractionSequence {
        let mut a = self.train_a.clone();
        a.push(self.val_a);
        let mut b = self.train_b.clone();
        b.push(self.val_b);
        build_mixed_sequence(&self.sequence(a), &self.sequence(b))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitDataset {
    pub users: Vec<UserSplit>,
    /// Original identifiers, indexed by dense id.
    pub user_names: Vec<String>,
    pub catalog_a: Vec<String>,
    pub catalog_b: Vec<String>,
}

impl SplitDataset {
    pub fn catalog(&self, domain: Domain) -> &[String] {
        match domain {
            Domain::B => &self.catalog_b,
            _ => &self.catalog_a,
        }
    }
}

/// Filters, re-indexes and splits raw interactions. Every rating counts as a click.
pub fn preprocess(raw: &[RawInteraction], filter: &FilterConfig) -> Result<SplitDataset> {
    filter.validate()?;
    let mut keep: Vec<&RawInteraction> = raw.iter().collect();
    if let Some(bad) = keep.iter().find(|r| r.domain == Domain::M) {
        return Err(Error::Data(format!("interaction of user {} has no concrete domain", bad.user)));
    }
    loop {
        let before = keep.len();
        let mut item_counts: HashMap<(Domain, &str), usize> = HashMap::new();
        for r in &keep {
            *item_counts.entry((r.domain, r.item.as_str())).or_default() += 1;
        }
        keep.retain(|r| item_counts[&(r.domain, r.item.as_str())] > filter.min_item_count);
        let mut user_counts: HashMap<&str, (usize, usize)> = HashMap::new();
        for r in &keep {
            let c = user_counts.entry(r.user.as_str()).or_default();
            if r.domain == Domain::A {
                c.0 += 1;
            } else {
                c.1 += 1;
            }
        }
        keep.retain(|r| {
            let (a, b) = user_counts[r.user.as_str()];
            a + b > filter.min_user_interactions
                && a >= filter.min_domain_interactions
                && b >= filter.min_domain_interactions
        });
        if keep.len() == before {
            break;
        }
    }
    if keep.is_empty() {
        return Err(Error::Data("no users survive the interaction filters".into()));
    }

    let index = |names: BTreeSet<&str>| -> (Vec<String>, HashMap<String, usize>) {
        let list: Vec<String> = names.into_iter().map(str::to_string).collect();
        let map = list.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        (list, map)
    };
    let (user_names, user_idx) = index(keep.iter().map(|r| r.user.as_str()).collect());
    let (catalog_a, idx_a) = index(keep.iter().filter(|r| r.domain == Domain::A).map(|r| r.item.as_str()).collect());
    let (catalog_b, idx_b) = index(keep.iter().filter(|r| r.domain == Domain::B).map(|r| r.item.as_str()).collect());

    let mut per_user: BTreeMap<usize, (Vec<Event>, Vec<Event>)> = BTreeMap::new();
    for r in &keep {
        let u = user_idx[&r.user];
        let entry = per_user.entry(u).or_default();
        if r.domain == Domain::A {
            entry.0.push(Event { item: ItemRef::a(idx_a[&r.item]), ts: r.ts });
        } else {
            entry.1.push(Event { item: ItemRef::b(idx_b[&r.item]), ts: r.ts });
        }
    }
    let users = per_user
        .into_iter()
        .map(|(user, (mut a, mut b))| {
            a.sort_by_key(|e| (e.ts, e.item.item));
            b.sort_by_key(|e| (e.ts, e.item.item));
            let (test_a, val_a) = (a.pop().expect("filtered"), a.pop().expect("filtered"));
            let (test_b, val_b) = (b.pop().expect("filtered"), b.pop().expect("filtered"));
            UserSplit { user, train_a: a, val_a, test_a, train_b: b, val_b, test_b }
        })
        .collect();
    Ok(SplitDataset { users, user_names, catalog_a, catalog_b })
}

/// Merges two sorted sequences by timestamp; ties put A before B, then lower item id first.
pub fn build_mixed_sequence(seq_a: &InteractionSequence, seq_b: &InteractionSequence) -> InteractionSequence {
    let mut events: Vec<Event> = seq_a.events.iter().chain(&seq_b.events).copied().collect();
    events.sort_by_key(|e| (e.ts, e.item.domain, e.item.item));
    InteractionSequence { user: seq_a.user, events }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(user: &str, item: &str, domain: Domain, ts: i64) -> RawInteraction {
        RawInteraction { user: user.into(), item: item.into(), domain, rating: 5.0, ts }
    }

    fn loose() -> FilterConfig {
        FilterConfig { min_user_interactions: 0, min_item_count: 0, min_domain_interactions: 3 }
    }

    #[test]
    fn leave_one_out_split() {
        let mut raw: Vec<RawInteraction> =
            (1..=5).map(|i| rec("u", &format!("v{i}"), Domain::A, i as i64)).collect();
        raw.extend((1..=3).map(|i| rec("u", &format!("w{i}"), Domain::B, 10 + i as i64)));
        let ds = preprocess(&raw, &loose()).unwrap();
        let u = &ds.users[0];
        let names = |events: &[Event]| events.iter().map(|e| ds.catalog_a[e.item.item].clone()).collect::<Vec<_>>();
        assert_eq!(names(&u.train_a), ["v1", "v2", "v3"]);
        assert_eq!(ds.catalog_a[u.val_a.item.item], "v4");
        assert_eq!(ds.catalog_a[u.test_a.item.item], "v5");
        assert_eq!(u.train_b.len(), 1);
    }

    #[test]
    fn thresholds_are_strict() {
        // user "small" has 9 interactions, "big" has 12
        let mut raw = Vec::new();
        for (user, n) in [("small", 9), ("big", 12)] {
            for i in 0..n {
                let d = if i % 2 == 0 { Domain::A } else { Domain::B };
                raw.push(rec(user, &format!("x{i}"), d, i as i64));
            }
        }
        let filter = FilterConfig { min_item_count: 0, ..FilterConfig::default() };
        let ds = preprocess(&raw, &filter).unwrap();
        assert_eq!(ds.user_names, vec!["big".to_string()]);

        // item "rare" occurs exactly 10 times and is removed
        let mut raw = Vec::new();
        for u in 0..11 {
            for i in 0..4 {
                raw.push(rec(&format!("u{u}"), &format!("a{i}"), Domain::A, i));
                raw.push(rec(&format!("u{u}"), &format!("b{i}"), Domain::B, i));
            }
            if u < 10 {
                raw.push(rec(&format!("u{u}"), "rare", Domain::A, 99));
            }
        }
        let filter = FilterConfig { min_user_interactions: 0, ..FilterConfig::default() };
        let ds = preprocess(&raw, &filter).unwrap();
        assert!(!ds.catalog_a.contains(&"rare".to_string()));
        assert_eq!(ds.catalog_a.len(), 4);
    }

    #[test]
    fn single_domain_users_are_excluded() {
        let mut raw: Vec<RawInteraction> = (0..6).map(|i| rec("a-only", &format!("v{i}"), Domain::A, i)).collect();
        raw.extend((0..3).map(|i| rec("both", &format!("v{i}"), Domain::A, i)));
        raw.extend((0..3).map(|i| rec("both", &format!("w{i}"), Domain::B, i)));
        let ds = preprocess(&raw, &loose()).unwrap();
        assert_eq!(ds.user_names, vec!["both".to_string()]);
    }

    #[test]
    fn mixed_sequence_cases() {
        let seq = |events: Vec<(ItemRef, i64)>| InteractionSequence {
            user: 0,
            events: events.into_iter().map(|(item, ts)| Event { item, ts }).collect(),
        };
        let a = seq(vec![(ItemRef::a(1), 1), (ItemRef::a(2), 5)]);
        let empty = seq(vec![]);
        assert_eq!(build_mixed_sequence(&a, &empty), a);
        let b = seq(vec![(ItemRef::b(7), 1), (ItemRef::b(3), 3)]);
        let m = build_mixed_sequence(&a, &b);
        assert_eq!(m.len(), 4);
        assert_eq!(m.items(), vec![ItemRef::a(1), ItemRef::b(7), ItemRef::b(3), ItemRef::a(2)]);
        assert!(m.is_sorted());
    }

    #[test]
    fn too_small_domain_minimum_is_a_config_error() {
        let f = FilterConfig { min_domain_interactions: 2, ..FilterConfig::default() };
        assert!(preprocess(&[], &f).unwrap_err().is_config());
    }
}
