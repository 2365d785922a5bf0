use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::Vocabularies;
use crate::data::{Domain, ItemRef};

/// Feature fields produced per item.
pub const ITEM_FIELDS: usize = 4;
/// Profile fields produced per user.
pub const USER_FIELDS: usize = 3;

fn clean_list(xs: Vec<String>) -> Vec<String> {
    let mut seen = BTreeSet::new();
    xs.into_iter()
        .map(|s| s.trim().to_lowercase())
        .filter(|s| !s.is_empty() && seen.insert(s.clone()))
        .collect()
}

/// LLM-enriched item metadata.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedItem {
    pub item: ItemRef,
    pub genres: Vec<String>,
    pub themes: Vec<String>,
    pub keywords: Vec<String>,
    pub category: Option<String>,
}

#[derive(Deserialize)]
pub(crate) struct ItemReply {
    #[serde(default)]
    genres: Vec<String>,
    #[serde(default)]
    themes: Vec<String>,
    #[serde(default)]
    keywords: Vec<String>,
    #[serde(default)]
    category: Option<String>,
}

impl AugmentedItem {
    /// Normalized item, or `None` when every field is empty.
    pub(crate) fn from_reply(item: ItemRef, r: ItemReply) -> Option<Self> {
        let category = r.category.map(|c| c.trim().to_lowercase()).filter(|c| !c.is_empty());
        let out = Self {
            item,
            genres: clean_list(r.genres),
            themes: clean_list(r.themes),
            keywords: clean_list(r.keywords),
            category,
        };
        (!out.genres.is_empty() || !out.themes.is_empty() || !out.keywords.is_empty() || out.category.is_some())
            .then_some(out)
    }

    /// Namespaced feature tokens, e.g. `genre:drama`.
    pub fn tokens(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        out.extend(self.genres.iter().map(|g| format!("genre:{g}")));
        out.extend(self.themes.iter().map(|t| format!("theme:{t}")));
        out.extend(self.keywords.iter().map(|k| format!("keyword:{k}")));
        out.extend(self.category.iter().map(|c| format!("category:{c}")));
        out
    }

    pub fn describe(&self) -> String {
        format!(
            "genres: {}; themes: {}; keywords: {}; category: {}",
            self.genres.join(", "),
            self.themes.join(", "),
            self.keywords.join(", "),
            self.category.as_deref().unwrap_or("")
        )
    }
}

/// LLM-inferred user attributes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedUserProfile {
    pub user: usize,
    pub age_bracket: String,
    pub gender: String,
    pub preference_summary: Vec<String>,
}

#[derive(Deserialize)]
pub(crate) struct UserReply {
    age_bracket: String,
    gender: String,
    #[serde(default)]
    preference_summary: Vec<String>,
}

impl AugmentedUserProfile {
    /// Profile whose fields all lie in the closed vocabularies.
    pub(crate) fn from_reply(user: usize, r: UserReply, vocab: &Vocabularies) -> Result<Self, String> {
        let find = |list: &[String], v: &str, field: &str| {
            let v = v.trim().to_lowercase();
            list.iter().find(|x| x.to_lowercase() == v).cloned().ok_or_else(|| format!("{field} {v:?} not in vocabulary"))
        };
        let age_bracket = find(&vocab.age_brackets, &r.age_bracket, "age_bracket")?;
        let gender = find(&vocab.genders, &r.gender, "gender")?;
        let preference_summary = clean_list(r.preference_summary)
            .iter()
            .map(|p| find(&vocab.preference_tags, p, "preference tag"))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { user, age_bracket, gender, preference_summary })
    }

    pub fn tokens(&self) -> Vec<String> {
        let mut out = vec![format!("age:{}", self.age_bracket), format!("gender:{}", self.gender)];
        out.extend(self.preference_summary.iter().map(|p| format!("pref:{p}")));
        out
    }
}

/// Generated positives and negatives per domain, all drawn from the candidate sets.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceExpansion {
    pub positives_a: Vec<usize>,
    pub positives_b: Vec<usize>,
    pub negatives_a: Vec<usize>,
    pub negatives_b: Vec<usize>,
}

#[derive(Deserialize)]
pub(crate) struct SequenceReply {
    #[serde(default)]
    positives_a: Vec<i64>,
    #[serde(default)]
    positives_b: Vec<i64>,
    #[serde(default)]
    negatives_a: Vec<i64>,
    #[serde(default)]
    negatives_b: Vec<i64>,
}

/// Keeps reply ids that are candidates, in candidate order. An id claimed as
/// both positive and negative stays positive. Returns the filtered lists and
/// the number of dropped ids.
fn filter_domain(candidates: &[usize], pos: &[i64], neg: &[i64]) -> (Vec<usize>, Vec<usize>, usize) {
    let set: BTreeSet<i64> = candidates.iter().map(|&c| c as i64).collect();
    let pos_set: BTreeSet<i64> = pos.iter().copied().collect();
    let neg_set: BTreeSet<i64> = neg.iter().copied().collect();
    let dropped = pos_set.iter().filter(|p| !set.contains(p)).count()
        + neg_set.iter().filter(|n| !set.contains(n) || pos_set.contains(n)).count();
    let positives = candidates.iter().copied().filter(|&c| pos_set.contains(&(c as i64))).collect();
    let negatives =
        candidates.iter().copied().filter(|&c| neg_set.contains(&(c as i64)) && !pos_set.contains(&(c as i64))).collect();
    (positives, negatives, dropped)
}

impl SequenceExpansion {
    pub(crate) fn from_reply(r: SequenceReply, candidates_a: &[usize], candidates_b: &[usize]) -> (Self, usize) {
        let (positives_a, negatives_a, da) = filter_domain(candidates_a, &r.positives_a, &r.negatives_a);
        let (positives_b, negatives_b, db) = filter_domain(candidates_b, &r.positives_b, &r.negatives_b);
        (Self { positives_a, positives_b, negatives_a, negatives_b }, da + db)
    }

    pub fn is_empty(&self) -> bool {
        self.positives_a.is_empty()
            && self.positives_b.is_empty()
            && self.negatives_a.is_empty()
            && self.negatives_b.is_empty()
    }

    pub fn positives(&self, domain: Domain) -> Vec<ItemRef> {
        let (ids, d) = if domain == Domain::B { (&self.positives_b, Domain::B) } else { (&self.positives_a, Domain::A) };
        ids.iter().map(|&item| ItemRef { domain: d, item }).collect()
    }

    pub fn negatives(&self, domain: Domain) -> Vec<ItemRef> {
        let (ids, d) = if domain == Domain::B { (&self.negatives_b, Domain::B) } else { (&self.negatives_a, Domain::A) };
        ids.iter().map(|&item| ItemRef { domain: d, item }).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Item,
    User,
    Sequence,
}

/// Something the pipeline tolerated instead of failing.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentWarning {
    pub stage: Stage,
    pub subject: String,
    pub message: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expansion_filter_drops_outsiders_and_conflicts() {
        let r = SequenceReply { positives_a: vec![3, 99, 1], negatives_a: vec![1, 2], positives_b: vec![], negatives_b: vec![-4] };
        let (e, dropped) = SequenceExpansion::from_reply(r, &[1, 2, 3], &[5]);
        assert_eq!(e.positives_a, vec![1, 3]);
        assert_eq!(e.negatives_a, vec![2]);
        assert!(e.negatives_b.is_empty());
        assert_eq!(dropped, 3);
    }

    #[test]
    fn empty_item_reply_is_rejected() {
        let r = ItemReply { genres: vec![" ".into()], themes: vec![], keywords: vec![], category: None };
        assert!(AugmentedItem::from_reply(ItemRef::a(0), r).is_none());
    }
}
