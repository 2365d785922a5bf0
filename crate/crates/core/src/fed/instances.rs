use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{merge_expansion, AugmentedUser};
use crate::data::{Domain, ItemRef, UserSplit};
use crate::model::PairExample;

/// One labelled target in a single domain. Its histories are rebuilt from
/// the owning [`ClientData`] on demand.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainInstance {
    pub target: usize,
    pub positive: bool,
    /// Training events of this domain preceding the target.
    pub prefix: usize,
    /// Mixed-sequence events preceding the target.
    pub mixed_cut: usize,
}

/// A client's local training set D⁺: original positives, expanded positives
/// (label 1) and generated negatives (label 0) per domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientData {
    pub user: usize,
    pub train_a: Vec<usize>,
    pub train_b: Vec<usize>,
    pub mixed: Vec<ItemRef>,
    pub expanded_a: Vec<usize>,
    pub expanded_b: Vec<usize>,
    pub instances_a: Vec<DomainInstance>,
    pub instances_b: Vec<DomainInstance>,
    pub side: Vec<usize>,
    pub interacted_a: BTreeSet<usize>,
    pub interacted_b: BTreeSet<usize>,
    pub catalog_a: usize,
    pub catalog_b: usize,
}

fn domain_instances(split: &UserSplit, domain: Domain, mixed: &[ItemRef], aug: &AugmentedUser) -> Vec<DomainInstance> {
    let train = split.train(domain);
    let full = (train.len(), mixed.len());
    let mut out = Vec::new();
    // mixed position of each training event of this domain, in order
    let positions = mixed.iter().enumerate().filter(|(_, r)| r.domain == domain).map(|(i, _)| i);
    // every target needs a non-empty domain history to encode
    for ((j, e), cut) in train.iter().enumerate().zip(positions).skip(1) {
        out.push(DomainInstance { target: e.item.item, positive: true, prefix: j, mixed_cut: cut });
    }
    for item in aug.expansion.positives(domain) {
        out.push(DomainInstance { target: item.item, positive: true, prefix: full.0, mixed_cut: full.1 });
    }
    for item in aug.expansion.negatives(domain) {
        out.push(DomainInstance { target: item.item, positive: false, prefix: full.0, mixed_cut: full.1 });
    }
    out
}

impl ClientData {
    pub fn build(split: &UserSplit, aug: &AugmentedUser, side: Vec<usize>, catalog_a: usize, catalog_b: usize) -> Self {
        let mixed = split.mixed_train().items();
        let ids = |d: Domain| split.train(d).iter().map(|e| e.item.item).collect::<Vec<_>>();
        Self {
            user: split.user,
            train_a: ids(Domain::A),
            train_b: ids(Domain::B),
            expanded_a: aug.expansion.positives_a.clone(),
            expanded_b: aug.expansion.positives_b.clone(),
            instances_a: domain_instances(split, Domain::A, &mixed, aug),
            instances_b: domain_instances(split, Domain::B, &mixed, aug),
            mixed,
            side,
            interacted_a: split.all_items(Domain::A),
            interacted_b: split.all_items(Domain::B),
            catalog_a,
            catalog_b,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.instances_a.is_empty() || self.instances_b.is_empty()
    }

    fn train(&self, d: Domain) -> &[usize] {
        if d == Domain::B {
            &self.train_b
        } else {
            &self.train_a
        }
    }

    fn expanded(&self, d: Domain) -> &[usize] {
        if d == Domain::B {
            &self.expanded_b
        } else {
            &self.expanded_a
        }
    }

    /// Original and augmented histories for a target in `d`.
    fn histories(&self, d: Domain, prefix: usize, target: usize) -> (Vec<usize>, Vec<usize>) {
        let orig = self.train(d)[..prefix].to_vec();
        let added: Vec<ItemRef> = self
            .expanded(d)
            .iter()
            .filter(|&&e| e != target)
            .map(|&item| ItemRef { domain: d, item })
            .collect();
        let orig_refs: Vec<ItemRef> = orig.iter().map(|&item| ItemRef { domain: d, item }).collect();
        let history = merge_expansion(&orig_refs, &added).into_iter().map(|r| r.item).collect();
        (orig, history)
    }

    /// Pair example for one instance per domain; the mixed history is cut at
    /// the earlier of the two targets and excludes both.
    pub fn pair(&self, a: &DomainInstance, b: &DomainInstance) -> PairExample {
        let (orig_a, history_a) = self.histories(Domain::A, a.prefix, a.target);
        let (orig_b, history_b) = self.histories(Domain::B, b.prefix, b.target);
        let (ta, tb) = (ItemRef::a(a.target), ItemRef::b(b.target));
        let cut = a.mixed_cut.min(b.mixed_cut);
        let added: Vec<ItemRef> = self
            .expanded_a
            .iter()
            .map(|&i| ItemRef::a(i))
            .chain(self.expanded_b.iter().map(|&i| ItemRef::b(i)))
            .filter(|&r| r != ta && r != tb)
            .collect();
        let history_m = merge_expansion(&self.mixed[..cut], &added);
        PairExample {
            history_a,
            orig_a,
            target_a: a.target,
            label_a: if a.positive { 1.0 } else { 0.0 },
            history_b,
            orig_b,
            target_b: b.target,
            label_b: if b.positive { 1.0 } else { 0.0 },
            history_m,
            side: self.side.clone(),
        }
    }

    fn random_negative<R: Rng + ?Sized>(&self, d: Domain, rng: &mut R) -> Option<usize> {
        let (n, seen) = if d == Domain::B { (self.catalog_b, &self.interacted_b) } else { (self.catalog_a, &self.interacted_a) };
        if seen.len() >= n {
            return None;
        }
        loop {
            let c = rng.random_range(0..n);
            if !seen.contains(&c) {
                return Some(c);
            }
        }
    }

    /// `size` pairs. Instances are drawn without replacement per domain
    /// (cycling through fresh permutations when the pool is smaller); each
    /// target is swapped for an uninteracted item with label 0 with
    /// probability `negative_rate`.
    pub fn sample_batch<R: Rng + ?Sized>(&self, size: usize, negative_rate: f64, rng: &mut R) -> Vec<PairExample> {
        let draw = |pool: &[DomainInstance], rng: &mut R| -> Vec<DomainInstance> {
            let mut out = Vec::with_capacity(size);
            while out.len() < size {
                let take = (size - out.len()).min(pool.len());
                out.extend(rand::seq::index::sample(rng, pool.len(), take).into_iter().map(|i| pool[i]));
            }
            out
        };
        let a = draw(&self.instances_a, rng);
        let b = draw(&self.instances_b, rng);
        a.iter()
            .zip(&b)
            .map(|(ia, ib)| {
                let mut ia = *ia;
                let mut ib = *ib;
                for (inst, d) in [(&mut ia, Domain::A), (&mut ib, Domain::B)] {
                    if rng.random::<f64>() < negative_rate {
                        if let Some(n) = self.random_negative(d, rng) {
                            inst.target = n;
                            inst.positive = false;
                        }
                    }
                }
                self.pair(&ia, &ib)
            })
            .collect()
    }
}
