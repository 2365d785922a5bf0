use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Domain;
use crate::error::{Error, Result};

/// Default ranking cutoffs.
pub const DEFAULT_KS: [usize; 3] = [2, 5, 10];

/// One test instance: the positive item and the scored candidate list
/// (positive plus sampled negatives).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredInstance {
    pub positive: usize,
    pub candidates: Vec<usize>,
    pub scores: Vec<f64>,
}

/// 1-based rank of the positive by descending score; equal scores are
/// ordered by ascending item id.
pub fn rank_of_positive(instance: &ScoredInstance) -> Result<usize> {
    if instance.candidates.len() != instance.scores.len() {
        return Err(Error::Evaluation(format!(
            "{} candidates but {} scores",
            instance.candidates.len(),
            instance.scores.len()
        )));
    }
    let mut seen = HashSet::with_capacity(instance.candidates.len());
    if let Some(dup) = instance.candidates.iter().find(|c| !seen.insert(**c)) {
        return Err(Error::Evaluation(format!("duplicate candidate id {dup}")));
    }
    if let Some(s) = instance.scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Evaluation(format!("candidate score {s}")));
    }
    let pos = instance
        .candidates
        .iter()
        .position(|&c| c == instance.positive)
        .ok_or_else(|| Error::Evaluation(format!("positive {} missing from candidates", instance.positive)))?;
    let (p_id, p_score) = (instance.positive, instance.scores[pos]);
    let ahead = instance
        .candidates
        .iter()
        .zip(&instance.scores)
        .filter(|&(&c, &s)| s > p_score || (s == p_score && c < p_id))
        .count();
    Ok(ahead + 1)
}

/// Mean NDCG@K and MRR@K per cutoff.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub ndcg_at: BTreeMap<usize, f64>,
    pub mrr_at: BTreeMap<usize, f64>,
    pub n_instances: usize,
}

impl RankingMetrics {
    /// Aggregates 1-based ranks: NDCG@K = 1/log₂(r+1) and MRR@K = 1/r when r ≤ K.
    pub fn from_ranks(ranks: &[usize], ks: &[usize]) -> Self {
        let n = ranks.len();
        let mut ndcg_at = BTreeMap::new();
        let mut mrr_at = BTreeMap::new();
        for &k in ks {
            let (mut nd, mut mr) = (0.0, 0.0);
            for &r in ranks {
                if r <= k {
                    nd += 1.0 / ((r + 1) as f64).log2();
                    mr += 1.0 / r as f64;
                }
            }
            let denom = n.max(1) as f64;
            ndcg_at.insert(k, nd / denom);
            mrr_at.insert(k, mr / denom);
        }
        Self { ndcg_at, mrr_at, n_instances: n }
    }

    pub fn ndcg(&self, k: usize) -> f64 {
        self.ndcg_at.get(&k).copied().unwrap_or(f64::NAN)
    }

    pub fn mrr(&self, k: usize) -> f64 {
        self.mrr_at.get(&k).copied().unwrap_or(f64::NAN)
    }
}

/// Ranks every instance and averages the metrics.
pub fn evaluate_ranking(instances: &[ScoredInstance], ks: &[usize]) -> Result<RankingMetrics> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Evaluation("cutoffs must be positive".into()));
    }
    let ranks = instances.iter().map(rank_of_positive).collect::<Result<Vec<_>>>()?;
    Ok(RankingMetrics::from_ranks(&ranks, ks))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub model: String,
    pub domain: Domain,
    #[serde(rename = "K")]
    pub k: usize,
    pub ndcg: f64,
    pub mrr: f64,
    pub n_instances: usize,
}

/// Flattens per-domain metrics into CSV rows.
pub fn metrics_rows(model: &str, per_domain: &[(Domain, RankingMetrics)]) -> Vec<MetricsRow> {
    per_domain
        .iter()
        .flat_map(|(domain, m)| {
            m.ndcg_at.keys().map(move |&k| MetricsRow {
                model: model.to_string(),
                domain: *domain,
                k,
                ndcg: m.ndcg(k),
                mrr: m.mrr(k),
                n_instances: m.n_instances,
            })
        })
        .collect()
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn instance(positive_score: f64, others: &[f64]) -> ScoredInstance {
        let mut scores = vec![positive_score];
        scores.extend_from_slice(others);
        ScoredInstance { positive: 0, candidates: (0..scores.len()).collect(), scores }
    }

    #[test]
    fn rank_one_is_perfect() {
        let m = evaluate_ranking(&[instance(9.0, &[1.0, 2.0])], &DEFAULT_KS).unwrap();
        for k in DEFAULT_KS {
            assert_eq!(m.ndcg(k), 1.0);
            assert_eq!(m.mrr(k), 1.0);
        }
    }

    #[test]
    fn rank_three_closed_form() {
        let m = evaluate_ranking(&[instance(5.0, &[7.0, 6.0, 1.0, 0.0])], &DEFAULT_KS).unwrap();
        assert_eq!(m.ndcg(2), 0.0);
        assert_eq!(m.mrr(2), 0.0);
        for k in [5, 10] {
            assert_eq!(m.ndcg(k), 0.5);
            assert_eq!(m.mrr(k), 1.0 / 3.0);
        }
    }

    #[test]
    fn ties_break_by_item_id() {
        let inst = ScoredInstance { positive: 5, candidates: vec![9, 5, 2], scores: vec![1.0, 1.0, 1.0] };
        assert_eq!(rank_of_positive(&inst).unwrap(), 2);
    }

    #[test]
    fn malformed_instances_are_rejected() {
        let dup = ScoredInstance { positive: 1, candidates: vec![1, 1], scores: vec![0.0, 0.0] };
        assert!(matches!(rank_of_positive(&dup), Err(Error::Evaluation(_))));
        let missing = ScoredInstance { positive: 3, candidates: vec![1, 2], scores: vec![0.0, 0.0] };
        assert!(rank_of_positive(&missing).is_err());
    }

    #[test]
    fn csv_rows_per_cutoff() {
        let m = RankingMetrics::from_ranks(&[1, 4], &DEFAULT_KS);
        let rows = metrics_rows("full", &[(Domain::A, m.clone()), (Domain::B, m)]);
        assert_eq!(rows.len(), 6);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_metrics_csv(&p, &rows).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert!(text.starts_with("model,domain,K,ndcg,mrr,n_instances\n"));
    }
}
