//! Test metrics: Div Score, Recall, P@1 and Exact Match.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::{QueryExample, BLOCK};
use crate::decoder::Pointers;
use crate::error::{Error, Result};
use crate::objectives::Labels;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub query_id: u64,
    pub yp: Pointers,
    pub yp_clusters: [usize; BLOCK],
    pub yp_ranks: [usize; BLOCK],
}

impl PredictionRecord {
    pub fn new(example: &QueryExample, yp: Pointers) -> Result<Self> {
        if let Some(&bad) = yp.iter().find(|&&i| i >= example.n()) {
            return Err(Error::Index(format!(
                "prediction {bad} out of range for query {} with {} candidates",
                example.query_id,
                example.n()
            )));
        }
        Ok(Self {
            query_id: example.query_id,
            yp,
            yp_clusters: yp.map(|i| example.candidates[i].cluster_id),
            yp_ranks: yp.map(|i| example.candidates[i].rank_in_cluster),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query_id: u64,
    pub div_score: f64,
    pub recall: f64,
    pub p_at_1: f64,
    pub em: f64,
}

pub fn query_metrics(pred: &PredictionRecord, gold: &Labels) -> QueryMetrics {
    let clusters: BTreeSet<usize> = pred.yp_clusters.iter().copied().collect();
    let gold_set: BTreeSet<usize> = gold.y.iter().copied().collect();
    let pred_set: BTreeSet<usize> = pred.yp.iter().copied().collect();
    let indicator = |b: bool| if b { 1.0 } else { 0.0 };
    QueryMetrics {
        query_id: pred.query_id,
        div_score: clusters.len() as f64 / BLOCK as f64,
        recall: gold_set.intersection(&pred_set).count() as f64 / BLOCK as f64,
        p_at_1: indicator(pred.yp[0] == gold.y[0]),
        em: indicator(pred.yp == gold.y),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub div_score: f64,
    pub recall: f64,
    pub p_at_1: f64,
    pub em: f64,
    pub queries: usize,
    pub per_query: Vec<QueryMetrics>,
    pub metadata: serde_json::Value,
}

/// Unweighted means over queries.
pub fn aggregate(records: &[QueryMetrics], metadata: serde_json::Value) -> Result<MetricsReport> {
    if records.is_empty() {
        return Err(Error::Contract("cannot aggregate zero queries".into()));
    }
    let n = records.len() as f64;
    let mean = |f: fn(&QueryMetrics) -> f64| records.iter().map(f).sum::<f64>() / n;
    Ok(MetricsReport {
        div_score: mean(|m| m.div_score),
        recall: mean(|m| m.recall),
        p_at_1: mean(|m| m.p_at_1),
        em: mean(|m| m.em),
        queries: records.len(),
        per_query: records.to_vec(),
        metadata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels() -> Labels {
        Labels {
            y: [3, 1, 4, 0],
            y_clusters: [0, 1, 2, 3],
            y_ranks: [1; 4],
            candidate_clusters: vec![3, 1, 1, 0, 2, 0],
            candidate_ranks: vec![1, 1, 2, 1, 1, 2],
        }
    }

    fn rec(yp: Pointers) -> PredictionRecord {
        let l = labels();
        PredictionRecord {
            query_id: 1,
            yp,
            yp_clusters: l.clusters(&yp),
            yp_ranks: l.ranks(&yp),
        }
    }

    #[test]
    fn exact_and_reversed() {
        let m = query_metrics(&rec([3, 1, 4, 0]), &labels());
        assert_eq!((m.div_score, m.recall, m.p_at_1, m.em), (1.0, 1.0, 1.0, 1.0));
        let m = query_metrics(&rec([0, 4, 1, 3]), &labels());
        assert_eq!((m.recall, m.p_at_1, m.em), (1.0, 0.0, 0.0));
    }

    #[test]
    fn partial_overlap_with_top_hit() {
        let m = query_metrics(&rec([3, 2, 5, 1]), &labels());
        assert_eq!((m.recall, m.p_at_1, m.em), (0.5, 1.0, 0.0));
        assert_eq!(m.div_score, 0.5);
    }

    #[test]
    fn aggregation() {
        let a = query_metrics(&rec([3, 1, 4, 0]), &labels());
        let b = query_metrics(&rec([0, 4, 1, 3]), &labels());
        let r = aggregate(&[a], serde_json::Value::Null).unwrap();
        assert_eq!((r.div_score, r.recall, r.p_at_1, r.em), (a.div_score, a.recall, a.p_at_1, a.em));
        let r = aggregate(&[a, b], serde_json::Value::Null).unwrap();
        assert_eq!(r.em, 0.5);
        assert!(aggregate(&[], serde_json::Value::Null).is_err());
    }
}
