//! Raw log -> training example: thresholds, clustering, ranks, labels.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::generator::{GeneratorConfig, RawQueryLog, RawSuggestion};
use super::gmm::{fit_gmm, GmmModel};
use super::{derive_seed, QueryExample, SuggestionRecord, BLOCK};
use crate::exec::Exec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionReason {
    Impressions,
    TooFewClusters,
}

impl RejectionReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectionReason::Impressions => "impressions",
            RejectionReason::TooFewClusters => "clusters",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub query_id: u64,
    pub reason: RejectionReason,
}

const GMM_MAX_ITER: usize = 100;
const GMM_TOL: f64 = 1e-6;

/// Higher click first; equal clicks go to the lower suggestion id.
fn click_order(a: (f64, u64), b: (f64, u64)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

fn surviving<'a>(raw: &'a RawQueryLog, cfg: &GeneratorConfig) -> Vec<&'a RawSuggestion> {
    raw.suggestions
        .iter()
        .filter(|s| s.cooccurrence_count >= cfg.min_cooccurrence)
        .collect()
}

/// Turns a raw log into an example using a fitted mixture.
pub fn build_example(
    raw: &RawQueryLog,
    gmm: &GmmModel,
    cfg: &GeneratorConfig,
) -> Result<QueryExample, Rejection> {
    let reject = |reason| Rejection {
        query_id: raw.query_id,
        reason,
    };
    if raw.impressions < cfg.min_impressions {
        return Err(reject(RejectionReason::Impressions));
    }
    let kept = surviving(raw, cfg);
    let mut candidates: Vec<SuggestionRecord> = kept
        .iter()
        .map(|s| SuggestionRecord {
            suggestion_id: s.suggestion_id,
            features: s.features.clone(),
            click_rate: s.click_rate,
            cooccurrence_count: s.cooccurrence_count,
            cluster_id: gmm.assign(&s.features),
            rank_in_cluster: 0,
        })
        .collect();

    let mut bests: Vec<usize> = Vec::new();
    for cid in 0..gmm.k {
        let mut members: Vec<usize> = (0..candidates.len())
            .filter(|&i| candidates[i].cluster_id == cid)
            .collect();
        if members.is_empty() {
            continue;
        }
        members.sort_by(|&a, &b| {
            let (ca, cb) = (&candidates[a], &candidates[b]);
            click_order((ca.click_rate, ca.suggestion_id), (cb.click_rate, cb.suggestion_id))
        });
        for (r, &i) in members.iter().enumerate() {
            candidates[i].rank_in_cluster = r + 1;
        }
        bests.push(members[0]);
    }
    if bests.len() < BLOCK {
        return Err(reject(RejectionReason::TooFewClusters));
    }
    bests.sort_by(|&a, &b| {
        let (ca, cb) = (&candidates[a], &candidates[b]);
        click_order((ca.click_rate, ca.suggestion_id), (cb.click_rate, cb.suggestion_id))
    });
    let labels = bests[..BLOCK].iter().map(|&i| candidates[i].suggestion_id).collect();

    Ok(QueryExample {
        query_id: raw.query_id,
        query_features: raw.query_features.clone(),
        impressions: raw.impressions,
        candidates,
        labels,
    })
}

/// Applies the thresholds, fits a per-query mixture over the surviving
/// suggestions and builds the example.
pub fn process_query(raw: &RawQueryLog, cfg: &GeneratorConfig) -> Result<QueryExample, Rejection> {
    if raw.impressions < cfg.min_impressions {
        return Err(Rejection {
            query_id: raw.query_id,
            reason: RejectionReason::Impressions,
        });
    }
    let kept = surviving(raw, cfg);
    if kept.len() < BLOCK {
        return Err(Rejection {
            query_id: raw.query_id,
            reason: RejectionReason::TooFewClusters,
        });
    }
    let vectors: Vec<Vec<f64>> = kept.iter().map(|s| s.features.clone()).collect();
    let gmm = fit_gmm(
        &vectors,
        cfg.k,
        GMM_MAX_ITER,
        GMM_TOL,
        derive_seed(cfg.seed ^ 0x6d6d, raw.query_id),
    )
    .expect("non-empty, equal-width vectors");
    build_example(raw, &gmm, cfg)
}

/// Runs the pipeline over a corpus; output order follows input order.
pub fn build_corpus(
    raws: &[RawQueryLog],
    cfg: &GeneratorConfig,
    exec: Exec,
) -> (Vec<QueryExample>, Vec<Rejection>) {
    let results = exec.map(raws, |r| process_query(r, cfg));
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for r in results {
        match r {
            Ok(q) => kept.push(q),
            Err(e) => rejected.push(e),
        }
    }
    (kept, rejected)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// One-dimensional mixture with well separated components at 0, 10, 20, 30.
    fn four_bucket_gmm() -> GmmModel {
        GmmModel {
            k: 4,
            requested_k: 4,
            means: vec![vec![0.0], vec![10.0], vec![20.0], vec![30.0]],
            variances: vec![vec![1.0]; 4],
            weights: vec![0.25; 4],
            log_likelihood_trace: vec![],
        }
    }

    fn raw(points: &[(f64, f64)], impressions: u64) -> RawQueryLog {
        RawQueryLog {
            query_id: 1,
            query_features: vec![0.0],
            impressions,
            suggestions: points
                .iter()
                .enumerate()
                .map(|(i, &(x, click))| RawSuggestion {
                    suggestion_id: i as u64,
                    features: vec![x],
                    click_rate: click,
                    cooccurrence_count: 100,
                    latent_cluster: 0,
                })
                .collect(),
        }
    }

    fn cfg() -> GeneratorConfig {
        GeneratorConfig {
            d_raw: 1,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn hand_worked_trace() {
        // clusters {.9,.8} {.7,.1} {.6,.5} {.4,.3}
        let log = raw(
            &[
                (0.1, 0.8),
                (10.2, 0.1),
                (19.9, 0.5),
                (30.1, 0.3),
                (-0.2, 0.9),
                (9.8, 0.7),
                (20.3, 0.6),
                (29.7, 0.4),
            ],
            1000,
        );
        let ex = build_example(&log, &four_bucket_gmm(), &cfg()).unwrap();
        assert_eq!(ex.labels, vec![4, 5, 6, 7]);
        let ranks: Vec<usize> = ex.candidates.iter().map(|c| c.rank_in_cluster).collect();
        assert_eq!(ranks, vec![2, 2, 2, 2, 1, 1, 1, 1]);
        ex.validate().unwrap();
    }

    #[test]
    fn single_cluster_rejected() {
        let log = raw(&[(0.0, 0.5), (0.1, 0.4), (0.2, 0.3), (-0.1, 0.2), (0.3, 0.1)], 1000);
        let err = build_example(&log, &four_bucket_gmm(), &cfg()).unwrap_err();
        assert_eq!(err.reason, RejectionReason::TooFewClusters);
    }

    #[test]
    fn low_impressions_rejected() {
        let log = raw(&[(0.0, 0.5), (10.0, 0.4), (20.0, 0.3), (30.0, 0.2)], 3);
        let err = build_example(&log, &four_bucket_gmm(), &cfg()).unwrap_err();
        assert_eq!(err.reason.as_str(), "impressions");
    }

    #[test]
    fn cooccurrence_filter_and_tie_break() {
        let mut log = raw(&[(0.0, 0.5), (0.1, 0.5), (10.0, 0.4), (20.0, 0.3), (30.0, 0.2)], 1000);
        log.suggestions[2].cooccurrence_count = 0;
        let mut log_ok = log.clone();
        let ex = build_example(&log, &four_bucket_gmm(), &cfg());
        // dropping id 2 leaves only three clusters
        assert!(ex.is_err());
        log_ok.suggestions[2].cooccurrence_count = 100;
        let ex = build_example(&log_ok, &four_bucket_gmm(), &cfg()).unwrap();
        // equal clicks: lower id ranks first
        assert_eq!(ex.candidates[0].rank_in_cluster, 1);
        assert_eq!(ex.candidates[1].rank_in_cluster, 2);
        assert_eq!(ex.labels, vec![0, 2, 3, 4]);
    }
}
