//! Synthetic click logs and the example-construction pipeline.

mod generator;
mod gmm;
mod io;
mod pipeline;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use generator::{generate_corpus, generate_query, GeneratorConfig, RawQueryLog, RawSuggestion};
pub use gmm::{fit_gmm, GmmModel};
pub use io::{read_dataset, split, write_dataset, Split};
pub use pipeline::{build_corpus, build_example, process_query, Rejection, RejectionReason};

/// Block size: number of suggestions shown together.
pub const BLOCK: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionRecord {
    pub suggestion_id: u64,
    pub features: Vec<f64>,
    pub click_rate: f64,
    pub cooccurrence_count: u64,
    pub cluster_id: usize,
    pub rank_in_cluster: usize,
}

/// One query with its candidate pool and gold ordered block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryExample {
    pub query_id: u64,
    pub query_features: Vec<f64>,
    pub impressions: u64,
    pub candidates: Vec<SuggestionRecord>,
    pub labels: Vec<u64>,
}

impl QueryExample {
    pub fn n(&self) -> usize {
        self.candidates.len()
    }

    /// Candidate index of a suggestion id.
    pub fn position(&self, suggestion_id: u64) -> Option<usize> {
        self.candidates
            .iter()
            .position(|c| c.suggestion_id == suggestion_id)
    }

    /// Labels as candidate indices, in label order.
    pub fn label_indices(&self) -> Result<[usize; BLOCK]> {
        if self.labels.len() != BLOCK {
            return Err(Error::Contract(format!(
                "query {} has {} labels",
                self.query_id,
                self.labels.len()
            )));
        }
        let mut out = [0; BLOCK];
        for (slot, &id) in out.iter_mut().zip(&self.labels) {
            *slot = self.position(id).ok_or_else(|| {
                Error::Contract(format!("label {id} missing from query {}", self.query_id))
            })?;
        }
        Ok(out)
    }

    pub fn clusters_of(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.candidates[i].cluster_id).collect()
    }

    pub fn ranks_of(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.candidates[i].rank_in_cluster).collect()
    }

    /// Checks every structural invariant of a pipeline-built example.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Contract(format!("query {}: {msg}", self.query_id)));
        if self.n() < BLOCK {
            return bad(format!("only {} candidates", self.n()));
        }
        let d = self.query_features.len();
        if self.candidates.iter().any(|c| c.features.len() != d) {
            return bad("candidate feature width differs from query".into());
        }
        let mut ids: Vec<u64> = self.candidates.iter().map(|c| c.suggestion_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return bad("duplicate suggestion ids".into());
        }
        let idx = self.label_indices()?;
        let mut uniq = idx.to_vec();
        uniq.sort_unstable();
        uniq.dedup();
        if uniq.len() != BLOCK {
            return bad("labels not distinct".into());
        }
        let clicks: Vec<f64> = idx.iter().map(|&i| self.candidates[i].click_rate).collect();
        if clicks.windows(2).any(|w| w[0] < w[1]) {
            return bad("labels not ordered by click rate".into());
        }
        let mut clusters = self.clusters_of(&idx);
        clusters.sort_unstable();
        clusters.dedup();
        if clusters.len() != BLOCK {
            return bad("labels share a cluster".into());
        }
        // ranks within each cluster are exactly 1..m
        let max_cluster = self.candidates.iter().map(|c| c.cluster_id).max().unwrap_or(0);
        for cid in 0..=max_cluster {
            let mut ranks: Vec<usize> = self
                .candidates
                .iter()
                .filter(|c| c.cluster_id == cid)
                .map(|c| c.rank_in_cluster)
                .collect();
            ranks.sort_unstable();
            if ranks.iter().enumerate().any(|(i, &r)| r != i + 1) {
                return bad(format!("ranks in cluster {cid} are not 1..m"));
            }
        }
        Ok(())
    }
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derives an independent stream seed from a base seed and a stream id.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}
