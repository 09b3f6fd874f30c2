//! Synthetic click-log generator.
//!
//! Each query gets a feature vector and a set of latent intent clusters
//! placed around it. Candidate suggestions are drawn around the cluster
//! centers. Click rate is the product of the cluster's popularity and a
//! strictly decreasing function of the candidate's distance to the query,
//! plus optional Gaussian noise. Popularity is a function of the cluster
//! direction, so it is recoverable from features.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::derive_seed;
use crate::error::{Error, Result};
use crate::exec::Exec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub num_queries: usize,
    /// Mean candidate count after co-occurrence filtering.
    pub mean_candidates_per_query: f64,
    pub d_raw: usize,
    /// GMM component count used by the pipeline.
    pub k: usize,
    /// Latent intent clusters per query; zero means `k`.
    pub latent_clusters: usize,
    pub min_cooccurrence: u64,
    pub min_impressions: u64,
    /// Fraction of suggestions generated below the co-occurrence threshold.
    pub cooccurrence_fail_rate: f64,
    /// Fraction of queries generated below the impressions threshold.
    pub impressions_fail_rate: f64,
    pub click_noise: f64,
    /// Distance of cluster centers from the query, in units of `sigma`.
    pub separation: f64,
    pub sigma: f64,
    /// Steepness of the click-rate falloff with query distance.
    pub proximity_sharpness: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            num_queries: 2000,
            mean_candidates_per_query: 30.0,
            d_raw: 32,
            k: 8,
            latent_clusters: 0,
            min_cooccurrence: 5,
            min_impressions: 100,
            cooccurrence_fail_rate: 0.1,
            impressions_fail_rate: 0.03,
            click_noise: 0.02,
            separation: 6.0,
            sigma: 1.0,
            proximity_sharpness: 0.5,
            seed: 7,
        }
    }
}

impl GeneratorConfig {
    pub fn latent(&self) -> usize {
        if self.latent_clusters == 0 {
            self.k
        } else {
            self.latent_clusters
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_queries == 0 || self.d_raw == 0 || self.mean_candidates_per_query < 1.0 {
            return fail("counts must be positive");
        }
        if self.k < 4 {
            return fail("k must be at least 4");
        }
        if self.latent() < 4 {
            return fail("need at least 4 latent clusters");
        }
        if !(0.0..1.0).contains(&self.cooccurrence_fail_rate)
            || !(0.0..1.0).contains(&self.impressions_fail_rate)
        {
            return fail("fail rates must lie in [0, 1)");
        }
        if self.min_cooccurrence == 0 || self.min_impressions == 0 {
            return fail("thresholds must be positive");
        }
        if self.click_noise < 0.0 || self.sigma <= 0.0 || self.separation < 0.0 {
            return fail("noise, sigma and separation must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSuggestion {
    pub suggestion_id: u64,
    pub features: Vec<f64>,
    pub click_rate: f64,
    pub cooccurrence_count: u64,
    /// Generator-side intent label; never visible to the pipeline.
    pub latent_cluster: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawQueryLog {
    pub query_id: u64,
    pub query_features: Vec<f64>,
    pub impressions: u64,
    pub suggestions: Vec<RawSuggestion>,
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v = gaussian(rng, d);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn popularity_axis(cfg: &GeneratorConfig) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, u64::MAX));
    unit(&mut rng, cfg.d_raw)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Generates the raw log for query `index`; depends only on
/// `(config, index)`.
pub fn generate_query(cfg: &GeneratorConfig, index: usize) -> RawQueryLog {
    let axis = popularity_axis(cfg);
    generate_with_axis(cfg, index, &axis)
}

fn generate_with_axis(cfg: &GeneratorConfig, index: usize, axis: &[f64]) -> RawQueryLog {
    let d = cfg.d_raw;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, index as u64));
    let query: Vec<f64> = gaussian(&mut rng, d);

    let latent = cfg.latent();
    let offset = cfg.separation * cfg.sigma;
    let mut centers = Vec::with_capacity(latent);
    let mut popularity = Vec::with_capacity(latent);
    for _ in 0..latent {
        let u = unit(&mut rng, d);
        let align: f64 = u.iter().zip(axis).map(|(a, b)| a * b).sum::<f64>() * (d as f64).sqrt();
        popularity.push(0.1 + 0.9 * sigmoid(1.5 * align));
        centers.push(query.iter().zip(&u).map(|(q, u)| q + offset * u).collect::<Vec<f64>>());
    }

    let keep = 1.0 - cfg.cooccurrence_fail_rate;
    let mean_raw = cfg.mean_candidates_per_query / keep;
    let lo = (mean_raw * 0.7).round().max(1.0) as usize;
    let hi = (mean_raw * 1.3).round().max(lo as f64) as usize;
    let n = rng.random_range(lo..=hi);

    let expected_dist = (offset * offset + d as f64 * cfg.sigma * cfg.sigma).sqrt();
    let suggestions = (0..n)
        .map(|j| {
            let cluster = rng.random_range(0..latent);
            let features: Vec<f64> = centers[cluster]
                .iter()
                .map(|c| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    c + cfg.sigma * z
                })
                .collect();
            let dist = features
                .iter()
                .zip(&query)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let base = popularity[cluster]
                * sigmoid(-cfg.proximity_sharpness * (dist - expected_dist) / cfg.sigma);
            let noise: f64 = StandardNormal.sample(&mut rng);
            let click_rate = (base + cfg.click_noise * noise).clamp(0.0, 1.0);
            let cooccurrence_count = if rng.random_bool(cfg.cooccurrence_fail_rate) {
                rng.random_range(0..cfg.min_cooccurrence)
            } else {
                cfg.min_cooccurrence + rng.random_range(0..50)
            };
            RawSuggestion {
                suggestion_id: (index as u64) << 16 | j as u64,
                features,
                click_rate,
                cooccurrence_count,
                latent_cluster: cluster,
            }
        })
        .collect();

    let impressions = if rng.random_bool(cfg.impressions_fail_rate) {
        rng.random_range(0..cfg.min_impressions)
    } else {
        cfg.min_impressions + rng.random_range(0..10_000)
    };

    RawQueryLog {
        query_id: index as u64,
        query_features: query,
        impressions,
        suggestions,
    }
}

/// Generates `num_queries` raw logs. Output is independent of `exec`.
pub fn generate_corpus(cfg: &GeneratorConfig, exec: Exec) -> Result<Vec<RawQueryLog>> {
    cfg.validate()?;
    let axis = popularity_axis(cfg);
    Ok(exec.map_range(cfg.num_queries, |i| generate_with_axis(cfg, i, &axis)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GeneratorConfig {
        GeneratorConfig {
            num_queries: 20,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn deterministic_bytes() {
        let a = serde_json::to_vec(&generate_corpus(&small(), Exec::Sequential).unwrap()).unwrap();
        let b = serde_json::to_vec(&generate_corpus(&small(), Exec::Parallel).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noiseless_clicks_fall_with_distance_within_cluster() {
        let cfg = GeneratorConfig {
            click_noise: 0.0,
            ..small()
        };
        for log in generate_corpus(&cfg, Exec::Sequential).unwrap() {
            for c in 0..cfg.latent() {
                let mut members: Vec<(f64, f64)> = log
                    .suggestions
                    .iter()
                    .filter(|s| s.latent_cluster == c)
                    .map(|s| {
                        let d: f64 = s
                            .features
                            .iter()
                            .zip(&log.query_features)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum();
                        (d.sqrt(), s.click_rate)
                    })
                    .collect();
                members.sort_by(|a, b| a.0.total_cmp(&b.0));
                for w in members.windows(2) {
                    assert!(w[1].1 < w[0].1, "click must strictly drop: {w:?}");
                }
            }
        }
    }

    #[test]
    fn thresholds_reject_a_fraction() {
        let cfg = GeneratorConfig {
            num_queries: 300,
            ..GeneratorConfig::default()
        };
        let corpus = generate_corpus(&cfg, Exec::default()).unwrap();
        let low_imp = corpus.iter().filter(|q| q.impressions < cfg.min_impressions).count();
        assert!(low_imp > 0 && low_imp < 30, "{low_imp}");
        let total: usize = corpus.iter().map(|q| q.suggestions.len()).sum();
        let low = corpus
            .iter()
            .flat_map(|q| &q.suggestions)
            .filter(|s| s.cooccurrence_count < cfg.min_cooccurrence)
            .count();
        let frac = low as f64 / total as f64;
        assert!((frac - 0.1).abs() < 0.02, "{frac}");
    }

    #[test]
    fn invalid_config() {
        let cfg = GeneratorConfig {
            k: 3,
            ..GeneratorConfig::default()
        };
        assert!(generate_corpus(&cfg, Exec::Sequential).is_err());
    }
}
