mod common;

use std::collections::HashMap;

use blockrec::data::{build_corpus, fit_gmm, generate_corpus, GeneratorConfig};
use blockrec::exec::Exec;
use blockrec::objectives::{reward_diversity, Labels};
use common::rng;
use rand_distr::{Distribution, StandardNormal};

fn cloud(seed: u64, center: &[f64], n: usize) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            center
                .iter()
                .map(|c| {
                    let z: f64 = StandardNormal.sample(&mut r);
                    c + z
                })
                .collect()
        })
        .collect()
}

#[test]
fn two_clusters_at_twenty_sigma_are_recovered() {
    for seed in 0..10u64 {
        let a = vec![0.0, 0.0, 0.0];
        let b = vec![20.0, 0.0, 0.0];
        let mut data = cloud(seed, &a, 2000);
        data.extend(cloud(seed + 100, &b, 2000));
        let m = fit_gmm(&data, 2, 200, 1e-10, seed).unwrap();
        assert!(m.log_likelihood_trace.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs()));
        let mut means = m.means.clone();
        means.sort_by(|x, y| x[0].total_cmp(&y[0]));
        for (got, want) in means.iter().zip([&a, &b]) {
            let err = got.iter().zip(want).map(|(g, w)| (g - w).abs()).fold(0.0, f64::max);
            assert!(err <= 0.1, "seed {seed}: {got:?} vs {want:?}");
        }
    }
}

#[test]
fn single_component_is_the_sample_mean() {
    let data = cloud(5, &[1.0, -2.0, 3.5, 0.0], 157);
    let m = fit_gmm(&data, 1, 50, 1e-12, 0).unwrap();
    for c in 0..4 {
        let mean = data.iter().map(|x| x[c]).sum::<f64>() / data.len() as f64;
        let var = data.iter().map(|x| (x[c] - mean).powi(2)).sum::<f64>() / data.len() as f64;
        assert!((m.means[0][c] - mean).abs() <= 1e-9);
        assert!((m.variances[0][c] - var).abs() <= 1e-9);
    }
}

fn small_config(separation: f64) -> GeneratorConfig {
    GeneratorConfig {
        num_queries: 60,
        d_raw: 8,
        k: 4,
        separation,
        seed: 3,
        ..GeneratorConfig::default()
    }
}

#[test]
fn well_separated_clusters_match_latent_intents() {
    let cfg = small_config(10.0);
    let raws = generate_corpus(&cfg, Exec::Sequential).unwrap();
    let (corpus, _) = build_corpus(&raws, &cfg, Exec::Sequential);
    assert!(corpus.len() > 40);
    let (mut agree, mut total) = (0usize, 0usize);
    for ex in &corpus {
        let raw = raws.iter().find(|r| r.query_id == ex.query_id).unwrap();
        let latent: HashMap<u64, usize> = raw.suggestions.iter().map(|s| (s.suggestion_id, s.latent_cluster)).collect();
        // Majority latent label of each fitted cluster.
        let mut votes: HashMap<(usize, usize), usize> = HashMap::new();
        for c in &ex.candidates {
            *votes.entry((c.cluster_id, latent[&c.suggestion_id])).or_default() += 1;
        }
        for cid in 0..cfg.k {
            agree += votes.iter().filter(|((c, _), _)| *c == cid).map(|(_, &n)| n).max().unwrap_or(0);
        }
        total += ex.candidates.len();
    }
    let purity = agree as f64 / total as f64;
    assert!(purity >= 0.99, "purity {purity}");
}

#[test]
fn gold_blocks_are_fully_diverse_and_consistent() {
    let cfg = small_config(6.0);
    let raws = generate_corpus(&cfg, Exec::Sequential).unwrap();
    let (corpus, rejected) = build_corpus(&raws, &cfg, Exec::Sequential);
    assert_eq!(corpus.len() + rejected.len(), raws.len());
    for ex in &corpus {
        ex.validate().unwrap();
        let labels = Labels::from_example(ex).unwrap();
        assert_eq!(reward_diversity(&labels.y_clusters), 1.0);
        assert!(labels.y_ranks.iter().all(|&r| r == 1));
        // Labels are ordered by click rate.
        let rates: Vec<f64> = labels.y.iter().map(|&i| ex.candidates[i].click_rate).collect();
        assert!(rates.windows(2).all(|w| w[0] >= w[1]));
    }
}

#[test]
fn corpus_is_independent_of_execution_mode() {
    let cfg = small_config(6.0);
    let seq = generate_corpus(&cfg, Exec::Sequential).unwrap();
    let par = generate_corpus(&cfg, Exec::default()).unwrap();
    assert_eq!(seq, par);
    assert_eq!(build_corpus(&seq, &cfg, Exec::Sequential).0, build_corpus(&par, &cfg, Exec::default()).0);
}

