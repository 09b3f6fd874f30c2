mod common;

use blockrec::autodiff::ParamStore;
use blockrec::baseline::{
    classifier_loss, cosine_similarity, mmr_rerank, pair_targets, relevance_scores, similarity_matrix,
    train_classifier, ClassifierParams, ClassifierTrainConfig, MmrConfig,
};
use blockrec::autodiff::AdamConfig;
use blockrec::data::{build_corpus, generate_corpus, GeneratorConfig, QueryExample, SuggestionRecord, BLOCK};
use blockrec::decoder::Pointers;
use blockrec::encoder::EncoderConfig;
use blockrec::eval::{aggregate, query_metrics, PredictionRecord, QueryMetrics};
use blockrec::exec::Exec;
use blockrec::objectives::Labels;
use common::rng;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

const D: usize = 4;

/// Eight candidates, the first four positive; positives are shifted by +10
/// in feature 0.
fn separable_query(id: u64, r: &mut impl Rng) -> QueryExample {
    let candidates = (0..8)
        .map(|i| {
            let mut features: Vec<f64> = (0..D).map(|_| r.random_range(-1.0..1.0)).collect();
            if i < 4 {
                features[0] += 10.0;
            }
            SuggestionRecord {
                suggestion_id: id * 100 + i,
                features,
                click_rate: 0.5,
                cooccurrence_count: 10,
                cluster_id: i as usize,
                rank_in_cluster: 1,
            }
        })
        .collect();
    QueryExample {
        query_id: id,
        query_features: (0..D).map(|_| r.random_range(-1.0..1.0)).collect(),
        impressions: 500,
        candidates,
        labels: (0..4).map(|i| id * 100 + i).collect(),
    }
}

fn toy_corpus(n: u64) -> Vec<QueryExample> {
    let mut r = rng(12);
    (0..n).map(|i| separable_query(i, &mut r)).collect()
}

fn classifier(seed: u64) -> (ParamStore, ClassifierParams) {
    let mut store = ParamStore::new();
    let p = ClassifierParams::register(&mut store, EncoderConfig { d_raw: D, d_a: 8, d_e: 4 }, seed).unwrap();
    (store, p)
}

#[test]
fn separable_corpus_is_learned_within_200_steps() {
    let corpus = toy_corpus(50);
    let refs: Vec<&QueryExample> = corpus.iter().collect();
    let (mut store, p) = classifier(1);
    let cfg = ClassifierTrainConfig {
        epochs: 4,
        adam: AdamConfig { lr: 0.01, ..AdamConfig::default() },
        seed: 3,
    };
    train_classifier(&refs, &mut store, &p, &cfg).unwrap();
    let (mut right, mut total) = (0, 0);
    for ex in &corpus {
        let scores = relevance_scores(&store, &p, ex).unwrap();
        for (s, t) in scores.iter().zip(pair_targets(ex)) {
            right += usize::from((*s > 0.5) == (t > 0.5));
            total += 1;
        }
    }
    let acc = right as f64 / total as f64;
    assert!(acc >= 0.99, "accuracy {acc}");
}

#[test]
fn initial_loss_is_near_ln2_and_training_is_deterministic() {
    // Balanced labels with uninformative features.
    let mut r = rng(13);
    let mut corpus: Vec<QueryExample> = (0..20).map(|i| separable_query(i, &mut r)).collect();
    for c in corpus.iter_mut().flat_map(|ex| ex.candidates.iter_mut()) {
        c.features[0] = r.random_range(-1.0..1.0);
    }
    let (store, p) = classifier(5);
    let mean = corpus.iter().map(|ex| classifier_loss(&store, &p, ex).unwrap()).sum::<f64>() / corpus.len() as f64;
    assert!((mean - 2f64.ln()).abs() <= 0.1, "{mean}");

    let refs: Vec<&QueryExample> = corpus.iter().collect();
    let run = || {
        let (mut store, p) = classifier(5);
        let losses = train_classifier(&refs, &mut store, &p, &ClassifierTrainConfig::default()).unwrap();
        (losses, blockrec::autodiff::checkpoint::encode(&store))
    };
    assert_eq!(run(), run());
}

#[test]
fn cosine_matches_direct_formula() {
    let mut r = rng(4);
    for _ in 0..1000 {
        let d = r.random_range(1..10);
        let u: Vec<f64> = (0..d).map(|_| r.random_range(-5.0..5.0)).collect();
        let v: Vec<f64> = (0..d).map(|_| r.random_range(-5.0..5.0)).collect();
        let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
        let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!((cosine_similarity(&u, &v) - dot / (nu * nv)).abs() <= 1e-12);
        assert!((cosine_similarity(&u, &u) - 1.0).abs() <= 1e-12);
    }
    assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 3.0]), 0.0);
}

proptest! {
    #[test]
    fn mmr_output_is_distinct_and_gamma_one_is_the_sort(rel in proptest::collection::vec(0.0..1.0f64, 4..15), gamma in 0.0..=1.0f64, seed in 0u64..1000) {
        let n = rel.len();
        let mut r = rng(seed);
        let feats: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let sim: Vec<Vec<f64>> = feats.iter().map(|a| feats.iter().map(|b| cosine_similarity(a, b)).collect()).collect();
        let out = mmr_rerank(&rel, &sim, &MmrConfig::new(gamma).unwrap()).unwrap();
        let mut sorted = out.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), BLOCK);

        let relevance_sort = {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| rel[b].total_cmp(&rel[a]).then(a.cmp(&b)));
            idx
        };
        let top = mmr_rerank(&rel, &sim, &MmrConfig::new(1.0).unwrap()).unwrap();
        prop_assert_eq!(&top[..], &relevance_sort[..BLOCK]);
    }
}

fn pipeline_corpus() -> Vec<QueryExample> {
    let cfg = GeneratorConfig {
        num_queries: 80,
        d_raw: 8,
        seed: 21,
        ..GeneratorConfig::default()
    };
    let raws = generate_corpus(&cfg, Exec::Sequential).unwrap();
    build_corpus(&raws, &cfg, Exec::Sequential).0
}

#[test]
fn lower_gamma_never_lowers_mean_diversity() {
    let corpus = pipeline_corpus();
    let mut r = rng(8);
    // Frozen relevance scores shared by the whole sweep.
    let relevance: Vec<Vec<f64>> = corpus.iter().map(|ex| (0..ex.n()).map(|_| r.random_range(0.0..1.0)).collect()).collect();
    let mut prev = -1.0;
    for gamma in [1.0, 0.8, 0.6, 0.4] {
        let cfg = MmrConfig::new(gamma).unwrap();
        let metrics: Vec<QueryMetrics> = corpus
            .iter()
            .zip(&relevance)
            .map(|(ex, rel)| {
                let order = mmr_rerank(rel, &similarity_matrix(ex), &cfg).unwrap();
                let yp: Pointers = order[..BLOCK].try_into().unwrap();
                query_metrics(&PredictionRecord::new(ex, yp).unwrap(), &Labels::from_example(ex).unwrap())
            })
            .collect();
        let div = aggregate(&metrics, serde_json::Value::Null).unwrap().div_score;
        assert!(div >= prev, "gamma {gamma}: {div} < {prev}");
        prev = div;
    }
}

#[test]
fn metric_implications_and_gold_diversity() {
    let corpus = pipeline_corpus();
    let mut r = rng(9);
    for ex in &corpus {
        let labels = Labels::from_example(ex).unwrap();
        let gold = query_metrics(&PredictionRecord::new(ex, labels.y).unwrap(), &labels);
        assert_eq!((gold.div_score, gold.recall, gold.p_at_1, gold.em), (1.0, 1.0, 1.0, 1.0));
        let mut rev = labels.y;
        rev.reverse();
        let m = query_metrics(&PredictionRecord::new(ex, rev).unwrap(), &labels);
        assert_eq!((m.recall, m.p_at_1, m.em), (1.0, 0.0, 0.0));
        for _ in 0..50 {
            // Mix gold and random pointers, duplicates allowed.
            let yp: Pointers = std::array::from_fn(|k| if r.random_bool(0.5) { labels.y[k] } else { r.random_range(0..ex.n()) });
            let m = query_metrics(&PredictionRecord::new(ex, yp).unwrap(), &labels);
            assert!(m.em <= m.recall && m.em <= m.p_at_1);
            if m.em == 1.0 {
                assert_eq!((m.recall, m.p_at_1), (1.0, 1.0));
            }
        }
    }
}

#[test]
fn metrics_are_invariant_to_candidate_permutation() {
    let corpus = pipeline_corpus();
    let mut r = rng(10);
    for ex in corpus.iter().take(30) {
        let labels = Labels::from_example(ex).unwrap();
        let yp: Pointers = std::array::from_fn(|_| r.random_range(0..ex.n()));
        let base = query_metrics(&PredictionRecord::new(ex, yp).unwrap(), &labels);

        let mut perm: Vec<usize> = (0..ex.n()).collect();
        perm.shuffle(&mut r);
        let mut shuffled = ex.clone();
        shuffled.candidates = perm.iter().map(|&j| ex.candidates[j].clone()).collect();
        let pos = |j: usize| perm.iter().position(|&p| p == j).unwrap();
        let moved = query_metrics(
            &PredictionRecord::new(&shuffled, yp.map(pos)).unwrap(),
            &Labels::from_example(&shuffled).unwrap(),
        );
        assert_eq!(base, moved);
    }
}

#[test]
fn aggregate_is_the_plain_mean() {
    let mut r = rng(11);
    let records: Vec<QueryMetrics> = (0..100)
        .map(|i| {
            let em = f64::from(r.random_bool(0.1));
            QueryMetrics {
                query_id: i,
                div_score: r.random_range(1..=4) as f64 / 4.0,
                recall: if em == 1.0 { 1.0 } else { r.random_range(0..=4) as f64 / 4.0 },
                p_at_1: if em == 1.0 { 1.0 } else { f64::from(r.random_bool(0.4)) },
                em,
            }
        })
        .collect();
    let rep = aggregate(&records, serde_json::json!({"k": 1})).unwrap();
    let mut sums = [0.0; 4];
    for m in &records {
        sums[0] += m.div_score;
        sums[1] += m.recall;
        sums[2] += m.p_at_1;
        sums[3] += m.em;
    }
    assert_eq!([rep.div_score, rep.recall, rep.p_at_1, rep.em], sums.map(|s| s / 100.0));
    assert_eq!(rep.queries, 100);
    assert!(aggregate(&[], serde_json::Value::Null).is_err());
}
