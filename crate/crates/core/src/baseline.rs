//! Pairwise relevance classifier with Maximal Marginal Relevance reordering.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamConfig, AdamState, ParamId, ParamStore, Tape};
use crate::data::{QueryExample, BLOCK};
use crate::decoder::{argmax_excluding, Pointers};
use crate::encoder::{encode_on_tape, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct ClassifierParams {
    pub encoder: EncoderParams,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

impl ClassifierParams {
    pub const PREFIX: &'static str = "classifier";

    pub fn register(store: &mut ParamStore, cfg: EncoderConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = EncoderParams::register(store, &format!("{}.encoder", Self::PREFIX), cfg, &mut rng)?;
        Ok(Self {
            encoder,
            out_w: store.insert_glorot(format!("{}.out_w", Self::PREFIX), cfg.d_e, 1, &mut rng)?,
            out_b: store.insert_zeros(format!("{}.out_b", Self::PREFIX), 1, 1)?,
        })
    }

    pub fn lookup(store: &ParamStore, cfg: EncoderConfig) -> Result<Self> {
        Ok(Self {
            encoder: EncoderParams::lookup(store, &format!("{}.encoder", Self::PREFIX), cfg)?,
            out_w: store.require(&format!("{}.out_w", Self::PREFIX))?,
            out_b: store.require(&format!("{}.out_b", Self::PREFIX))?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierTrainConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            adam: AdamConfig::default(),
            seed: 17,
        }
    }
}

/// Records the classifier over one query's candidates; returns the
/// `n x 1` logits node.
fn logits_on_tape(tape: &Tape, store: &ParamStore, params: &ClassifierParams, ex: &QueryExample) -> Result<crate::autodiff::Var> {
    let feats: Vec<&[f64]> = ex.candidates.iter().map(|c| c.features.as_slice()).collect();
    let e = encode_on_tape(tape, store, &params.encoder, &ex.query_features, &feats)?;
    let z = tape.matmul(e, tape.param(store, params.out_w))?;
    tape.add_row(z, tape.param(store, params.out_b))
}

pub fn pair_targets(ex: &QueryExample) -> Vec<f64> {
    ex.candidates
        .iter()
        .map(|c| if ex.labels.contains(&c.suggestion_id) { 1.0 } else { 0.0 })
        .collect()
}

/// Mean pairwise binary cross-entropy of one query.
pub fn classifier_loss(store: &ParamStore, params: &ClassifierParams, ex: &QueryExample) -> Result<f64> {
    let tape = Tape::new();
    let z = logits_on_tape(&tape, store, params, ex)?;
    let l = tape.bce_with_logits(z, &pair_targets(ex))?;
    Ok(tape.scalar(l))
}

/// Trains on every (query, candidate) pair with label 1 iff the candidate
/// is in the gold block. One query per optimizer step; returns the mean
/// loss of each epoch.
pub fn train_classifier(
    corpus: &[&QueryExample],
    store: &mut ParamStore,
    params: &ClassifierParams,
    cfg: &ClassifierTrainConfig,
) -> Result<Vec<f64>> {
    let mut state = AdamState::new(store);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let ex = corpus[i];
            store.zero_grad();
            let tape = Tape::new();
            let z = logits_on_tape(&tape, store, params, ex)?;
            let loss = tape.bce_with_logits(z, &pair_targets(ex))?;
            let v = tape.scalar(loss);
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    query_id: ex.query_id,
                    detail: format!("classifier loss {v}"),
                });
            }
            total += v;
            tape.backward(loss, store)?;
            adam_step(store, &cfg.adam, &mut state)?;
        }
        epoch_losses.push(total / corpus.len().max(1) as f64);
    }
    Ok(epoch_losses)
}

/// Sigmoid relevance of every candidate.
pub fn relevance_scores(store: &ParamStore, params: &ClassifierParams, ex: &QueryExample) -> Result<Vec<f64>> {
    let tape = Tape::new();
    let z = logits_on_tape(&tape, store, params, ex)?;
    Ok(tape.values(z).into_iter().map(|z| 1.0 / (1.0 + (-z).exp())).collect())
}

/// Cosine similarity; defined as 0 when either vector is zero.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    (dot / (nu * nv)).clamp(-1.0, 1.0)
}

/// Row-major `n x n` cosine similarities of raw candidate features.
pub fn similarity_matrix(ex: &QueryExample) -> Vec<Vec<f64>> {
    let n = ex.n();
    let mut sim = vec![vec![0.0; n]; n];
    for i in 0..n {
        sim[i][i] = 1.0;
        for j in i + 1..n {
            let s = cosine_similarity(&ex.candidates[i].features, &ex.candidates[j].features);
            sim[i][j] = s;
            sim[j][i] = s;
        }
    }
    sim
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmrConfig {
    pub gamma: f64,
    pub m: usize,
}

impl MmrConfig {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::Config(format!("gamma {gamma} outside [0, 1]")));
        }
        Ok(Self { gamma, m: BLOCK })
    }
}

/// Greedy MMR: first the most relevant candidate, then repeatedly the
/// unselected candidate maximizing
/// `gamma * rel[t] - (1 - gamma) * max_{s selected} sim[t][s]`.
/// Ties go to the lowest index.
pub fn mmr_rerank(relevance: &[f64], sim: &[Vec<f64>], cfg: &MmrConfig) -> Result<Vec<usize>> {
    let n = relevance.len();
    if cfg.m > n {
        return Err(Error::Contract(format!("cannot pick {} of {n} candidates", cfg.m)));
    }
    if sim.len() != n || sim.iter().any(|r| r.len() != n) {
        return Err(Error::Dimension(format!("similarity must be {n}x{n}")));
    }
    let mut selected: Vec<usize> = Vec::with_capacity(cfg.m);
    if cfg.m == 0 {
        return Ok(selected);
    }
    selected.push(argmax_excluding(relevance, &[]));
    while selected.len() < cfg.m {
        let marginal: Vec<f64> = (0..n)
            .map(|t| {
                let redundancy = selected
                    .iter()
                    .map(|&s| sim[t][s])
                    .fold(f64::NEG_INFINITY, f64::max);
                cfg.gamma * relevance[t] - (1.0 - cfg.gamma) * redundancy
            })
            .collect();
        selected.push(argmax_excluding(&marginal, &selected));
    }
    Ok(selected)
}

pub fn predict_block(
    store: &ParamStore,
    params: &ClassifierParams,
    ex: &QueryExample,
    cfg: &MmrConfig,
) -> Result<Pointers> {
    let rel = relevance_scores(store, params, ex)?;
    let order = mmr_rerank(&rel, &similarity_matrix(ex), cfg)?;
    Ok(order[..BLOCK].try_into().expect("block-sized selection"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_cases() {
        assert!((cosine_similarity(&[1.0, 2.0, -3.0], &[1.0, 2.0, -3.0]) - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 5.0]), 0.0);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
    }

    #[test]
    fn pure_relevance_when_gamma_is_one() {
        let rel = [0.2, 0.9, 0.5, 0.9, 0.1];
        let sim = vec![vec![1.0; 5]; 5];
        let cfg = MmrConfig { gamma: 1.0, m: 5 };
        assert_eq!(mmr_rerank(&rel, &sim, &cfg).unwrap(), vec![1, 3, 2, 0, 4]);
    }

    #[test]
    fn duplicate_top_candidate_is_deferred() {
        // 0 and 1 are copies; 2 and 3 are unrelated and slightly less relevant.
        let rel = [0.9, 0.9, 0.7, 0.58];
        let sim = vec![
            vec![1.0, 1.0, 0.1, 0.0],
            vec![1.0, 1.0, 0.1, 0.0],
            vec![0.1, 0.1, 1.0, 0.2],
            vec![0.0, 0.0, 0.2, 1.0],
        ];
        let cfg = MmrConfig { gamma: 0.5, m: 4 };
        // step 2 marginals: [-, 0.45-0.5, 0.35-0.05, 0.29-0] = [-, -0.05, 0.30, 0.29] -> 2
        // step 3 marginals: [-, -0.05, -, 0.29-0.1=0.19] -> 3
        assert_eq!(mmr_rerank(&rel, &sim, &cfg).unwrap(), vec![0, 2, 3, 1]);
    }

    #[test]
    fn gamma_zero_ties_follow_index() {
        let rel = [0.1, 0.4, 0.3, 0.2];
        let sim = vec![vec![0.5; 4]; 4];
        let cfg = MmrConfig { gamma: 0.0, m: 4 };
        assert_eq!(mmr_rerank(&rel, &sim, &cfg).unwrap(), vec![1, 0, 2, 3]);
    }

    #[test]
    fn too_many_picks() {
        let cfg = MmrConfig { gamma: 0.5, m: 4 };
        assert!(mmr_rerank(&[0.1, 0.2], &vec![vec![1.0; 2]; 2], &cfg).is_err());
        assert!(MmrConfig::new(1.5).is_err());
    }
}
