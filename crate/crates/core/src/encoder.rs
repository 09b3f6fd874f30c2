//! Query-aware suggestion embeddings.
//!
//! A two-layer tanh network maps `[suggestion; query]` to a pair
//! representation `a`, which is then projected as `e = tanh(a W + b)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::data::QueryExample;
use crate::error::{dim_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub d_raw: usize,
    /// Width of the pair representation `a`.
    pub d_a: usize,
    /// Width of the output embedding `e`.
    pub d_e: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_raw: 32,
            d_a: 64,
            d_e: 32,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderParams {
    pub pair_w1: ParamId,
    pub pair_b1: ParamId,
    pub pair_w2: ParamId,
    pub pair_b2: ParamId,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub config: EncoderConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryAwareEmbedding {
    pub suggestion_id: u64,
    pub e: Vec<f64>,
}

impl EncoderParams {
    pub fn register<R: Rng>(store: &mut ParamStore, prefix: &str, cfg: EncoderConfig, rng: &mut R) -> Result<Self> {
        Ok(Self {
            pair_w1: store.insert_glorot(format!("{prefix}.pair_w1"), 2 * cfg.d_raw, cfg.d_a, rng)?,
            pair_b1: store.insert_zeros(format!("{prefix}.pair_b1"), 1, cfg.d_a)?,
            pair_w2: store.insert_glorot(format!("{prefix}.pair_w2"), cfg.d_a, cfg.d_a, rng)?,
            pair_b2: store.insert_zeros(format!("{prefix}.pair_b2"), 1, cfg.d_a)?,
            proj_w: store.insert_glorot(format!("{prefix}.proj_w"), cfg.d_a, cfg.d_e, rng)?,
            proj_b: store.insert_zeros(format!("{prefix}.proj_b"), 1, cfg.d_e)?,
            config: cfg,
        })
    }

    pub fn lookup(store: &ParamStore, prefix: &str, cfg: EncoderConfig) -> Result<Self> {
        let p = Self {
            pair_w1: store.require(&format!("{prefix}.pair_w1"))?,
            pair_b1: store.require(&format!("{prefix}.pair_b1"))?,
            pair_w2: store.require(&format!("{prefix}.pair_w2"))?,
            pair_b2: store.require(&format!("{prefix}.pair_b2"))?,
            proj_w: store.require(&format!("{prefix}.proj_w"))?,
            proj_b: store.require(&format!("{prefix}.proj_b"))?,
            config: cfg,
        };
        let shape = store.tensor(p.proj_w).shape();
        if shape != [cfg.d_a, cfg.d_e] || store.tensor(p.pair_w1).shape() != [2 * cfg.d_raw, cfg.d_a] {
            return dim_err(format!("encoder parameters do not match config {cfg:?}"));
        }
        Ok(p)
    }
}

/// Records the encoder over a batch of candidates; returns an `n x d_e`
/// node whose row `j` is the embedding of `suggestions[j]`.
pub fn encode_on_tape(
    tape: &Tape,
    store: &ParamStore,
    params: &EncoderParams,
    query: &[f64],
    suggestions: &[&[f64]],
) -> Result<Var> {
    let d = params.config.d_raw;
    if query.len() != d {
        return dim_err(format!("query width {} != d_raw {d}", query.len()));
    }
    if suggestions.is_empty() {
        return dim_err("no candidates to encode");
    }
    let mut x = Vec::with_capacity(suggestions.len() * 2 * d);
    for s in suggestions {
        if s.len() != d {
            return dim_err(format!("suggestion width {} != d_raw {d}", s.len()));
        }
        x.extend_from_slice(s);
        x.extend_from_slice(query);
    }
    let x = tape.constant(suggestions.len(), 2 * d, x)?;
    let layer = |input: Var, w: ParamId, b: ParamId| -> Result<Var> {
        let z = tape.matmul(input, tape.param(store, w))?;
        Ok(tape.tanh(tape.add_row(z, tape.param(store, b))?))
    };
    let hidden = layer(x, params.pair_w1, params.pair_b1)?;
    let a = layer(hidden, params.pair_w2, params.pair_b2)?;
    layer(a, params.proj_w, params.proj_b)
}

pub fn encode_pair(
    query: &[f64],
    suggestion: &[f64],
    store: &ParamStore,
    params: &EncoderParams,
) -> Result<Vec<f64>> {
    let tape = Tape::new();
    let e = encode_on_tape(&tape, store, params, query, &[suggestion])?;
    Ok(tape.values(e))
}

/// Embeddings for every candidate, in candidate order.
pub fn encode_all(
    example: &QueryExample,
    store: &ParamStore,
    params: &EncoderParams,
) -> Result<Vec<QueryAwareEmbedding>> {
    let tape = Tape::new();
    let feats: Vec<&[f64]> = example.candidates.iter().map(|c| c.features.as_slice()).collect();
    let e = encode_on_tape(&tape, store, params, &example.query_features, &feats)?;
    let values = tape.values(e);
    let d_e = params.config.d_e;
    Ok(example
        .candidates
        .iter()
        .zip(values.chunks(d_e))
        .map(|(c, row)| QueryAwareEmbedding {
            suggestion_id: c.suggestion_id,
            e: row.to_vec(),
        })
        .collect())
}
