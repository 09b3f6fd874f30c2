#![allow(dead_code)]

use blockrec::autodiff::{ParamStore, Tape};
use blockrec::data::BLOCK;
use blockrec::decoder::{decode_on_tape, log_prob_on_tape, DecodeTrace, DecoderConfig, DecoderParams, TapeTrace};
use blockrec::objectives::Labels;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Decoder with every tensor drawn uniformly from `[-scale, scale]`.
pub fn random_decoder(seed: u64, d_e: usize, scale: f64, mask: bool) -> (ParamStore, DecoderParams) {
    let mut r = rng(seed);
    let cfg = DecoderConfig {
        lstm_hidden: r.random_range(2..6),
        hmn_hidden: r.random_range(2..5),
        pool: r.random_range(1..4),
        mask_within_iteration: mask,
        ..DecoderConfig::default()
    };
    let mut store = ParamStore::new();
    let p = DecoderParams::register(&mut store, "decoder", d_e, cfg, &mut r).unwrap();
    for id in store.ids().collect::<Vec<_>>() {
        for v in store.values_mut(id) {
            *v = r.random_range(-scale..scale);
        }
    }
    (store, p)
}

pub fn random_embeddings(r: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| r.random_range(-1.0..1.0)).collect()).collect()
}

/// Iteration count bound, fixed-point stop rule and final pointers of a trace.
pub fn trace_contract(tr: &DecodeTrace, max_iterations: usize) -> Result<(), String> {
    let n = tr.iterations.len();
    if n == 0 || n > max_iterations || n != tr.iterations_used {
        return Err(format!("{n} iterations recorded, {} reported", tr.iterations_used));
    }
    for i in 1..n {
        if tr.iterations[i].greedy == tr.iterations[i - 1].greedy && i + 1 != n {
            return Err(format!("iteration {i} repeats the previous tuple but decoding continued"));
        }
    }
    if n < max_iterations && (n < 2 || tr.iterations[n - 1].greedy != tr.iterations[n - 2].greedy) {
        return Err(format!("stopped after {n} iterations without a repeat"));
    }
    if tr.final_pointers != tr.iterations[n - 1].greedy {
        return Err("final pointers differ from the last greedy tuple".into());
    }
    Ok(())
}

pub fn distinct(p: &[usize; BLOCK]) -> bool {
    (0..BLOCK).all(|i| (i + 1..BLOCK).all(|j| p[i] != p[j]))
}

/// A decode whose sampled tuples are its greedy tuples. With
/// `max_iterations > 1` the context weights are zeroed so that every
/// iteration has the same greedy tuple.
pub fn greedy_sampled_trace(seed: u64, max_iterations: usize) -> (ParamStore, DecoderParams, Tape, TapeTrace, Labels) {
    let (mut store, mut p) = random_decoder(seed, 3, 1.0, seed % 2 == 0);
    p.config = DecoderConfig { max_iterations, ..p.config };
    if max_iterations > 1 {
        // State-free scores: the greedy tuple is constant across iterations.
        for h in &p.heads {
            store.values_mut(h.ctx_w).fill(0.0);
        }
    }
    let mut r = rng(seed);
    let e = random_embeddings(&mut r, 7, 3);
    let tape = Tape::new();
    let emb = tape.constant(7, 3, e.concat()).unwrap();
    let mut trace = decode_on_tape::<ChaCha8Rng>(&tape, &store, &p, emb, None).unwrap();
    for it in &mut trace.iterations {
        it.sampled = Some(it.greedy);
        it.sampled_log_prob = Some(log_prob_on_tape(&tape, &it.scores, &it.greedy, 1.0, p.config.mask_within_iteration).unwrap());
    }
    let labels = Labels {
        y: [0, 2, 4, 6],
        y_clusters: [0, 1, 2, 3],
        y_ranks: [1; 4],
        candidate_clusters: vec![0, 0, 1, 1, 2, 2, 3],
        candidate_ranks: vec![1, 2, 1, 2, 1, 2, 1],
    };
    (store, p, tape, trace, labels)
}
