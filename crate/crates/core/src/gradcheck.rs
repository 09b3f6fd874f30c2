//! Central finite-difference checks of tape gradients.
//!
//! Each check records a scalar function of some input tensors and/or
//! stored parameters, takes reverse-mode gradients, and compares them with
//! `(f(x + h) - f(x - h)) / 2h` coordinate by coordinate. Non-scalar outputs
//! are reduced with a fixed random weighting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{lstm_cell, LstmParams, ParamStore, Tape, Tensor, Var};
use crate::data::{derive_seed, QueryExample, SuggestionRecord};
use crate::decoder::{head_projections, hmn_scores_on_tape, DecoderConfig};
use crate::encoder::EncoderConfig;
use crate::error::Result;
use crate::objectives::{combine_losses, ObjectiveSet};
use crate::train::{loss_on_tape, Model, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Coordinates sampled per parameter tensor; inputs are checked fully
    /// up to this many coordinates as well.
    pub coords_per_tensor: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-3,
            coords_per_tensor: 24,
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub max_rel_error: f64,
    pub coordinates: usize,
    pub passed: bool,
}

/// `|a - b| / max(|a|, |b|, 1e-6)`.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn normal_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let v = (0..rows * cols)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect();
    Tensor::matrix(rows, cols, v).expect("positive dims")
}

fn pick_coords(rng: &mut ChaCha8Rng, len: usize, limit: usize) -> Vec<usize> {
    if len <= limit {
        return (0..len).collect();
    }
    let mut picks = rand::seq::index::sample(rng, len, limit).into_vec();
    picks.sort_unstable();
    picks
}

/// Records `f` and reduces a non-scalar output against fixed weights.
fn scalar_loss<F>(tape: &Tape, store: &ParamStore, inputs: &[Tensor], weights_seed: u64, f: &F) -> Result<(Var, Vec<Var>)>
where
    F: Fn(&Tape, &ParamStore, &[Var]) -> Result<Var>,
{
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(&t.clone().with_grad(true))).collect();
    let out = f(tape, store, &vars)?;
    let (r, c) = tape.shape(out);
    if r * c == 1 {
        return Ok((out, vars));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(weights_seed);
    let w = tape.constant(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    Ok((tape.sum(tape.mul(out, w)?), vars))
}

fn eval<F>(store: &ParamStore, inputs: &[Tensor], weights_seed: u64, f: &F) -> Result<f64>
where
    F: Fn(&Tape, &ParamStore, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let (loss, _) = scalar_loss(&tape, store, inputs, weights_seed, f)?;
    Ok(tape.scalar(loss))
}

/// Compares analytic and numeric gradients of `f` with respect to every
/// input tensor and every tensor in `store`.
pub fn check<F>(name: &str, store: &mut ParamStore, inputs: &[Tensor], cfg: &GradCheckConfig, f: F) -> Result<CheckOutcome>
where
    F: Fn(&Tape, &ParamStore, &[Var]) -> Result<Var>,
{
    let weights_seed = derive_seed(cfg.seed, 0x57);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0xc0));
    let tape = Tape::new();
    let (loss, vars) = scalar_loss(&tape, store, inputs, weights_seed, &f)?;
    store.zero_grad();
    let grads = tape.backward(loss, store)?;

    let h = cfg.step;
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (i, t) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[i]).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]);
        for j in pick_coords(&mut rng, t.len(), cfg.coords_per_tensor) {
            let mut shifted = inputs.to_vec();
            let x = t.values()[j];
            shifted[i].values_mut()[j] = x + h;
            let up = eval(store, &shifted, weights_seed, &f)?;
            shifted[i].values_mut()[j] = x - h;
            let down = eval(store, &shifted, weights_seed, &f)?;
            worst = worst.max(rel_error(analytic[j], (up - down) / (2.0 * h)));
            count += 1;
        }
    }
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let analytic = store.grad(id);
        for j in pick_coords(&mut rng, analytic.len(), cfg.coords_per_tensor) {
            let x = store.tensor(id).values()[j];
            store.values_mut(id)[j] = x + h;
            let up = eval(store, inputs, weights_seed, &f)?;
            store.values_mut(id)[j] = x - h;
            let down = eval(store, inputs, weights_seed, &f)?;
            store.values_mut(id)[j] = x;
            worst = worst.max(rel_error(analytic[j], (up - down) / (2.0 * h)));
            count += 1;
        }
    }
    store.zero_grad();
    Ok(CheckOutcome {
        name: name.to_string(),
        max_rel_error: worst,
        coordinates: count,
        passed: worst <= cfg.tolerance,
    })
}

fn op_checks(cfg: &GradCheckConfig) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut m = |r, c| normal_tensor(&mut rng, r, c, 1.0);
    let (a34, b34, c42, row4) = (m(3, 4), m(3, 4), m(4, 2), m(1, 4));
    let (a36, a32, logits, bce) = (m(3, 6), m(3, 2), m(1, 5), m(2, 3));
    let mut empty = ParamStore::new();
    let mut out = Vec::new();
    let mut run = |name: &str, inputs: Vec<Tensor>, f: &dyn Fn(&Tape, &[Var]) -> Result<Var>| -> Result<()> {
        out.push(check(name, &mut empty, &inputs, cfg, |t: &Tape, _: &ParamStore, v: &[Var]| f(t, v))?);
        Ok(())
    };
    run("matmul", vec![a34.clone(), c42.clone()], &|t, v| t.matmul(v[0], v[1]))?;
    run("add", vec![a34.clone(), b34.clone()], &|t, v| t.add(v[0], v[1]))?;
    run("sub", vec![a34.clone(), b34.clone()], &|t, v| t.sub(v[0], v[1]))?;
    run("mul", vec![a34.clone(), b34.clone()], &|t, v| t.mul(v[0], v[1]))?;
    run("add_row", vec![a34.clone(), row4.clone()], &|t, v| t.add_row(v[0], v[1]))?;
    run("scale", vec![a34.clone()], &|t, v| Ok(t.scale(v[0], -1.7)))?;
    run("tanh", vec![a34.clone()], &|t, v| Ok(t.tanh(v[0])))?;
    run("sigmoid", vec![a34.clone()], &|t, v| Ok(t.sigmoid(v[0])))?;
    run("exp", vec![a34.clone()], &|t, v| Ok(t.exp(v[0])))?;
    run("maxout", vec![a36.clone()], &|t, v| t.maxout(v[0], 3))?;
    run("concat_cols", vec![a34.clone(), a32.clone()], &|t, v| t.concat_cols(&[v[0], v[1]]))?;
    run("slice_cols", vec![a36.clone()], &|t, v| t.slice_cols(v[0], 1, 3))?;
    run("gather_rows", vec![a34.clone()], &|t, v| t.gather_rows(v[0], &[2, 0, 2, 1]))?;
    run("reshape", vec![a34.clone()], &|t, v| t.reshape(v[0], 1, 12))?;
    run("sum", vec![a34.clone()], &|t, v| Ok(t.sum(v[0])))?;
    run("softmax_cross_entropy", vec![logits.clone()], &|t, v| t.softmax_cross_entropy(v[0], 2))?;
    run("bce_with_logits", vec![bce.clone()], &|t, v| {
        t.bce_with_logits(v[0], &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0])
    })?;
    run("combine_losses", vec![positive(m(1, 3)), m(1, 3)], &|t, v| {
        let losses = [t.slice_cols(v[0], 0, 1)?, t.slice_cols(v[0], 1, 1)?, t.slice_cols(v[0], 2, 1)?];
        combine_losses(t, &losses, v[1])
    })?;
    Ok(out)
}

fn positive(mut t: Tensor) -> Tensor {
    t.values_mut().iter_mut().for_each(|x| *x = x.abs() + 0.1);
    t
}

fn lstm_check(cfg: &GradCheckConfig) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1));
    let mut store = ParamStore::new();
    let p = LstmParams::register(&mut store, "lstm", 5, 3, &mut rng)?;
    for id in store.ids().collect::<Vec<_>>() {
        let len = store.tensor(id).len();
        let noise = normal_tensor(&mut rng, 1, len, 0.3);
        store.set_values(id, noise.values())?;
    }
    let inputs = vec![
        normal_tensor(&mut rng, 1, 5, 1.0),
        normal_tensor(&mut rng, 1, 3, 0.5),
        normal_tensor(&mut rng, 1, 3, 0.5),
    ];
    check("lstm_cell", &mut store, &inputs, cfg, |t, s, v| {
        let (h, c) = lstm_cell(t, s, &p, v[0], v[1], v[2])?;
        t.concat_cols(&[h, c])
    })
}

fn small_model(objectives: &str, mask: bool) -> Result<(RunConfig, Model)> {
    let mut cfg = RunConfig {
        encoder: EncoderConfig { d_raw: 3, d_a: 5, d_e: 4 },
        decoder: DecoderConfig {
            lstm_hidden: 3,
            hmn_hidden: 3,
            pool: 2,
            mask_within_iteration: mask,
            ..DecoderConfig::default()
        },
        objectives: ObjectiveSet::parse(objectives)?,
        ..RunConfig::default()
    };
    cfg.generator.d_raw = 3;
    let mut model = Model::init(&cfg)?;
    // Nonzero loss weights and biases so that every path is exercised.
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 99));
    for id in model.store.ids().collect::<Vec<_>>() {
        if model.store.name(id).ends_with('b') || model.store.name(id).ends_with("log_var") || model.store.name(id).ends_with("bias") {
            let len = model.store.tensor(id).len();
            let v = normal_tensor(&mut rng, 1, len, 0.3);
            model.store.set_values(id, v.values())?;
        }
    }
    Ok((cfg, model))
}

fn synthetic_query(seed: u64, n: usize, d: usize) -> QueryExample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = |len| normal_tensor(&mut rng, 1, len, 1.0).values().to_vec();
    let query_features = v(d);
    let candidates = (0..n)
        .map(|i| SuggestionRecord {
            suggestion_id: i as u64,
            features: v(d),
            click_rate: 0.5,
            cooccurrence_count: 10,
            cluster_id: i % 5,
            rank_in_cluster: i / 5 + 1,
        })
        .collect();
    QueryExample {
        query_id: seed,
        query_features,
        impressions: 1000,
        candidates,
        labels: vec![0, 1, 2, 3],
    }
}

fn hmn_check(cfg: &GradCheckConfig) -> Result<CheckOutcome> {
    let (_, mut model) = small_model("ce", false)?;
    let dec = model.params.decoder.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2));
    let inputs = vec![
        normal_tensor(&mut rng, 6, dec.d_e, 1.0),
        normal_tensor(&mut rng, 1, dec.config.lstm_hidden, 0.5),
        normal_tensor(&mut rng, 1, 4 * dec.d_e, 0.5),
    ];
    check("hmn_head", &mut model.store, &inputs, cfg, |t, s, v| {
        let proj = head_projections(t, s, &dec, v[0])?;
        hmn_scores_on_tape(t, s, &dec.heads[1], dec.config.pool, proj[1], v[1], v[2])
    })
}

fn encoder_check(cfg: &GradCheckConfig) -> Result<CheckOutcome> {
    let (_, mut model) = small_model("ce", false)?;
    let params = model.params.clone();
    let ex = synthetic_query(derive_seed(cfg.seed, 3), 7, 3);
    check("encoder", &mut model.store, &[], cfg, |t, s, _| params.embed(t, s, &ex))
}

/// Encoder, decoder, all four objectives and the weighted combination.
fn full_pass_check(cfg: &GradCheckConfig, mask: bool) -> Result<CheckOutcome> {
    let (run, mut model) = small_model("ce+f1+div+mrr", mask)?;
    let params = model.params.clone();
    let ex = synthetic_query(derive_seed(cfg.seed, 4), 9, 3);
    let sample_seed = derive_seed(cfg.seed, 5);
    let name = if mask { "full_pass_masked" } else { "full_pass" };
    check(name, &mut model.store, &[], cfg, |t, s, _| {
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
        Ok(loss_on_tape(t, s, &params, &run.objectives, &ex, &mut rng)?.0)
    })
}

/// Every differentiable operation plus the full model pass.
pub fn run_suite(cfg: &GradCheckConfig) -> Result<Vec<CheckOutcome>> {
    let mut out = op_checks(cfg)?;
    out.push(lstm_check(cfg)?);
    out.push(hmn_check(cfg)?);
    out.push(encoder_check(cfg)?);
    out.push(full_pass_check(cfg, false)?);
    out.push(full_pass_check(cfg, true)?);
    Ok(out)
}
