//! Iterative four-pointer decoder.
//!
//! Each iteration feeds the embeddings of the four previously selected
//! candidates to an LSTM, then scores every candidate with four independent
//! highway-maxout networks (one per output position) and takes the per-head
//! argmax. Iteration stops once the pointer tuple repeats or after
//! `max_iterations`.
//!
//! Scoring network for head `k`, given candidate rows `E` (n x d_e), LSTM
//! state `h` and previous selections `p` (1 x 4 d_e):
//!
//! ```text
//! r   = tanh([h; p] U_k + u_k)
//! l1  = maxout(E W1_k + r V1_k + b1_k)
//! l2  = l1 + sigmoid(l1 G_k + g_k) * (maxout(l1 T_k + t_k) - l1)
//! out = maxout(l2 O_k + o_k)                      -> n x 1
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{lstm_cell, LstmParams, ParamId, ParamStore, Tape, Var};
use crate::data::BLOCK;
use crate::error::{dim_err, Error, Result};

pub type Pointers = [usize; BLOCK];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    pub max_iterations: usize,
    pub lstm_hidden: usize,
    pub hmn_hidden: usize,
    pub pool: usize,
    pub mask_within_iteration: bool,
    pub temperature: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            max_iterations: 8,
            lstm_hidden: 32,
            hmn_hidden: 32,
            pool: 4,
            mask_within_iteration: false,
            temperature: 1.0,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || self.pool == 0 || self.lstm_hidden == 0 || self.hmn_hidden == 0 {
            return Err(Error::Config("decoder sizes must be positive".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        Ok(())
    }
}

/// Parameters of one scoring head.
#[derive(Debug, Clone, Copy)]
pub struct HmnParams {
    pub ctx_w: ParamId,
    pub ctx_b: ParamId,
    pub in_w: ParamId,
    pub in_ctx_w: ParamId,
    pub in_b: ParamId,
    pub transform_w: ParamId,
    pub transform_b: ParamId,
    pub gate_w: ParamId,
    pub gate_b: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

const HMN_NAMES: [&str; 11] = [
    "ctx_w",
    "ctx_b",
    "in_w",
    "in_ctx_w",
    "in_b",
    "transform_w",
    "transform_b",
    "gate_w",
    "gate_b",
    "out_w",
    "out_b",
];

impl HmnParams {
    fn register<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        d_e: usize,
        cfg: &DecoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let (m, p, hd) = (cfg.hmn_hidden, cfg.pool, cfg.lstm_hidden);
        let ctx_in = hd + BLOCK * d_e;
        Ok(Self {
            ctx_w: store.insert_glorot(format!("{prefix}.ctx_w"), ctx_in, m, rng)?,
            ctx_b: store.insert_zeros(format!("{prefix}.ctx_b"), 1, m)?,
            in_w: store.insert_glorot(format!("{prefix}.in_w"), d_e, m * p, rng)?,
            in_ctx_w: store.insert_glorot(format!("{prefix}.in_ctx_w"), m, m * p, rng)?,
            in_b: store.insert_zeros(format!("{prefix}.in_b"), 1, m * p)?,
            transform_w: store.insert_glorot(format!("{prefix}.transform_w"), m, m * p, rng)?,
            transform_b: store.insert_zeros(format!("{prefix}.transform_b"), 1, m * p)?,
            gate_w: store.insert_glorot(format!("{prefix}.gate_w"), m, m, rng)?,
            gate_b: store.insert_zeros(format!("{prefix}.gate_b"), 1, m)?,
            out_w: store.insert_glorot(format!("{prefix}.out_w"), m, p, rng)?,
            out_b: store.insert_zeros(format!("{prefix}.out_b"), 1, p)?,
        })
    }

    fn lookup(store: &ParamStore, prefix: &str) -> Result<Self> {
        let ids = HMN_NAMES
            .iter()
            .map(|n| store.require(&format!("{prefix}.{n}")))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            ctx_w: ids[0],
            ctx_b: ids[1],
            in_w: ids[2],
            in_ctx_w: ids[3],
            in_b: ids[4],
            transform_w: ids[5],
            transform_b: ids[6],
            gate_w: ids[7],
            gate_b: ids[8],
            out_w: ids[9],
            out_b: ids[10],
        })
    }

    pub fn ids(&self) -> [ParamId; 11] {
        [
            self.ctx_w,
            self.ctx_b,
            self.in_w,
            self.in_ctx_w,
            self.in_b,
            self.transform_w,
            self.transform_b,
            self.gate_w,
            self.gate_b,
            self.out_w,
            self.out_b,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct DecoderParams {
    pub lstm: LstmParams,
    pub heads: [HmnParams; BLOCK],
    pub d_e: usize,
    pub config: DecoderConfig,
}

impl DecoderParams {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        d_e: usize,
        config: DecoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let lstm = LstmParams::register(store, &format!("{prefix}.lstm"), BLOCK * d_e, config.lstm_hidden, rng)?;
        let mut heads = Vec::with_capacity(BLOCK);
        for k in 0..BLOCK {
            heads.push(HmnParams::register(store, &format!("{prefix}.hmn{k}"), d_e, &config, rng)?);
        }
        Ok(Self {
            lstm,
            heads: heads.try_into().expect("four heads"),
            d_e,
            config,
        })
    }

    pub fn lookup(store: &ParamStore, prefix: &str, d_e: usize, config: DecoderConfig) -> Result<Self> {
        config.validate()?;
        let lstm = LstmParams::lookup(store, &format!("{prefix}.lstm"))?;
        if lstm.input_dim != BLOCK * d_e || lstm.hidden != config.lstm_hidden {
            return dim_err("decoder lstm shape does not match config");
        }
        let mut heads = Vec::with_capacity(BLOCK);
        for k in 0..BLOCK {
            let h = HmnParams::lookup(store, &format!("{prefix}.hmn{k}"))?;
            let expect = [config.hmn_hidden, config.pool];
            if store.tensor(h.out_w).shape() != expect || store.tensor(h.in_w).shape() != [d_e, config.hmn_hidden * config.pool] {
                return dim_err("decoder head shape does not match config");
            }
            heads.push(h);
        }
        Ok(Self {
            lstm,
            heads: heads.try_into().expect("four heads"),
            d_e,
            config,
        })
    }
}

/// Candidate scores of one iteration: `column(k)[t]` is the score of
/// candidate `t` for output position `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointerScores {
    pub columns: [Vec<f64>; BLOCK],
}

impl PointerScores {
    pub fn n(&self) -> usize {
        self.columns[0].len()
    }

    pub fn get(&self, t: usize, k: usize) -> f64 {
        self.columns[k][t]
    }

    pub fn is_finite(&self) -> bool {
        self.columns.iter().flatten().all(|v| v.is_finite())
    }
}

/// Value-level decoder state.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    pub prev_pointers: Option<Pointers>,
    pub prev_embeddings: Vec<Vec<f64>>,
}

impl DecoderState {
    pub fn initial(params: &DecoderParams) -> Self {
        Self {
            h: vec![0.0; params.config.lstm_hidden],
            c: vec![0.0; params.config.lstm_hidden],
            prev_pointers: None,
            prev_embeddings: vec![vec![0.0; params.d_e]; BLOCK],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub scores: PointerScores,
    pub greedy: Pointers,
    pub sampled: Option<Pointers>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeTrace {
    pub iterations: Vec<IterationTrace>,
    pub final_pointers: Pointers,
    pub iterations_used: usize,
}

/// Argmax with lowest-index ties, skipping `excluded`.
pub fn argmax_excluding(values: &[f64], excluded: &[usize]) -> usize {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if excluded.contains(&i) {
            continue;
        }
        if best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best.unwrap_or(0)
}

pub fn select_pointers(scores: &PointerScores, mask: bool) -> Pointers {
    let mut out = [0; BLOCK];
    for k in 0..BLOCK {
        let excluded = if mask { &out[..k] } else { &[][..] };
        out[k] = argmax_excluding(&scores.columns[k], excluded);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledPointers {
    pub pointers: Pointers,
    pub log_probs: [f64; BLOCK],
}

/// Draws each pointer independently from `softmax(column / temperature)`.
pub fn sample_pointers<R: Rng>(scores: &PointerScores, temperature: f64, rng: &mut R) -> Result<SampledPointers> {
    sample_with(scores, temperature, false, rng)
}

/// Draws pointer `k` from the softmax over candidates not already drawn for
/// positions `0..k`; the sampling counterpart of masked greedy selection.
pub fn sample_pointers_masked<R: Rng>(scores: &PointerScores, temperature: f64, rng: &mut R) -> Result<SampledPointers> {
    sample_with(scores, temperature, true, rng)
}

fn sample_with<R: Rng>(scores: &PointerScores, temperature: f64, mask: bool, rng: &mut R) -> Result<SampledPointers> {
    if !(temperature > 0.0) {
        return Err(Error::Contract(format!("temperature {temperature} must be positive")));
    }
    if !scores.is_finite() {
        return Err(Error::Contract("cannot sample from non-finite scores".into()));
    }
    let mut pointers = [0; BLOCK];
    let mut log_probs = [0.0; BLOCK];
    for k in 0..BLOCK {
        let allowed: Vec<usize> = (0..scores.n()).filter(|i| !mask || !pointers[..k].contains(i)).collect();
        let scaled: Vec<f64> = allowed.iter().map(|&i| scores.columns[k][i] / temperature).collect();
        let probs = crate::autodiff::softmax(&scaled);
        let lse = crate::autodiff::log_sum_exp(&scaled);
        let mut u: f64 = rng.random();
        let mut pick = probs.len() - 1;
        for (i, &p) in probs.iter().enumerate() {
            if u < p {
                pick = i;
                break;
            }
            u -= p;
        }
        pointers[k] = allowed[pick];
        log_probs[k] = scaled[pick] - lse;
    }
    Ok(SampledPointers { pointers, log_probs })
}

/// Decoder state as recorded nodes.
#[derive(Debug, Clone, Copy)]
pub struct TapeState {
    pub h: Var,
    pub c: Var,
    /// `1 x 4 d_e` concatenation of the previous selections.
    pub prev: Var,
    pub prev_pointers: Option<Pointers>,
}

impl TapeState {
    pub fn zero(tape: &Tape, params: &DecoderParams) -> Self {
        let hd = params.config.lstm_hidden;
        Self {
            h: tape.row(vec![0.0; hd]),
            c: tape.row(vec![0.0; hd]),
            prev: tape.row(vec![0.0; BLOCK * params.d_e]),
            prev_pointers: None,
        }
    }
}

/// Embedding projections `E W1_k`, which do not change across iterations.
pub fn head_projections(tape: &Tape, store: &ParamStore, params: &DecoderParams, emb: Var) -> Result<[Var; BLOCK]> {
    let mut out = [emb; BLOCK];
    for (slot, head) in out.iter_mut().zip(&params.heads) {
        *slot = tape.matmul(emb, tape.param(store, head.in_w))?;
    }
    Ok(out)
}

/// Scores all candidates for one head; returns an `n x 1` node.
pub fn hmn_scores_on_tape(
    tape: &Tape,
    store: &ParamStore,
    head: &HmnParams,
    pool: usize,
    projected: Var,
    h: Var,
    prev: Var,
) -> Result<Var> {
    let p = |id| tape.param(store, id);
    let ctx = tape.concat_cols(&[h, prev])?;
    let r = tape.tanh(tape.add(tape.matmul(ctx, p(head.ctx_w))?, p(head.ctx_b))?);
    let shift = tape.add(tape.matmul(r, p(head.in_ctx_w))?, p(head.in_b))?;
    let l1 = tape.maxout(tape.add_row(projected, shift)?, pool)?;
    let transformed = tape.maxout(tape.add_row(tape.matmul(l1, p(head.transform_w))?, p(head.transform_b))?, pool)?;
    let gate = tape.sigmoid(tape.add_row(tape.matmul(l1, p(head.gate_w))?, p(head.gate_b))?);
    let l2 = tape.add(l1, tape.mul(gate, tape.sub(transformed, l1)?)?)?;
    tape.maxout(tape.add_row(tape.matmul(l2, p(head.out_w))?, p(head.out_b))?, pool)
}

/// One recorded decoder iteration.
#[derive(Debug, Clone, Copy)]
pub struct TapeStep {
    pub scores: [Var; BLOCK],
    pub greedy: Pointers,
    pub state: TapeState,
}

pub fn decode_step_on_tape(
    tape: &Tape,
    store: &ParamStore,
    params: &DecoderParams,
    emb: Var,
    projections: &[Var; BLOCK],
    state: &TapeState,
) -> Result<TapeStep> {
    let n = tape.shape(emb).0;
    if n < BLOCK {
        return Err(Error::Contract(format!("decoder needs at least {BLOCK} candidates, got {n}")));
    }
    let (h, c) = lstm_cell(tape, store, &params.lstm, state.prev, state.h, state.c)?;
    let mut scores = [emb; BLOCK];
    for k in 0..BLOCK {
        scores[k] = hmn_scores_on_tape(tape, store, &params.heads[k], params.config.pool, projections[k], h, state.prev)?;
    }
    let values = PointerScores {
        columns: scores.map(|v| tape.values(v)),
    };
    let greedy = select_pointers(&values, params.config.mask_within_iteration);
    let picked = tape.gather_rows(emb, &greedy)?;
    let prev = tape.reshape(picked, 1, BLOCK * params.d_e)?;
    Ok(TapeStep {
        scores,
        greedy,
        state: TapeState {
            h,
            c,
            prev,
            prev_pointers: Some(greedy),
        },
    })
}

/// One iteration of a recorded decode, with optional sampled pointers and
/// the summed log-probability node of those samples.
#[derive(Debug, Clone)]
pub struct TapeIteration {
    pub scores: [Var; BLOCK],
    pub greedy: Pointers,
    pub sampled: Option<Pointers>,
    pub sampled_log_prob: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct TapeTrace {
    pub iterations: Vec<TapeIteration>,
}

impl TapeTrace {
    pub fn final_pointers(&self) -> Pointers {
        self.iterations.last().expect("at least one iteration").greedy
    }

    pub fn to_trace(&self, tape: &Tape) -> DecodeTrace {
        let iterations = self
            .iterations
            .iter()
            .map(|it| IterationTrace {
                scores: PointerScores {
                    columns: it.scores.map(|v| tape.values(v)),
                },
                greedy: it.greedy,
                sampled: it.sampled,
            })
            .collect::<Vec<_>>();
        DecodeTrace {
            final_pointers: self.final_pointers(),
            iterations_used: iterations.len(),
            iterations,
        }
    }
}

/// Sum over heads of `log softmax(scores_k / temperature)[pointer_k]`. With
/// `mask`, head `k`'s softmax runs over the candidates not taken by
/// positions `0..k`.
pub fn log_prob_on_tape(
    tape: &Tape,
    scores: &[Var; BLOCK],
    pointers: &Pointers,
    temperature: f64,
    mask: bool,
) -> Result<Var> {
    let mut terms = Vec::with_capacity(BLOCK);
    for k in 0..BLOCK {
        let mut logits = if temperature == 1.0 {
            scores[k]
        } else {
            tape.scale(scores[k], 1.0 / temperature)
        };
        let mut target = pointers[k];
        if mask && k > 0 {
            let taken = &pointers[..k];
            if taken.contains(&target) {
                return Err(Error::Contract(format!("pointer {target} repeats under masking")));
            }
            let (n, _) = tape.shape(scores[k]);
            let allowed: Vec<usize> = (0..n).filter(|i| !taken.contains(i)).collect();
            target = allowed.iter().position(|&i| i == target).ok_or_else(|| {
                Error::Index(format!("pointer {target} out of range for {n} candidates"))
            })?;
            logits = tape.gather_rows(logits, &allowed)?;
        }
        terms.push(tape.softmax_cross_entropy(logits, target)?);
    }
    Ok(tape.scale(tape.add_all(&terms)?, -1.0))
}

/// Runs the decode loop from the zero state. With `sampler`, one pointer
/// tuple is drawn per iteration and its log-probability recorded; the loop
/// itself always follows the greedy pointers.
pub fn decode_on_tape<R: Rng>(
    tape: &Tape,
    store: &ParamStore,
    params: &DecoderParams,
    emb: Var,
    mut sampler: Option<&mut R>,
) -> Result<TapeTrace> {
    let projections = head_projections(tape, store, params, emb)?;
    let mut state = TapeState::zero(tape, params);
    let mut iterations: Vec<TapeIteration> = Vec::new();
    for _ in 0..params.config.max_iterations {
        let step = decode_step_on_tape(tape, store, params, emb, &projections, &state)?;
        let (sampled, sampled_log_prob) = match sampler.as_deref_mut() {
            Some(rng) => {
                let values = PointerScores {
                    columns: step.scores.map(|v| tape.values(v)),
                };
                let (t, mask) = (params.config.temperature, params.config.mask_within_iteration);
                let draw = if mask {
                    sample_pointers_masked(&values, t, rng)?
                } else {
                    sample_pointers(&values, t, rng)?
                };
                let lp = log_prob_on_tape(tape, &step.scores, &draw.pointers, t, mask)?;
                (Some(draw.pointers), Some(lp))
            }
            None => (None, None),
        };
        let repeated = state.prev_pointers == Some(step.greedy);
        iterations.push(TapeIteration {
            scores: step.scores,
            greedy: step.greedy,
            sampled,
            sampled_log_prob,
        });
        state = step.state;
        if repeated {
            break;
        }
    }
    Ok(TapeTrace { iterations })
}

fn embedding_node(tape: &Tape, embeddings: &[Vec<f64>], d_e: usize) -> Result<Var> {
    if embeddings.iter().any(|e| e.len() != d_e) {
        return dim_err(format!("embeddings must have width {d_e}"));
    }
    if embeddings.len() < BLOCK {
        return Err(Error::Contract(format!(
            "decoder needs at least {BLOCK} candidates, got {}",
            embeddings.len()
        )));
    }
    tape.constant(embeddings.len(), d_e, embeddings.concat())
}

/// Score of a single candidate embedding under head `k`.
pub fn hmn_score(
    e_t: &[f64],
    state: &DecoderState,
    store: &ParamStore,
    params: &DecoderParams,
    k: usize,
) -> Result<f64> {
    if e_t.len() != params.d_e || state.h.len() != params.config.lstm_hidden {
        return dim_err("hmn input widths do not match the decoder");
    }
    let tape = Tape::new();
    let emb = tape.row(e_t.to_vec());
    let proj = tape.matmul(emb, tape.param(store, params.heads[k].in_w))?;
    let h = tape.row(state.h.clone());
    let prev = tape.row(state.prev_embeddings.concat());
    let s = hmn_scores_on_tape(&tape, store, &params.heads[k], params.config.pool, proj, h, prev)?;
    Ok(tape.values(s)[0])
}

/// One decoder iteration on plain values.
pub fn decode_step(
    embeddings: &[Vec<f64>],
    state: &DecoderState,
    store: &ParamStore,
    params: &DecoderParams,
) -> Result<(PointerScores, Pointers, DecoderState)> {
    let tape = Tape::new();
    let emb = embedding_node(&tape, embeddings, params.d_e)?;
    let projections = head_projections(&tape, store, params, emb)?;
    let ts = TapeState {
        h: tape.row(state.h.clone()),
        c: tape.row(state.c.clone()),
        prev: tape.row(state.prev_embeddings.concat()),
        prev_pointers: state.prev_pointers,
    };
    let step = decode_step_on_tape(&tape, store, params, emb, &projections, &ts)?;
    let scores = PointerScores {
        columns: step.scores.map(|v| tape.values(v)),
    };
    let next = DecoderState {
        h: tape.values(step.state.h),
        c: tape.values(step.state.c),
        prev_pointers: Some(step.greedy),
        prev_embeddings: step.greedy.iter().map(|&i| embeddings[i].clone()).collect(),
    };
    Ok((scores, step.greedy, next))
}

/// Greedy decode on plain values.
pub fn decode(embeddings: &[Vec<f64>], store: &ParamStore, params: &DecoderParams) -> Result<DecodeTrace> {
    let tape = Tape::new();
    let emb = embedding_node(&tape, embeddings, params.d_e)?;
    let trace = decode_on_tape::<rand_chacha::ChaCha8Rng>(&tape, store, params, emb, None)?;
    Ok(trace.to_trace(&tape))
}
