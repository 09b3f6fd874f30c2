use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{dim_err, Result};

/// Gate weights for one LSTM cell. Gate columns are laid out as
/// `[input | forget | candidate | output]`, each `hidden` wide.
#[derive(Debug, Clone, Copy)]
pub struct LstmParams {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

impl LstmParams {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            w_input: store.insert_glorot(format!("{prefix}.w_input"), input_dim, 4 * hidden, rng)?,
            w_hidden: store.insert_glorot(format!("{prefix}.w_hidden"), hidden, 4 * hidden, rng)?,
            bias: store.insert_zeros(format!("{prefix}.bias"), 1, 4 * hidden)?,
            input_dim,
            hidden,
        })
    }

    pub fn lookup(store: &ParamStore, prefix: &str) -> Result<Self> {
        let w_input = store.require(&format!("{prefix}.w_input"))?;
        let w_hidden = store.require(&format!("{prefix}.w_hidden"))?;
        let bias = store.require(&format!("{prefix}.bias"))?;
        let hidden = store.tensor(w_hidden).rows();
        Ok(Self {
            w_input,
            w_hidden,
            bias,
            input_dim: store.tensor(w_input).rows(),
            hidden,
        })
    }
}

/// One LSTM step: returns `(h', c')` with `c' = f*c + i*g` and
/// `h' = o*tanh(c')`.
pub fn lstm_cell(
    tape: &Tape,
    store: &ParamStore,
    params: &LstmParams,
    x: Var,
    h: Var,
    c: Var,
) -> Result<(Var, Var)> {
    let hd = params.hidden;
    if tape.shape(x) != (1, params.input_dim) {
        let (r, k) = tape.shape(x);
        return dim_err(format!("lstm input {r}x{k}, expected 1x{}", params.input_dim));
    }
    if tape.shape(h) != (1, hd) || tape.shape(c) != (1, hd) {
        return dim_err(format!("lstm state must be 1x{hd}"));
    }
    let wx = tape.param(store, params.w_input);
    let wh = tape.param(store, params.w_hidden);
    let b = tape.param(store, params.bias);
    let z = tape.add(tape.matmul(x, wx)?, tape.matmul(h, wh)?)?;
    let z = tape.add(z, b)?;
    let i = tape.sigmoid(tape.slice_cols(z, 0, hd)?);
    let f = tape.sigmoid(tape.slice_cols(z, hd, hd)?);
    let g = tape.tanh(tape.slice_cols(z, 2 * hd, hd)?);
    let o = tape.sigmoid(tape.slice_cols(z, 3 * hd, hd)?);
    let c_next = tape.add(tape.mul(f, c)?, tape.mul(i, g)?)?;
    let h_next = tape.mul(o, tape.tanh(c_next))?;
    Ok((h_next, c_next))
}
