//! GRU layer plumbing shared by the summarizer and the entailment encoder.
//!
//! One formulation everywhere: `r = σ(xWr + hUr + br)`, `z = σ(xWz + hUz +
//! bz)`, `n = tanh(xWn + r ∘ (hUn) + bn)`, `h' = n + z ∘ (h − n)`. The tape
//! step and the plain-matrix step execute the same elementary operations in
//! the same order, so both produce bitwise-identical states.

use rand::Rng;

use crate::error::{CoreError, Result};
use crate::nn::optim::{init_uniform, zeros, ParamSet};
use crate::nn::tape::{stable_sigmoid, Mat, Tape, Var};

/// Parameter indices of one GRU layer within a [`ParamSet`].
#[derive(Debug, Clone, Copy)]
pub struct GruIx {
    pub wr: usize,
    pub ur: usize,
    pub br: usize,
    pub wz: usize,
    pub uz: usize,
    pub bz: usize,
    pub wn: usize,
    pub un: usize,
    pub bn: usize,
}

/// The same layer's parameter vars injected into a tape.
#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub wr: Var,
    pub ur: Var,
    pub br: Var,
    pub wz: Var,
    pub uz: Var,
    pub bz: Var,
    pub wn: Var,
    pub un: Var,
    pub bn: Var,
}

pub fn param_names(prefix: &str, layer: usize) -> [String; 9] {
    [
        format!("{prefix}{layer}_wr"),
        format!("{prefix}{layer}_ur"),
        format!("{prefix}{layer}_br"),
        format!("{prefix}{layer}_wz"),
        format!("{prefix}{layer}_uz"),
        format!("{prefix}{layer}_bz"),
        format!("{prefix}{layer}_wn"),
        format!("{prefix}{layer}_un"),
        format!("{prefix}{layer}_bn"),
    ]
}

/// Add a freshly initialized layer (`(d, d)` weights uniform ±`scale`, zero
/// biases) to `params`.
pub fn add_params(
    params: &mut ParamSet,
    rng: &mut impl Rng,
    prefix: &str,
    layer: usize,
    d: usize,
    scale: f32,
) -> GruIx {
    let names = param_names(prefix, layer);
    GruIx {
        wr: params.add(&names[0], init_uniform(rng, d, d, scale)),
        ur: params.add(&names[1], init_uniform(rng, d, d, scale)),
        br: params.add(&names[2], zeros(1, d)),
        wz: params.add(&names[3], init_uniform(rng, d, d, scale)),
        uz: params.add(&names[4], init_uniform(rng, d, d, scale)),
        bz: params.add(&names[5], zeros(1, d)),
        wn: params.add(&names[6], init_uniform(rng, d, d, scale)),
        un: params.add(&names[7], init_uniform(rng, d, d, scale)),
        bn: params.add(&names[8], zeros(1, d)),
    }
}

/// Resolve an existing layer's tensors by name, checking shapes.
pub fn resolve(params: &ParamSet, prefix: &str, layer: usize, d: usize) -> Result<GruIx> {
    let names = param_names(prefix, layer);
    let need = |name: &str, rows: usize, cols: usize| -> Result<usize> {
        let idx = params
            .index_of(name)
            .ok_or_else(|| CoreError::Validation(format!("checkpoint is missing tensor {name}")))?;
        let dim = params.get(idx).dim();
        if dim != (rows, cols) {
            return Err(CoreError::Validation(format!(
                "tensor {name} has shape {dim:?}, expected ({rows}, {cols})"
            )));
        }
        Ok(idx)
    };
    Ok(GruIx {
        wr: need(&names[0], d, d)?,
        ur: need(&names[1], d, d)?,
        br: need(&names[2], 1, d)?,
        wz: need(&names[3], d, d)?,
        uz: need(&names[4], d, d)?,
        bz: need(&names[5], 1, d)?,
        wn: need(&names[6], d, d)?,
        un: need(&names[7], d, d)?,
        bn: need(&names[8], 1, d)?,
    })
}

pub fn inject(tape: &mut Tape, params: &ParamSet, set: u8, ix: &GruIx) -> GruVars {
    let mut p = |idx: usize| tape.param(set, idx, params.get(idx));
    GruVars {
        wr: p(ix.wr),
        ur: p(ix.ur),
        br: p(ix.br),
        wz: p(ix.wz),
        uz: p(ix.uz),
        bz: p(ix.bz),
        wn: p(ix.wn),
        un: p(ix.un),
        bn: p(ix.bn),
    }
}

/// One GRU step on a tape; input-side projections `xr`/`xz`/`xn` are `(1, d)`
/// rows already multiplied through the input weights.
pub fn step_on_tape(tape: &mut Tape, g: &GruVars, xr: Var, xz: Var, xn: Var, h: Var) -> Var {
    let hr = tape.matmul(h, g.ur);
    let sum = tape.add(xr, hr);
    let pre_r = tape.add_row(sum, g.br);
    let r = tape.sigmoid(pre_r);
    let hz = tape.matmul(h, g.uz);
    let sum = tape.add(xz, hz);
    let pre_z = tape.add_row(sum, g.bz);
    let z = tape.sigmoid(pre_z);
    let hn = tape.matmul(h, g.un);
    let gated = tape.mul(r, hn);
    let sum = tape.add(xn, gated);
    let pre_n = tape.add_row(sum, g.bn);
    let n = tape.tanh(pre_n);
    let diff = tape.sub(h, n);
    let zd = tape.mul(z, diff);
    tape.add(n, zd)
}

/// Plain-matrix twin of [`step_on_tape`] — identical operation order.
pub fn step_plain(g: &GruIx, params: &ParamSet, xr: &Mat, xz: &Mat, xn: &Mat, h: &Mat) -> Mat {
    let hr = h.dot(params.get(g.ur));
    let pre_r = (xr + &hr) + params.get(g.br).row(0);
    let r = pre_r.mapv(stable_sigmoid);
    let hz = h.dot(params.get(g.uz));
    let pre_z = (xz + &hz) + params.get(g.bz).row(0);
    let z = pre_z.mapv(stable_sigmoid);
    let hn = h.dot(params.get(g.un));
    let gated = &r * &hn;
    let pre_n = (xn + &gated) + params.get(g.bn).row(0);
    let n = pre_n.mapv(f32::tanh);
    let diff = h - &n;
    let zd = &z * &diff;
    &n + &zd
}

/// Run a whole layer over an `(L, d)` input sequence on a tape, returning
/// the `(L, d)` stacked hidden states. Input projections are batched once.
pub fn layer_on_tape(tape: &mut Tape, g: &GruVars, x: Var, len: usize, d: usize) -> Var {
    let xr_all = tape.matmul(x, g.wr);
    let xz_all = tape.matmul(x, g.wz);
    let xn_all = tape.matmul(x, g.wn);
    let mut h = tape.constant(zeros(1, d));
    let mut outputs = Vec::with_capacity(len);
    for t in 0..len {
        let xr = tape.slice_row(xr_all, t);
        let xz = tape.slice_row(xz_all, t);
        let xn = tape.slice_row(xn_all, t);
        h = step_on_tape(tape, g, xr, xz, xn, h);
        outputs.push(h);
    }
    tape.stack_rows(&outputs)
}

/// Plain-matrix twin of [`layer_on_tape`].
pub fn layer_plain(g: &GruIx, params: &ParamSet, x: &Mat) -> Mat {
    let (len, d) = x.dim();
    let xr_all = x.dot(params.get(g.wr));
    let xz_all = x.dot(params.get(g.wz));
    let xn_all = x.dot(params.get(g.wn));
    let mut h = zeros(1, d);
    let mut out = zeros(len, d);
    for t in 0..len {
        let xr = xr_all.slice(ndarray::s![t..t + 1, ..]).to_owned();
        let xz = xz_all.slice(ndarray::s![t..t + 1, ..]).to_owned();
        let xn = xn_all.slice(ndarray::s![t..t + 1, ..]).to_owned();
        h = step_plain(g, params, &xr, &xz, &xn, &h);
        out.row_mut(t).assign(&h.row(0));
    }
    out
}
