//! Transformer building blocks expressed as tape operations.
//!
//! Every layer comes as an `init_*` that registers parameters under a name
//! prefix and a forward function reading them back from a [`Bound`].

use super::params::{Bound, Init, ParamStore};
use crate::error::Result;
use crate::rng::SeedStream;
use crate::tensor::{Array, Tape, Var};

/// Additive score for disallowed attention positions; `exp` underflows to
/// exactly zero.
const MASKED_SCORE: f64 = -1e30;

pub fn init_linear(s: &mut ParamStore, r: &SeedStream, name: &str, d_in: usize, d_out: usize) -> Result<()> {
    s.init(r, &format!("{name}.w"), &[d_in, d_out], Init::FanIn)?;
    s.init(r, &format!("{name}.b"), &[d_out], Init::Zeros)
}

pub fn linear(t: &mut Tape, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let y = t.matmul(x, p.var(&format!("{name}.w"))?)?;
    t.add_row(y, p.var(&format!("{name}.b"))?)
}

pub fn init_layer_norm(s: &mut ParamStore, r: &SeedStream, name: &str, d: usize) -> Result<()> {
    s.init(r, &format!("{name}.g"), &[d], Init::Ones)?;
    s.init(r, &format!("{name}.b"), &[d], Init::Zeros)
}

pub fn layer_norm(t: &mut Tape, p: &Bound, name: &str, x: Var, eps: f64) -> Result<Var> {
    let n = t.layer_norm(x, eps)?;
    let n = t.mul_row(n, p.var(&format!("{name}.g"))?)?;
    t.add_row(n, p.var(&format!("{name}.b"))?)
}

pub fn init_attention(s: &mut ParamStore, r: &SeedStream, name: &str, d: usize) -> Result<()> {
    for proj in ["q", "v", "o"] {
        init_linear(s, r, &format!("{name}.{proj}"), d, d)?;
    }
    // A key bias only shifts each query's scores by a constant, which
    // softmax ignores; it would be a parameter with zero gradient.
    s.init(r, &format!("{name}.k.w"), &[d, d], Init::FanIn)
}

/// Multi-head attention output plus the per-head weight matrices
/// (`[rows(q), rows(kv)]`, rows summing to one).
pub fn attention_with_weights(
    t: &mut Tape,
    p: &Bound,
    name: &str,
    q_in: Var,
    kv_in: Var,
    heads: usize,
    causal: bool,
) -> Result<(Var, Vec<Var>)> {
    let q = linear(t, p, &format!("{name}.q"), q_in)?;
    let k = t.matmul(kv_in, p.var(&format!("{name}.k.w"))?)?;
    let v = linear(t, p, &format!("{name}.v"), kv_in)?;
    let (nq, d) = t.value(q).dims2()?;
    let nk = t.shape(k)[0];
    let dk = d / heads;
    let mask = causal.then(|| {
        let data = (0..nq * nk)
            .map(|i| if i % nk > i / nk { MASKED_SCORE } else { 0.0 })
            .collect();
        Array::from_parts(vec![nq, nk], data)
    });
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = t.slice_cols(q, h * dk, dk)?;
        let kh = t.slice_cols(k, h * dk, dk)?;
        let vh = t.slice_cols(v, h * dk, dk)?;
        let kt = t.transpose(kh)?;
        let scores = t.matmul(qh, kt)?;
        let mut scores = t.scale(scores, 1.0 / (dk as f64).sqrt());
        if let Some(m) = &mask {
            scores = t.add_const(scores, m)?;
        }
        let a = t.softmax(scores, 1)?;
        outs.push(t.matmul(a, vh)?);
        weights.push(a);
    }
    let joined = if heads == 1 { outs[0] } else { t.concat_cols(&outs)? };
    Ok((linear(t, p, &format!("{name}.o"), joined)?, weights))
}

pub fn attention(t: &mut Tape, p: &Bound, name: &str, q_in: Var, kv_in: Var, heads: usize, causal: bool) -> Result<Var> {
    Ok(attention_with_weights(t, p, name, q_in, kv_in, heads, causal)?.0)
}

pub fn init_mlp(s: &mut ParamStore, r: &SeedStream, name: &str, d: usize, ratio: usize) -> Result<()> {
    init_linear(s, r, &format!("{name}.fc1"), d, d * ratio)?;
    init_linear(s, r, &format!("{name}.fc2"), d * ratio, d)
}

pub fn mlp(t: &mut Tape, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let h = linear(t, p, &format!("{name}.fc1"), x)?;
    let h = t.gelu(h);
    linear(t, p, &format!("{name}.fc2"), h)
}

/// Shape of a pre-norm transformer block.
#[derive(Clone, Copy, Debug)]
pub struct BlockSpec {
    pub d: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub eps: f64,
    /// Adds a cross-attention sublayer between self-attention and MLP.
    pub cross: bool,
    /// Scales each residual branch by a learned per-channel vector
    /// initialised to zero, so the block starts as the identity.
    pub layer_scale: bool,
}

pub fn init_block(s: &mut ParamStore, r: &SeedStream, name: &str, spec: BlockSpec) -> Result<()> {
    init_layer_norm(s, r, &format!("{name}.ln1"), spec.d)?;
    init_attention(s, r, &format!("{name}.attn"), spec.d)?;
    if spec.cross {
        init_layer_norm(s, r, &format!("{name}.ln_x"), spec.d)?;
        init_attention(s, r, &format!("{name}.xattn"), spec.d)?;
    }
    init_layer_norm(s, r, &format!("{name}.ln2"), spec.d)?;
    init_mlp(s, r, &format!("{name}.mlp"), spec.d, spec.mlp_ratio)?;
    if spec.layer_scale {
        s.init(r, &format!("{name}.scale1"), &[spec.d], Init::Zeros)?;
        s.init(r, &format!("{name}.scale2"), &[spec.d], Init::Zeros)?;
    }
    Ok(())
}

/// `x + Attn(LN x) [+ XAttn(LN x, memory)] + MLP(LN x)`, each residual
/// applied in sequence.
pub fn block(
    t: &mut Tape,
    p: &Bound,
    name: &str,
    spec: BlockSpec,
    x: Var,
    causal: bool,
    memory: Option<Var>,
) -> Result<Var> {
    let h = layer_norm(t, p, &format!("{name}.ln1"), x, spec.eps)?;
    let mut a = attention(t, p, &format!("{name}.attn"), h, h, spec.heads, causal)?;
    if spec.layer_scale {
        a = t.mul_row(a, p.var(&format!("{name}.scale1"))?)?;
    }
    let mut x = t.add(x, a)?;
    if spec.cross {
        if let Some(mem) = memory {
            let h = layer_norm(t, p, &format!("{name}.ln_x"), x, spec.eps)?;
            let c = attention(t, p, &format!("{name}.xattn"), h, mem, spec.heads, false)?;
            x = t.add(x, c)?;
        }
    }
    let h = layer_norm(t, p, &format!("{name}.ln2"), x, spec.eps)?;
    let mut m = mlp(t, p, &format!("{name}.mlp"), h)?;
    if spec.layer_scale {
        m = t.mul_row(m, p.var(&format!("{name}.scale2"))?)?;
    }
    t.add(x, m)
}
