//! Attention blocks built from graph operations: the external variant
//! attends to learned memory matrices, the baseline to the tokens
//! themselves.

use crate::tensor::{Element, Graph, TensorId, TensorResult};

/// Single-head external attention. Scores the tokens against the key
/// memory, applies the double normalization (softmax down the token axis,
/// then L1 across memory slots) and mixes rows of the value memory.
///
/// `f` is `[tokens x head_dim]`, `mk` and `mv` are `[slots x head_dim]`;
/// the result is `[tokens x head_dim]`.
pub fn external_attention<T: Element>(
    g: &mut Graph<T>,
    f: TensorId,
    mk: TensorId,
    mv: TensorId,
) -> TensorResult<TensorId> {
    let mkt = g.transpose(mk)?;
    let scores = g.matmul(f, mkt)?;
    let soft = g.softmax_axis(scores, 0)?;
    let attn = g.l1_normalize_axis(soft, 1)?;
    g.matmul(attn, mv)
}

/// Multi-head external attention. Every head reads its own slice of the
/// input but all heads of a layer share one key memory and one value
/// memory; head outputs are concatenated and mixed by `wo`.
pub fn multi_head_external<T: Element>(
    g: &mut Graph<T>,
    f: TensorId,
    mk: TensorId,
    mv: TensorId,
    wo: TensorId,
    heads: usize,
) -> TensorResult<TensorId> {
    let dim = g.shape(f).cols();
    let head_dim = dim / heads;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let fh = g.slice_cols(f, h * head_dim, head_dim)?;
        outs.push(external_attention(g, fh, mk, mv)?);
    }
    let cat = g.concat_cols(&outs)?;
    g.matmul(cat, wo)
}

/// Multi-head scaled dot-product self-attention, the quadratic baseline.
/// Projections carry no bias; attention weights are a per-query softmax
/// over all tokens.
pub fn self_attention<T: Element>(
    g: &mut Graph<T>,
    f: TensorId,
    wq: TensorId,
    wk: TensorId,
    wv: TensorId,
    wo: TensorId,
    heads: usize,
) -> TensorResult<TensorId> {
    let dim = g.shape(f).cols();
    let head_dim = dim / heads;
    let scale = T::from_f64c(1.0 / (head_dim as f64).sqrt());
    let q = g.matmul(f, wq)?;
    let k = g.matmul(f, wk)?;
    let v = g.matmul(f, wv)?;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * head_dim, head_dim)?;
        let kh = g.slice_cols(k, h * head_dim, head_dim)?;
        let vh = g.slice_cols(v, h * head_dim, head_dim)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scaled = g.mul_scalar(scores, scale)?;
        let attn = g.softmax_axis(scaled, 1)?;
        outs.push(g.matmul(attn, vh)?);
    }
    let cat = g.concat_cols(&outs)?;
    g.matmul(cat, wo)
}
