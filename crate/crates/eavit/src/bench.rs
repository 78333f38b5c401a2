//! Wall-clock timing of the two attention variants, shared by the
//! `bench-attn` subcommand and the scaling checks. External attention does
//! a constant amount of work per token; self-attention grows with the
//! square of the token count.

use crate::model::{multi_head_external, self_attention, AttentionKind};
use crate::tensor::{Graph, Shape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchPoint {
    pub kind: AttentionKind,
    pub tokens: usize,
    pub median_ms: f64,
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Median wall-clock milliseconds for one forward attention pass over
/// `tokens` tokens, out of `runs` timed repetitions with fresh graphs.
pub fn median_attention_ms(
    kind: AttentionKind,
    tokens: usize,
    dim: usize,
    heads: usize,
    memory_size: usize,
    runs: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let head_dim = dim / heads;
    let f = rand_vec(&mut rng, tokens * dim);
    let mk = rand_vec(&mut rng, memory_size * head_dim);
    let mv = rand_vec(&mut rng, memory_size * head_dim);
    let wq = rand_vec(&mut rng, dim * dim);
    let wk = rand_vec(&mut rng, dim * dim);
    let wv = rand_vec(&mut rng, dim * dim);
    let wo = rand_vec(&mut rng, dim * dim);

    let mut samples = Vec::with_capacity(runs.max(1));
    for _ in 0..runs.max(1) {
        let mut g = Graph::<f32>::new();
        let fid = g.leaf(f.clone(), Shape::matrix(tokens, dim), false).expect("shape");
        let woid = g.leaf(wo.clone(), Shape::matrix(dim, dim), false).expect("shape");
        let start = Instant::now();
        let out = match kind {
            AttentionKind::External => {
                let mkid = g
                    .leaf(mk.clone(), Shape::matrix(memory_size, head_dim), false)
                    .expect("shape");
                let mvid = g
                    .leaf(mv.clone(), Shape::matrix(memory_size, head_dim), false)
                    .expect("shape");
                multi_head_external(&mut g, fid, mkid, mvid, woid, heads).expect("forward")
            }
            AttentionKind::SelfAttention => {
                let wqid = g.leaf(wq.clone(), Shape::matrix(dim, dim), false).expect("shape");
                let wkid = g.leaf(wk.clone(), Shape::matrix(dim, dim), false).expect("shape");
                let wvid = g.leaf(wv.clone(), Shape::matrix(dim, dim), false).expect("shape");
                self_attention(&mut g, fid, wqid, wkid, wvid, woid, heads).expect("forward")
            }
        };
        // Touch the output so the work cannot be considered dead.
        let checksum: f32 = g.value(out).iter().sum();
        let elapsed = start.elapsed().as_secs_f64() * 1e3;
        assert!(checksum.is_finite());
        samples.push(elapsed);
    }
    samples.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    samples[samples.len() / 2]
}

/// Times both attention kinds across the given token counts.
pub fn scan_token_counts(
    token_counts: &[usize],
    dim: usize,
    heads: usize,
    memory_size: usize,
    runs: usize,
    seed: u64,
) -> Vec<BenchPoint> {
    let mut out = Vec::new();
    for kind in [AttentionKind::External, AttentionKind::SelfAttention] {
        for &tokens in token_counts {
            out.push(BenchPoint {
                kind,
                tokens,
                median_ms: median_attention_ms(kind, tokens, dim, heads, memory_size, runs, seed),
            });
        }
    }
    out
}
