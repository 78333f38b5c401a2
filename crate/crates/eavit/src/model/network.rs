//! Patch embedding, encoder stack and classification head wiring.

use super::attention::{multi_head_external, self_attention};
use super::{AttnIdx, EavitModel, LN_EPS};
use crate::dsp::MelImage;
use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Shape, TensorId, TensorResult};

/// Graph handles for every model parameter, in the canonical order. One
/// binding belongs to exactly one graph.
pub struct Bound {
    ids: Vec<TensorId>,
}

impl Bound {
    pub fn id(&self, index: usize) -> TensorId {
        self.ids[index]
    }
}

impl<T: Element> EavitModel<T> {
    /// Registers every parameter with `graph` as a shared leaf. Pass
    /// `trainable = false` for inference-only passes to skip gradient
    /// bookkeeping.
    pub fn bind(&self, graph: &mut Graph<T>, trainable: bool) -> TensorResult<Bound> {
        let mut ids = Vec::with_capacity(self.params.len());
        for p in &self.params {
            ids.push(graph.leaf_shared(p.data.clone(), p.shape.clone(), trainable)?);
        }
        Ok(Bound { ids })
    }

    /// Splits an image into non-overlapping patches, row-major over the
    /// patch grid and within each patch, with pixels rescaled to [0, 1].
    /// Returns a `[n_patches x patch_dim]` row-major buffer.
    pub fn patchify(&self, image: &MelImage) -> Result<Vec<T>> {
        let cfg = &self.config;
        if image.width != cfg.image_size || image.height != cfg.image_size {
            return Err(Error::Config(format!(
                "image is {}x{} but the model expects {}x{}",
                image.width, image.height, cfg.image_size, cfg.image_size
            )));
        }
        let p = cfg.patch_size;
        let per_side = cfg.image_size / p;
        let scale = T::from_f64c(1.0 / 255.0);
        let mut out = Vec::with_capacity(cfg.n_patches() * cfg.patch_dim());
        for gy in 0..per_side {
            for gx in 0..per_side {
                for py in 0..p {
                    for px in 0..p {
                        let pixel = image.pixels[(gy * p + py) * cfg.image_size + (gx * p + px)];
                        let v = T::from_f64c(pixel as f64) * scale;
                        for _ in 0..cfg.channels {
                            out.push(v);
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Full forward pass from an image to class logits (`[1 x classes]`).
    pub fn forward_image(
        &self,
        graph: &mut Graph<T>,
        bound: &Bound,
        image: &MelImage,
    ) -> Result<TensorId> {
        let patches = self.patchify(image)?;
        Ok(self.forward_patches(graph, bound, patches)?)
    }

    /// Forward pass from a pre-patchified `[n_patches x patch_dim]` buffer.
    pub fn forward_patches(
        &self,
        graph: &mut Graph<T>,
        bound: &Bound,
        patches: Vec<T>,
    ) -> TensorResult<TensorId> {
        let cfg = &self.config;
        let lay = &self.layout;
        let x = graph.leaf(
            patches,
            Shape::matrix(cfg.n_patches(), cfg.patch_dim()),
            false,
        )?;
        let proj = graph.matmul(x, bound.id(lay.patch_embed))?;
        let with_class = graph.concat_rows(&[bound.id(lay.class_token), proj])?;
        let mut z = graph.add(with_class, bound.id(lay.pos_embed))?;

        let eps = T::from_f64c(LN_EPS);
        for layer in &lay.layers {
            let normed =
                graph.layer_norm(z, bound.id(layer.ln1.0), bound.id(layer.ln1.1), eps)?;
            let attended = match &layer.attn {
                AttnIdx::External { mk, mv, wo } => multi_head_external(
                    graph,
                    normed,
                    bound.id(*mk),
                    bound.id(*mv),
                    bound.id(*wo),
                    cfg.heads,
                )?,
                AttnIdx::SelfAttention { wq, wk, wv, wo } => self_attention(
                    graph,
                    normed,
                    bound.id(*wq),
                    bound.id(*wk),
                    bound.id(*wv),
                    bound.id(*wo),
                    cfg.heads,
                )?,
            };
            z = graph.add(z, attended)?;

            let normed =
                graph.layer_norm(z, bound.id(layer.ln2.0), bound.id(layer.ln2.1), eps)?;
            let (w1, b1, w2, b2) = layer.mlp;
            let hidden = graph.matmul(normed, bound.id(w1))?;
            let hidden = graph.add_row(hidden, bound.id(b1))?;
            let hidden = graph.gelu(hidden)?;
            let mlp_out = graph.matmul(hidden, bound.id(w2))?;
            let mlp_out = graph.add_row(mlp_out, bound.id(b2))?;
            z = graph.add(z, mlp_out)?;
        }

        let class_row = graph.slice_rows(z, 0, 1)?;
        let mut y = graph.layer_norm(
            class_row,
            bound.id(lay.final_norm.0),
            bound.id(lay.final_norm.1),
            eps,
        )?;
        let last = lay.head.len() - 1;
        for (i, &(w, b)) in lay.head.iter().enumerate() {
            y = graph.matmul(y, bound.id(w))?;
            y = graph.add_row(y, bound.id(b))?;
            if i != last {
                y = graph.gelu(y)?;
            }
        }
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AttentionKind, ModelConfig};
    use crate::tensor::grad_check_with;
    use std::sync::Arc;

    fn gradient_image(size: usize) -> MelImage {
        let pixels = (0..size * size).map(|i| (i % 251) as u8).collect();
        MelImage { width: size, height: size, pixels }
    }

    #[test]
    fn patchify_produces_row_major_patches_in_grid_order() {
        let model = EavitModel::<f64>::init(ModelConfig::tiny(), 1).unwrap();
        let img = gradient_image(16);
        let patches = model.patchify(&img).unwrap();
        assert_eq!(patches.len(), 4 * 64);
        // Patch 3 is the bottom-right 8x8 block; its (py, px) entry must be
        // pixel (8 + py, 8 + px) rescaled.
        for py in 0..8 {
            for px in 0..8 {
                let expect = img.pixels[(8 + py) * 16 + (8 + px)] as f64 / 255.0;
                let got = patches[3 * 64 + py * 8 + px];
                assert!((got - expect).abs() < 1e-15);
            }
        }
        // Every pixel appears exactly once: sums must agree.
        let total: f64 = patches.iter().sum();
        let direct: f64 = img.pixels.iter().map(|&p| p as f64 / 255.0).sum();
        assert!((total - direct).abs() < 1e-9);
    }

    #[test]
    fn patchify_rejects_mismatched_image_sizes() {
        let model = EavitModel::<f32>::init(ModelConfig::tiny(), 1).unwrap();
        let img = gradient_image(32);
        assert!(model.patchify(&img).is_err());
    }

    #[test]
    fn forward_yields_one_logit_row_and_is_deterministic() {
        for attention in [AttentionKind::External, AttentionKind::SelfAttention] {
            let mut cfg = ModelConfig::tiny();
            cfg.attention = attention;
            let model = EavitModel::<f32>::init(cfg, 9).unwrap();
            let img = gradient_image(16);

            let run = || {
                let mut g = Graph::<f32>::new();
                let bound = model.bind(&mut g, false).unwrap();
                let logits = model.forward_image(&mut g, &bound, &img).unwrap();
                assert_eq!(g.shape(logits), &Shape::matrix(1, 3));
                g.value(logits).to_vec()
            };
            let a = run();
            let b = run();
            assert_eq!(a, b);
            assert!(a.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn zeroed_residual_projections_leave_tokens_untouched() {
        // With out-projections and second MLP linears zeroed, each block adds
        // exactly zero, so the trunk output equals the embedded input.
        let mut model = EavitModel::<f64>::init(ModelConfig::tiny(), 4).unwrap();
        for p in &mut model.params {
            if p.name.ends_with("out_proj") || p.name.contains("mlp2") {
                p.data = Arc::new(vec![0.0; p.shape.numel()]);
            }
        }
        let img = gradient_image(16);
        let patches = model.patchify(&img).unwrap();

        let mut g = Graph::<f64>::new();
        let bound = model.bind(&mut g, false).unwrap();
        let x = g
            .leaf(patches.clone(), Shape::matrix(4, 64), false)
            .unwrap();
        let proj = g.matmul(x, bound.id(model.layout.patch_embed)).unwrap();
        let embedded = g
            .concat_rows(&[bound.id(model.layout.class_token), proj])
            .unwrap();
        let embedded = g.add(embedded, bound.id(model.layout.pos_embed)).unwrap();

        // Re-run the full forward and compare its pre-head trunk by
        // reconstructing: with zero residuals the trunk must equal embedded,
        // so the logits must match a head applied to the embedded class row.
        let class_row = g.slice_rows(embedded, 0, 1).unwrap();
        let eps = 1e-5;
        let mut y = g
            .layer_norm(
                class_row,
                bound.id(model.layout.final_norm.0),
                bound.id(model.layout.final_norm.1),
                eps,
            )
            .unwrap();
        let last = model.layout.head.len() - 1;
        for (i, &(w, b)) in model.layout.head.iter().enumerate() {
            y = g.matmul(y, bound.id(w)).unwrap();
            y = g.add_row(y, bound.id(b)).unwrap();
            if i != last {
                y = g.gelu(y).unwrap();
            }
        }
        let expect = g.value(y).to_vec();

        let mut g2 = Graph::<f64>::new();
        let bound2 = model.bind(&mut g2, false).unwrap();
        let logits = model.forward_patches(&mut g2, &bound2, patches).unwrap();
        assert_eq!(g2.value(logits), &expect[..]);
    }

    #[test]
    fn permuting_patches_does_not_change_logits_when_positions_are_zero() {
        // The initial positional table is all zeros, so token order only
        // enters through it; shuffling patch rows must keep logits equal.
        let model = EavitModel::<f64>::init(ModelConfig::tiny(), 12).unwrap();
        let img = gradient_image(16);
        let patches = model.patchify(&img).unwrap();
        let mut permuted = vec![0.0; patches.len()];
        let order = [2usize, 0, 3, 1];
        for (dst, &src) in order.iter().enumerate() {
            permuted[dst * 64..(dst + 1) * 64].copy_from_slice(&patches[src * 64..(src + 1) * 64]);
        }

        let logits_of = |p: Vec<f64>| {
            let mut g = Graph::<f64>::new();
            let bound = model.bind(&mut g, false).unwrap();
            let id = model.forward_patches(&mut g, &bound, p).unwrap();
            g.value(id).to_vec()
        };
        let a = logits_of(patches);
        let b = logits_of(permuted);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }

    #[test]
    fn encoder_block_gradients_match_finite_differences() {
        // One full residual block (norm, external attention, norm, MLP) with
        // a cross-entropy readout, differentiated with respect to the input
        // tokens.
        let (tokens, dim, heads, slots, hidden) = (5, 8, 2, 3, 6);
        let dh = dim / heads;
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let mut rv = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect() };

        let x0 = rv(tokens * dim);
        let mk = rv(slots * dh);
        let mv = rv(slots * dh);
        let wo = rv(dim * dim);
        let w1 = rv(dim * hidden);
        let b1 = rv(hidden);
        let w2 = rv(hidden * dim);
        let b2 = rv(dim);
        let gain = vec![1.0; dim];
        let bias = vec![0.0; dim];

        let f = |g: &mut Graph<f64>, x: TensorId| -> TensorResult<TensorId> {
            let gn = g.leaf(gain.clone(), Shape::vector(dim), false)?;
            let bn = g.leaf(bias.clone(), Shape::vector(dim), false)?;
            let mkid = g.leaf(mk.clone(), Shape::matrix(slots, dh), false)?;
            let mvid = g.leaf(mv.clone(), Shape::matrix(slots, dh), false)?;
            let woid = g.leaf(wo.clone(), Shape::matrix(dim, dim), false)?;
            let w1id = g.leaf(w1.clone(), Shape::matrix(dim, hidden), false)?;
            let b1id = g.leaf(b1.clone(), Shape::vector(hidden), false)?;
            let w2id = g.leaf(w2.clone(), Shape::matrix(hidden, dim), false)?;
            let b2id = g.leaf(b2.clone(), Shape::vector(dim), false)?;

            let n1 = g.layer_norm(x, gn, bn, 1e-5)?;
            let att = multi_head_external(g, n1, mkid, mvid, woid, heads)?;
            let z = g.add(x, att)?;
            let n2 = g.layer_norm(z, gn, bn, 1e-5)?;
            let h = g.matmul(n2, w1id)?;
            let h = g.add_row(h, b1id)?;
            let h = g.gelu(h)?;
            let m = g.matmul(h, w2id)?;
            let m = g.add_row(m, b2id)?;
            let z = g.add(z, m)?;
            let row = g.slice_rows(z, 0, 1)?;
            g.cross_entropy(row, 1)
        };

        let worst =
            grad_check_with(&f, &x0, &Shape::matrix(tokens, dim), 1e-5, 1e-7).unwrap();
        assert!(worst < 1e-5, "worst relative error {worst}");
    }
}
