//! Vision-transformer classifier over spectrogram images with external
//! attention (learned memories shared across heads) or a conventional
//! self-attention baseline.

mod attention;
mod network;

pub use attention::{external_attention, multi_head_external, self_attention};
pub use network::Bound;

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::sync::Arc;

/// Layer normalization epsilon used everywhere in the network.
pub const LN_EPS: f64 = 1e-5;
/// Standard deviation of the truncated-normal weight initialization.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionKind {
    /// Double-normalized attention against learned memory matrices; cost is
    /// linear in token count.
    External,
    /// Conventional scaled dot-product self-attention; cost is quadratic in
    /// token count.
    SelfAttention,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Square input image extent in pixels.
    pub image_size: usize,
    pub patch_size: usize,
    pub channels: usize,
    /// Token embedding width D.
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    /// Memory slot count S for external attention.
    pub memory_size: usize,
    /// Hidden width of the per-block MLP.
    pub mlp_hidden: usize,
    /// Hidden widths of the classification head.
    pub head_hidden: Vec<usize>,
    pub classes: usize,
    pub attention: AttentionKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: 256,
            patch_size: 64,
            channels: 1,
            dim: 32,
            layers: 16,
            heads: 8,
            memory_size: 64,
            mlp_hidden: 64,
            head_hidden: vec![2048, 1024],
            classes: 10,
            attention: AttentionKind::External,
        }
    }
}

impl ModelConfig {
    /// Small configuration for desk-scale experiments: 64 px input, 4 layers
    /// and a slimmer head, keeping the default width and head count.
    pub fn reduced() -> Self {
        ModelConfig {
            image_size: 64,
            patch_size: 16,
            layers: 4,
            head_hidden: vec![256, 128],
            ..ModelConfig::default()
        }
    }

    /// Minimal configuration used by exhaustive gradient verification.
    pub fn tiny() -> Self {
        ModelConfig {
            image_size: 16,
            patch_size: 8,
            channels: 1,
            dim: 8,
            layers: 2,
            heads: 2,
            memory_size: 3,
            mlp_hidden: 16,
            head_hidden: vec![8],
            classes: 3,
            attention: AttentionKind::External,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("image_size", self.image_size),
            ("patch_size", self.patch_size),
            ("channels", self.channels),
            ("projection_dim", self.dim),
            ("layers", self.layers),
            ("heads", self.heads),
            ("memory_size", self.memory_size),
            ("mlp_hidden", self.mlp_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.classes < 2 {
            return Err(Error::Config("classes must be at least 2".into()));
        }
        if !self.image_size.is_multiple_of(self.patch_size) {
            return Err(Error::Config(format!(
                "patch_size {} does not divide image_size {}",
                self.patch_size, self.image_size
            )));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "heads {} does not divide projection_dim {}",
                self.heads, self.dim
            )));
        }
        if !(self.channels == 1 || self.channels == 3) {
            return Err(Error::Config(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        Ok(())
    }

    pub fn n_patches(&self) -> usize {
        let per_side = self.image_size / self.patch_size;
        per_side * per_side
    }

    /// Token count including the class token.
    pub fn tokens(&self) -> usize {
        self.n_patches() + 1
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// Closed-form trainable parameter count.
    pub fn param_count(&self) -> usize {
        let d = self.dim;
        let attn = match self.attention {
            AttentionKind::External => 2 * self.memory_size * self.head_dim() + d * d,
            AttentionKind::SelfAttention => 4 * d * d,
        };
        let per_layer = attn
            + 2 * (2 * d) // two layer norms
            + d * self.mlp_hidden + self.mlp_hidden
            + self.mlp_hidden * d + d;
        let mut head = 0;
        let mut prev = d;
        for &h in &self.head_hidden {
            head += prev * h + h;
            prev = h;
        }
        head += prev * self.classes + self.classes;
        self.patch_dim() * d // patch embedding
            + d // class token
            + self.tokens() * d // positional table
            + self.layers * per_layer
            + 2 * d // final layer norm
            + head
    }
}

/// One named parameter tensor. Data sits behind an `Arc` so per-sample
/// graphs can bind it without copying; the optimizer takes the sole
/// reference back once every graph is dropped.
#[derive(Debug, Clone)]
pub struct Param<T: Element> {
    pub name: String,
    pub shape: Shape,
    pub data: Arc<Vec<T>>,
}

/// Index map from the flat parameter list to the network structure.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub patch_embed: usize,
    pub class_token: usize,
    pub pos_embed: usize,
    pub layers: Vec<LayerIdx>,
    pub final_norm: (usize, usize),
    /// (weights, bias) per head linear, output layer last.
    pub head: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub(crate) struct LayerIdx {
    pub ln1: (usize, usize),
    pub attn: AttnIdx,
    pub ln2: (usize, usize),
    pub mlp: (usize, usize, usize, usize),
}

#[derive(Debug, Clone)]
pub(crate) enum AttnIdx {
    External { mk: usize, mv: usize, wo: usize },
    SelfAttention { wq: usize, wk: usize, wv: usize, wo: usize },
}

pub struct EavitModel<T: Element> {
    pub config: ModelConfig,
    pub params: Vec<Param<T>>,
    pub(crate) layout: Layout,
}

/// Builds the parameter list in declared order; the same order backs
/// checkpoints, gradient accumulation and the optimizer state.
struct Builder<T: Element> {
    params: Vec<Param<T>>,
    rng: ChaCha8Rng,
    normal: Normal<f64>,
}

impl<T: Element> Builder<T> {
    fn new(seed: u64) -> Self {
        Builder {
            params: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal: Normal::new(0.0, INIT_STD).expect("valid std"),
        }
    }

    /// Truncated normal: rejects draws beyond two standard deviations.
    fn trunc_normal(&mut self) -> T {
        loop {
            let v = self.normal.sample(&mut self.rng);
            if v.abs() <= 2.0 * INIT_STD {
                return T::from_f64c(v);
            }
        }
    }

    fn weight(&mut self, name: String, shape: Shape) -> usize {
        let data = (0..shape.numel()).map(|_| self.trunc_normal()).collect();
        self.push(name, shape, data)
    }

    fn fill(&mut self, name: String, shape: Shape, v: T) -> usize {
        let data = vec![v; shape.numel()];
        self.push(name, shape, data)
    }

    fn push(&mut self, name: String, shape: Shape, data: Vec<T>) -> usize {
        self.params.push(Param { name, shape, data: Arc::new(data) });
        self.params.len() - 1
    }

    fn norm(&mut self, name: &str, d: usize) -> (usize, usize) {
        let g = self.fill(format!("{name}.gain"), Shape::vector(d), T::one());
        let b = self.fill(format!("{name}.bias"), Shape::vector(d), T::zero());
        (g, b)
    }

    fn linear(&mut self, name: &str, rows: usize, cols: usize) -> (usize, usize) {
        let w = self.weight(format!("{name}.weight"), Shape::matrix(rows, cols));
        let b = self.fill(format!("{name}.bias"), Shape::vector(cols), T::zero());
        (w, b)
    }
}

impl<T: Element> EavitModel<T> {
    /// Fresh model with truncated-normal weights, unit layer-norm gains and
    /// zeroed class token, positional table and biases.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let mut b = Builder::<T>::new(seed);

        let patch_embed =
            b.weight("patch_embed".into(), Shape::matrix(config.patch_dim(), d));
        let class_token = b.fill("class_token".into(), Shape::matrix(1, d), T::zero());
        let pos_embed =
            b.fill("pos_embed".into(), Shape::matrix(config.tokens(), d), T::zero());

        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let ln1 = b.norm(&format!("layer{l}.norm1"), d);
            let attn = match config.attention {
                AttentionKind::External => AttnIdx::External {
                    mk: b.weight(
                        format!("layer{l}.memory_k"),
                        Shape::matrix(config.memory_size, config.head_dim()),
                    ),
                    mv: b.weight(
                        format!("layer{l}.memory_v"),
                        Shape::matrix(config.memory_size, config.head_dim()),
                    ),
                    wo: b.weight(format!("layer{l}.out_proj"), Shape::matrix(d, d)),
                },
                AttentionKind::SelfAttention => AttnIdx::SelfAttention {
                    wq: b.weight(format!("layer{l}.query"), Shape::matrix(d, d)),
                    wk: b.weight(format!("layer{l}.key"), Shape::matrix(d, d)),
                    wv: b.weight(format!("layer{l}.value"), Shape::matrix(d, d)),
                    wo: b.weight(format!("layer{l}.out_proj"), Shape::matrix(d, d)),
                },
            };
            let ln2 = b.norm(&format!("layer{l}.norm2"), d);
            let (w1, b1) = b.linear(&format!("layer{l}.mlp1"), d, config.mlp_hidden);
            let (w2, b2) = b.linear(&format!("layer{l}.mlp2"), config.mlp_hidden, d);
            layers.push(LayerIdx { ln1, attn, ln2, mlp: (w1, b1, w2, b2) });
        }

        let final_norm = b.norm("final_norm", d);
        let mut head = Vec::new();
        let mut prev = d;
        for (i, &h) in config.head_hidden.iter().enumerate() {
            head.push(b.linear(&format!("head{i}"), prev, h));
            prev = h;
        }
        head.push(b.linear("head_out", prev, config.classes));

        let layout = Layout { patch_embed, class_token, pos_embed, layers, final_norm, head };
        let model = EavitModel { config, params: b.params, layout };
        debug_assert_eq!(
            model.params.iter().map(|p| p.shape.numel()).sum::<usize>(),
            model.config.param_count()
        );
        Ok(model)
    }

    /// Total trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.shape.numel()).sum()
    }

    /// Mutable access to one parameter buffer. Callers must have dropped
    /// every graph bound to this model first; the optimizer relies on this
    /// single-writer contract.
    pub fn param_data_mut(&mut self, index: usize) -> &mut Vec<T> {
        Arc::get_mut(&mut self.params[index].data)
            .expect("parameter still referenced by a live graph")
    }
}
