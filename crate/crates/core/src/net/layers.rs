//! Layers built on [`Graph`]: dense maps, the residual block, time embedding,
//! multiplication fusion and the frame-pooling clue encoder.
//!
//! Sequences are `L x C` matrices with one row per frame.

use crate::error::Result;
use crate::net::graph::{Graph, NodeId};
use crate::net::params::{Init, Mat, ParamId, ParamStore};
use crate::rng::Rng;
use crate::scalar::Real;

/// Affine map `x W + b` applied row-wise.
#[derive(Clone, Debug)]
pub struct Dense {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Dense {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        n_in: usize,
        n_out: usize,
        bias: bool,
        rng: &mut Rng,
    ) -> Self {
        let bound = 1.0 / (n_in.max(1) as f64).sqrt();
        let w = store.add(&format!("{name}.w"), n_in, n_out, Init::FanIn(1.0), rng);
        let b = bias.then(|| store.add(&format!("{name}.b"), 1, n_out, Init::Uniform(bound), rng));
        Self { w, b }
    }

    /// Zero-initialized map (weights and bias), used for residual outputs.
    pub fn zeros<T: Real>(store: &mut ParamStore<T>, name: &str, n_in: usize, n_out: usize, rng: &mut Rng) -> Self {
        let w = store.add(&format!("{name}.w"), n_in, n_out, Init::Zeros, rng);
        let b = Some(store.add(&format!("{name}.b"), 1, n_out, Init::Zeros, rng));
        Self { w, b }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: NodeId) -> Result<NodeId> {
        let w = g.param(self.w);
        let y = g.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = g.param(b);
                g.add_row_vec(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Sinusoidal embedding `[sin(t w_k), cos(t w_k)]` with `dim / 2` frequencies
/// spaced geometrically on `[1, max_freq]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeEmbedding {
    pub dim: usize,
    pub max_freq: f64,
}

impl Default for TimeEmbedding {
    fn default() -> Self {
        Self { dim: 16, max_freq: 64.0 }
    }
}

impl TimeEmbedding {
    pub fn new(dim: usize) -> Self {
        Self { dim, ..Self::default() }
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let n = self.dim / 2;
        let top = self.max_freq.ln();
        (0..n)
            .map(|k| {
                let frac = if n > 1 { k as f64 / (n - 1) as f64 } else { 0.0 };
                (top * frac).exp()
            })
            .collect()
    }

    pub fn embed<T: Real>(&self, t: T) -> Mat<T> {
        let freqs = self.frequencies();
        let mut m = Mat::zeros(1, self.dim);
        let n = freqs.len();
        for (k, w) in freqs.into_iter().enumerate() {
            let a = t * T::lit(w);
            m.data[k] = a.sin();
            m.data[n + k] = a.cos();
        }
        m
    }
}

/// Pre-activation residual block:
/// `h + l2(silu(l1(dwconv(silu(h))) + proj(temb)))`, with `l2` zero-initialized
/// so a fresh block is the identity.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub kernel: ParamId,
    pub l1: Dense,
    pub l2: Dense,
    pub time_proj: Option<Dense>,
}

impl ResBlock {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        width: usize,
        time_dim: Option<usize>,
        rng: &mut Rng,
    ) -> Self {
        let kernel = store.add(&format!("{name}.dw"), 3, width, Init::FanIn(1.0), rng);
        let l1 = Dense::new(store, &format!("{name}.l1"), width, width, true, rng);
        let time_proj = time_dim.map(|d| Dense::new(store, &format!("{name}.t"), d, width, true, rng));
        let l2 = Dense::zeros(store, &format!("{name}.l2"), width, width, rng);
        Self {
            kernel,
            l1,
            l2,
            time_proj,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, h: NodeId, temb: Option<NodeId>) -> Result<NodeId> {
        let a = g.silu(h);
        let k = g.param(self.kernel);
        let a = g.dwconv_time(a, k)?;
        let mut a = self.l1.forward(g, a)?;
        if let (Some(proj), Some(te)) = (&self.time_proj, temb) {
            let tp = proj.forward(g, te)?;
            a = g.add_row_vec(a, tp)?;
        }
        let a = g.silu(a);
        let a = self.l2.forward(g, a)?;
        g.add(h, a)
    }
}

/// Multiplication fusion: every row of `h` times `e W` (no bias).
pub fn fuse<T: Real>(g: &mut Graph<'_, T>, h: NodeId, proj: ParamId, e: NodeId) -> Result<NodeId> {
    let w = g.param(proj);
    let v = g.matmul(e, w)?;
    g.mul_row_vec(h, v)
}

/// Per-frame two-layer encoder followed by average pooling over frames.
#[derive(Clone, Debug)]
pub struct ClueEncoder {
    pub l1: Dense,
    pub l2: Dense,
    pub embed_dim: usize,
}

impl ClueEncoder {
    pub fn new<T: Real>(store: &mut ParamStore<T>, freqs: usize, width: usize, embed_dim: usize, rng: &mut Rng) -> Self {
        Self {
            l1: Dense::new(store, "clue.l1", 3 * freqs, width, true, rng),
            l2: Dense::new(store, "clue.l2", width, embed_dim, true, rng),
            embed_dim,
        }
    }

    /// `rows` holds spectral frames `[re | im]`; returns a `1 x E` embedding.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, rows: NodeId) -> Result<NodeId> {
        let f = g.spec_features(rows)?;
        let h = self.l1.forward(g, f)?;
        let h = g.silu(h);
        let h = self.l2.forward(g, h)?;
        g.row_mean(h)
    }
}

/// Shape of a [`Backbone`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BackboneSpec {
    pub freqs: usize,
    pub width: usize,
    pub blocks: usize,
    /// Number of spectral inputs (each `L x 2F`).
    pub n_in: usize,
    /// Number of complex masks produced (each `L x 2F`).
    pub n_out: usize,
    pub time_dim: Option<usize>,
    /// Clue embedding size; `None` disables fusion.
    pub embed_dim: Option<usize>,
}

/// Residual stack over frames with multiplication fusion after the first block.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub spec: BackboneSpec,
    pub input: Dense,
    pub blocks: Vec<ResBlock>,
    pub fusion: Option<ParamId>,
    pub output: Dense,
}

impl Backbone {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, spec: BackboneSpec, rng: &mut Rng) -> Self {
        let w = spec.width;
        let input = Dense::new(store, &format!("{name}.in"), spec.n_in * 3 * spec.freqs, w, true, rng);
        let blocks = (0..spec.blocks)
            .map(|i| ResBlock::new(store, &format!("{name}.block{i}"), w, spec.time_dim, rng))
            .collect();
        let fusion = spec
            .embed_dim
            .map(|e| store.add(&format!("{name}.fuse"), e, w, Init::FanIn(1.0), rng));
        let output = Dense::zeros(store, &format!("{name}.out"), w, spec.n_out * 2 * spec.freqs, rng);
        Self {
            spec,
            input,
            blocks,
            fusion,
            output,
        }
    }

    /// Returns the `L x n_out*2F` mask rows.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        inputs: &[NodeId],
        clue: Option<NodeId>,
        temb: Option<NodeId>,
    ) -> Result<NodeId> {
        let feats = inputs
            .iter()
            .map(|&x| g.spec_features(x))
            .collect::<Result<Vec<_>>>()?;
        let x = if feats.len() == 1 { feats[0] } else { g.concat(&feats)? };
        let mut h = self.input.forward(g, x)?;
        for (i, block) in self.blocks.iter().enumerate() {
            h = block.forward(g, h, temb)?;
            if i == 0 {
                if let (Some(proj), Some(e)) = (self.fusion, clue) {
                    h = fuse(g, h, proj, e)?;
                }
            }
        }
        let h = g.silu(h);
        self.output.forward(g, h)
    }

    /// Splits backbone output into its `n_out` complex masks.
    pub fn masks<T: Real>(&self, g: &mut Graph<'_, T>, out: NodeId) -> Result<Vec<NodeId>> {
        let w = 2 * self.spec.freqs;
        (0..self.spec.n_out).map(|k| g.slice_cols(out, k * w, w)).collect()
    }

    pub fn describe(&self, name: &str) -> String {
        let s = &self.spec;
        format!(
            "{name}: inputs={} masks={} freqs={} width={} blocks={} time_dim={} fusion_dim={}\n",
            s.n_in,
            s.n_out,
            s.freqs,
            s.width,
            s.blocks,
            s.time_dim.map_or("none".into(), |d| d.to_string()),
            s.embed_dim.map_or("none".into(), |d| d.to_string()),
        )
    }
}
