//! The bandsplit masking network: per-band embedding, a shared stack of
//! alternating time/band recurrent blocks, and detachable per-stem mask
//! decoders over overlapping bands.
//!
//! All learnable tensors live in one flat `f64` buffer addressed through a
//! [`Layout`] of named tensors. The encoder (embedding + recurrent stack)
//! occupies a contiguous prefix, which makes encoder freezing, decoder
//! attach/detach, and checkpointing straightforward.

pub mod layers;
mod net;

pub use net::{
    backward, embed_bands, estimate_masks, forward, recombine_masks, separate, separate_chunked,
    tf_model, ForwardCache, MaskSet,
};

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bands::BandSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub band_spec: BandSpec,
    /// Embedding width D.
    pub d_model: usize,
    /// Number of time/band recurrent block pairs.
    pub rnn_pairs: usize,
    /// Hidden units per recurrent direction; must equal 2 * d_model.
    pub rnn_hidden: usize,
    /// Hidden width of the mask-decoder MLPs (defaults to 4 * d_model).
    pub mlp_hidden: usize,
    pub stems: Vec<String>,
    pub channels: usize,
}

impl ModelConfig {
    pub fn new(band_spec: BandSpec, d_model: usize, rnn_pairs: usize, stems: Vec<String>) -> Self {
        Self {
            band_spec,
            d_model,
            rnn_pairs,
            rnn_hidden: 2 * d_model,
            mlp_hidden: 4 * d_model,
            stems,
            channels: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.band_spec.validate()?;
        if self.d_model == 0 || self.rnn_pairs == 0 || self.mlp_hidden == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.rnn_hidden != 2 * self.d_model {
            return Err(Error::Config(format!(
                "rnn_hidden must be 2 * d_model = {}, got {}",
                2 * self.d_model,
                self.rnn_hidden
            )));
        }
        if self.channels == 0 {
            return Err(Error::Config("channel count must be positive".into()));
        }
        if self.stems.is_empty() {
            return Err(Error::Config("at least one stem is required".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for s in &self.stems {
            if !seen.insert(s) {
                return Err(Error::Config(format!("duplicate stem name {s:?}")));
            }
        }
        Ok(())
    }

    fn stem_index(&self, stem: &str) -> Result<usize> {
        self.stems
            .iter()
            .position(|s| s == stem)
            .ok_or_else(|| Error::Config(format!("unknown stem {stem:?}")))
    }

    /// Packed real width of band `b`: real and imaginary parts of all
    /// channels and band bins, 2 * C * F_b.
    fn band_packed(&self, b: usize) -> usize {
        2 * self.channels * self.band_spec.band_width(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModuleTag {
    Embedding,
    TfModule,
    Decoder(usize),
}

#[derive(Debug, Clone)]
pub struct TensorMeta {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
    pub module: ModuleTag,
}

/// Tensor ids of one GRU direction.
#[derive(Debug, Clone, Copy)]
pub struct GruIds {
    pub w_ih: usize,
    pub w_hh: usize,
    pub b_ih: usize,
    pub b_hh: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct EmbedIds {
    pub norm_gain: usize,
    pub norm_bias: usize,
    pub w: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct BlockIds {
    pub norm_gain: usize,
    pub norm_bias: usize,
    pub fwd: GruIds,
    pub bwd: GruIds,
    pub proj_w: usize,
    pub proj_b: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct DecBandIds {
    pub norm_gain: usize,
    pub norm_bias: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// Named-tensor layout of all model parameters. Encoder tensors come
/// first; each decoder occupies its own contiguous region.
#[derive(Debug, Clone)]
pub struct Layout {
    pub metas: Vec<TensorMeta>,
    pub total_len: usize,
    pub encoder_len: usize,
    pub embed: Vec<EmbedIds>,
    pub blocks: Vec<BlockIds>,
    /// Per stem (config order): tensor ids per band, plus the flat data
    /// range of the whole decoder.
    pub decoders: Vec<(Vec<DecBandIds>, std::ops::Range<usize>)>,
}

struct LayoutBuilder {
    metas: Vec<TensorMeta>,
    cursor: usize,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, shape: Vec<usize>, module: ModuleTag) -> usize {
        let len = shape.iter().product();
        let meta = TensorMeta { name, shape, offset: self.cursor, len, module };
        self.cursor += len;
        self.metas.push(meta);
        self.metas.len() - 1
    }

    fn gru(&mut self, prefix: &str, input: usize, hidden: usize, module: ModuleTag) -> GruIds {
        GruIds {
            w_ih: self.push(format!("{prefix}.w_ih"), vec![3 * hidden, input], module),
            w_hh: self.push(format!("{prefix}.w_hh"), vec![3 * hidden, hidden], module),
            b_ih: self.push(format!("{prefix}.b_ih"), vec![3 * hidden], module),
            b_hh: self.push(format!("{prefix}.b_hh"), vec![3 * hidden], module),
        }
    }
}

impl Layout {
    pub fn build(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut b = LayoutBuilder { metas: Vec::new(), cursor: 0 };
        let d = config.d_model;
        let num_bands = config.band_spec.num_bands();

        let mut embed = Vec::with_capacity(num_bands);
        for band in 0..num_bands {
            let packed = config.band_packed(band);
            embed.push(EmbedIds {
                norm_gain: b.push(format!("emb.band{band}.norm.gain"), vec![packed], ModuleTag::Embedding),
                norm_bias: b.push(format!("emb.band{band}.norm.bias"), vec![packed], ModuleTag::Embedding),
                w: b.push(format!("emb.band{band}.affine.w"), vec![d, packed], ModuleTag::Embedding),
                b: b.push(format!("emb.band{band}.affine.b"), vec![d], ModuleTag::Embedding),
            });
        }

        let hidden = config.rnn_hidden;
        let mut blocks = Vec::with_capacity(2 * config.rnn_pairs);
        for blk in 0..2 * config.rnn_pairs {
            blocks.push(BlockIds {
                norm_gain: b.push(format!("tf.block{blk}.norm.gain"), vec![d], ModuleTag::TfModule),
                norm_bias: b.push(format!("tf.block{blk}.norm.bias"), vec![d], ModuleTag::TfModule),
                fwd: b.gru(&format!("tf.block{blk}.gru.fwd"), d, hidden, ModuleTag::TfModule),
                bwd: b.gru(&format!("tf.block{blk}.gru.bwd"), d, hidden, ModuleTag::TfModule),
                proj_w: b.push(format!("tf.block{blk}.proj.w"), vec![d, 2 * hidden], ModuleTag::TfModule),
                proj_b: b.push(format!("tf.block{blk}.proj.b"), vec![d], ModuleTag::TfModule),
            });
        }
        let encoder_len = b.cursor;

        let mut decoders = Vec::with_capacity(config.stems.len());
        for (si, stem) in config.stems.iter().enumerate() {
            let start = b.cursor;
            let mut bands = Vec::with_capacity(num_bands);
            for band in 0..num_bands {
                let out = 2 * config.band_packed(band); // pre-GLU width 4*C*F_b
                let tag = ModuleTag::Decoder(si);
                bands.push(DecBandIds {
                    norm_gain: b.push(format!("dec.{stem}.band{band}.norm.gain"), vec![d], tag),
                    norm_bias: b.push(format!("dec.{stem}.band{band}.norm.bias"), vec![d], tag),
                    w1: b.push(format!("dec.{stem}.band{band}.fc1.w"), vec![config.mlp_hidden, d], tag),
                    b1: b.push(format!("dec.{stem}.band{band}.fc1.b"), vec![config.mlp_hidden], tag),
                    w2: b.push(format!("dec.{stem}.band{band}.fc2.w"), vec![out, config.mlp_hidden], tag),
                    b2: b.push(format!("dec.{stem}.band{band}.fc2.b"), vec![out], tag),
                });
            }
            decoders.push((bands, start..b.cursor));
        }

        Ok(Self { metas: b.metas, total_len: b.cursor, encoder_len, embed, blocks, decoders })
    }

    pub fn counts(&self) -> ParamCounts {
        let mut counts = ParamCounts::default();
        for meta in &self.metas {
            match meta.module {
                ModuleTag::Embedding => counts.embedding += meta.len,
                ModuleTag::TfModule => counts.tf_module += meta.len,
                ModuleTag::Decoder(si) => {
                    if counts.per_stem.len() <= si {
                        counts.per_stem.resize(si + 1, 0);
                    }
                    counts.per_stem[si] += meta.len;
                }
            }
        }
        counts.total = self.total_len;
        counts
    }
}

/// Exact per-module parameter counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ParamCounts {
    pub embedding: usize,
    pub tf_module: usize,
    pub per_stem: Vec<usize>,
    pub total: usize,
}

impl ParamCounts {
    pub fn decoders_total(&self) -> usize {
        self.per_stem.iter().sum()
    }
}

/// All learnable tensors plus the configuration that shaped them.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub layout: Layout,
    data: Vec<f64>,
}

impl ModelParams {
    /// Allocate and initialize a model: affine weights and biases uniform
    /// in +-1/sqrt(fan_in), recurrent matrices orthogonal per gate, norm
    /// gains 1 and biases 0, recurrent biases 0.
    pub fn init<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        let layout = Layout::build(&config)?;
        let mut params = Self { config, data: vec![0.0; layout.total_len], layout };
        for i in 0..params.layout.metas.len() {
            params.init_tensor(i, rng);
        }
        Ok(params)
    }

    fn init_tensor<R: Rng>(&mut self, id: usize, rng: &mut R) {
        let meta = self.layout.metas[id].clone();
        let slice = &mut self.data[meta.offset..meta.offset + meta.len];
        let name = meta.name.as_str();
        if name.ends_with("norm.gain") {
            slice.fill(1.0);
        } else if name.ends_with("norm.bias") || name.ends_with("b_ih") || name.ends_with("b_hh") {
            slice.fill(0.0);
        } else if name.ends_with("w_hh") {
            let hidden = meta.shape[1];
            for gate in 0..3 {
                let q = random_orthogonal(hidden, rng);
                for r in 0..hidden {
                    for c in 0..hidden {
                        slice[(gate * hidden + r) * hidden + c] = q[[r, c]];
                    }
                }
            }
        } else if meta.shape.len() == 2 {
            let bound = 1.0 / (meta.shape[1] as f64).sqrt();
            for v in slice.iter_mut() {
                *v = rng.gen_range(-bound..bound);
            }
        } else {
            // Affine bias: uniform in the fan-in bound of its weight,
            // which immediately precedes it in the layout.
            let fan_in = self.layout.metas[id - 1].shape[1];
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in slice.iter_mut() {
                *v = rng.gen_range(-bound..bound);
            }
        }
    }

    pub fn from_raw(config: ModelConfig, data: Vec<f64>) -> Result<Self> {
        let layout = Layout::build(&config)?;
        if data.len() != layout.total_len {
            return Err(Error::Config(format!(
                "parameter buffer has {} values, layout expects {}",
                data.len(),
                layout.total_len
            )));
        }
        Ok(Self { config, layout, data })
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn encoder_data(&self) -> &[f64] {
        &self.data[..self.layout.encoder_len]
    }

    pub fn num_params(&self) -> usize {
        self.data.len()
    }

    pub fn counts(&self) -> ParamCounts {
        self.layout.counts()
    }

    pub fn view1(&self, id: usize) -> ArrayView1<'_, f64> {
        let meta = &self.layout.metas[id];
        debug_assert_eq!(meta.shape.len(), 1);
        ArrayView1::from_shape(meta.len, &self.data[meta.offset..meta.offset + meta.len]).unwrap()
    }

    pub fn view2(&self, id: usize) -> ArrayView2<'_, f64> {
        let meta = &self.layout.metas[id];
        debug_assert_eq!(meta.shape.len(), 2);
        ArrayView2::from_shape(
            (meta.shape[0], meta.shape[1]),
            &self.data[meta.offset..meta.offset + meta.len],
        )
        .unwrap()
    }

    pub fn gru_views(&self, ids: GruIds) -> layers::GruViews<'_> {
        layers::GruViews {
            w_ih: self.view2(ids.w_ih),
            w_hh: self.view2(ids.w_hh),
            b_ih: self.view1(ids.b_ih),
            b_hh: self.view1(ids.b_hh),
        }
    }

    /// Attach a freshly initialized decoder for a new stem. Every existing
    /// tensor, encoder included, is copied bitwise.
    pub fn attach_decoder<R: Rng>(&self, stem: &str, rng: &mut R) -> Result<Self> {
        if self.config.stems.iter().any(|s| s == stem) {
            return Err(Error::Config(format!("stem {stem:?} already has a decoder")));
        }
        let mut config = self.config.clone();
        config.stems.push(stem.to_string());
        let layout = Layout::build(&config)?;
        let mut params = Self { config, data: vec![0.0; layout.total_len], layout };

        params.data[..self.layout.encoder_len].copy_from_slice(self.encoder_data());
        for (si, (_, range)) in self.layout.decoders.iter().enumerate() {
            let dst = params.layout.decoders[si].1.clone();
            params.data[dst].copy_from_slice(&self.data[range.clone()]);
        }
        let new_si = params.layout.decoders.len() - 1;
        let ids: Vec<usize> = params
            .layout
            .metas
            .iter()
            .enumerate()
            .filter(|(_, m)| m.module == ModuleTag::Decoder(new_si))
            .map(|(i, _)| i)
            .collect();
        for id in ids {
            params.init_tensor(id, rng);
        }
        Ok(params)
    }

    /// Remove a stem's decoder; all remaining tensors are copied bitwise.
    pub fn detach_decoder(&self, stem: &str) -> Result<Self> {
        let si = self.config.stem_index(stem)?;
        if self.config.stems.len() == 1 {
            return Err(Error::Config("cannot detach the only decoder".into()));
        }
        let mut config = self.config.clone();
        config.stems.remove(si);
        let layout = Layout::build(&config)?;
        let mut params = Self { config, data: vec![0.0; layout.total_len], layout };

        params.data[..self.layout.encoder_len].copy_from_slice(self.encoder_data());
        let mut dst_si = 0;
        for (src_si, (_, range)) in self.layout.decoders.iter().enumerate() {
            if src_si == si {
                continue;
            }
            let dst = params.layout.decoders[dst_si].1.clone();
            params.data[dst].copy_from_slice(&self.data[range.clone()]);
            dst_si += 1;
        }
        Ok(params)
    }
}

/// Gradient buffer sharing a model's layout.
pub struct GradBuf<'a> {
    layout: &'a Layout,
    pub data: Vec<f64>,
}

impl<'a> GradBuf<'a> {
    pub fn zeros(layout: &'a Layout) -> Self {
        Self { layout, data: vec![0.0; layout.total_len] }
    }

    pub fn add1(&mut self, id: usize, g: &ndarray::Array1<f64>) {
        let meta = &self.layout.metas[id];
        debug_assert_eq!(meta.len, g.len());
        let mut view =
            ArrayViewMut1::from_shape(meta.len, &mut self.data[meta.offset..meta.offset + meta.len])
                .unwrap();
        view += g;
    }

    pub fn add2(&mut self, id: usize, g: &ndarray::Array2<f64>) {
        let meta = &self.layout.metas[id];
        debug_assert_eq!(meta.len, g.len());
        let mut view = ArrayViewMut2::from_shape(
            (meta.shape[0], meta.shape[1]),
            &mut self.data[meta.offset..meta.offset + meta.len],
        )
        .unwrap();
        view += g;
    }
}

/// Random orthogonal matrix via modified Gram-Schmidt on a Gaussian draw.
fn random_orthogonal<R: Rng>(n: usize, rng: &mut R) -> ndarray::Array2<f64> {
    let mut a = ndarray::Array2::<f64>::zeros((n, n));
    for v in a.iter_mut() {
        // Box-Muller.
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        *v = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
    }
    for j in 0..n {
        for i in 0..j {
            let dot: f64 = (0..n).map(|k| a[[k, i]] * a[[k, j]]).sum();
            for k in 0..n {
                a[[k, j]] -= dot * a[[k, i]];
            }
        }
        let norm: f64 = (0..n).map(|k| a[[k, j]] * a[[k, j]]).sum::<f64>().sqrt();
        let inv = if norm > 0.0 { 1.0 / norm } else { 0.0 };
        for k in 0..n {
            a[[k, j]] *= inv;
        }
    }
    a
}
