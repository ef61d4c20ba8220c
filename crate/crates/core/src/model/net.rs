//! Forward and backward passes of the masking network, plus waveform
//! separation (optionally chunked with overlap-add).
//!
//! Data layout conventions: the feature tensor is `(frames, bands, D)`;
//! per-band activations are `(frames, features)` matrices. A subband is
//! packed into real rows as all real parts then all imaginary parts,
//! channel-major within each half.

use ndarray::{s, Array2, Array3};
use num_complex::Complex64;
use rayon::prelude::*;

use super::layers::{
    affine_backward, affine_forward, gru_backward, gru_forward, norm_backward, norm_forward,
    GruCache, NormCache,
};
use super::{BlockIds, DecBandIds, EmbedIds, GradBuf, ModelParams};
use crate::bands::{BandSpec, Subband};
use crate::dsp::{self, ChunkPlan, Spectrogram, StftConfig};
use crate::error::{Error, Result};

/// Full-band complex masks, one per stem in config order.
#[derive(Debug, Clone)]
pub struct MaskSet {
    pub stems: Vec<String>,
    pub masks: Vec<Array3<Complex64>>,
}

impl MaskSet {
    pub fn mask(&self, stem: &str) -> Option<&Array3<Complex64>> {
        self.stems.iter().position(|s| s == stem).map(|i| &self.masks[i])
    }
}

struct EmbBandCache {
    norm: NormCache,
    normed: Array2<f64>,
}

struct BlockCache {
    /// Input in (steps, batch, D) axis order before normalization.
    norm: NormCache,
    normed3: Array3<f64>,
    gru_fwd: GruCache,
    gru_bwd: GruCache,
    concat: Array2<f64>,
}

struct DecBandCache {
    norm: NormCache,
    normed: Array2<f64>,
    th: Array2<f64>,
    glu_a: Array2<f64>,
    glu_sig: Array2<f64>,
}

pub struct ForwardCache {
    emb: Vec<EmbBandCache>,
    blocks: Vec<BlockCache>,
    lambda: Array3<f64>,
    dec: Vec<Vec<DecBandCache>>,
}

/// View a subband as a real `(frames, 2*C*F_b)` matrix: real parts then
/// imaginary parts, channel-major within each half.
fn pack_subband(sub: &Subband) -> Array2<f64> {
    let (channels, width, frames) = sub.data.dim();
    let half = channels * width;
    let mut packed = Array2::<f64>::zeros((frames, 2 * half));
    for c in 0..channels {
        for f in 0..width {
            let row = c * width + f;
            for t in 0..frames {
                let v = sub.data[[c, f, t]];
                packed[[t, row]] = v.re;
                packed[[t, half + row]] = v.im;
            }
        }
    }
    packed
}

/// Inverse of the packing used by the mask head: `(frames, 2*C*F_b)` GLU
/// output to a complex `(C, F_b, frames)` bandwise mask.
fn unpack_mask(out: &Array2<f64>, channels: usize, width: usize) -> Array3<Complex64> {
    let frames = out.nrows();
    let half = channels * width;
    let mut mask = Array3::<Complex64>::zeros((channels, width, frames));
    for c in 0..channels {
        for f in 0..width {
            let row = c * width + f;
            for t in 0..frames {
                mask[[c, f, t]] = Complex64::new(out[[t, row]], out[[t, half + row]]);
            }
        }
    }
    mask
}

fn embed_band(
    params: &ModelParams,
    ids: EmbedIds,
    packed: Array2<f64>,
    want_cache: bool,
) -> (Array2<f64>, Option<EmbBandCache>) {
    let (normed, norm) =
        norm_forward(params.view1(ids.norm_gain), params.view1(ids.norm_bias), &packed);
    let v = affine_forward(params.view2(ids.w), params.view1(ids.b), &normed);
    let cache = want_cache.then(|| EmbBandCache { norm, normed });
    (v, cache)
}

/// Embed all subbands into the feature tensor `(frames, bands, D)`.
pub fn embed_bands(params: &ModelParams, subbands: &[Subband]) -> Result<Array3<f64>> {
    let (v, _) = embed_impl(params, subbands, false)?;
    Ok(v)
}

fn embed_impl(
    params: &ModelParams,
    subbands: &[Subband],
    want_cache: bool,
) -> Result<(Array3<f64>, Option<Vec<EmbBandCache>>)> {
    let cfg = &params.config;
    let num_bands = cfg.band_spec.num_bands();
    if subbands.len() != num_bands {
        return Err(Error::Shape(format!(
            "{} subbands against {num_bands} bands",
            subbands.len()
        )));
    }
    let frames = subbands[0].data.dim().2;
    let mut v = Array3::<f64>::zeros((frames, num_bands, cfg.d_model));
    let mut caches = want_cache.then(Vec::new);
    for (b, sub) in subbands.iter().enumerate() {
        let (channels, width, t) = sub.data.dim();
        if channels != cfg.channels || width != cfg.band_spec.band_width(b) || t != frames {
            return Err(Error::Shape(format!("subband {b} has shape {:?}", sub.data.dim())));
        }
        if sub.data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Numeric(format!("subband {b} contains non-finite values")));
        }
        let packed = pack_subband(sub);
        let (vb, cache) = embed_band(params, params.layout.embed[b], packed, want_cache);
        v.slice_mut(s![.., b, ..]).assign(&vb);
        if let (Some(cs), Some(c)) = (caches.as_mut(), cache) {
            cs.push(c);
        }
    }
    Ok((v, caches))
}

/// One residual recurrent block. `band_axis` selects the scan direction:
/// along frames (false) or along bands (true).
fn block_forward(
    params: &ModelParams,
    ids: BlockIds,
    input: &Array3<f64>,
    band_axis: bool,
    want_cache: bool,
) -> (Array3<f64>, Option<BlockCache>) {
    let (frames, bands, d) = input.dim();
    // Arrange to (steps, batch, D).
    let x3 = if band_axis {
        input.view().permuted_axes([1, 0, 2]).as_standard_layout().to_owned()
    } else {
        input.clone()
    };
    let (steps, batch, _) = x3.dim();
    let x_flat = x3
        .view()
        .into_shape_with_order((steps * batch, d))
        .expect("standard layout");
    let (normed_flat, norm) = norm_forward(
        params.view1(ids.norm_gain),
        params.view1(ids.norm_bias),
        &x_flat.to_owned(),
    );
    let normed3 = normed_flat
        .clone()
        .into_shape_with_order((steps, batch, d))
        .expect("standard layout");
    let (hs_f, cache_f) = gru_forward(params.gru_views(ids.fwd), &normed3, false, want_cache);
    let (hs_b, cache_b) = gru_forward(params.gru_views(ids.bwd), &normed3, true, want_cache);
    let hidden = params.config.rnn_hidden;
    let mut concat = Array2::<f64>::zeros((steps * batch, 2 * hidden));
    concat
        .slice_mut(s![.., ..hidden])
        .assign(&hs_f.view().into_shape_with_order((steps * batch, hidden)).unwrap());
    concat
        .slice_mut(s![.., hidden..])
        .assign(&hs_b.view().into_shape_with_order((steps * batch, hidden)).unwrap());
    let proj = affine_forward(params.view2(ids.proj_w), params.view1(ids.proj_b), &concat);
    let proj3 = proj.into_shape_with_order((steps, batch, d)).expect("standard layout");
    let inner = if band_axis {
        proj3.view().permuted_axes([1, 0, 2]).as_standard_layout().to_owned()
    } else {
        proj3
    };
    debug_assert_eq!(inner.dim(), (frames, bands, d));
    let out = input + &inner;
    let cache = want_cache.then(|| BlockCache {
        norm,
        normed3,
        gru_fwd: cache_f.unwrap(),
        gru_bwd: cache_b.unwrap(),
        concat,
    });
    (out, cache)
}

fn block_backward(
    params: &ModelParams,
    ids: BlockIds,
    cache: &BlockCache,
    d_out: &Array3<f64>,
    band_axis: bool,
    grads: &mut GradBuf,
) -> Array3<f64> {
    let (frames, bands, d) = d_out.dim();
    let dy3 = if band_axis {
        d_out.view().permuted_axes([1, 0, 2]).as_standard_layout().to_owned()
    } else {
        d_out.clone()
    };
    let (steps, batch, _) = dy3.dim();
    let dy_flat = dy3
        .view()
        .into_shape_with_order((steps * batch, d))
        .expect("standard layout")
        .to_owned();

    let (d_concat, dw_proj, db_proj) = affine_backward(params.view2(ids.proj_w), &cache.concat, &dy_flat);
    grads.add2(ids.proj_w, &dw_proj);
    grads.add1(ids.proj_b, &db_proj);

    let hidden = params.config.rnn_hidden;
    let dhs_f = d_concat
        .slice(s![.., ..hidden])
        .to_owned()
        .into_shape_with_order((steps, batch, hidden))
        .expect("standard layout");
    let dhs_b = d_concat
        .slice(s![.., hidden..])
        .to_owned()
        .into_shape_with_order((steps, batch, hidden))
        .expect("standard layout");

    let (dxs_f, g_f) = gru_backward(params.gru_views(ids.fwd), &cache.normed3, &cache.gru_fwd, &dhs_f, false);
    let (dxs_b, g_b) = gru_backward(params.gru_views(ids.bwd), &cache.normed3, &cache.gru_bwd, &dhs_b, true);
    grads.add2(ids.fwd.w_ih, &g_f.dw_ih);
    grads.add2(ids.fwd.w_hh, &g_f.dw_hh);
    grads.add1(ids.fwd.b_ih, &g_f.db_ih);
    grads.add1(ids.fwd.b_hh, &g_f.db_hh);
    grads.add2(ids.bwd.w_ih, &g_b.dw_ih);
    grads.add2(ids.bwd.w_hh, &g_b.dw_hh);
    grads.add1(ids.bwd.b_ih, &g_b.db_ih);
    grads.add1(ids.bwd.b_hh, &g_b.db_hh);

    let d_normed_flat = (dxs_f + dxs_b)
        .into_shape_with_order((steps * batch, d))
        .expect("standard layout");
    let (dx_flat, dgain, dbias) = norm_backward(params.view1(ids.norm_gain), &cache.norm, &d_normed_flat);
    grads.add1(ids.norm_gain, &dgain);
    grads.add1(ids.norm_bias, &dbias);

    let dx3 = dx_flat.into_shape_with_order((steps, batch, d)).expect("standard layout");
    let d_arranged = if band_axis {
        dx3.view().permuted_axes([1, 0, 2]).as_standard_layout().to_owned()
    } else {
        dx3
    };
    debug_assert_eq!(d_arranged.dim(), (frames, bands, d));
    // Residual: gradient flows through both the block and the skip.
    d_out + &d_arranged
}

/// Run the alternating time/band recurrent stack.
pub fn tf_model(params: &ModelParams, v: &Array3<f64>) -> Result<Array3<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite feature tensor".into()));
    }
    let (lambda, _) = blocks_impl(params, v.clone(), false);
    Ok(lambda)
}

fn blocks_impl(
    params: &ModelParams,
    v: Array3<f64>,
    want_cache: bool,
) -> (Array3<f64>, Option<Vec<BlockCache>>) {
    let mut caches = want_cache.then(Vec::new);
    let mut cur = v;
    for (blk, ids) in params.layout.blocks.iter().enumerate() {
        let band_axis = blk % 2 == 1;
        let (next, cache) = block_forward(params, *ids, &cur, band_axis, want_cache);
        if let (Some(cs), Some(c)) = (caches.as_mut(), cache) {
            cs.push(c);
        }
        cur = next;
    }
    (cur, caches)
}

fn decode_band(
    params: &ModelParams,
    ids: DecBandIds,
    lambda_b: &Array2<f64>,
    want_cache: bool,
) -> (Array2<f64>, Option<DecBandCache>) {
    let (normed, norm) =
        norm_forward(params.view1(ids.norm_gain), params.view1(ids.norm_bias), lambda_b);
    let h1 = affine_forward(params.view2(ids.w1), params.view1(ids.b1), &normed);
    let th = h1.mapv(f64::tanh);
    let h2 = affine_forward(params.view2(ids.w2), params.view1(ids.b2), &th);
    // Gated linear unit over the last axis.
    let width = h2.ncols() / 2;
    let a = h2.slice(s![.., ..width]).to_owned();
    let g = h2.slice(s![.., width..]).to_owned();
    let sig = g.mapv(|x| 1.0 / (1.0 + (-x).exp()));
    let out = &a * &sig;
    let cache = want_cache.then(|| DecBandCache {
        norm,
        normed,
        th,
        glu_a: a,
        glu_sig: sig,
    });
    (out, cache)
}

fn decode_band_backward(
    params: &ModelParams,
    ids: DecBandIds,
    cache: &DecBandCache,
    d_out: &Array2<f64>,
    grads: &mut GradBuf,
) -> Array2<f64> {
    let da = d_out * &cache.glu_sig;
    let dg = d_out * &cache.glu_a * &cache.glu_sig * &cache.glu_sig.mapv(|s| 1.0 - s);
    let width = da.ncols();
    let mut dh2 = Array2::<f64>::zeros((da.nrows(), 2 * width));
    dh2.slice_mut(s![.., ..width]).assign(&da);
    dh2.slice_mut(s![.., width..]).assign(&dg);

    let (dth, dw2, db2) = affine_backward(params.view2(ids.w2), &cache.th, &dh2);
    grads.add2(ids.w2, &dw2);
    grads.add1(ids.b2, &db2);
    let dh1 = &dth * &cache.th.mapv(|t| 1.0 - t * t);
    let (d_normed, dw1, db1) = affine_backward(params.view2(ids.w1), &cache.normed, &dh1);
    grads.add2(ids.w1, &dw1);
    grads.add1(ids.b1, &db1);
    let (d_lambda_b, dgain, dbias) = norm_backward(params.view1(ids.norm_gain), &cache.norm, &d_normed);
    grads.add1(ids.norm_gain, &dgain);
    grads.add1(ids.norm_bias, &dbias);
    d_lambda_b
}

/// Bandwise complex masks of one stem from the shared feature tensor.
pub fn estimate_masks(
    params: &ModelParams,
    lambda: &Array3<f64>,
    stem: &str,
) -> Result<Vec<Array3<Complex64>>> {
    let si = params
        .config
        .stems
        .iter()
        .position(|s| s == stem)
        .ok_or_else(|| Error::Config(format!("unknown stem {stem:?}")))?;
    let (frames, bands, _) = lambda.dim();
    if bands != params.config.band_spec.num_bands() {
        return Err(Error::Shape(format!("feature tensor has {bands} bands")));
    }
    let _ = frames;
    let mut out = Vec::with_capacity(bands);
    for b in 0..bands {
        let ids = params.layout.decoders[si].0[b];
        let lambda_b = lambda.slice(s![.., b, ..]).to_owned();
        let (o, _) = decode_band(params, ids, &lambda_b, false);
        out.push(unpack_mask(&o, params.config.channels, params.config.band_spec.band_width(b)));
    }
    Ok(out)
}

/// Weighted recombination of bandwise masks into a full-band mask: the
/// filterbank weight of each (band, bin) scales its zero-extended bandwise
/// mask; column normalization makes the weights a partition of unity.
pub fn recombine_masks(
    spec: &BandSpec,
    bandwise: &[Array3<Complex64>],
) -> Result<Array3<Complex64>> {
    if bandwise.len() != spec.num_bands() {
        return Err(Error::Shape(format!(
            "{} bandwise masks against {} bands",
            bandwise.len(),
            spec.num_bands()
        )));
    }
    let (channels, _, frames) = bandwise[0].dim();
    let mut full = Array3::<Complex64>::zeros((channels, spec.num_bins(), frames));
    for (b, mask) in bandwise.iter().enumerate() {
        let (lo, hi) = spec.band_bins(b);
        let (c, width, t) = mask.dim();
        if c != channels || width != hi - lo || t != frames {
            return Err(Error::Shape(format!("bandwise mask {b} has shape {:?}", mask.dim())));
        }
        for (fi, f) in (lo..hi).enumerate() {
            let w = spec.weights()[[b, f]];
            let mut dst = full.slice_mut(s![.., f, ..]);
            dst.zip_mut_with(&mask.slice(s![.., fi, ..]), |d, &m| *d += m * w);
        }
    }
    Ok(full)
}

/// Adjoint of [`recombine_masks`] for one band.
fn recombine_adjoint_band(
    spec: &BandSpec,
    b: usize,
    d_full: &Array3<Complex64>,
) -> Array3<Complex64> {
    let (lo, hi) = spec.band_bins(b);
    let (channels, _, frames) = d_full.dim();
    let mut d_band = Array3::<Complex64>::zeros((channels, hi - lo, frames));
    for (fi, f) in (lo..hi).enumerate() {
        let w = spec.weights()[[b, f]];
        let mut dst = d_band.slice_mut(s![.., fi, ..]);
        dst.zip_mut_with(&d_full.slice(s![.., f, ..]), |d, &m| *d = m * w);
    }
    d_band
}

/// Adjoint of the mask packing: complex bandwise gradient to the real
/// `(frames, 2*C*F_b)` GLU-output gradient.
fn pack_mask_grad(d_mask: &Array3<Complex64>) -> Array2<f64> {
    let (channels, width, frames) = d_mask.dim();
    let half = channels * width;
    let mut d_out = Array2::<f64>::zeros((frames, 2 * half));
    for c in 0..channels {
        for f in 0..width {
            let row = c * width + f;
            for t in 0..frames {
                let v = d_mask[[c, f, t]];
                d_out[[t, row]] = v.re;
                d_out[[t, half + row]] = v.im;
            }
        }
    }
    d_out
}

/// Full forward pass: split, embed, model, estimate and recombine masks
/// for every stem. With `want_cache` the returned cache supports
/// [`backward`].
pub fn forward(
    params: &ModelParams,
    x: &Spectrogram,
    want_cache: bool,
) -> Result<(MaskSet, Option<ForwardCache>)> {
    let cfg = &params.config;
    if x.channels() != cfg.channels {
        return Err(Error::Shape(format!(
            "input has {} channels, model expects {}",
            x.channels(),
            cfg.channels
        )));
    }
    let subbands = cfg.band_spec.split(x)?;
    let (v, emb_caches) = embed_impl(params, &subbands, want_cache)?;
    let (lambda, block_caches) = blocks_impl(params, v, want_cache);

    let mut masks = Vec::with_capacity(cfg.stems.len());
    let mut dec_caches = want_cache.then(Vec::new);
    for si in 0..cfg.stems.len() {
        let mut bandwise = Vec::with_capacity(cfg.band_spec.num_bands());
        let mut stem_caches = want_cache.then(Vec::new);
        for b in 0..cfg.band_spec.num_bands() {
            let ids = params.layout.decoders[si].0[b];
            let lambda_b = lambda.slice(s![.., b, ..]).to_owned();
            let (o, cache) = decode_band(params, ids, &lambda_b, want_cache);
            bandwise.push(unpack_mask(&o, cfg.channels, cfg.band_spec.band_width(b)));
            if let (Some(cs), Some(c)) = (stem_caches.as_mut(), cache) {
                cs.push(c);
            }
        }
        masks.push(recombine_masks(&cfg.band_spec, &bandwise)?);
        if let (Some(ds), Some(cs)) = (dec_caches.as_mut(), stem_caches) {
            ds.push(cs);
        }
    }

    let cache = want_cache.then(|| ForwardCache {
        emb: emb_caches.unwrap(),
        blocks: block_caches.unwrap(),
        lambda,
        dec: dec_caches.unwrap(),
    });
    Ok((MaskSet { stems: cfg.stems.clone(), masks }, cache))
}

/// Backward pass from full-band mask gradients (one per stem, real
/// gradients in `re`/`im`) to parameter gradients. With `freeze_encoder`
/// only decoder gradients are computed.
pub fn backward<'a>(
    params: &'a ModelParams,
    cache: &ForwardCache,
    d_masks: &[Array3<Complex64>],
    freeze_encoder: bool,
) -> Result<GradBuf<'a>> {
    let cfg = &params.config;
    if d_masks.len() != cfg.stems.len() {
        return Err(Error::Shape(format!(
            "{} mask gradients against {} stems",
            d_masks.len(),
            cfg.stems.len()
        )));
    }
    let mut grads = GradBuf::zeros(&params.layout);
    let (frames, bands, d) = cache.lambda.dim();
    let mut d_lambda = Array3::<f64>::zeros((frames, bands, d));

    for (si, d_mask) in d_masks.iter().enumerate() {
        for b in 0..bands {
            let ids = params.layout.decoders[si].0[b];
            let d_band = recombine_adjoint_band(&cfg.band_spec, b, d_mask);
            let d_out = pack_mask_grad(&d_band);
            let d_lambda_b = decode_band_backward(params, ids, &cache.dec[si][b], &d_out, &mut grads);
            let mut dst = d_lambda.slice_mut(s![.., b, ..]);
            dst += &d_lambda_b;
        }
    }

    if freeze_encoder {
        return Ok(grads);
    }

    let mut d_cur = d_lambda;
    for (blk, ids) in params.layout.blocks.iter().enumerate().rev() {
        let band_axis = blk % 2 == 1;
        d_cur = block_backward(params, *ids, &cache.blocks[blk], &d_cur, band_axis, &mut grads);
    }

    for (b, emb) in cache.emb.iter().enumerate() {
        let ids = params.layout.embed[b];
        let dv_b = d_cur.slice(s![.., b, ..]).to_owned();
        let (d_normed, dw, db) = affine_backward(params.view2(ids.w), &emb.normed, &dv_b);
        grads.add2(ids.w, &dw);
        grads.add1(ids.b, &db);
        let (_, dgain, dbias) = norm_backward(params.view1(ids.norm_gain), &emb.norm, &d_normed);
        grads.add1(ids.norm_gain, &dgain);
        grads.add1(ids.norm_bias, &dbias);
    }
    Ok(grads)
}

/// Separate a waveform in one pass: STFT, masks, masked iSTFT per stem.
pub fn separate(
    params: &ModelParams,
    x: &Array2<f64>,
    stft_cfg: &StftConfig,
) -> Result<Vec<(String, Array2<f64>)>> {
    if stft_cfg.n_fft != params.config.band_spec.n_fft {
        return Err(Error::Config(format!(
            "STFT n_fft {} does not match the band spec's {}",
            stft_cfg.n_fft,
            params.config.band_spec.n_fft
        )));
    }
    let spec = dsp::stft(x, stft_cfg)?;
    let (mask_set, _) = forward(params, &spec, false)?;
    let mut out = Vec::with_capacity(mask_set.masks.len());
    for (stem, mask) in mask_set.stems.iter().zip(&mask_set.masks) {
        let est = Spectrogram { data: &spec.data * mask, config: spec.config };
        out.push((stem.clone(), dsp::istft(&est, x.ncols())?));
    }
    Ok(out)
}

/// Chunked separation with Hann-windowed overlap-add recombination.
/// Inputs no longer than one chunk run un-chunked. Chunks are processed
/// in parallel; recombination order is deterministic.
pub fn separate_chunked(
    params: &ModelParams,
    x: &Array2<f64>,
    stft_cfg: &StftConfig,
    plan: &ChunkPlan,
) -> Result<Vec<(String, Array2<f64>)>> {
    let len = x.ncols();
    let chunk_samples = plan.chunk_samples(stft_cfg.fs);
    if len <= chunk_samples {
        return separate(params, x, stft_cfg);
    }
    let mut rng = rand::rngs::mock::StepRng::new(0, 1);
    let chunks = dsp::chunk(x, plan, stft_cfg.fs, &mut rng)?;
    let processed: Vec<(usize, Vec<(String, Array2<f64>)>)> = chunks
        .par_iter()
        .map(|(off, sig)| separate(params, sig, stft_cfg).map(|stems| (*off, stems)))
        .collect::<Result<_>>()?;

    let stems = params.config.stems.clone();
    let mut out = Vec::with_capacity(stems.len());
    for (si, stem) in stems.iter().enumerate() {
        let per_stem: Vec<(usize, Array2<f64>)> = processed
            .iter()
            .map(|(off, est)| (*off, est[si].1.clone()))
            .collect();
        out.push((stem.clone(), dsp::overlap_add(&per_stem, len)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bands::BandKind;
    use crate::model::ModelConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_params(seed: u64) -> ModelParams {
        let spec = BandSpec::build(BandKind::Mel, 8000.0, 64, 3).unwrap();
        let cfg = ModelConfig::new(spec, 4, 1, vec!["a".into(), "b".into()]);
        ModelParams::init(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn random_spectrogram(params: &ModelParams, frames: usize, seed: u64) -> Spectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bins = params.config.band_spec.num_bins();
        let cfg = StftConfig {
            n_fft: params.config.band_spec.n_fft,
            hop: params.config.band_spec.n_fft / 4,
            fs: params.config.band_spec.fs,
            ..Default::default()
        };
        let data = Array3::from_shape_fn((params.config.channels, bins, frames), |_| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        Spectrogram { data, config: cfg }
    }

    #[test]
    fn zero_spectrogram_embeds_to_affine_bias() {
        let params = tiny_params(1);
        let mut x = random_spectrogram(&params, 5, 2);
        x.data.fill(Complex64::new(0.0, 0.0));
        let subbands = params.config.band_spec.split(&x).unwrap();
        let v = embed_bands(&params, &subbands).unwrap();
        for b in 0..params.config.band_spec.num_bands() {
            let bias = params.view1(params.layout.embed[b].b);
            for t in 0..5 {
                for k in 0..params.config.d_model {
                    assert!((v[[t, b, k]] - bias[k]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zeroed_blocks_pass_features_through() {
        let mut params = tiny_params(3);
        // Zero every TF tensor except the norm gains: the recurrent and
        // projection outputs vanish, leaving the residual identity.
        for ids in params.layout.blocks.clone() {
            for id in [
                ids.fwd.w_ih,
                ids.fwd.w_hh,
                ids.fwd.b_ih,
                ids.fwd.b_hh,
                ids.bwd.w_ih,
                ids.bwd.w_hh,
                ids.bwd.b_ih,
                ids.bwd.b_hh,
                ids.proj_w,
                ids.proj_b,
            ] {
                let meta = params.layout.metas[id].clone();
                params.data_mut()[meta.offset..meta.offset + meta.len].fill(0.0);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = Array3::from_shape_fn((6, 3, 4), |_| rng.gen_range(-1.0..1.0));
        let lambda = tf_model(&params, &v).unwrap();
        assert_eq!(lambda, v);
    }

    #[test]
    fn single_frame_sequence_is_deterministic_and_finite() {
        let params = tiny_params(5);
        let x = random_spectrogram(&params, 1, 6);
        let (a, _) = forward(&params, &x, false).unwrap();
        let (b, _) = forward(&params, &x, false).unwrap();
        for (ma, mb) in a.masks.iter().zip(&b.masks) {
            assert_eq!(ma, mb);
            assert!(ma.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
        }
    }

    #[test]
    fn recombination_all_ones_disjoint_and_overlapping() {
        for (kind, n_fft, bands) in [(BandKind::Mel, 64, 3), (BandKind::Musical, 64, 4)] {
            let spec = BandSpec::build(kind, 8000.0, n_fft, bands).unwrap();
            let frames = 3;
            let ones: Vec<Array3<Complex64>> = (0..spec.num_bands())
                .map(|b| {
                    Array3::from_elem((1, spec.band_width(b), frames), Complex64::new(1.0, 0.0))
                })
                .collect();
            let full = recombine_masks(&spec, &ones).unwrap();
            for v in full.iter() {
                assert!((v.re - 1.0).abs() < 1e-9 && v.im.abs() < 1e-12, "got {v}");
            }
        }
    }

    #[test]
    fn recombination_matches_scalar_oracle() {
        let spec = BandSpec::build(BandKind::Musical, 8000.0, 64, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let frames = 4;
        let bandwise: Vec<Array3<Complex64>> = (0..spec.num_bands())
            .map(|b| {
                Array3::from_shape_fn((1, spec.band_width(b), frames), |_| {
                    Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
                })
            })
            .collect();
        let full = recombine_masks(&spec, &bandwise).unwrap();
        // Brute-force per-bin accumulation.
        for f in 0..spec.num_bins() {
            for t in 0..frames {
                let mut want = Complex64::new(0.0, 0.0);
                for b in 0..spec.num_bands() {
                    let (lo, hi) = spec.band_bins(b);
                    if f >= lo && f < hi {
                        want += bandwise[b][[0, f - lo, t]] * spec.weights()[[b, f]];
                    }
                }
                let got = full[[0, f, t]];
                assert!((got - want).norm() <= 1e-12, "bin {f} frame {t}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn recombination_is_linear() {
        let spec = BandSpec::build(BandKind::Mel, 8000.0, 64, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let frames = 3;
        let gen = |rng: &mut ChaCha8Rng| -> Vec<Array3<Complex64>> {
            (0..spec.num_bands())
                .map(|b| {
                    Array3::from_shape_fn((1, spec.band_width(b), frames), |_| {
                        Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
                    })
                })
                .collect()
        };
        let xs = gen(&mut rng);
        let ys = gen(&mut rng);
        let alpha = Complex64::new(0.7, -0.3);
        let combo: Vec<Array3<Complex64>> = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| x.mapv(|v| v * alpha) + y)
            .collect();
        let lhs = recombine_masks(&spec, &combo).unwrap();
        let rhs =
            recombine_masks(&spec, &xs).unwrap().mapv(|v| v * alpha) + &recombine_masks(&spec, &ys).unwrap();
        for (a, b) in lhs.iter().zip(rhs.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    /// Set an entire decoder so its masks are exactly `value` (real).
    fn force_constant_masks(params: &mut ModelParams, value: f64) {
        for si in 0..params.layout.decoders.len() {
            for ids in params.layout.decoders[si].0.clone() {
                for id in [ids.w2, ids.b2] {
                    let meta = params.layout.metas[id].clone();
                    params.data_mut()[meta.offset..meta.offset + meta.len].fill(0.0);
                }
                // GLU: a * sigmoid(g); with g = 0 the gate is 1/2, so the
                // linear half must hold 2 * value in its real rows.
                let meta = params.layout.metas[ids.b2].clone();
                let out = meta.shape[0];
                let quarter = out / 4; // C * F_b real rows of the linear half
                params.data_mut()[meta.offset..meta.offset + quarter].fill(2.0 * value);
            }
        }
    }

    #[test]
    fn all_ones_masks_reproduce_the_mixture() {
        let mut params = tiny_params(9);
        force_constant_masks(&mut params, 1.0);
        let cfg = StftConfig { n_fft: 64, hop: 16, fs: 8000.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = Array2::from_shape_fn((1, 4000), |_| rng.gen_range(-1.0..1.0));
        let stems = separate(&params, &x, &cfg).unwrap();
        assert_eq!(stems.len(), 2);
        for (_, est) in &stems {
            assert_eq!(est.dim(), x.dim());
            let err: f64 = est.iter().zip(x.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            let sig: f64 = x.iter().map(|v| v * v).sum();
            assert!(err / sig < 1e-20, "relative error {}", err / sig);
        }
    }

    #[test]
    fn all_zero_masks_produce_silence() {
        let mut params = tiny_params(11);
        force_constant_masks(&mut params, 0.0);
        let cfg = StftConfig { n_fft: 64, hop: 16, fs: 8000.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = Array2::from_shape_fn((1, 4000), |_| rng.gen_range(-1.0..1.0));
        for (_, est) in separate(&params, &x, &cfg).unwrap() {
            assert!(est.iter().all(|&v| v.abs() < 1e-15));
        }
    }

    #[test]
    fn separate_preserves_length() {
        let params = tiny_params(13);
        let cfg = StftConfig { n_fft: 64, hop: 16, fs: 8000.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for len in [64usize, 100, 1000, 4001] {
            let x = Array2::from_shape_fn((1, len), |_| rng.gen_range(-1.0..1.0));
            for (_, est) in separate(&params, &x, &cfg).unwrap() {
                assert_eq!(est.ncols(), len);
            }
        }
    }

    #[test]
    fn degenerate_single_band_spec_runs() {
        // One custom band covering every bin: a plain full-band masking
        // network.
        let n_fft = 64;
        let w = ndarray::Array2::from_elem((1, n_fft / 2 + 1), 1.0);
        let spec = BandSpec::from_weights(BandKind::Custom, 8000.0, n_fft, w).unwrap();
        let cfg = ModelConfig::new(spec, 4, 1, vec!["only".into()]);
        let params = ModelParams::init(cfg, &mut ChaCha8Rng::seed_from_u64(15)).unwrap();
        let stft_cfg = StftConfig { n_fft, hop: 16, fs: 8000.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let x = Array2::from_shape_fn((1, 2000), |_| rng.gen_range(-1.0..1.0));
        let stems = separate(&params, &x, &stft_cfg).unwrap();
        assert_eq!(stems.len(), 1);
        assert_eq!(stems[0].1.ncols(), 2000);
        assert!(stems[0].1.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn chunked_matches_unchunked_for_single_chunk_input() {
        let params = tiny_params(17);
        let cfg = StftConfig { n_fft: 64, hop: 16, fs: 8000.0, ..Default::default() };
        let plan = ChunkPlan::new(2.0, 0.5, crate::dsp::ChunkMode::TestOverlapAdd).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let x = Array2::from_shape_fn((1, 16000), |_| rng.gen_range(-1.0..1.0));
        let direct = separate(&params, &x, &cfg).unwrap();
        let chunked = separate_chunked(&params, &x, &cfg, &plan).unwrap();
        for ((_, a), (_, b)) in direct.iter().zip(&chunked) {
            let rms: f64 = a
                .iter()
                .zip(b.iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
                / (a.len() as f64).sqrt();
            assert!(rms <= 1e-6, "RMS deviation {rms}");
        }
    }

    /// Whole-model gradient check: loss = <G, masks> for a fixed random G.
    #[test]
    fn model_gradients_match_finite_differences() {
        let params = tiny_params(19);
        let x = random_spectrogram(&params, 3, 20);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (mask_set, cache) = forward(&params, &x, true).unwrap();
        let gs: Vec<Array3<Complex64>> = mask_set
            .masks
            .iter()
            .map(|m| {
                Array3::from_shape_fn(m.dim(), |_| {
                    Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
                })
            })
            .collect();
        let grads = backward(&params, &cache.unwrap(), &gs, false).unwrap();

        let loss_of = |p: &ModelParams| -> f64 {
            let (ms, _) = forward(p, &x, false).unwrap();
            ms.masks
                .iter()
                .zip(&gs)
                .map(|(m, g)| {
                    m.iter()
                        .zip(g.iter())
                        .map(|(a, b)| a.re * b.re + a.im * b.im)
                        .sum::<f64>()
                })
                .sum()
        };

        // Sample a spread of parameter indices across all tensors.
        let total = params.num_params();
        let stride = (total / 150).max(3);
        let mut max_rel: f64 = 0.0;
        let mut checked = 0;
        let mut idx = 0;
        while idx < total {
            let mut p = params.clone();
            let h = 1e-5 * p.data()[idx].abs().max(1.0);
            p.data_mut()[idx] += h;
            let up = loss_of(&p);
            p.data_mut()[idx] -= 2.0 * h;
            let down = loss_of(&p);
            let fd = (up - down) / (2.0 * h);
            let g = grads.data[idx];
            let denom = g.abs().max(fd.abs()).max(1e-6);
            max_rel = max_rel.max((fd - g).abs() / denom);
            checked += 1;
            idx += stride;
        }
        assert!(checked > 100, "only {checked} parameters sampled");
        assert!(max_rel <= 1e-4, "max relative FD error {max_rel}");
    }

    #[test]
    fn frozen_backward_skips_encoder_gradients() {
        let params = tiny_params(22);
        let x = random_spectrogram(&params, 3, 23);
        let (mask_set, cache) = forward(&params, &x, true).unwrap();
        let gs: Vec<Array3<Complex64>> =
            mask_set.masks.iter().map(|m| m.mapv(|v| v * 0.5 + 0.1)).collect();
        let grads = backward(&params, &cache.unwrap(), &gs, true).unwrap();
        let enc = params.layout.encoder_len;
        assert!(grads.data[..enc].iter().all(|&g| g == 0.0));
        assert!(grads.data[enc..].iter().any(|&g| g != 0.0));
    }
}
