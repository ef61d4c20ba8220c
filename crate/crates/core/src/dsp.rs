//! STFT/iSTFT with loss-balanced normalization, chunking, and
//! Hann-windowed overlap-add recombination of chunked inference output.
//!
//! The DFT scaling is chosen so the Frobenius energy of the one-sided
//! spectrogram matches the time-domain energy of the signal (Parseval
//! balance), keeping time-domain and spectral loss terms on one scale.

use ndarray::{Array1, Array2, Array3};
use num_complex::Complex64;
use rand::Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Window-sum floor used when dividing out overlap-add window energy.
const WINDOW_SUM_FLOOR: f64 = 1e-8;

/// Below this accumulated window sum the overlap-add output falls back to
/// the raw boundary chunk instead of dividing by a vanishing envelope.
const EDGE_FALLBACK_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    #[default]
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralNorm {
    #[default]
    LossBalanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftConfig {
    #[serde(default = "default_n_fft")]
    pub n_fft: usize,
    #[serde(default = "default_hop")]
    pub hop: usize,
    #[serde(default)]
    pub window: WindowKind,
    #[serde(default = "default_fs")]
    pub fs: f64,
    #[serde(default)]
    pub normalization: SpectralNorm,
}

fn default_n_fft() -> usize {
    2048
}
fn default_hop() -> usize {
    512
}
fn default_fs() -> f64 {
    44100.0
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            n_fft: default_n_fft(),
            hop: default_hop(),
            window: WindowKind::Hann,
            fs: default_fs(),
            normalization: SpectralNorm::LossBalanced,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_fft < 2 || self.n_fft % 2 != 0 {
            return Err(Error::Config(format!("n_fft must be even and >= 2, got {}", self.n_fft)));
        }
        if self.hop == 0 || self.hop > self.n_fft {
            return Err(Error::Config(format!(
                "hop {} must be in [1, n_fft = {}]",
                self.hop, self.n_fft
            )));
        }
        if !(self.fs > 0.0) {
            return Err(Error::Config(format!("sampling rate must be positive, got {}", self.fs)));
        }
        Ok(())
    }

    pub fn num_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn num_frames(&self, len: usize) -> usize {
        len / self.hop + 1
    }

    /// DFT scale making one-sided spectrogram energy match signal energy.
    /// Reduces to 1/sqrt(sum w^2) at 50% overlap.
    fn scale(&self) -> f64 {
        let w = hann_periodic(self.n_fft);
        let wsq: f64 = w.iter().map(|v| v * v).sum();
        (2.0 * self.hop as f64 / (self.n_fft as f64 * wsq)).sqrt()
    }
}

/// Complex spectrogram, channels x bins x frames, with its STFT config.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub data: Array3<Complex64>,
    pub config: StftConfig,
}

impl Spectrogram {
    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }
    pub fn num_bins(&self) -> usize {
        self.data.shape()[1]
    }
    pub fn num_frames(&self) -> usize {
        self.data.shape()[2]
    }
}

/// Periodic Hann window, w[n] = 0.5 (1 - cos(2 pi n / len)).
pub fn hann_periodic(len: usize) -> Array1<f64> {
    Array1::from_iter(
        (0..len).map(|n| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())),
    )
}

fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    debug_assert!(n > pad, "reflect padding needs len > pad");
    let mut out = Vec::with_capacity(n + 2 * pad);
    for i in 0..pad {
        out.push(x[pad - i]);
    }
    out.extend_from_slice(x);
    for i in 0..pad {
        out.push(x[n - 2 - i]);
    }
    out
}

/// Centered, reflect-padded, Hann-windowed STFT of a multichannel signal.
pub fn stft(x: &Array2<f64>, config: &StftConfig) -> Result<Spectrogram> {
    config.validate()?;
    let (channels, len) = x.dim();
    if len < config.n_fft {
        return Err(Error::Domain(format!(
            "signal of {len} samples is shorter than one frame (n_fft = {})",
            config.n_fft
        )));
    }
    let n_fft = config.n_fft;
    let pad = n_fft / 2;
    let num_bins = config.num_bins();
    let num_frames = config.num_frames(len);
    let w = hann_periodic(n_fft);
    let alpha = config.scale();

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n_fft);
    let mut data = Array3::<Complex64>::zeros((channels, num_bins, num_frames));
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];

    for c in 0..channels {
        let padded = reflect_pad(x.row(c).as_slice().expect("row is contiguous"), pad);
        for t in 0..num_frames {
            let off = t * config.hop;
            for n in 0..n_fft {
                buf[n] = Complex64::new(padded[off + n] * w[n], 0.0);
            }
            fft.process(&mut buf);
            for f in 0..num_bins {
                data[[c, f, t]] = buf[f] * alpha;
            }
        }
    }

    Ok(Spectrogram { data, config: *config })
}

/// Least-squares (weighted overlap-add) inverse of [`stft`], with
/// window-sum compensation, cropped to `out_len` samples.
pub fn istft(s: &Spectrogram, out_len: usize) -> Result<Array2<f64>> {
    let config = &s.config;
    config.validate()?;
    let (channels, num_bins, num_frames) = s.data.dim();
    if num_bins != config.num_bins() {
        return Err(Error::Shape(format!(
            "spectrogram has {num_bins} bins, config implies {}",
            config.num_bins()
        )));
    }
    let n_fft = config.n_fft;
    let pad = n_fft / 2;
    let cover = (num_frames - 1) * config.hop + n_fft;
    if out_len + pad > cover {
        return Err(Error::Domain(format!(
            "{num_frames} frames cover at most {} output samples, requested {out_len}",
            cover - pad
        )));
    }
    let w = hann_periodic(n_fft);
    let wsum = window_square_sum(&w, config.hop, num_frames);
    let inv_scale = 1.0 / (config.scale() * n_fft as f64);

    let mut planner = FftPlanner::new();
    let ifft = planner.plan_fft_inverse(n_fft);
    let mut out = Array2::<f64>::zeros((channels, out_len));
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];

    for c in 0..channels {
        let mut acc = vec![0.0f64; cover];
        for t in 0..num_frames {
            for f in 0..num_bins {
                buf[f] = s.data[[c, f, t]];
            }
            // Hermitian extension of the one-sided spectrum.
            for f in 1..num_bins - 1 {
                buf[n_fft - f] = s.data[[c, f, t]].conj();
            }
            ifft.process(&mut buf);
            let off = t * config.hop;
            for n in 0..n_fft {
                acc[off + n] += w[n] * buf[n].re * inv_scale;
            }
        }
        for i in 0..out_len {
            let m = pad + i;
            out[[c, i]] = acc[m] / wsum[m].max(WINDOW_SUM_FLOOR);
        }
    }
    Ok(out)
}

/// Adjoint of [`istft`] as a linear map from the one-sided spectrogram to
/// the cropped time signal: maps a gradient w.r.t. the time output to the
/// gradient w.r.t. the spectrogram. Needed to backpropagate time-domain
/// loss terms into spectral masks.
pub fn istft_adjoint(
    dy: &Array2<f64>,
    config: &StftConfig,
    num_frames: usize,
) -> Result<Array3<Complex64>> {
    config.validate()?;
    let (channels, out_len) = dy.dim();
    let n_fft = config.n_fft;
    let pad = n_fft / 2;
    let cover = (num_frames - 1) * config.hop + n_fft;
    if out_len + pad > cover {
        return Err(Error::Shape(format!(
            "gradient of {out_len} samples does not fit {num_frames} frames"
        )));
    }
    let num_bins = config.num_bins();
    let w = hann_periodic(n_fft);
    let wsum = window_square_sum(&w, config.hop, num_frames);
    let inv_scale = 1.0 / (config.scale() * n_fft as f64);

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n_fft);
    let mut ds = Array3::<Complex64>::zeros((channels, num_bins, num_frames));
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];

    for c in 0..channels {
        let mut dacc = vec![0.0f64; cover];
        for i in 0..out_len {
            let m = pad + i;
            dacc[m] = dy[[c, i]] / wsum[m].max(WINDOW_SUM_FLOOR);
        }
        for t in 0..num_frames {
            let off = t * config.hop;
            for n in 0..n_fft {
                buf[n] = Complex64::new(w[n] * dacc[off + n] * inv_scale, 0.0);
            }
            fft.process(&mut buf);
            for f in 0..num_bins {
                let mut g = buf[f];
                if f > 0 && f < num_bins - 1 {
                    g += buf[n_fft - f].conj();
                }
                ds[[c, f, t]] = g;
            }
        }
    }
    Ok(ds)
}

fn window_square_sum(w: &Array1<f64>, hop: usize, num_frames: usize) -> Vec<f64> {
    let n_fft = w.len();
    let mut wsum = vec![0.0f64; (num_frames - 1) * hop + n_fft];
    for t in 0..num_frames {
        let off = t * hop;
        for n in 0..n_fft {
            wsum[off + n] += w[n] * w[n];
        }
    }
    wsum
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkMode {
    TrainRandom,
    ValidExhaustive,
    TestOverlapAdd,
}

/// Chunking plan in seconds; converted to samples at use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChunkPlan {
    pub chunk_len: f64,
    pub hop_len: f64,
    pub mode: ChunkMode,
}

impl ChunkPlan {
    pub fn new(chunk_len: f64, hop_len: f64, mode: ChunkMode) -> Result<Self> {
        let plan = Self { chunk_len, hop_len, mode };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.chunk_len > 0.0) || !(self.hop_len > 0.0) {
            return Err(Error::Config("chunk and hop lengths must be positive".into()));
        }
        if self.hop_len > self.chunk_len {
            return Err(Error::Config(format!(
                "hop {} s exceeds chunk length {} s",
                self.hop_len, self.chunk_len
            )));
        }
        if self.mode == ChunkMode::TestOverlapAdd && self.hop_len >= self.chunk_len {
            return Err(Error::Config(
                "overlap-add inference requires hop strictly shorter than the chunk".into(),
            ));
        }
        Ok(())
    }

    pub fn chunk_samples(&self, fs: f64) -> usize {
        (self.chunk_len * fs).round() as usize
    }

    pub fn hop_samples(&self, fs: f64) -> usize {
        (self.hop_len * fs).round() as usize
    }

    /// Closed-form chunk count for a track of `len` samples.
    pub fn num_chunks(&self, len: usize, fs: f64) -> usize {
        let chunk = self.chunk_samples(fs);
        let hop = self.hop_samples(fs);
        if len < chunk {
            return 0;
        }
        let full = (len - chunk) / hop + 1;
        match self.mode {
            ChunkMode::TrainRandom => (len / chunk).max(1),
            ChunkMode::ValidExhaustive => full,
            // A trailing partial chunk (zero-padded) when the hop grid
            // does not land exactly on the end of the track.
            ChunkMode::TestOverlapAdd => full + usize::from((len - chunk) % hop != 0),
        }
    }
}

/// Extract chunks of a signal according to a plan. Offsets are in samples;
/// every returned chunk has exactly `chunk_samples` columns, the final
/// overlap-add chunk zero-padded if it runs past the end of the track.
pub fn chunk<R: Rng>(
    x: &Array2<f64>,
    plan: &ChunkPlan,
    fs: f64,
    rng: &mut R,
) -> Result<Vec<(usize, Array2<f64>)>> {
    plan.validate()?;
    let (channels, len) = x.dim();
    let chunk = plan.chunk_samples(fs);
    let hop = plan.hop_samples(fs);
    if len < chunk {
        return Err(Error::Domain(format!(
            "track of {len} samples is shorter than one {chunk}-sample chunk"
        )));
    }

    let mut offsets = Vec::new();
    match plan.mode {
        ChunkMode::TrainRandom => {
            for _ in 0..plan.num_chunks(len, fs) {
                offsets.push(if len == chunk { 0 } else { rng.gen_range(0..=len - chunk) });
            }
        }
        ChunkMode::ValidExhaustive => {
            let mut off = 0;
            while off + chunk <= len {
                offsets.push(off);
                off += hop;
            }
        }
        ChunkMode::TestOverlapAdd => {
            let mut off = 0;
            while off + chunk <= len {
                offsets.push(off);
                off += hop;
            }
            if (len - chunk) % hop != 0 {
                offsets.push(off);
            }
        }
    }

    Ok(offsets
        .into_iter()
        .map(|off| {
            let mut c = Array2::<f64>::zeros((channels, chunk));
            let avail = chunk.min(len - off);
            c.slice_mut(ndarray::s![.., ..avail])
                .assign(&x.slice(ndarray::s![.., off..off + avail]));
            (off, c)
        })
        .collect())
}

/// Recombine processed chunks with Hann-windowed overlap-add and
/// window-sum compensation. Where the accumulated window sum is too small
/// (the outer halves of the first and last chunks) the raw boundary chunk
/// is used directly instead of dividing by a vanishing envelope.
pub fn overlap_add(chunks: &[(usize, Array2<f64>)], total_len: usize) -> Result<Array2<f64>> {
    if chunks.is_empty() {
        return Err(Error::Config("no chunks to recombine".into()));
    }
    let channels = chunks[0].1.nrows();
    let chunk_len = chunks[0].1.ncols();
    let mut order: Vec<usize> = (0..chunks.len()).collect();
    order.sort_by_key(|&i| chunks[i].0);

    // Coverage validation: no gaps, full span.
    let mut prev_end = 0usize;
    for (rank, &i) in order.iter().enumerate() {
        let (off, ref sig) = chunks[i];
        if sig.nrows() != channels || sig.ncols() != chunk_len {
            return Err(Error::Shape("chunks must share channel count and length".into()));
        }
        if rank == 0 && off != 0 {
            return Err(Error::Config(format!("coverage gap: first chunk starts at {off}")));
        }
        if rank > 0 && off > prev_end {
            return Err(Error::Config(format!(
                "coverage gap between samples {prev_end} and {off}"
            )));
        }
        prev_end = off + chunk_len;
    }
    if prev_end < total_len {
        return Err(Error::Config(format!(
            "coverage gap: chunks end at {prev_end}, track has {total_len} samples"
        )));
    }

    let w = hann_periodic(chunk_len);
    let span = prev_end;
    let mut acc = Array2::<f64>::zeros((channels, span));
    let mut wsum = vec![0.0f64; span];
    for &i in &order {
        let (off, ref sig) = chunks[i];
        for n in 0..chunk_len {
            wsum[off + n] += w[n];
        }
        for c in 0..channels {
            for n in 0..chunk_len {
                acc[[c, off + n]] += w[n] * sig[[c, n]];
            }
        }
    }

    let first = order[0];
    let last = *order.last().unwrap();
    let mut out = Array2::<f64>::zeros((channels, total_len));
    for m in 0..total_len {
        if wsum[m] >= EDGE_FALLBACK_THRESHOLD {
            for c in 0..channels {
                out[[c, m]] = acc[[c, m]] / wsum[m].max(WINDOW_SUM_FLOOR);
            }
        } else {
            // Rectangular fallback at the track edges.
            let (off, sig) = if m < chunks[first].0 + chunk_len {
                (&chunks[first].0, &chunks[first].1)
            } else {
                (&chunks[last].0, &chunks[last].1)
            };
            for c in 0..channels {
                out[[c, m]] = sig[[c, m - off]];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_signal(channels: usize, len: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((channels, len), |_| rng.gen_range(-1.0..1.0))
    }

    fn snr_db(est: &Array2<f64>, reference: &Array2<f64>) -> f64 {
        let sig: f64 = reference.iter().map(|v| v * v).sum();
        let err: f64 = est
            .iter()
            .zip(reference.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        10.0 * (sig / err).log10()
    }

    #[test]
    fn zero_signal_gives_zero_spectrogram() {
        let cfg = StftConfig { n_fft: 256, hop: 64, fs: 8000.0, ..Default::default() };
        let x = Array2::<f64>::zeros((1, 1024));
        let s = stft(&x, &cfg).unwrap();
        assert!(s.data.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn round_trip_exceeds_100_db() {
        let cfg = StftConfig::default();
        let x = random_signal(1, 3 * 44100, 7);
        let s = stft(&x, &cfg).unwrap();
        let y = istft(&s, x.ncols()).unwrap();
        let snr = snr_db(&y, &x);
        assert!(snr >= 100.0, "round-trip SNR {snr} dB");
    }

    #[test]
    fn round_trip_stereo_small_config() {
        let cfg = StftConfig { n_fft: 512, hop: 128, fs: 8000.0, ..Default::default() };
        let x = random_signal(2, 16000, 3);
        let s = stft(&x, &cfg).unwrap();
        let y = istft(&s, x.ncols()).unwrap();
        assert!(snr_db(&y, &x) >= 100.0);
    }

    #[test]
    fn masked_by_ones_equals_plain_round_trip() {
        let cfg = StftConfig { n_fft: 512, hop: 128, fs: 8000.0, ..Default::default() };
        let x = random_signal(1, 16000, 11);
        let mut s = stft(&x, &cfg).unwrap();
        s.data.mapv_inplace(|v| v * Complex64::new(1.0, 0.0));
        let y = istft(&s, x.ncols()).unwrap();
        assert!(snr_db(&y, &x) >= 100.0);
    }

    #[test]
    fn energy_is_parseval_balanced() {
        let cfg = StftConfig::default();
        for seed in [1, 2, 3] {
            let x = random_signal(1, 3 * 44100, seed);
            let s = stft(&x, &cfg).unwrap();
            let spec_energy: f64 = s.data.iter().map(|v| v.norm_sqr()).sum();
            let time_energy: f64 = x.iter().map(|v| v * v).sum();
            let ratio = spec_energy / time_energy;
            assert!((ratio - 1.0).abs() <= 0.01, "energy ratio {ratio}");
        }
    }

    #[test]
    fn stft_is_linear() {
        let cfg = StftConfig { n_fft: 256, hop: 64, fs: 8000.0, ..Default::default() };
        let x = random_signal(1, 4000, 21);
        let y = random_signal(1, 4000, 22);
        let a = 1.7;
        let sx = stft(&x, &cfg).unwrap();
        let sy = stft(&y, &cfg).unwrap();
        let combo = stft(&(a * &x + &y), &cfg).unwrap();
        let mut max_rel = 0.0f64;
        let mut max_mag = 0.0f64;
        for (lhs, (vx, vy)) in combo.data.iter().zip(sx.data.iter().zip(sy.data.iter())) {
            let rhs = vx * a + vy;
            max_rel = max_rel.max((lhs - rhs).norm());
            max_mag = max_mag.max(rhs.norm());
        }
        assert!(max_rel <= 1e-9 * max_mag, "linearity residual {max_rel}");
    }

    #[test]
    fn tone_energy_concentrates_at_its_bin() {
        // Pure tone at an exact bin center; compare against a naive DFT of
        // one windowed frame.
        let cfg = StftConfig { n_fft: 1024, hop: 256, fs: 44100.0, ..Default::default() };
        let bin = 100;
        let freq = bin as f64 * cfg.fs / cfg.n_fft as f64;
        let n = 3 * 44100;
        let x = Array2::from_shape_fn((1, n), |(_, i)| {
            (2.0 * std::f64::consts::PI * freq * i as f64 / cfg.fs).sin()
        });
        let s = stft(&x, &cfg).unwrap();
        // Pick an interior frame and check concentration around `bin`.
        let t = s.num_frames() / 2;
        let total: f64 = (0..s.num_bins()).map(|f| s.data[[0, f, t]].norm_sqr()).sum();
        let near: f64 = (bin - 2..=bin + 2).map(|f| s.data[[0, f, t]].norm_sqr()).sum();
        assert!(near / total >= 0.99, "concentration {}", near / total);

        // Naive windowed DFT of the same frame agrees with the library.
        let w = hann_periodic(cfg.n_fft);
        let off = t * cfg.hop; // frame t starts at off - pad in signal coords
        let pad = cfg.n_fft / 2;
        let alpha = cfg.scale();
        for f in [bin - 1, bin, bin + 1] {
            let mut re = 0.0;
            let mut im = 0.0;
            for nn in 0..cfg.n_fft {
                let idx = off + nn;
                let sample = if idx < pad { x[[0, pad - idx]] } else { x[[0, idx - pad]] };
                let phase = -2.0 * std::f64::consts::PI * (f * nn) as f64 / cfg.n_fft as f64;
                re += sample * w[nn] * phase.cos();
                im += sample * w[nn] * phase.sin();
            }
            let naive = Complex64::new(re * alpha, im * alpha);
            let got = s.data[[0, f, t]];
            assert!((naive - got).norm() <= 1e-9 * naive.norm().max(1.0));
        }
    }

    #[test]
    fn short_signal_is_rejected() {
        let cfg = StftConfig::default();
        let x = Array2::<f64>::zeros((1, 1024));
        assert!(stft(&x, &cfg).is_err());
    }

    #[test]
    fn istft_rejects_overlong_output() {
        let cfg = StftConfig { n_fft: 256, hop: 64, fs: 8000.0, ..Default::default() };
        let x = random_signal(1, 1024, 5);
        let s = stft(&x, &cfg).unwrap();
        assert!(istft(&s, 4096).is_err());
    }

    #[test]
    fn istft_adjoint_matches_inner_products() {
        let cfg = StftConfig { n_fft: 64, hop: 16, fs: 1000.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let out_len = 300;
        let num_frames = cfg.num_frames(out_len);
        let spec_data = Array3::from_shape_fn((1, cfg.num_bins(), num_frames), |_| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let s = Spectrogram { data: spec_data, config: cfg };
        let v = Array2::from_shape_fn((1, out_len), |_| rng.gen_range(-1.0..1.0));

        let ls = istft(&s, out_len).unwrap();
        let lt_v = istft_adjoint(&v, &cfg, num_frames).unwrap();

        let lhs: f64 = ls.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
        let rhs: f64 = s
            .data
            .iter()
            .zip(lt_v.iter())
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum();
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn chunk_counts_match_closed_forms() {
        let fs = 1000.0;
        let valid = ChunkPlan::new(6.0, 1.0, ChunkMode::ValidExhaustive).unwrap();
        let test = ChunkPlan::new(6.0, 0.5, ChunkMode::TestOverlapAdd).unwrap();
        let x = random_signal(1, 60_000, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(chunk(&x, &valid, fs, &mut rng).unwrap().len(), 55);
        assert_eq!(chunk(&x, &test, fs, &mut rng).unwrap().len(), 109);

        let short = random_signal(1, 6000, 2);
        for plan in [
            ChunkPlan::new(6.0, 1.0, ChunkMode::TrainRandom).unwrap(),
            valid,
            test,
        ] {
            let cs = chunk(&short, &plan, fs, &mut rng).unwrap();
            assert_eq!(cs.len(), 1, "{:?}", plan.mode);
            assert_eq!(cs[0].0, 0);
        }
    }

    proptest::proptest! {
        #[test]
        fn chunk_count_formula_holds(len in 6_000usize..50_000) {
            let fs = 1000.0;
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            for plan in [
                ChunkPlan::new(6.0, 1.0, ChunkMode::ValidExhaustive).unwrap(),
                ChunkPlan::new(6.0, 0.5, ChunkMode::TestOverlapAdd).unwrap(),
            ] {
                let x = Array2::<f64>::zeros((1, len));
                let got = chunk(&x, &plan, fs, &mut rng).unwrap().len();
                proptest::prop_assert_eq!(got, plan.num_chunks(len, fs));
            }
        }
    }

    #[test]
    fn overlap_add_identity_pipeline() {
        let fs = 1000.0;
        let plan = ChunkPlan::new(6.0, 0.5, ChunkMode::TestOverlapAdd).unwrap();
        let x = random_signal(1, 60_000, 33);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let chunks = chunk(&x, &plan, fs, &mut rng).unwrap();
        let y = overlap_add(&chunks, x.ncols()).unwrap();
        let snr = snr_db(&y, &x);
        assert!(snr >= 60.0, "identity reconstruction SNR {snr} dB");
    }

    #[test]
    fn overlap_add_identity_with_partial_tail() {
        let fs = 1000.0;
        let plan = ChunkPlan::new(6.0, 0.5, ChunkMode::TestOverlapAdd).unwrap();
        let x = random_signal(1, 61_300, 34);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let chunks = chunk(&x, &plan, fs, &mut rng).unwrap();
        assert_eq!(chunks.len(), plan.num_chunks(61_300, fs));
        let y = overlap_add(&chunks, x.ncols()).unwrap();
        assert!(snr_db(&y, &x) >= 60.0);
    }

    #[test]
    fn single_chunk_passes_through() {
        let x = random_signal(2, 6000, 35);
        let y = overlap_add(&[(0, x.clone())], 6000).unwrap();
        let diff: f64 = y.iter().zip(x.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff <= 1e-12, "max deviation {diff}");
    }

    #[test]
    fn constant_signal_survives_compensation() {
        let fs = 1000.0;
        let plan = ChunkPlan::new(2.0, 0.25, ChunkMode::TestOverlapAdd).unwrap();
        let x = Array2::<f64>::ones((1, 10_000));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let chunks = chunk(&x, &plan, fs, &mut rng).unwrap();
        let y = overlap_add(&chunks, x.ncols()).unwrap();
        for &v in y.iter() {
            assert!((v - 1.0).abs() <= 1e-6, "got {v}");
        }
    }

    #[test]
    fn coverage_gaps_are_rejected() {
        let a = Array2::<f64>::zeros((1, 100));
        // Starts past zero.
        assert!(overlap_add(&[(10, a.clone())], 110).is_err());
        // Interior gap.
        assert!(overlap_add(&[(0, a.clone()), (150, a.clone())], 250).is_err());
        // Ends short of the track.
        assert!(overlap_add(&[(0, a.clone())], 150).is_err());
    }
}
