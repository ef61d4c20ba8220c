//! Closed-form frequency-scale maps (Hz -> scale units and back) and the
//! center-frequency grid used to place band filters.
//!
//! Four scales are supported: mel, Bark (the asinh approximation), the ERB
//! scale in its natural-log form, and the 12-TET musical scale (unrounded
//! MIDI note numbers with a low-frequency clamp).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mel scale constant: z = 2595 * log10(1 + f/700).
const MEL_SCALE: f64 = 2595.0;
const MEL_BREAK: f64 = 700.0;

/// Bark scale: z = 6 * asinh(f/600).
const BARK_SCALE: f64 = 6.0;
const BARK_BREAK: f64 = 600.0;

/// ERB scale: z = ln(1 + a*f) / (24.7 * a) with a = 4.37e-3.
const ERB_A: f64 = 4.37e-3;
const ERB_Q: f64 = 24.7 * ERB_A;

/// MIDI note number of the reference pitch.
const MIDI_REF: f64 = 69.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleKind {
    Mel,
    Bark,
    Erb,
    Musical,
}

/// A frequency scale bound to a sampling rate and FFT size, carrying the
/// scale-unit range [z_min, z_max] that spans DC..Nyquist.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyScale {
    pub kind: ScaleKind,
    pub fs: f64,
    pub n_fft: usize,
    /// Reference pitch in Hz; only meaningful for the musical scale.
    pub f_ref: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl FrequencyScale {
    pub fn new(kind: ScaleKind, fs: f64, n_fft: usize) -> Result<Self> {
        Self::with_f_ref(kind, fs, n_fft, 440.0)
    }

    pub fn with_f_ref(kind: ScaleKind, fs: f64, n_fft: usize, f_ref: f64) -> Result<Self> {
        if !(fs > 0.0) {
            return Err(Error::Config(format!("sampling rate must be positive, got {fs}")));
        }
        if n_fft < 2 || n_fft % 2 != 0 {
            return Err(Error::Config(format!("n_fft must be even and >= 2, got {n_fft}")));
        }
        if !(f_ref > 0.0) {
            return Err(Error::Config(format!("reference pitch must be positive, got {f_ref}")));
        }
        let z_min = match kind {
            ScaleKind::Mel | ScaleKind::Bark | ScaleKind::Erb => 0.0,
            // The musical map diverges to -inf at DC, so the minimum is
            // pinned at the first FFT bin frequency fs/n_fft.
            ScaleKind::Musical => midi_unclamped(fs / n_fft as f64, f_ref),
        };
        let z_max = match kind {
            ScaleKind::Mel => hz_to_mel(0.5 * fs),
            ScaleKind::Bark => hz_to_bark(0.5 * fs),
            ScaleKind::Erb => hz_to_erb(0.5 * fs),
            ScaleKind::Musical => midi_unclamped(0.5 * fs, f_ref),
        };
        Ok(Self { kind, fs, n_fft, f_ref, z_min, z_max })
    }

    /// Map a frequency in Hz to scale units. The musical scale clamps at
    /// `z_min`; the others hit 0 exactly at DC.
    pub fn hz_to_scale(&self, f: f64) -> Result<f64> {
        if !f.is_finite() || f < 0.0 || f > 0.5 * self.fs * (1.0 + 1e-12) {
            return Err(Error::Domain(format!(
                "frequency {f} Hz outside [0, {}] (Nyquist)",
                0.5 * self.fs
            )));
        }
        Ok(match self.kind {
            ScaleKind::Mel => hz_to_mel(f),
            ScaleKind::Bark => hz_to_bark(f),
            ScaleKind::Erb => hz_to_erb(f),
            ScaleKind::Musical => {
                if f <= 0.0 {
                    self.z_min
                } else {
                    midi_unclamped(f, self.f_ref).max(self.z_min)
                }
            }
        })
    }

    /// Inverse map on the unclamped branch. The domain is [z_min, z_max].
    pub fn scale_to_hz(&self, z: f64) -> Result<f64> {
        let tol = 1e-9 * self.z_max.abs().max(1.0);
        if !z.is_finite() || z < self.z_min - tol || z > self.z_max + tol {
            return Err(Error::Domain(format!(
                "scale value {z} outside [{}, {}]",
                self.z_min, self.z_max
            )));
        }
        Ok(match self.kind {
            ScaleKind::Mel => mel_to_hz(z),
            ScaleKind::Bark => bark_to_hz(z),
            ScaleKind::Erb => erb_to_hz(z),
            ScaleKind::Musical => self.f_ref * ((z - MIDI_REF) / 12.0).exp2(),
        })
    }

    /// Center frequencies in scale units for a `b`-band filterbank,
    /// including the edge anchors at n = -1 and n = B: the returned vector
    /// has B + 2 entries, entry `i` holding zeta_{i-1}.
    ///
    /// zeta_n = z_min + (z_max - z_min) * (n + 1) / (B + 2), which reduces
    /// to z_max * (n + 1) / (B + 2) whenever z_min = 0.
    pub fn center_frequencies(&self, num_bands: usize) -> Result<Vec<f64>> {
        if num_bands < 1 {
            return Err(Error::Config("band count must be >= 1".into()));
        }
        let span = self.z_max - self.z_min;
        let denom = (num_bands + 2) as f64;
        Ok((0..num_bands + 2)
            .map(|i| self.z_min + span * i as f64 / denom)
            .collect())
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    MEL_SCALE * (1.0 + f / MEL_BREAK).log10()
}

pub fn mel_to_hz(z: f64) -> f64 {
    MEL_BREAK * (10f64.powf(z / MEL_SCALE) - 1.0)
}

pub fn hz_to_bark(f: f64) -> f64 {
    BARK_SCALE * (f / BARK_BREAK).asinh()
}

pub fn bark_to_hz(z: f64) -> f64 {
    BARK_BREAK * (z / BARK_SCALE).sinh()
}

pub fn hz_to_erb(f: f64) -> f64 {
    (1.0 + ERB_A * f).ln() / ERB_Q
}

pub fn erb_to_hz(z: f64) -> f64 {
    ((ERB_Q * z).exp() - 1.0) / ERB_A
}

/// Unrounded MIDI note number, without the low-frequency clamp.
fn midi_unclamped(f: f64, f_ref: f64) -> f64 {
    MIDI_REF + 12.0 * (f / f_ref).log2()
}
