//! Band definitions: filterbank weights over FFT bins, their normalization
//! and binarization into per-band bin ranges, and JSON (de)serialization.
//!
//! A [`BandSpec`] is the single source of truth for both splitting a
//! spectrogram into subbands and recombining bandwise masks: the weight
//! matrix `W` (bands x bins) is column-normalized so every bin's weights
//! sum to 1, and band membership is exactly `W[b, f] > 0`.

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::Spectrogram;
use crate::error::{Error, Result};
use crate::scales::{FrequencyScale, ScaleKind};

/// Half-width of the unit plateau of the trapezoid Bark filters, in Barks.
const BARK_PLATEAU: f64 = 0.5;

/// Column sums further than this from 1 are rejected when loading.
const COLUMN_SUM_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandKind {
    Mel,
    TriBark,
    Bark,
    Erb,
    Musical,
    Custom,
}

impl BandKind {
    fn scale_kind(self) -> Option<ScaleKind> {
        match self {
            BandKind::Mel => Some(ScaleKind::Mel),
            BandKind::Bark | BandKind::TriBark => Some(ScaleKind::Bark),
            BandKind::Erb => Some(ScaleKind::Erb),
            BandKind::Musical => Some(ScaleKind::Musical),
            BandKind::Custom => None,
        }
    }
}

/// Filterbank weights plus the binarized band index ranges they induce.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSpec {
    pub kind: BandKind,
    pub fs: f64,
    pub n_fft: usize,
    /// Weight matrix, `num_bands x num_bins`, entries in [0, 1], columns
    /// summing to 1.
    weights: Array2<f64>,
    /// Per-band bin ranges; band b owns bins `bins[b].0 .. bins[b].1`.
    bins: Vec<(usize, usize)>,
}

/// One band's slice of a spectrogram, rows in ascending bin order.
#[derive(Debug, Clone)]
pub struct Subband {
    pub band: usize,
    /// Complex tensor, channels x band bins x frames.
    pub data: Array3<Complex64>,
}

/// Serialized form: weights as a dense row-major array.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BandSpecFile {
    kind: BandKind,
    fs: f64,
    n_fft: usize,
    #[serde(rename = "B")]
    num_bands: usize,
    weights: Vec<f64>,
}

impl Serialize for BandSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        BandSpecFile {
            kind: self.kind,
            fs: self.fs,
            n_fft: self.n_fft,
            num_bands: self.num_bands(),
            weights: self.weights.iter().copied().collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BandSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let file = BandSpecFile::deserialize(deserializer)?;
        BandSpec::try_from(file).map_err(serde::de::Error::custom)
    }
}

impl TryFrom<BandSpecFile> for BandSpec {
    type Error = Error;

    fn try_from(file: BandSpecFile) -> Result<Self> {
        let num_bins = file.n_fft / 2 + 1;
        if file.weights.len() != file.num_bands * num_bins {
            return Err(Error::Config(format!(
                "weights array has {} entries, expected {} x {}",
                file.weights.len(),
                file.num_bands,
                num_bins
            )));
        }
        let weights = Array2::from_shape_vec((file.num_bands, num_bins), file.weights)
            .expect("size checked above");
        let bins = binarize(&weights)
            .map_err(|b| Error::Config(format!("band {b} contains no bins")))?;
        let spec = Self { kind: file.kind, fs: file.fs, n_fft: file.n_fft, weights, bins };
        spec.validate()?;
        Ok(spec)
    }
}

/// One row of the band table (frequency range per band).
#[derive(Debug, Clone, Serialize)]
pub struct BandRow {
    pub band: usize,
    pub f_lo_hz: f64,
    pub f_hi_hz: f64,
    pub width_bins: usize,
}

impl BandSpec {
    /// Build a band spec for one of the built-in kinds.
    pub fn build(kind: BandKind, fs: f64, n_fft: usize, num_bands: usize) -> Result<Self> {
        if kind == BandKind::Custom {
            return Err(Error::Config(
                "custom band specs are loaded from JSON, not built".into(),
            ));
        }
        if num_bands < 2 {
            return Err(Error::Config(format!("band count must be >= 2, got {num_bands}")));
        }
        if n_fft < 2 || n_fft % 2 != 0 {
            return Err(Error::Config(format!("n_fft must be even and >= 2, got {n_fft}")));
        }
        if !(fs > 0.0) {
            return Err(Error::Config(format!("sampling rate must be positive, got {fs}")));
        }

        let scale = FrequencyScale::new(kind.scale_kind().unwrap(), fs, n_fft)?;
        let zetas = scale.center_frequencies(num_bands)?; // zetas[i] = zeta_{i-1}
        let num_bins = n_fft / 2 + 1;
        let bin_hz = fs / n_fft as f64;

        let mut weights = Array2::<f64>::zeros((num_bands, num_bins));
        match kind {
            BandKind::Mel | BandKind::TriBark | BandKind::Erb => {
                // Triangles linear in Hz between the edge frequencies.
                let edges_hz: Vec<f64> =
                    zetas.iter().map(|&z| scale.scale_to_hz(z)).collect::<Result<_>>()?;
                for b in 0..num_bands {
                    let (lo, c, hi) = (edges_hz[b], edges_hz[b + 1], edges_hz[b + 2]);
                    for k in 0..num_bins {
                        let g = k as f64 * bin_hz;
                        if g > lo && g < hi {
                            weights[[b, k]] = if g <= c {
                                (g - lo) / (c - lo)
                            } else {
                                (hi - g) / (hi - c)
                            };
                        }
                    }
                }
            }
            BandKind::Bark => {
                // Trapezoids in Bark units: unit plateau of +-0.5 Bark
                // around the center, linear skirts down to the neighbor
                // centers. When the centers are closer than the plateau
                // half-width the skirts vanish and the filter degenerates
                // to a rectangle over the plateau.
                for b in 0..num_bands {
                    let (lo, c, hi) = (zetas[b], zetas[b + 1], zetas[b + 2]);
                    let plat_lo = c - BARK_PLATEAU;
                    let plat_hi = c + BARK_PLATEAU;
                    for k in 0..num_bins {
                        let u = scale.hz_to_scale(k as f64 * bin_hz)?;
                        weights[[b, k]] = if u >= plat_lo && u <= plat_hi {
                            1.0
                        } else if u > lo && u < plat_lo {
                            (u - lo) / (plat_lo - lo)
                        } else if u > plat_hi && u < hi {
                            (hi - u) / (hi - plat_hi)
                        } else {
                            0.0
                        };
                    }
                }
            }
            BandKind::Musical => {
                // Rectangles between the neighbor centers: constant
                // bandwidth in cents for interior bands, discretized to
                // the FFT grid by rounding the edges outward so even
                // sub-bin-wide low bands keep at least one bin.
                for b in 0..num_bands {
                    let lo_hz = scale.scale_to_hz(zetas[b])?;
                    let hi_hz = scale.scale_to_hz(zetas[b + 2])?;
                    let k_lo = (lo_hz / bin_hz).floor() as usize;
                    let k_hi = ((hi_hz / bin_hz).ceil() as usize).min(num_bins - 1);
                    for k in k_lo..=k_hi {
                        weights[[b, k]] = 1.0;
                    }
                }
            }
            BandKind::Custom => unreachable!(),
        }

        // Rescue bins left uncovered at the extremes (the top filter edge
        // sits below Nyquist by construction): assign them to the nearest
        // band by center frequency.
        let centers_hz: Vec<f64> = (0..num_bands)
            .map(|b| scale.scale_to_hz(zetas[b + 1]))
            .collect::<Result<_>>()?;
        for k in 0..num_bins {
            let col_sum: f64 = (0..num_bands).map(|b| weights[[b, k]]).sum();
            if col_sum == 0.0 {
                let g = k as f64 * bin_hz;
                let nearest = (0..num_bands)
                    .min_by(|&a, &b| {
                        (centers_hz[a] - g)
                            .abs()
                            .total_cmp(&(centers_hz[b] - g).abs())
                    })
                    .unwrap();
                weights[[nearest, k]] = 1.0;
            }
        }

        normalize_columns(&mut weights);
        let bins = binarize(&weights).map_err(|b| {
            Error::Config(format!(
                "band {b} of {kind:?}/{num_bands} at fs {fs} n_fft {n_fft} contains no bins; \
                 reduce the band count"
            ))
        })?;

        let spec = Self { kind, fs, n_fft, weights, bins };
        spec.validate()?;
        Ok(spec)
    }

    pub fn num_bands(&self) -> usize {
        self.weights.nrows()
    }

    pub fn num_bins(&self) -> usize {
        self.weights.ncols()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    /// Bin range of band `b` as a half-open range `(lo, hi)`.
    pub fn band_bins(&self, b: usize) -> (usize, usize) {
        self.bins[b]
    }

    pub fn band_width(&self, b: usize) -> usize {
        let (lo, hi) = self.bins[b];
        hi - lo
    }

    /// Total bin count over all bands; >= num_bins when bands overlap.
    pub fn total_band_bins(&self) -> usize {
        (0..self.num_bands()).map(|b| self.band_width(b)).sum()
    }

    /// Slice a spectrogram into one subband per band.
    pub fn split(&self, x: &Spectrogram) -> Result<Vec<Subband>> {
        if x.num_bins() != self.num_bins() {
            return Err(Error::Shape(format!(
                "spectrogram has {} bins but the band spec expects {}",
                x.num_bins(),
                self.num_bins()
            )));
        }
        Ok((0..self.num_bands())
            .map(|b| {
                let (lo, hi) = self.bins[b];
                Subband {
                    band: b,
                    data: x.data.slice(ndarray::s![.., lo..hi, ..]).to_owned(),
                }
            })
            .collect())
    }

    /// Validate every invariant: shapes, entry range, column sums,
    /// coverage, binarization consistency, contiguity.
    pub fn validate(&self) -> Result<()> {
        let (num_bands, num_bins) = self.weights.dim();
        if num_bins != self.n_fft / 2 + 1 {
            return Err(Error::Config(format!(
                "weight matrix has {num_bins} bins but n_fft {} implies {}",
                self.n_fft,
                self.n_fft / 2 + 1
            )));
        }
        if self.bins.len() != num_bands {
            return Err(Error::Config("bin ranges out of sync with weights".into()));
        }
        for (b, row) in self.weights.rows().into_iter().enumerate() {
            let (lo, hi) = self.bins[b];
            if lo >= hi {
                return Err(Error::Config(format!("band {b} contains no bins")));
            }
            for (k, &w) in row.iter().enumerate() {
                if !(0.0..=1.0 + 1e-12).contains(&w) {
                    return Err(Error::Config(format!(
                        "weight [{b}, {k}] = {w} outside [0, 1]"
                    )));
                }
                let inside = k >= lo && k < hi;
                if (w > 0.0) != inside {
                    return Err(Error::Config(format!(
                        "band {b} is not contiguous: bin {k} has weight {w} against range \
                         [{lo}, {hi})"
                    )));
                }
            }
        }
        for k in 0..num_bins {
            let col_sum: f64 = self.weights.column(k).sum();
            if col_sum == 0.0 {
                return Err(Error::Config(format!("uncovered bin {k}: zero weight column")));
            }
            if (col_sum - 1.0).abs() > COLUMN_SUM_TOL {
                return Err(Error::Config(format!(
                    "column {k} sums to {col_sum}, violating normalization"
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = BandSpecFile {
            kind: self.kind,
            fs: self.fs,
            n_fft: self.n_fft,
            num_bands: self.num_bands(),
            weights: self.weights.iter().copied().collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Load a spec from JSON, re-deriving bin ranges from the weights and
    /// re-validating every invariant.
    pub fn from_json(json: &str) -> Result<Self> {
        let file: BandSpecFile = serde_json::from_str(json)?;
        Self::try_from(file)
    }

    /// Build a spec directly from a weight matrix (used for custom band
    /// layouts in code; the JSON path covers files).
    pub fn from_weights(kind: BandKind, fs: f64, n_fft: usize, weights: Array2<f64>) -> Result<Self> {
        let bins = binarize(&weights)
            .map_err(|b| Error::Config(format!("band {b} contains no bins")))?;
        let spec = Self { kind, fs, n_fft, weights, bins };
        spec.validate()?;
        Ok(spec)
    }

    /// Frequency range table, one row per band.
    pub fn band_table(&self) -> Vec<BandRow> {
        let bin_hz = self.fs / self.n_fft as f64;
        (0..self.num_bands())
            .map(|b| {
                let (lo, hi) = self.bins[b];
                BandRow {
                    band: b,
                    f_lo_hz: lo as f64 * bin_hz,
                    f_hi_hz: (hi - 1) as f64 * bin_hz,
                    width_bins: hi - lo,
                }
            })
            .collect()
    }

    pub fn band_table_csv(&self) -> String {
        let mut out = String::from("band,f_lo_hz,f_hi_hz,width_bins\n");
        for row in self.band_table() {
            out.push_str(&format!(
                "{},{:.3},{:.3},{}\n",
                row.band, row.f_lo_hz, row.f_hi_hz, row.width_bins
            ));
        }
        out
    }
}

fn normalize_columns(weights: &mut Array2<f64>) {
    for mut col in weights.columns_mut() {
        let sum: f64 = col.sum();
        if sum > 0.0 {
            col.mapv_inplace(|w| w / sum);
        }
    }
}

/// Derive per-band contiguous bin ranges from strict positivity of the
/// weights. Returns the offending band index if one is empty.
fn binarize(weights: &Array2<f64>) -> std::result::Result<Vec<(usize, usize)>, usize> {
    let mut bins = Vec::with_capacity(weights.nrows());
    for (b, row) in weights.rows().into_iter().enumerate() {
        let lo = row.iter().position(|&w| w > 0.0).ok_or(b)?;
        let hi = row.iter().rposition(|&w| w > 0.0).unwrap() + 1;
        bins.push((lo, hi));
    }
    Ok(bins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::StftConfig;
    use ndarray::Array3;

    const ALL_KINDS: [BandKind; 5] = [
        BandKind::Mel,
        BandKind::TriBark,
        BandKind::Bark,
        BandKind::Erb,
        BandKind::Musical,
    ];

    fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
        fn ranks(v: &[f64]) -> Vec<f64> {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
            let mut r = vec![0.0; v.len()];
            let mut i = 0;
            while i < idx.len() {
                let mut j = i;
                while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                    j += 1;
                }
                let avg = (i + j) as f64 / 2.0 + 1.0;
                for k in i..=j {
                    r[idx[k]] = avg;
                }
                i = j + 1;
            }
            r
        }
        let rx = ranks(xs);
        let ry = ranks(ys);
        let n = xs.len() as f64;
        let mx = rx.iter().sum::<f64>() / n;
        let my = ry.iter().sum::<f64>() / n;
        let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
        cov / (vx * vy).sqrt()
    }

    #[test]
    fn invariants_hold_for_all_kinds_and_sizes() {
        for kind in ALL_KINDS {
            for num_bands in [8usize, 48, 64] {
                let spec = BandSpec::build(kind, 44100.0, 2048, num_bands)
                    .unwrap_or_else(|e| panic!("{kind:?}/{num_bands}: {e}"));
                spec.validate().unwrap();
                // Coverage of every bin.
                let mut covered = vec![false; spec.num_bins()];
                for b in 0..spec.num_bands() {
                    let (lo, hi) = spec.band_bins(b);
                    for c in covered[lo..hi].iter_mut() {
                        *c = true;
                    }
                }
                assert!(covered.iter().all(|&c| c), "{kind:?}/{num_bands} leaves bins uncovered");
                // Column sums exactly normalized.
                for k in 0..spec.num_bins() {
                    let s: f64 = spec.weights().column(k).sum();
                    assert!((s - 1.0).abs() < 1e-6, "{kind:?}/{num_bands} column {k}: {s}");
                }
                // Adjacent bands overlap.
                for b in 0..spec.num_bands() - 1 {
                    let (_, hi) = spec.band_bins(b);
                    let (lo2, _) = spec.band_bins(b + 1);
                    assert!(lo2 < hi, "{kind:?}/{num_bands}: bands {b},{} disjoint", b + 1);
                }
            }
        }
    }

    #[test]
    fn triangular_rows_are_unimodal() {
        for kind in [BandKind::Mel, BandKind::TriBark, BandKind::Erb] {
            let spec = BandSpec::build(kind, 44100.0, 2048, 48).unwrap();
            for b in 0..spec.num_bands() {
                let (lo, hi) = spec.band_bins(b);
                let row: Vec<f64> = (lo..hi).map(|k| spec.weights()[[b, k]]).collect();
                let peak = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .unwrap();
                // Normalization can dent the raw triangle where neighbor
                // coverage changes, so check the rise/fall of the raw
                // pre-normalization shape via non-strict monotonicity with
                // a small slack.
                for w in row[..=peak].windows(2) {
                    assert!(w[1] >= w[0] - 1e-9, "{kind:?} band {b} not rising");
                }
                for w in row[peak..].windows(2) {
                    assert!(w[1] <= w[0] + 1e-9, "{kind:?} band {b} not falling");
                }
            }
        }
    }

    #[test]
    fn mel_band_widths_trend_upward() {
        let spec = BandSpec::build(BandKind::Mel, 44100.0, 2048, 64).unwrap();
        let widths: Vec<f64> = (0..64).map(|b| spec.band_width(b) as f64).collect();
        let idx: Vec<f64> = (0..64).map(|b| b as f64).collect();
        let rho = spearman(&widths, &idx);
        assert!(rho > 0.9, "Spearman correlation {rho}");
    }

    #[test]
    fn musical_interior_bands_have_constant_cents() {
        let spec = BandSpec::build(BandKind::Musical, 44100.0, 2048, 64).unwrap();
        let scale = FrequencyScale::new(ScaleKind::Musical, 44100.0, 2048).unwrap();
        let zetas = scale.center_frequencies(64).unwrap();
        let bin_hz = 44100.0 / 2048.0;
        // Skip the first and last bands (the clamp and the rescued tail).
        for b in 1..63 {
            let (lo, hi) = spec.band_bins(b);
            let exact_lo = scale.scale_to_hz(zetas[b]).unwrap();
            let exact_hi = scale.scale_to_hz(zetas[b + 2]).unwrap();
            assert!(
                (lo as f64 * bin_hz - exact_lo).abs() <= bin_hz,
                "band {b} lower edge off by more than one bin"
            );
            assert!(
                ((hi - 1) as f64 * bin_hz - exact_hi).abs() <= bin_hz,
                "band {b} upper edge off by more than one bin"
            );
        }
    }

    #[test]
    fn musical_covers_every_bin_with_overlap() {
        let spec = BandSpec::build(BandKind::Musical, 44100.0, 2048, 64).unwrap();
        assert!(spec.total_band_bins() >= spec.num_bins());
    }

    #[test]
    fn too_many_bands_is_a_config_error() {
        let err = BandSpec::build(BandKind::Mel, 44100.0, 2048, 2000).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("band"), "unexpected message: {msg}");
    }

    #[test]
    fn split_partitions_and_overlaps() {
        let cfg = StftConfig { n_fft: 10, hop: 5, fs: 100.0, ..Default::default() };
        let num_bins = 6;
        let t = 3;
        let data = Array3::from_shape_fn((1, num_bins, t), |(_, f, tt)| {
            Complex64::new(f as f64, tt as f64)
        });
        let x = Spectrogram { data, config: cfg };

        // Disjoint two-band spec {0..3}, {3..6}.
        let mut w = Array2::zeros((2, 6));
        for k in 0..3 {
            w[[0, k]] = 1.0;
        }
        for k in 3..6 {
            w[[1, k]] = 1.0;
        }
        let spec = BandSpec::from_weights(BandKind::Custom, 100.0, 10, w).unwrap();
        let subs = spec.split(&x).unwrap();
        assert_eq!(subs[0].data.shape(), &[1, 3, 3]);
        for f in 0..3 {
            for tt in 0..t {
                assert_eq!(subs[0].data[[0, f, tt]], x.data[[0, f, tt]]);
                assert_eq!(subs[1].data[[0, f, tt]], x.data[[0, f + 3, tt]]);
            }
        }

        // Overlapping spec {0..4}, {2..6}: shared bins carry equal values.
        let mut w = Array2::zeros((2, 6));
        for k in 0..4 {
            w[[0, k]] = 1.0;
        }
        for k in 2..6 {
            w[[1, k]] = 1.0;
        }
        normalize_columns(&mut w);
        let spec = BandSpec::from_weights(BandKind::Custom, 100.0, 10, w).unwrap();
        let subs = spec.split(&x).unwrap();
        for tt in 0..t {
            assert_eq!(subs[0].data[[0, 2, tt]], subs[1].data[[0, 0, tt]]);
            assert_eq!(subs[0].data[[0, 3, tt]], subs[1].data[[0, 1, tt]]);
        }
    }

    #[test]
    fn split_rejects_shape_mismatch() {
        let spec = BandSpec::build(BandKind::Mel, 44100.0, 2048, 8).unwrap();
        let cfg = StftConfig { n_fft: 512, hop: 128, fs: 44100.0, ..Default::default() };
        let x = Spectrogram { data: Array3::zeros((1, 257, 4)), config: cfg };
        assert!(spec.split(&x).is_err());
    }

    #[test]
    fn json_round_trip_is_bitwise() {
        for kind in ALL_KINDS {
            let spec = BandSpec::build(kind, 44100.0, 2048, 48).unwrap();
            let json = spec.to_json().unwrap();
            let back = BandSpec::from_json(&json).unwrap();
            assert_eq!(spec.weights(), back.weights(), "{kind:?} weights not bitwise equal");
            assert_eq!(spec, back);
        }
    }

    #[test]
    fn custom_disjoint_binary_spec_loads() {
        let n_fft = 10;
        let mut w = Array2::zeros((2, 6));
        for k in 0..3 {
            w[[0, k]] = 1.0;
        }
        for k in 3..6 {
            w[[1, k]] = 1.0;
        }
        let spec = BandSpec::from_weights(BandKind::Custom, 100.0, n_fft, w).unwrap();
        let json = spec.to_json().unwrap();
        let back = BandSpec::from_json(&json).unwrap();
        assert!(back.weights().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn zero_column_is_rejected_as_uncovered() {
        let mut w = Array2::zeros((2, 6));
        for k in 0..3 {
            w[[0, k]] = 1.0;
        }
        for k in 4..6 {
            w[[1, k]] = 1.0;
        }
        let spec = BandSpecFile {
            kind: BandKind::Custom,
            fs: 100.0,
            n_fft: 10,
            num_bands: 2,
            weights: w.iter().copied().collect(),
        };
        let json = serde_json::to_string(&spec).unwrap();
        let err = BandSpec::from_json(&json).unwrap_err();
        assert!(err.to_string().contains("uncovered bin"), "{err}");
    }

    #[test]
    fn column_sum_violation_is_rejected() {
        let mut w = Array2::zeros((2, 6));
        for k in 0..6 {
            w[[0, k]] = 0.6;
            w[[1, k]] = 0.6;
        }
        let spec = BandSpecFile {
            kind: BandKind::Custom,
            fs: 100.0,
            n_fft: 10,
            num_bands: 2,
            weights: w.iter().copied().collect(),
        };
        let json = serde_json::to_string(&spec).unwrap();
        assert!(BandSpec::from_json(&json).is_err());
    }
}
