//! Metrics (SNR, SI-SNR), oracle separators (mixture pass-through, ideal
//! ratio mask, phase-sensitive filter), and corpus-level evaluation.

use ndarray::{Array2, Array3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::data::{Corpus, StemSet, Track};
use crate::dsp::{self, ChunkPlan, Spectrogram, StftConfig};
use crate::error::{Error, Result};
use crate::model::{self, ModelParams};

/// Magnitude floor of the oracle mask denominators.
const ORACLE_EPS: f64 = 1e-8;

/// Signal-to-noise ratio in dB; identical estimates return the +inf
/// sentinel, an all-zero reference is an error.
pub fn snr(s_hat: &Array2<f64>, s: &Array2<f64>) -> Result<f64> {
    if s_hat.dim() != s.dim() {
        return Err(Error::Shape(format!("{:?} vs {:?}", s_hat.dim(), s.dim())));
    }
    let sig: f64 = s.iter().map(|v| v * v).sum();
    if sig == 0.0 {
        return Err(Error::Domain("SNR reference is identically zero".into()));
    }
    let err: f64 = s_hat.iter().zip(s.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (sig / err).log10())
}

/// Scale-invariant SNR in dB: the estimate is projected onto the
/// reference before the ratio. No zero-mean pre-centering is applied.
/// Orthogonal estimates return the -inf sentinel.
pub fn si_snr(s_hat: &Array2<f64>, s: &Array2<f64>) -> Result<f64> {
    if s_hat.dim() != s.dim() {
        return Err(Error::Shape(format!("{:?} vs {:?}", s_hat.dim(), s.dim())));
    }
    let sig: f64 = s.iter().map(|v| v * v).sum();
    if sig == 0.0 {
        return Err(Error::Domain("SI-SNR reference is identically zero".into()));
    }
    let dot: f64 = s_hat.iter().zip(s.iter()).map(|(a, b)| a * b).sum();
    if dot == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let scale = dot / sig;
    let target_energy = scale * scale * sig;
    let err: f64 = s_hat
        .iter()
        .zip(s.iter())
        .map(|(a, b)| {
            let e = a - scale * b;
            e * e
        })
        .sum();
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (target_energy / err).log10())
}

/// Ideal ratio mask oracle: mask_i = |S_i| / (sum_j |S_j| + eps), applied
/// to the mixture spectrogram and inverted by the caller.
pub fn oracle_irm(
    mixture: &Spectrogram,
    targets: &[(String, Spectrogram)],
) -> Result<Vec<(String, Array3<f64>)>> {
    let dim = mixture.data.dim();
    for (name, t) in targets {
        if t.data.dim() != dim {
            return Err(Error::Shape(format!("target {name:?} shape differs from mixture")));
        }
    }
    let mut denom = Array3::<f64>::from_elem(dim, ORACLE_EPS);
    for (_, t) in targets {
        denom.zip_mut_with(&t.data, |d, z| *d += z.norm());
    }
    Ok(targets
        .iter()
        .map(|(name, t)| {
            let mut mask = Array3::<f64>::zeros(dim);
            ndarray::Zip::from(&mut mask)
                .and(&t.data)
                .and(&denom)
                .for_each(|m, z, d| *m = z.norm() / d);
            (name.clone(), mask)
        })
        .collect())
}

/// Phase-sensitive filter oracle:
/// mask_i = clamp(|S_i| / (|X| + eps) * cos(angle(S_i) - angle(X)), 0, 1).
pub fn oracle_psf(
    mixture: &Spectrogram,
    targets: &[(String, Spectrogram)],
) -> Result<Vec<(String, Array3<f64>)>> {
    let dim = mixture.data.dim();
    for (name, t) in targets {
        if t.data.dim() != dim {
            return Err(Error::Shape(format!("target {name:?} shape differs from mixture")));
        }
    }
    Ok(targets
        .iter()
        .map(|(name, t)| {
            let mut mask = Array3::<f64>::zeros(dim);
            ndarray::Zip::from(&mut mask)
                .and(&t.data)
                .and(&mixture.data)
                .for_each(|m, s, x| {
                    let cos = (s.re * x.re + s.im * x.im) / (s.norm() * x.norm()).max(1e-300);
                    *m = (s.norm() / (x.norm() + ORACLE_EPS) * cos).clamp(0.0, 1.0);
                });
            (name.clone(), mask)
        })
        .collect())
}

fn apply_real_masks(
    mixture: &Spectrogram,
    masks: &[(String, Array3<f64>)],
    out_len: usize,
) -> Result<StemSet> {
    let mut set = StemSet::new();
    for (name, mask) in masks {
        let data = ndarray::Zip::from(&mixture.data).and(mask).map_collect(|x, &m| x * m);
        let est = Spectrogram { data, config: mixture.config };
        set.push(name.clone(), dsp::istft(&est, out_len)?)?;
    }
    Ok(set)
}

/// Anything that can produce per-stem estimates for a track. Oracles read
/// the true stems; model separators only see the mixture.
pub trait Separator: Sync {
    fn name(&self) -> &str;
    fn separate_track(&self, track: &Track) -> Result<StemSet>;
}

/// Returns the mixture itself as the estimate of every stem.
pub struct MixtureSeparator {
    pub stems: Vec<String>,
}

impl Separator for MixtureSeparator {
    fn name(&self) -> &str {
        "mixture"
    }
    fn separate_track(&self, track: &Track) -> Result<StemSet> {
        let mut set = StemSet::new();
        for stem in &self.stems {
            set.push(stem.clone(), track.mixture.clone())?;
        }
        Ok(set)
    }
}

pub enum OracleKind {
    Irm,
    Psf,
}

/// Ideal-mask oracles computed from the true stem spectrograms.
pub struct OracleSeparator {
    pub kind: OracleKind,
    pub stft: StftConfig,
}

impl Separator for OracleSeparator {
    fn name(&self) -> &str {
        match self.kind {
            OracleKind::Irm => "irm",
            OracleKind::Psf => "psf",
        }
    }
    fn separate_track(&self, track: &Track) -> Result<StemSet> {
        let mixture = dsp::stft(&track.mixture, &self.stft)?;
        let targets: Vec<(String, Spectrogram)> = track
            .stems
            .iter()
            .map(|(name, sig)| Ok((name.to_string(), dsp::stft(sig, &self.stft)?)))
            .collect::<Result<_>>()?;
        let masks = match self.kind {
            OracleKind::Irm => oracle_irm(&mixture, &targets)?,
            OracleKind::Psf => oracle_psf(&mixture, &targets)?,
        };
        apply_real_masks(&mixture, &masks, track.mixture.ncols())
    }
}

/// Trained-model separator with chunked overlap-add inference.
pub struct ModelSeparator<'a> {
    pub params: &'a ModelParams,
    pub stft: StftConfig,
    pub chunk: Option<ChunkPlan>,
}

impl Separator for ModelSeparator<'_> {
    fn name(&self) -> &str {
        "model"
    }
    fn separate_track(&self, track: &Track) -> Result<StemSet> {
        let stems = match &self.chunk {
            Some(plan) => model::separate_chunked(self.params, &track.mixture, &self.stft, plan)?,
            None => model::separate(self.params, &track.mixture, &self.stft)?,
        };
        let mut set = StemSet::new();
        for (name, sig) in stems {
            set.push(name, sig)?;
        }
        Ok(set)
    }
}

/// A metric value that serializes +-inf as strings so reports stay valid
/// JSON.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricValue(pub f64);

impl Serialize for MetricValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            serializer.serialize_f64(self.0)
        } else if self.0 > 0.0 {
            serializer.serialize_str("inf")
        } else {
            serializer.serialize_str("-inf")
        }
    }
}

impl<'de> Deserialize<'de> for MetricValue {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        Ok(match Raw::deserialize(de)? {
            Raw::Num(v) => MetricValue(v),
            Raw::Str(s) if s == "inf" => MetricValue(f64::INFINITY),
            Raw::Str(s) if s == "-inf" => MetricValue(f64::NEG_INFINITY),
            Raw::Str(s) => return Err(serde::de::Error::custom(format!("bad metric value {s:?}"))),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StemMetrics {
    pub stem: String,
    pub snr_db: MetricValue,
    pub si_snr_db: MetricValue,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackRow {
    pub track: String,
    pub stems: Vec<StemMetrics>,
    pub avg_snr_db: MetricValue,
    pub avg_si_snr_db: MetricValue,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StemSummary {
    pub stem: String,
    pub mean_snr_db: MetricValue,
    pub mean_si_snr_db: MetricValue,
    /// Tracks whose non-finite sentinel values were excluded from means.
    pub excluded: usize,
}

/// Per-track, per-stem metrics plus corpus means (mean over tracks;
/// sentinel values excluded and counted).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub separator: String,
    pub tracks: Vec<TrackRow>,
    pub summary: Vec<StemSummary>,
    pub mean_snr_db: MetricValue,
    pub mean_si_snr_db: MetricValue,
}

impl EvalReport {
    pub fn stem_mean_snr(&self, stem: &str) -> Option<f64> {
        self.summary.iter().find(|s| s.stem == stem).map(|s| s.mean_snr_db.0)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("track,stem,snr_db,si_snr_db\n");
        for row in &self.tracks {
            for sm in &row.stems {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    row.track, sm.stem, sm.snr_db.0, sm.si_snr_db.0
                ));
            }
        }
        out
    }
}

fn finite_mean(values: &[f64]) -> (f64, usize) {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let excluded = values.len() - finite.len();
    if finite.is_empty() {
        (f64::NAN, excluded)
    } else {
        (finite.iter().sum::<f64>() / finite.len() as f64, excluded)
    }
}

/// Evaluate a separator on a corpus: per-track metrics on the full
/// signals, then unweighted means. Tracks run in parallel; aggregation
/// order is deterministic.
pub fn evaluate_corpus(separator: &dyn Separator, corpus: &Corpus) -> Result<EvalReport> {
    if corpus.tracks.is_empty() {
        return Err(Error::Config("empty corpus".into()));
    }
    let rows: Vec<TrackRow> = corpus
        .tracks
        .par_iter()
        .map(|track| -> Result<TrackRow> {
            let estimates = separator.separate_track(track)?;
            let mut stems = Vec::new();
            for (stem, sig) in track.stems.iter() {
                // Separators covering a stem subset are scored on what
                // they produce.
                let est = match estimates.get(stem) {
                    Some(e) => e,
                    None => continue,
                };
                stems.push(StemMetrics {
                    stem: stem.to_string(),
                    snr_db: MetricValue(snr(est, sig)?),
                    si_snr_db: MetricValue(si_snr(est, sig)?),
                });
            }
            if stems.is_empty() {
                return Err(Error::Config(format!(
                    "separator {:?} produced no stems present in track {}",
                    separator.name(),
                    track.name
                )));
            }
            let (avg_snr, _) = finite_mean(&stems.iter().map(|s| s.snr_db.0).collect::<Vec<_>>());
            let (avg_si, _) = finite_mean(&stems.iter().map(|s| s.si_snr_db.0).collect::<Vec<_>>());
            Ok(TrackRow {
                track: track.name.clone(),
                stems,
                avg_snr_db: MetricValue(avg_snr),
                avg_si_snr_db: MetricValue(avg_si),
            })
        })
        .collect::<Result<_>>()?;

    let stem_names: Vec<String> = rows[0].stems.iter().map(|s| s.stem.clone()).collect();
    let mut summary = Vec::new();
    for stem in &stem_names {
        let snrs: Vec<f64> = rows
            .iter()
            .flat_map(|r| r.stems.iter().filter(|s| &s.stem == stem).map(|s| s.snr_db.0))
            .collect();
        let sis: Vec<f64> = rows
            .iter()
            .flat_map(|r| r.stems.iter().filter(|s| &s.stem == stem).map(|s| s.si_snr_db.0))
            .collect();
        let (mean_snr, ex_a) = finite_mean(&snrs);
        let (mean_si, ex_b) = finite_mean(&sis);
        summary.push(StemSummary {
            stem: stem.clone(),
            mean_snr_db: MetricValue(mean_snr),
            mean_si_snr_db: MetricValue(mean_si),
            excluded: ex_a.max(ex_b),
        });
    }
    let (mean_snr, _) = finite_mean(&summary.iter().map(|s| s.mean_snr_db.0).collect::<Vec<_>>());
    let (mean_si, _) = finite_mean(&summary.iter().map(|s| s.mean_si_snr_db.0).collect::<Vec<_>>());

    Ok(EvalReport {
        separator: separator.name().to_string(),
        tracks: rows,
        summary,
        mean_snr_db: MetricValue(mean_snr),
        mean_si_snr_db: MetricValue(mean_si),
    })
}
