//! Stems, the additive/convolutive mixing model, corpus ingestion, and the
//! deterministic synthetic corpus generator.

pub mod toy;
pub mod wav;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use wav::{load_wav, save_wav, WavFormat};

/// Named collection of equally shaped time-domain signals.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StemSet {
    entries: Vec<(String, Array2<f64>)>,
}

impl StemSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, signal: Array2<f64>) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::Config(format!("duplicate stem name {name:?}")));
        }
        if let Some((_, first)) = self.entries.first() {
            if first.dim() != signal.dim() {
                return Err(Error::Shape(format!(
                    "stem {name:?} has shape {:?}, expected {:?}",
                    signal.dim(),
                    first.dim()
                )));
            }
        }
        self.entries.push((name, signal));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.entries.iter().map(|(n, s)| (n.as_str(), s))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_samples(&self) -> usize {
        self.entries.first().map(|(_, s)| s.ncols()).unwrap_or(0)
    }

    pub fn channels(&self) -> usize {
        self.entries.first().map(|(_, s)| s.nrows()).unwrap_or(0)
    }
}

impl FromIterator<(String, Array2<f64>)> for StemSet {
    fn from_iter<T: IntoIterator<Item = (String, Array2<f64>)>>(iter: T) -> Self {
        let mut set = Self::new();
        for (n, s) in iter {
            set.push(n, s).expect("consistent stems");
        }
        set
    }
}

/// Per-source signal transform of the mixing model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTransform {
    Identity,
    Gain(f64),
    /// FIR filter applied by direct convolution, output trimmed to the
    /// input length.
    Fir(Vec<f64>),
}

impl SourceTransform {
    fn apply(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        match self {
            SourceTransform::Identity => Ok(x.clone()),
            SourceTransform::Gain(g) => Ok(x * *g),
            SourceTransform::Fir(h) => {
                if h.is_empty() {
                    return Err(Error::Config("FIR transform needs at least one tap".into()));
                }
                let (channels, n) = x.dim();
                let mut y = Array2::<f64>::zeros((channels, n));
                for c in 0..channels {
                    for i in 0..n {
                        let mut acc = 0.0;
                        for (k, &tap) in h.iter().enumerate() {
                            if i >= k {
                                acc += tap * x[[c, i - k]];
                            }
                        }
                        y[[c, i]] = acc;
                    }
                }
                Ok(y)
            }
        }
    }
}

/// Mixing specification: a transform per source and a grouping of sources
/// into computational targets. Sources not present in any group count as
/// noise: they enter the mixture but no target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixSpec {
    pub transforms: BTreeMap<String, SourceTransform>,
    /// target name -> source names it sums over.
    pub groups: Vec<(String, Vec<String>)>,
}

impl MixSpec {
    /// Identity transforms, one singleton group per source.
    pub fn identity(sources: &[&str]) -> Self {
        Self {
            transforms: sources
                .iter()
                .map(|s| (s.to_string(), SourceTransform::Identity))
                .collect(),
            groups: sources.iter().map(|s| (s.to_string(), vec![s.to_string()])).collect(),
        }
    }
}

/// Apply the mixing model: the mixture is the sum of transformed sources,
/// each computational target the sum of its group.
pub fn mix(sources: &StemSet, spec: &MixSpec) -> Result<(Array2<f64>, StemSet)> {
    if sources.is_empty() {
        return Err(Error::Config("no sources to mix".into()));
    }
    let dim = (sources.channels(), sources.num_samples());
    let mut transformed: Vec<(&str, Array2<f64>)> = Vec::with_capacity(sources.len());
    for (name, sig) in sources.iter() {
        let t = spec.transforms.get(name).unwrap_or(&SourceTransform::Identity);
        let y = t.apply(sig)?;
        if y.dim() != dim {
            return Err(Error::Shape(format!("transform of {name:?} changed the shape")));
        }
        transformed.push((name, y));
    }

    let mut targets = StemSet::new();
    for (target, members) in &spec.groups {
        let mut acc = Array2::<f64>::zeros(dim);
        for member in members {
            let sig = transformed
                .iter()
                .find(|(n, _)| n == member)
                .map(|(_, s)| s)
                .ok_or_else(|| Error::Config(format!("group {target:?} names unknown source {member:?}")))?;
            acc += sig;
        }
        targets.push(target.clone(), acc)?;
    }

    let mut mixture = Array2::<f64>::zeros(dim);
    for (_, sig) in &transformed {
        mixture += sig;
    }
    Ok((mixture, targets))
}

/// Corpus directory layout: the mixture filename and one file per stem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusLayout {
    #[serde(default = "default_mixture_file")]
    pub mixture_file: String,
    /// stem name -> filename within each track directory.
    #[serde(default = "default_stem_files")]
    pub stem_files: Vec<(String, String)>,
}

fn default_mixture_file() -> String {
    "mix.wav".into()
}

fn default_stem_files() -> Vec<(String, String)> {
    vec![
        ("dialogue".into(), "speech.wav".into()),
        ("music".into(), "music.wav".into()),
        ("effects".into(), "sfx.wav".into()),
    ]
}

impl Default for CorpusLayout {
    fn default() -> Self {
        Self { mixture_file: default_mixture_file(), stem_files: default_stem_files() }
    }
}

#[derive(Debug, Clone)]
pub struct Track {
    pub name: String,
    pub mixture: Array2<f64>,
    pub stems: StemSet,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub fs: f64,
    pub tracks: Vec<Track>,
}

impl Corpus {
    pub fn stem_names(&self) -> Vec<String> {
        self.tracks
            .first()
            .map(|t| t.stems.names().iter().map(|s| s.to_string()).collect())
            .unwrap_or_default()
    }

    /// Add a composite stem (the sum of existing stems) to every track.
    pub fn with_composite_stem(mut self, name: &str, parts: &[&str]) -> Result<Self> {
        for track in &mut self.tracks {
            let mut acc = Array2::<f64>::zeros((track.stems.channels(), track.stems.num_samples()));
            for part in parts {
                let sig = track
                    .stems
                    .get(part)
                    .ok_or_else(|| Error::Config(format!("track {} has no stem {part:?}", track.name)))?;
                acc += sig;
            }
            track.stems.push(name, acc)?;
        }
        Ok(self)
    }
}

/// Scan a directory-per-track corpus. Tracks missing a stem file are
/// skipped with a warning on stderr; a missing mixture is synthesized as
/// the stem sum; inconsistent lengths or rates are an error.
pub fn scan_corpus(root: &Path, layout: &CorpusLayout) -> Result<Corpus> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();

    let mut corpus = Corpus { fs: 0.0, tracks: Vec::new() };
    'tracks: for dir in dirs {
        let name = dir.file_name().unwrap_or_default().to_string_lossy().to_string();
        let mut stems = StemSet::new();
        let mut rate: Option<u32> = None;
        for (stem, file) in &layout.stem_files {
            let path = dir.join(file);
            if !path.exists() {
                eprintln!("warning: skipping track {name}: missing {file}");
                continue 'tracks;
            }
            let (sig, fs) = load_wav(&path)?;
            if let Some(r) = rate {
                if r != fs {
                    return Err(Error::Config(format!(
                        "track {name}: {file} has rate {fs}, expected {r}"
                    )));
                }
            }
            rate = Some(fs);
            stems.push(stem.clone(), sig).map_err(|e| {
                Error::Config(format!("track {name}: inconsistent stem shapes: {e}"))
            })?;
        }
        let rate = rate.expect("at least one stem file");
        let mix_path = dir.join(&layout.mixture_file);
        let mixture = if mix_path.exists() {
            let (sig, fs) = load_wav(&mix_path)?;
            if fs != rate {
                return Err(Error::Config(format!("track {name}: mixture rate {fs} != {rate}")));
            }
            if sig.dim() != (stems.channels(), stems.num_samples()) {
                return Err(Error::Config(format!("track {name}: mixture length differs from stems")));
            }
            sig
        } else {
            let mut acc = Array2::<f64>::zeros((stems.channels(), stems.num_samples()));
            for (_, sig) in stems.iter() {
                acc += sig;
            }
            acc
        };
        if corpus.tracks.is_empty() {
            corpus.fs = rate as f64;
        } else if corpus.fs != rate as f64 {
            return Err(Error::Config(format!(
                "track {name} has rate {rate}, corpus started at {}",
                corpus.fs
            )));
        }
        corpus.tracks.push(Track { name, mixture, stems });
    }
    Ok(corpus)
}
