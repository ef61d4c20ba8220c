//! Run configuration: one JSON document with sections for the STFT, band
//! definitions, the model, training, loss, data layout, and evaluation.
//! Unknown keys are rejected everywhere.

use serde::{Deserialize, Serialize};

use crate::bands::{BandKind, BandSpec};
use crate::data::CorpusLayout;
use crate::dsp::{ChunkMode, ChunkPlan, StftConfig};
use crate::error::Result;
use crate::losses::{LossConfig, LossKind};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandsSection {
    pub kind: BandKind,
    pub num_bands: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub d_model: usize,
    pub rnn_pairs: usize,
    /// Defaults to 4 * d_model when absent.
    #[serde(default)]
    pub mlp_hidden: Option<usize>,
    pub stems: Vec<String>,
    #[serde(default = "default_channels")]
    pub channels: usize,
}

fn default_channels() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default)]
    pub layout: CorpusLayout,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Test-time chunk length and hop, seconds.
    pub chunk_len: f64,
    pub chunk_hop: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub stft: StftConfig,
    pub bands: BandsSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
    #[serde(default)]
    pub data: Option<DataSection>,
}

impl RunConfig {
    /// Full-scale configuration mirroring the reference setup: 64 mel
    /// bands at 44.1 kHz / FFT 2048, D = 128, 8 recurrent pairs, three
    /// stems, 6 s chunks.
    pub fn full_default() -> Self {
        Self {
            stft: StftConfig::default(),
            bands: BandsSection { kind: BandKind::Mel, num_bands: 64 },
            model: ModelSection {
                d_model: 128,
                rnn_pairs: 8,
                mlp_hidden: None,
                stems: vec!["dialogue".into(), "music".into(), "effects".into()],
                channels: 1,
            },
            train: TrainConfig {
                lr: 1e-3,
                lr_decay: 0.98,
                decay_period_epochs: 2,
                clip_norm: 5.0,
                epochs: 100,
                samples_per_epoch: 20_000,
                batch: 2,
                seed: 0,
                freeze_encoder: false,
                loss: LossConfig::new(LossKind::L1Snr),
                chunk: ChunkPlan { chunk_len: 6.0, hop_len: 6.0, mode: ChunkMode::TrainRandom },
            },
            eval: EvalSection { chunk_len: 6.0, chunk_hop: 0.5 },
            data: Some(DataSection { layout: CorpusLayout::default() }),
        }
    }

    /// Desk-scale preset: every code path of the full configuration at a
    /// size a CPU handles in minutes (D = 16, 8 mel bands, 2 recurrent
    /// pairs, 8 kHz, FFT 512, 2 s chunks).
    pub fn desk_preset() -> Self {
        Self {
            stft: StftConfig { n_fft: 512, hop: 128, fs: 8000.0, ..Default::default() },
            bands: BandsSection { kind: BandKind::Mel, num_bands: 8 },
            model: ModelSection {
                d_model: 16,
                rnn_pairs: 2,
                mlp_hidden: None,
                stems: vec!["dialogue".into(), "music".into(), "effects".into()],
                channels: 1,
            },
            train: TrainConfig {
                lr: 1e-3,
                lr_decay: 0.98,
                decay_period_epochs: 2,
                clip_norm: 5.0,
                epochs: 13,
                samples_per_epoch: 384,
                batch: 8,
                seed: 0,
                freeze_encoder: false,
                loss: LossConfig::new(LossKind::L1Snr),
                chunk: ChunkPlan { chunk_len: 2.0, hop_len: 2.0, mode: ChunkMode::TrainRandom },
            },
            eval: EvalSection { chunk_len: 2.0, chunk_hop: 0.5 },
            data: Some(DataSection { layout: CorpusLayout::default() }),
        }
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(json)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        self.train.validate()?;
        self.build_model_config()?.validate()
    }

    /// Build the band spec and model configuration this run describes.
    pub fn build_model_config(&self) -> Result<ModelConfig> {
        let spec =
            BandSpec::build(self.bands.kind, self.stft.fs, self.stft.n_fft, self.bands.num_bands)?;
        let mut cfg = ModelConfig::new(
            spec,
            self.model.d_model,
            self.model.rnn_pairs,
            self.model.stems.clone(),
        );
        if let Some(h) = self.model.mlp_hidden {
            cfg.mlp_hidden = h;
        }
        cfg.channels = self.model.channels;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn test_chunk_plan(&self) -> Result<ChunkPlan> {
        ChunkPlan::new(self.eval.chunk_len, self.eval.chunk_hop, ChunkMode::TestOverlapAdd)
    }
}
