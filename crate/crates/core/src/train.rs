//! Optimization loop: Adam with stepwise-decayed learning rate, global
//! gradient-norm clipping, optional encoder freezing, and a per-step loss
//! trace. Reverse-mode gradients flow through masking, recombination, and
//! the iSTFT so the time-domain loss term reaches the mask estimators.

use ndarray::{s, Array2, Array3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Corpus;
use crate::dsp::{self, ChunkMode, ChunkPlan, StftConfig};
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport, MetricValue, StemMetrics, StemSummary, TrackRow};
use crate::losses::{self, LossConfig};
use crate::model::{self, ModelParams};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// Learning-rate decay factor, applied every `decay_period_epochs`.
    #[serde(default = "default_lr_decay")]
    pub lr_decay: f64,
    #[serde(default = "default_decay_period")]
    pub decay_period_epochs: usize,
    #[serde(default = "default_clip_norm")]
    pub clip_norm: f64,
    pub epochs: usize,
    pub samples_per_epoch: usize,
    pub batch: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub freeze_encoder: bool,
    pub loss: LossConfig,
    pub chunk: ChunkPlan,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_lr_decay() -> f64 {
    0.98
}
fn default_decay_period() -> usize {
    2
}
fn default_clip_norm() -> f64 {
    5.0
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config(format!(
                "clip norm must be positive, got {}",
                self.clip_norm
            )));
        }
        if self.batch == 0 || self.samples_per_epoch == 0 {
            return Err(Error::Config("batch and samples_per_epoch must be positive".into()));
        }
        if self.decay_period_epochs == 0 {
            return Err(Error::Config("decay period must be positive".into()));
        }
        self.loss.validate()?;
        self.chunk.validate()?;
        Ok(())
    }

    /// Closed-form learning rate at a given epoch.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.decay_period_epochs) as i32)
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub grad_norm: f64,
}

pub fn trace_to_csv(trace: &[StepRecord]) -> String {
    let mut out = String::from("step,epoch,lr,loss,grad_norm\n");
    for r in trace {
        out.push_str(&format!("{},{},{},{},{}\n", r.step, r.epoch, r.lr, r.loss, r.grad_norm));
    }
    out
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// One update; indices below `skip_below` are left untouched.
    fn step(&mut self, data: &mut [f64], grads: &[f64], lr: f64, skip_below: usize) {
        self.t += 1;
        let b1c = 1.0 - self.beta1.powi(self.t as i32);
        let b2c = 1.0 - self.beta2.powi(self.t as i32);
        for i in skip_below..data.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / b1c;
            let vhat = self.v[i] / b2c;
            data[i] -= lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Forward, loss, and parameter gradients for one (mixture, targets)
/// chunk pair. The returned loss is the mean over stems.
fn sample_grad(
    params: &ModelParams,
    mixture: &Array2<f64>,
    targets: &[Array2<f64>],
    stft_cfg: &StftConfig,
    loss_cfg: &LossConfig,
    freeze_encoder: bool,
) -> Result<(f64, Vec<f64>)> {
    let spec = dsp::stft(mixture, stft_cfg)?;
    let (mask_set, cache) = model::forward(params, &spec, true)?;
    let cache = cache.expect("cache requested");
    let num_frames = spec.num_frames();
    let n_stems = mask_set.masks.len() as f64;

    let mut total_loss = 0.0;
    let mut d_masks = Vec::with_capacity(mask_set.masks.len());
    for (mask, target) in mask_set.masks.iter().zip(targets) {
        let est_spec = dsp::Spectrogram { data: &spec.data * mask, config: spec.config };
        let est_time = dsp::istft(&est_spec, mixture.ncols())?;
        let target_spec = dsp::stft(target, stft_cfg)?;
        let (loss, d_time, mut d_spec) =
            losses::stem_loss_grad(loss_cfg, &est_time, target, &est_spec, &target_spec)?;
        total_loss += loss / n_stems;

        // Route the time-domain term through the iSTFT adjoint and fold
        // in the stem average.
        let d_from_time = dsp::istft_adjoint(&d_time, stft_cfg, num_frames)?;
        d_spec.zip_mut_with(&d_from_time, |a, b| {
            a.re = (a.re + b.re) / n_stems;
            a.im = (a.im + b.im) / n_stems;
        });

        // d mask = conj(X) applied to the estimate-spectrogram gradient,
        // in the separate-real/imaginary pairing.
        let mut d_mask = Array3::<Complex64>::zeros(mask.dim());
        ndarray::Zip::from(&mut d_mask).and(&d_spec).and(&spec.data).for_each(|dm, ds, x| {
            dm.re = ds.re * x.re + ds.im * x.im;
            dm.im = -ds.re * x.im + ds.im * x.re;
        });
        d_masks.push(d_mask);
    }

    let grads = model::backward(params, &cache, &d_masks, freeze_encoder)?;
    Ok((total_loss, grads.data))
}

/// Train in place. Draws `samples_per_epoch` chunks per epoch with
/// replacement, uniformly over tracks and offsets. Single-threaded draw
/// order plus in-order gradient reduction make runs reproducible for a
/// fixed seed. `on_epoch` runs after each epoch (checkpointing hook).
pub fn train_with<F>(
    params: &mut ModelParams,
    corpus: &Corpus,
    cfg: &TrainConfig,
    stft_cfg: &StftConfig,
    start_step: u64,
    mut on_epoch: F,
) -> Result<Vec<StepRecord>>
where
    F: FnMut(usize, &ModelParams) -> Result<()>,
{
    cfg.validate()?;
    stft_cfg.validate()?;
    if corpus.tracks.is_empty() {
        return Err(Error::Config("empty training corpus".into()));
    }
    let stem_names = params.config.stems.clone();
    for track in &corpus.tracks {
        for stem in &stem_names {
            if track.stems.get(stem).is_none() {
                return Err(Error::Config(format!(
                    "track {} lacks stem {stem:?} required by the model",
                    track.name
                )));
            }
        }
    }
    let chunk_samples = cfg.chunk.chunk_samples(corpus.fs);
    for track in &corpus.tracks {
        if track.mixture.ncols() < chunk_samples {
            return Err(Error::Config(format!(
                "track {} is shorter than one {chunk_samples}-sample chunk",
                track.name
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(params.num_params());
    let skip_below = if cfg.freeze_encoder { params.layout.encoder_len } else { 0 };
    let steps_per_epoch = cfg.samples_per_epoch.div_ceil(cfg.batch);
    let mut trace = Vec::with_capacity(cfg.epochs * steps_per_epoch);
    let mut step = start_step;

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at_epoch(epoch);
        for _ in 0..steps_per_epoch {
            // Draw the whole batch up front so parallel execution cannot
            // perturb the random stream.
            let draws: Vec<(usize, usize)> = (0..cfg.batch)
                .map(|_| {
                    let track = rng.gen_range(0..corpus.tracks.len());
                    let max_off = corpus.tracks[track].mixture.ncols() - chunk_samples;
                    let off = if max_off == 0 { 0 } else { rng.gen_range(0..=max_off) };
                    (track, off)
                })
                .collect();

            let results: Vec<(f64, Vec<f64>)> = draws
                .par_iter()
                .map(|&(ti, off)| {
                    let track = &corpus.tracks[ti];
                    let mixture = track.mixture.slice(s![.., off..off + chunk_samples]).to_owned();
                    let targets: Vec<Array2<f64>> = stem_names
                        .iter()
                        .map(|stem| {
                            track
                                .stems
                                .get(stem)
                                .expect("checked above")
                                .slice(s![.., off..off + chunk_samples])
                                .to_owned()
                        })
                        .collect();
                    sample_grad(params, &mixture, &targets, stft_cfg, &cfg.loss, cfg.freeze_encoder)
                })
                .collect::<Result<_>>()?;

            step += 1;
            let batch_f = cfg.batch as f64;
            let loss = results.iter().map(|(l, _)| l).sum::<f64>() / batch_f;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at step {step}")));
            }
            let mut grad = vec![0.0f64; params.num_params()];
            for (_, g) in &results {
                for (acc, v) in grad.iter_mut().zip(g) {
                    *acc += v / batch_f;
                }
            }

            let mut norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient at step {step}")));
            }
            if norm > cfg.clip_norm {
                let scale = cfg.clip_norm / norm;
                for g in grad.iter_mut() {
                    *g *= scale;
                }
                norm = cfg.clip_norm;
            }

            adam.step(params.data_mut(), &grad, lr, skip_below);
            trace.push(StepRecord { step, epoch, lr, loss, grad_norm: norm });
        }
        on_epoch(epoch, params)?;
    }
    Ok(trace)
}

pub fn train(
    params: &mut ModelParams,
    corpus: &Corpus,
    cfg: &TrainConfig,
    stft_cfg: &StftConfig,
) -> Result<Vec<StepRecord>> {
    train_with(params, corpus, cfg, stft_cfg, 0, |_, _| Ok(()))
}

/// Exhaustive-chunk validation: mean loss over all chunks plus per-stem
/// chunk-mean metrics assembled per track. Chunks whose reference stem is
/// silent are skipped.
pub fn validate(
    params: &ModelParams,
    corpus: &Corpus,
    cfg: &LossConfig,
    stft_cfg: &StftConfig,
    plan: &ChunkPlan,
) -> Result<(f64, EvalReport)> {
    if plan.mode != ChunkMode::ValidExhaustive {
        return Err(Error::Config("validation requires the exhaustive chunk mode".into()));
    }
    let stem_names = params.config.stems.clone();
    type TrackStats = (String, f64, usize, Vec<Vec<f64>>, Vec<Vec<f64>>);
    let per_track: Vec<TrackStats> = corpus
        .tracks
        .par_iter()
        .map(|track| -> Result<TrackStats> {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let chunks = dsp::chunk(&track.mixture, plan, corpus.fs, &mut rng)?;
            let mut loss_sum = 0.0;
            let mut used = 0usize;
            let mut snrs: Vec<Vec<f64>> = vec![Vec::new(); stem_names.len()];
            let mut sis: Vec<Vec<f64>> = vec![Vec::new(); stem_names.len()];
            'chunks: for (off, mixture) in &chunks {
                let n = mixture.ncols();
                let mut targets = Vec::with_capacity(stem_names.len());
                for stem in &stem_names {
                    let sig = track
                        .stems
                        .get(stem)
                        .ok_or_else(|| Error::Config(format!("missing stem {stem:?}")))?;
                    let t = sig.slice(s![.., *off..*off + n]).to_owned();
                    if t.iter().all(|&v| v == 0.0) {
                        continue 'chunks;
                    }
                    targets.push(t);
                }
                let spec = dsp::stft(mixture, stft_cfg)?;
                let (mask_set, _) = model::forward(params, &spec, false)?;
                let mut chunk_loss = 0.0;
                for ((mask, target), si) in
                    mask_set.masks.iter().zip(&targets).zip(0..stem_names.len())
                {
                    let est_spec = dsp::Spectrogram { data: &spec.data * mask, config: spec.config };
                    let est = dsp::istft(&est_spec, n)?;
                    let target_spec = dsp::stft(target, stft_cfg)?;
                    chunk_loss += losses::stem_loss(cfg, &est, target, &est_spec, &target_spec)?
                        / stem_names.len() as f64;
                    snrs[si].push(eval::snr(&est, target)?);
                    sis[si].push(eval::si_snr(&est, target)?);
                }
                loss_sum += chunk_loss;
                used += 1;
            }
            Ok((track.name.clone(), loss_sum, used, snrs, sis))
        })
        .collect::<Result<_>>()?;

    let finite_mean = |v: &[f64]| {
        let f: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
        if f.is_empty() {
            f64::NAN
        } else {
            f.iter().sum::<f64>() / f.len() as f64
        }
    };

    let mut rows = Vec::new();
    let mut total_loss = 0.0;
    let mut total_chunks = 0usize;
    for (name, loss_sum, used, snrs, sis) in &per_track {
        total_loss += loss_sum;
        total_chunks += used;
        let stems: Vec<StemMetrics> = stem_names
            .iter()
            .enumerate()
            .map(|(si, stem)| StemMetrics {
                stem: stem.clone(),
                snr_db: MetricValue(finite_mean(&snrs[si])),
                si_snr_db: MetricValue(finite_mean(&sis[si])),
            })
            .collect();
        let avg_snr = finite_mean(&stems.iter().map(|s| s.snr_db.0).collect::<Vec<_>>());
        let avg_si = finite_mean(&stems.iter().map(|s| s.si_snr_db.0).collect::<Vec<_>>());
        rows.push(TrackRow {
            track: name.clone(),
            stems,
            avg_snr_db: MetricValue(avg_snr),
            avg_si_snr_db: MetricValue(avg_si),
        });
    }
    if total_chunks == 0 {
        return Err(Error::Config("no usable validation chunks".into()));
    }

    let summary: Vec<StemSummary> = stem_names
        .iter()
        .enumerate()
        .map(|(si, stem)| {
            let s: Vec<f64> = rows.iter().map(|r| r.stems[si].snr_db.0).collect();
            let i: Vec<f64> = rows.iter().map(|r| r.stems[si].si_snr_db.0).collect();
            StemSummary {
                stem: stem.clone(),
                mean_snr_db: MetricValue(finite_mean(&s)),
                mean_si_snr_db: MetricValue(finite_mean(&i)),
                excluded: s.iter().filter(|v| !v.is_finite()).count(),
            }
        })
        .collect();
    let mean_snr = finite_mean(&summary.iter().map(|s| s.mean_snr_db.0).collect::<Vec<_>>());
    let mean_si = finite_mean(&summary.iter().map(|s| s.mean_si_snr_db.0).collect::<Vec<_>>());
    let report = EvalReport {
        separator: "validation".into(),
        tracks: rows,
        summary,
        mean_snr_db: MetricValue(mean_snr),
        mean_si_snr_db: MetricValue(mean_si),
    };
    Ok((total_loss / total_chunks as f64, report))
}
