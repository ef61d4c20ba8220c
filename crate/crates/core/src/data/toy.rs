//! Deterministic synthetic three-stem corpus for desk-scale work.
//!
//! Each track is planned in sample-rate-independent terms (event times in
//! seconds, frequencies in Hz) and then rendered on the requested grid:
//! the same seed yields the same events at any rate.
//!
//! Dialogue is amplitude-modulated harmonic pulse trains with 100-300 Hz
//! fundamentals, band-limited below 4 kHz; music is sustained three-note
//! 12-TET chords with slow envelopes; effects are band-passed noise bursts
//! and chirps. Stem energies are offset so the mixture-as-estimate SNR is
//! near 0 dB for dialogue and negative for music and effects.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{save_wav, Corpus, StemSet, Track, WavFormat};
use crate::error::{Error, Result};

/// Target stem energies relative to dialogue; chosen so the mixture
/// baseline lands near +1 dB for dialogue, around -7 dB for music, and
/// around -5 dB for effects.
const MUSIC_ENERGY: f64 = 0.30;
const EFFECTS_ENERGY: f64 = 0.42;

/// Harmonics above this fraction of the sample rate are dropped at render
/// time to keep the grid alias-free.
const RENDER_BAND_FRACTION: f64 = 0.45;

#[derive(Debug, Clone, PartialEq)]
struct Utterance {
    start: f64,
    len: f64,
    f0: f64,
    /// Fractional fundamental drift over the utterance.
    drift: f64,
    am_rate: f64,
    am_phase: f64,
    gain: f64,
    harmonic_phases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct Chord {
    start: f64,
    len: f64,
    /// MIDI note numbers with per-note detune already applied.
    notes: [f64; 3],
    attack: f64,
    release: f64,
    gain: f64,
    partial_phases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
enum EffectEvent {
    NoiseBurst { start: f64, len: f64, center_hz: f64, q: f64, gain: f64, noise_seed: u64 },
    Chirp { start: f64, len: f64, f_from: f64, f_to: f64, gain: f64, phase: f64 },
}

/// Sample-rate-independent description of one track.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackPlan {
    duration: f64,
    utterances: Vec<Utterance>,
    chords: Vec<Chord>,
    effects: Vec<EffectEvent>,
    music_jitter: f64,
    effects_jitter: f64,
}

fn track_rng(seed: u64, track: usize) -> ChaCha8Rng {
    // splitmix-style decorrelation of per-track streams.
    let mut z = seed ^ (track as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

/// Plan one track. Uses only the RNG and the duration; nothing here
/// depends on the sample rate.
pub fn plan_track(rng: &mut ChaCha8Rng, duration: f64) -> TrackPlan {
    let mut utterances = Vec::new();
    let mut t = rng.gen_range(0.02..0.1);
    while t < duration - 0.3 {
        let len = rng.gen_range(0.25..0.6_f64).min(duration - t - 0.05);
        let f0: f64 = rng.gen_range(100.0..300.0);
        let n_harm = (3900.0 / f0).floor() as usize;
        utterances.push(Utterance {
            start: t,
            len,
            f0,
            drift: rng.gen_range(-0.12..0.12),
            am_rate: rng.gen_range(2.5..7.0),
            am_phase: rng.gen_range(0.0..2.0 * PI),
            gain: rng.gen_range(0.7..1.0),
            harmonic_phases: (0..n_harm).map(|_| rng.gen_range(0.0..2.0 * PI)).collect(),
        });
        t += len + rng.gen_range(0.08..0.3);
    }

    let mut chords = Vec::new();
    let mut t = 0.0;
    while t < duration - 0.4 {
        let len = rng.gen_range(1.2..2.8_f64).min(duration - t);
        let root = rng.gen_range(45..=64) as f64;
        let third = if rng.gen_bool(0.5) { 4.0 } else { 3.0 };
        let detune = || -> f64 { 0.0 };
        let _ = detune;
        let notes = [
            root + rng.gen_range(-0.05..0.05),
            root + third + rng.gen_range(-0.05..0.05),
            root + 7.0 + rng.gen_range(-0.05..0.05),
        ];
        chords.push(Chord {
            start: t,
            len,
            notes,
            attack: rng.gen_range(0.2..0.5),
            release: rng.gen_range(0.2..0.4),
            gain: rng.gen_range(0.7..1.0),
            partial_phases: (0..9).map(|_| rng.gen_range(0.0..2.0 * PI)).collect(),
        });
        t += len;
    }

    let mut effects = Vec::new();
    let n_events = ((duration * 1.4).round() as usize).max(2);
    for e in 0..n_events {
        let start = rng.gen_range(0.0..(duration - 0.45).max(0.01));
        if rng.gen_bool(0.55) {
            effects.push(EffectEvent::NoiseBurst {
                start,
                len: rng.gen_range(0.12..0.4),
                center_hz: rng.gen_range(400.0..3200.0),
                q: rng.gen_range(0.8..2.0),
                gain: rng.gen_range(0.6..1.0),
                noise_seed: rng.gen::<u64>() ^ e as u64,
            });
        } else {
            effects.push(EffectEvent::Chirp {
                start,
                len: rng.gen_range(0.3..0.9_f64).min(duration - start),
                f_from: rng.gen_range(300.0..3400.0),
                f_to: rng.gen_range(300.0..3400.0),
                gain: rng.gen_range(0.6..1.0),
                phase: rng.gen_range(0.0..2.0 * PI),
            });
        }
    }

    TrackPlan {
        duration,
        utterances,
        chords,
        effects,
        music_jitter: rng.gen_range(0.85..1.15),
        effects_jitter: rng.gen_range(0.85..1.15),
    }
}

fn envelope(i: usize, n: usize, attack: usize, release: usize) -> f64 {
    let mut e = 1.0;
    if attack > 0 && i < attack {
        e *= i as f64 / attack as f64;
    }
    if release > 0 && i + release >= n {
        e *= (n - i) as f64 / release as f64;
    }
    e
}

fn render_dialogue(plan: &TrackPlan, fs: f64, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    let band_limit = RENDER_BAND_FRACTION * fs;
    for u in &plan.utterances {
        let i0 = (u.start * fs).round() as usize;
        let len = ((u.len * fs).round() as usize).min(n.saturating_sub(i0));
        let attack = (0.012 * fs) as usize;
        let release = (0.03 * fs) as usize;
        let mut phases: Vec<f64> = u.harmonic_phases.clone();
        for i in 0..len {
            let t = i as f64 / fs;
            let f0_t = u.f0 * (1.0 + u.drift * t / u.len.max(1e-9));
            let am = 0.62 + 0.38 * (2.0 * PI * u.am_rate * t + u.am_phase).sin();
            let env = envelope(i, len, attack, release) * am * u.gain;
            let mut sample = 0.0;
            for (h, phase) in phases.iter_mut().enumerate() {
                let freq = (h + 1) as f64 * f0_t;
                if freq < band_limit && freq < 3950.0 {
                    sample += (*phase).sin() / ((h + 1) as f64).powf(0.9);
                }
                *phase += 2.0 * PI * freq / fs;
            }
            out[i0 + i] += env * sample;
        }
    }
    out
}

fn render_music(plan: &TrackPlan, fs: f64, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    let band_limit = RENDER_BAND_FRACTION * fs;
    let partial_amps = [1.0, 0.45, 0.2];
    for chord in &plan.chords {
        let i0 = (chord.start * fs).round() as usize;
        let len = ((chord.len * fs).round() as usize).min(n.saturating_sub(i0));
        let attack = (chord.attack * fs) as usize;
        let release = (chord.release * fs) as usize;
        let mut phases = chord.partial_phases.clone();
        let mut increments = Vec::with_capacity(9);
        for note in &chord.notes {
            let freq = 440.0 * ((note - 69.0) / 12.0).exp2();
            for p in 1..=3usize {
                increments.push(2.0 * PI * (p as f64 * freq) / fs);
            }
        }
        for i in 0..len {
            let env = envelope(i, len, attack, release) * chord.gain;
            let mut sample = 0.0;
            for (k, phase) in phases.iter_mut().enumerate() {
                let freq = increments[k] * fs / (2.0 * PI);
                if freq < band_limit {
                    sample += phase.sin() * partial_amps[k % 3];
                }
                *phase += increments[k];
            }
            out[i0 + i] += env * sample;
        }
    }
    out
}

/// RBJ constant-peak-gain band-pass biquad.
fn bandpass(x: &mut [f64], center_hz: f64, q: f64, fs: f64) {
    let omega = 2.0 * PI * (center_hz / fs).min(0.49);
    let alpha = omega.sin() / (2.0 * q);
    let b0 = alpha;
    let b2 = -alpha;
    let a0 = 1.0 + alpha;
    let a1 = -2.0 * omega.cos();
    let a2 = 1.0 - alpha;
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    for v in x.iter_mut() {
        let x0 = *v;
        let y0 = (b0 * x0 + b2 * x2 - a1 * y1 - a2 * y2) / a0;
        x2 = x1;
        x1 = x0;
        y2 = y1;
        y1 = y0;
        *v = y0;
    }
}

fn render_effects(plan: &TrackPlan, fs: f64, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    let band_limit = RENDER_BAND_FRACTION * fs;
    for event in &plan.effects {
        match event {
            EffectEvent::NoiseBurst { start, len, center_hz, q, gain, noise_seed } => {
                let i0 = (start * fs).round() as usize;
                let len = ((len * fs).round() as usize).min(n.saturating_sub(i0));
                if len == 0 {
                    continue;
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*noise_seed);
                let mut noise: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
                bandpass(&mut noise, center_hz.min(band_limit), *q, fs);
                for (i, v) in noise.iter().enumerate() {
                    let env = (PI * i as f64 / len as f64).sin();
                    out[i0 + i] += gain * env * v;
                }
            }
            EffectEvent::Chirp { start, len, f_from, f_to, gain, phase } => {
                let i0 = (start * fs).round() as usize;
                let len = ((len * fs).round() as usize).min(n.saturating_sub(i0));
                let mut ph = *phase;
                for i in 0..len {
                    let frac = i as f64 / len as f64;
                    let freq = (f_from + (f_to - f_from) * frac).min(band_limit);
                    let env = (PI * frac).sin();
                    out[i0 + i] += gain * env * ph.sin();
                    ph += 2.0 * PI * freq / fs;
                }
            }
        }
    }
    out
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Render a plan at a sample rate, scaled to the target stem energy
/// ratios, peak-normalized on the mixture.
pub fn render_track(plan: &TrackPlan, fs: f64) -> (Array2<f64>, StemSet) {
    let n = (plan.duration * fs).round() as usize;
    let mut dialogue = render_dialogue(plan, fs, n);
    let mut music = render_music(plan, fs, n);
    let mut effects = render_effects(plan, fs, n);

    let e_d = energy(&dialogue).max(1e-12);
    let scale_m = (MUSIC_ENERGY * plan.music_jitter * e_d / energy(&music).max(1e-12)).sqrt();
    let scale_e = (EFFECTS_ENERGY * plan.effects_jitter * e_d / energy(&effects).max(1e-12)).sqrt();
    for v in music.iter_mut() {
        *v *= scale_m;
    }
    for v in effects.iter_mut() {
        *v *= scale_e;
    }

    let mixture: Vec<f64> = dialogue
        .iter()
        .zip(&music)
        .zip(&effects)
        .map(|((d, m), e)| d + m + e)
        .collect();
    let peak = mixture.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1e-9);
    let norm = 0.65 / peak;

    let row = |v: Vec<f64>| Array2::from_shape_vec((1, n), v).expect("row vector");
    for v in dialogue.iter_mut() {
        *v *= norm;
    }
    for v in music.iter_mut() {
        *v *= norm;
    }
    for v in effects.iter_mut() {
        *v *= norm;
    }
    let mixture = row(mixture.into_iter().map(|v| v * norm).collect());
    let stems: StemSet = [
        ("dialogue".to_string(), row(dialogue)),
        ("music".to_string(), row(music)),
        ("effects".to_string(), row(effects)),
    ]
    .into_iter()
    .collect();
    (mixture, stems)
}

fn validate_args(duration: f64, fs: f64) -> Result<()> {
    if fs < 8000.0 {
        return Err(Error::Config(format!("toy corpus needs fs >= 8000 Hz, got {fs}")));
    }
    if duration < 1.0 {
        return Err(Error::Config(format!("toy tracks need >= 1 s, got {duration}")));
    }
    Ok(())
}

/// Generate a toy corpus in memory.
pub fn generate_toy_corpus_mem(n_tracks: usize, duration: f64, fs: f64, seed: u64) -> Result<Corpus> {
    validate_args(duration, fs)?;
    let tracks = (0..n_tracks)
        .map(|i| {
            let mut rng = track_rng(seed, i);
            let plan = plan_track(&mut rng, duration);
            let (mixture, stems) = render_track(&plan, fs);
            Track { name: format!("track_{i:03}"), mixture, stems }
        })
        .collect();
    Ok(Corpus { fs, tracks })
}

/// Generate a toy corpus on disk in the default directory-per-track
/// layout (mix.wav, speech.wav, music.wav, sfx.wav as float32).
pub fn generate_toy_corpus(
    root: &Path,
    n_tracks: usize,
    duration: f64,
    fs: f64,
    seed: u64,
) -> Result<()> {
    let corpus = generate_toy_corpus_mem(n_tracks, duration, fs, seed)?;
    std::fs::create_dir_all(root)?;
    for track in &corpus.tracks {
        let dir = root.join(&track.name);
        std::fs::create_dir_all(&dir)?;
        save_wav(&dir.join("mix.wav"), &track.mixture, fs as u32, WavFormat::Float32)?;
        for (stem, file) in
            [("dialogue", "speech.wav"), ("music", "music.wav"), ("effects", "sfx.wav")]
        {
            save_wav(&dir.join(file), track.stems.get(stem).unwrap(), fs as u32, WavFormat::Float32)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snr_db(est: &Array2<f64>, reference: &Array2<f64>) -> f64 {
        let sig: f64 = reference.iter().map(|v| v * v).sum();
        let err: f64 =
            est.iter().zip(reference.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        10.0 * (sig / err).log10()
    }

    #[test]
    fn same_seed_gives_bitwise_identical_files() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        generate_toy_corpus(&a, 2, 2.0, 8000.0, 42).unwrap();
        generate_toy_corpus(&b, 2, 2.0, 8000.0, 42).unwrap();
        for track in ["track_000", "track_001"] {
            for file in ["mix.wav", "speech.wav", "music.wav", "sfx.wav"] {
                let x = std::fs::read(a.join(track).join(file)).unwrap();
                let y = std::fs::read(b.join(track).join(file)).unwrap();
                assert_eq!(x, y, "{track}/{file}");
            }
        }
    }

    #[test]
    fn mixture_is_stem_sum_within_float32() {
        let corpus = generate_toy_corpus_mem(3, 2.0, 8000.0, 7).unwrap();
        for track in &corpus.tracks {
            let mut sum = Array2::<f64>::zeros(track.mixture.dim());
            for (_, s) in track.stems.iter() {
                sum += s;
            }
            let peak = track.mixture.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
            let dev = track
                .mixture
                .iter()
                .zip(sum.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(dev <= 1e-6 * peak.max(1.0), "deviation {dev}");
        }
    }

    #[test]
    fn mixture_baseline_snr_ordering() {
        let corpus = generate_toy_corpus_mem(6, 3.0, 8000.0, 11).unwrap();
        for track in &corpus.tracks {
            let d = snr_db(&track.mixture, track.stems.get("dialogue").unwrap());
            let m = snr_db(&track.mixture, track.stems.get("music").unwrap());
            let e = snr_db(&track.mixture, track.stems.get("effects").unwrap());
            assert!(d > e && d > m, "{}: dialogue {d:.2} music {m:.2} effects {e:.2}", track.name);
            assert!(m < 0.0 && e < 0.0, "{}: music {m:.2} effects {e:.2}", track.name);
            assert!(d.abs() < 4.0, "{}: dialogue baseline {d:.2} not near 0 dB", track.name);
        }
    }

    #[test]
    fn plans_are_rate_independent_and_render_everywhere() {
        let mut rng_a = track_rng(5, 0);
        let mut rng_b = track_rng(5, 0);
        let plan_a = plan_track(&mut rng_a, 2.0);
        let plan_b = plan_track(&mut rng_b, 2.0);
        assert_eq!(plan_a, plan_b);
        let (mix8, stems8) = render_track(&plan_a, 8000.0);
        let (mix16, stems16) = render_track(&plan_a, 16000.0);
        assert_eq!(mix8.ncols(), 16000);
        assert_eq!(mix16.ncols(), 32000);
        // The same events land at the same relative energies on either grid.
        for stem in ["dialogue", "music", "effects"] {
            let r8 = energy(stems8.get(stem).unwrap().as_slice().unwrap())
                / energy(mix8.as_slice().unwrap());
            let r16 = energy(stems16.get(stem).unwrap().as_slice().unwrap())
                / energy(mix16.as_slice().unwrap());
            assert!((r8 - r16).abs() < 0.25 * r8.max(r16), "{stem}: {r8} vs {r16}");
        }
    }

    #[test]
    fn every_stem_carries_signal() {
        let corpus = generate_toy_corpus_mem(4, 2.0, 8000.0, 99).unwrap();
        for track in &corpus.tracks {
            for (name, s) in track.stems.iter() {
                assert!(energy(s.as_slice().unwrap()) > 1e-6, "{name} silent in {}", track.name);
            }
        }
    }
}
