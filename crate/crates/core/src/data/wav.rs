//! Minimal RIFF/WAVE reader and writer: PCM16 and IEEE float32, one or two
//! channels. Parse errors carry the byte offset of the problem.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Float32,
}

fn parse_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Parse { offset, msg: msg.into() }
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    let end = at.checked_add(4).filter(|&e| e <= bytes.len());
    match end {
        Some(e) => Ok(u32::from_le_bytes(bytes[at..e].try_into().unwrap())),
        None => Err(parse_err(at, "truncated file")),
    }
}

fn read_u16(bytes: &[u8], at: usize) -> Result<u16> {
    let end = at.checked_add(2).filter(|&e| e <= bytes.len());
    match end {
        Some(e) => Ok(u16::from_le_bytes(bytes[at..e].try_into().unwrap())),
        None => Err(parse_err(at, "truncated file")),
    }
}

/// Load a WAV file as `(channels, samples)` in [-1, 1] plus its sample
/// rate. PCM16 samples are scaled by 1/32768; float32 is used as-is.
pub fn load_wav(path: &Path) -> Result<(Array2<f64>, u32)> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 12 {
        return Err(parse_err(0, "file shorter than a RIFF header"));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(parse_err(0, "missing RIFF magic"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(parse_err(8, "missing WAVE form type"));
    }

    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // codec, channels, rate, bits
    let mut data: Option<(usize, usize)> = None; // offset, len
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(&bytes, pos + 4)? as usize;
        let body = pos + 8;
        if body + size > bytes.len() {
            return Err(parse_err(pos, format!("chunk {:?} overruns the file", ascii(id))));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(parse_err(body, "fmt chunk shorter than 16 bytes"));
                }
                let mut codec = read_u16(&bytes, body)?;
                let channels = read_u16(&bytes, body + 2)?;
                let rate = read_u32(&bytes, body + 4)?;
                let bits = read_u16(&bytes, body + 14)?;
                if codec == 0xFFFE {
                    // WAVE_FORMAT_EXTENSIBLE: the real codec leads the GUID.
                    if size < 40 {
                        return Err(parse_err(body, "extensible fmt chunk too short"));
                    }
                    codec = read_u16(&bytes, body + 24)?;
                }
                fmt = Some((codec, channels, rate, bits));
            }
            b"data" => data = Some((body, size)),
            _ => {}
        }
        pos = body + size + (size & 1); // chunks are word-aligned
    }

    let (codec, channels, rate, bits) =
        fmt.ok_or_else(|| parse_err(12, "no fmt chunk found"))?;
    let (data_off, data_len) = data.ok_or_else(|| parse_err(12, "no data chunk found"))?;
    if !(1..=2).contains(&channels) {
        return Err(parse_err(data_off, format!("{channels} channels unsupported (want 1-2)")));
    }
    let channels = channels as usize;

    let samples: Vec<f64> = match (codec, bits) {
        (1, 16) => bytes[data_off..data_off + data_len - data_len % 2]
            .chunks_exact(2)
            .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0)
            .collect(),
        (3, 32) => bytes[data_off..data_off + data_len - data_len % 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect(),
        _ => {
            return Err(parse_err(
                data_off,
                format!("unsupported codec {codec} at {bits} bits (want PCM16 or float32)"),
            ))
        }
    };
    let frames = samples.len() / channels;
    let mut out = Array2::<f64>::zeros((channels, frames));
    for (i, &v) in samples[..frames * channels].iter().enumerate() {
        out[[i % channels, i / channels]] = v;
    }
    Ok((out, rate))
}

fn ascii(id: &[u8]) -> String {
    id.iter().map(|&b| if b.is_ascii_graphic() { b as char } else { '.' }).collect()
}

/// Write a WAV file. Float32 round-trips bit-exactly through
/// [`load_wav`]; PCM16 clamps to [-1, 1) and quantizes.
pub fn save_wav(path: &Path, signal: &Array2<f64>, fs: u32, format: WavFormat) -> Result<()> {
    let (channels, frames) = signal.dim();
    if !(1..=2).contains(&channels) {
        return Err(Error::Config(format!("{channels} channels unsupported (want 1-2)")));
    }
    let bytes_per = match format {
        WavFormat::Pcm16 => 2usize,
        WavFormat::Float32 => 4usize,
    };
    let data_len = frames * channels * bytes_per;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    let codec: u16 = match format {
        WavFormat::Pcm16 => 1,
        WavFormat::Float32 => 3,
    };
    out.extend_from_slice(&codec.to_le_bytes());
    out.extend_from_slice(&(channels as u16).to_le_bytes());
    out.extend_from_slice(&fs.to_le_bytes());
    let byte_rate = fs * channels as u32 * bytes_per as u32;
    out.extend_from_slice(&byte_rate.to_le_bytes());
    out.extend_from_slice(&((channels * bytes_per) as u16).to_le_bytes());
    out.extend_from_slice(&((bytes_per * 8) as u16).to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for t in 0..frames {
        for c in 0..channels {
            let v = signal[[c, t]];
            match format {
                WavFormat::Pcm16 => {
                    let q = (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    out.extend_from_slice(&q.to_le_bytes());
                }
                WavFormat::Float32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            }
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn float32_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array2::from_shape_fn((2, 500), |_| rng.gen_range(-1.0..1.0));
        save_wav(&path, &x, 8000, WavFormat::Float32).unwrap();
        let (y, fs) = load_wav(&path).unwrap();
        assert_eq!(fs, 8000);
        assert_eq!(y.dim(), x.dim());
        for (a, b) in x.iter().zip(y.iter()) {
            assert_eq!((*a as f32).to_bits(), (*b as f32).to_bits());
        }
        // Saving the loaded data again reproduces the same file bytes.
        let path2 = dir.path().join("y.wav");
        save_wav(&path2, &y, 8000, WavFormat::Float32).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn pcm16_full_scale_negative_maps_to_minus_one() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.wav");
        let x = Array2::from_shape_vec((1, 3), vec![-1.0, 0.0, 0.5]).unwrap();
        save_wav(&path, &x, 44100, WavFormat::Pcm16).unwrap();
        let (y, _) = load_wav(&path).unwrap();
        assert_eq!(y[[0, 0]], -1.0);
        assert_eq!(y[[0, 1]], 0.0);
        assert!((y[[0, 2]] - 0.5).abs() < 1.0 / 32768.0);
    }

    #[test]
    fn tone_file_hits_expected_stft_bin() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tone.wav");
        let fs = 44100.0;
        let n = 44100;
        let x = Array2::from_shape_fn((1, n), |(_, i)| {
            (2.0 * std::f64::consts::PI * 440.0 * i as f64 / fs).sin() * 0.7
        });
        save_wav(&path, &x, 44100, WavFormat::Float32).unwrap();
        let (y, rate) = load_wav(&path).unwrap();
        let cfg = crate::dsp::StftConfig { fs: rate as f64, ..Default::default() };
        let spec = crate::dsp::stft(&y, &cfg).unwrap();
        // Dominant bin equals 440 * n_fft / fs, rounded to the FFT grid.
        let t = spec.num_frames() / 2;
        let dominant = (0..spec.num_bins())
            .max_by(|&a, &b| {
                spec.data[[0, a, t]].norm().total_cmp(&spec.data[[0, b, t]].norm())
            })
            .unwrap();
        let expected = (440.0 * cfg.n_fft as f64 / cfg.fs).round() as usize;
        assert_eq!(dominant, expected);
    }

    #[test]
    fn malformed_headers_report_offsets() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.wav");
        std::fs::write(&path, b"RIFX....WAVE").unwrap();
        match load_wav(&path) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected parse error, got {other:?}"),
        }
        std::fs::write(&path, b"RIFF\x04\x00\x00\x00WAVE").unwrap();
        match load_wav(&path) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 12),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unsupported_codec_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("alaw.wav");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&(36u32).to_le_bytes());
        bytes.extend_from_slice(b"WAVE");
        bytes.extend_from_slice(b"fmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&6u16.to_le_bytes()); // a-law
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&8000u32.to_le_bytes());
        bytes.extend_from_slice(&8000u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&8u16.to_le_bytes());
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&0u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_wav(&path), Err(Error::Parse { .. })));
    }
}
