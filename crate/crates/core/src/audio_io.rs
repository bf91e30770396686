//! Mono RIFF/WAVE reading and writing (PCM16 and IEEE float32).

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::dsp::Waveform;

const FORMAT_PCM: u16 = 1;
const FORMAT_IEEE_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Error)]
pub enum WavError {
    #[error("unsupported channel count {0}")]
    UnsupportedChannels(u16),
    #[error("unsupported sample format (tag {tag}, {bits} bits)")]
    UnsupportedFormat { tag: u16, bits: u16 },
    #[error("malformed wav: {0}")]
    Malformed(String),
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BitDepth {
    Pcm16,
    #[default]
    Float32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WavSpec {
    pub sample_rate: u32,
    pub bit_depth: BitDepth,
}

impl WavSpec {
    pub fn channels(&self) -> u16 {
        1
    }
}

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<(Waveform, WavSpec), WavError> {
    decode_wav(&fs::read(path)?)
}

pub fn decode_wav(bytes: &[u8]) -> Result<(Waveform, WavSpec), WavError> {
    if bytes.len() < 12 || &bytes[..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(WavError::Malformed("missing RIFF/WAVE header".into()));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        let end = body
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| {
                WavError::Malformed(format!("chunk '{}' truncated", String::from_utf8_lossy(id)))
            })?;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(WavError::Malformed("fmt chunk too short".into()));
                }
                let mut tag = u16_at(bytes, body);
                let channels = u16_at(bytes, body + 2);
                let rate = u32_at(bytes, body + 4);
                let bits = u16_at(bytes, body + 14);
                if tag == FORMAT_EXTENSIBLE && size >= 26 {
                    tag = u16_at(bytes, body + 24);
                }
                fmt = Some((tag, channels, rate, bits));
            }
            b"data" => data = Some(&bytes[body..end]),
            _ => {}
        }
        pos = end + (size & 1);
    }
    let (tag, channels, rate, bits) =
        fmt.ok_or_else(|| WavError::Malformed("missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| WavError::Malformed("missing data chunk".into()))?;
    if channels != 1 {
        return Err(WavError::UnsupportedChannels(channels));
    }
    if rate == 0 {
        return Err(WavError::Malformed("zero sample rate".into()));
    }
    let (bit_depth, samples): (BitDepth, Vec<f64>) = match (tag, bits) {
        (FORMAT_PCM, 16) => {
            if data.len() % 2 != 0 {
                return Err(WavError::Malformed("odd PCM16 payload".into()));
            }
            let s = data
                .chunks_exact(2)
                .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
                .collect();
            (BitDepth::Pcm16, s)
        }
        (FORMAT_IEEE_FLOAT, 32) => {
            if data.len() % 4 != 0 {
                return Err(WavError::Malformed(
                    "float32 payload not a multiple of 4".into(),
                ));
            }
            let s: Vec<f64> = data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            if let Some(i) = s.iter().position(|v| !v.is_finite()) {
                return Err(WavError::NonFinite(i));
            }
            (BitDepth::Float32, s)
        }
        (tag, bits) => return Err(WavError::UnsupportedFormat { tag, bits }),
    };
    Ok((
        Waveform {
            samples,
            sample_rate: rate,
        },
        WavSpec {
            sample_rate: rate,
            bit_depth,
        },
    ))
}

/// PCM16 code for a sample: clamp to `[-1, 1 - 2^-15]`, scale by 32768, round half away from zero.
pub fn to_pcm16(v: f64) -> i16 {
    let clamped = v.clamp(-1.0, 1.0 - 1.0 / 32768.0);
    (clamped * 32768.0).round() as i16
}

pub fn write_wav(path: impl AsRef<Path>, y: &Waveform, spec: WavSpec) -> Result<(), WavError> {
    fs::write(path, encode_wav(y, spec)?)?;
    Ok(())
}

/// Canonical 44-byte header followed by the sample payload.
pub fn encode_wav(y: &Waveform, spec: WavSpec) -> Result<Vec<u8>, WavError> {
    if let Some(i) = y.samples.iter().position(|v| !v.is_finite()) {
        return Err(WavError::NonFinite(i));
    }
    let (tag, bytes_per_sample) = match spec.bit_depth {
        BitDepth::Pcm16 => (FORMAT_PCM, 2u32),
        BitDepth::Float32 => (FORMAT_IEEE_FLOAT, 4u32),
    };
    let data_len = u32::try_from(y.len() as u64 * bytes_per_sample as u64)
        .ok()
        .filter(|n| *n <= u32::MAX - 36)
        .ok_or_else(|| WavError::Malformed("signal too long for a RIFF file".into()))?;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&tag.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&spec.sample_rate.to_le_bytes());
    out.extend_from_slice(&(spec.sample_rate * bytes_per_sample).to_le_bytes());
    out.extend_from_slice(&(bytes_per_sample as u16).to_le_bytes());
    out.extend_from_slice(&(8 * bytes_per_sample as u16).to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    match spec.bit_depth {
        BitDepth::Pcm16 => {
            for &v in &y.samples {
                out.extend_from_slice(&to_pcm16(v).to_le_bytes());
            }
        }
        BitDepth::Float32 => {
            for &v in &y.samples {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn float_spec() -> WavSpec {
        WavSpec {
            sample_rate: 22050,
            bit_depth: BitDepth::Float32,
        }
    }

    fn pcm_spec() -> WavSpec {
        WavSpec {
            sample_rate: 22050,
            bit_depth: BitDepth::Pcm16,
        }
    }

    #[test]
    fn pcm16_scaling() {
        assert_eq!(to_pcm16(0.5), 16384);
        assert_eq!(to_pcm16(2.0), 32767);
        assert_eq!(to_pcm16(-1.0), -32768);
        assert_eq!(to_pcm16(-3.0), -32768);
        // 1.5 / 32768 rounds away from zero
        assert_eq!(to_pcm16(1.5 / 32768.0), 2);
        assert_eq!(to_pcm16(-1.5 / 32768.0), -2);
    }

    #[test]
    fn header_layout_and_pcm_payload() {
        let y = Waveform::new(vec![0.5, 2.0, -1.0], 22050).unwrap();
        let bytes = encode_wav(&y, pcm_spec()).unwrap();
        assert_eq!(bytes.len(), 44 + 6);
        assert_eq!(&bytes[0..4], b"RIFF");
        assert_eq!(u32_at(&bytes, 4), 36 + 6);
        assert_eq!(&bytes[36..40], b"data");
        assert_eq!(i16::from_le_bytes([bytes[44], bytes[45]]), 16384);
        assert_eq!(i16::from_le_bytes([bytes[46], bytes[47]]), 32767);
        let (back, spec) = decode_wav(&bytes).unwrap();
        assert_eq!(spec, pcm_spec());
        assert_eq!(back.samples[2], -1.0);
    }

    #[test]
    fn float_payload_is_verbatim() {
        let y = Waveform::new(vec![0.25, -0.125], 16000).unwrap();
        let spec = WavSpec {
            sample_rate: 16000,
            bit_depth: BitDepth::Float32,
        };
        let bytes = encode_wav(&y, spec).unwrap();
        assert_eq!(&bytes[44..48], &0.25f32.to_le_bytes());
        assert_eq!(u16_at(&bytes, 20), FORMAT_IEEE_FLOAT);
    }

    #[test]
    fn rejects_stereo_and_bad_files() {
        let y = Waveform::new(vec![0.0; 4], 22050).unwrap();
        let mut bytes = encode_wav(&y, pcm_spec()).unwrap();
        bytes[22] = 2;
        let err = decode_wav(&bytes).unwrap_err();
        assert_eq!(err.to_string(), "unsupported channel count 2");

        let good = encode_wav(&y, pcm_spec()).unwrap();
        assert!(matches!(
            decode_wav(&good[..good.len() - 1]),
            Err(WavError::Malformed(_))
        ));
        assert!(decode_wav(b"RIFX").is_err());
        let mut eight_bit = good.clone();
        eight_bit[34] = 8;
        assert!(matches!(
            decode_wav(&eight_bit),
            Err(WavError::UnsupportedFormat { .. })
        ));
        assert!(read_wav("/nonexistent/file.wav").is_err());
    }

    #[test]
    fn skips_unknown_chunks() {
        let y = Waveform::new(vec![0.5, -0.5], 22050).unwrap();
        let canonical = encode_wav(&y, float_spec()).unwrap();
        let mut bytes = canonical[..36].to_vec();
        bytes.extend_from_slice(b"LIST");
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&[1, 2, 3, 0]);
        bytes.extend_from_slice(&canonical[36..]);
        let (back, _) = decode_wav(&bytes).unwrap();
        assert_eq!(back.samples, vec![0.5, -0.5]);
    }

    proptest! {
        #[test]
        fn float32_round_trip_is_bit_exact(values in prop::collection::vec(-4.0f32..4.0, 0..200)) {
            let y = Waveform::new(values.iter().map(|&v| v as f64).collect(), 22050).unwrap();
            let (back, _) = decode_wav(&encode_wav(&y, float_spec()).unwrap()).unwrap();
            prop_assert_eq!(back.samples, y.samples);
        }

        #[test]
        fn pcm16_round_trip_error_is_bounded(values in prop::collection::vec(-1.0f64..1.0, 0..200)) {
            let y = Waveform::new(values, 22050).unwrap();
            let (back, _) = decode_wav(&encode_wav(&y, pcm_spec()).unwrap()).unwrap();
            for (a, b) in y.samples.iter().zip(&back.samples) {
                prop_assert!((a - b).abs() <= 1.0 / 32768.0);
            }
        }
    }
}
