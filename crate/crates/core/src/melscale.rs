//! Triangular mel filterbanks, magnitude mel spectrograms and their
//! least-squares inversion.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use ndarray::Array2;
use thiserror::Error;

use crate::dsp::MagnitudeSpectrogram;

/// Singular values below this fraction of the largest are treated as zero.
pub const PINV_RELATIVE_CUTOFF: f64 = 1e-8;

const MELS_MAGIC: &[u8; 4] = b"MELS";
const MELS_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MelError {
    #[error("invalid filterbank layout: {0}")]
    InvalidLayout(String),
    #[error("dimension mismatch: expected {expected} columns, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("malformed mel file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

#[derive(Debug, Clone)]
pub struct MelFilterbank {
    weights: Array2<f64>,
    sample_rate: u32,
    n_fft: usize,
    f_min: f64,
    f_max: f64,
    pinv: OnceLock<Array2<f64>>,
}

/// Builds `n_mels` unnormalized triangular filters (peak 1) with centers
/// uniformly spaced on the HTK mel scale between `f_min` and `f_max`.
pub fn mel_filterbank(
    sample_rate: u32,
    n_fft: usize,
    n_mels: usize,
    f_min: f64,
    f_max: f64,
) -> Result<MelFilterbank, MelError> {
    let nyquist = sample_rate as f64 / 2.0;
    if sample_rate == 0 || n_fft < 2 {
        return Err(MelError::InvalidLayout(format!(
            "sample_rate {sample_rate} and n_fft {n_fft} must be positive"
        )));
    }
    if !(0.0 <= f_min && f_min < f_max && f_max <= nyquist) {
        return Err(MelError::InvalidLayout(format!(
            "need 0 <= f_min < f_max <= {nyquist}, got f_min={f_min} f_max={f_max}"
        )));
    }
    if n_mels == 0 {
        return Err(MelError::InvalidLayout("at least one band required".into()));
    }
    let n_bins = n_fft / 2 + 1;
    let bin_hz = |k: usize| k as f64 * sample_rate as f64 / n_fft as f64;
    let in_range = (0..n_bins)
        .filter(|&k| (f_min..=f_max).contains(&bin_hz(k)))
        .count();
    if n_mels > in_range {
        return Err(MelError::InvalidLayout(format!(
            "{n_mels} bands but only {in_range} bins between {f_min} and {f_max} Hz"
        )));
    }

    let (mel_lo, mel_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();

    let mut weights = Array2::zeros((n_mels, n_bins));
    for (b, mut row) in weights.outer_iter_mut().enumerate() {
        let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
        for (k, w) in row.iter_mut().enumerate() {
            let f = bin_hz(k);
            let rising = (f - lo) / (mid - lo);
            let falling = (hi - f) / (hi - mid);
            *w = rising.min(falling).max(0.0);
        }
        if !row.iter().any(|&w| w > 0.0) {
            return Err(MelError::InvalidLayout(format!(
                "band {b} ({lo:.1}-{hi:.1} Hz) covers no frequency bin"
            )));
        }
    }

    Ok(MelFilterbank {
        weights,
        sample_rate,
        n_fft,
        f_min,
        f_max,
        pinv: OnceLock::new(),
    })
}

impl MelFilterbank {
    /// B x F filter weights.
    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn n_mels(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.weights.ncols()
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn f_min(&self) -> f64 {
        self.f_min
    }

    pub fn f_max(&self) -> f64 {
        self.f_max
    }

    /// F x B Moore-Penrose pseudo-inverse, computed on first use.
    pub fn pseudo_inverse(&self) -> &Array2<f64> {
        self.pinv.get_or_init(|| svd_pseudo_inverse(&self.weights))
    }
}

fn svd_pseudo_inverse(m: &Array2<f64>) -> Array2<f64> {
    let (rows, cols) = m.dim();
    let dm = DMatrix::from_fn(rows, cols, |i, j| m[[i, j]]);
    let svd = dm.svd(true, true);
    let cutoff = PINV_RELATIVE_CUTOFF * svd.singular_values.max();
    let pinv = svd
        .pseudo_inverse(cutoff)
        .expect("both singular vector sets were requested");
    Array2::from_shape_fn((cols, rows), |(i, j)| pinv[(i, j)])
}

/// T x B nonnegative mel magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub frames: Array2<f64>,
    pub sample_rate: u32,
}

impl MelSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn n_mels(&self) -> usize {
        self.frames.ncols()
    }
}

/// `X = S M^T` frame by frame.
pub fn mel_spectrogram(
    s: &MagnitudeSpectrogram,
    fb: &MelFilterbank,
) -> Result<MelSpectrogram, MelError> {
    if s.0.ncols() != fb.n_bins() {
        return Err(MelError::DimensionMismatch {
            expected: fb.n_bins(),
            actual: s.0.ncols(),
        });
    }
    Ok(MelSpectrogram {
        frames: s.0.dot(&fb.weights.t()),
        sample_rate: fb.sample_rate,
    })
}

/// `S_hat = max(X (M^+)^T, 0)` frame by frame.
pub fn pseudo_inverse_magnitude(
    x: &MelSpectrogram,
    fb: &MelFilterbank,
) -> Result<MagnitudeSpectrogram, MelError> {
    if x.n_mels() != fb.n_mels() {
        return Err(MelError::DimensionMismatch {
            expected: fb.n_mels(),
            actual: x.n_mels(),
        });
    }
    let mut s = x.frames.dot(&fb.pseudo_inverse().t());
    s.mapv_inplace(|v| v.max(0.0));
    Ok(MagnitudeSpectrogram(s))
}

/// Writes the little-endian `MELS` interchange format.
pub fn write_mels(path: impl AsRef<Path>, mel: &MelSpectrogram) -> Result<(), MelError> {
    let mut w = BufWriter::new(File::create(path)?);
    encode_mels(&mut w, mel)?;
    w.flush()?;
    Ok(())
}

pub fn read_mels(path: impl AsRef<Path>) -> Result<MelSpectrogram, MelError> {
    decode_mels(&mut BufReader::new(File::open(path)?))
}

pub fn encode_mels(w: &mut impl Write, mel: &MelSpectrogram) -> Result<(), MelError> {
    let (t, b) = mel.frames.dim();
    let dims = |n: usize| {
        u32::try_from(n).map_err(|_| MelError::Format(format!("dimension {n} exceeds u32")))
    };
    w.write_all(MELS_MAGIC)?;
    w.write_all(&MELS_VERSION.to_le_bytes())?;
    w.write_all(&dims(t)?.to_le_bytes())?;
    w.write_all(&dims(b)?.to_le_bytes())?;
    w.write_all(&(mel.sample_rate as f32).to_le_bytes())?;
    for v in mel.frames.iter() {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn decode_mels(r: &mut impl Read) -> Result<MelSpectrogram, MelError> {
    let mut header = [0u8; 20];
    r.read_exact(&mut header)
        .map_err(|_| MelError::Format("truncated header".into()))?;
    if &header[..4] != MELS_MAGIC {
        return Err(MelError::Format("bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != MELS_VERSION {
        return Err(MelError::Format(format!("unsupported version {version}")));
    }
    let (t, b) = (word(8) as usize, word(12) as usize);
    let rate = f32::from_le_bytes(header[16..20].try_into().unwrap());
    if !(rate.is_finite() && rate >= 1.0 && rate.fract() == 0.0) {
        return Err(MelError::Format(format!("invalid sample rate {rate}")));
    }
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    let expected = t
        .checked_mul(b)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| MelError::Format("dimensions overflow".into()))?;
    if data.len() != expected {
        return Err(MelError::Format(format!(
            "expected {expected} payload bytes, found {}",
            data.len()
        )));
    }
    let values: Vec<f64> = data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(MelError::Format(
            "mel values must be finite and nonnegative".into(),
        ));
    }
    Ok(MelSpectrogram {
        frames: Array2::from_shape_vec((t, b), values).expect("length checked"),
        sample_rate: rate as u32,
    })
}
