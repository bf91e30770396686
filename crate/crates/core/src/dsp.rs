//! Short-time Fourier analysis and least-squares overlap-add synthesis.
//!
//! Frames are one-sided (`n_fft / 2 + 1` bins). With center padding the
//! signal is reflect-padded by `n_fft / 2` on both sides so that frame `t` is
//! centered on sample `t * hop`. The synthesis operator is the exact
//! least-squares inverse of the analysis operator: overlap-add contributions
//! that land in the reflected padding are folded back onto the sample they
//! were copied from, and the window-squared normalization is folded the same
//! way. `stft(istft(C))` is therefore an orthogonal projection.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

/// Smallest accepted window-squared sum at any output sample.
pub const MIN_WINDOW_ENERGY: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DspError {
    #[error("invalid STFT parameters: {0}")]
    InvalidParams(String),
    #[error("empty signal")]
    EmptySignal,
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("invalid sample rate {0}")]
    InvalidSampleRate(u32),
    #[error("window length {0} is too short, need at least 2")]
    WindowTooShort(usize),
    #[error("degenerate overlap-add normalization at sample {index} (window energy {energy:e})")]
    DegenerateNormalization { index: usize, energy: f64 },
    #[error("spectrogram shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
}

/// A mono real-valued signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, DspError> {
        if sample_rate == 0 {
            return Err(DspError::InvalidSampleRate(sample_rate));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(DspError::NonFinite(i));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Truncates or zero-pads to exactly `len` samples.
    pub fn fit_to_length(mut self, len: usize) -> Self {
        self.samples.resize(len, 0.0);
        self
    }
}

/// Periodic (DFT-even) Hann window: `w[t] = 0.5 * (1 - cos(2*pi*t / len))`.
pub fn hann_window(win_length: usize) -> Result<Vec<f64>, DspError> {
    if win_length < 2 {
        return Err(DspError::WindowTooShort(win_length));
    }
    let n = win_length as f64;
    Ok((0..win_length)
        .map(|t| 0.5 * (1.0 - (2.0 * PI * t as f64 / n).cos()))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StftParams {
    n_fft: usize,
    hop: usize,
    win_length: usize,
    window: Vec<f64>,
    center: bool,
}

impl StftParams {
    pub fn new(n_fft: usize, hop: usize, window: Vec<f64>, center: bool) -> Result<Self, DspError> {
        let win_length = window.len();
        if n_fft == 0 || hop == 0 || win_length == 0 {
            return Err(DspError::InvalidParams(
                "n_fft, hop and win_length must be positive".into(),
            ));
        }
        if win_length > n_fft {
            return Err(DspError::InvalidParams(format!(
                "win_length {win_length} exceeds n_fft {n_fft}"
            )));
        }
        if hop > win_length {
            return Err(DspError::InvalidParams(format!(
                "hop {hop} exceeds win_length {win_length}"
            )));
        }
        if let Some(v) = window.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(DspError::InvalidParams(format!(
                "window value {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            n_fft,
            hop,
            win_length,
            window,
            center,
        })
    }

    /// Hann-windowed parameters with center padding.
    pub fn hann(n_fft: usize, hop: usize, win_length: usize) -> Result<Self, DspError> {
        Self::new(n_fft, hop, hann_window(win_length)?, true)
    }

    pub fn with_center(mut self, center: bool) -> Self {
        self.center = center;
        self
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn win_length(&self) -> usize {
        self.win_length
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn center(&self) -> bool {
        self.center
    }

    /// Number of one-sided frequency bins.
    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Reflect padding applied to each end of the signal.
    pub fn pad(&self) -> usize {
        if self.center {
            self.n_fft / 2
        } else {
            0
        }
    }

    /// Offset of the window inside the `n_fft` buffer.
    fn window_offset(&self) -> usize {
        (self.n_fft - self.win_length) / 2
    }

    /// Signed position (in signal coordinates) of the first windowed sample of frame `t`.
    fn window_start(&self, t: usize) -> isize {
        let lead = if self.center {
            (self.n_fft / 2 - self.window_offset()) as isize
        } else {
            0
        };
        (t * self.hop) as isize - lead
    }

    /// `ceil((len + pad_total - win_length) / hop) + 1`.
    pub fn n_frames(&self, len: usize) -> usize {
        let span = len + 2 * self.pad();
        if span <= self.win_length {
            return 1;
        }
        (span - self.win_length).div_ceil(self.hop) + 1
    }

    /// Largest signal length whose analysis yields exactly `frames` frames.
    pub fn signal_length_for_frames(&self, frames: usize) -> Option<usize> {
        if frames == 0 {
            return None;
        }
        let len = ((frames - 1) * self.hop + self.win_length).checked_sub(2 * self.pad())?;
        (len > 0 && self.n_frames(len) == frames).then_some(len)
    }

    /// Maps a padded-signal position to the source sample it was copied from.
    fn source_index(&self, i: isize, len: usize) -> Option<usize> {
        let n = len as isize;
        if (0..n).contains(&i) {
            return Some(i as usize);
        }
        if !self.center {
            return None;
        }
        let pad = self.pad() as isize;
        if i < -pad || i >= n + pad {
            return None;
        }
        if len == 1 {
            return Some(0);
        }
        let period = 2 * (n - 1);
        let m = i.rem_euclid(period);
        Some(if m < n { m } else { period - m } as usize)
    }
}

impl Default for StftParams {
    /// 2048-point FFT, hop 300, 1200-sample Hann window, center padding.
    fn default() -> Self {
        Self::hann(2048, 300, 1200).expect("default STFT parameters are valid")
    }
}

/// A one-sided complex spectrogram, `frames` is T x F.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub frames: Array2<Complex64>,
    pub params: StftParams,
    /// Length of the signal this spectrogram describes.
    pub origin_length: usize,
    pub sample_rate: u32,
}

impl ComplexSpectrogram {
    pub fn shape(&self) -> (usize, usize) {
        self.frames.dim()
    }

    pub fn magnitude(&self) -> MagnitudeSpectrogram {
        MagnitudeSpectrogram(self.frames.mapv(|c| c.norm()))
    }

    pub fn is_finite(&self) -> bool {
        self.frames
            .iter()
            .all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frames.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Nonnegative T x F magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeSpectrogram(pub Array2<f64>);

impl MagnitudeSpectrogram {
    pub fn frames(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn zeros(frames: usize, bins: usize) -> Self {
        Self(Array2::zeros((frames, bins)))
    }
}

/// STFT operator pair with cached FFT plans, for repeated use in iterative code.
#[derive(Clone)]
pub struct StftPlan {
    params: StftParams,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for StftPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftPlan")
            .field("params", &self.params)
            .finish_non_exhaustive()
    }
}

impl StftPlan {
    pub fn new(params: &StftParams) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            params: params.clone(),
            forward: planner.plan_fft_forward(params.n_fft),
            inverse: planner.plan_fft_inverse(params.n_fft),
        }
    }

    pub fn params(&self) -> &StftParams {
        &self.params
    }

    /// Analysis operator `T`.
    pub fn analyze(&self, samples: &[f64]) -> Result<Array2<Complex64>, DspError> {
        if samples.is_empty() {
            return Err(DspError::EmptySignal);
        }
        let p = &self.params;
        let len = samples.len();
        let n_frames = p.n_frames(len);
        let n_bins = p.n_bins();
        let off = p.window_offset();
        let mut out = Array2::zeros((n_frames, n_bins));
        let mut buf = vec![Complex64::new(0.0, 0.0); p.n_fft];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
        for t in 0..n_frames {
            buf.fill(Complex64::new(0.0, 0.0));
            let start = p.window_start(t);
            for (j, &w) in p.window.iter().enumerate() {
                if let Some(s) = p.source_index(start + j as isize, len) {
                    buf[off + j] = Complex64::new(w * samples[s], 0.0);
                }
            }
            self.forward.process_with_scratch(&mut buf, &mut scratch);
            for (dst, src) in out.row_mut(t).iter_mut().zip(&buf[..n_bins]) {
                *dst = *src;
            }
        }
        Ok(out)
    }

    /// Least-squares synthesis operator `T_dagger` onto a signal of `len` samples.
    pub fn synthesize(&self, frames: &Array2<Complex64>, len: usize) -> Result<Vec<f64>, DspError> {
        let p = &self.params;
        let n = p.n_fft;
        let n_bins = p.n_bins();
        if frames.ncols() != n_bins {
            return Err(DspError::ShapeMismatch {
                expected: (frames.nrows(), n_bins),
                actual: frames.dim(),
            });
        }
        if len == 0 {
            return Ok(Vec::new());
        }
        let off = p.window_offset();
        let scale = 1.0 / n as f64;
        let mut acc = vec![0.0; len];
        let mut norm = vec![0.0; len];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.inverse.get_inplace_scratch_len()];
        for (t, row) in frames.outer_iter().enumerate() {
            for (f, c) in row.iter().enumerate() {
                buf[f] = *c;
            }
            // Hermitian mirror; the real part of the inverse ignores Im at DC and Nyquist.
            for f in n_bins..n {
                buf[f] = buf[n - f].conj();
            }
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            let start = p.window_start(t);
            for (j, &w) in p.window.iter().enumerate() {
                if let Some(s) = p.source_index(start + j as isize, len) {
                    acc[s] += w * buf[off + j].re * scale;
                    norm[s] += w * w;
                }
            }
        }
        for (i, (a, &e)) in acc.iter_mut().zip(&norm).enumerate() {
            if e < MIN_WINDOW_ENERGY {
                return Err(DspError::DegenerateNormalization {
                    index: i,
                    energy: e,
                });
            }
            *a /= e;
        }
        Ok(acc)
    }
}

pub fn stft(y: &Waveform, params: &StftParams) -> Result<ComplexSpectrogram, DspError> {
    let frames = StftPlan::new(params).analyze(&y.samples)?;
    Ok(ComplexSpectrogram {
        frames,
        params: params.clone(),
        origin_length: y.len(),
        sample_rate: y.sample_rate,
    })
}

pub fn istft(spec: &ComplexSpectrogram, target_length: usize) -> Result<Waveform, DspError> {
    if let Some(i) = spec
        .frames
        .iter()
        .position(|c| !(c.re.is_finite() && c.im.is_finite()))
    {
        return Err(DspError::NonFinite(i));
    }
    let samples = StftPlan::new(&spec.params).synthesize(&spec.frames, target_length)?;
    Ok(Waveform {
        samples,
        sample_rate: spec.sample_rate,
    })
}
