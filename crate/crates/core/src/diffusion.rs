//! Diffusion primitives: noise schedules, closed-form forward noising, the
//! WaveGrad reverse update, noise predictors and spectrally shaped noise.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::dsp::{DspError, MagnitudeSpectrogram, StftParams, StftPlan, Waveform};
use crate::melscale::MelSpectrogram;

/// WaveGrad 6-step inference schedule.
pub const WG6_BETAS: [f64; 6] = [7e-6, 1.4e-4, 2.1e-3, 2.8e-2, 3.5e-1, 7e-1];

pub const DEFAULT_CEPSTRAL_ORDER: usize = 24;
/// Log floor of the envelope, relative to the spectrogram maximum.
pub const ENVELOPE_FLOOR: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("beta {value} at step {step} is outside (0, 1)")]
    InvalidBeta { step: usize, value: f64 },
    #[error("empty noise schedule")]
    EmptySchedule,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("step {n} outside 1..={len}")]
    StepOutOfRange { n: usize, len: usize },
    #[error("the final reverse step requires z = 0")]
    NonzeroFinalNoise,
    #[error("noise level {0} outside the admissible range")]
    InvalidAlphaBar(f64),
    #[error("cepstral order must be at least 1")]
    InvalidOrder,
    #[error("envelope entry {value} at ({frame}, {bin}) is not strictly positive")]
    NonPositiveEnvelope {
        frame: usize,
        bin: usize,
        value: f64,
    },
    #[error("malformed schedule: {0}")]
    Schedule(String),
    #[error("predictor failed: {0}")]
    Predictor(String),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How the per-step noise deviation is derived from the schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SigmaConvention {
    /// `sigma_n = sqrt((1 - abar_{n-1}) / (1 - abar_n) * beta_n)`.
    #[default]
    Sqrt,
    /// The same expression without the square root.
    Literal,
}

/// Per-step schedule quantities. Steps are indexed `1..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    sigmas: Vec<f64>,
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self, DiffusionError> {
        Self::with_sigma_convention(betas, SigmaConvention::Sqrt)
    }

    pub fn with_sigma_convention(
        betas: Vec<f64>,
        convention: SigmaConvention,
    ) -> Result<Self, DiffusionError> {
        if betas.is_empty() {
            return Err(DiffusionError::EmptySchedule);
        }
        for (i, &b) in betas.iter().enumerate() {
            if !(b > 0.0 && b < 1.0) {
                return Err(DiffusionError::InvalidBeta {
                    step: i + 1,
                    value: b,
                });
            }
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars: Vec<f64> = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        let sigmas = betas
            .iter()
            .enumerate()
            .map(|(i, &b)| {
                let prev = if i == 0 { 1.0 } else { alpha_bars[i - 1] };
                let var = (1.0 - prev) / (1.0 - alpha_bars[i]) * b;
                match convention {
                    SigmaConvention::Sqrt => var.sqrt(),
                    SigmaConvention::Literal => var,
                }
            })
            .collect();
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
            sigmas,
        })
    }

    pub fn wg6() -> Self {
        Self::from_betas(WG6_BETAS.to_vec()).expect("WG-6 betas are valid")
    }

    /// 50 betas spaced linearly from 1e-4 to 0.05. Not the published WG-50 values.
    pub fn wg50_placeholder() -> Self {
        Self::from_betas(linear_betas(50, 1e-4, 0.05)).expect("linear betas are valid")
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// `abar_1 ..= abar_N`.
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn alpha(&self, n: usize) -> f64 {
        self.alphas[n - 1]
    }

    /// `abar_n`, with `abar_0 = 1`.
    pub fn alpha_bar(&self, n: usize) -> f64 {
        if n == 0 {
            1.0
        } else {
            self.alpha_bars[n - 1]
        }
    }

    pub fn sigma(&self, n: usize) -> f64 {
        self.sigmas[n - 1]
    }
}

pub fn linear_betas(n: usize, start: f64, end: f64) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..n)
            .map(|i| start + (end - start) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Parses one beta per line. Blank lines are ignored.
pub fn parse_betas(text: &str) -> Result<Vec<f64>, DiffusionError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<f64>()
                .map_err(|e| DiffusionError::Schedule(format!("line {}: {e}", i + 1)))
        })
        .collect()
}

/// Resolves `wg6`, `wg50` or a path to a beta file.
pub fn load_schedule(
    source: &str,
    convention: SigmaConvention,
) -> Result<NoiseSchedule, DiffusionError> {
    let betas = match source {
        "wg6" => WG6_BETAS.to_vec(),
        "wg50" => linear_betas(50, 1e-4, 0.05),
        path => parse_betas(&fs::read_to_string(Path::new(path))?)?,
    };
    NoiseSchedule::with_sigma_convention(betas, convention)
}

fn check_len(a: usize, b: usize) -> Result<(), DiffusionError> {
    if a == b {
        Ok(())
    } else {
        Err(DiffusionError::LengthMismatch(a, b))
    }
}

/// `sqrt(abar) * y0 + sqrt(1 - abar) * eps`.
pub fn forward_diffuse(
    y0: &Waveform,
    alpha_bar: f64,
    eps: &Waveform,
) -> Result<Waveform, DiffusionError> {
    check_len(y0.len(), eps.len())?;
    if !(0.0..=1.0).contains(&alpha_bar) {
        return Err(DiffusionError::InvalidAlphaBar(alpha_bar));
    }
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    Ok(Waveform {
        samples: y0
            .samples
            .iter()
            .zip(&eps.samples)
            .map(|(y, e)| a * y + b * e)
            .collect(),
        sample_rate: y0.sample_rate,
    })
}

/// The noise that turns `y0` into `y_n` at level `alpha_bar`.
pub fn oracle_epsilon(
    y_n: &Waveform,
    y0: &Waveform,
    alpha_bar: f64,
) -> Result<Waveform, DiffusionError> {
    check_len(y_n.len(), y0.len())?;
    if !(alpha_bar > 0.0 && alpha_bar < 1.0) {
        return Err(DiffusionError::InvalidAlphaBar(alpha_bar));
    }
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    Ok(Waveform {
        samples: y_n
            .samples
            .iter()
            .zip(&y0.samples)
            .map(|(yn, y)| (yn - a * y) / b)
            .collect(),
        sample_rate: y_n.sample_rate,
    })
}

/// One WaveGrad reverse update:
/// `y_{n-1} = (y_n - (1 - alpha_n) / sqrt(1 - abar_n) * eps_hat) / sqrt(alpha_n) + sigma_n * z`.
pub fn reverse_step(
    y_n: &Waveform,
    eps_hat: &Waveform,
    n: usize,
    schedule: &NoiseSchedule,
    z: &Waveform,
) -> Result<Waveform, DiffusionError> {
    if n == 0 || n > schedule.len() {
        return Err(DiffusionError::StepOutOfRange {
            n,
            len: schedule.len(),
        });
    }
    check_len(y_n.len(), eps_hat.len())?;
    check_len(y_n.len(), z.len())?;
    if n == 1 && z.samples.iter().any(|&v| v != 0.0) {
        return Err(DiffusionError::NonzeroFinalNoise);
    }
    let alpha = schedule.alpha(n);
    let eps_coef = (1.0 - alpha) / (1.0 - schedule.alpha_bar(n)).sqrt();
    let inv_sqrt_alpha = 1.0 / alpha.sqrt();
    let sigma = schedule.sigma(n);
    Ok(Waveform {
        samples: y_n
            .samples
            .iter()
            .zip(&eps_hat.samples)
            .zip(&z.samples)
            .map(|((y, e), z)| (y - eps_coef * e) * inv_sqrt_alpha + sigma * z)
            .collect(),
        sample_rate: y_n.sample_rate,
    })
}

/// An estimator of the noise component of `y_n`, conditioned on a mel
/// spectrogram and the continuous noise level `sqrt(abar)`.
pub trait NoisePredictor: Send + Sync {
    fn predict(
        &self,
        y_n: &Waveform,
        mel: &MelSpectrogram,
        noise_level: f64,
    ) -> Result<Waveform, DiffusionError>;
}

/// Predicts the exact noise from a known clean signal. A verification
/// harness: it needs the answer to produce the answer.
#[derive(Debug, Clone)]
pub struct OraclePredictor {
    clean: Waveform,
}

impl OraclePredictor {
    pub fn new(clean: Waveform) -> Self {
        Self { clean }
    }

    pub fn clean(&self) -> &Waveform {
        &self.clean
    }
}

impl NoisePredictor for OraclePredictor {
    fn predict(
        &self,
        y_n: &Waveform,
        _mel: &MelSpectrogram,
        noise_level: f64,
    ) -> Result<Waveform, DiffusionError> {
        oracle_epsilon(y_n, &self.clean, noise_level * noise_level)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPredictor;

impl NoisePredictor for ZeroPredictor {
    fn predict(
        &self,
        y_n: &Waveform,
        _mel: &MelSpectrogram,
        _noise_level: f64,
    ) -> Result<Waveform, DiffusionError> {
        Ok(Waveform::zeros(y_n.len(), y_n.sample_rate))
    }
}

/// Per-sample mean absolute error of the predictor on `forward_diffuse(y0, abar, eps)`.
pub fn wavegrad_loss(
    predictor: &dyn NoisePredictor,
    y0: &Waveform,
    mel: &MelSpectrogram,
    alpha_bar: f64,
    eps: &Waveform,
) -> Result<f64, DiffusionError> {
    if !(alpha_bar > 0.0 && alpha_bar < 1.0) {
        return Err(DiffusionError::InvalidAlphaBar(alpha_bar));
    }
    let y_n = forward_diffuse(y0, alpha_bar, eps)?;
    let pred = predictor.predict(&y_n, mel, alpha_bar.sqrt())?;
    check_len(pred.len(), eps.len())?;
    if eps.is_empty() {
        return Ok(0.0);
    }
    let l1: f64 = pred
        .samples
        .iter()
        .zip(&eps.samples)
        .map(|(p, e)| (p - e).abs())
        .sum();
    Ok(l1 / eps.len() as f64)
}

pub fn standard_normal(len: usize, sample_rate: u32, rng: &mut impl Rng) -> Waveform {
    Waveform {
        samples: (0..len).map(|_| rng.sample(StandardNormal)).collect(),
        sample_rate,
    }
}

/// Smooth per-frame envelope by cepstral liftering of `log(S + floor)`.
///
/// Quefrencies at or above `cepstral_order` are zeroed. The floor is
/// `1e-5 * max(S)`.
pub fn spectral_envelope(
    s_hat: &MagnitudeSpectrogram,
    cepstral_order: usize,
) -> Result<MagnitudeSpectrogram, DiffusionError> {
    if cepstral_order == 0 {
        return Err(DiffusionError::InvalidOrder);
    }
    let (n_frames, n_bins) = s_hat.shape();
    let peak = s_hat.0.iter().fold(0.0f64, |m, &v| m.max(v));
    let floor = if peak > 0.0 {
        ENVELOPE_FLOOR * peak
    } else {
        f64::MIN_POSITIVE
    };
    if n_bins < 2 {
        return Ok(MagnitudeSpectrogram(s_hat.0.mapv(|v| v + floor)));
    }
    let n = 2 * (n_bins - 1);
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut out = Array2::zeros((n_frames, n_bins));
    for (row, mut dst) in s_hat.0.outer_iter().zip(out.outer_iter_mut()) {
        for (k, &s) in row.iter().enumerate() {
            buf[k] = Complex64::new((s + floor).ln(), 0.0);
        }
        for k in n_bins..n {
            buf[k] = buf[n - k];
        }
        inv.process(&mut buf);
        for (q, c) in buf.iter_mut().enumerate() {
            let quefrency = q.min(n - q);
            if quefrency >= cepstral_order {
                *c = Complex64::new(0.0, 0.0);
            } else {
                *c /= n as f64;
            }
        }
        fwd.process(&mut buf);
        for (d, c) in dst.iter_mut().zip(&buf) {
            *d = c.re.exp();
        }
    }
    Ok(MagnitudeSpectrogram(out))
}

/// Time-varying filtering `T_dagger D T eps` with `D = diag(envelope)`.
pub fn specgrad_shape_noise(
    eps_white: &Waveform,
    envelope: &MagnitudeSpectrogram,
    params: &StftParams,
) -> Result<Waveform, DiffusionError> {
    for ((frame, bin), &value) in envelope.0.indexed_iter() {
        if value.is_nan() || value <= 0.0 {
            return Err(DiffusionError::NonPositiveEnvelope { frame, bin, value });
        }
    }
    let plan = StftPlan::new(params);
    let mut spec = plan.analyze(&eps_white.samples)?;
    if spec.dim() != envelope.shape() {
        return Err(DspError::ShapeMismatch {
            expected: spec.dim(),
            actual: envelope.shape(),
        }
        .into());
    }
    Zip::from(&mut spec)
        .and(&envelope.0)
        .for_each(|c, &d| *c *= d);
    Ok(Waveform {
        samples: plan.synthesize(&spec, eps_white.len())?,
        sample_rate: eps_white.sample_rate,
    })
}
