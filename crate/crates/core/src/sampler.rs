//! Griffin-Lim corrected diffusion sampling.
//!
//! The first `correction_steps` reverse steps (`n = N, N-1, ...`) are each
//! followed by `K` Griffin-Lim iterations against `Ŝ = M^+ X`, starting
//! from the STFT of the freshly updated sample. The remaining steps are the
//! unmodified WaveGrad update.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::diffusion::{
    reverse_step, specgrad_shape_noise, spectral_envelope, standard_normal, DiffusionError,
    NoisePredictor, NoiseSchedule, DEFAULT_CEPSTRAL_ORDER,
};
use crate::dsp::ComplexSpectrogram;
use crate::dsp::{DspError, MagnitudeSpectrogram, StftParams, StftPlan, Waveform};
use crate::melscale::{pseudo_inverse_magnitude, MelError, MelFilterbank, MelSpectrogram};
use crate::phase::accelerated_gla;

pub const DEFAULT_CORRECTION_STEPS: usize = 3;
pub const DEFAULT_GLA_ITERATIONS: usize = 32;

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("{0} corrected steps requested but the schedule has {1}")]
    TooManyCorrections(usize, usize),
    #[error("mel spectrogram with {frames} frames does not fit a {target}-sample output")]
    FrameMismatch { frames: usize, target: usize },
    #[error("predictor returned {actual} samples for a {expected}-sample input")]
    PredictorLength { expected: usize, actual: usize },
    #[error("predictor returned a non-finite value")]
    PredictorNonFinite,
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Mel(#[from] MelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseShaping {
    #[default]
    White,
    /// Prior and per-step noise filtered by the spectral envelope of `Ŝ`.
    SpecGrad,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub schedule: NoiseSchedule,
    pub correction_steps: usize,
    pub gla_iterations: usize,
    /// Momentum inside the correction; zero is plain GLA.
    pub gla_momentum: f64,
    pub noise_shaping: NoiseShaping,
    pub cepstral_order: usize,
    /// Project onto `sqrt(abar_{n-1}) * Ŝ` instead of `Ŝ`.
    pub magnitude_rescale: bool,
    pub seed: u64,
    pub stft_params: StftParams,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            schedule: NoiseSchedule::wg6(),
            correction_steps: DEFAULT_CORRECTION_STEPS,
            gla_iterations: DEFAULT_GLA_ITERATIONS,
            gla_momentum: 0.0,
            noise_shaping: NoiseShaping::White,
            cepstral_order: DEFAULT_CEPSTRAL_ORDER,
            magnitude_rescale: false,
            seed: 0,
            stft_params: StftParams::default(),
        }
    }
}

/// Length of the internal signal whose STFT has exactly `frames` frames.
pub fn working_length(frames: usize, params: &StftParams) -> Result<usize, SampleError> {
    params
        .signal_length_for_frames(frames)
        .ok_or(SampleError::FrameMismatch { frames, target: 0 })
}

/// `T_dagger (P_C o P_{|.|=Ŝ})^K (T y)`.
pub fn gla_correct(
    y: &Waveform,
    s_hat: &MagnitudeSpectrogram,
    iterations: usize,
    params: &StftParams,
) -> Result<Waveform, DspError> {
    gla_correct_with_momentum(y, s_hat, iterations, 0.0, params)
}

pub fn gla_correct_with_momentum(
    y: &Waveform,
    s_hat: &MagnitudeSpectrogram,
    iterations: usize,
    momentum: f64,
    params: &StftParams,
) -> Result<Waveform, DspError> {
    let plan = StftPlan::new(params);
    let c0 = ComplexSpectrogram {
        frames: plan.analyze(&y.samples)?,
        params: params.clone(),
        origin_length: y.len(),
        sample_rate: y.sample_rate,
    };
    if c0.shape() != s_hat.shape() {
        return Err(DspError::ShapeMismatch {
            expected: s_hat.shape(),
            actual: c0.shape(),
        });
    }
    let c = accelerated_gla(&c0, s_hat, iterations, momentum)?;
    Ok(Waveform {
        samples: plan.synthesize(&c.frames, y.len())?,
        sample_rate: y.sample_rate,
    })
}

fn draw_noise(
    len: usize,
    sample_rate: u32,
    rng: &mut ChaCha8Rng,
    envelope: Option<&MagnitudeSpectrogram>,
    params: &StftParams,
) -> Result<Waveform, SampleError> {
    let white = standard_normal(len, sample_rate, rng);
    match envelope {
        None => Ok(white),
        Some(env) => Ok(specgrad_shape_noise(&white, env, params)?),
    }
}

/// Runs the two-phase sampler and returns exactly `target_length` samples.
pub fn sample(
    predictor: &dyn NoisePredictor,
    mel: &MelSpectrogram,
    filterbank: &MelFilterbank,
    cfg: &SamplerConfig,
    target_length: usize,
) -> Result<Waveform, SampleError> {
    let schedule = &cfg.schedule;
    let steps = schedule.len();
    if cfg.correction_steps > steps {
        return Err(SampleError::TooManyCorrections(cfg.correction_steps, steps));
    }
    let params = &cfg.stft_params;
    let frames = mel.n_frames();
    let mismatch = SampleError::FrameMismatch {
        frames,
        target: target_length,
    };
    let work_len = params.signal_length_for_frames(frames).ok_or(mismatch)?;
    if target_length == 0 || target_length > frames * params.hop() + params.win_length() {
        return Err(SampleError::FrameMismatch {
            frames,
            target: target_length,
        });
    }

    let s_hat = pseudo_inverse_magnitude(mel, filterbank)?;
    if s_hat.shape().1 != params.n_bins() {
        return Err(DspError::ShapeMismatch {
            expected: (frames, params.n_bins()),
            actual: s_hat.shape(),
        }
        .into());
    }
    let envelope = match cfg.noise_shaping {
        NoiseShaping::White => None,
        NoiseShaping::SpecGrad => Some(spectral_envelope(&s_hat, cfg.cepstral_order)?),
    };

    let sample_rate = mel.sample_rate;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut y = draw_noise(work_len, sample_rate, &mut rng, envelope.as_ref(), params)?;
    let silent = Waveform::zeros(work_len, sample_rate);

    for n in (1..=steps).rev() {
        let eps_hat = predictor.predict(&y, mel, schedule.alpha_bar(n).sqrt())?;
        if eps_hat.len() != y.len() {
            return Err(SampleError::PredictorLength {
                expected: y.len(),
                actual: eps_hat.len(),
            });
        }
        if eps_hat.samples.iter().any(|v| !v.is_finite()) {
            return Err(SampleError::PredictorNonFinite);
        }
        y = if n > 1 {
            let z = draw_noise(work_len, sample_rate, &mut rng, envelope.as_ref(), params)?;
            reverse_step(&y, &eps_hat, n, schedule, &z)?
        } else {
            reverse_step(&y, &eps_hat, n, schedule, &silent)?
        };
        let corrected = steps - n < cfg.correction_steps;
        if corrected && cfg.gla_iterations > 0 {
            let target = if cfg.magnitude_rescale {
                let scale = schedule.alpha_bar(n - 1).sqrt();
                MagnitudeSpectrogram(s_hat.0.mapv(|v| v * scale))
            } else {
                s_hat.clone()
            };
            y = gla_correct_with_momentum(
                &y,
                &target,
                cfg.gla_iterations,
                cfg.gla_momentum,
                params,
            )?;
        }
    }
    Ok(y.fit_to_length(target_length))
}
