//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::audio_io::BitDepth;
use crate::diffusion::{load_schedule, DiffusionError, NoiseSchedule, SigmaConvention};
use crate::dsp::{DspError, StftParams};
use crate::melscale::{mel_filterbank, MelError, MelFilterbank};
use crate::phase::{GlaConfig, InitPhase};
use crate::sampler::{NoiseShaping, SamplerConfig};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`")]
    InvalidValue { key: String, value: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub win_length: usize,
    pub center: bool,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub schedule: String,
    pub sigma_no_sqrt: bool,
    pub correction_steps: usize,
    pub gla_iters: usize,
    pub gla_momentum: f64,
    pub noise: NoiseShaping,
    pub cepstral_order: usize,
    pub magnitude_rescale: bool,
    pub seed: u64,
    pub fgla_iters: usize,
    pub fgla_momentum: f64,
    pub lsd_floor: f64,
    pub wav_format: BitDepth,
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            sample_rate: 22050,
            n_fft: 2048,
            hop: 300,
            win_length: 1200,
            center: true,
            n_mels: 128,
            f_min: 20.0,
            f_max: 11025.0,
            schedule: "wg6".into(),
            sigma_no_sqrt: false,
            correction_steps: 3,
            gla_iters: 32,
            gla_momentum: 0.0,
            noise: NoiseShaping::White,
            cepstral_order: 24,
            magnitude_rescale: false,
            seed: 0,
            fgla_iters: 1000,
            fgla_momentum: 0.99,
            lsd_floor: 1e-5,
            wav_format: BitDepth::Float32,
            jobs: 1,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::InvalidValue {
        key: key.into(),
        value: value.into(),
    })
}

fn noise_name(n: NoiseShaping) -> &'static str {
    match n {
        NoiseShaping::White => "white",
        NoiseShaping::SpecGrad => "specgrad",
    }
}

fn format_name(b: BitDepth) -> &'static str {
    match b {
        BitDepth::Pcm16 => "pcm16",
        BitDepth::Float32 => "float32",
    }
}

impl RunConfig {
    /// Parses config text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax { line: i + 1 })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "sample_rate" => self.sample_rate = parse(key, value)?,
            "n_fft" => self.n_fft = parse(key, value)?,
            "hop" => self.hop = parse(key, value)?,
            "win_length" => self.win_length = parse(key, value)?,
            "center" => self.center = parse(key, value)?,
            "n_mels" => self.n_mels = parse(key, value)?,
            "f_min" => self.f_min = parse(key, value)?,
            "f_max" => self.f_max = parse(key, value)?,
            "schedule" => {
                if value.is_empty() {
                    return Err(ConfigError::InvalidValue {
                        key: key.into(),
                        value: value.into(),
                    });
                }
                self.schedule = value.into()
            }
            "sigma_no_sqrt" => self.sigma_no_sqrt = parse(key, value)?,
            "correction_steps" => self.correction_steps = parse(key, value)?,
            "gla_iters" => self.gla_iters = parse(key, value)?,
            "gla_momentum" => self.gla_momentum = parse(key, value)?,
            "noise" => {
                self.noise = match value {
                    "white" => NoiseShaping::White,
                    "specgrad" => NoiseShaping::SpecGrad,
                    _ => {
                        return Err(ConfigError::InvalidValue {
                            key: key.into(),
                            value: value.into(),
                        })
                    }
                }
            }
            "cepstral_order" => self.cepstral_order = parse(key, value)?,
            "magnitude_rescale" => self.magnitude_rescale = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "fgla_iters" => self.fgla_iters = parse(key, value)?,
            "fgla_momentum" => self.fgla_momentum = parse(key, value)?,
            "lsd_floor" => self.lsd_floor = parse(key, value)?,
            "wav_format" => {
                self.wav_format = match value {
                    "pcm16" => BitDepth::Pcm16,
                    "float32" => BitDepth::Float32,
                    _ => {
                        return Err(ConfigError::InvalidValue {
                            key: key.into(),
                            value: value.into(),
                        })
                    }
                }
            }
            "jobs" => {
                let jobs: usize = parse(key, value)?;
                if jobs == 0 {
                    return Err(ConfigError::InvalidValue {
                        key: key.into(),
                        value: value.into(),
                    });
                }
                self.jobs = jobs
            }
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Every key with its resolved value, one per line; parses back to `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("sample_rate", self.sample_rate.to_string());
        kv("n_fft", self.n_fft.to_string());
        kv("hop", self.hop.to_string());
        kv("win_length", self.win_length.to_string());
        kv("center", self.center.to_string());
        kv("n_mels", self.n_mels.to_string());
        kv("f_min", self.f_min.to_string());
        kv("f_max", self.f_max.to_string());
        kv("schedule", self.schedule.clone());
        kv("sigma_no_sqrt", self.sigma_no_sqrt.to_string());
        kv("correction_steps", self.correction_steps.to_string());
        kv("gla_iters", self.gla_iters.to_string());
        kv("gla_momentum", self.gla_momentum.to_string());
        kv("noise", noise_name(self.noise).into());
        kv("cepstral_order", self.cepstral_order.to_string());
        kv("magnitude_rescale", self.magnitude_rescale.to_string());
        kv("seed", self.seed.to_string());
        kv("fgla_iters", self.fgla_iters.to_string());
        kv("fgla_momentum", self.fgla_momentum.to_string());
        kv("lsd_floor", self.lsd_floor.to_string());
        kv("wav_format", format_name(self.wav_format).into());
        kv("jobs", self.jobs.to_string());
        s
    }

    pub fn stft_params(&self) -> Result<StftParams, DspError> {
        Ok(StftParams::hann(self.n_fft, self.hop, self.win_length)?.with_center(self.center))
    }

    pub fn filterbank(&self) -> Result<MelFilterbank, MelError> {
        mel_filterbank(
            self.sample_rate,
            self.n_fft,
            self.n_mels,
            self.f_min,
            self.f_max,
        )
    }

    pub fn schedule(&self) -> Result<NoiseSchedule, DiffusionError> {
        let convention = if self.sigma_no_sqrt {
            SigmaConvention::Literal
        } else {
            SigmaConvention::Sqrt
        };
        load_schedule(&self.schedule, convention)
    }

    pub fn sampler_config(&self) -> Result<SamplerConfig, DiffusionError> {
        Ok(SamplerConfig {
            schedule: self.schedule()?,
            correction_steps: self.correction_steps,
            gla_iterations: self.gla_iters,
            gla_momentum: self.gla_momentum,
            noise_shaping: self.noise,
            cepstral_order: self.cepstral_order,
            magnitude_rescale: self.magnitude_rescale,
            seed: self.seed,
            stft_params: self.stft_params()?,
        })
    }

    pub fn gla_config(&self) -> GlaConfig {
        GlaConfig {
            iterations: self.fgla_iters,
            momentum: self.fgla_momentum,
            init_phase: InitPhase::Random(self.seed),
        }
    }
}
