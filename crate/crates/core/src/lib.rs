//! Griffin-Lim corrected diffusion vocoding.
//!
//! The crate provides STFT analysis/synthesis ([`dsp`]), mel filterbanks and
//! their pseudo-inverse ([`melscale`]), Griffin-Lim phase retrieval
//! ([`phase`]), WaveGrad-style diffusion primitives ([`diffusion`]), the
//! corrected sampler ([`sampler`]), objective metrics ([`metrics`]), WAV I/O
//! ([`audio_io`]) and the batch command line frontend ([`cli`]).

pub mod audio_io;
pub mod cli;
pub mod diffusion;
pub mod dsp;
pub mod melscale;
pub mod metrics;
pub mod phase;
pub mod sampler;

pub use dsp::{
    hann_window, istft, stft, ComplexSpectrogram, DspError, MagnitudeSpectrogram, StftParams,
    StftPlan, Waveform,
};
