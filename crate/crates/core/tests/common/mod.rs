#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::Path;
use std::process::{Command, Output};

use glagrad::audio_io::{write_wav, BitDepth, WavSpec};
use glagrad::Waveform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const SR: u32 = 22050;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_noise(len: usize, rng: &mut impl Rng) -> Waveform {
    Waveform::new((0..len).map(|_| rng.random_range(-1.0..1.0)).collect(), SR).unwrap()
}

/// Voiced-speech stand-in: a harmonic series on a gliding f0 with vibrato,
/// a formant-ish spectral tilt and a syllabic amplitude envelope.
pub fn utterance(len: usize, f0: f64, seed: u64) -> Waveform {
    let mut r = rng(seed);
    let glide: f64 = r.random_range(-0.2..0.2);
    let vib_rate: f64 = r.random_range(4.0..7.0);
    let syllables: f64 = r.random_range(2.0..5.0);
    let n_harm = ((4000.0 / f0) as usize).max(1);
    let amps: Vec<f64> = (1..=n_harm)
        .map(|h| {
            let f = h as f64 * f0;
            let formants = (-((f - 700.0) / 300.0).powi(2)).exp()
                + 0.6 * (-((f - 1800.0) / 400.0).powi(2)).exp();
            (0.2 + formants) / h as f64
        })
        .collect();
    let mut phase = 0.0;
    let samples = (0..len)
        .map(|i| {
            let t = i as f64 / SR as f64;
            let f = f0 * (1.0 + glide * t) * (1.0 + 0.01 * (2.0 * PI * vib_rate * t).sin());
            phase += 2.0 * PI * f / SR as f64;
            let env = 0.5 - 0.5 * (2.0 * PI * syllables * t).cos();
            let v: f64 = amps
                .iter()
                .enumerate()
                .map(|(h, a)| a * ((h + 1) as f64 * phase).sin())
                .sum();
            0.25 * env * v
        })
        .collect();
    Waveform::new(samples, SR).unwrap()
}

/// `utterance` plus white aspiration noise at a 20 dB harmonics-to-noise ratio,
/// typical of modal voicing.
pub fn speech_like(len: usize, f0: f64, seed: u64) -> Waveform {
    let voiced = utterance(len, f0, seed);
    let rms = (voiced.samples.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
    let level = rms * 10f64.powf(-20.0 / 20.0);
    let mut r = rng(seed ^ 0x5eed);
    let samples = voiced
        .samples
        .iter()
        .map(|v| v + level * r.sample::<f64, _>(StandardNormal))
        .collect();
    Waveform::new(samples, SR).unwrap()
}

pub fn write_float_wav(path: &Path, y: &Waveform) {
    write_wav(
        path,
        y,
        WavSpec {
            sample_rate: y.sample_rate,
            bit_depth: BitDepth::Float32,
        },
    )
    .unwrap();
}

pub fn glagrad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_glagrad"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
