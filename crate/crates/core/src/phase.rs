//! Griffin-Lim phase retrieval: consistency and magnitude projections, plain
//! alternating projections and the momentum-accelerated variant.

use std::f64::consts::PI;

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::{
    ComplexSpectrogram, DspError, MagnitudeSpectrogram, StftParams, StftPlan, Waveform,
};

/// Iteration count of the Griffin-Lim baseline vocoder.
pub const DEFAULT_ITERATIONS: usize = 1000;
pub const DEFAULT_MOMENTUM: f64 = 0.99;

#[derive(Debug, Clone, PartialEq)]
pub enum InitPhase {
    /// Uniform phases in `[-pi, pi)` drawn from a generator seeded with the value.
    Random(u64),
    Zero,
    /// T x F phase angles in radians.
    Provided(Array2<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlaConfig {
    pub iterations: usize,
    pub momentum: f64,
    pub init_phase: InitPhase,
}

impl Default for GlaConfig {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_ITERATIONS,
            momentum: DEFAULT_MOMENTUM,
            init_phase: InitPhase::Random(0),
        }
    }
}

impl GlaConfig {
    pub fn validate(&self) -> Result<(), DspError> {
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(DspError::InvalidParams(format!(
                "momentum {} outside [0, 1)",
                self.momentum
            )));
        }
        Ok(())
    }
}

fn check_shape(expected: (usize, usize), actual: (usize, usize)) -> Result<(), DspError> {
    if expected == actual {
        Ok(())
    } else {
        Err(DspError::ShapeMismatch { expected, actual })
    }
}

/// `Ŝ * C / |C|` elementwise, with `C / |C| = 1` where `|C| = 0`.
fn magnitude_projection_into(
    out: &mut Array2<Complex64>,
    c: &Array2<Complex64>,
    s_hat: &Array2<f64>,
) {
    Zip::from(out).and(c).and(s_hat).for_each(|o, &c, &s| {
        let r = c.norm();
        *o = if r > 0.0 {
            c * (s / r)
        } else {
            Complex64::new(s, 0.0)
        };
    });
}

/// `P_C(C) = T T_dagger C`.
pub fn project_consistent(c: &ComplexSpectrogram) -> Result<ComplexSpectrogram, DspError> {
    let plan = StftPlan::new(&c.params);
    let frames = consistent_frames(&plan, &c.frames, c.origin_length)?;
    Ok(ComplexSpectrogram {
        frames,
        ..c.clone()
    })
}

fn consistent_frames(
    plan: &StftPlan,
    frames: &Array2<Complex64>,
    len: usize,
) -> Result<Array2<Complex64>, DspError> {
    let y = plan.synthesize(frames, len)?;
    let out = plan.analyze(&y)?;
    check_shape(frames.dim(), out.dim())?;
    Ok(out)
}

pub fn project_magnitude(
    c: &ComplexSpectrogram,
    s_hat: &MagnitudeSpectrogram,
) -> Result<ComplexSpectrogram, DspError> {
    check_shape(c.shape(), s_hat.shape())?;
    let mut frames = Array2::zeros(c.shape());
    magnitude_projection_into(&mut frames, &c.frames, &s_hat.0);
    Ok(ComplexSpectrogram {
        frames,
        ..c.clone()
    })
}

/// Squared Frobenius distance `||P_{|.|=Ŝ}(C) - C||^2`.
pub fn magnitude_gap(
    c: &ComplexSpectrogram,
    s_hat: &MagnitudeSpectrogram,
) -> Result<f64, DspError> {
    check_shape(c.shape(), s_hat.shape())?;
    Ok(Zip::from(&c.frames)
        .and(&s_hat.0)
        .fold(0.0, |acc, &c, &s| acc + (c.norm() - s).powi(2)))
}

/// `K` Griffin-Lim iterations `C_k = P_C(P_{|.|=Ŝ}(C_{k-1}))` starting from `c0`.
pub fn gla(
    c0: &ComplexSpectrogram,
    s_hat: &MagnitudeSpectrogram,
    iterations: usize,
) -> Result<ComplexSpectrogram, DspError> {
    accelerated_gla(c0, s_hat, iterations, 0.0)
}

/// `K` momentum-accelerated iterations starting from `c0`; returns the last iterate.
pub fn accelerated_gla(
    c0: &ComplexSpectrogram,
    s_hat: &MagnitudeSpectrogram,
    iterations: usize,
    momentum: f64,
) -> Result<ComplexSpectrogram, DspError> {
    let mut out = c0.clone();
    out.frames = run_iterations(c0, s_hat, iterations, momentum)?;
    Ok(out)
}

/// Shared iteration loop. With `momentum = 0` this is exactly plain GLA.
fn run_iterations(
    c0: &ComplexSpectrogram,
    s_hat: &MagnitudeSpectrogram,
    iterations: usize,
    momentum: f64,
) -> Result<Array2<Complex64>, DspError> {
    check_shape(c0.shape(), s_hat.shape())?;
    let plan = StftPlan::new(&c0.params);
    let mut current = c0.frames.clone();
    let mut previous = c0.frames.clone();
    let mut projected = Array2::zeros(c0.shape());
    for _ in 0..iterations {
        magnitude_projection_into(&mut projected, &current, &s_hat.0);
        let t = consistent_frames(&plan, &projected, c0.origin_length)?;
        if momentum == 0.0 {
            current = t;
        } else {
            Zip::from(&mut current)
                .and(&t)
                .and(&previous)
                .for_each(|c, &t, &p| *c = t + (t - p) * momentum);
            previous = t;
        }
    }
    Ok(current)
}

/// `Ŝ * exp(i * phi0)` for the configured initial phase.
pub fn initial_spectrogram(
    s_hat: &MagnitudeSpectrogram,
    init: &InitPhase,
    params: &StftParams,
    sample_rate: u32,
    origin_length: usize,
) -> Result<ComplexSpectrogram, DspError> {
    let (frames, bins) = s_hat.shape();
    check_shape((frames, params.n_bins()), (frames, bins))?;
    let values = match init {
        InitPhase::Zero => s_hat.0.mapv(|s| Complex64::new(s, 0.0)),
        InitPhase::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            s_hat
                .0
                .mapv(|s| Complex64::from_polar(s, rng.random_range(-PI..PI)))
        }
        InitPhase::Provided(phi) => {
            check_shape(s_hat.shape(), phi.dim())?;
            Zip::from(&s_hat.0)
                .and(phi)
                .map_collect(|&s, &p| Complex64::from_polar(s, p))
        }
    };
    Ok(ComplexSpectrogram {
        frames: values,
        params: params.clone(),
        origin_length,
        sample_rate,
    })
}

/// Fast Griffin-Lim vocoder.
///
/// Iterates `t_k = P_C(P_{|.|=Ŝ}(C_{k-1}))`, `C_k = t_k + momentum * (t_k - t_{k-1})`
/// on a signal long enough to produce exactly the frames of `s_hat`, then
/// synthesizes the magnitude-projected final iterate and fits it to
/// `target_length`.
pub fn fgla(
    s_hat: &MagnitudeSpectrogram,
    cfg: &GlaConfig,
    params: &StftParams,
    sample_rate: u32,
    target_length: usize,
) -> Result<Waveform, DspError> {
    cfg.validate()?;
    let (frames, _) = s_hat.shape();
    let work_len = params.signal_length_for_frames(frames).ok_or_else(|| {
        DspError::InvalidParams(format!("{frames} frames cannot come from any signal"))
    })?;
    let c0 = initial_spectrogram(s_hat, &cfg.init_phase, params, sample_rate, work_len)?;
    let last = run_iterations(&c0, s_hat, cfg.iterations, cfg.momentum)?;
    synthesize_with_magnitude(&last, s_hat, params, sample_rate, work_len)
        .map(|y| y.fit_to_length(target_length))
}

/// `T_dagger P_{|.|=Ŝ}(C)` on `len` samples.
pub fn synthesize_with_magnitude(
    frames: &Array2<Complex64>,
    s_hat: &MagnitudeSpectrogram,
    params: &StftParams,
    sample_rate: u32,
    len: usize,
) -> Result<Waveform, DspError> {
    check_shape(frames.dim(), s_hat.shape())?;
    let mut projected = Array2::zeros(frames.dim());
    magnitude_projection_into(&mut projected, frames, &s_hat.0);
    let samples = StftPlan::new(params).synthesize(&projected, len)?;
    Ok(Waveform {
        samples,
        sample_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{istft, stft};

    fn harmonic(len: usize, f0: f64, sr: u32) -> Waveform {
        let samples = (0..len)
            .map(|t| {
                let x = t as f64 / sr as f64;
                (1..=6)
                    .map(|h| (2.0 * PI * f0 * h as f64 * x).sin() / h as f64)
                    .sum::<f64>()
                    * 0.3
            })
            .collect();
        Waveform::new(samples, sr).unwrap()
    }

    fn random_spectrogram(params: &StftParams, len: usize, seed: u64) -> ComplexSpectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = (params.n_frames(len), params.n_bins());
        ComplexSpectrogram {
            frames: Array2::from_shape_fn(shape, |_| {
                Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            }),
            params: params.clone(),
            origin_length: len,
            sample_rate: 22050,
        }
    }

    fn max_diff(a: &Array2<Complex64>, b: &Array2<Complex64>) -> f64 {
        Zip::from(a)
            .and(b)
            .fold(0.0, |m: f64, x, y| m.max((x - y).norm()))
    }

    #[test]
    fn consistent_input_is_fixed_point() {
        let p = StftParams::default();
        let c = stft(&harmonic(5000, 220.0, 22050), &p).unwrap();
        let pc = project_consistent(&c).unwrap();
        assert!(max_diff(&c.frames, &pc.frames) < 1e-9);
    }

    #[test]
    fn consistency_projection_is_idempotent() {
        let p = StftParams::default();
        let c = random_spectrogram(&p, 4000, 1);
        let once = project_consistent(&c).unwrap();
        let twice = project_consistent(&once).unwrap();
        assert!(max_diff(&once.frames, &twice.frames) < 1e-9);
        assert!(max_diff(&c.frames, &once.frames) > 1e-3);
    }

    #[test]
    fn magnitude_projection_contract() {
        let p = StftParams::default();
        let c = random_spectrogram(&p, 3000, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = MagnitudeSpectrogram(Array2::from_shape_fn(c.shape(), |_| {
            rng.random_range(0.0..4.0)
        }));
        let out = project_magnitude(&c, &s).unwrap();
        Zip::from(&out.frames)
            .and(&s.0)
            .and(&c.frames)
            .for_each(|o, &s, c| {
                assert!((o.norm() - s).abs() < 1e-12);
                if s > 0.0 {
                    assert!((o.arg() - c.arg()).abs() < 1e-12);
                }
            });
        // |C| already equals Ŝ
        let again = project_magnitude(&out, &s).unwrap();
        assert!(max_diff(&again.frames, &out.frames) < 1e-12);
    }

    #[test]
    fn zero_entry_gets_zero_phase() {
        let p = StftParams::default();
        let mut c = random_spectrogram(&p, 3000, 4);
        c.frames[[2, 5]] = Complex64::new(0.0, 0.0);
        let mut s = MagnitudeSpectrogram(c.frames.mapv(|v| v.norm()));
        s.0[[2, 5]] = 3.0;
        let out = project_magnitude(&c, &s).unwrap();
        assert_eq!(out.frames[[2, 5]], Complex64::new(3.0, 0.0));
    }

    #[test]
    fn zero_iterations_return_input() {
        let p = StftParams::default();
        let c = random_spectrogram(&p, 3000, 5);
        let s = c.magnitude();
        assert_eq!(gla(&c, &s, 0).unwrap(), c);
    }

    #[test]
    fn true_spectrogram_is_gla_fixed_point() {
        let p = StftParams::default();
        let c = stft(&harmonic(6000, 180.0, 22050), &p).unwrap();
        let s = c.magnitude();
        for k in [1, 5, 20] {
            let out = gla(&c, &s, k).unwrap();
            assert!(max_diff(&out.frames, &c.frames) < 1e-9);
        }
    }

    #[test]
    fn more_iterations_reduce_magnitude_mismatch() {
        let p = StftParams::default();
        let y = harmonic(11025, 150.0, 22050);
        let s = stft(&y, &p).unwrap().magnitude();
        let c0 = initial_spectrogram(&s, &InitPhase::Random(11), &p, 22050, y.len()).unwrap();
        let mismatch = |k| {
            let c = gla(&c0, &s, k).unwrap();
            let resynth = stft(&istft(&c, y.len()).unwrap(), &p).unwrap().magnitude();
            (&resynth.0 - &s.0)
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
        };
        assert!(mismatch(100) < mismatch(1));
    }

    #[test]
    fn gla_gap_is_non_increasing() {
        let p = StftParams::default();
        let y = harmonic(8000, 200.0, 22050);
        let s = stft(&y, &p).unwrap().magnitude();
        for seed in 0..3 {
            let mut c = initial_spectrogram(&s, &InitPhase::Random(seed), &p, 22050, 8000).unwrap();
            let mut prev = f64::INFINITY;
            for _ in 0..100 {
                c = gla(&c, &s, 1).unwrap();
                let gap = magnitude_gap(&c, &s).unwrap();
                assert!(gap <= prev, "gap rose from {prev} to {gap}");
                prev = gap;
            }
        }
    }

    #[test]
    fn fgla_without_momentum_is_gla() {
        let p = StftParams::default();
        let y = harmonic(6000, 210.0, 22050);
        let s = stft(&y, &p).unwrap().magnitude();
        let work = p.signal_length_for_frames(s.shape().0).unwrap();
        let cfg = GlaConfig {
            iterations: 25,
            momentum: 0.0,
            init_phase: InitPhase::Random(4),
        };
        let out = fgla(&s, &cfg, &p, 22050, 6000).unwrap();
        let c0 = initial_spectrogram(&s, &cfg.init_phase, &p, 22050, work).unwrap();
        let reference = istft(
            &project_magnitude(&gla(&c0, &s, 25).unwrap(), &s).unwrap(),
            work,
        )
        .unwrap()
        .fit_to_length(6000);
        let err = out
            .samples
            .iter()
            .zip(&reference.samples)
            .fold(0.0, |m: f64, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-12, "err {err}");
        assert_eq!(out.len(), 6000);
    }

    #[test]
    fn fgla_is_deterministic_and_sized() {
        let p = StftParams::default();
        let s = stft(&harmonic(5000, 300.0, 22050), &p).unwrap().magnitude();
        let cfg = GlaConfig {
            iterations: 10,
            ..GlaConfig::default()
        };
        let a = fgla(&s, &cfg, &p, 22050, 4321).unwrap();
        let b = fgla(&s, &cfg, &p, 22050, 4321).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4321);
    }

    #[test]
    fn momentum_accelerates_convergence() {
        let p = StftParams::default();
        let y = harmonic(11025, 180.0, 22050);
        let s = stft(&y, &p).unwrap().magnitude();
        let sc = |momentum| {
            let cfg = GlaConfig {
                iterations: 100,
                momentum,
                init_phase: InitPhase::Random(4),
            };
            let out = fgla(&s, &cfg, &p, 22050, y.len()).unwrap();
            crate::metrics::spectral_convergence(&s, &stft(&out, &p).unwrap().magnitude()).unwrap()
        };
        let (fast, plain) = (sc(0.99), sc(0.0));
        assert!(fast < plain, "momentum {fast} vs plain {plain}");
    }

    #[test]
    fn invalid_configs() {
        let cfg = GlaConfig {
            momentum: 1.0,
            ..GlaConfig::default()
        };
        assert!(cfg.validate().is_err());
        let p = StftParams::default();
        let c = random_spectrogram(&p, 3000, 1);
        assert!(project_magnitude(&c, &MagnitudeSpectrogram::zeros(2, 1025)).is_err());
    }
}
