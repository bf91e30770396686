//! Objective quality measures and the CSV evaluation report.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::Zip;
use thiserror::Error;

use crate::dsp::{ComplexSpectrogram, DspError, MagnitudeSpectrogram, Waveform};
use crate::phase::project_consistent;

pub const DEFAULT_LSD_FLOOR: f64 = 1e-5;
/// Reported in place of an infinite SNR.
pub const SNR_CAP_DB: f64 = 300.0;

pub const MEAN_ROW: &str = "__mean__";
pub const STD_ROW: &str = "__std__";

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("reference is all zero")]
    ZeroReference,
    #[error("floor must be positive, got {0}")]
    InvalidFloor(f64),
    #[error(transparent)]
    Dsp(#[from] DspError),
}

fn same_shape(a: &MagnitudeSpectrogram, b: &MagnitudeSpectrogram) -> Result<(), MetricError> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(MetricError::ShapeMismatch(a.shape(), b.shape()))
    }
}

/// `||S_ref - S_est||_F / ||S_ref||_F`.
pub fn spectral_convergence(
    s_ref: &MagnitudeSpectrogram,
    s_est: &MagnitudeSpectrogram,
) -> Result<f64, MetricError> {
    same_shape(s_ref, s_est)?;
    let reference = s_ref.0.iter().map(|v| v * v).sum::<f64>();
    if reference == 0.0 {
        return Err(MetricError::ZeroReference);
    }
    let diff = Zip::from(&s_ref.0)
        .and(&s_est.0)
        .fold(0.0, |acc, a, b| acc + (a - b).powi(2));
    Ok((diff / reference).sqrt())
}

/// Root-mean-square over all bins of `20 log10((S_ref + floor) / (S_est + floor))`, in dB.
pub fn log_spectral_distance(
    s_ref: &MagnitudeSpectrogram,
    s_est: &MagnitudeSpectrogram,
    floor: f64,
) -> Result<f64, MetricError> {
    same_shape(s_ref, s_est)?;
    if floor.is_nan() || floor <= 0.0 {
        return Err(MetricError::InvalidFloor(floor));
    }
    let count = s_ref.0.len();
    if count == 0 {
        return Ok(0.0);
    }
    let sum = Zip::from(&s_ref.0).and(&s_est.0).fold(0.0, |acc, a, b| {
        acc + (20.0 * ((a + floor) / (b + floor)).log10()).powi(2)
    });
    Ok((sum / count as f64).sqrt())
}

/// `10 log10(||y_ref||^2 / ||y_ref - y_est||^2)`, capped at 300 dB.
pub fn snr(y_ref: &Waveform, y_est: &Waveform) -> Result<f64, MetricError> {
    if y_ref.len() != y_est.len() {
        return Err(MetricError::ShapeMismatch(
            (1, y_ref.len()),
            (1, y_est.len()),
        ));
    }
    let signal: f64 = y_ref.samples.iter().map(|v| v * v).sum();
    if signal == 0.0 {
        return Err(MetricError::ZeroReference);
    }
    let noise: f64 = y_ref
        .samples
        .iter()
        .zip(&y_est.samples)
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    if noise == 0.0 {
        return Ok(SNR_CAP_DB);
    }
    Ok((10.0 * (signal / noise).log10()).min(SNR_CAP_DB))
}

/// `||C - P_C(C)||_F / ||C||_F`, zero for an all-zero spectrogram.
pub fn consistency_error(c: &ComplexSpectrogram) -> Result<f64, MetricError> {
    let norm = c.frobenius_norm();
    if norm == 0.0 {
        return Ok(0.0);
    }
    let projected = project_consistent(c)?;
    let diff = Zip::from(&c.frames)
        .and(&projected.frames)
        .fold(0.0, |acc, a, b| acc + (a - b).norm_sqr());
    Ok(diff.sqrt() / norm)
}

/// Per-file metric values with mean and (population) standard deviation per metric.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    entries: BTreeMap<String, BTreeMap<String, f64>>,
}

impl EvalReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, file: impl Into<String>, metric: impl Into<String>, value: f64) {
        self.entries
            .entry(file.into())
            .or_default()
            .insert(metric.into(), value);
    }

    pub fn get(&self, file: &str, metric: &str) -> Option<f64> {
        self.entries.get(file)?.get(metric).copied()
    }

    pub fn files(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// metric -> (mean, std) over the files that report it.
    pub fn aggregates(&self) -> BTreeMap<String, (f64, f64)> {
        let mut by_metric: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for metrics in self.entries.values() {
            for (name, &v) in metrics {
                by_metric.entry(name).or_default().push(v);
            }
        }
        by_metric
            .into_iter()
            .map(|(name, values)| {
                let n = values.len() as f64;
                let mean = values.iter().sum::<f64>() / n;
                let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                (name.to_string(), (mean, var.sqrt()))
            })
            .collect()
    }

    /// `file,metric,value` rows sorted by file then metric, followed by
    /// `__mean__` and `__std__` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("file,metric,value\n");
        for (file, metrics) in &self.entries {
            for (name, v) in metrics {
                let _ = writeln!(out, "{file},{name},{}", format_g6(*v));
            }
        }
        let agg = self.aggregates();
        for (name, (mean, _)) in &agg {
            let _ = writeln!(out, "{MEAN_ROW},{name},{}", format_g6(*mean));
        }
        for (name, (_, std)) in &agg {
            let _ = writeln!(out, "{STD_ROW},{name},{}", format_g6(*std));
        }
        out
    }
}

/// Six significant digits, formatted like C's `%g`.
pub fn format_g6(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf" } else { "-inf" }.into();
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0" } else { "0" }.into();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    } else {
        trim_zeros(&format!("{v:.*}", (5 - exp) as usize)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
