//! Batch frontend: `analyze`, `vocode-gla`, `vocode`, `simulate`, `evaluate`.
//!
//! Exit codes: 0 on success, 1 on usage errors (bad flags, bad config),
//! 2 on data errors (unreadable or inconsistent inputs).

mod config;

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

pub use config::{ConfigError, RunConfig};

use crate::audio_io::{read_wav, write_wav, WavSpec};
use crate::diffusion::{NoisePredictor, OraclePredictor, ZeroPredictor};
use crate::dsp::{stft, StftParams, Waveform};
use crate::melscale::{
    mel_spectrogram, pseudo_inverse_magnitude, read_mels, write_mels, MelFilterbank, MelSpectrogram,
};
use crate::metrics::{log_spectral_distance, snr, spectral_convergence, EvalReport};
use crate::phase::fgla;
use crate::sampler::{sample, working_length};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
        }
    }
}

impl Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

fn data<E: Display>(context: impl Display) -> impl FnOnce(E) -> CliError {
    move |e| CliError::Data(format!("{context}: {e}"))
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "glagrad",
    version,
    about = "Griffin-Lim corrected diffusion vocoder"
)]
struct Cli {
    /// `key = value` config file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override any config key (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker pool size for file lists.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute and store a mel spectrogram.
    Analyze {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Fast Griffin-Lim vocoding of a mel spectrogram.
    VocodeGla {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        momentum: Option<f64>,
    },
    /// Corrected diffusion sampling of a mel spectrogram.
    Vocode {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// `zero`, or `oracle:<reference.wav>` (verification harness: needs the clean signal).
        #[arg(long)]
        predictor: String,
        #[command(flatten)]
        sampler: SamplerArgs,
    },
    /// Oracle end-to-end run: analyze, vocode with the oracle predictor, evaluate.
    Simulate {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        sampler: SamplerArgs,
    },
    /// Paired metrics between same-named WAVs in two directories.
    Evaluate {
        reference: PathBuf,
        estimate: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Debug, Args)]
struct SamplerArgs {
    #[arg(long)]
    correction_steps: Option<usize>,
    #[arg(long)]
    gla_iters: Option<usize>,
    /// `wg6`, `wg50` or a file with one beta per line.
    #[arg(long)]
    schedule: Option<String>,
    /// `white` or `specgrad`.
    #[arg(long)]
    noise: Option<String>,
    #[arg(long)]
    magnitude_rescale: bool,
    #[arg(long)]
    sigma_no_sqrt: bool,
}

impl SamplerArgs {
    fn apply(&self, cfg: &mut RunConfig) -> Result<(), ConfigError> {
        set_opt(cfg, "correction_steps", &self.correction_steps)?;
        set_opt(cfg, "gla_iters", &self.gla_iters)?;
        set_opt(cfg, "schedule", &self.schedule)?;
        set_opt(cfg, "noise", &self.noise)?;
        if self.magnitude_rescale {
            cfg.magnitude_rescale = true;
        }
        if self.sigma_no_sqrt {
            cfg.sigma_no_sqrt = true;
        }
        Ok(())
    }
}

fn set_opt<T: ToString>(cfg: &mut RunConfig, key: &str, v: &Option<T>) -> Result<(), ConfigError> {
    match v {
        Some(v) => cfg.set(key, &v.to_string()),
        None => Ok(()),
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    set_opt(&mut cfg, "seed", &cli.seed)?;
    set_opt(&mut cfg, "jobs", &cli.jobs)?;
    match &cli.command {
        Command::VocodeGla {
            iters, momentum, ..
        } => {
            set_opt(&mut cfg, "fgla_iters", iters)?;
            set_opt(&mut cfg, "fgla_momentum", momentum)?;
        }
        Command::Vocode { sampler, .. } | Command::Simulate { sampler, .. } => {
            sampler.apply(&mut cfg)?
        }
        _ => {}
    }
    Ok(cfg)
}

/// Everything derived from the config that the commands share.
struct Pipeline {
    cfg: RunConfig,
    params: StftParams,
    filterbank: MelFilterbank,
}

impl Pipeline {
    fn new(cfg: RunConfig) -> Result<Self, CliError> {
        let params = cfg
            .stft_params()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        let filterbank = cfg
            .filterbank()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        // Resolve the schedule early so a bad path fails before any work.
        cfg.schedule()
            .map_err(|e| CliError::Usage(format!("schedule: {e}")))?;
        Ok(Self {
            cfg,
            params,
            filterbank,
        })
    }

    fn wav_spec(&self) -> WavSpec {
        WavSpec {
            sample_rate: self.cfg.sample_rate,
            bit_depth: self.cfg.wav_format,
        }
    }

    fn read_input(&self, path: &Path) -> Result<Waveform, CliError> {
        let (y, _) = read_wav(path).map_err(data(path.display()))?;
        if y.sample_rate != self.cfg.sample_rate {
            return Err(CliError::Data(format!(
                "{}: sample rate {} does not match configured {}",
                path.display(),
                y.sample_rate,
                self.cfg.sample_rate
            )));
        }
        if y.is_empty() {
            return Err(CliError::Data(format!("{}: empty signal", path.display())));
        }
        Ok(y)
    }

    fn read_mel(&self, path: &Path) -> Result<MelSpectrogram, CliError> {
        let mel = read_mels(path).map_err(data(path.display()))?;
        if mel.sample_rate != self.cfg.sample_rate {
            return Err(CliError::Data(format!(
                "{}: sample rate {} does not match configured {}",
                path.display(),
                mel.sample_rate,
                self.cfg.sample_rate
            )));
        }
        if mel.n_mels() != self.filterbank.n_mels() {
            return Err(CliError::Data(format!(
                "{}: {} mel bands, configured {}",
                path.display(),
                mel.n_mels(),
                self.filterbank.n_mels()
            )));
        }
        if mel.n_frames() == 0 {
            return Err(CliError::Data(format!("{}: no frames", path.display())));
        }
        Ok(mel)
    }

    fn analyze(&self, y: &Waveform) -> Result<MelSpectrogram, CliError> {
        let s = stft(y, &self.params).map_err(data("stft"))?.magnitude();
        mel_spectrogram(&s, &self.filterbank).map_err(data("mel"))
    }

    fn vocode(
        &self,
        predictor: &dyn NoisePredictor,
        mel: &MelSpectrogram,
        target_length: usize,
    ) -> Result<Waveform, CliError> {
        let sampler = self
            .cfg
            .sampler_config()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        sample(predictor, mel, &self.filterbank, &sampler, target_length).map_err(data("sampler"))
    }

    /// Oracle predictor from a reference signal, which must yield the mel's frame count.
    fn oracle(&self, reference: &Waveform, frames: usize) -> Result<OraclePredictor, CliError> {
        if self.params.n_frames(reference.len()) != frames {
            return Err(CliError::Data(format!(
                "reference of {} samples gives {} frames, mel has {frames}",
                reference.len(),
                self.params.n_frames(reference.len())
            )));
        }
        let work = working_length(frames, &self.params).map_err(data("oracle"))?;
        Ok(OraclePredictor::new(reference.clone().fit_to_length(work)))
    }

    fn simulate_one(&self, input: &Path, out_dir: &Path) -> Result<Vec<(String, f64)>, CliError> {
        let y = self.read_input(input)?;
        let mel = self.analyze(&y)?;
        let stem = stem(input)?;
        write_mels(out_dir.join(format!("{stem}.mels")), &mel).map_err(data("write mels"))?;
        let oracle = self.oracle(&y, mel.n_frames())?;
        let est = self.vocode(&oracle, &mel, y.len())?;
        write_wav(out_dir.join(format!("{stem}.wav")), &est, self.wav_spec())
            .map_err(data("write wav"))?;

        let s_hat = pseudo_inverse_magnitude(&mel, &self.filterbank).map_err(data("pinv"))?;
        let s_est = stft(&est, &self.params).map_err(data("stft"))?.magnitude();
        let mut rows = self.paired_metrics(&y, &est)?;
        rows.push((
            "lsd_shat".into(),
            log_spectral_distance(&s_hat, &s_est, self.cfg.lsd_floor).map_err(data("lsd"))?,
        ));
        Ok(rows)
    }

    /// snr, lsd and sc of `est` against `reference`, both truncated to the shorter length.
    fn paired_metrics(
        &self,
        reference: &Waveform,
        est: &Waveform,
    ) -> Result<Vec<(String, f64)>, CliError> {
        let n = reference.len().min(est.len());
        let r = reference.clone().fit_to_length(n);
        let e = est.clone().fit_to_length(n);
        let s_ref = stft(&r, &self.params).map_err(data("stft"))?.magnitude();
        let s_est = stft(&e, &self.params).map_err(data("stft"))?.magnitude();
        Ok(vec![
            ("snr".into(), snr(&r, &e).map_err(data("snr"))?),
            (
                "lsd".into(),
                log_spectral_distance(&s_ref, &s_est, self.cfg.lsd_floor).map_err(data("lsd"))?,
            ),
            (
                "sc".into(),
                spectral_convergence(&s_ref, &s_est).map_err(data("sc"))?,
            ),
        ])
    }
}

fn stem(path: &Path) -> Result<String, CliError> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_owned)
        .ok_or_else(|| CliError::Usage(format!("{}: no file name", path.display())))
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("worker pool: {e}")))
}

fn write_report(path: &Path, report: &EvalReport) -> Result<(), CliError> {
    fs::write(path, report.to_csv()).map_err(data(path.display()))
}

fn wav_names(dir: &Path) -> Result<BTreeSet<String>, CliError> {
    let entries = fs::read_dir(dir).map_err(data(dir.display()))?;
    let mut names = BTreeSet::new();
    for entry in entries {
        let entry = entry.map_err(data(dir.display()))?;
        let path = entry.path();
        if path.is_file()
            && path
                .extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
        {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                names.insert(name.to_owned());
            }
        }
    }
    Ok(names)
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve_config(&cli)?;
    eprint!("# resolved config\n{}", cfg.to_text());
    let pipe = Pipeline::new(cfg)?;

    match cli.command {
        Command::Analyze { input, output } => {
            let y = pipe.read_input(&input)?;
            let mel = pipe.analyze(&y)?;
            write_mels(&output, &mel).map_err(data(output.display()))
        }
        Command::VocodeGla { input, output, .. } => {
            let mel = pipe.read_mel(&input)?;
            let s_hat = pseudo_inverse_magnitude(&mel, &pipe.filterbank).map_err(data("pinv"))?;
            let target = mel.n_frames() * pipe.params.hop();
            let y = fgla(
                &s_hat,
                &pipe.cfg.gla_config(),
                &pipe.params,
                pipe.cfg.sample_rate,
                target,
            )
            .map_err(data("fgla"))?;
            write_wav(&output, &y, pipe.wav_spec()).map_err(data(output.display()))
        }
        Command::Vocode {
            input,
            output,
            predictor,
            ..
        } => {
            let mel = pipe.read_mel(&input)?;
            let y = if predictor == "zero" {
                pipe.vocode(&ZeroPredictor, &mel, mel.n_frames() * pipe.params.hop())?
            } else if let Some(path) = predictor.strip_prefix("oracle:") {
                let reference = pipe.read_input(Path::new(path))?;
                let oracle = pipe.oracle(&reference, mel.n_frames())?;
                pipe.vocode(&oracle, &mel, reference.len())?
            } else {
                return Err(CliError::Usage(format!(
                    "--predictor must be `zero` or `oracle:<wav>`, got `{predictor}`"
                )));
            };
            write_wav(&output, &y, pipe.wav_spec()).map_err(data(output.display()))
        }
        Command::Simulate { inputs, output, .. } => {
            let stems: Vec<String> = inputs.iter().map(|p| stem(p)).collect::<Result<_, _>>()?;
            if stems.iter().collect::<BTreeSet<_>>().len() != stems.len() {
                return Err(CliError::Usage("input file names must be distinct".into()));
            }
            fs::create_dir_all(&output).map_err(data(output.display()))?;
            let results: Vec<_> = thread_pool(pipe.cfg.jobs)?.install(|| {
                inputs
                    .par_iter()
                    .map(|p| pipe.simulate_one(p, &output))
                    .collect()
            });
            let mut report = EvalReport::new();
            for (stem, rows) in stems.iter().zip(results) {
                for (metric, v) in rows? {
                    report.insert(format!("{stem}.wav"), metric, v);
                }
            }
            write_report(&output.join("report.csv"), &report)
        }
        Command::Evaluate {
            reference,
            estimate,
            output,
        } => {
            let refs = wav_names(&reference)?;
            let ests = wav_names(&estimate)?;
            if refs != ests {
                let unpaired: Vec<_> = refs.symmetric_difference(&ests).cloned().collect();
                return Err(CliError::Data(format!(
                    "unpaired files: {}",
                    unpaired.join(", ")
                )));
            }
            if refs.is_empty() {
                return Err(CliError::Data(format!(
                    "no wav files in {}",
                    reference.display()
                )));
            }
            let names: Vec<String> = refs.into_iter().collect();
            let results: Vec<_> = thread_pool(pipe.cfg.jobs)?.install(|| {
                names
                    .par_iter()
                    .map(|name| {
                        let r = pipe.read_input(&reference.join(name))?;
                        let e = pipe.read_input(&estimate.join(name))?;
                        pipe.paired_metrics(&r, &e)
                    })
                    .collect()
            });
            let mut report = EvalReport::new();
            for (name, rows) in names.iter().zip(results) {
                for (metric, v) in rows? {
                    report.insert(name.clone(), metric, v);
                }
            }
            write_report(&output, &report)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_1() {
        assert_eq!(run(["glagrad"]), EXIT_USAGE);
        assert_eq!(run(["glagrad", "analyze", "x.wav"]), EXIT_USAGE);
        assert_eq!(run(["glagrad", "frobnicate"]), EXIT_USAGE);
        assert_eq!(
            run(["glagrad", "--set", "bogus=1", "analyze", "x.wav", "-o", "y"]),
            EXIT_USAGE
        );
        assert_eq!(run(["glagrad", "--help"]), EXIT_OK);
    }

    #[test]
    fn missing_input_is_a_data_error() {
        assert_eq!(
            run([
                "glagrad",
                "analyze",
                "/nonexistent/in.wav",
                "-o",
                "/tmp/never.mels"
            ]),
            EXIT_DATA
        );
    }

    #[test]
    fn flags_override_config_values() {
        let cli = Cli::try_parse_from([
            "glagrad",
            "--set",
            "correction_steps=1",
            "--seed",
            "9",
            "vocode",
            "in.mels",
            "-o",
            "out.wav",
            "--predictor",
            "zero",
            "--correction-steps",
            "2",
            "--noise",
            "specgrad",
            "--sigma-no-sqrt",
        ])
        .unwrap();
        let cfg = resolve_config(&cli).unwrap();
        assert_eq!(cfg.correction_steps, 2);
        assert_eq!(cfg.seed, 9);
        assert!(cfg.sigma_no_sqrt);
        assert!(!cfg.magnitude_rescale);
    }
}
