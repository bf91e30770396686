mod common;

use std::fs;

use common::{glagrad, utterance, write_float_wav};
use glagrad::audio_io::read_wav;
use glagrad::melscale::read_mels;
use tempfile::tempdir;

fn s(p: &std::path::Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn analyze_default_config_gives_128_bands() {
    let dir = tempdir().unwrap();
    let wav = dir.path().join("a.wav");
    let mels = dir.path().join("a.mels");
    write_float_wav(&wav, &utterance(7000, 140.0, 1));
    let out = glagrad(&["analyze", s(&wav), "-o", s(&mels)]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let mel = read_mels(&mels).unwrap();
    assert_eq!(mel.n_mels(), 128);
    assert_eq!(mel.sample_rate, 22050);
    let echo = String::from_utf8_lossy(&out.stderr);
    assert!(echo.contains("n_mels = 128"));
}

#[test]
fn echoed_config_reproduces_the_run() {
    let dir = tempdir().unwrap();
    let wav = dir.path().join("a.wav");
    write_float_wav(&wav, &utterance(6000, 180.0, 2));
    let first = dir.path().join("first.mels");
    let out = glagrad(&["--set", "n_mels=64", "analyze", s(&wav), "-o", s(&first)]);
    assert!(out.status.success());
    let conf = dir.path().join("echo.conf");
    fs::write(&conf, &out.stderr).unwrap();
    let second = dir.path().join("second.mels");
    let out = glagrad(&["--config", s(&conf), "analyze", s(&wav), "-o", s(&second)]);
    assert!(out.status.success());
    assert_eq!(fs::read(first).unwrap(), fs::read(second).unwrap());
}

#[test]
fn vocode_is_deterministic() {
    let dir = tempdir().unwrap();
    let wav = dir.path().join("a.wav");
    let mels = dir.path().join("a.mels");
    write_float_wav(&wav, &utterance(8000, 120.0, 3));
    assert!(glagrad(&["analyze", s(&wav), "-o", s(&mels)])
        .status
        .success());
    let mut outputs = Vec::new();
    for i in 0..2 {
        let o = dir.path().join(format!("o{i}.wav"));
        let out = glagrad(&[
            "vocode",
            s(&mels),
            "-o",
            s(&o),
            "--predictor",
            "zero",
            "--correction-steps",
            "0",
            "--gla-iters",
            "0",
            "--seed",
            "4",
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        outputs.push(fs::read(o).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let (y, _) = read_wav(dir.path().join("o0.wav")).unwrap();
    assert_eq!(y.len(), read_mels(&mels).unwrap().n_frames() * 300);
}

#[test]
fn simulate_correction_does_not_worsen_lsd() {
    let dir = tempdir().unwrap();
    let wav = dir.path().join("tone.wav");
    let tone: Vec<f64> = (0..22050)
        .map(|i| 0.5 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 22050.0).sin())
        .collect();
    write_float_wav(&wav, &glagrad::Waveform::new(tone, 22050).unwrap());
    let mut lsd = Vec::new();
    for steps in ["3", "0"] {
        let out_dir = dir.path().join(format!("sim{steps}"));
        let out = glagrad(&[
            "simulate",
            s(&wav),
            "-o",
            s(&out_dir),
            "--correction-steps",
            steps,
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        let csv = fs::read_to_string(out_dir.join("report.csv")).unwrap();
        assert!(csv.starts_with("file,metric,value\n"));
        let get = |metric: &str| -> f64 {
            csv.lines()
                .find(|l| l.starts_with(&format!("tone.wav,{metric},")))
                .and_then(|l| l.rsplit(',').next())
                .unwrap()
                .parse()
                .unwrap()
        };
        assert!(get("snr").is_finite());
        lsd.push(get("lsd_shat"));
        assert!(out_dir.join("tone.mels").exists());
        assert_eq!(read_wav(out_dir.join("tone.wav")).unwrap().0.len(), 22050);
    }
    assert!(lsd[0] <= lsd[1], "{lsd:?}");
}

#[test]
fn evaluate_pairs_files_and_reports_aggregates() {
    let dir = tempdir().unwrap();
    let (r, e) = (dir.path().join("ref"), dir.path().join("est"));
    fs::create_dir_all(&r).unwrap();
    fs::create_dir_all(&e).unwrap();
    for (i, name) in ["x.wav", "y.wav"].iter().enumerate() {
        let y = utterance(5000, 150.0 + 30.0 * i as f64, 10 + i as u64);
        write_float_wav(&r.join(name), &y);
        let noisy =
            glagrad::Waveform::new(y.samples.iter().map(|v| v * 0.9).collect(), 22050).unwrap();
        write_float_wav(&e.join(name), &noisy);
    }
    let report = dir.path().join("report.csv");
    let out = glagrad(&["--jobs", "2", "evaluate", s(&r), s(&e), "-o", s(&report)]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = fs::read_to_string(&report).unwrap();
    assert!(csv.contains("x.wav,snr,20\n"), "{csv}");
    assert!(csv.contains("__mean__,sc,0.1\n"), "{csv}");
    assert!(csv.contains("__std__,snr,"));

    fs::remove_file(e.join("y.wav")).unwrap();
    let out = glagrad(&["evaluate", s(&r), s(&e), "-o", s(&report)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exit_codes() {
    let dir = tempdir().unwrap();
    assert_eq!(glagrad(&["analyze"]).status.code(), Some(1));
    assert_eq!(
        glagrad(&["analyze", "a.wav", "-o", "b", "--bogus"])
            .status
            .code(),
        Some(1)
    );

    let garbage = dir.path().join("g.wav");
    fs::write(&garbage, b"not a wav").unwrap();
    let out = glagrad(&["analyze", s(&garbage), "-o", s(&dir.path().join("g.mels"))]);
    assert_eq!(out.status.code(), Some(2));

    let wav = dir.path().join("r.wav");
    write_float_wav(
        &wav,
        &glagrad::Waveform::new(vec![0.1; 4000], 16000).unwrap(),
    );
    let out = glagrad(&["analyze", s(&wav), "-o", s(&dir.path().join("r.mels"))]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "sample rate mismatch is a data error"
    );

    let mels = dir.path().join("bad.mels");
    fs::write(&mels, b"MELS\x02\0\0\0").unwrap();
    let out = glagrad(&["vocode-gla", s(&mels), "-o", s(&dir.path().join("o.wav"))]);
    assert_eq!(out.status.code(), Some(2));
}
