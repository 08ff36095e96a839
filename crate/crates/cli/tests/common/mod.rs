#![allow(dead_code)]

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use acvae_core::data::{write_wav, WavEncoding};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SR: u32 = 22050;

pub fn acvae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_acvae"))
        .args(args)
        .env_remove("ACVAE_CONFIG")
        .output()
        .expect("run acvae")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn assert_ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        o.status.code(),
        stdout(o),
        String::from_utf8_lossy(&o.stderr)
    );
}

/// Harmonic tone with slowly varying pitch and a speaker-specific spectral slope.
pub fn voice(f0: f64, tilt: f64, seconds: f64, seed: u64) -> Vec<f64> {
    let sr = SR as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phases: Vec<f64> = (0..40).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    let vib = rng.gen_range(3.0..6.0);
    let mut phase = 0.0;
    (0..(seconds * sr) as usize)
        .map(|i| {
            let t = i as f64 / sr;
            let f = f0 * (1.0 + 0.03 * (2.0 * PI * vib * t).sin());
            phase += 2.0 * PI * f / sr;
            let mut s = 0.0;
            for (h, ph) in phases.iter().enumerate() {
                let k = (h + 1) as f64;
                if k * f < 0.45 * sr {
                    s += (-(tilt * (k - 1.0))).exp() * (k * phase + ph).sin();
                }
            }
            0.15 * s + 0.002 * rng.gen_range(-1.0..1.0)
        })
        .collect()
}

/// `root/<speaker>/uttNN.wav` for each `(speaker, pitch, tilt)`.
pub fn make_corpus(root: &Path, speakers: &[(&str, f64, f64)], files: usize, seconds: f64) {
    for (k, (name, f0, tilt)) in speakers.iter().enumerate() {
        let dir = root.join(name);
        fs::create_dir_all(&dir).unwrap();
        for i in 0..files {
            let sig = voice(
                f0 * (1.0 + 0.02 * i as f64),
                *tilt,
                seconds,
                (100 * k + i) as u64,
            );
            write_wav(
                &dir.join(format!("utt{i:02}.wav")),
                &sig,
                SR,
                WavEncoding::Pcm16,
            )
            .unwrap();
        }
    }
}

/// All file paths below `root`.
pub fn tree(root: &Path) -> BTreeSet<PathBuf> {
    let mut out = BTreeSet::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p);
            }
        }
    }
    out
}

/// Asserts every file created since `before` lies under `allowed`.
pub fn assert_writes_within(root: &Path, before: &BTreeSet<PathBuf>, allowed: &Path) {
    for p in tree(root).difference(before) {
        assert!(
            p.starts_with(allowed),
            "{} written outside {}",
            p.display(),
            allowed.display()
        );
    }
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small network widths so tests train quickly.
pub const SMALL_MODEL: [&str; 6] = [
    "--set",
    "model.encoder_channels=[4, 8, 8]",
    "--set",
    "model.latent_channels=4",
    "--set",
    "model.classifier_channels=[4, 4]",
];
