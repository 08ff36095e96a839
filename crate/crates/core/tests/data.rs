use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use acvae_core::data::{
    build_manifest, cache_path, feature_cache, load_training_set, load_wav, normalized_sequence,
    write_wav, CorpusManifest, NormStats, WavEncoding,
};
use acvae_core::dsp::{analyze, mcc_from_envelope, AnalysisConfig, FeatureFile};
use acvae_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

/// A short harmonic tone with a speaker-specific pitch and brightness.
fn voiced(f0: f64, tilt: f64, seconds: f64, seed: u64) -> Vec<f64> {
    let sr = 22050.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phases: Vec<f64> = (0..20).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    (0..(seconds * sr) as usize)
        .map(|i| {
            let t = i as f64 / sr;
            let mut s = 0.0;
            for (h, ph) in phases.iter().enumerate() {
                let k = (h + 1) as f64;
                if k * f0 < 0.45 * sr {
                    s += (-(tilt * (k - 1.0))).exp() * (2.0 * PI * k * f0 * t + ph).sin();
                }
            }
            0.2 * s + 0.001 * rng.gen_range(-1.0..1.0)
        })
        .collect()
}

fn make_corpus(root: &Path, speakers: &[(&str, usize)]) {
    for (k, (name, n)) in speakers.iter().enumerate() {
        let dir = root.join(name);
        fs::create_dir_all(&dir).unwrap();
        for i in 0..*n {
            let f0 = 110.0 + 40.0 * k as f64 + 3.0 * (i % 5) as f64;
            let sig = voiced(f0, 0.2 + 0.15 * k as f64, 0.12, (k * 1000 + i) as u64);
            write_wav(
                &dir.join(format!("utt{i:03}.wav")),
                &sig,
                22050,
                WavEncoding::Pcm16,
            )
            .unwrap();
        }
    }
}

fn four_speakers() -> (TempDir, CorpusManifest) {
    let dir = TempDir::new().unwrap();
    let root = dir.path().join("corpus");
    make_corpus(&root, &[("sf1", 5), ("sm1", 4), ("tf1", 6), ("tm1", 3)]);
    let m = build_manifest(&root, 0.7, 7, &AnalysisConfig::default()).unwrap();
    (dir, m)
}

#[test]
fn one_second_file_has_exact_length() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("a.wav");
    write_wav(&p, &vec![0.25; 22050], 22050, WavEncoding::Pcm16).unwrap();
    let (s, sr) = load_wav(&p).unwrap();
    assert_eq!((s.len(), sr), (22050, 22050));
}

#[test]
fn full_scale_square_wave() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("sq.wav");
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: 16000,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(&p, spec).unwrap();
    for i in 0..400 {
        w.write_sample(if (i / 20) % 2 == 0 { 32767i16 } else { -32767 })
            .unwrap();
    }
    w.finalize().unwrap();
    let (s, _) = load_wav(&p).unwrap();
    assert!(s.iter().all(|&v| v.abs() == 32767.0 / 32768.0));
}

#[test]
fn pcm_roundtrip_within_quantization() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("n.wav");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<f64> = (0..5000).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    write_wav(&p, &x, 22050, WavEncoding::Pcm16).unwrap();
    let (y, _) = load_wav(&p).unwrap();
    assert_eq!(x.len(), y.len());
    let max = x
        .iter()
        .zip(&y)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(max <= 1.0 / 32768.0, "{max}");

    write_wav(&p, &x, 22050, WavEncoding::Float32).unwrap();
    let (y, _) = load_wav(&p).unwrap();
    assert!(x.iter().zip(&y).all(|(a, b)| (a - b).abs() <= 1e-7));
}

#[test]
fn stereo_is_averaged() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("st.wav");
    let spec = hound::WavSpec {
        channels: 2,
        sample_rate: 22050,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(&p, spec).unwrap();
    for (l, r) in [(0.5f32, -0.25f32), (1.0, 0.0), (-0.5, -0.5)] {
        w.write_sample(l).unwrap();
        w.write_sample(r).unwrap();
    }
    w.finalize().unwrap();
    assert_eq!(load_wav(&p).unwrap().0, vec![0.125, 0.5, -0.5]);
}

#[test]
fn unsupported_and_truncated_files() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("24.wav");
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: 22050,
        bits_per_sample: 24,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(&p, spec).unwrap();
    w.write_sample(1000i32).unwrap();
    w.finalize().unwrap();
    match load_wav(&p) {
        Err(Error::Format(msg)) => assert!(msg.contains("fmt"), "{msg}"),
        other => panic!("expected a format error, got {other:?}"),
    }

    let p = dir.path().join("cut.wav");
    write_wav(&p, &vec![0.1; 1000], 22050, WavEncoding::Pcm16).unwrap();
    let bytes = fs::read(&p).unwrap();
    fs::write(&p, &bytes[..bytes.len() - 301]).unwrap();
    assert!(matches!(load_wav(&p), Err(Error::Corrupt(_))));
    fs::write(&p, &bytes[..30]).unwrap();
    assert!(matches!(load_wav(&p), Err(Error::Corrupt(_))));
}

#[test]
fn manifest_layout_and_labels() {
    let (_dir, m) = four_speakers();
    assert_eq!(m.speaker_ids(), ["sf1", "sm1", "tf1", "tm1"]);
    assert_eq!(m.categories()[0].classes, 4);
    assert_eq!(m.label("tf1").unwrap().value(), &[0.0, 0.0, 1.0, 0.0]);
    assert!(matches!(m.label("xx"), Err(Error::Config(_))));
    for (s, n) in m.speakers.iter().zip([5usize, 4, 6, 3]) {
        let mut all: Vec<_> = s
            .train
            .iter()
            .chain(&s.eval)
            .map(|f| f.path.clone())
            .collect();
        assert_eq!(s.train.len(), (0.7 * n as f64).round() as usize);
        all.sort();
        all.dedup();
        assert_eq!(
            all.len(),
            n,
            "train and eval must be disjoint and cover the files"
        );
        let expected: Vec<_> = (0..n)
            .map(|i| Path::new(&s.id).join(format!("utt{i:03}.wav")))
            .collect();
        assert_eq!(all, expected);
        assert!(s.f0.mean.exp() > 100.0 && s.f0.mean.exp() < 260.0);
    }
    assert!(m.norm.std.iter().all(|&s| s > 0.0));

    let back = CorpusManifest::from_json(&m.to_json().unwrap()).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.label("sm1").unwrap(), m.label("sm1").unwrap());

    let again = build_manifest(&m.root, 0.7, 7, &AnalysisConfig::default()).unwrap();
    assert_eq!(again, m);
}

#[test]
fn paper_sized_split() {
    let dir = TempDir::new().unwrap();
    let root = dir.path().join("corpus");
    make_corpus(&root, &[("a", 116), ("b", 2)]);
    let m = build_manifest(&root, 81.0 / 116.0, 1, &AnalysisConfig::default()).unwrap();
    assert_eq!(
        (m.speakers[0].train.len(), m.speakers[0].eval.len()),
        (81, 35)
    );
    assert_eq!(
        (m.speakers[1].train.len(), m.speakers[1].eval.len()),
        (1, 1)
    );
}

#[test]
fn manifest_errors() {
    let dir = TempDir::new().unwrap();
    let root = dir.path().join("corpus");
    make_corpus(&root, &[("a", 3), ("b", 1)]);
    match build_manifest(&root, 0.5, 0, &AnalysisConfig::default()) {
        Err(Error::Config(msg)) => assert!(msg.contains("'b'"), "{msg}"),
        other => panic!("{other:?}"),
    }
    assert!(matches!(
        build_manifest(&root, 1.5, 0, &AnalysisConfig::default()),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        CorpusManifest::from_json("{\"version\": 1}"),
        Err(Error::Format(_))
    ));
}

#[test]
fn normalized_training_features_are_standardized() {
    let (dir, m) = four_speakers();
    let cache = dir.path().join("cache");
    feature_cache(&m, &m.analysis, &cache).unwrap();
    let set = load_training_set(&m, &cache).unwrap();
    let train_files: usize = m.speakers.iter().map(|s| s.train.len()).sum();
    assert_eq!(set.items.len(), train_files);
    let q = m.analysis.order;
    let mut sum = vec![0.0; q];
    let mut sq = vec![0.0; q];
    let mut count = 0.0;
    for (x, _) in &set.items {
        for d in 0..q {
            for t in 0..x.n_frames() {
                sum[d] += x.get(d, t);
                sq[d] += x.get(d, t).powi(2);
            }
        }
        count += x.n_frames() as f64;
    }
    for d in 0..q {
        let mean = sum[d] / count;
        let std = (sq[d] / count - mean * mean).sqrt();
        assert!(mean.abs() < 1e-10, "dim {d} mean {mean}");
        assert!((std - 1.0).abs() < 1e-6, "dim {d} std {std}");
    }
}

#[test]
fn cache_is_idempotent_and_hash_bound() {
    let (dir, m) = four_speakers();
    let cache = dir.path().join("cache");
    let total = m.files().count();
    let first = feature_cache(&m, &m.analysis, &cache).unwrap();
    assert_eq!((first.written.len(), first.errors.len()), (total, 0));
    let second = feature_cache(&m, &m.analysis, &cache).unwrap();
    assert_eq!((second.written.len(), second.skipped.len()), (0, total));

    // Cached coefficients match a fresh extraction bit for bit.
    let (_, entry) = m.files().next().unwrap();
    let stored = FeatureFile::load(&cache_path(&cache, entry)).unwrap();
    let (sig, sr) = load_wav(&m.root.join(&entry.path)).unwrap();
    let fresh = mcc_from_envelope(
        &analyze(&sig, sr, &m.analysis).unwrap(),
        36,
        m.analysis.alpha,
    )
    .unwrap();
    assert_eq!(stored.mcc, fresh);

    let shifted = AnalysisConfig {
        frame_shift: 0.004,
        ..m.analysis.clone()
    };
    let third = feature_cache(&m, &shifted, &cache).unwrap();
    assert_eq!(third.written.len(), total);
}

#[test]
fn cache_records_failures_and_continues() {
    let (dir, m) = four_speakers();
    let cache = dir.path().join("cache");
    let bad = m.root.join(&m.speakers[1].eval[0].path);
    fs::write(&bad, b"RIFF....not audio").unwrap();
    let report = feature_cache(&m, &m.analysis, &cache).unwrap();
    assert_eq!(report.errors.len(), 1);
    assert_eq!(report.errors[0].0, bad);
    assert_eq!(report.written.len(), m.files().count() - 1);

    for (_, f) in m.files() {
        fs::write(m.root.join(&f.path), b"junk").unwrap();
    }
    let empty = dir.path().join("empty");
    assert!(matches!(
        feature_cache(&m, &m.analysis, &empty),
        Err(Error::Config(_))
    ));
}

proptest! {
    #[test]
    fn normalization_inverts(rows in proptest::collection::vec(proptest::collection::vec(-50.0f64..50.0, 3), 2..20)) {
        let stats = NormStats::fit(3, rows.iter().map(Vec::as_slice)).unwrap();
        for r in &rows {
            let mut v = r.clone();
            stats.normalize(&mut v);
            stats.denormalize(&mut v);
            for (a, b) in v.iter().zip(r) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn normalized_sequence_layout(frames in 1usize..12, seed in 0u64..100) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mcc = acvae_core::dsp::MccSequence {
            order: 4,
            alpha: 0.42,
            c0: vec![0.0; frames],
            frames: (0..frames).map(|_| (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect(),
        };
        let norm = NormStats { mean: vec![0.5, -1.0, 0.0, 2.0], std: vec![1.0, 2.0, 0.5, 4.0] };
        let x = normalized_sequence(&mcc, &norm).unwrap();
        for t in 0..frames {
            for d in 0..4 {
                prop_assert!((x.get(d, t) - (mcc.frames[t][d] - norm.mean[d]) / norm.std[d]).abs() < 1e-12);
            }
        }
    }
}
