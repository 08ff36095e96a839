//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails.

mod common;

use std::f64::consts::PI;
use std::fs;
use std::time::Instant;

use acvae_core::data::load_wav;
use acvae_core::data::synthetic::SyntheticSpec;
use acvae_core::dsp::{analyze, logf0_transform, F0Stats, MelCepstrum};
use acvae_core::model::{AcousticFeatureSequence, ArchConfig, AttributeLabel, Model};
use acvae_core::tensor::GradCheckOptions;
use acvae_core::tensor::Tensor;
use acvae_core::training::discrete::{bayes_posterior, expected_log_posterior};
use acvae_core::training::probe::LinearProbe;
use acvae_core::training::{
    kl_gaussian_std, reconstruction_error, toy_grad_check, train_loop, Batch, LossBreakdown,
    TrainConfig,
};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn gradient_correctness() -> Outcome {
    let t = Instant::now();
    let opts = GradCheckOptions {
        coords_per_param: Some(8),
        ..GradCheckOptions::default()
    };
    let err = toy_grad_check(0, &opts).unwrap();
    let secs = t.elapsed().as_secs_f64();
    outcome(
        err < 1e-4 && secs < 60.0,
        format!("max relative error {err:.2e} in {secs:.1} s"),
    )
}

/// `∫ q log(q/p)` for `q = N(μ, σ²)`, `p = N(0, 1)` by composite Simpson.
fn kl_quadrature(mu: f64, sigma: f64) -> f64 {
    let (a, b) = (mu - 14.0 * sigma, mu + 14.0 * sigma);
    let n = 40_000;
    let h = (b - a) / n as f64;
    let log_norm = 0.5 * (2.0 * PI).ln();
    let f = |x: f64| {
        let lq = -0.5 * ((x - mu) / sigma).powi(2) - sigma.ln() - log_norm;
        let lp = -0.5 * x * x - log_norm;
        lq.exp() * (lq - lp)
    };
    let inner: f64 = (1..n)
        .map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 })
        .sum();
    (f(a) + f(b) + inner) * h / 3.0
}

fn closed_form_kl() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let mu = rng.gen_range(-2.0..2.0);
        let sigma: f64 = rng.gen_range(0.3..2.5);
        let kl = kl_gaussian_std(
            &Tensor::new(&[1], vec![mu]).unwrap(),
            &Tensor::new(&[1], vec![2.0 * sigma.ln()]).unwrap(),
        )
        .unwrap();
        worst = worst.max((kl - kl_quadrature(mu, sigma)).abs());
    }
    let unit = kl_gaussian_std(
        &Tensor::new(&[1], vec![1.0]).unwrap(),
        &Tensor::new(&[1], vec![0.0]).unwrap(),
    )
    .unwrap();
    outcome(
        worst < 1e-6 && unit == 0.5,
        format!("max |closed - quadrature| {worst:.2e}; KL(mu=1, sigma=1) = {unit}"),
    )
}

fn variational_bound() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (classes, obs) = (4, 6);
    let dist = |n: usize, rng: &mut ChaCha8Rng| {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect::<Vec<_>>()
    };
    let prior = vec![1.0 / classes as f64; classes];
    let lik: Vec<Vec<f64>> = (0..classes).map(|_| dist(obs, &mut rng)).collect();
    let bayes = bayes_posterior(&prior, &lik).unwrap();
    let best = expected_log_posterior(&prior, &lik, &bayes).unwrap();
    let mut direct = 0.0;
    for x in 0..obs {
        let px: f64 = (0..classes).map(|c| prior[c] * lik[c][x]).sum();
        for c in 0..classes {
            let post = prior[c] * lik[c][x] / px;
            direct += px * post * post.ln();
        }
    }
    let violations = (0..100)
        .filter(|_| {
            let r: Vec<Vec<f64>> = (0..obs).map(|_| dist(classes, &mut rng)).collect();
            expected_log_posterior(&prior, &lik, &r).unwrap() > best
        })
        .count();
    let gap = (best - direct).abs();
    outcome(
        violations == 0 && gap < 1e-9,
        format!("{violations}/100 random classifiers exceed the bound; Bayes gap {gap:.1e}"),
    )
}

fn conversion_identity() -> Outcome {
    let dir = TempDir::new().unwrap();
    let root = dir.path();
    let corpus = root.join("corpus");
    make_corpus(&corpus, &[("a", 200.0, 0.3), ("b", 120.0, 0.6)], 2, 1.0);
    let manifest = root.join("m").join("manifest.json");
    let feats = root.join("f");
    let ckpt_dir = root.join("ckpt");
    assert_ok(&acvae(&[
        "manifest",
        "--corpus",
        s(&corpus),
        "--split-ratio",
        "0.5",
        "--out",
        s(&root.join("m")),
    ]));
    assert_ok(&acvae(&[
        "extract-features",
        "--manifest",
        s(&manifest),
        "--out",
        s(&feats),
    ]));
    assert_ok(&acvae(&[
        "train",
        "--manifest",
        s(&manifest),
        "--features",
        s(&feats),
        "--out",
        s(&ckpt_dir),
        "--epochs",
        "0",
        "--segment-frames",
        "64",
    ]));
    let input = root.join("long.wav");
    acvae_core::data::write_wav(
        &input,
        &voice(170.0, 0.4, 5.0, 99),
        SR,
        acvae_core::data::WavEncoding::Pcm16,
    )
    .unwrap();
    let out = root.join("out").join("same.wav");
    let t = Instant::now();
    assert_ok(&acvae(&[
        "convert",
        "--checkpoint",
        s(&ckpt_dir.join("checkpoint.ckpt")),
        "--manifest",
        s(&manifest),
        "--src",
        "b",
        "--tgt",
        "b",
        "--in",
        s(&input),
        "--out",
        s(&out),
    ]));
    let secs = t.elapsed().as_secs_f64();
    let (x, _) = load_wav(&input).unwrap();
    let (y, _) = load_wav(&out).unwrap();
    let err = x
        .iter()
        .zip(&y)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let rel = err / x.iter().map(|a| a * a).sum::<f64>().sqrt();
    outcome(
        x.len() == y.len() && rel < 1e-3 && secs < 10.0,
        format!("relative RMS {rel:.2e} on a 5 s utterance, converted in {secs:.1} s"),
    )
}

/// Synthetic corpus shared by the training criteria.
fn corpus_spec() -> SyntheticSpec {
    SyntheticSpec {
        classes: 4,
        per_class: 16,
        q_dim: 8,
        n_frames: 64,
        tilt_step: 1.0,
        tilt_jitter: 0.5,
        seed: 0,
        ..SyntheticSpec::default()
    }
}

const STEPS: usize = 2000;
const SEGMENT: usize = 32;

struct Run {
    model: Model,
    history: Vec<LossBreakdown>,
    recon_before: f64,
    recon_after: f64,
}

fn train_synthetic(lambda_l: f64) -> Run {
    let spec = corpus_spec();
    let data = spec.generate().unwrap();
    let held_out = SyntheticSpec {
        seed: 1000,
        per_class: 8,
        ..spec.clone()
    }
    .generate()
    .unwrap();
    let mut model = Model::new(
        ArchConfig::small(spec.q_dim, spec.categories()),
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    let cfg = TrainConfig {
        lambda_l,
        lambda_i: 1.0,
        batch_size: 8,
        segment_frames: SEGMENT,
        epochs: usize::MAX,
        max_steps: Some(STEPS),
        seed: 0,
        ..TrainConfig::default()
    };
    let segs: Vec<_> = held_out
        .items
        .iter()
        .take(8)
        .map(|(x, c)| (x.segment(0, SEGMENT).unwrap(), c.clone()))
        .collect();
    let refs: Vec<_> = segs.iter().map(|(x, c)| (x, c)).collect();
    let eval = Batch::new(&refs).unwrap();
    let recon_before = reconstruction_error(&model, &eval).unwrap();
    let history = train_loop(&mut model, &data, &cfg, &mut |_, _, _| Ok(())).unwrap();
    let recon_after = reconstruction_error(&model, &eval).unwrap();
    Run {
        model,
        history,
        recon_before,
        recon_after,
    }
}

/// Fraction of held-out conversions (to every other class) that the probe
/// assigns to the target class.
fn conversion_accuracy(model: &Model, probe: &LinearProbe) -> f64 {
    let spec = corpus_spec();
    let test = SyntheticSpec {
        seed: 1000,
        per_class: 8,
        ..spec.clone()
    }
    .generate()
    .unwrap();
    let cats = spec.categories();
    let (mut hits, mut total) = (0, 0);
    for (x, c) in &test.items {
        let (z, _) = model.encode(x, c).unwrap();
        for k in (0..spec.classes).filter(|&k| k != c.classes()[0]) {
            let (mean, _) = model
                .decode(&z, &AttributeLabel::new(&cats, &[k]).unwrap())
                .unwrap();
            let converted =
                AcousticFeatureSequence::new(spec.q_dim, x.n_frames(), mean.into_data()).unwrap();
            hits += usize::from(probe.predict(&converted) == k);
            total += 1;
        }
    }
    hits as f64 / total as f64
}

fn acvae_effect() -> (Outcome, Run) {
    let t = Instant::now();
    let spec = corpus_spec();
    let data = spec.generate().unwrap();
    let items: Vec<_> = data
        .items
        .iter()
        .map(|(x, c)| (x, c.classes()[0]))
        .collect();
    let probe = LinearProbe::fit(&items, spec.classes, 2000).unwrap();
    let acvae = train_synthetic(1.0);
    let cvae = train_synthetic(0.0);
    let (a, c) = (
        conversion_accuracy(&acvae.model, &probe),
        conversion_accuracy(&cvae.model, &probe),
    );
    let secs = t.elapsed().as_secs_f64();
    let pass = a >= 0.75 && a - c >= 0.15 && secs < 1800.0;
    (
        outcome(
            pass,
            format!(
                "probe accuracy on conversions: ACVAE {:.1}%, CVAE {:.1}% ({:.0} s)",
                100.0 * a,
                100.0 * c,
                secs
            ),
        ),
        acvae,
    )
}

fn training_sanity(run: &Run) -> Outcome {
    let elbo: Vec<f64> = run
        .history
        .iter()
        .take(500)
        .map(LossBreakdown::elbo)
        .collect();
    let averages: Vec<f64> = elbo
        .windows(10)
        .map(|w| w.iter().sum::<f64>() / 10.0)
        .collect();
    let drops = averages.windows(2).filter(|w| w[1] <= w[0]).count();
    let ratio = run.recon_after / run.recon_before;
    outcome(
        drops == 0 && ratio < 0.2,
        format!(
            "10-step moving average of the ELBO falls {drops} times in {} steps; reconstruction error ratio {ratio:.3} at step {}",
            averages.len() - 1,
            run.history.len()
        ),
    )
}

fn lsd_db(a: &[f64], b: &[f64]) -> f64 {
    (a.iter()
        .zip(b)
        .map(|(x, y)| (20.0 * (x / y).log10()).powi(2))
        .sum::<f64>()
        / a.len() as f64)
        .sqrt()
}

fn dsp_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mc = MelCepstrum::new(36, 0.455, 1024).unwrap();
    let bins = 513;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let coeffs: Vec<f64> = (0..=12)
            .map(|m| rng.gen_range(-1.0..1.0) / (1.0 + m as f64))
            .collect();
        let env: Vec<f64> = (0..bins)
            .map(|k| {
                let w = PI * k as f64 / (bins - 1) as f64;
                coeffs
                    .iter()
                    .enumerate()
                    .map(|(m, c)| c * (m as f64 * w).cos())
                    .sum::<f64>()
                    .exp()
            })
            .collect();
        let (c0, c) = mc.analyze(&env).unwrap();
        worst = worst.max(lsd_db(&env, &mc.envelope(c0, &c).unwrap()));
    }

    let src = F0Stats {
        mean: 150f64.ln(),
        std: 0.2,
    };
    let tgt = F0Stats {
        mean: 230f64.ln(),
        std: 0.15,
    };
    let mapped = logf0_transform(&[src.mean.exp(), 0.0], &src, &tgt).unwrap();
    let exact = mapped[0] == tgt.mean.exp() && mapped[1] == 0.0;

    let cfg = acvae_core::dsp::AnalysisConfig::default();
    let tone: Vec<f64> = (0..SR as usize)
        .map(|i| 0.5 * (2.0 * PI * 220.0 * i as f64 / SR as f64).sin())
        .collect();
    let f0 = analyze(&tone, SR, &cfg).unwrap().f0;
    let edge = cfg.fft_size / 2 / cfg.hop() + 1;
    let pitch_err = f0[edge..f0.len() - edge]
        .iter()
        .map(|f| (f - 220.0).abs())
        .fold(0.0, f64::max);
    outcome(
        worst < 0.5 && exact && pitch_err <= 3.0,
        format!("mcc roundtrip {worst:.3} dB; log-F0 mean mapping exact: {exact}; 220 Hz tone error {pitch_err:.2} Hz"),
    )
}

fn determinism() -> Outcome {
    let dir = TempDir::new().unwrap();
    let root = dir.path();
    let corpus = root.join("corpus");
    make_corpus(&corpus, &[("a", 200.0, 0.3), ("b", 120.0, 0.6)], 3, 0.6);
    let mdir = root.join("m");
    assert_ok(&acvae(&[
        "manifest",
        "--corpus",
        s(&corpus),
        "--out",
        s(&mdir),
    ]));
    let manifest = mdir.join("manifest.json");
    let feats = root.join("f");
    assert_ok(&acvae(&[
        "extract-features",
        "--manifest",
        s(&manifest),
        "--out",
        s(&feats),
    ]));
    let run = |name: &str| {
        let out = root.join(name);
        let mut args = vec![
            "train",
            "--manifest",
            s(&manifest),
            "--features",
            s(&feats),
            "--out",
            s(&out),
            "--epochs",
            "4",
            "--batch-size",
            "2",
            "--segment-frames",
            "64",
            "--seed",
            "42",
        ];
        args.extend(SMALL_MODEL);
        assert_ok(&acvae(&args));
        fs::read(out.join("loss.csv")).unwrap()
    };
    let (a, b) = (run("one"), run("two"));
    let rows = String::from_utf8_lossy(&a).lines().count() - 1;
    outcome(
        a == b && rows > 0,
        format!("{rows}-step loss CSVs byte-identical: {}", a == b),
    )
}

#[test]
fn acceptance() {
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "gradient correctness", gradient_correctness()),
        (2, "closed-form KL", closed_form_kl()),
        (3, "variational bound", variational_bound()),
        (4, "conversion identity", conversion_identity()),
    ];
    let (effect, acvae_run) = acvae_effect();
    results.push((5, "ACVAE effect", effect));
    results.push((6, "training sanity", training_sanity(&acvae_run)));
    results.push((7, "DSP fidelity", dsp_fidelity()));
    results.push((8, "determinism", determinism()));

    for (n, name, o) in &results {
        println!(
            "[{}] criterion {n} ({name}): {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    let failed: Vec<usize> = results
        .iter()
        .filter(|(_, _, o)| !o.pass)
        .map(|(n, _, _)| *n)
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
