use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use acvae_core::data::{
    build_manifest, feature_cache, load_training_set, load_wav, normalized_sequence, write_wav,
    CorpusManifest, WavEncoding,
};
use acvae_core::dsp::{
    analyze, convert_features, logf0_transform, mcc_from_envelope, spectral_gain,
    synthesize_direct, AnalysisConfig,
};
use acvae_core::model::{Checkpoint, Model};
use acvae_core::tensor::GradCheckOptions;
use acvae_core::training::{loss_csv_row, toy_grad_check, train_loop, LOSS_CSV_HEADER};
use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::CliError;

const CONFIG_ECHO: &str = "config.toml";

fn required(value: Option<PathBuf>, flag: &str, key: &str) -> Result<PathBuf, CliError> {
    value.ok_or_else(|| CliError::Usage(format!("missing {flag} (or `{key}` in the config file)")))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| {
        CliError::Config(format!(
            "cannot create output directory {}: {e}",
            dir.display()
        ))
    })
}

fn load_manifest(cfg: &mut RunConfig, flag: Option<PathBuf>) -> Result<CorpusManifest, CliError> {
    let path = required(
        flag.or(cfg.paths.manifest.take()),
        "--manifest",
        "paths.manifest",
    )?;
    let m = CorpusManifest::load(&path)?;
    cfg.paths.manifest = Some(path);
    // Features are always interpreted with the settings the manifest was built with.
    cfg.analysis = m.analysis.clone();
    Ok(m)
}

fn load_checkpoint(cfg: &mut RunConfig, flag: Option<PathBuf>) -> Result<Checkpoint, CliError> {
    let path = required(
        flag.or(cfg.paths.checkpoint.take()),
        "--checkpoint",
        "paths.checkpoint",
    )?;
    let ckpt = Checkpoint::load(&path)?;
    cfg.paths.checkpoint = Some(path);
    Ok(ckpt)
}

#[derive(Debug, Args)]
pub struct ManifestArgs {
    /// Corpus root with one subdirectory per speaker.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Fraction of each speaker's files used for training.
    #[arg(long)]
    split_ratio: Option<f64>,
    #[arg(long)]
    split_seed: Option<u64>,
    /// Output directory; receives manifest.json.
    #[arg(long)]
    out: PathBuf,
}

pub fn manifest(mut cfg: RunConfig, a: ManifestArgs) -> Result<(), CliError> {
    let corpus = required(
        a.corpus.or(cfg.paths.corpus.take()),
        "--corpus",
        "paths.corpus",
    )?;
    cfg.paths.corpus = Some(corpus.clone());
    cfg.corpus.split_ratio = a.split_ratio.unwrap_or(cfg.corpus.split_ratio);
    cfg.corpus.split_seed = a.split_seed.unwrap_or(cfg.corpus.split_seed);
    let m = build_manifest(
        &corpus,
        cfg.corpus.split_ratio,
        cfg.corpus.split_seed,
        &cfg.analysis,
    )?;
    create_dir(&a.out)?;
    let path = a.out.join("manifest.json");
    m.save(&path)?;
    cfg.paths.manifest = Some(path.clone());
    cfg.echo(&a.out.join(CONFIG_ECHO))?;
    for s in &m.speakers {
        println!("{}: {} train, {} eval", s.id, s.train.len(), s.eval.len());
    }
    println!("wrote {}", path.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Cache directory for the feature files.
    #[arg(long)]
    out: PathBuf,
}

pub fn extract(mut cfg: RunConfig, a: ExtractArgs) -> Result<(), CliError> {
    let m = load_manifest(&mut cfg, a.manifest)?;
    create_dir(&a.out)?;
    let report = feature_cache(&m, &m.analysis, &a.out)?;
    cfg.paths.features = Some(a.out.clone());
    cfg.echo(&a.out.join(CONFIG_ECHO))?;
    let errors_path = a.out.join("errors.txt");
    if report.errors.is_empty() {
        if errors_path.exists() {
            fs::remove_file(&errors_path).map_err(acvae_core::Error::from)?;
        }
    } else {
        let text: String = report
            .errors
            .iter()
            .map(|(p, e)| format!("{}\t{e}\n", p.display()))
            .collect();
        fs::write(&errors_path, text).map_err(acvae_core::Error::from)?;
    }
    println!(
        "{} written, {} up to date, {} failed",
        report.written.len(),
        report.skipped.len(),
        report.errors.len()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Feature cache directory.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Output directory for checkpoints and loss.csv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    segment_frames: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    lambda_l: Option<f64>,
    #[arg(long)]
    lambda_i: Option<f64>,
    /// Save a checkpoint every this many steps (0 disables).
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

pub fn train(mut cfg: RunConfig, a: TrainArgs) -> Result<(), CliError> {
    let m = load_manifest(&mut cfg, a.manifest)?;
    let features = required(
        a.features.or(cfg.paths.features.take()),
        "--features",
        "paths.features",
    )?;
    cfg.paths.features = Some(features.clone());
    let t = &mut cfg.train;
    t.epochs = a.epochs.unwrap_or(t.epochs);
    t.max_steps = a.max_steps.or(t.max_steps);
    t.seed = a.seed.unwrap_or(t.seed);
    t.batch_size = a.batch_size.unwrap_or(t.batch_size);
    t.segment_frames = a.segment_frames.unwrap_or(t.segment_frames);
    t.learning_rate = a.learning_rate.unwrap_or(t.learning_rate);
    t.lambda_l = a.lambda_l.unwrap_or(t.lambda_l);
    t.lambda_i = a.lambda_i.unwrap_or(t.lambda_i);
    t.checkpoint_every = a.checkpoint_every.unwrap_or(t.checkpoint_every);
    t.validate()?;

    let data = load_training_set(&m, &features)?;
    let arch = cfg.model.arch(m.analysis.order, m.categories());
    let mut model = Model::new(arch, &mut ChaCha8Rng::seed_from_u64(cfg.train.seed))?;
    create_dir(&a.out)?;
    cfg.echo(&a.out.join(CONFIG_ECHO))?;

    let checkpoint = |model: &Model, step: usize| Checkpoint {
        model: model.clone(),
        norm: Some(m.norm.clone()),
        speakers: m.speaker_ids(),
        step: step as u64,
    };
    let csv_path = a.out.join("loss.csv");
    let mut csv = BufWriter::new(File::create(&csv_path).map_err(acvae_core::Error::from)?);
    writeln!(csv, "{LOSS_CSV_HEADER}").map_err(acvae_core::Error::from)?;
    let every = cfg.train.checkpoint_every;
    let out = a.out.clone();
    let result = train_loop(&mut model, &data, &cfg.train, &mut |step, model, loss| {
        writeln!(csv, "{}", loss_csv_row(step, loss))?;
        if step % 100 == 0 {
            log::info!(
                "step {step}: elbo {:.3} total {:.3}",
                loss.elbo(),
                loss.total_objective
            );
        }
        if every > 0 && step % every == 0 {
            checkpoint(model, step).save(&out.join(format!("step_{step:06}.ckpt")))?;
        }
        Ok(())
    });
    csv.flush().map_err(acvae_core::Error::from)?;
    let history = result?;
    let final_path = a.out.join("checkpoint.ckpt");
    checkpoint(&model, history.len()).save(&final_path)?;
    match history.last() {
        Some(l) => println!(
            "{} steps; final elbo {:.4}, total {:.4}; wrote {}",
            history.len(),
            l.elbo(),
            l.total_objective,
            final_path.display()
        ),
        None => println!("0 steps; wrote initial {}", final_path.display()),
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Source speaker name.
    #[arg(long)]
    src: String,
    /// Target speaker name.
    #[arg(long)]
    tgt: String,
    /// Input WAV file.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output WAV file; the converted F0 track and the configuration are
    /// written next to it.
    #[arg(long)]
    out: PathBuf,
}

fn check_speakers(ckpt: &Checkpoint, m: &CorpusManifest) -> Result<(), CliError> {
    if ckpt.speakers != m.speaker_ids() {
        return Err(CliError::Config(format!(
            "checkpoint speakers [{}] differ from manifest speakers [{}]",
            ckpt.speakers.join(", "),
            m.speaker_ids().join(", ")
        )));
    }
    Ok(())
}

fn analyze_file(
    path: &Path,
    cfg: &AnalysisConfig,
) -> Result<(Vec<f64>, u32, acvae_core::dsp::SpectralFrameSequence), CliError> {
    let (signal, sr) = load_wav(path)?;
    if sr != cfg.sample_rate {
        return Err(CliError::Config(format!(
            "{} is sampled at {sr} Hz but the model expects {} Hz",
            path.display(),
            cfg.sample_rate
        )));
    }
    let frames = analyze(&signal, sr, cfg)?;
    Ok((signal, sr, frames))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("output");
    path.with_file_name(format!("{stem}{suffix}"))
}

pub fn convert(mut cfg: RunConfig, a: ConvertArgs) -> Result<(), CliError> {
    let m = load_manifest(&mut cfg, a.manifest)?;
    let ckpt = load_checkpoint(&mut cfg, a.checkpoint)?;
    check_speakers(&ckpt, &m)?;
    let (src, tgt) = (m.speaker_index(&a.src)?, m.speaker_index(&a.tgt)?);
    let (c_src, c_tgt) = (m.label(&a.src)?, m.label(&a.tgt)?);
    let an = &m.analysis;

    let (signal, sr, frames) = analyze_file(&a.input, an)?;
    let mcc = mcc_from_envelope(&frames, an.order, an.alpha)?;
    let (x_hat, x_bar) = convert_features(&mcc, &c_src, &c_tgt, &ckpt)?;
    let gains = spectral_gain(&x_hat, &x_bar, an.fft_size)?;
    let y = synthesize_direct(&signal, &gains, an)?;
    if let Some(bad) = y.iter().find(|v| !v.is_finite()) {
        return Err(acvae_core::Error::NonFinite {
            term: "converted waveform".into(),
            value: *bad,
        }
        .into());
    }
    let f0 = logf0_transform(&frames.f0, &m.speakers[src].f0, &m.speakers[tgt].f0)?;

    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_wav(&a.out, &y, sr, WavEncoding::Float32)?;
    let mut text = String::from("frame,time,f0_source,f0_converted\n");
    for (t, (s, c)) in frames.f0.iter().zip(&f0).enumerate() {
        text.push_str(&format!(
            "{t},{},{s},{c}\n",
            t as f64 * an.hop() as f64 / sr as f64
        ));
    }
    fs::write(sibling(&a.out, ".f0.csv"), text).map_err(acvae_core::Error::from)?;
    cfg.echo(&sibling(&a.out, ".config.toml"))?;
    println!("{} -> {}: wrote {}", a.src, a.tgt, a.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Input WAV file.
    #[arg(long = "in")]
    input: PathBuf,
}

pub fn classify(mut cfg: RunConfig, a: ClassifyArgs) -> Result<(), CliError> {
    let m = load_manifest(&mut cfg, a.manifest)?;
    let ckpt = load_checkpoint(&mut cfg, a.checkpoint)?;
    check_speakers(&ckpt, &m)?;
    let norm = ckpt
        .norm
        .as_ref()
        .ok_or_else(|| CliError::Config("checkpoint carries no normalization statistics".into()))?;
    let an = &m.analysis;
    let (_, _, frames) = analyze_file(&a.input, an)?;
    let mut mcc = mcc_from_envelope(&frames, an.order, an.alpha)?;
    let n = mcc.len();
    let padded = acvae_core::dsp::pad_frames(n, ckpt.model.config())?;
    let last = mcc.frames[n - 1].clone();
    mcc.frames.resize(padded, last);
    mcc.c0.resize(padded, 0.0);
    let x = normalized_sequence(&mcc, norm)?;
    let log_probs = ckpt.model.classify(&x)?;
    println!("speaker,probability");
    for (id, lp) in ckpt.speakers.iter().zip(&log_probs) {
        println!("{id},{:.6}", lp.exp());
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Coordinates per parameter tensor (0 checks all).
    #[arg(long)]
    coords: Option<usize>,
}

pub fn gradcheck(mut cfg: RunConfig, a: GradcheckArgs) -> Result<(), CliError> {
    let g = &mut cfg.gradcheck;
    g.seed = a.seed.unwrap_or(g.seed);
    g.coords_per_param = a.coords.unwrap_or(g.coords_per_param);
    let opts = GradCheckOptions {
        coords_per_param: (g.coords_per_param > 0).then_some(g.coords_per_param),
        seed: g.seed,
        ..GradCheckOptions::default()
    };
    let err = toy_grad_check(g.seed, &opts)?;
    println!("max relative error: {err:.3e}");
    if !(err < g.threshold) {
        return Err(CliError::Numerical(format!(
            "gradient check error {err:.3e} exceeds {:.1e}",
            g.threshold
        )));
    }
    Ok(())
}
