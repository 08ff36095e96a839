use std::io::Write;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::objective::{train_step, Adam, Batch, LossBreakdown, Noise, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{AcousticFeatureSequence, AttributeLabel, Model};

/// Labeled feature sequences of arbitrary lengths.
#[derive(Clone, Debug, Default)]
pub struct TrainingSet {
    pub items: Vec<(AcousticFeatureSequence, AttributeLabel)>,
}

impl TrainingSet {
    fn check(&self, model: &Model, frames: usize) -> Result<Vec<usize>> {
        let cats = &model.config().categories;
        let mut seen = std::collections::BTreeSet::new();
        let mut usable = Vec::new();
        for (i, (x, c)) in self.items.iter().enumerate() {
            if c.categories() != cats.as_slice() {
                return Err(Error::Config(format!(
                    "item {i} uses different label categories"
                )));
            }
            if x.q_dim() != model.config().q_dim {
                return Err(Error::Config(format!(
                    "item {i} has {} feature rows, the model expects {}",
                    x.q_dim(),
                    model.config().q_dim
                )));
            }
            if x.n_frames() < frames {
                warn!(
                    "skipping item {i}: {} frames is shorter than the {frames}-frame segment",
                    x.n_frames()
                );
                continue;
            }
            seen.insert(c.classes());
            usable.push(i);
        }
        if usable.is_empty() {
            return Err(Error::Config(format!(
                "no training sequence has at least {frames} frames"
            )));
        }
        if self
            .items
            .iter()
            .map(|(_, c)| c.classes())
            .collect::<std::collections::BTreeSet<_>>()
            .len()
            < 2
        {
            return Err(Error::Config("training needs at least two classes".into()));
        }
        Ok(usable)
    }
}

/// Called after every step with the step number (1-based), the updated
/// model and that step's losses.
pub type StepObserver<'a> = dyn FnMut(usize, &Model, &LossBreakdown) -> Result<()> + 'a;

/// Trains `model` in place. Each epoch visits the usable sequences in a
/// seeded random order, cropping one random segment from each.
pub fn train_loop(
    model: &mut Model,
    data: &TrainingSet,
    cfg: &TrainConfig,
    observer: &mut StepObserver,
) -> Result<Vec<LossBreakdown>> {
    cfg.validate()?;
    model.config().check_frames(cfg.segment_frames)?;
    let mut order = data.check(model, cfg.segment_frames)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg, model.params().tensors());
    let mut history = Vec::new();
    let limit = cfg.max_steps.unwrap_or(usize::MAX);
    'epochs: for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            if history.len() >= limit {
                break 'epochs;
            }
            let segments = chunk
                .iter()
                .map(|&i| {
                    let (x, c) = &data.items[i];
                    let start = rng.gen_range(0..=x.n_frames() - cfg.segment_frames);
                    Ok((x.segment(start, cfg.segment_frames)?, c))
                })
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<_> = segments.iter().map(|(x, c)| (x, *c)).collect();
            let batch = Batch::new(&refs)?;
            let noise = Noise::draw(model, &batch, &mut rng)?;
            let loss = train_step(model, &mut adam, &batch, &noise, cfg)?;
            history.push(loss);
            observer(history.len(), model, &loss)?;
        }
    }
    Ok(history)
}

pub const LOSS_CSV_HEADER: &str = "step,recon,kl,mi_reg,cls_ce,total";

/// One CSV line (without newline) for step `step`.
pub fn loss_csv_row(step: usize, l: &LossBreakdown) -> String {
    format!(
        "{step},{},{},{},{},{}",
        l.recon_loglik, l.kl, l.mi_reg, l.cls_ce, l.total_objective
    )
}

/// Writes the per-step history as comma-separated text with a header row.
/// Values use the shortest representation that parses back exactly.
pub fn write_loss_csv<W: Write>(mut out: W, history: &[LossBreakdown]) -> Result<()> {
    writeln!(out, "{LOSS_CSV_HEADER}")?;
    for (i, l) in history.iter().enumerate() {
        writeln!(out, "{}", loss_csv_row(i + 1, l))?;
    }
    Ok(())
}
