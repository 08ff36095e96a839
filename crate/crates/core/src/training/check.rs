use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{objective, Batch, Noise, TrainConfig};
use crate::error::Result;
use crate::model::{AcousticFeatureSequence, ArchConfig, AttributeLabel, Category, Mode, Model};
use crate::tensor::{grad_check, GradCheckOptions, Tensor};

/// Maximum relative error between the analytic gradient of the full
/// training loss and central differences, with the noise held fixed.
pub fn objective_grad_check(
    model: &Model,
    batch: &Batch,
    noise: &Noise,
    cfg: &TrainConfig,
    opts: &GradCheckOptions,
) -> Result<f64> {
    let f = |g: &mut crate::tensor::Graph, vars: &[crate::tensor::Var]| {
        let mut fw = model.forward(g, vars, Mode::Train);
        Ok(objective(model, &mut fw, batch, noise, cfg)?.loss)
    };
    grad_check(model.params().tensors(), f, opts)
}

/// Gradient check of the full objective (both regularizers weighted 1) on a
/// seeded two-speaker toy batch with 8 feature rows and 16 frames.
pub fn toy_grad_check(seed: u64, opts: &GradCheckOptions) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cats = vec![Category::new("speaker", 2)];
    let model = Model::new(ArchConfig::small(8, cats), &mut rng)?;
    let seqs = (0..2)
        .map(|_| {
            AcousticFeatureSequence::new(
                8,
                16,
                Tensor::randn(&[8 * 16], 1.0, &mut rng)?.into_data(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let labels = [
        AttributeLabel::one_hot(2, 0)?,
        AttributeLabel::one_hot(2, 1)?,
    ];
    let batch = Batch::new(&[(&seqs[0], &labels[0]), (&seqs[1], &labels[1])])?;
    let noise = Noise::draw(&model, &batch, &mut rng)?;
    let cfg = TrainConfig {
        lambda_l: 1.0,
        lambda_i: 1.0,
        ..TrainConfig::default()
    };
    objective_grad_check(&model, &batch, &noise, &cfg, opts)
}
