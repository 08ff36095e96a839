use rand::Rng;
use serde::{Deserialize, Serialize};

use super::terms::{gaussian_loglik_graph, kl_gaussian_std_graph};
use crate::error::{Error, Result};
use crate::model::{
    reparameterize_graph, AcousticFeatureSequence, AttributeLabel, Forward, Mode, Model,
};
use crate::tensor::{BatchStats, Graph, Tensor, Var};

/// Hyperparameters of the criterion and the optimizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Weight of the mutual-information regularizer.
    pub lambda_l: f64,
    /// Weight of the classifier cross-entropy on real data.
    pub lambda_i: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    /// Frames per training segment.
    pub segment_frames: usize,
    pub epochs: usize,
    /// Stop after this many steps even if epochs remain.
    pub max_steps: Option<usize>,
    pub seed: u64,
    /// Sample the regularizer's x from the decoder Gaussian (otherwise use its mean).
    pub sample_decoder_output: bool,
    /// Write a checkpoint every this many steps (0 disables periodic checkpoints).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_l: 1.0,
            lambda_i: 1.0,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 8,
            segment_frames: 128,
            epochs: 10,
            max_steps: None,
            seed: 0,
            sample_decoder_output: true,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.lambda_l >= 0.0 && self.lambda_l.is_finite())
            || !(self.lambda_i >= 0.0 && self.lambda_i.is_finite())
        {
            return bad("lambda_l and lambda_i must be finite and nonnegative");
        }
        if !(self.learning_rate > 0.0) || !(self.adam_eps > 0.0) {
            return bad("learning_rate and adam_eps must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if self.batch_size == 0 || self.segment_frames == 0 {
            return bad("batch_size and segment_frames must be positive");
        }
        Ok(())
    }
}

/// Criterion components in nats, averaged over the batch. `total_objective`
/// is the quantity being maximized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon_loglik: f64,
    pub kl: f64,
    pub mi_reg: f64,
    pub cls_ce: f64,
    pub total_objective: f64,
}

impl LossBreakdown {
    /// The evidence lower bound: reconstruction log-likelihood minus KL.
    pub fn elbo(&self) -> f64 {
        self.recon_loglik - self.kl
    }
}

/// Equally sized training segments with their labels.
#[derive(Clone, Debug)]
pub struct Batch {
    pub x: Tensor,
    pub labels: Vec<AttributeLabel>,
}

impl Batch {
    pub fn new(items: &[(&AcousticFeatureSequence, &AttributeLabel)]) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let seqs: Vec<_> = items.iter().map(|(x, _)| *x).collect();
        Ok(Batch {
            x: AcousticFeatureSequence::batch(&seqs)?,
            labels: items.iter().map(|(_, c)| (*c).clone()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Every random draw one criterion evaluation needs. Holding it fixed makes
/// the objective a deterministic function of the parameters.
#[derive(Clone, Debug)]
pub struct Noise {
    /// Reparameterization noise for the lower bound.
    pub elbo_z: Tensor,
    /// Latent noise for the regularizer.
    pub mi_z: Tensor,
    /// Classes the regularizer converts to.
    pub mi_labels: Vec<AttributeLabel>,
    /// Decoder-output noise for the regularizer.
    pub mi_x: Tensor,
}

impl Noise {
    pub fn draw<R: Rng + ?Sized>(model: &Model, batch: &Batch, rng: &mut R) -> Result<Self> {
        let cfg = model.config();
        let [b, _, q, n] = batch.x.shape()[..] else {
            return Err(Error::dim(format!(
                "batch tensor {:?} is not 4-D",
                batch.x.shape()
            )));
        };
        let (lq, ln) = cfg
            .latent_shape(n)
            .ok_or_else(|| Error::dim(format!("no latent geometry for {n} frames")))?;
        let zshape = [b, cfg.latent_channels(), lq, ln];
        let elbo_z = Tensor::randn(&zshape, 1.0, rng)?;
        let mi_z = Tensor::randn(&zshape, 1.0, rng)?;
        let mi_labels = (0..b)
            .map(|_| {
                let picks: Vec<usize> = cfg
                    .categories
                    .iter()
                    .map(|c| rng.gen_range(0..c.classes))
                    .collect();
                AttributeLabel::new(&cfg.categories, &picks)
            })
            .collect::<Result<_>>()?;
        let mi_x = Tensor::randn(&[b, 1, q, n], 1.0, rng)?;
        Ok(Noise {
            elbo_z,
            mi_z,
            mi_labels,
            mi_x,
        })
    }
}

/// Graph nodes of each term; `loss` is the negated weighted objective.
#[derive(Clone, Copy, Debug)]
pub struct ObjectiveVars {
    pub recon: Var,
    pub kl: Var,
    pub mi: Var,
    pub cls: Var,
    pub loss: Var,
}

/// One-hot labels as a `[B, L, 1, 1]` tensor.
fn label_tensor(labels: &[AttributeLabel]) -> Result<Tensor> {
    let l = labels[0].len();
    let data = labels.iter().flat_map(|c| c.value().to_vec()).collect();
    Tensor::new(&[labels.len(), l, 1, 1], data)
}

/// Batch mean of `log r(c|x)` summed over categories.
fn mean_log_prob(g: &mut Graph, log_probs: Var, labels: &[AttributeLabel]) -> Result<Var> {
    let mask = g.constant(label_tensor(labels)?);
    let picked = g.mul(log_probs, mask)?;
    let s = g.sum(picked);
    Ok(g.scale(s, 1.0 / labels.len() as f64))
}

/// Records all four terms on `fw`. The mutual-information passes do not
/// contribute batch statistics to the running averages.
pub fn objective(
    model: &Model,
    fw: &mut Forward,
    batch: &Batch,
    noise: &Noise,
    cfg: &TrainConfig,
) -> Result<ObjectiveVars> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let inv_b = 1.0 / batch.len() as f64;
    let x = fw.graph.constant(batch.x.clone());

    // Lower bound: one reparameterized sample per example.
    let (mu_z, lv_z) = model.encode_graph(fw, x, &batch.labels)?;
    let z = reparameterize_graph(fw.graph, mu_z, lv_z, noise.elbo_z.clone())?;
    let (mu_x, lv_x) = model.decode_graph(fw, z, &batch.labels)?;
    let ll = gaussian_loglik_graph(fw.graph, x, mu_x, lv_x)?;
    let recon = fw.graph.scale(ll, inv_b);
    let kl_sum = kl_gaussian_std_graph(fw.graph, mu_z, lv_z)?;
    let kl = fw.graph.scale(kl_sum, inv_b);

    // Classifier cross-entropy on real data.
    let real_lp = model.classify_graph(fw, x)?;
    let cls = mean_log_prob(fw.graph, real_lp, &batch.labels)?;

    // Regularizer: convert to a random class and ask the classifier to recognize it.
    fw.set_recording(false);
    let z2 = reparameterize_graph(fw.graph, mu_z, lv_z, noise.mi_z.clone())?;
    let (mu_c, lv_c) = model.decode_graph(fw, z2, &noise.mi_labels)?;
    let xc = if cfg.sample_decoder_output {
        reparameterize_graph(fw.graph, mu_c, lv_c, noise.mi_x.clone())?
    } else {
        mu_c
    };
    let fake_lp = model.classify_graph(fw, xc)?;
    let mi = mean_log_prob(fw.graph, fake_lp, &noise.mi_labels)?;
    fw.set_recording(true);

    let mut total = fw.graph.sub(recon, kl)?;
    for (w, term) in [(cfg.lambda_l, mi), (cfg.lambda_i, cls)] {
        if w != 0.0 {
            let t = fw.graph.scale(term, w);
            total = fw.graph.add(total, t)?;
        }
    }
    let loss = fw.graph.scale(total, -1.0);
    Ok(ObjectiveVars {
        recon,
        kl,
        mi,
        cls,
        loss,
    })
}

fn breakdown(g: &Graph, v: &ObjectiveVars, cfg: &TrainConfig) -> Result<LossBreakdown> {
    let named = [
        ("recon", v.recon),
        ("kl", v.kl),
        ("mi_reg", v.mi),
        ("cls_ce", v.cls),
    ];
    let mut vals = [0.0; 4];
    for (slot, (name, var)) in vals.iter_mut().zip(named) {
        *slot = g.item(var)?;
        if !slot.is_finite() {
            return Err(Error::NonFinite {
                term: name.into(),
                value: *slot,
            });
        }
    }
    let [recon_loglik, kl, mi_reg, cls_ce] = vals;
    Ok(LossBreakdown {
        recon_loglik,
        kl,
        mi_reg,
        cls_ce,
        total_objective: recon_loglik - kl + cfg.lambda_l * mi_reg + cfg.lambda_i * cls_ce,
    })
}

/// Evaluates the criterion and its gradient with respect to every parameter
/// (the gradient of the loss, i.e. of the negated objective).
pub struct Evaluation {
    pub loss: LossBreakdown,
    pub grads: Vec<Vec<f64>>,
    pub stats: Vec<(usize, BatchStats)>,
}

pub fn evaluate(
    model: &Model,
    batch: &Batch,
    noise: &Noise,
    cfg: &TrainConfig,
) -> Result<Evaluation> {
    let mut g = Graph::new();
    let vars = model.params().bind(&mut g);
    let mut fw = model.forward(&mut g, &vars, Mode::Train);
    let ov = objective(model, &mut fw, batch, noise, cfg)?;
    let stats = fw.into_stats();
    let loss = breakdown(&g, &ov, cfg)?;
    g.backward(ov.loss)?;
    let grads = vars
        .iter()
        .zip(model.params().tensors())
        .map(|(&v, t)| {
            g.grad(v)
                .map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec)
        })
        .collect::<Vec<_>>();
    if let Some(i) = grads
        .iter()
        .position(|gr| gr.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::NonFinite {
            term: format!("gradient of {}", model.params().names()[i]),
            value: f64::NAN,
        });
    }
    Ok(Evaluation { loss, grads, stats })
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig, params: &[Tensor]) -> Self {
        Adam {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            t: 0,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Moves `params` against `grads`.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::Contract(
                "optimizer state does not match the parameter set".into(),
            ));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(&mut self.v))
        {
            for (((w, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                *w -= self.lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// One optimizer step on the full criterion.
pub fn train_step(
    model: &mut Model,
    adam: &mut Adam,
    batch: &Batch,
    noise: &Noise,
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    let ev = evaluate(model, batch, noise, cfg)?;
    adam.step(model.params_mut().tensors_mut(), &ev.grads)?;
    model.update_running_stats(&ev.stats);
    Ok(ev.loss)
}

/// Mean squared error of the deterministic reconstruction `μθ(μφ(x, c), c)`
/// with frozen normalization statistics.
pub fn reconstruction_error(model: &Model, batch: &Batch) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = model
        .params()
        .tensors()
        .iter()
        .map(|t| g.constant(t.clone()))
        .collect();
    let mut fw = model.forward(&mut g, &vars, Mode::Eval);
    let x = fw.graph.constant(batch.x.clone());
    let (mu_z, _) = model.encode_graph(&mut fw, x, &batch.labels)?;
    let (mu_x, _) = model.decode_graph(&mut fw, mu_z, &batch.labels)?;
    let d = g.sub(mu_x, x)?;
    let d2 = g.square(d);
    let m = g.mean(d2);
    g.item(m)
}
