//! Fully convolutional encoder, decoder and auxiliary classifier built from
//! gated linear units, with the attribute label tiled onto every conditioned
//! layer input.

mod checkpoint;
mod label;
mod layers;

pub use checkpoint::Checkpoint;
pub use label::{broadcast_label, category_groups, AttributeLabel, Category};
pub use layers::{Forward, LayerSpec, Mode, ParamStore};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{BatchStats, Graph, Tensor, Var};
use layers::{Conv, GaussianHead, GluLayer, Norm};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    /// Feature dimension Q (height of the input image).
    pub q_dim: usize,
    pub categories: Vec<Category>,
    pub encoder: Vec<LayerSpec>,
    /// `channels` is the latent channel count.
    pub encoder_head: LayerSpec,
    pub decoder: Vec<LayerSpec>,
    /// `channels` must be 1.
    pub decoder_head: LayerSpec,
    /// The last layer's `channels` must equal the label length.
    pub classifier: Vec<LayerSpec>,
    pub bn_eps: f64,
    /// Fraction of the old running statistic kept at each update.
    pub bn_momentum: f64,
    /// Log-variances are clamped to `[-log_var_clamp, log_var_clamp]`.
    pub log_var_clamp: f64,
}

const S1: [usize; 2] = [1, 1];
const S2: [usize; 2] = [2, 2];
const K_SAME: [usize; 2] = [3, 9];
const P_SAME: [usize; 2] = [1, 4];
// A 4x8 kernel with 1x3 padding halves even sizes and its transpose doubles them exactly.
const K_HALF: [usize; 2] = [4, 8];
const P_HALF: [usize; 2] = [1, 3];

impl ArchConfig {
    /// Three GLU down-layers (16, 32, 64 channels) and an 8-channel latent,
    /// a mirrored decoder, and a three-layer classifier.
    pub fn standard(q_dim: usize, categories: Vec<Category>) -> Self {
        Self::with_widths(q_dim, categories, [16, 32, 64], 8, [8, 16])
    }

    /// A narrower variant for quick experiments and tests.
    pub fn small(q_dim: usize, categories: Vec<Category>) -> Self {
        Self::with_widths(q_dim, categories, [8, 16, 16], 8, [8, 8])
    }

    pub fn with_widths(
        q_dim: usize,
        categories: Vec<Category>,
        enc: [usize; 3],
        latent: usize,
        cls: [usize; 2],
    ) -> Self {
        let classes: usize = categories.iter().map(|c| c.classes).sum();
        ArchConfig {
            q_dim,
            categories,
            encoder: vec![
                LayerSpec::new(enc[0], K_SAME, S1, P_SAME),
                LayerSpec::new(enc[1], K_HALF, S2, P_HALF),
                LayerSpec::new(enc[2], K_HALF, S2, P_HALF),
            ],
            encoder_head: LayerSpec::new(latent, [1, 1], S1, [0, 0]),
            decoder: vec![
                LayerSpec::new(enc[2], K_SAME, S1, P_SAME),
                LayerSpec::new(enc[1], K_HALF, S2, P_HALF),
                LayerSpec::new(enc[0], K_HALF, S2, P_HALF),
            ],
            decoder_head: LayerSpec::new(1, [1, 1], S1, [0, 0]),
            classifier: vec![
                LayerSpec::new(cls[0], K_HALF, S2, P_HALF),
                LayerSpec::new(cls[1], K_HALF, S2, P_HALF),
                LayerSpec::new(classes, K_SAME, S1, P_SAME).without_norm(),
            ],
            bn_eps: 1e-5,
            bn_momentum: 0.9,
            log_var_clamp: 14.0,
        }
    }

    pub fn label_len(&self) -> usize {
        self.categories.iter().map(|c| c.classes).sum()
    }

    pub fn latent_channels(&self) -> usize {
        self.encoder_head.channels
    }

    /// Product of the encoder strides along (frequency, time).
    pub fn downsampling(&self) -> (usize, usize) {
        self.encoder
            .iter()
            .chain(std::iter::once(&self.encoder_head))
            .fold((1, 1), |(f, t), l| (f * l.stride[0], t * l.stride[1]))
    }

    fn chain(
        layers: &[&LayerSpec],
        (q, n): (usize, usize),
        transpose: bool,
    ) -> Option<(usize, usize)> {
        layers.iter().try_fold((q, n), |(q, n), l| {
            Some((l.out_len(q, 0, transpose)?, l.out_len(n, 1, transpose)?))
        })
    }

    pub fn latent_shape(&self, n_frames: usize) -> Option<(usize, usize)> {
        let enc: Vec<&LayerSpec> = self.encoder.iter().chain([&self.encoder_head]).collect();
        Self::chain(&enc, (self.q_dim, n_frames), false)
    }

    fn decoded_shape(&self, latent: (usize, usize)) -> Option<(usize, usize)> {
        let dec: Vec<&LayerSpec> = self.decoder.iter().chain([&self.decoder_head]).collect();
        Self::chain(&dec, latent, true)
    }

    fn classifier_shape(&self, n_frames: usize) -> Option<(usize, usize)> {
        let cls: Vec<&LayerSpec> = self.classifier.iter().collect();
        Self::chain(&cls, (self.q_dim, n_frames), false)
    }

    fn frames_ok(&self, n: usize) -> bool {
        let (_, t) = self.downsampling();
        n % t == 0
            && self
                .latent_shape(n)
                .and_then(|l| self.decoded_shape(l))
                .is_some_and(|s| s == (self.q_dim, n))
            && self.classifier_shape(n).is_some()
    }

    /// Shortest admissible sequence length.
    pub fn min_frames(&self) -> Result<usize> {
        let (_, t) = self.downsampling();
        (1..=64)
            .map(|k| k * t)
            .find(|&n| self.frames_ok(n))
            .ok_or_else(|| {
                Error::Config("architecture admits no sequence length up to 64x its stride".into())
            })
    }

    pub fn check_frames(&self, n: usize) -> Result<()> {
        let min = self.min_frames()?;
        if n < min || !self.frames_ok(n) {
            let (_, t) = self.downsampling();
            return Err(Error::dim(format!(
                "sequence of {n} frames is not admissible: need at least {min} frames and a multiple of {t}"
            )));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let classes = self.label_len();
        if classes == 0 || self.categories.iter().any(|c| c.classes < 1) {
            return Err(Error::Config("label must have at least one class".into()));
        }
        if self.encoder.is_empty() || self.decoder.is_empty() || self.classifier.is_empty() {
            return Err(Error::Config(
                "every network needs at least one hidden layer".into(),
            ));
        }
        let all = self
            .encoder
            .iter()
            .chain(&self.decoder)
            .chain(&self.classifier)
            .chain([&self.encoder_head, &self.decoder_head]);
        for l in all {
            if l.channels == 0 || l.kernel.contains(&0) || l.stride.contains(&0) {
                return Err(Error::Config(format!("degenerate layer {l:?}")));
            }
        }
        if self.decoder_head.channels != 1 {
            return Err(Error::Config("decoder head must output one channel".into()));
        }
        if self.classifier.last().map(|l| l.channels) != Some(classes) {
            return Err(Error::Config(format!(
                "classifier must end with {classes} channels (one per label element)"
            )));
        }
        let (f, _) = self.downsampling();
        if self.q_dim == 0 || self.q_dim % f != 0 {
            return Err(Error::Config(format!(
                "feature dimension {} must be a positive multiple of the frequency stride {f}",
                self.q_dim
            )));
        }
        if !(self.bn_eps > 0.0) || !(0.0..1.0).contains(&self.bn_momentum) {
            return Err(Error::Config(
                "bn_eps must be > 0 and bn_momentum in [0, 1)".into(),
            ));
        }
        if !(self.log_var_clamp > 0.0) {
            return Err(Error::Config("log_var_clamp must be positive".into()));
        }
        self.min_frames().map(|_| ())
    }
}

/// A `Q x N` feature matrix (row `q` holds coefficient `q` over time).
#[derive(Clone, Debug, PartialEq)]
pub struct AcousticFeatureSequence {
    q_dim: usize,
    n_frames: usize,
    values: Vec<f64>,
}

impl AcousticFeatureSequence {
    pub fn new(q_dim: usize, n_frames: usize, values: Vec<f64>) -> Result<Self> {
        if q_dim * n_frames != values.len() || q_dim == 0 || n_frames == 0 {
            return Err(Error::dim(format!(
                "{q_dim}x{n_frames} feature matrix with {} values",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(
                "feature sequence contains non-finite values".into(),
            ));
        }
        Ok(AcousticFeatureSequence {
            q_dim,
            n_frames,
            values,
        })
    }

    pub fn q_dim(&self) -> usize {
        self.q_dim
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, q: usize, n: usize) -> f64 {
        self.values[q * self.n_frames + n]
    }

    /// Frames `[start, start + len)`.
    pub fn segment(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.n_frames || len == 0 {
            return Err(Error::dim(format!(
                "segment {start}..{} outside {} frames",
                start + len,
                self.n_frames
            )));
        }
        let values = (0..self.q_dim)
            .flat_map(|q| self.values[q * self.n_frames + start..][..len].to_vec())
            .collect();
        AcousticFeatureSequence::new(self.q_dim, len, values)
    }

    /// `[1, 1, Q, N]` image.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[1, 1, self.q_dim, self.n_frames], self.values.clone())
            .expect("validated dimensions")
    }

    /// Stacks equally shaped sequences into a `[B, 1, Q, N]` batch.
    pub fn batch(items: &[&AcousticFeatureSequence]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::Contract("empty batch".into()))?;
        let mut data = Vec::with_capacity(items.len() * first.values.len());
        for s in items {
            if (s.q_dim, s.n_frames) != (first.q_dim, first.n_frames) {
                return Err(Error::dim("sequences in a batch must share their shape"));
            }
            data.extend_from_slice(&s.values);
        }
        Tensor::new(&[items.len(), 1, first.q_dim, first.n_frames], data)
    }
}

#[derive(Clone, Debug)]
struct Encoder {
    layers: Vec<GluLayer>,
    head: GaussianHead,
}

#[derive(Clone, Debug)]
struct Decoder {
    layers: Vec<GluLayer>,
    head: GaussianHead,
}

#[derive(Clone, Debug)]
struct Classifier {
    layers: Vec<GluLayer>,
}

/// The three networks with their parameters and batch-norm running statistics.
#[derive(Clone, Debug)]
pub struct Model {
    config: ArchConfig,
    params: ParamStore,
    running: Vec<BatchStats>,
    encoder: Encoder,
    decoder: Decoder,
    classifier: Classifier,
}

/// Which network a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Network {
    Encoder,
    Decoder,
    Classifier,
}

struct Builder<'a> {
    store: ParamStore,
    norm_channels: Vec<usize>,
    init: &'a mut dyn FnMut(&[usize], usize) -> Tensor,
}

impl Builder<'_> {
    fn glu(
        &mut self,
        name: &str,
        cin: usize,
        spec: LayerSpec,
        transpose: bool,
        conditioned: bool,
    ) -> GluLayer {
        let linear = Conv::new(
            &mut self.store,
            &format!("{name}.linear"),
            cin,
            spec,
            transpose,
            self.init,
        );
        let gate = Conv::new(
            &mut self.store,
            &format!("{name}.gate"),
            cin,
            spec,
            transpose,
            self.init,
        );
        let norm = spec.batch_norm.then(|| {
            let slot = self.norm_channels.len();
            self.norm_channels.extend([spec.channels, spec.channels]);
            (
                Norm::new(
                    &mut self.store,
                    &format!("{name}.norm_linear"),
                    spec.channels,
                    slot,
                ),
                Norm::new(
                    &mut self.store,
                    &format!("{name}.norm_gate"),
                    spec.channels,
                    slot + 1,
                ),
            )
        });
        GluLayer {
            linear,
            gate,
            norm,
            conditioned,
        }
    }

    fn head(
        &mut self,
        name: &str,
        cin: usize,
        spec: LayerSpec,
        transpose: bool,
        clamp: f64,
    ) -> GaussianHead {
        GaussianHead {
            mean: Conv::new(
                &mut self.store,
                &format!("{name}.mean"),
                cin,
                spec,
                transpose,
                self.init,
            ),
            log_var: Conv::new(
                &mut self.store,
                &format!("{name}.log_var"),
                cin,
                spec,
                transpose,
                self.init,
            ),
            clamp,
        }
    }
}

impl Model {
    /// Fresh model with Gaussian weights of standard deviation `1/sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(config: ArchConfig, rng: &mut R) -> Result<Self> {
        let mut init = |shape: &[usize], fan_in: usize| {
            Tensor::randn(shape, 1.0 / (fan_in as f64).sqrt(), rng).expect("positive shape")
        };
        Self::build(config, &mut init)
    }

    fn build(config: ArchConfig, init: &mut dyn FnMut(&[usize], usize) -> Tensor) -> Result<Self> {
        config.validate()?;
        let nl = config.label_len();
        let clamp = config.log_var_clamp;
        let mut b = Builder {
            store: ParamStore::default(),
            norm_channels: Vec::new(),
            init,
        };

        let mut cin = 1;
        let mut layers = Vec::new();
        for (i, spec) in config.encoder.iter().enumerate() {
            layers.push(b.glu(&format!("enc.{i}"), cin + nl, *spec, false, true));
            cin = spec.channels;
        }
        let head = b.head("enc.head", cin + nl, config.encoder_head, false, clamp);
        let encoder = Encoder { layers, head };

        let mut cin = config.latent_channels();
        let mut layers = Vec::new();
        for (i, spec) in config.decoder.iter().enumerate() {
            layers.push(b.glu(&format!("dec.{i}"), cin + nl, *spec, true, true));
            cin = spec.channels;
        }
        let head = b.head("dec.head", cin + nl, config.decoder_head, true, clamp);
        let decoder = Decoder { layers, head };

        let mut cin = 1;
        let mut layers = Vec::new();
        for (i, spec) in config.classifier.iter().enumerate() {
            layers.push(b.glu(&format!("cls.{i}"), cin, *spec, false, false));
            cin = spec.channels;
        }
        let classifier = Classifier { layers };

        let running = b
            .norm_channels
            .iter()
            .map(|&c| BatchStats {
                mean: vec![0.0; c],
                var: vec![1.0; c],
            })
            .collect();
        Ok(Model {
            config,
            params: b.store,
            running,
            encoder,
            decoder,
            classifier,
        })
    }

    /// Reassembles a model from stored tensors; names and shapes must match
    /// what `config` produces.
    pub fn from_parts(
        config: ArchConfig,
        named: Vec<(String, Tensor)>,
        running: Vec<BatchStats>,
    ) -> Result<Self> {
        let mut zeros = |shape: &[usize], _: usize| Tensor::zeros(shape).expect("positive shape");
        let mut model = Self::build(config, &mut zeros)?;
        if named.len() != model.params.len() {
            return Err(Error::Corrupt(format!(
                "expected {} parameter tensors, found {}",
                model.params.len(),
                named.len()
            )));
        }
        for (i, (name, t)) in named.into_iter().enumerate() {
            let slot = &mut model.params.tensors[i];
            if model.params.names[i] != name || slot.shape() != t.shape() {
                return Err(Error::Corrupt(format!(
                    "parameter {i}: expected {} {:?}, found {name} {:?}",
                    model.params.names[i],
                    slot.shape(),
                    t.shape()
                )));
            }
            *slot = t;
        }
        if running.len() != model.running.len()
            || running
                .iter()
                .zip(&model.running)
                .any(|(a, b)| a.mean.len() != b.mean.len() || a.var.len() != b.var.len())
        {
            return Err(Error::Corrupt(
                "running statistics do not match the architecture".into(),
            ));
        }
        model.running = running;
        Ok(model)
    }

    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[BatchStats] {
        &self.running
    }

    pub fn network_of(&self, param: usize) -> Network {
        match self.params.names[param].split('.').next() {
            Some("enc") => Network::Encoder,
            Some("dec") => Network::Decoder,
            _ => Network::Classifier,
        }
    }

    /// Starts a forward pass over parameters previously bound with [`ParamStore::bind`].
    pub fn forward<'a>(
        &'a self,
        graph: &'a mut Graph,
        params: &'a [Var],
        mode: Mode,
    ) -> Forward<'a> {
        Forward::new(graph, params, mode, &self.running, self.config.bn_eps)
    }

    /// Folds train-mode batch statistics into the running averages.
    pub fn update_running_stats(&mut self, collected: &[(usize, BatchStats)]) {
        let m = self.config.bn_momentum;
        for (slot, stats) in collected {
            let r = &mut self.running[*slot];
            for (a, b) in r.mean.iter_mut().zip(&stats.mean) {
                *a = m * *a + (1.0 - m) * b;
            }
            for (a, b) in r.var.iter_mut().zip(&stats.var) {
                *a = m * *a + (1.0 - m) * b;
            }
        }
    }

    fn check_input(&self, fw: &Forward, x: Var) -> Result<()> {
        let s = fw.graph.shape(x);
        if s.len() != 4 || s[1] != 1 || s[2] != self.config.q_dim {
            return Err(Error::dim(format!(
                "expected [B, 1, {}, N] features, got {s:?}",
                self.config.q_dim
            )));
        }
        self.config.check_frames(s[3])
    }

    fn check_labels(&self, fw: &Forward, x: Var, labels: &[AttributeLabel]) -> Result<()> {
        if labels.len() != fw.graph.shape(x)[0] {
            return Err(Error::dim(format!(
                "{} labels for a batch of {}",
                labels.len(),
                fw.graph.shape(x)[0]
            )));
        }
        if labels
            .iter()
            .any(|l| l.categories() != self.config.categories.as_slice())
        {
            return Err(Error::Contract(
                "label categories differ from the model's".into(),
            ));
        }
        Ok(())
    }

    /// Encoder on a `[B, 1, Q, N]` batch: returns `(mu, log_var)` of q(z|x,c).
    pub fn encode_graph(
        &self,
        fw: &mut Forward,
        x: Var,
        labels: &[AttributeLabel],
    ) -> Result<(Var, Var)> {
        self.check_input(fw, x)?;
        self.check_labels(fw, x, labels)?;
        let mut h = x;
        for l in &self.encoder.layers {
            h = l.forward(fw, h, Some(labels))?;
        }
        self.encoder.head.forward(fw, h, labels)
    }

    /// Decoder on a latent batch: returns `(mu, log_var)` of p(x|z,c) as `[B, 1, Q, N]`.
    pub fn decode_graph(
        &self,
        fw: &mut Forward,
        z: Var,
        labels: &[AttributeLabel],
    ) -> Result<(Var, Var)> {
        let s = fw.graph.shape(z).to_vec();
        if s.len() != 4 || s[1] != self.config.latent_channels() {
            return Err(Error::dim(format!(
                "expected [B, {}, H, W] latents, got {s:?}",
                self.config.latent_channels()
            )));
        }
        if self.decoded_shape_ok(s[2], s[3]).is_none() {
            return Err(Error::dim(format!(
                "latent {s:?} does not decode to {} feature rows",
                self.config.q_dim
            )));
        }
        self.check_labels(fw, z, labels)?;
        let mut h = z;
        for l in &self.decoder.layers {
            h = l.forward(fw, h, Some(labels))?;
        }
        self.decoder.head.forward(fw, h, labels)
    }

    fn decoded_shape_ok(&self, hq: usize, hn: usize) -> Option<(usize, usize)> {
        self.config.decoded_shape((hq, hn)).filter(|&(q, n)| {
            q == self.config.q_dim && self.config.latent_shape(n) == Some((hq, hn))
        })
    }

    /// Auxiliary classifier: `[B, L, 1, 1]` log-probabilities, normalized per category.
    pub fn classify_graph(&self, fw: &mut Forward, x: Var) -> Result<Var> {
        self.check_input(fw, x)?;
        let mut h = x;
        for l in &self.classifier.layers {
            h = l.forward(fw, h, None)?;
        }
        product_pool(fw.graph, h, &category_groups(&self.config.categories))
    }

    fn eval_pass<T>(&self, f: impl FnOnce(&mut Forward) -> Result<T>) -> Result<T> {
        let mut g = Graph::new();
        let vars: Vec<Var> = self
            .params
            .tensors()
            .iter()
            .map(|t| g.constant(t.clone()))
            .collect();
        let mut fw = self.forward(&mut g, &vars, Mode::Eval);
        f(&mut fw)
    }

    /// Inference-mode encoder: latent mean and log-variance, each `[D, Q', N']`.
    pub fn encode(
        &self,
        x: &AcousticFeatureSequence,
        c: &AttributeLabel,
    ) -> Result<(Tensor, Tensor)> {
        self.eval_pass(|fw| {
            let xv = fw.graph.constant(x.to_tensor());
            let (mu, lv) = self.encode_graph(fw, xv, std::slice::from_ref(c))?;
            Ok((
                drop_batch(fw.graph.tensor(mu))?,
                drop_batch(fw.graph.tensor(lv))?,
            ))
        })
    }

    /// Inference-mode decoder: mean and log-variance, each `[Q, N]`.
    pub fn decode(&self, z: &Tensor, c: &AttributeLabel) -> Result<(Tensor, Tensor)> {
        let zs = z.shape();
        if zs.len() != 3 {
            return Err(Error::dim(format!("expected [D, H, W] latent, got {zs:?}")));
        }
        let z4 = z.clone().reshape(&[1, zs[0], zs[1], zs[2]])?;
        self.eval_pass(|fw| {
            let zv = fw.graph.constant(z4);
            let (mu, lv) = self.decode_graph(fw, zv, std::slice::from_ref(c))?;
            let q = self.config.q_dim;
            let n = fw.graph.shape(mu)[3];
            Ok((
                fw.graph.tensor(mu).reshape(&[q, n])?,
                fw.graph.tensor(lv).reshape(&[q, n])?,
            ))
        })
    }

    /// Inference-mode classifier: log r(c|x) over the concatenated label elements.
    pub fn classify(&self, x: &AcousticFeatureSequence) -> Result<Vec<f64>> {
        self.eval_pass(|fw| {
            let xv = fw.graph.constant(x.to_tensor());
            let out = self.classify_graph(fw, xv)?;
            Ok(fw.graph.value(out).to_vec())
        })
    }
}

fn drop_batch(t: Tensor) -> Result<Tensor> {
    let s = t.shape()[1..].to_vec();
    t.reshape(&s)
}

/// Pools per-position class scores `[B, L, H, W]` into utterance-level
/// log-probabilities `[B, L, 1, 1]`: each position's distribution is
/// log-softmaxed, positions are multiplied (summed in the log domain), and
/// the product is renormalized within each category group.
pub fn product_pool(g: &mut Graph, logits: Var, groups: &[(usize, usize)]) -> Result<Var> {
    let per_pos = g.log_softmax_channels(logits, groups)?;
    let pooled = g.sum_spatial(per_pos)?;
    g.log_softmax_channels(pooled, groups)
}

/// `z = mu + exp(log_var / 2) * eps` with `eps` held constant.
pub fn reparameterize_graph(g: &mut Graph, mu: Var, log_var: Var, eps: Tensor) -> Result<Var> {
    if g.shape(mu) != eps.shape() || g.shape(log_var) != eps.shape() {
        return Err(Error::dim(format!(
            "reparameterization shapes differ: mu {:?}, log_var {:?}, eps {:?}",
            g.shape(mu),
            g.shape(log_var),
            eps.shape()
        )));
    }
    let half = g.scale(log_var, 0.5);
    let std = g.exp(half);
    let e = g.constant(eps);
    let noise = g.mul(std, e)?;
    g.add(mu, noise)
}

pub fn reparameterize(mu: &Tensor, log_var: &Tensor, eps: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let (m, l) = (g.constant(mu.clone()), g.constant(log_var.clone()));
    let z = reparameterize_graph(&mut g, m, l, eps.clone())?;
    Ok(g.tensor(z))
}
