use serde::{Deserialize, Serialize};

use super::label::{tile_labels, AttributeLabel};
use crate::error::{Error, Result};
use crate::tensor::{BatchStats, Graph, Tensor, Var};

/// Geometry of one convolutional layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub channels: usize,
    pub kernel: [usize; 2],
    pub stride: [usize; 2],
    pub padding: [usize; 2],
    /// Batch-normalize the linear and gate paths (GLU layers only).
    #[serde(default = "default_true")]
    pub batch_norm: bool,
}

fn default_true() -> bool {
    true
}

impl LayerSpec {
    pub const fn new(
        channels: usize,
        kernel: [usize; 2],
        stride: [usize; 2],
        padding: [usize; 2],
    ) -> Self {
        LayerSpec {
            channels,
            kernel,
            stride,
            padding,
            batch_norm: true,
        }
    }

    pub const fn without_norm(mut self) -> Self {
        self.batch_norm = false;
        self
    }

    /// Output extent along `axis` (0 = frequency, 1 = time), or `None` if the
    /// kernel does not fit.
    pub(crate) fn out_len(&self, len: usize, axis: usize, transpose: bool) -> Option<usize> {
        let (k, s, p) = (self.kernel[axis], self.stride[axis], self.padding[axis]);
        if transpose {
            let v = (len as isize - 1) * s as isize - 2 * p as isize + k as isize;
            (v > 0).then_some(v as usize)
        } else {
            (k <= len + 2 * p).then(|| (len + 2 * p - k) / s + 1)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Named parameter tensors in creation order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    pub(crate) names: Vec<String>,
    pub(crate) tensors: Vec<Tensor>,
}

impl ParamStore {
    pub(crate) fn push(&mut self, name: String, t: Tensor) -> usize {
        self.names.push(name);
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Records every parameter on `g` as a differentiable leaf.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.tensors.iter().map(|t| g.param(t.clone())).collect()
    }
}

/// State threaded through one forward pass over a bound model.
pub struct Forward<'a> {
    pub graph: &'a mut Graph,
    params: &'a [Var],
    mode: Mode,
    running: &'a [BatchStats],
    eps: f64,
    record: bool,
    stats: Vec<(usize, BatchStats)>,
}

impl<'a> Forward<'a> {
    pub(crate) fn new(
        graph: &'a mut Graph,
        params: &'a [Var],
        mode: Mode,
        running: &'a [BatchStats],
        eps: f64,
    ) -> Self {
        Forward {
            graph,
            params,
            mode,
            running,
            eps,
            record: true,
            stats: Vec::new(),
        }
    }

    /// Whether train-mode batch statistics from subsequent layers are kept
    /// for the running-average update.
    pub fn set_recording(&mut self, on: bool) {
        self.record = on;
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn into_stats(self) -> Vec<(usize, BatchStats)> {
        self.stats
    }

    fn p(&self, idx: usize) -> Var {
        self.params[idx]
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Conv {
    pub w: usize,
    pub b: usize,
    pub transpose: bool,
    pub spec: LayerSpec,
}

impl Conv {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        spec: LayerSpec,
        transpose: bool,
        init: &mut dyn FnMut(&[usize], usize) -> Tensor,
    ) -> Self {
        let [kh, kw] = spec.kernel;
        let shape = if transpose {
            [cin, spec.channels, kh, kw]
        } else {
            [spec.channels, cin, kh, kw]
        };
        let w = store.push(format!("{name}.weight"), init(&shape, cin * kh * kw));
        let b = store.push(
            format!("{name}.bias"),
            Tensor::zeros(&[spec.channels]).expect("positive channel count"),
        );
        Conv {
            w,
            b,
            transpose,
            spec,
        }
    }

    fn apply(&self, fw: &mut Forward, x: Var) -> Result<Var> {
        let (w, b) = (fw.p(self.w), fw.p(self.b));
        let s = (self.spec.stride[0], self.spec.stride[1]);
        let p = (self.spec.padding[0], self.spec.padding[1]);
        if self.transpose {
            fw.graph.conv2d_transpose(x, w, Some(b), s, p)
        } else {
            fw.graph.conv2d(x, w, Some(b), s, p)
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Norm {
    pub gamma: usize,
    pub beta: usize,
    pub slot: usize,
}

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, slot: usize) -> Self {
        let gamma = store.push(
            format!("{name}.gamma"),
            Tensor::full(&[channels], 1.0).expect("positive channel count"),
        );
        let beta = store.push(
            format!("{name}.beta"),
            Tensor::zeros(&[channels]).expect("positive channel count"),
        );
        Norm { gamma, beta, slot }
    }

    fn apply(&self, fw: &mut Forward, x: Var) -> Result<Var> {
        let (gamma, beta) = (fw.p(self.gamma), fw.p(self.beta));
        match fw.mode {
            Mode::Train => {
                let (y, stats) = fw.graph.batch_norm_train(x, gamma, beta, fw.eps)?;
                if fw.record {
                    fw.stats.push((self.slot, stats));
                }
                Ok(y)
            }
            Mode::Eval => {
                let stats = fw.running.get(self.slot).ok_or_else(|| {
                    Error::State(format!("no running statistics for norm slot {}", self.slot))
                })?;
                fw.graph.batch_norm_eval(x, gamma, beta, stats, fw.eps)
            }
        }
    }
}

fn with_label(fw: &mut Forward, h: Var, labels: Option<&[AttributeLabel]>) -> Result<Var> {
    let Some(labels) = labels else {
        return Ok(h);
    };
    let shape = fw.graph.shape(h).to_vec();
    if shape.len() != 4 || shape[0] != labels.len() {
        return Err(Error::dim(format!(
            "activation {shape:?} does not match a batch of {} labels",
            labels.len()
        )));
    }
    let planes = fw
        .graph
        .constant(tile_labels(labels, (shape[2], shape[3]))?);
    fw.graph.concat(&[h, planes], 1)
}

/// Gated linear unit: `N_a(W * h' + b) ⊙ sigmoid(N_b(V * h' + d))`, where
/// `h'` is the input optionally concatenated with tiled label planes.
#[derive(Clone, Debug)]
pub(crate) struct GluLayer {
    pub linear: Conv,
    pub gate: Conv,
    pub norm: Option<(Norm, Norm)>,
    pub conditioned: bool,
}

impl GluLayer {
    pub fn forward(
        &self,
        fw: &mut Forward,
        h: Var,
        labels: Option<&[AttributeLabel]>,
    ) -> Result<Var> {
        let h = with_label(fw, h, labels.filter(|_| self.conditioned))?;
        let mut a = self.linear.apply(fw, h)?;
        let mut gte = self.gate.apply(fw, h)?;
        if let Some((na, nb)) = &self.norm {
            a = na.apply(fw, a)?;
            gte = nb.apply(fw, gte)?;
        }
        let s = fw.graph.sigmoid(gte);
        fw.graph.mul(a, s)
    }
}

/// Output layer producing a mean and a clamped log-variance.
#[derive(Clone, Debug)]
pub(crate) struct GaussianHead {
    pub mean: Conv,
    pub log_var: Conv,
    pub clamp: f64,
}

impl GaussianHead {
    pub fn forward(
        &self,
        fw: &mut Forward,
        h: Var,
        labels: &[AttributeLabel],
    ) -> Result<(Var, Var)> {
        let h = with_label(fw, h, Some(labels))?;
        let mu = self.mean.apply(fw, h)?;
        let lv = self.log_var.apply(fw, h)?;
        let lv = fw.graph.clamp(lv, -self.clamp, self.clamp);
        Ok((mu, lv))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer(norm: bool, rng: &mut ChaCha8Rng) -> (ParamStore, GluLayer) {
        let mut store = ParamStore::default();
        let spec = if norm {
            LayerSpec::new(3, [3, 3], [1, 1], [1, 1])
        } else {
            LayerSpec::new(3, [3, 3], [1, 1], [1, 1]).without_norm()
        };
        let mut init = |s: &[usize], _: usize| Tensor::randn(s, 0.5, rng).unwrap();
        let linear = Conv::new(&mut store, "l", 2, spec, false, &mut init);
        let gate = Conv::new(&mut store, "g", 2, spec, false, &mut init);
        let norm = norm.then(|| {
            (
                Norm::new(&mut store, "na", 3, 0),
                Norm::new(&mut store, "nb", 3, 1),
            )
        });
        (
            store,
            GluLayer {
                linear,
                gate,
                norm,
                conditioned: false,
            },
        )
    }

    fn run(store: &ParamStore, l: &GluLayer, x: &Tensor, mode: Mode) -> Vec<f64> {
        let mut g = Graph::new();
        let vars = store.bind(&mut g);
        let running = vec![
            BatchStats {
                mean: vec![0.1, -0.2, 0.3],
                var: vec![1.5, 0.5, 2.0],
            };
            2
        ];
        let mut fw = Forward::new(&mut g, &vars, mode, &running, 1e-5);
        let xv = fw.graph.constant(x.clone());
        let y = l.forward(&mut fw, xv, None).unwrap();
        g.value(y).to_vec()
    }

    fn linear_only(store: &ParamStore, l: &GluLayer, x: &Tensor) -> Vec<f64> {
        let mut g = Graph::new();
        let vars = store.bind(&mut g);
        let mut fw = Forward::new(&mut g, &vars, Mode::Train, &[], 1e-5);
        let xv = fw.graph.constant(x.clone());
        let y = l.linear.apply(&mut fw, xv).unwrap();
        g.value(y).to_vec()
    }

    #[test]
    fn zero_gate_halves_linear_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (mut store, l) = layer(false, &mut rng);
        for i in [l.gate.w, l.gate.b] {
            store.tensors[i].data_mut().fill(0.0);
        }
        let x = Tensor::randn(&[2, 2, 4, 5], 1.0, &mut rng).unwrap();
        let y = run(&store, &l, &x, Mode::Train);
        let lin = linear_only(&store, &l, &x);
        for (a, b) in y.iter().zip(&lin) {
            assert!((a - 0.5 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_linear_path_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (mut store, l) = layer(false, &mut rng);
        for i in [l.linear.w, l.linear.b] {
            store.tensors[i].data_mut().fill(0.0);
        }
        let x = Tensor::randn(&[1, 2, 4, 5], 1.0, &mut rng).unwrap();
        assert!(run(&store, &l, &x, Mode::Train).iter().all(|&v| v == 0.0));
    }

    /// Direct loop evaluation of conv + eval-mode normalization + gating.
    #[test]
    fn matches_composition_of_primitives() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (store, l) = layer(true, &mut rng);
        let x = Tensor::randn(&[1, 2, 4, 5], 1.0, &mut rng).unwrap();
        let y = run(&store, &l, &x, Mode::Eval);
        let conv = |w: &Tensor, b: &Tensor, o: usize, i: usize, j: usize| {
            let mut acc = b.data()[o];
            for c in 0..2 {
                for a in 0..3 {
                    for bb in 0..3 {
                        let (ii, jj) = (i as isize + a as isize - 1, j as isize + bb as isize - 1);
                        if (0..4).contains(&ii) && (0..5).contains(&jj) {
                            acc += w.data()[((o * 2 + c) * 3 + a) * 3 + bb]
                                * x.data()[(c * 4 + ii as usize) * 5 + jj as usize];
                        }
                    }
                }
            }
            acc
        };
        let (mean, var) = ([0.1, -0.2, 0.3], [1.5, 0.5, 2.0]);
        let t = &store.tensors;
        let (na, nb) = l.norm.as_ref().unwrap();
        for o in 0..3 {
            for i in 0..4 {
                for j in 0..5 {
                    let bn = |v: f64, n: &Norm| {
                        (v - mean[o]) / (var[o] + 1e-5f64).sqrt() * t[n.gamma].data()[o]
                            + t[n.beta].data()[o]
                    };
                    let a = bn(conv(&t[l.linear.w], &t[l.linear.b], o, i, j), na);
                    let gte = bn(conv(&t[l.gate.w], &t[l.gate.b], o, i, j), nb);
                    let expect = a / (1.0 + (-gte).exp());
                    assert!((y[(o * 4 + i) * 5 + j] - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn records_stats_only_when_asked() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (store, l) = layer(true, &mut rng);
        let x = Tensor::randn(&[2, 2, 4, 5], 1.0, &mut rng).unwrap();
        let mut g = Graph::new();
        let vars = store.bind(&mut g);
        let mut fw = Forward::new(&mut g, &vars, Mode::Train, &[], 1e-5);
        let xv = fw.graph.constant(x);
        l.forward(&mut fw, xv, None).unwrap();
        fw.set_recording(false);
        l.forward(&mut fw, xv, None).unwrap();
        let stats = fw.into_stats();
        assert_eq!(stats.iter().map(|s| s.0).collect::<Vec<_>>(), vec![0, 1]);
    }
}
