//! A multinomial logistic-regression classifier on time-averaged features,
//! trained independently of the generative model to judge its outputs.

use crate::error::{Error, Result};
use crate::model::AcousticFeatureSequence;

#[derive(Clone, Debug)]
pub struct LinearProbe {
    classes: usize,
    dim: usize,
    /// `[class][dim + 1]`, last column is the bias.
    weights: Vec<Vec<f64>>,
}

fn summary(x: &AcousticFeatureSequence) -> Vec<f64> {
    (0..x.q_dim())
        .map(|q| (0..x.n_frames()).map(|n| x.get(q, n)).sum::<f64>() / x.n_frames() as f64)
        .collect()
}

fn softmax(logits: &mut [f64]) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - m).exp();
        s += *l;
    }
    logits.iter_mut().for_each(|l| *l /= s);
}

impl LinearProbe {
    /// Full-batch gradient descent on the mean cross-entropy with a small
    /// L2 penalty.
    pub fn fit(
        data: &[(&AcousticFeatureSequence, usize)],
        classes: usize,
        iterations: usize,
    ) -> Result<Self> {
        let first = data
            .first()
            .ok_or_else(|| Error::Contract("empty probe training set".into()))?;
        let dim = first.0.q_dim();
        if classes < 2 || data.iter().any(|(x, k)| x.q_dim() != dim || *k >= classes) {
            return Err(Error::Contract("inconsistent probe training data".into()));
        }
        let feats: Vec<Vec<f64>> = data.iter().map(|(x, _)| summary(x)).collect();
        let mut probe = LinearProbe {
            classes,
            dim,
            weights: vec![vec![0.0; dim + 1]; classes],
        };
        let (lr, l2) = (0.5, 1e-4);
        for _ in 0..iterations {
            let mut grad = vec![vec![0.0; dim + 1]; classes];
            for (f, (_, k)) in feats.iter().zip(data) {
                let p = probe.probs_of(f);
                for c in 0..classes {
                    let d = p[c] - if c == *k { 1.0 } else { 0.0 };
                    for (g, v) in grad[c].iter_mut().zip(f.iter().chain([&1.0])) {
                        *g += d * v;
                    }
                }
            }
            for (w, g) in probe.weights.iter_mut().zip(&grad) {
                for (wi, gi) in w.iter_mut().zip(g) {
                    *wi -= lr * (gi / data.len() as f64 + l2 * *wi);
                }
            }
        }
        Ok(probe)
    }

    fn probs_of(&self, f: &[f64]) -> Vec<f64> {
        let mut logits: Vec<f64> = self
            .weights
            .iter()
            .map(|w| w[..self.dim].iter().zip(f).map(|(a, b)| a * b).sum::<f64>() + w[self.dim])
            .collect();
        softmax(&mut logits);
        logits
    }

    pub fn probabilities(&self, x: &AcousticFeatureSequence) -> Vec<f64> {
        self.probs_of(&summary(x))
    }

    pub fn predict(&self, x: &AcousticFeatureSequence) -> usize {
        let p = self.probabilities(x);
        (0..self.classes)
            .max_by(|&a, &b| p[a].total_cmp(&p[b]))
            .unwrap_or(0)
    }
}
