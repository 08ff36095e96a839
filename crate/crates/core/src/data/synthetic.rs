//! Synthetic labeled feature sequences for experiments and tests.
//!
//! Each class owns a spectral tilt across the feature dimension (optionally
//! jittered per sequence); every
//! sequence adds time-varying "content" drawn from one class-independent
//! distribution (a few smooth random modulations of low-order shapes) and
//! a little white noise.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{AcousticFeatureSequence, AttributeLabel, Category};
use crate::training::TrainingSet;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub q_dim: usize,
    pub n_frames: usize,
    /// Difference in tilt slope between neighbouring classes.
    pub tilt_step: f64,
    /// Standard deviation of a per-sequence random offset to the class slope.
    pub tilt_jitter: f64,
    /// Amplitude of the shared modulations.
    pub content_scale: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 4,
            per_class: 16,
            q_dim: 8,
            n_frames: 64,
            tilt_step: 1.0,
            tilt_jitter: 0.0,
            content_scale: 1.0,
            noise_std: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn categories(&self) -> Vec<Category> {
        vec![Category::new("speaker", self.classes)]
    }

    /// Slope of class `k`'s tilt.
    pub fn slope(&self, k: usize) -> f64 {
        (k as f64 - (self.classes as f64 - 1.0) / 2.0) * self.tilt_step
    }

    fn tilt(&self, slope: f64, q: usize) -> f64 {
        let pos = if self.q_dim > 1 {
            2.0 * q as f64 / (self.q_dim - 1) as f64 - 1.0
        } else {
            0.0
        };
        slope * pos
    }

    /// One sequence of class `k`.
    pub fn sequence<R: Rng + ?Sized>(
        &self,
        k: usize,
        rng: &mut R,
    ) -> Result<AcousticFeatureSequence> {
        let (q_dim, n) = (self.q_dim, self.n_frames);
        let jitter: f64 = Distribution::<f64>::sample(&StandardNormal, rng);
        let slope = self.slope(k) + self.tilt_jitter * jitter;
        let mut values = vec![0.0; q_dim * n];
        for (q, row) in values.chunks_mut(n).enumerate() {
            row.fill(self.tilt(slope, q));
        }
        // Modulations: cosine shapes over q with random sinusoidal trajectories in time.
        for shape in 0..3 {
            let amp: f64 = self.content_scale * Distribution::<f64>::sample(&StandardNormal, rng);
            let freq = rng.gen_range(0.02..0.15);
            let phase = rng.gen_range(0.0..2.0 * PI);
            for (q, row) in values.chunks_mut(n).enumerate() {
                let basis = (PI * (shape + 1) as f64 * (q as f64 + 0.5) / q_dim as f64).cos();
                for (t, v) in row.iter_mut().enumerate() {
                    *v += amp * basis * (2.0 * PI * freq * t as f64 + phase).sin();
                }
            }
        }
        for v in values.iter_mut() {
            let e: f64 = StandardNormal.sample(rng);
            *v += self.noise_std * e;
        }
        AcousticFeatureSequence::new(q_dim, n, values)
    }

    pub fn generate(&self) -> Result<TrainingSet> {
        if self.classes < 2 || self.per_class == 0 {
            return Err(Error::Config(
                "synthetic corpus needs two classes with one sequence each".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let cats = self.categories();
        let mut items = Vec::with_capacity(self.classes * self.per_class);
        for _ in 0..self.per_class {
            for k in 0..self.classes {
                items.push((
                    self.sequence(k, &mut rng)?,
                    AttributeLabel::new(&cats, &[k])?,
                ));
            }
        }
        Ok(TrainingSet { items })
    }
}
