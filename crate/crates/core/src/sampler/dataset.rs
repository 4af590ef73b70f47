//! Balanced batch assembly over a set of scenes.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{Branch, TrainingTriplet};
use crate::sampler::pose::{jitter, sample_negative, SamplerConfig};
use crate::sampler::synth::Scene;
use crate::scalar::Scalar;

const RETRIES: usize = 64;

#[derive(Clone, Debug)]
pub struct Dataset {
    scenes: Vec<Scene>,
    config: SamplerConfig,
    /// `(scene, annotation)` pairs usable as positives.
    positives: Vec<(usize, usize)>,
}

/// Mean colour over every pixel of every scene.
pub fn mean_color(scenes: &[Scene]) -> [f32; 3] {
    let mut sum = [0.0f64; 3];
    let mut n = 0usize;
    for s in scenes {
        let px = s.image.width() * s.image.height();
        let m = s.image.mean_color();
        for c in 0..3 {
            sum[c] += f64::from(m[c]) * px as f64;
        }
        n += px;
    }
    if n == 0 {
        return [0.5; 3];
    }
    sum.map(|v| (v / n as f64) as f32)
}

impl Dataset {
    pub fn new(scenes: Vec<Scene>, config: SamplerConfig) -> Result<Self> {
        config.validate()?;
        if scenes.is_empty() {
            return Err(Error::Data("dataset has no scenes".into()));
        }
        let positives = scenes
            .iter()
            .enumerate()
            .flat_map(|(i, s)| {
                s.annotations
                    .iter()
                    .enumerate()
                    .filter(|(_, a)| a.area > 0)
                    .map(move |(j, _)| (i, j))
            })
            .collect();
        Ok(Dataset {
            scenes,
            config,
            positives,
        })
    }

    pub fn scenes(&self) -> &[Scene] {
        &self.scenes
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn positive_count(&self) -> usize {
        self.positives.len()
    }

    fn positive<T: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> Result<TrainingTriplet<T>> {
        if self.positives.is_empty() {
            return Err(Error::Data("dataset has no annotated instances to use as positives".into()));
        }
        for _ in 0..RETRIES {
            let (i, j) = self.positives[rng.random_range(0..self.positives.len())];
            let scene = &self.scenes[i];
            if let Some(s) = jitter(scene, &scene.annotations[j], &self.config, rng) {
                return Ok(s.triplet);
            }
        }
        Err(Error::Data("could not cut a non-empty positive mask".into()))
    }

    fn negative<T: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> Result<TrainingTriplet<T>> {
        for _ in 0..RETRIES {
            let scene = &self.scenes[rng.random_range(0..self.scenes.len())];
            if let Some(s) = sample_negative(scene, &self.config, rng) {
                return Ok(s.triplet);
            }
        }
        Err(Error::Data("no negative pose found; scenes are too crowded".into()))
    }

    /// Segmentation batches hold positives only; scoring batches hold
    /// `floor(n/2)` positives and `ceil(n/2)` negatives in shuffled order.
    pub fn make_batch<T: Scalar, R: Rng + ?Sized>(
        &self,
        branch: Branch,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Vec<TrainingTriplet<T>>> {
        let n_pos = match branch {
            Branch::Segmentation => batch_size,
            Branch::Scoring => batch_size / 2,
        };
        if n_pos > 0 && self.positives.is_empty() {
            return Err(Error::Data(format!(
                "{} batch needs {n_pos} positives but the dataset has no annotated instances",
                branch.name()
            )));
        }
        let mut batch = Vec::with_capacity(batch_size);
        for _ in 0..n_pos {
            batch.push(self.positive(rng)?);
        }
        for _ in n_pos..batch_size {
            batch.push(self.negative(rng)?);
        }
        batch.shuffle(rng);
        Ok(batch)
    }
}
