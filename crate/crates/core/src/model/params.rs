use rand::Rng;

use crate::error::Result;
use crate::model::config::{Geometry, ModelConfig, TrunkLayer, KERNEL};
use crate::nn::{LayerGrads, LayerParams};
use crate::scalar::Scalar;

/// Segmentation classifier after the 1x1 convolution.
#[derive(Clone, Debug, PartialEq)]
pub enum SegClassifier<T> {
    /// Two linear maps with no nonlinearity: features -> rank -> mask pixels.
    LowRank {
        reduce: LayerParams<T>,
        expand: LayerParams<T>,
    },
    /// One linear map features -> mask pixels.
    Full(LayerParams<T>),
}

/// All trainable parameters plus the architecture they instantiate.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    config: ModelConfig,
    geometry: Geometry,
    pub trunk: Vec<LayerParams<T>>,
    pub seg_conv: LayerParams<T>,
    pub seg_classifier: SegClassifier<T>,
    pub score_fc1: LayerParams<T>,
    pub score_fc2: LayerParams<T>,
    pub score_out: LayerParams<T>,
}

/// Which head a layer belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Part {
    Trunk,
    Segmentation,
    Scoring,
}

/// Gradients laid out like [`ModelParams::layers`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads<T> {
    pub layers: Vec<LayerGrads<T>>,
}

/// Shapes of every layer, in canonical order, with names used in weight files.
fn layer_shapes(config: &ModelConfig, geometry: &Geometry) -> Vec<(String, Part, Vec<usize>)> {
    let mut out = Vec::new();
    let mut cin = config.input_channels;
    for (i, layer) in config.trunk.iter().enumerate() {
        if let TrunkLayer::Conv(cout) = *layer {
            out.push((format!("trunk.{i}"), Part::Trunk, vec![cout, cin, KERNEL, KERNEL]));
            cin = cout;
        }
    }
    let c = geometry.trunk_channels;
    let seg_dim = config.seg_feature_dim();
    let mask = config.mask_out * config.mask_out;
    out.push(("seg.conv".into(), Part::Segmentation, vec![config.seg_channels, c, 1, 1]));
    if config.full_rank {
        out.push(("seg.full".into(), Part::Segmentation, vec![mask, seg_dim]));
    } else {
        out.push(("seg.reduce".into(), Part::Segmentation, vec![config.rank, seg_dim]));
        out.push(("seg.expand".into(), Part::Segmentation, vec![mask, config.rank]));
    }
    let pooled = geometry.feature_size / 2;
    let (h1, h2) = config.score_hidden;
    out.push(("score.fc1".into(), Part::Scoring, vec![h1, c * pooled * pooled]));
    out.push(("score.fc2".into(), Part::Scoring, vec![h2, h1]));
    out.push(("score.out".into(), Part::Scoring, vec![1, h2]));
    out
}

impl<T: Scalar> ModelParams<T> {
    /// Random initialisation: weights uniform in `+-sqrt(6/fan_in)`, zero biases.
    pub fn build<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        Self::from_factory(config, |shape| LayerParams::he_uniform(shape, rng))
    }

    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        Self::from_factory(config, |shape| LayerParams::zeros(shape, shape[0]))
    }

    fn from_factory(
        config: &ModelConfig,
        mut make: impl FnMut(&[usize]) -> LayerParams<T>,
    ) -> Result<Self> {
        let geometry = config.geometry()?;
        let mut layers: Vec<LayerParams<T>> = layer_shapes(config, &geometry)
            .iter()
            .map(|(_, _, shape)| make(shape))
            .collect();
        let score_out = layers.pop().expect("score layers");
        let score_fc2 = layers.pop().expect("score layers");
        let score_fc1 = layers.pop().expect("score layers");
        let seg_classifier = if config.full_rank {
            SegClassifier::Full(layers.pop().expect("seg layers"))
        } else {
            let expand = layers.pop().expect("seg layers");
            let reduce = layers.pop().expect("seg layers");
            SegClassifier::LowRank { reduce, expand }
        };
        let seg_conv = layers.pop().expect("seg layers");
        Ok(ModelParams {
            config: config.clone(),
            geometry,
            trunk: layers,
            seg_conv,
            seg_classifier,
            score_fc1,
            score_fc2,
            score_out,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    /// Updates normalisation constants; architecture is unaffected.
    pub fn set_input_norm(&mut self, mean: [f32; 3], std: f32) {
        self.config.input_mean = mean;
        self.config.input_std = std;
    }

    /// `(name, part)` for every layer in canonical order.
    pub fn layer_names(&self) -> Vec<(String, Part)> {
        layer_shapes(&self.config, &self.geometry)
            .into_iter()
            .map(|(n, p, _)| (n, p))
            .collect()
    }

    pub fn layers(&self) -> Vec<&LayerParams<T>> {
        let mut v: Vec<&LayerParams<T>> = self.trunk.iter().collect();
        v.push(&self.seg_conv);
        match &self.seg_classifier {
            SegClassifier::LowRank { reduce, expand } => {
                v.push(reduce);
                v.push(expand);
            }
            SegClassifier::Full(full) => v.push(full),
        }
        v.extend([&self.score_fc1, &self.score_fc2, &self.score_out]);
        v
    }

    pub fn layers_mut(&mut self) -> Vec<&mut LayerParams<T>> {
        let mut v: Vec<&mut LayerParams<T>> = self.trunk.iter_mut().collect();
        v.push(&mut self.seg_conv);
        match &mut self.seg_classifier {
            SegClassifier::LowRank { reduce, expand } => {
                v.push(reduce);
                v.push(expand);
            }
            SegClassifier::Full(full) => v.push(full),
        }
        v.extend([&mut self.score_fc1, &mut self.score_fc2, &mut self.score_out]);
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.layers().iter().map(|l| l.parameter_count()).sum()
    }

    pub fn zero_grads(&self) -> ModelGrads<T> {
        ModelGrads {
            layers: self.layers().iter().map(|l| l.grads_zeros()).collect(),
        }
    }

    /// Weights then bias of every layer, concatenated.
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in self.layers() {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(l.bias.data());
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten); momentum buffers are left untouched.
    pub fn set_flat(&mut self, values: &[T]) {
        assert_eq!(values.len(), self.parameter_count(), "flat parameter length");
        let mut off = 0;
        for l in self.layers_mut() {
            let n = l.weight.len();
            l.weight.data_mut().copy_from_slice(&values[off..off + n]);
            off += n;
            let n = l.bias.len();
            l.bias.data_mut().copy_from_slice(&values[off..off + n]);
            off += n;
        }
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let cast_seg = match &self.seg_classifier {
            SegClassifier::LowRank { reduce, expand } => SegClassifier::LowRank {
                reduce: reduce.cast(),
                expand: expand.cast(),
            },
            SegClassifier::Full(f) => SegClassifier::Full(f.cast()),
        };
        ModelParams {
            config: self.config.clone(),
            geometry: self.geometry,
            trunk: self.trunk.iter().map(|l| l.cast()).collect(),
            seg_conv: self.seg_conv.cast(),
            seg_classifier: cast_seg,
            score_fc1: self.score_fc1.cast(),
            score_fc2: self.score_fc2.cast(),
            score_out: self.score_out.cast(),
        }
    }

    /// Every weight and bias is finite.
    pub fn ensure_finite(&self) -> Result<()> {
        for (l, (name, _)) in self.layers().into_iter().zip(self.layer_names()) {
            l.weight.ensure_finite(&format!("{name}.weight"))?;
            l.bias.ensure_finite(&format!("{name}.bias"))?;
        }
        Ok(())
    }
}

impl<T: Scalar> ModelGrads<T> {
    pub fn accumulate(&mut self, other: &ModelGrads<T>) -> Result<()> {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.accumulate(b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        self.layers.iter_mut().for_each(|l| l.scale(factor));
    }

    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(l.bias.data());
        }
        out
    }
}

/// Builds a freshly initialised model.
pub fn build_model<T: Scalar, R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<ModelParams<T>> {
    ModelParams::build(config, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn same_seed_same_params() {
        let c = ModelConfig::desk();
        let a: ModelParams<f32> = build_model(&c, &mut stream(5, "init", 0)).unwrap();
        let b: ModelParams<f32> = build_model(&c, &mut stream(5, "init", 0)).unwrap();
        assert_eq!(a, b);
        let d: ModelParams<f32> = build_model(&c, &mut stream(6, "init", 0)).unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn parameter_count_matches_config() {
        for full_rank in [false, true] {
            let c = ModelConfig {
                full_rank,
                ..ModelConfig::desk()
            };
            let p: ModelParams<f32> = ModelParams::zeros(&c).unwrap();
            assert_eq!(p.parameter_count(), c.parameter_count().unwrap());
            assert_eq!(p.layers().len(), p.layer_names().len());
        }
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let p: ModelParams<f64> = build_model(&ModelConfig::desk(), &mut stream(1, "init", 0)).unwrap();
        for l in p.layers() {
            let bound = (6.0 / l.fan_in() as f64).sqrt();
            assert!(l.weight.data().iter().all(|v| v.abs() <= bound));
            assert!(l.bias.data().iter().all(|&v| v == 0.0));
            assert!(l.weight_momentum.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn flat_round_trip() {
        let mut p: ModelParams<f64> = build_model(&ModelConfig::desk(), &mut stream(2, "init", 0)).unwrap();
        let flat = p.flatten();
        let mut q: ModelParams<f64> = ModelParams::zeros(p.config()).unwrap();
        q.set_flat(&flat);
        assert_eq!(q.flatten(), flat);
        p.set_flat(&vec![0.0; flat.len()]);
        assert!(p.flatten().iter().all(|&v| v == 0.0));
    }
}
