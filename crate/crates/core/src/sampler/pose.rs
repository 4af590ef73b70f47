//! Patch poses, canonical positives, jitter and negative mining.

use rand::Rng;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::mask::{BBox, Bitmap};
use crate::model::{Geometry, TrainingTriplet};
use crate::sampler::synth::{InstanceAnnotation, Scene};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Where a patch is cut from an image.
///
/// `(cx, cy)` is the patch centre in continuous image coordinates and `scale` is patch
/// pixels per image pixel. `flip` mirrors the patch horizontally.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub cx: f64,
    pub cy: f64,
    pub scale: f64,
    pub flip: bool,
}

/// Distance of a pose from an annotation's canonical pose.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Deviation {
    /// `max(|dx|, |dy|)` measured in canonical-patch pixels.
    pub translation: f64,
    /// `|log2(scale / canonical_scale)|`.
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    /// Side of the patch the mask describes.
    pub patch_size: usize,
    /// Side of the model input window, `patch_size` plus the trunk context on both sides.
    pub input_size: usize,
    pub canonical_max_dim: usize,
    pub jitter_translate: f64,
    pub jitter_scale_exp: f64,
    pub hflip: bool,
    pub negative_translate: f64,
    pub negative_scale_exp: f64,
    /// log2 range of patch scales drawn for scene-wide negatives.
    pub negative_log2_scale: (f64, f64),
    /// Fraction of negative proposals drawn near an annotation rather than anywhere.
    pub negative_near_fraction: f64,
    pub max_attempts: usize,
    /// Padding colour and normalisation mean.
    pub mean: [f32; 3],
    pub std: f32,
    pub seed: u64,
}

impl SamplerConfig {
    /// Defaults for a model geometry; the canonical size scales with the patch.
    pub fn for_geometry(g: &Geometry) -> Self {
        SamplerConfig {
            patch_size: g.patch_size,
            input_size: g.input_size,
            canonical_max_dim: ((g.patch_size * 128) as f64 / 224.0).round() as usize,
            jitter_translate: 16.0,
            jitter_scale_exp: 0.25,
            hflip: true,
            negative_translate: 32.0,
            negative_scale_exp: 1.0,
            negative_log2_scale: (-2.75, 1.25),
            negative_near_fraction: 0.5,
            max_attempts: 200,
            mean: [0.5; 3],
            std: 0.25,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.negative_translate <= self.jitter_translate || self.negative_scale_exp <= self.jitter_scale_exp {
            return Err(Error::Config(
                "negative thresholds must exceed the jitter tolerances".into(),
            ));
        }
        if self.input_size < self.patch_size || (self.input_size - self.patch_size) % 2 != 0 {
            return Err(Error::Config("input window must pad the patch evenly".into()));
        }
        if self.canonical_max_dim == 0 || self.canonical_max_dim > self.patch_size {
            return Err(Error::Config("canonical size must fit in the patch".into()));
        }
        if self.std <= 0.0 {
            return Err(Error::Config("normalisation std must be positive".into()));
        }
        Ok(())
    }

    pub fn is_positive(&self, d: Deviation) -> bool {
        d.translation <= self.jitter_translate + 1e-9 && d.scale <= self.jitter_scale_exp + 1e-9
    }

    pub fn is_negative(&self, d: Deviation) -> bool {
        d.translation >= self.negative_translate || d.scale >= self.negative_scale_exp
    }
}

/// Pose centring a box with its maximal side at `canonical_max_dim` patch pixels.
pub fn canonical_pose(bbox: &BBox, canonical_max_dim: usize) -> Option<Pose> {
    if bbox.max_dim() == 0 {
        return None;
    }
    let (cx, cy) = bbox.center();
    Some(Pose {
        cx,
        cy,
        scale: canonical_max_dim as f64 / bbox.max_dim() as f64,
        flip: false,
    })
}

pub fn deviation(pose: &Pose, canonical: &Pose) -> Deviation {
    let dx = (pose.cx - canonical.cx).abs() * canonical.scale;
    let dy = (pose.cy - canonical.cy).abs() * canonical.scale;
    Deviation {
        translation: dx.max(dy),
        scale: (pose.scale / canonical.scale).log2().abs(),
    }
}

/// Image coordinate sampled by patch column/row `u` of a window of side `size`.
#[inline]
fn source(center: f64, u: usize, size: usize, scale: f64) -> f64 {
    center + (u as f64 + 0.5 - size as f64 / 2.0) / scale
}

/// Bilinear crop of a `size x size` window; outside taps read `pad`.
pub fn extract_patch(image: &Image, pose: &Pose, size: usize, pad: [f32; 3]) -> Image {
    let mut out = Image::filled(size, size, [0.0; 3]);
    for v in 0..size {
        let y = source(pose.cy, v, size, pose.scale);
        for u in 0..size {
            let su = if pose.flip { size - 1 - u } else { u };
            let x = source(pose.cx, su, size, pose.scale);
            for (c, &p) in pad.iter().enumerate() {
                out.set(c, u, v, image.sample(c, x, y, p));
            }
        }
    }
    out
}

/// Nearest-neighbour crop of a mask; outside the image reads as background.
pub fn extract_mask(mask: &Bitmap, pose: &Pose, size: usize) -> Bitmap {
    let (w, h) = (mask.width() as f64, mask.height() as f64);
    Bitmap::from_fn(size, size, |u, v| {
        let su = if pose.flip { size - 1 - u } else { u };
        let x = source(pose.cx, su, size, pose.scale).floor();
        let y = source(pose.cy, v, size, pose.scale).floor();
        x >= 0.0 && y >= 0.0 && x < w && y < h && mask.get(x as usize, y as usize)
    })
}

/// A training triplet plus the pose it was cut at.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    pub triplet: TrainingTriplet<T>,
    pub pose: Pose,
}

/// Normalised model input for a pose.
pub fn patch_tensor<T: Scalar>(image: &Image, pose: &Pose, config: &SamplerConfig) -> Tensor<T> {
    let mut t = extract_patch(image, pose, config.input_size, config.mean).to_tensor::<T>();
    normalize(&mut t, config.mean, config.std);
    t
}

/// `(x - mean[c]) / std` in place on a `3 x H x W` tensor.
pub fn normalize<T: Scalar>(t: &mut Tensor<T>, mean: [f32; 3], std: f32) {
    let plane = t.len() / 3;
    let inv = T::one() / T::lit(f64::from(std));
    for (c, chunk) in t.data_mut().chunks_mut(plane).enumerate() {
        let m = T::lit(f64::from(mean[c]));
        chunk.iter_mut().for_each(|v| *v = (*v - m) * inv);
    }
}

fn positive_at<T: Scalar>(
    scene: &Scene,
    ann: &InstanceAnnotation,
    pose: Pose,
    config: &SamplerConfig,
) -> Option<Sample<T>> {
    let m = extract_mask(&ann.mask, &pose, config.patch_size);
    if m.is_empty() {
        return None;
    }
    let mask = m.bits().iter().map(|&b| if b { 1 } else { -1 }).collect();
    Some(Sample {
        triplet: TrainingTriplet::positive(patch_tensor(&scene.image, &pose, config), mask),
        pose,
    })
}

/// Patch with the annotation centred at canonical size; `None` for an empty annotation.
pub fn canonical_positive<T: Scalar>(
    scene: &Scene,
    ann: &InstanceAnnotation,
    config: &SamplerConfig,
) -> Option<Sample<T>> {
    positive_at(scene, ann, canonical_pose(&ann.bbox, config.canonical_max_dim)?, config)
}

/// Randomly perturbed canonical pose within the jitter tolerances.
pub fn jitter_pose<R: Rng + ?Sized>(canonical: &Pose, config: &SamplerConfig, rng: &mut R) -> Pose {
    let t = config.jitter_translate;
    let dx = if t > 0.0 { rng.random_range(-t..=t) } else { 0.0 };
    let dy = if t > 0.0 { rng.random_range(-t..=t) } else { 0.0 };
    let e = config.jitter_scale_exp;
    let u = if e > 0.0 { rng.random_range(-e..=e) } else { 0.0 };
    let flip = config.hflip && rng.random_bool(0.5);
    Pose {
        cx: canonical.cx + dx / canonical.scale,
        cy: canonical.cy + dy / canonical.scale,
        scale: canonical.scale * u.exp2(),
        flip,
    }
}

/// Jittered positive for one annotation; `None` for an empty annotation.
pub fn jitter<T: Scalar, R: Rng + ?Sized>(
    scene: &Scene,
    ann: &InstanceAnnotation,
    config: &SamplerConfig,
    rng: &mut R,
) -> Option<Sample<T>> {
    let canonical = canonical_pose(&ann.bbox, config.canonical_max_dim)?;
    let pose = jitter_pose(&canonical, config, rng);
    positive_at(scene, ann, pose, config)
}

/// Pose far from every annotation's canonical pose; `None` after `max_attempts` misses.
pub fn negative_pose<R: Rng + ?Sized>(scene: &Scene, config: &SamplerConfig, rng: &mut R) -> Option<Pose> {
    let canon: Vec<Pose> = scene
        .annotations
        .iter()
        .filter_map(|a| canonical_pose(&a.bbox, config.canonical_max_dim))
        .collect();
    let (lo, hi) = config.negative_log2_scale;
    let (w, h) = (scene.image.width() as f64, scene.image.height() as f64);
    for _ in 0..config.max_attempts {
        let pose = if !canon.is_empty() && rng.random_bool(config.negative_near_fraction) {
            let c = canon[rng.random_range(0..canon.len())];
            let t = 3.0 * config.negative_translate;
            let s = 2.0 * config.negative_scale_exp;
            Pose {
                cx: c.cx + rng.random_range(-t..=t) / c.scale,
                cy: c.cy + rng.random_range(-t..=t) / c.scale,
                scale: c.scale * rng.random_range(-s..=s).exp2(),
                flip: false,
            }
        } else {
            Pose {
                cx: rng.random_range(0.0..w),
                cy: rng.random_range(0.0..h),
                scale: rng.random_range(lo..=hi).exp2(),
                flip: false,
            }
        };
        let pose = Pose {
            flip: config.hflip && rng.random_bool(0.5),
            ..pose
        };
        if canon.iter().all(|c| config.is_negative(deviation(&pose, c))) {
            return Some(pose);
        }
    }
    None
}

pub fn sample_negative<T: Scalar, R: Rng + ?Sized>(
    scene: &Scene,
    config: &SamplerConfig,
    rng: &mut R,
) -> Option<Sample<T>> {
    let pose = negative_pose(scene, config, rng)?;
    Some(Sample {
        triplet: TrainingTriplet::negative(patch_tensor(&scene.image, &pose, config)),
        pose,
    })
}
