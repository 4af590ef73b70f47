//! Procedural scenes of flat-coloured shapes with exact instance masks.

use rand::Rng;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::mask::{BBox, Bitmap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Disk,
    Rectangle,
    Triangle,
    Annulus,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [
        ShapeKind::Disk,
        ShapeKind::Rectangle,
        ShapeKind::Triangle,
        ShapeKind::Annulus,
    ];

    pub fn category_id(self) -> u32 {
        match self {
            ShapeKind::Disk => 1,
            ShapeKind::Rectangle => 2,
            ShapeKind::Triangle => 3,
            ShapeKind::Annulus => 4,
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name.trim() {
            "disk" => Ok(ShapeKind::Disk),
            "rectangle" => Ok(ShapeKind::Rectangle),
            "triangle" => Ok(ShapeKind::Triangle),
            "annulus" => Ok(ShapeKind::Annulus),
            other => Err(Error::Config(format!("unknown shape '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Disk => "disk",
            ShapeKind::Rectangle => "rectangle",
            ShapeKind::Triangle => "triangle",
            ShapeKind::Annulus => "annulus",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub width: usize,
    pub height: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    pub shapes: Vec<ShapeKind>,
    /// Range of the shape's nominal maximal dimension in pixels, sampled log-uniformly.
    pub min_size: f64,
    pub max_size: f64,
    /// Amplitude of uniform per-pixel noise.
    pub noise: f32,
    /// Minimum L1 colour distance between a shape and the background under it.
    pub min_contrast: f32,
    /// Later shapes may cover earlier ones; masks keep visible pixels only.
    pub occlusion: bool,
    /// Without occlusion, shapes keep at least this many pixels apart.
    pub min_gap: usize,
    pub max_attempts: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            width: 160,
            height: 160,
            min_shapes: 1,
            max_shapes: 4,
            shapes: ShapeKind::ALL.to_vec(),
            min_size: 20.0,
            max_size: 80.0,
            noise: 0.05,
            min_contrast: 0.4,
            occlusion: false,
            min_gap: 3,
            max_attempts: 50,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("scene dimensions must be positive".into()));
        }
        if self.min_shapes > self.max_shapes {
            return Err(Error::Config("min_shapes exceeds max_shapes".into()));
        }
        if self.max_shapes > 0 && self.shapes.is_empty() {
            return Err(Error::Config("shape vocabulary is empty".into()));
        }
        if !(self.min_size >= 2.0 && self.min_size <= self.max_size) {
            return Err(Error::Config(format!(
                "invalid size range {}..{}",
                self.min_size, self.max_size
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceAnnotation {
    pub id: u64,
    pub category_id: u32,
    pub mask: Bitmap,
    pub bbox: BBox,
    pub area: usize,
}

impl InstanceAnnotation {
    /// Derives box and area from the mask; `None` if the mask is empty.
    pub fn from_mask(id: u64, category_id: u32, mask: Bitmap) -> Option<Self> {
        let bbox = mask.bbox()?;
        Some(InstanceAnnotation {
            id,
            category_id,
            area: mask.area(),
            bbox,
            mask,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub id: u64,
    pub image: Image,
    pub annotations: Vec<InstanceAnnotation>,
}

/// Geometric primitive in continuous pixel coordinates.
#[derive(Clone, Debug)]
enum Shape {
    Disk { cx: f64, cy: f64, r: f64 },
    Annulus { cx: f64, cy: f64, r: f64, inner: f64 },
    Rectangle { cx: f64, cy: f64, hw: f64, hh: f64, cos: f64, sin: f64 },
    Triangle { pts: [(f64, f64); 3] },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Disk { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
            Shape::Annulus { cx, cy, r, inner } => {
                let d = (x - cx).powi(2) + (y - cy).powi(2);
                d <= r * r && d > inner * inner
            }
            Shape::Rectangle { cx, cy, hw, hh, cos, sin } => {
                let (dx, dy) = (x - cx, y - cy);
                (dx * cos + dy * sin).abs() <= hw && (-dx * sin + dy * cos).abs() <= hh
            }
            Shape::Triangle { pts } => {
                let edge = |(ax, ay): (f64, f64), (bx, by): (f64, f64)| (bx - ax) * (y - ay) - (by - ay) * (x - ax);
                let d0 = edge(pts[0], pts[1]);
                let d1 = edge(pts[1], pts[2]);
                let d2 = edge(pts[2], pts[0]);
                (d0 >= 0.0 && d1 >= 0.0 && d2 >= 0.0) || (d0 <= 0.0 && d1 <= 0.0 && d2 <= 0.0)
            }
        }
    }

    fn random<R: Rng + ?Sized>(kind: ShapeKind, cx: f64, cy: f64, size: f64, rng: &mut R) -> Shape {
        let r = size / 2.0;
        match kind {
            ShapeKind::Disk => Shape::Disk { cx, cy, r },
            ShapeKind::Annulus => Shape::Annulus {
                cx,
                cy,
                r,
                inner: r * rng.random_range(0.35..0.6),
            },
            ShapeKind::Rectangle => {
                let theta = rng.random_range(0.0..std::f64::consts::PI);
                let aspect = rng.random_range(0.4..1.0);
                Shape::Rectangle {
                    cx,
                    cy,
                    hw: r,
                    hh: r * aspect,
                    cos: theta.cos(),
                    sin: theta.sin(),
                }
            }
            ShapeKind::Triangle => {
                let base = rng.random_range(0.0..std::f64::consts::TAU);
                let step = std::f64::consts::TAU / 3.0;
                let mut pts = [(0.0, 0.0); 3];
                for (k, p) in pts.iter_mut().enumerate() {
                    let a = base + step * k as f64 + rng.random_range(-0.35..0.35);
                    *p = (cx + r * a.cos(), cy + r * a.sin());
                }
                Shape::Triangle { pts }
            }
        }
    }

    fn rasterize(&self, width: usize, height: usize) -> Bitmap {
        Bitmap::from_fn(width, height, |x, y| self.contains(x as f64 + 0.5, y as f64 + 0.5))
    }
}

fn random_color<R: Rng + ?Sized>(rng: &mut R) -> [f32; 3] {
    [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)]
}

fn l1(a: [f32; 3], b: [f32; 3]) -> f32 {
    a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum()
}

/// True if any set pixel of `m` lies within `gap` pixels (Chebyshev) of a set pixel of `occupied`.
fn too_close(m: &Bitmap, occupied: &Bitmap, gap: usize) -> bool {
    let Some(b) = m.bbox() else { return false };
    let (w, h) = (m.width(), m.height());
    for y in b.y..b.y + b.h {
        for x in b.x..b.x + b.w {
            if !m.get(x, y) {
                continue;
            }
            for yy in y.saturating_sub(gap)..(y + gap + 1).min(h) {
                for xx in x.saturating_sub(gap)..(x + gap + 1).min(w) {
                    if occupied.get(xx, yy) {
                        return true;
                    }
                }
            }
        }
    }
    false
}

/// Renders one scene. Images are quantised to 8 bits so PNG storage is lossless.
pub fn generate_scene<R: Rng + ?Sized>(spec: &SyntheticSpec, id: u64, rng: &mut R) -> Result<Scene> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let c0 = random_color(rng);
    let c1 = random_color(rng);
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (gx, gy) = (angle.cos(), angle.sin());
    let diag = ((w * w + h * h) as f64).sqrt();
    let background = |x: usize, y: usize| -> [f32; 3] {
        let t = ((((x as f64 - w as f64 / 2.0) * gx + (y as f64 - h as f64 / 2.0) * gy) / diag) + 0.5)
            .clamp(0.0, 1.0) as f32;
        [0, 1, 2].map(|c| c0[c] * (1.0 - t) + c1[c] * t)
    };
    let mut image = Image::filled(w, h, [0.0; 3]);
    for y in 0..h {
        for x in 0..w {
            let bg = background(x, y);
            for (c, &v) in bg.iter().enumerate() {
                image.set(c, x, y, v);
            }
        }
    }

    let count = rng.random_range(spec.min_shapes..=spec.max_shapes);
    let mut masks: Vec<(ShapeKind, Bitmap)> = Vec::new();
    let mut occupied = Bitmap::new(w, h);
    for _ in 0..count {
        for _ in 0..spec.max_attempts {
            let kind = spec.shapes[rng.random_range(0..spec.shapes.len())];
            let size = (rng.random_range(spec.min_size.ln()..=spec.max_size.ln())).exp();
            let half = size / 2.0;
            if 2.0 * half + 2.0 > w.min(h) as f64 {
                continue;
            }
            let cx = rng.random_range(half + 1.0..=w as f64 - half - 1.0);
            let cy = rng.random_range(half + 1.0..=h as f64 - half - 1.0);
            let shape = Shape::random(kind, cx, cy, size, rng);
            let m = shape.rasterize(w, h);
            if m.is_empty() || (!spec.occlusion && too_close(&m, &occupied, spec.min_gap)) {
                continue;
            }
            let under = background(cx as usize, cy as usize);
            let mut color = random_color(rng);
            let mut tries = 0;
            while l1(color, under) < spec.min_contrast && tries < 100 {
                color = random_color(rng);
                tries += 1;
            }
            for y in 0..h {
                for x in 0..w {
                    if m.get(x, y) {
                        for (c, &v) in color.iter().enumerate() {
                            image.set(c, x, y, v);
                        }
                        occupied.set(x, y, true);
                    }
                }
            }
            for (_, earlier) in &mut masks {
                for y in 0..h {
                    for x in 0..w {
                        if m.get(x, y) {
                            earlier.set(x, y, false);
                        }
                    }
                }
            }
            masks.push((kind, m));
            break;
        }
    }

    for v in image.data_mut() {
        *v += rng.random_range(-spec.noise..=spec.noise);
    }
    image.quantize();

    let annotations = masks
        .into_iter()
        .filter_map(|(kind, m)| InstanceAnnotation::from_mask(0, kind.category_id(), m))
        .enumerate()
        .map(|(i, mut a)| {
            a.id = i as u64 + 1;
            a
        })
        .collect();
    Ok(Scene { id, image, annotations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn zero_shapes_gives_empty_scene() {
        let spec = SyntheticSpec {
            min_shapes: 0,
            max_shapes: 0,
            ..Default::default()
        };
        let s = generate_scene(&spec, 0, &mut rand_chacha::ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!(s.annotations.is_empty());
    }

    #[test]
    fn disk_area_within_rasterisation_bound() {
        for r in [3.0, 7.5, 20.0, 33.3] {
            let m = Shape::Disk { cx: 50.2, cy: 49.7, r }.rasterize(100, 100);
            let exact = std::f64::consts::PI * r * r;
            assert!((exact - m.area() as f64).abs() <= 2.0 * std::f64::consts::PI * r, "r={r}");
        }
    }

    #[test]
    fn occluded_masks_are_disjoint() {
        let spec = SyntheticSpec {
            occlusion: true,
            min_shapes: 4,
            max_shapes: 4,
            ..Default::default()
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for id in 0..10 {
            let s = generate_scene(&spec, id, &mut rng).unwrap();
            for (i, a) in s.annotations.iter().enumerate() {
                for b in &s.annotations[i + 1..] {
                    assert_eq!(a.mask.intersection_area(&b.mask), 0);
                }
            }
        }
    }

    #[test]
    fn deterministic() {
        let spec = SyntheticSpec::default();
        let a = generate_scene(&spec, 1, &mut rand_chacha::ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = generate_scene(&spec, 1, &mut rand_chacha::ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }
}
