//! Binary masks, run-length encoding and boxes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major binary mask.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Bitmap {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl std::fmt::Debug for Bitmap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Bitmap({}x{}, area {})", self.width, self.height, self.area())
    }
}

impl Bitmap {
    pub fn new(width: usize, height: usize) -> Self {
        Bitmap {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Bitmap { width, height, bits }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::Usage(format!(
                "{width}x{height} bitmap needs {} bits, got {}",
                width * height,
                bits.len()
            )));
        }
        Ok(Bitmap { width, height, bits })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Tight enclosing box, `None` for an empty mask.
    pub fn bbox(&self) -> Option<BBox> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..self.height {
            let row = &self.bits[y * self.width..(y + 1) * self.width];
            let Some(first) = row.iter().position(|&b| b) else { continue };
            let last = row.iter().rposition(|&b| b).expect("row has a set bit");
            x0 = x0.min(first);
            x1 = x1.max(last);
            y0 = y0.min(y);
            y1 = y;
        }
        (x0 != usize::MAX).then(|| BBox {
            x: x0,
            y: y0,
            w: x1 - x0 + 1,
            h: y1 - y0 + 1,
        })
    }

    /// Pixels set in both masks.
    pub fn intersection_area(&self, other: &Bitmap) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| **a && **b).count()
    }

    pub fn flip_horizontal(&self) -> Bitmap {
        Bitmap::from_fn(self.width, self.height, |x, y| self.get(self.width - 1 - x, y))
    }

    pub fn to_rle(&self) -> Rle {
        Rle::encode(self)
    }
}

/// Run lengths of a row-major binary mask, alternating zeros and ones and starting
/// with a (possibly empty) run of zeros.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rle {
    pub width: usize,
    pub height: usize,
    pub counts: Vec<u32>,
}

impl Rle {
    pub fn encode(mask: &Bitmap) -> Rle {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for &b in &mask.bits {
            if b != current {
                counts.push(run);
                run = 0;
                current = b;
            }
            run += 1;
        }
        counts.push(run);
        Rle {
            width: mask.width,
            height: mask.height,
            counts,
        }
    }

    /// Builds from raw counts, checking they cover exactly `width * height` pixels.
    pub fn from_counts(width: usize, height: usize, counts: Vec<u32>) -> Result<Rle> {
        let total: u64 = counts.iter().map(|&c| u64::from(c)).sum();
        if total != (width * height) as u64 {
            return Err(Error::Data(format!(
                "run lengths cover {total} pixels, mask has {}",
                width * height
            )));
        }
        Ok(Rle { width, height, counts })
    }

    pub fn decode(&self) -> Bitmap {
        let mut bits = Vec::with_capacity(self.width * self.height);
        let mut value = false;
        for &c in &self.counts {
            bits.extend(std::iter::repeat_n(value, c as usize));
            value = !value;
        }
        bits.resize(self.width * self.height, false);
        Bitmap {
            width: self.width,
            height: self.height,
            bits,
        }
    }

    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| u64::from(c)).sum()
    }

    /// Half-open `[start, end)` pixel ranges of the set runs.
    pub fn runs(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        let mut pos = 0u64;
        self.counts.iter().enumerate().filter_map(move |(i, &c)| {
            let start = pos;
            pos += u64::from(c);
            (i % 2 == 1 && c > 0).then_some((start, pos))
        })
    }

    /// Overlap of two same-sized masks, computed by merging runs.
    pub fn intersection_area(&self, other: &Rle) -> u64 {
        let a: Vec<(u64, u64)> = self.runs().collect();
        let b: Vec<(u64, u64)> = other.runs().collect();
        let (mut i, mut j, mut total) = (0, 0, 0);
        while i < a.len() && j < b.len() {
            let lo = a[i].0.max(b[j].0);
            let hi = a[i].1.min(b[j].1);
            if hi > lo {
                total += hi - lo;
            }
            if a[i].1 < b[j].1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        total
    }

    pub fn bbox(&self) -> Option<BBox> {
        let w = self.width as u64;
        let (mut x0, mut y0, mut x1, mut y1) = (u64::MAX, u64::MAX, 0, 0);
        for (s, e) in self.runs() {
            let (ys, ye) = (s / w, (e - 1) / w);
            y0 = y0.min(ys);
            y1 = y1.max(ye);
            if ys == ye {
                x0 = x0.min(s % w);
                x1 = x1.max((e - 1) % w);
            } else {
                // a run wrapping past a row end touches both the last and first column
                x0 = 0;
                x1 = w - 1;
            }
        }
        (x0 != u64::MAX).then(|| BBox {
            x: x0 as usize,
            y: y0 as usize,
            w: (x1 - x0 + 1) as usize,
            h: (y1 - y0 + 1) as usize,
        })
    }
}

/// Axis-aligned integer box `(x, y, w, h)`, x along columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "[usize; 4]", from = "[usize; 4]")]
pub struct BBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl From<BBox> for [usize; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl From<[usize; 4]> for BBox {
    fn from(a: [usize; 4]) -> Self {
        BBox {
            x: a[0],
            y: a[1],
            w: a[2],
            h: a[3],
        }
    }
}

impl BBox {
    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn max_dim(&self) -> usize {
        self.w.max(self.h)
    }

    /// Centre in continuous pixel coordinates (pixel `i` spans `[i, i+1)`).
    pub fn center(&self) -> (f64, f64) {
        (self.x as f64 + self.w as f64 / 2.0, self.y as f64 + self.h as f64 / 2.0)
    }
}
