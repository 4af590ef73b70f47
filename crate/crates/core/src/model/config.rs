use std::fmt;

use crate::error::{Error, Result};

/// One trunk operation. Convolutions are 3x3, stride 1, unpadded, followed by ReLU.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrunkLayer {
    Conv(usize),
    Pool,
}

pub const KERNEL: usize = 3;
pub const DOWNSAMPLE: usize = 16;

/// Architecture of the two-branch network.
///
/// Trunk convolutions are unpadded, so the network reads a window of
/// `patch_size + 2 * context` pixels for a `patch_size` patch; `context` is the
/// trunk's receptive margin. This makes the per-patch model and the dense
/// full-image evaluation compute identical functions.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub patch_size: usize,
    pub input_channels: usize,
    pub trunk: Vec<TrunkLayer>,
    /// Units of the segmentation branch's 1x1 convolution.
    pub seg_channels: usize,
    /// Width of the low-rank bottleneck between features and pixel classifiers.
    pub rank: usize,
    /// Side of the square mask predicted before upsampling.
    pub mask_out: usize,
    pub score_hidden: (usize, usize),
    /// Replace the two-layer factorisation by a single features -> mask map.
    pub full_rank: bool,
    pub dropout_rate: f64,
    /// Per-channel pixel mean subtracted before the trunk; also the padding colour.
    pub input_mean: [f32; 3],
    pub input_std: f32,
}

/// Derived sizes of a validated [`ModelConfig`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub patch_size: usize,
    /// Receptive margin on each side of the patch.
    pub context: usize,
    /// Side of the window the network actually reads.
    pub input_size: usize,
    /// Side of the trunk feature map for one patch (`patch_size / 16`).
    pub feature_size: usize,
    pub trunk_channels: usize,
    pub mask_out: usize,
}

fn parse_trunk(spec: &str) -> Result<Vec<TrunkLayer>> {
    spec.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| match t {
            "p" | "P" => Ok(TrunkLayer::Pool),
            _ => t
                .strip_prefix('c')
                .and_then(|n| n.parse().ok())
                .filter(|&n: &usize| n > 0)
                .map(TrunkLayer::Conv)
                .ok_or_else(|| Error::Config(format!("bad trunk layer '{t}' (use cN or p)"))),
        })
        .collect()
}

pub fn trunk_to_string(trunk: &[TrunkLayer]) -> String {
    trunk
        .iter()
        .map(|l| match l {
            TrunkLayer::Conv(n) => format!("c{n}"),
            TrunkLayer::Pool => "p".to_string(),
        })
        .collect::<Vec<_>>()
        .join(",")
}

impl ModelConfig {
    /// Desk-scale preset: 64-pixel patches, 2 convolutions per stage over 4 pooled stages.
    pub fn desk() -> Self {
        ModelConfig {
            patch_size: 64,
            input_channels: 3,
            trunk: parse_trunk("c8,c8,p,c16,c16,p,c32,c32,p,c32,c32,p").unwrap(),
            seg_channels: 32,
            rank: 64,
            mask_out: 16,
            score_hidden: (64, 128),
            full_rank: false,
            dropout_rate: 0.5,
            input_mean: [0.5; 3],
            input_std: 0.25,
        }
    }

    /// VGG-A-shaped trunk without its last pooling layer, 224-pixel patches, 56x56 masks.
    pub fn paper() -> Self {
        ModelConfig {
            patch_size: 224,
            input_channels: 3,
            trunk: parse_trunk("c64,p,c128,p,c256,c256,p,c512,c512,p,c512,c512").unwrap(),
            seg_channels: 512,
            rank: 512,
            mask_out: 56,
            score_hidden: (512, 1024),
            full_rank: false,
            dropout_rate: 0.5,
            input_mean: [0.5; 3],
            input_std: 0.25,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::Config(format!("unknown preset '{other}' (desk|paper)"))),
        }
    }

    pub fn geometry(&self) -> Result<Geometry> {
        let p = self.patch_size;
        if p == 0 || p % 32 != 0 {
            return Err(Error::Config(format!(
                "patch size must be a positive multiple of 32, got {p}"
            )));
        }
        if self.input_channels == 0 {
            return Err(Error::Config("input channels must be positive".into()));
        }
        let pools = self.trunk.iter().filter(|l| **l == TrunkLayer::Pool).count();
        if 1usize << pools != DOWNSAMPLE {
            return Err(Error::Config(format!(
                "trunk must downsample by exactly {DOWNSAMPLE}, it has {pools} poolings"
            )));
        }
        let trunk_channels = self
            .trunk
            .iter()
            .rev()
            .find_map(|l| match l {
                TrunkLayer::Conv(c) => Some(*c),
                TrunkLayer::Pool => None,
            })
            .ok_or_else(|| Error::Config("trunk has no convolution".into()))?;
        if self.mask_out == 0 || self.mask_out > p {
            return Err(Error::Config(format!(
                "mask output {} must be in 1..={p}",
                self.mask_out
            )));
        }
        if self.seg_channels == 0 || self.rank == 0 || self.score_hidden.0 == 0 || self.score_hidden.1 == 0 {
            return Err(Error::Config("head widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate must be in [0,1), got {}",
                self.dropout_rate
            )));
        }
        if !(self.input_std.is_finite() && self.input_std > 0.0) {
            return Err(Error::Config("input std must be > 0".into()));
        }

        // Receptive field of one output feature cell, in input pixels.
        let mut rf = 1usize;
        for layer in self.trunk.iter().rev() {
            match layer {
                TrunkLayer::Conv(_) => rf += KERNEL - 1,
                TrunkLayer::Pool => rf *= 2,
            }
        }
        if rf < DOWNSAMPLE || (rf - DOWNSAMPLE) % 2 != 0 {
            return Err(Error::Config(format!(
                "trunk receptive field {rf} gives no symmetric context margin"
            )));
        }
        let context = (rf - DOWNSAMPLE) / 2;
        let input_size = p + 2 * context;
        let feature_size = self.trunk_output_size(input_size)?;
        if feature_size != p / DOWNSAMPLE {
            return Err(Error::Config(format!(
                "trunk maps {input_size} to {feature_size}, expected {}",
                p / DOWNSAMPLE
            )));
        }
        Ok(Geometry {
            patch_size: p,
            context,
            input_size,
            feature_size,
            trunk_channels,
            mask_out: self.mask_out,
        })
    }

    /// Spatial side after the trunk for a square input of side `size`.
    pub fn trunk_output_size(&self, mut size: usize) -> Result<usize> {
        for layer in &self.trunk {
            match layer {
                TrunkLayer::Conv(_) => {
                    size = size.checked_sub(KERNEL - 1).filter(|&s| s > 0).ok_or_else(|| {
                        Error::Config("input too small for the trunk".to_string())
                    })?
                }
                TrunkLayer::Pool => {
                    if size % 2 != 0 {
                        return Err(Error::Config(format!(
                            "odd size {size} reaches a 2x2 pooling layer"
                        )));
                    }
                    size /= 2;
                }
            }
        }
        Ok(size)
    }

    /// Length of the flattened segmentation features (`seg_channels * n * n`).
    pub fn seg_feature_dim(&self) -> usize {
        let n = self.patch_size / DOWNSAMPLE;
        self.seg_channels * n * n
    }

    /// Length of the flattened pooled scoring features.
    pub fn score_feature_dim(&self) -> Result<usize> {
        let g = self.geometry()?;
        let n = g.feature_size / 2;
        Ok(g.trunk_channels * n * n)
    }

    pub fn trunk_parameter_count(&self) -> usize {
        let mut cin = self.input_channels;
        let mut total = 0;
        for layer in &self.trunk {
            if let TrunkLayer::Conv(cout) = *layer {
                total += cin * KERNEL * KERNEL * cout + cout;
                cin = cout;
            }
        }
        total
    }

    /// Parameters of the segmentation classifier (the part after the 1x1 convolution).
    pub fn seg_classifier_parameter_count(&self) -> usize {
        let d = self.seg_feature_dim();
        let m = self.mask_out * self.mask_out;
        if self.full_rank {
            d * m + m
        } else {
            d * self.rank + self.rank + self.rank * m + m
        }
    }

    pub fn parameter_count(&self) -> Result<usize> {
        let g = self.geometry()?;
        let seg_conv = g.trunk_channels * self.seg_channels + self.seg_channels;
        let (h1, h2) = self.score_hidden;
        let score = self.score_feature_dim()? * h1 + h1 + h1 * h2 + h2 + h2 + 1;
        Ok(self.trunk_parameter_count() + seg_conv + self.seg_classifier_parameter_count() + score)
    }

    /// Architecture identity used to reject mismatched weight files; normalisation
    /// constants are excluded.
    pub fn architecture_key(&self) -> String {
        format!(
            "patch_size={} input_channels={} trunk={} seg_channels={} rank={} mask_out={} score_hidden={},{} full_rank={}",
            self.patch_size,
            self.input_channels,
            trunk_to_string(&self.trunk),
            self.seg_channels,
            self.rank,
            self.mask_out,
            self.score_hidden.0,
            self.score_hidden.1,
            self.full_rank
        )
    }

    /// `key=value` lines, one field per line.
    pub fn to_kv(&self) -> String {
        let m = self.input_mean;
        format!(
            "patch_size={}\ninput_channels={}\ntrunk={}\nseg_channels={}\nrank={}\nmask_out={}\nscore_hidden={},{}\nfull_rank={}\ndropout_rate={:?}\ninput_mean={:?},{:?},{:?}\ninput_std={:?}\n",
            self.patch_size,
            self.input_channels,
            trunk_to_string(&self.trunk),
            self.seg_channels,
            self.rank,
            self.mask_out,
            self.score_hidden.0,
            self.score_hidden.1,
            self.full_rank,
            self.dropout_rate,
            m[0],
            m[1],
            m[2],
            self.input_std
        )
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("model.{key}: cannot parse '{value}' as {what}"));
        let uint = || value.trim().parse::<usize>().map_err(|_| bad("an integer"));
        match key {
            "patch_size" => self.patch_size = uint()?,
            "input_channels" => self.input_channels = uint()?,
            "trunk" => self.trunk = parse_trunk(value)?,
            "seg_channels" => self.seg_channels = uint()?,
            "rank" => self.rank = uint()?,
            "mask_out" => self.mask_out = uint()?,
            "score_hidden" => {
                let parts: Vec<usize> = value
                    .split(',')
                    .map(|p| p.trim().parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("two integers"))?;
                let [a, b] = parts[..] else { return Err(bad("two integers")) };
                self.score_hidden = (a, b);
            }
            "full_rank" => self.full_rank = value.trim().parse().map_err(|_| bad("a bool"))?,
            "dropout_rate" => self.dropout_rate = value.trim().parse().map_err(|_| bad("a number"))?,
            "input_mean" => {
                let parts: Vec<f32> = value
                    .split(',')
                    .map(|p| p.trim().parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("three numbers"))?;
                let [r, g, b] = parts[..] else { return Err(bad("three numbers")) };
                self.input_mean = [r, g, b];
            }
            "input_std" => self.input_std = value.trim().parse().map_err(|_| bad("a number"))?,
            _ => return Err(Error::Config(format!("unknown model key '{key}'"))),
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::desk();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(format!("model config line {}", lineno + 1), "expected key=value"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.architecture_key())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_downsample_by_sixteen() {
        let desk = ModelConfig::desk().geometry().unwrap();
        assert_eq!(desk.feature_size, 4);
        assert_eq!(desk.trunk_channels, 32);
        assert_eq!(desk.context, 30);
        assert_eq!(desk.input_size, 124);
        let paper = ModelConfig::paper().geometry().unwrap();
        assert_eq!(paper.feature_size, 14);
        assert_eq!(paper.trunk_channels, 512);
    }

    #[test]
    fn paper_parameter_count_is_about_75m() {
        let n = ModelConfig::paper().parameter_count().unwrap();
        assert!((74_000_000..77_000_000).contains(&n), "{n}");
        let full = ModelConfig {
            full_rank: true,
            ..ModelConfig::paper()
        };
        assert!(full.parameter_count().unwrap() > 300_000_000);
    }

    #[test]
    fn invalid_geometry_rejected() {
        let mut c = ModelConfig::desk();
        c.patch_size = 48;
        assert!(c.geometry().is_err());
        let mut c = ModelConfig::desk();
        c.trunk.pop();
        assert!(c.geometry().is_err());
        let mut c = ModelConfig::desk();
        c.mask_out = 65;
        assert!(c.geometry().is_err());
    }

    #[test]
    fn kv_round_trip() {
        let mut c = ModelConfig::paper();
        c.full_rank = true;
        c.input_mean = [0.1, 0.2, 0.30000001];
        let back = ModelConfig::from_kv(&c.to_kv()).unwrap();
        assert_eq!(back, c);
    }
}
