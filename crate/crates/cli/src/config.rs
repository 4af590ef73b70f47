//! Run configuration: flat `section.key=value` text merged over a preset.

use std::fmt::Write as _;
use std::path::Path;

use maskseed::eval::{EvalConfig, IouKind};
use maskseed::inference::PyramidConfig;
use maskseed::model::{ModelConfig, TrainConfig};
use maskseed::sampler::{SamplerConfig, ShapeKind, SyntheticSpec};
use maskseed::{fsutil, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub scenes: usize,
    pub first_id: u64,
    /// Embed pixels in the annotation file instead of writing PNGs.
    pub inline: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainExtras {
    pub checkpoint_every: usize,
    pub log_every: usize,
}

/// Sampler settings that do not depend on the model geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplerOverrides {
    pub jitter_translate: f64,
    pub jitter_scale_exp: f64,
    pub hflip: bool,
    pub negative_translate: f64,
    pub negative_scale_exp: f64,
    pub negative_log2_scale: (f64, f64),
    pub negative_near_fraction: f64,
    pub max_attempts: usize,
}

impl Default for SamplerOverrides {
    fn default() -> Self {
        SamplerOverrides {
            jitter_translate: 16.0,
            jitter_scale_exp: 0.25,
            hflip: true,
            negative_translate: 32.0,
            negative_scale_exp: 1.0,
            negative_log2_scale: (-2.75, 1.25),
            negative_near_fraction: 0.5,
            max_attempts: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: String,
    pub seed: u64,
    pub model: ModelConfig,
    /// True when the preset or any `model.` key was given explicitly.
    pub model_explicit: bool,
    pub train: TrainConfig,
    pub train_extras: TrainExtras,
    pub sampler: SamplerOverrides,
    pub synth: SyntheticSpec,
    pub gen: GenConfig,
    pub pyramid: PyramidConfig,
    pub eval: EvalConfig,
}

fn bad(key: &str, value: &str, what: &str) -> Error {
    Error::Config(format!("{key}: cannot parse '{value}' as {what}"))
}

fn parse<T: std::str::FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value.trim().parse().map_err(|_| bad(key, value, what))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str, what: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| bad(key, value, what)))
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// Scene defaults for a preset; the paper preset scales scenes with its patch.
fn synth_for(preset: &str) -> SyntheticSpec {
    let mut s = SyntheticSpec::default();
    if preset == "paper" {
        s.width = 448;
        s.height = 448;
        s.min_size = 56.0;
        s.max_size = 280.0;
    }
    s
}

/// Training length of the desk preset; about 20 minutes on one core.
pub const DESK_STEPS: usize = 3000;

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let model = ModelConfig::preset(name)?;
        let mut train = TrainConfig::default();
        if name == "desk" {
            train.steps = DESK_STEPS;
            train.lambda = 0.125;
            train.optimizer.learning_rate = 0.2;
        } else {
            train.steps = 2000;
        }
        Ok(RunConfig {
            preset: name.to_string(),
            seed: 0,
            model,
            model_explicit: false,
            train,
            train_extras: TrainExtras {
                checkpoint_every: 500,
                log_every: 100,
            },
            sampler: SamplerOverrides::default(),
            synth: synth_for(name),
            gen: GenConfig {
                scenes: 500,
                first_id: 1,
                inline: false,
            },
            pyramid: PyramidConfig::default(),
            eval: EvalConfig::default(),
        })
    }

    /// Preset, then the config file, then `--set` overrides.
    pub fn load(preset: Option<&str>, file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = file.map(fsutil::read_to_string).transpose()?;
        let pairs = text.as_deref().map(parse_pairs).transpose()?.unwrap_or_default();
        let file_preset = pairs.iter().find(|(k, _)| k == "preset").map(|(_, v)| v.clone());
        let name = preset.map(str::to_string).or(file_preset).unwrap_or_else(|| "desk".into());
        let mut cfg = RunConfig::preset(&name)?;
        cfg.model_explicit = preset.is_some();
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got '{o}'")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.geometry()?;
        self.train.validate()?;
        self.synth.validate()?;
        self.pyramid.validate()?;
        self.sampler_config()?.validate()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (section, field) = key.split_once('.').unwrap_or(("", key));
        match section {
            "" => match field {
                "seed" => self.seed = parse(key, value, "an integer")?,
                "preset" => {
                    if value.trim() != self.preset {
                        return Err(Error::Config(format!(
                            "config file preset '{value}' conflicts with --preset {}",
                            self.preset
                        )));
                    }
                }
                _ => return Err(Error::Config(format!("unknown key '{key}'"))),
            },
            "model" => {
                self.model.set(field, value)?;
                self.model_explicit = true;
            }
            "train" => self.set_train(key, field, value)?,
            "sampler" => self.set_sampler(key, field, value)?,
            "synth" => self.set_synth(key, field, value)?,
            "gen" => match field {
                "scenes" => self.gen.scenes = parse(key, value, "an integer")?,
                "first_id" => self.gen.first_id = parse(key, value, "an integer")?,
                "inline" => self.gen.inline = parse(key, value, "a bool")?,
                _ => return Err(Error::Config(format!("unknown key '{key}'"))),
            },
            "pyramid" => match field {
                "scales" => self.pyramid.scales = parse_list(key, value, "numbers")?,
                "zoom" => self.pyramid.zoom = parse(key, value, "a bool")?,
                "mask_threshold" => self.pyramid.mask_threshold = parse(key, value, "a number")?,
                "max_proposals" => self.pyramid.max_proposals = parse(key, value, "an integer")?,
                _ => return Err(Error::Config(format!("unknown key '{key}'"))),
            },
            "eval" => match field {
                "iou" => {
                    self.eval.iou = match value.trim() {
                        "mask" => IouKind::Mask,
                        "box" => IouKind::Box,
                        _ => return Err(bad(key, value, "mask|box")),
                    }
                }
                "budgets" => self.eval.report_budgets = parse_list(key, value, "integers")?,
                "auc_budgets" => self.eval.auc_budgets = parse_list(key, value, "integers")?,
                _ => return Err(Error::Config(format!("unknown key '{key}'"))),
            },
            _ => return Err(Error::Config(format!("unknown section in key '{key}'"))),
        }
        Ok(())
    }

    fn set_train(&mut self, key: &str, field: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match field {
            "steps" => t.steps = parse(key, value, "an integer")?,
            "batch_size" => t.optimizer.batch_size = parse(key, value, "an integer")?,
            "learning_rate" => t.optimizer.learning_rate = parse(key, value, "a number")?,
            "momentum" => t.optimizer.momentum = parse(key, value, "a number")?,
            "weight_decay" => t.optimizer.weight_decay = parse(key, value, "a number")?,
            "lambda" => t.lambda = parse(key, value, "a number")?,
            "segmentation_steps" => t.segmentation_steps = parse(key, value, "an integer")?,
            "scoring_steps" => t.scoring_steps = parse(key, value, "an integer")?,
            "checkpoint_every" => self.train_extras.checkpoint_every = parse(key, value, "an integer")?,
            "log_every" => self.train_extras.log_every = parse(key, value, "an integer")?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    fn set_sampler(&mut self, key: &str, field: &str, value: &str) -> Result<()> {
        let s = &mut self.sampler;
        match field {
            "jitter_translate" => s.jitter_translate = parse(key, value, "a number")?,
            "jitter_scale_exp" => s.jitter_scale_exp = parse(key, value, "a number")?,
            "hflip" => s.hflip = parse(key, value, "a bool")?,
            "negative_translate" => s.negative_translate = parse(key, value, "a number")?,
            "negative_scale_exp" => s.negative_scale_exp = parse(key, value, "a number")?,
            "negative_log2_scale" => {
                let v: Vec<f64> = parse_list(key, value, "two numbers")?;
                let [a, b] = v[..] else { return Err(bad(key, value, "two numbers")) };
                s.negative_log2_scale = (a, b);
            }
            "negative_near_fraction" => s.negative_near_fraction = parse(key, value, "a number")?,
            "max_attempts" => s.max_attempts = parse(key, value, "an integer")?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    fn set_synth(&mut self, key: &str, field: &str, value: &str) -> Result<()> {
        let s = &mut self.synth;
        match field {
            "width" => s.width = parse(key, value, "an integer")?,
            "height" => s.height = parse(key, value, "an integer")?,
            "min_shapes" => s.min_shapes = parse(key, value, "an integer")?,
            "max_shapes" => s.max_shapes = parse(key, value, "an integer")?,
            "shapes" => {
                s.shapes = value
                    .split(',')
                    .map(str::trim)
                    .filter(|v| !v.is_empty())
                    .map(ShapeKind::parse)
                    .collect::<Result<_>>()?
            }
            "min_size" => s.min_size = parse(key, value, "a number")?,
            "max_size" => s.max_size = parse(key, value, "a number")?,
            "noise" => s.noise = parse(key, value, "a number")?,
            "min_contrast" => s.min_contrast = parse(key, value, "a number")?,
            "occlusion" => s.occlusion = parse(key, value, "a bool")?,
            "min_gap" => s.min_gap = parse(key, value, "an integer")?,
            "max_attempts" => s.max_attempts = parse(key, value, "an integer")?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Sampler configuration for this run's model; the pixel mean is filled in by training.
    pub fn sampler_config(&self) -> Result<SamplerConfig> {
        let mut c = SamplerConfig::for_geometry(&self.model.geometry()?);
        let o = &self.sampler;
        c.jitter_translate = o.jitter_translate;
        c.jitter_scale_exp = o.jitter_scale_exp;
        c.hflip = o.hflip;
        c.negative_translate = o.negative_translate;
        c.negative_scale_exp = o.negative_scale_exp;
        c.negative_log2_scale = o.negative_log2_scale;
        c.negative_near_fraction = o.negative_near_fraction;
        c.max_attempts = o.max_attempts;
        c.mean = self.model.input_mean;
        c.std = self.model.input_std;
        c.seed = self.seed;
        Ok(c)
    }

    /// Every setting as `key=value` lines; loading the output reproduces this config.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "preset={}", self.preset);
        let _ = writeln!(s, "seed={}", self.seed);
        for line in self.model.to_kv().lines() {
            let _ = writeln!(s, "model.{line}");
        }
        let t = &self.train;
        let o = &t.optimizer;
        let _ = writeln!(s, "train.steps={}", t.steps);
        let _ = writeln!(s, "train.batch_size={}", o.batch_size);
        let _ = writeln!(s, "train.learning_rate={:?}", o.learning_rate);
        let _ = writeln!(s, "train.momentum={:?}", o.momentum);
        let _ = writeln!(s, "train.weight_decay={:?}", o.weight_decay);
        let _ = writeln!(s, "train.lambda={:?}", t.lambda);
        let _ = writeln!(s, "train.segmentation_steps={}", t.segmentation_steps);
        let _ = writeln!(s, "train.scoring_steps={}", t.scoring_steps);
        let _ = writeln!(s, "train.checkpoint_every={}", self.train_extras.checkpoint_every);
        let _ = writeln!(s, "train.log_every={}", self.train_extras.log_every);
        let p = &self.sampler;
        let _ = writeln!(s, "sampler.jitter_translate={:?}", p.jitter_translate);
        let _ = writeln!(s, "sampler.jitter_scale_exp={:?}", p.jitter_scale_exp);
        let _ = writeln!(s, "sampler.hflip={}", p.hflip);
        let _ = writeln!(s, "sampler.negative_translate={:?}", p.negative_translate);
        let _ = writeln!(s, "sampler.negative_scale_exp={:?}", p.negative_scale_exp);
        let _ = writeln!(
            s,
            "sampler.negative_log2_scale={:?},{:?}",
            p.negative_log2_scale.0, p.negative_log2_scale.1
        );
        let _ = writeln!(s, "sampler.negative_near_fraction={:?}", p.negative_near_fraction);
        let _ = writeln!(s, "sampler.max_attempts={}", p.max_attempts);
        let y = &self.synth;
        let _ = writeln!(s, "synth.width={}", y.width);
        let _ = writeln!(s, "synth.height={}", y.height);
        let _ = writeln!(s, "synth.min_shapes={}", y.min_shapes);
        let _ = writeln!(s, "synth.max_shapes={}", y.max_shapes);
        let names: Vec<&str> = y.shapes.iter().map(|k| k.name()).collect();
        let _ = writeln!(s, "synth.shapes={}", names.join(","));
        let _ = writeln!(s, "synth.min_size={:?}", y.min_size);
        let _ = writeln!(s, "synth.max_size={:?}", y.max_size);
        let _ = writeln!(s, "synth.noise={:?}", y.noise);
        let _ = writeln!(s, "synth.min_contrast={:?}", y.min_contrast);
        let _ = writeln!(s, "synth.occlusion={}", y.occlusion);
        let _ = writeln!(s, "synth.min_gap={}", y.min_gap);
        let _ = writeln!(s, "synth.max_attempts={}", y.max_attempts);
        let _ = writeln!(s, "gen.scenes={}", self.gen.scenes);
        let _ = writeln!(s, "gen.first_id={}", self.gen.first_id);
        let _ = writeln!(s, "gen.inline={}", self.gen.inline);
        let py = &self.pyramid;
        let scales: Vec<String> = py.scales.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(s, "pyramid.scales={}", scales.join(","));
        let _ = writeln!(s, "pyramid.zoom={}", py.zoom);
        let _ = writeln!(s, "pyramid.mask_threshold={:?}", py.mask_threshold);
        let _ = writeln!(s, "pyramid.max_proposals={}", py.max_proposals);
        let iou = match self.eval.iou {
            IouKind::Mask => "mask",
            IouKind::Box => "box",
        };
        let _ = writeln!(s, "eval.iou={iou}");
        let _ = writeln!(s, "eval.budgets={}", join(&self.eval.report_budgets));
        let _ = writeln!(s, "eval.auc_budgets={}", join(&self.eval.auc_budgets));
        s
    }

    /// Writes the effective configuration next to a command's outputs.
    pub fn write_sidecar(&self, dir: &Path, command: &str) -> Result<()> {
        fsutil::write_atomic(&dir.join(format!("{command}.conf")), self.to_kv().as_bytes())
    }
}

fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            location: format!("config line {}", i + 1),
            message: "expected key=value".into(),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip() {
        let mut cfg = RunConfig::preset("desk").unwrap();
        cfg.set("model.rank", "32").unwrap();
        cfg.set("synth.shapes", "disk,annulus").unwrap();
        cfg.set("pyramid.zoom", "true").unwrap();
        cfg.set("eval.iou", "box").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, cfg.to_kv()).unwrap();
        let back = RunConfig::load(None, Some(&path), &[]).unwrap();
        assert_eq!(back.to_kv(), cfg.to_kv());
        assert_eq!(back.model.rank, 32);
    }

    #[test]
    fn overrides_beat_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "seed=3\ntrain.steps=10\n").unwrap();
        let cfg = RunConfig::load(None, Some(&path), &["train.steps=20".into()]).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.train.steps, 20);
        assert!(!cfg.model_explicit);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = RunConfig::load(None, None, &["train.nope=1".into()]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
