//! Annotation file: a JSON list of scenes with run-length-encoded instance masks.
//!
//! ```json
//! [{"id": 0, "image_path": "images/000000.png", "width": 160, "height": 160,
//!   "annotations": [{"id": 1, "category_id": 2, "bbox": [x, y, w, h], "area": 812,
//!                    "rle": [zeros, ones, zeros, ...]}]}]
//! ```
//!
//! Instead of `image_path` a scene may carry `pixels`: base64 of interleaved 8-bit RGB.
//! Relative image paths resolve against the annotation file's directory.

use std::path::{Path, PathBuf};

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::image::Image;
use crate::mask::{BBox, Rle};
use crate::sampler::synth::{InstanceAnnotation, Scene};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub id: u64,
    #[serde(default)]
    pub category_id: u32,
    pub bbox: BBox,
    pub area: usize,
    pub rle: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneRecord {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixels: Option<String>,
    pub width: usize,
    pub height: usize,
    pub annotations: Vec<AnnotationRecord>,
}

/// How images are stored alongside the annotation file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageStorage {
    /// PNG files under `images/` next to the annotation file.
    Files,
    /// Base64 pixels inside the JSON.
    Inline,
}

fn scene_image_name(id: u64) -> String {
    format!("images/{id:06}.png")
}

/// Parses the annotation file into records, checking every mask against its box and area.
pub fn read_records(path: &Path) -> Result<Vec<SceneRecord>> {
    let text = fsutil::read_to_string(path)?;
    let records: Vec<SceneRecord> = serde_json::from_str(&text).map_err(|e| {
        Error::parse(
            format!("{} line {} column {}", path.display(), e.line(), e.column()),
            e.to_string(),
        )
    })?;
    for (i, s) in records.iter().enumerate() {
        for (j, a) in s.annotations.iter().enumerate() {
            let loc = |field: &str| format!("{} scene[{i}] (id {}) annotations[{j}].{field}", path.display(), s.id);
            let rle = Rle::from_counts(s.width, s.height, a.rle.clone())
                .map_err(|e| Error::parse(loc("rle"), e.to_string()))?;
            if rle.area() != a.area as u64 {
                return Err(Error::parse(
                    loc("area"),
                    format!("declared {}, mask has {}", a.area, rle.area()),
                ));
            }
            if rle.bbox() != Some(a.bbox) {
                return Err(Error::parse(
                    loc("bbox"),
                    format!("declared {:?}, mask encloses {:?}", a.bbox, rle.bbox()),
                ));
            }
        }
    }
    Ok(records)
}

fn scene_from_record(rec: &SceneRecord, base: &Path, categories: Option<&[u32]>) -> Result<Scene> {
    let image = match (&rec.image_path, &rec.pixels) {
        (Some(p), None) => {
            let full: PathBuf = base.join(p);
            let img = Image::load_png(&full)?;
            if img.width() != rec.width || img.height() != rec.height {
                return Err(Error::Data(format!(
                    "{}: image is {}x{}, annotation says {}x{}",
                    full.display(),
                    img.width(),
                    img.height(),
                    rec.width,
                    rec.height
                )));
            }
            img
        }
        (None, Some(b64)) => {
            let raw = base64::engine::general_purpose::STANDARD
                .decode(b64)
                .map_err(|e| Error::parse(format!("scene {} pixels", rec.id), e.to_string()))?;
            Image::from_rgb8(rec.width, rec.height, &raw)?
        }
        _ => {
            return Err(Error::parse(
                format!("scene {}", rec.id),
                "exactly one of image_path and pixels is required",
            ))
        }
    };
    let annotations = rec
        .annotations
        .iter()
        .filter(|a| categories.is_none_or(|c| c.contains(&a.category_id)))
        .map(|a| InstanceAnnotation {
            id: a.id,
            category_id: a.category_id,
            mask: Rle {
                width: rec.width,
                height: rec.height,
                counts: a.rle.clone(),
            }
            .decode(),
            bbox: a.bbox,
            area: a.area,
        })
        .collect();
    Ok(Scene {
        id: rec.id,
        image,
        annotations,
    })
}

/// Loads scenes with their images. With `categories`, other instances are dropped.
pub fn load_annotations(path: &Path, categories: Option<&[u32]>) -> Result<Vec<Scene>> {
    let base = path.parent().unwrap_or(Path::new("."));
    read_records(path)?
        .iter()
        .map(|r| scene_from_record(r, base, categories))
        .collect()
}

pub fn scene_record(scene: &Scene, storage: ImageStorage) -> SceneRecord {
    let (image_path, pixels) = match storage {
        ImageStorage::Files => (Some(scene_image_name(scene.id)), None),
        ImageStorage::Inline => (
            None,
            Some(base64::engine::general_purpose::STANDARD.encode(scene.image.to_rgb8())),
        ),
    };
    SceneRecord {
        id: scene.id,
        image_path,
        pixels,
        width: scene.image.width(),
        height: scene.image.height(),
        annotations: scene
            .annotations
            .iter()
            .map(|a| AnnotationRecord {
                id: a.id,
                category_id: a.category_id,
                bbox: a.bbox,
                area: a.area,
                rle: a.mask.to_rle().counts,
            })
            .collect(),
    }
}

/// Writes the annotation file and, for [`ImageStorage::Files`], one PNG per scene.
pub fn save_annotations(scenes: &[Scene], path: &Path, storage: ImageStorage) -> Result<()> {
    let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if storage == ImageStorage::Files {
        fsutil::create_dir_all(&base.join("images"))?;
        for s in scenes {
            fsutil::write_atomic(&base.join(scene_image_name(s.id)), &s.image.encode_png()?)?;
        }
    }
    let records: Vec<SceneRecord> = scenes.iter().map(|s| scene_record(s, storage)).collect();
    let text = serde_json::to_string(&records).expect("records serialise");
    fsutil::write_atomic(path, text.as_bytes())
}
