use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::types::*;
use crate::error::{Error, Result};

/// Reads newline-delimited detection records. Blank lines are skipped.
pub fn read_detections(path: &Path) -> Result<Vec<DetectionRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out: Vec<DetectionRecord> = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DetectionRecord = serde_json::from_str(&line).map_err(|e| Error::Schema {
            line: line_no,
            message: e.to_string(),
        })?;
        rec.validate().map_err(|e| Error::Schema {
            line: line_no,
            message: e.to_string(),
        })?;
        if let Some(prev) = out.last() {
            if rec.frame_idx < prev.frame_idx {
                return Err(Error::NonMonotoneFrames {
                    line: line_no,
                    previous: prev.frame_idx,
                    current: rec.frame_idx,
                });
            }
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_detections(path: &Path, records: &[DetectionRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for rec in records {
        serde_json::to_writer(&mut buf, rec).map_err(|e| json_err(path, e))?;
        buf.push(b'\n');
    }
    write_bytes(path, &buf)
}

fn json_err(path: &Path, e: serde_json::Error) -> Error {
    Error::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut buf = serde_json::to_vec_pretty(value).map_err(|e| json_err(path, e))?;
    buf.push(b'\n');
    write_bytes(path, &buf)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| json_err(path, e))
}

/// `tracks.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracksDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
    /// Directory that relative `crop_ref`s resolve against.
    #[serde(default)]
    pub crop_root: String,
    pub tracks: Vec<TrackRecord>,
}

/// `scenes.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenesDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
    #[serde(default)]
    pub crop_root: String,
    pub scenes: Vec<SceneRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedScene {
    pub scene_id: String,
    pub reason: String,
}

/// `features.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeaturesDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
    pub scenes: Vec<FeatureBundle>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<SkippedScene>,
}

#[derive(Deserialize)]
struct RawBundle {
    scene_id: String,
    body_hist: Vec<f64>,
    #[serde(default)]
    shoe_hist: Option<Vec<f64>>,
    #[serde(default)]
    embeddings: BTreeMap<String, Vec<f64>>,
}

#[derive(Deserialize)]
struct RawFeaturesDoc {
    #[serde(default)]
    config: Option<serde_json::Value>,
    scenes: Vec<RawBundle>,
    #[serde(default)]
    skipped: Vec<SkippedScene>,
}

fn check_unique<'a>(ids: impl IntoIterator<Item = &'a str>) -> Result<()> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::DuplicateSceneId(id.to_string()));
        }
    }
    Ok(())
}

pub fn write_features(path: &Path, doc: &FeaturesDoc) -> Result<()> {
    check_unique(doc.scenes.iter().map(|b| b.scene_id.as_str()))?;
    for b in &doc.scenes {
        b.validate()?;
    }
    write_json(path, doc)
}

pub fn read_features(path: &Path) -> Result<FeaturesDoc> {
    let raw: RawFeaturesDoc = read_json(path)?;
    let mut scenes = Vec::with_capacity(raw.scenes.len());
    for b in raw.scenes {
        let body = ColorHistogram::try_from(b.body_hist)?;
        let shoe = b.shoe_hist.map(ColorHistogram::try_from).transpose()?;
        scenes.push(FeatureBundle::new(b.scene_id, body, shoe, b.embeddings)?);
    }
    check_unique(scenes.iter().map(|b| b.scene_id.as_str()))?;
    Ok(FeaturesDoc {
        config: raw.config,
        scenes,
        skipped: raw.skipped,
    })
}

/// External embedding file. Either per-scene vectors or per-frame vectors
/// (ordered along the scene's two-step subsequence) keyed by scene id.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingFile {
    pub name: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub scenes: BTreeMap<String, Vec<f64>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub frames: BTreeMap<String, Vec<Vec<f64>>>,
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingFile> {
    let file: EmbeddingFile = read_json(path)?;
    if file.name.is_empty() {
        return Err(Error::InvalidValue(format!(
            "embedding file {} has an empty name",
            path.display()
        )));
    }
    for (id, v) in &file.scenes {
        validate_embedding(&format!("{}[{id}]", file.name), v)?;
    }
    for (id, vs) in &file.frames {
        for v in vs {
            validate_embedding(&format!("{}[{id}]", file.name), v)?;
        }
    }
    Ok(file)
}

/// Ground-truth runner labels keyed by scene id and/or by detection crop_ref.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelsDoc {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub scenes: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub detections: BTreeMap<String, String>,
}

impl LabelsDoc {
    /// Scene label: an explicit scene entry wins, otherwise the majority label
    /// over the scene's frame crops (ties to the smallest runner id).
    pub fn label_for(&self, scene: &SceneRecord) -> Option<String> {
        if let Some(l) = self.scenes.get(&scene.scene_id) {
            return Some(l.clone());
        }
        let mut votes: BTreeMap<&str, usize> = BTreeMap::new();
        for f in &scene.frames {
            if let Some(l) = self.detections.get(&f.crop_ref) {
                *votes.entry(l.as_str()).or_default() += 1;
            }
        }
        votes
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(a.0)))
            .map(|(l, _)| l.to_string())
    }
}

/// Resolves a crop reference against a root directory. Absolute refs pass through.
pub fn resolve_ref(root: &Path, crop_ref: &str) -> PathBuf {
    let p = Path::new(crop_ref);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}

pub fn load_crop(path: &Path) -> Result<CropImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let pixels = img.pixels().map(|p| p.0).collect();
    CropImage::new(w, h, pixels)
}

pub fn save_crop(path: &Path, img: &CropImage) -> Result<()> {
    let raw: Vec<u8> = img.pixels().iter().flatten().copied().collect();
    let buf = image::RgbImage::from_raw(img.width(), img.height(), raw)
        .expect("buffer length matches dimensions");
    let mut bytes = Vec::new();
    buf.write_to(
        &mut std::io::Cursor::new(&mut bytes),
        image::ImageFormat::Png,
    )
    .map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    write_bytes(path, &bytes)
}
