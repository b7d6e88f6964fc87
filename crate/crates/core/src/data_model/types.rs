use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of bins in a flattened RGB histogram (3 channels x 8 bins).
pub const HIST_LEN: usize = 24;

/// Axis-aligned box in pixels, serialized as `[x, y, w, h]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x, self.y, self.w, self.h]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::DegenerateBox {
                w: self.w,
                h: self.h,
            });
        }
        Ok(())
    }

    pub fn center_x(&self) -> f64 {
        self.x + self.w / 2.0
    }

    pub fn center_y(&self) -> f64 {
        self.y + self.h / 2.0
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

impl From<[f64; 4]> for BBox {
    fn from([x, y, w, h]: [f64; 4]) -> Self {
        Self { x, y, w, h }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

/// A shoe detection inside a person crop. The box is in the crop image's
/// pixel coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShoeBox {
    pub bbox: BBox,
    pub conf: f64,
}

/// One detected person in one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub video_id: String,
    pub frame_idx: u64,
    pub bbox: BBox,
    pub det_score: f64,
    pub runner_prob: f64,
    pub crop_ref: String,
    #[serde(default)]
    pub shoe_boxes: Vec<ShoeBox>,
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidValue(format!("{name} = {v} not in [0, 1]")));
    }
    Ok(())
}

impl DetectionRecord {
    pub fn validate(&self) -> Result<()> {
        self.bbox.validate()?;
        check_unit("det_score", self.det_score)?;
        check_unit("runner_prob", self.runner_prob)?;
        for shoe in &self.shoe_boxes {
            shoe.bbox.validate()?;
            check_unit("shoe conf", shoe.conf)?;
        }
        Ok(())
    }
}

/// A background-masked RGB crop. Pure black `(0, 0, 0)` marks background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CropImage {
    width: u32,
    height: u32,
    pixels: Vec<[u8; 3]>,
}

impl CropImage {
    pub fn new(width: u32, height: u32, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidValue(format!(
                "crop dimensions must be positive, got {width}x{height}"
            )));
        }
        let expected = width as usize * height as usize;
        if pixels.len() != expected {
            return Err(Error::Length {
                what: "crop pixel buffer".into(),
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn from_fn(
        width: u32,
        height: u32,
        mut f: impl FnMut(u32, u32) -> [u8; 3],
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self> {
        Self::new(width, height, vec![rgb; width as usize * height as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Row-major pixel buffer.
    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    /// Sub-image covering rows `y0..y1` and columns `x0..x1`.
    pub fn sub_image(&self, x0: u32, y0: u32, x1: u32, y1: u32) -> Result<Self> {
        let x1 = x1.min(self.width);
        let y1 = y1.min(self.height);
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::InvalidValue(format!(
                "empty sub-image [{x0},{x1})x[{y0},{y1})"
            )));
        }
        Self::from_fn(x1 - x0, y1 - y0, |x, y| self.get(x0 + x, y0 + y))
    }
}

/// Flattened 24-bin RGB histogram: R bins, then G bins, then B bins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ColorHistogram([f64; HIST_LEN]);

impl ColorHistogram {
    pub fn from_counts(counts: [f64; HIST_LEN]) -> Result<Self> {
        if counts.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::InvalidValue(
                "histogram entries must be finite and non-negative".into(),
            ));
        }
        Ok(Self(counts))
    }

    pub fn bins(&self) -> &[f64; HIST_LEN] {
        &self.0
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

impl TryFrom<Vec<f64>> for ColorHistogram {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        let actual = v.len();
        let arr: [f64; HIST_LEN] = v.try_into().map_err(|_| Error::Length {
            what: "color histogram".into(),
            expected: HIST_LEN,
            actual,
        })?;
        Self::from_counts(arr)
    }
}

impl From<ColorHistogram> for Vec<f64> {
    fn from(h: ColorHistogram) -> Self {
        h.0.to_vec()
    }
}

/// Per-scene appearance features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureBundle {
    pub scene_id: String,
    pub body_hist: ColorHistogram,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shoe_hist: Option<ColorHistogram>,
    #[serde(default)]
    pub embeddings: BTreeMap<String, Vec<f64>>,
}

impl FeatureBundle {
    pub fn new(
        scene_id: impl Into<String>,
        body_hist: ColorHistogram,
        shoe_hist: Option<ColorHistogram>,
        embeddings: BTreeMap<String, Vec<f64>>,
    ) -> Result<Self> {
        let bundle = Self {
            scene_id: scene_id.into(),
            body_hist,
            shoe_hist,
            embeddings,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in &self.embeddings {
            validate_embedding(name, v)?;
        }
        Ok(())
    }
}

pub(crate) fn validate_embedding(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::InvalidValue(format!("embedding {name:?} is empty")));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidValue(format!(
            "embedding {name:?} has non-finite values"
        )));
    }
    Ok(())
}

/// One frame of a finished track as emitted to `tracks.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackFrame {
    pub frame_idx: u64,
    pub bbox: BBox,
    pub crop_ref: String,
    #[serde(default)]
    pub shoe_boxes: Vec<ShoeBox>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub track_id: u64,
    pub video_id: String,
    pub frames: Vec<TrackFrame>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneFrame {
    pub frame_idx: u64,
    pub bbox: BBox,
    pub crop_ref: String,
}

/// The best shoe of a scene. `crop_ref` names the cut-out shoe image;
/// `source_ref`/`source_bbox` locate it inside the frame crop it came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShoeCrop {
    pub crop_ref: String,
    pub confidence: f64,
    pub frame_idx: u64,
    pub source_ref: String,
    pub source_bbox: BBox,
}

/// One left-to-right passage of one runner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene_id: String,
    pub video_id: String,
    pub track_id: u64,
    pub start_frame: u64,
    pub end_frame: u64,
    pub frames: Vec<SceneFrame>,
    /// Estimated single-step period in frames; absent when no periodicity was found.
    #[serde(default)]
    pub stride_period: Option<u32>,
    #[serde(default)]
    pub two_step_indices: Option<Vec<usize>>,
    #[serde(default)]
    pub shoe_crop: Option<ShoeCrop>,
    #[serde(default)]
    pub runner_id: Option<String>,
}

impl SceneRecord {
    pub fn validate(&self, two_step_len: Option<usize>) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidValue(format!("scene {}: {m}", self.scene_id)));
        if self.start_frame > self.end_frame {
            return bad("start_frame > end_frame".into());
        }
        let (Some(first), Some(last)) = (self.frames.first(), self.frames.last()) else {
            return bad("no frames".into());
        };
        if first.frame_idx != self.start_frame || last.frame_idx != self.end_frame {
            return bad("frame span does not match start/end".into());
        }
        if self
            .frames
            .windows(2)
            .any(|w| w[0].frame_idx >= w[1].frame_idx)
        {
            return bad("frames not strictly increasing".into());
        }
        if let Some(idx) = &self.two_step_indices {
            if let Some(n) = two_step_len {
                if idx.len() != n {
                    return bad(format!(
                        "two_step_indices has {} entries, want {n}",
                        idx.len()
                    ));
                }
            }
            if idx.windows(2).any(|w| w[0] >= w[1]) {
                return bad("two_step_indices not strictly increasing".into());
            }
            if idx.iter().any(|&i| i >= self.frames.len()) {
                return bad("two_step_indices out of range".into());
            }
        }
        Ok(())
    }

    /// Frame nearest the middle of the scene's frame span; ties go to the earlier frame.
    pub fn representative_index(&self) -> usize {
        let mid2 = self.start_frame + self.end_frame;
        self.frames
            .iter()
            .enumerate()
            .min_by_key(|(i, f)| ((2 * f.frame_idx).abs_diff(mid2), *i))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

/// Square matrix of pairwise scene similarities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub scene_ids: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub method_tag: String,
}

impl SimilarityMatrix {
    pub fn validate(&self) -> Result<()> {
        let n = self.scene_ids.len();
        if self.values.len() != n || self.values.iter().any(|r| r.len() != n) {
            return Err(Error::Length {
                what: "similarity matrix side".into(),
                expected: n,
                actual: self.values.len(),
            });
        }
        for i in 0..n {
            for j in 0..n {
                let v = self.values[i][j];
                if !v.is_finite() || v.abs() > 1.0 {
                    return Err(Error::InvalidValue(format!(
                        "similarity ({i},{j}) = {v} outside [-1, 1]"
                    )));
                }
                if v != self.values[j][i] {
                    return Err(Error::InvalidValue(format!(
                        "similarity matrix not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.scene_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scene_ids.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub scene_id: String,
    pub ap: f64,
    pub num_positives: usize,
}

/// Re-identification metrics over a similarity matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map_score: f64,
    pub rank1: f64,
    pub rank5: f64,
    /// CMC accuracy for every requested rank, keyed by n.
    pub cmc: BTreeMap<usize, f64>,
    pub num_queries: usize,
    /// True when no query had a same-identity gallery entry; all metrics are then 0.
    pub empty: bool,
    pub per_query: Vec<QueryResult>,
    pub excluded_queries: Vec<String>,
}
