//! Turns finished tracks into running scenes.
//!
//! A scene survives when it is long enough, runner-shaped and crosses the
//! frame left to right. The stride period comes from the bbox width, which
//! peaks once per step as the legs open; the two-step window spans twice
//! that period around the middle of the crossing.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{
    load_crop, resolve_ref, save_crop, BBox, SceneFrame, SceneRecord, ShoeCrop, TrackFrame,
    TrackRecord,
};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodSearch {
    pub min_lag: usize,
    pub max_lag: usize,
}

impl Default for PeriodSearch {
    fn default() -> Self {
        Self {
            min_lag: 8,
            max_lag: 90,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub min_track_frames: usize,
    /// Bounds on the median height/width ratio.
    pub aspect_min: f64,
    pub aspect_max: f64,
    /// Required left-to-right centroid travel as a fraction of frame width.
    pub min_net_displacement_frac: f64,
    pub two_step_len: usize,
    pub period_search: PeriodSearch,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            min_track_frames: 30,
            aspect_min: 1.2,
            aspect_max: 5.0,
            min_net_displacement_frac: 0.5,
            two_step_len: 16,
            period_search: PeriodSearch::default(),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let p = self.period_search;
        if p.min_lag < 2 || p.max_lag <= p.min_lag {
            return Err(Error::InvalidConfig(
                "scene: need min_lag >= 2 and max_lag > min_lag".into(),
            ));
        }
        if self.two_step_len < 4 {
            return Err(Error::InvalidConfig(
                "scene: two_step_len must be >= 4".into(),
            ));
        }
        if self.aspect_min > self.aspect_max {
            return Err(Error::InvalidConfig(
                "scene: aspect_min > aspect_max".into(),
            ));
        }
        Ok(())
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn keep_track(t: &TrackRecord, cfg: &SceneConfig, frame_width: f64) -> bool {
    let (Some(first), Some(last)) = (t.frames.first(), t.frames.last()) else {
        return false;
    };
    if t.frames.len() < cfg.min_track_frames {
        return false;
    }
    let aspect = median(t.frames.iter().map(|f| f.bbox.h / f.bbox.w).collect());
    if !(cfg.aspect_min..=cfg.aspect_max).contains(&aspect) {
        return false;
    }
    let travel = last.bbox.center_x() - first.bbox.center_x();
    travel > 0.0 && travel >= cfg.min_net_displacement_frac * frame_width
}

/// Keeps runner-like, complete, left-to-right tracks.
pub fn filter_tracks(
    tracks: &[TrackRecord],
    cfg: &SceneConfig,
    frame_width: f64,
) -> Vec<TrackRecord> {
    tracks
        .iter()
        .filter(|t| keep_track(t, cfg, frame_width))
        .cloned()
        .collect()
}

/// Minimum peak autocorrelation accepted as a stride period.
pub const MIN_PERIOD_PEAK: f64 = 0.2;

/// Returns the lag in `[min_lag, max_lag]` maximizing the normalized
/// autocorrelation of the linearly detrended series.
pub fn estimate_stride_period(widths: &[f64], search: PeriodSearch) -> Result<usize> {
    let n = widths.len();
    if n < 2 * search.min_lag {
        return Err(Error::TooShort {
            needed: 2 * search.min_lag,
            actual: n,
        });
    }
    if widths.iter().any(|w| !w.is_finite()) {
        return Err(Error::InvalidValue(
            "width series has non-finite values".into(),
        ));
    }
    let nf = n as f64;
    let t_mean = (nf - 1.0) / 2.0;
    let y_mean = widths.iter().sum::<f64>() / nf;
    let (mut sty, mut stt) = (0.0, 0.0);
    for (t, y) in widths.iter().enumerate() {
        let dt = t as f64 - t_mean;
        sty += dt * (y - y_mean);
        stt += dt * dt;
    }
    let slope = sty / stt;
    let x: Vec<f64> = widths
        .iter()
        .enumerate()
        .map(|(t, y)| y - y_mean - slope * (t as f64 - t_mean))
        .collect();
    let energy: f64 = x.iter().map(|v| v * v).sum();
    let scale: f64 =
        widths.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() + y_mean * y_mean * nf;
    if energy <= 1e-20 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NoPeriodicity { peak: 0.0 });
    }
    let max_lag = search.max_lag.min(n - 1);
    let mut best = (search.min_lag, f64::NEG_INFINITY);
    for lag in search.min_lag..=max_lag {
        let r = x[..n - lag]
            .iter()
            .zip(&x[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / energy;
        if r > best.1 {
            best = (lag, r);
        }
    }
    if best.1 < MIN_PERIOD_PEAK {
        return Err(Error::NoPeriodicity { peak: best.1 });
    }
    Ok(best.0)
}

/// Per-frame width signal with linear interpolation across missed frames.
pub fn width_series(frames: &[TrackFrame]) -> Vec<f64> {
    let mut out = Vec::new();
    for pair in frames.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let gap = b.frame_idx - a.frame_idx;
        for k in 0..gap {
            let t = k as f64 / gap as f64;
            out.push(a.bbox.w + t * (b.bbox.w - a.bbox.w));
        }
    }
    if let Some(last) = frames.last() {
        out.push(last.bbox.w);
    }
    out
}

/// Picks `n` strictly increasing frame positions from a window of
/// `2 * period` frames centered on the middle of a `track_len`-frame track.
pub fn extract_two_step_sequence(track_len: usize, period: usize, n: usize) -> Result<Vec<usize>> {
    let window = 2 * period;
    if track_len < window {
        return Err(Error::TooShort {
            needed: window,
            actual: track_len,
        });
    }
    if window < n || n < 2 {
        return Err(Error::TooShort {
            needed: n,
            actual: window,
        });
    }
    let start = (track_len - window) / 2;
    let step = (window - 1) as f64 / (n - 1) as f64;
    Ok((0..n)
        .map(|k| start + (k as f64 * step).round() as usize)
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShoeSelection {
    /// Position of the frame within the track.
    pub frame_pos: usize,
    pub frame_idx: u64,
    pub crop_ref: String,
    pub bbox: BBox,
    pub confidence: f64,
}

/// Highest-confidence shoe over the whole track; ties go to the earliest
/// frame, then the leftmost box.
pub fn select_shoe(track: &TrackRecord) -> Option<ShoeSelection> {
    let mut best: Option<ShoeSelection> = None;
    for (pos, f) in track.frames.iter().enumerate() {
        for s in &f.shoe_boxes {
            let better = match &best {
                None => true,
                Some(b) => {
                    s.conf > b.confidence
                        || (s.conf == b.confidence && b.frame_pos == pos && s.bbox.x < b.bbox.x)
                }
            };
            if better {
                best = Some(ShoeSelection {
                    frame_pos: pos,
                    frame_idx: f.frame_idx,
                    crop_ref: f.crop_ref.clone(),
                    bbox: s.bbox,
                    confidence: s.conf,
                });
            }
        }
    }
    best
}

/// Name of the shoe image cut from a frame crop: `dir/name.png` -> `dir/name_shoe.png`.
pub fn shoe_ref(source_ref: &str) -> String {
    match source_ref.rsplit_once('.') {
        Some((stem, ext)) if !ext.contains('/') => format!("{stem}_shoe.{ext}"),
        _ => format!("{source_ref}_shoe.png"),
    }
}

fn build_scene(t: &TrackRecord, cfg: &SceneConfig) -> SceneRecord {
    let frames: Vec<SceneFrame> = t
        .frames
        .iter()
        .map(|f| SceneFrame {
            frame_idx: f.frame_idx,
            bbox: f.bbox,
            crop_ref: f.crop_ref.clone(),
        })
        .collect();
    let widths: Vec<f64> = t.frames.iter().map(|f| f.bbox.w).collect();
    let dense = width_series(&t.frames);
    let period = estimate_stride_period(&dense, cfg.period_search).ok();
    let two_step =
        period.and_then(|p| extract_two_step_sequence(widths.len(), p, cfg.two_step_len).ok());
    let shoe_crop = select_shoe(t).map(|s| ShoeCrop {
        crop_ref: shoe_ref(&s.crop_ref),
        confidence: s.confidence,
        frame_idx: s.frame_idx,
        source_ref: s.crop_ref,
        source_bbox: s.bbox,
    });
    SceneRecord {
        scene_id: format!("{}:{}", t.video_id, t.track_id),
        video_id: t.video_id.clone(),
        track_id: t.track_id,
        start_frame: frames[0].frame_idx,
        end_frame: frames[frames.len() - 1].frame_idx,
        frames,
        stride_period: period.map(|p| p as u32),
        two_step_indices: two_step,
        shoe_crop,
        runner_id: None,
    }
}

/// Largest right box edge over all tracks, a stand-in for the frame width
/// when it is not configured.
pub fn infer_frame_width(tracks: &[TrackRecord]) -> Option<f64> {
    tracks
        .iter()
        .flat_map(|t| &t.frames)
        .map(|f| f.bbox.x + f.bbox.w)
        .fold(None, |m, v| Some(m.map_or(v, |m: f64| m.max(v))))
}

/// One scene per surviving track, ordered by `(video_id, track_id)`.
/// Scenes without a detectable period keep their frames but carry no
/// two-step subsequence.
pub fn build_scenes(
    tracks: &[TrackRecord],
    cfg: &SceneConfig,
    frame_width: f64,
) -> Result<Vec<SceneRecord>> {
    cfg.validate()?;
    let kept = filter_tracks(tracks, cfg, frame_width);
    let mut scenes: Vec<SceneRecord> = kept.par_iter().map(|t| build_scene(t, cfg)).collect();
    scenes.sort_by(|a, b| (&a.video_id, a.track_id).cmp(&(&b.video_id, b.track_id)));
    for s in &scenes {
        s.validate(Some(cfg.two_step_len))?;
    }
    Ok(scenes)
}

fn cut_shoe(root: &Path, shoe: &ShoeCrop) -> Result<bool> {
    let img = load_crop(&resolve_ref(root, &shoe.source_ref))?;
    let b = shoe.source_bbox;
    let x0 = b.x.max(0.0).floor() as u32;
    let y0 = b.y.max(0.0).floor() as u32;
    let x1 = (b.x + b.w).min(img.width() as f64).ceil().max(0.0) as u32;
    let y1 = (b.y + b.h).min(img.height() as f64).ceil().max(0.0) as u32;
    match img.sub_image(x0, y0, x1, y1) {
        Ok(cut) => {
            save_crop(&resolve_ref(root, &shoe.crop_ref), &cut)?;
            Ok(true)
        }
        Err(_) => Ok(false),
    }
}

/// Cuts every selected shoe out of its frame crop and writes it next to the
/// body crop. Shoes whose box lies outside the crop are dropped.
pub fn write_shoe_crops(scenes: &mut [SceneRecord], crop_root: &Path) -> Result<()> {
    let kept: Vec<bool> = scenes
        .par_iter()
        .map(|s| match &s.shoe_crop {
            Some(shoe) => cut_shoe(crop_root, shoe),
            None => Ok(false),
        })
        .collect::<Result<_>>()?;
    for (s, keep) in scenes.iter_mut().zip(kept) {
        if !keep {
            s.shoe_crop = None;
        }
    }
    Ok(())
}
