//! Deterministic synthetic runners: detection streams, crops and labels.
//!
//! Runners cross a single fixed camera from left to right one at a time.
//! Box width swings sinusoidally with the stride period, so every stage of
//! the pipeline has a known ground truth.

use std::collections::BTreeSet;
use std::f64::consts::TAU;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{
    save_crop, write_detections, write_json, BBox, CropImage, DetectionRecord, LabelsDoc, ShoeBox,
};
use crate::error::{Error, Result};
use crate::scene_builder::PeriodSearch;

pub const VIDEO_ID: &str = "synth";
pub const LEG_COLOR: [u8; 3] = [64, 64, 64];

const BODY_HEIGHT_FRAC: f64 = 0.6;
const ASPECT: f64 = 2.5;
const WIDTH_SWING: f64 = 0.15;
const BASE_SCORE: f64 = 0.9;
const RUNNER_PROB: f64 = 0.95;
const SHOE_CONF: f64 = 0.8;
/// Idle frames between consecutive runners, longer than any tracker max_age
/// in the defaults.
const SLOT_GAP: u64 = 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthRunner {
    pub runner_id: String,
    pub body_color: [u8; 3],
    pub shoe_color: [u8; 3],
    pub stride_period: u32,
    /// Pixels per frame.
    pub speed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub runners: Vec<SynthRunner>,
    pub laps_per_runner: u32,
    pub lap_gap: u64,
    pub frame_size: [u32; 2],
    /// Standard deviation of the detection-score jitter.
    pub noise: f64,
}

impl SynthSpec {
    /// `runners` runners with pairwise disjoint body and shoe color bins.
    pub fn demo(runners: usize, laps: u32) -> Self {
        let level = |b: usize| (b * 32 + 16) as u8;
        let runners = (0..runners)
            .map(|i| SynthRunner {
                runner_id: format!("runner{i}"),
                body_color: [level(i % 8), level((i + 3) % 8), level((i + 5) % 8)],
                shoe_color: [level((i + 6) % 8), level((i + 1) % 8), level((i + 2) % 8)],
                stride_period: 20 + 5 * (i as u32 % 6),
                speed: 4.0 + 0.5 * (i % 4) as f64,
            })
            .collect();
        Self {
            seed: 0,
            runners,
            laps_per_runner: laps,
            lap_gap: 1200,
            frame_size: [640, 360],
            noise: 0.02,
        }
    }

    fn body_height(&self) -> f64 {
        (self.frame_size[1] as f64 * BODY_HEIGHT_FRAC).round()
    }

    fn base_width(&self) -> f64 {
        (self.body_height() / ASPECT).round()
    }

    fn max_width(&self) -> f64 {
        (self.base_width() * (1.0 + WIDTH_SWING)).round()
    }

    fn crossing_frames(&self, r: &SynthRunner) -> u64 {
        ((self.frame_size[0] as f64 - self.max_width()) / r.speed).floor() as u64 + 1
    }

    /// Frames reserved per runner within a lap.
    pub fn slot(&self) -> u64 {
        self.runners
            .iter()
            .map(|r| self.crossing_frames(r))
            .max()
            .unwrap_or(0)
            + SLOT_GAP
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::SpecInvalid(m));
        if self.runners.is_empty() {
            return bad("no runners".into());
        }
        if self.laps_per_runner == 0 {
            return bad("laps_per_runner must be positive".into());
        }
        let [w, h] = self.frame_size;
        if w == 0 || h == 0 {
            return bad("frame_size must be positive".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!(
                "noise {} must be finite and non-negative",
                self.noise
            ));
        }
        if self.max_width() < 8.0 || self.max_width() >= w as f64 {
            return bad(format!("frame {w}x{h} cannot fit a runner"));
        }
        let search = PeriodSearch::default();
        let mut ids = BTreeSet::new();
        for r in &self.runners {
            if !ids.insert(&r.runner_id) {
                return bad(format!("duplicate runner_id {:?}", r.runner_id));
            }
            if !(r.speed > 0.0 && r.speed.is_finite()) {
                return bad(format!("runner {:?}: speed must be positive", r.runner_id));
            }
            let p = r.stride_period as usize;
            if p < search.min_lag || p > search.max_lag {
                return bad(format!(
                    "runner {:?}: stride_period {p} outside [{}, {}]",
                    r.runner_id, search.min_lag, search.max_lag
                ));
            }
        }
        let needed = self.slot() * self.runners.len() as u64;
        if self.lap_gap < needed {
            return bad(format!(
                "lap_gap {} < {needed} frames needed for all runners",
                self.lap_gap
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOutput {
    pub detections: Vec<DetectionRecord>,
    pub labels: LabelsDoc,
    /// Index into `spec.runners` per detection.
    pub runner_of: Vec<usize>,
}

/// Draws one crop: black side margins, body color on the upper half, dark
/// legs, shoe color along the bottom tenth.
pub fn render_crop(
    width: u32,
    height: u32,
    body: [u8; 3],
    shoe: [u8; 3],
) -> Result<(CropImage, ShoeBox)> {
    let mx = width / 8;
    let shoe_top = height - (height / 10).max(1);
    let img = CropImage::from_fn(width, height, |x, y| {
        if x < mx || x >= width - mx {
            [0, 0, 0]
        } else if y < height / 2 {
            body
        } else if y < shoe_top {
            LEG_COLOR
        } else {
            shoe
        }
    })?;
    let bbox = BBox::new(
        mx as f64,
        shoe_top as f64,
        (width - 2 * mx) as f64,
        (height - shoe_top) as f64,
    );
    Ok((
        img,
        ShoeBox {
            bbox,
            conf: SHOE_CONF,
        },
    ))
}

impl SynthOutput {
    pub fn crop(&self, spec: &SynthSpec, i: usize) -> Result<CropImage> {
        let d = &self.detections[i];
        let r = &spec.runners[self.runner_of[i]];
        Ok(render_crop(d.bbox.w as u32, d.bbox.h as u32, r.body_color, r.shoe_color)?.0)
    }
}

pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let jitter = Normal::new(0.0, spec.noise).map_err(|e| Error::SpecInvalid(e.to_string()))?;
    let h = spec.body_height();
    let y = ((spec.frame_size[1] as f64 - h) / 2.0).round();
    let base = spec.base_width();
    let slot = spec.slot();

    let mut rows = Vec::new();
    for lap in 0..spec.laps_per_runner as u64 {
        for (ri, r) in spec.runners.iter().enumerate() {
            let start = lap * spec.lap_gap + ri as u64 * slot;
            let phase = ri as f64 * 0.7 + lap as f64 * 1.3;
            for t in 0..spec.crossing_frames(r) {
                let s = (TAU * t as f64 / r.stride_period as f64 + phase).sin();
                let w = (base * (1.0 + WIDTH_SWING * s)).round();
                let x = (r.speed * t as f64).round();
                let frame = start + t;
                let score = (BASE_SCORE + jitter.sample(&mut rng)).clamp(0.0, 1.0);
                let (_, shoe) = render_crop(w as u32, h as u32, r.body_color, r.shoe_color)?;
                let det = DetectionRecord {
                    video_id: VIDEO_ID.to_string(),
                    frame_idx: frame,
                    bbox: BBox::new(x, y, w, h),
                    det_score: score,
                    runner_prob: RUNNER_PROB,
                    crop_ref: format!("crops/f{frame:07}_r{ri}.png"),
                    shoe_boxes: vec![shoe],
                };
                rows.push((frame, ri, det));
            }
        }
    }
    rows.sort_by_key(|(f, ri, _)| (*f, *ri));

    let mut labels = LabelsDoc::default();
    let mut detections = Vec::with_capacity(rows.len());
    let mut runner_of = Vec::with_capacity(rows.len());
    for (_, ri, det) in rows {
        labels
            .detections
            .insert(det.crop_ref.clone(), spec.runners[ri].runner_id.clone());
        detections.push(det);
        runner_of.push(ri);
    }
    Ok(SynthOutput {
        detections,
        labels,
        runner_of,
    })
}

/// Writes `detections.jsonl`, `labels.json` and `crops/*.png` under `dir`.
pub fn write_synth(spec: &SynthSpec, dir: &Path) -> Result<SynthOutput> {
    let out = generate(spec)?;
    write_detections(&dir.join("detections.jsonl"), &out.detections)?;
    write_json(&dir.join("labels.json"), &out.labels)?;
    (0..out.detections.len())
        .into_par_iter()
        .try_for_each(|i| {
            let img = out.crop(spec, i)?;
            save_crop(&dir.join(&out.detections[i].crop_ref), &img)
        })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::color_features::{rgb_histogram, upper_body_hist};
    use crate::scene_builder::{build_scenes, estimate_stride_period, SceneConfig};
    use crate::tracker::{run_tracker, to_track_records, TrackerConfig};

    #[test]
    fn one_runner_one_lap_is_monotone() {
        let out = generate(&SynthSpec::demo(1, 1)).unwrap();
        assert!(out.detections.len() > 100);
        let xs: Vec<f64> = out.detections.iter().map(|d| d.bbox.x).collect();
        assert!(xs.windows(2).all(|w| w[0] <= w[1]));
        let frames: Vec<u64> = out.detections.iter().map(|d| d.frame_idx).collect();
        assert!(frames.windows(2).all(|w| w[0] + 1 == w[1]));
        for d in &out.detections {
            d.validate().unwrap();
            assert!(d.bbox.x + d.bbox.w <= 640.0);
        }
    }

    #[test]
    fn same_seed_same_output() {
        let spec = SynthSpec::demo(3, 2);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let mut other = spec.clone();
        other.seed = 1;
        assert_ne!(
            generate(&spec).unwrap().detections,
            generate(&other).unwrap().detections
        );
    }

    #[test]
    fn written_files_are_byte_identical() {
        let spec = SynthSpec::demo(2, 1);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let out = write_synth(&spec, a.path()).unwrap();
        write_synth(&spec, b.path()).unwrap();
        let mut names = vec!["detections.jsonl".to_string(), "labels.json".to_string()];
        names.extend(
            out.detections
                .iter()
                .step_by(17)
                .map(|d| d.crop_ref.clone()),
        );
        for n in names {
            assert_eq!(
                std::fs::read(a.path().join(&n)).unwrap(),
                std::fs::read(b.path().join(&n)).unwrap(),
                "{n}"
            );
        }
    }

    #[test]
    fn invalid_specs() {
        let mut s = SynthSpec::demo(2, 1);
        s.runners[0].speed = 0.0;
        assert!(matches!(generate(&s), Err(Error::SpecInvalid(_))));
        let mut s = SynthSpec::demo(2, 1);
        s.runners[1].stride_period = 200;
        assert!(matches!(generate(&s), Err(Error::SpecInvalid(_))));
        let mut s = SynthSpec::demo(5, 2);
        s.lap_gap = 100;
        assert!(matches!(generate(&s), Err(Error::SpecInvalid(_))));
        let mut s = SynthSpec::demo(2, 1);
        s.runners[1].runner_id = s.runners[0].runner_id.clone();
        assert!(matches!(generate(&s), Err(Error::SpecInvalid(_))));
    }

    #[test]
    fn width_encodes_stride_period() {
        let spec = SynthSpec::demo(4, 1);
        let out = generate(&spec).unwrap();
        for (ri, r) in spec.runners.iter().enumerate() {
            let widths: Vec<f64> = out
                .detections
                .iter()
                .zip(&out.runner_of)
                .filter(|(_, &k)| k == ri)
                .map(|(d, _)| d.bbox.w)
                .collect();
            let p = estimate_stride_period(&widths, PeriodSearch::default()).unwrap();
            assert!(
                (p as i64 - r.stride_period as i64).abs() <= 1,
                "{p} vs {}",
                r.stride_period
            );
        }
    }

    #[test]
    fn crops_carry_runner_colors() {
        let spec = SynthSpec::demo(3, 1);
        let out = generate(&spec).unwrap();
        let i = out.runner_of.iter().position(|&r| r == 2).unwrap();
        let img = out.crop(&spec, i).unwrap();
        let body = upper_body_hist(&img).unwrap();
        let nonzero: Vec<usize> = (0..24).filter(|&k| body.bins()[k] > 0.0).collect();
        let c = spec.runners[2].body_color;
        assert_eq!(
            nonzero,
            vec![
                (c[0] >> 5) as usize,
                8 + (c[1] >> 5) as usize,
                16 + (c[2] >> 5) as usize
            ]
        );
        let sb = &out.detections[i].shoe_boxes[0].bbox;
        let shoe = img
            .sub_image(
                sb.x as u32,
                sb.y as u32,
                (sb.x + sb.w) as u32,
                (sb.y + sb.h) as u32,
            )
            .unwrap();
        let hist = rgb_histogram(&shoe).unwrap();
        let s = spec.runners[2].shoe_color;
        assert_eq!(
            hist.bins()[(s[0] >> 5) as usize],
            (shoe.width() * shoe.height()) as f64
        );
    }

    #[test]
    fn scene_count_is_runners_times_laps() {
        let spec = SynthSpec::demo(5, 2);
        let out = generate(&spec).unwrap();
        let tracks = run_tracker(&out.detections, &TrackerConfig::default()).unwrap();
        let records = to_track_records(&tracks, &out.detections);
        let scenes = build_scenes(&records, &SceneConfig::default(), 640.0).unwrap();
        assert_eq!(scenes.len(), 10);
        for s in &scenes {
            assert_eq!(out.labels.label_for(s).map(|_| ()), Some(()));
            let runners: BTreeSet<_> = s
                .frames
                .iter()
                .map(|f| &out.labels.detections[&f.crop_ref])
                .collect();
            assert_eq!(runners.len(), 1, "identity switch in {}", s.scene_id);
            assert!(s.two_step_indices.is_some());
        }
    }
}
