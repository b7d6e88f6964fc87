//! Tracking-by-detection with two-stage association.
//!
//! Each frame, confirmed tracks (active and lost) are matched against
//! high-score detections on `1 - IoU`; active tracks left over get a second
//! chance against low-score detections. Tentative tracks only compete for
//! the high-score detections nobody else took. A runner that leaves the view
//! and comes back later is a new track: re-identification happens downstream.

mod assign;
mod kalman;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use assign::{assign, solve, Assignment};
pub use kalman::{kalman_predict, kalman_update, KalmanNoise, KalmanState};

use crate::data_model::{BBox, DetectionRecord, TrackFrame, TrackRecord};
use crate::error::{Error, Result};

/// Intersection over union of two boxes.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let ix = overlap(a.x, a.w, b.x, b.w);
    let iy = overlap(a.y, a.h, b.y, b.h);
    if ix <= 0.0 || iy <= 0.0 {
        return Ok(0.0);
    }
    let inter = ix * iy;
    Ok((inter / (a.area() + b.area() - inter)).clamp(0.0, 1.0))
}

/// Length of the intersection of two intervals. A contained interval
/// contributes its own length exactly.
fn overlap(a0: f64, al: f64, b0: f64, bl: f64) -> f64 {
    let (lo, hi) = (a0.max(b0), (a0 + al).min(b0 + bl));
    if lo == a0 && hi == a0 + al {
        al
    } else if lo == b0 && hi == b0 + bl {
        bl
    } else {
        hi - lo
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub high_thresh: f64,
    pub low_thresh: f64,
    /// Minimum IoU for any association; the cost gate is `1 - match_iou_min`.
    pub match_iou_min: f64,
    /// Frames a track may go unmatched before it is finished.
    pub max_age: u64,
    pub min_hits_to_confirm: u32,
    /// Detections with a lower runner probability never reach the tracker.
    pub runner_thresh: f64,
    pub noise: KalmanNoise,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            high_thresh: 0.6,
            low_thresh: 0.1,
            match_iou_min: 0.2,
            max_age: 30,
            min_hits_to_confirm: 3,
            runner_thresh: 0.5,
            noise: KalmanNoise::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("tracker: {m}")));
        if !(0.0 <= self.low_thresh
            && self.low_thresh < self.high_thresh
            && self.high_thresh <= 1.0)
        {
            return bad("need 0 <= low_thresh < high_thresh <= 1");
        }
        if !(self.match_iou_min > 0.0 && self.match_iou_min < 1.0) {
            return bad("match_iou_min must be in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.runner_thresh) {
            return bad("runner_thresh must be in [0, 1]");
        }
        let n = &self.noise;
        if !(n.position_weight > 0.0 && n.velocity_weight > 0.0 && n.measurement_scale > 0.0) {
            return bad("noise weights must be positive");
        }
        Ok(())
    }

    fn max_cost(&self) -> f64 {
        1.0 - self.match_iou_min
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackStatus {
    Tentative,
    Active,
    Lost,
    Finished,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub frame_idx: u64,
    pub bbox: BBox,
    /// Index of the detection in the input stream.
    pub det_index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Track {
    pub track_id: u64,
    pub video_id: String,
    pub state: KalmanState,
    pub status: TrackStatus,
    pub history: Vec<HistoryEntry>,
    pub frames_since_update: u64,
    pub hits: u32,
}

impl Track {
    fn predicted_box(&self) -> Option<BBox> {
        let b = self.state.bbox();
        b.validate().ok().map(|_| b)
    }

    fn update(
        &mut self,
        frame_idx: u64,
        det_index: usize,
        det: &DetectionRecord,
        cfg: &TrackerConfig,
    ) -> Result<()> {
        self.state = kalman_update(&self.state, &det.bbox, &cfg.noise)?;
        self.history.push(HistoryEntry {
            frame_idx,
            bbox: det.bbox,
            det_index,
        });
        self.frames_since_update = 0;
        self.hits += 1;
        Ok(())
    }

    pub fn is_confirmed(&self, cfg: &TrackerConfig) -> bool {
        self.hits >= cfg.min_hits_to_confirm.max(1)
    }
}

/// Stateful per-video tracker.
#[derive(Clone, Debug)]
pub struct Tracker {
    cfg: TrackerConfig,
    video_id: Option<String>,
    current_frame: Option<u64>,
    next_id: u64,
    tracks: Vec<Track>,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            video_id: None,
            current_frame: None,
            next_id: 1,
            tracks: Vec::new(),
        })
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    /// Advances every live track to `frame`, finishing those that aged out.
    fn advance_to(&mut self, frame: u64) -> Result<()> {
        let steps = match self.current_frame {
            Some(cur) if frame < cur => {
                return Err(Error::NonMonotoneFrames {
                    line: 0,
                    previous: cur,
                    current: frame,
                })
            }
            Some(cur) => frame - cur,
            None => 0,
        };
        self.current_frame = Some(frame);
        let max_age = self.cfg.max_age;
        for t in self
            .tracks
            .iter_mut()
            .filter(|t| t.status != TrackStatus::Finished)
        {
            for _ in 0..steps.min(max_age + 1) {
                t.state = kalman_predict(&t.state, &self.cfg.noise);
            }
            t.frames_since_update += steps;
            if t.frames_since_update > max_age {
                t.status = TrackStatus::Finished;
            }
        }
        Ok(())
    }

    fn associate(
        &mut self,
        track_idx: &[usize],
        det_idx: &[usize],
        dets: &[(usize, &DetectionRecord)],
        frame: u64,
    ) -> Result<(Vec<usize>, Vec<usize>)> {
        if track_idx.is_empty() || det_idx.is_empty() {
            return Ok((track_idx.to_vec(), det_idx.to_vec()));
        }
        let cost: Vec<Vec<f64>> = track_idx
            .iter()
            .map(|&ti| {
                let pred = self.tracks[ti].predicted_box();
                det_idx
                    .iter()
                    .map(|&di| match pred {
                        Some(p) => iou(&p, &dets[di].1.bbox).map(|v| 1.0 - v),
                        None => Ok(1.0),
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?;
        let a = assign(&cost, self.cfg.max_cost())?;
        for &(r, c) in &a.matches {
            let (global, det) = dets[det_idx[c]];
            self.tracks[track_idx[r]].update(frame, global, det, &self.cfg)?;
        }
        Ok((
            a.unmatched_rows.iter().map(|&r| track_idx[r]).collect(),
            a.unmatched_cols.iter().map(|&c| det_idx[c]).collect(),
        ))
    }

    /// Processes the detections of one frame. Each entry carries the
    /// detection's index in the input stream.
    pub fn track_frame(&mut self, dets: &[(usize, &DetectionRecord)]) -> Result<()> {
        let Some(&(_, first)) = dets.first() else {
            return Ok(());
        };
        let frame = first.frame_idx;
        if dets
            .iter()
            .any(|(_, d)| d.frame_idx != frame || d.video_id != first.video_id)
        {
            return Err(Error::MixedFrameInput);
        }
        match &self.video_id {
            Some(v) if *v != first.video_id => return Err(Error::MixedFrameInput),
            None => self.video_id = Some(first.video_id.clone()),
            _ => {}
        }
        for (_, d) in dets {
            d.bbox.validate()?;
        }
        self.advance_to(frame)?;

        let cfg = &self.cfg;
        let high: Vec<usize> = (0..dets.len())
            .filter(|&i| dets[i].1.det_score >= cfg.high_thresh)
            .collect();
        let low: Vec<usize> = (0..dets.len())
            .filter(|&i| (cfg.low_thresh..cfg.high_thresh).contains(&dets[i].1.det_score))
            .collect();

        let pool = |status: &[TrackStatus]| -> Vec<usize> {
            (0..self.tracks.len())
                .filter(|&i| status.contains(&self.tracks[i].status))
                .collect()
        };
        let confirmed = pool(&[TrackStatus::Active, TrackStatus::Lost]);
        let tentative = pool(&[TrackStatus::Tentative]);

        // Stage 1: confirmed tracks vs high-score detections.
        let (left_tracks, left_high) = self.associate(&confirmed, &high, dets, frame)?;
        for &ti in &confirmed {
            if !left_tracks.contains(&ti) {
                self.tracks[ti].status = TrackStatus::Active;
            }
        }

        // Stage 2: still-active tracks vs low-score detections.
        let active_left: Vec<usize> = left_tracks
            .iter()
            .copied()
            .filter(|&ti| self.tracks[ti].status == TrackStatus::Active)
            .collect();
        let (still_left, _) = self.associate(&active_left, &low, dets, frame)?;
        for ti in still_left {
            self.tracks[ti].status = TrackStatus::Lost;
        }

        // Stage 3: tentative tracks vs remaining high-score detections.
        let (dead, spawn) = self.associate(&tentative, &left_high, dets, frame)?;
        for &ti in &tentative {
            let cfg = &self.cfg;
            let t = &mut self.tracks[ti];
            if dead.contains(&ti) {
                t.status = TrackStatus::Finished;
            } else if t.is_confirmed(cfg) {
                t.status = TrackStatus::Active;
            }
        }

        for di in spawn {
            let (global, det) = dets[di];
            let state = KalmanState::initiate(&det.bbox, &self.cfg.noise)?;
            let mut t = Track {
                track_id: self.next_id,
                video_id: det.video_id.clone(),
                state,
                status: TrackStatus::Tentative,
                history: vec![HistoryEntry {
                    frame_idx: frame,
                    bbox: det.bbox,
                    det_index: global,
                }],
                frames_since_update: 0,
                hits: 1,
            };
            if t.is_confirmed(&self.cfg) {
                t.status = TrackStatus::Active;
            }
            self.next_id += 1;
            self.tracks.push(t);
        }
        Ok(())
    }

    /// Ends the stream: every track becomes finished and only tracks that
    /// were ever confirmed are returned, ordered by id.
    pub fn finish(mut self) -> Vec<Track> {
        let cfg = self.cfg;
        self.tracks.retain(|t| t.is_confirmed(&cfg));
        for t in &mut self.tracks {
            t.status = TrackStatus::Finished;
        }
        self.tracks.sort_by_key(|t| t.track_id);
        self.tracks
    }
}

/// Runs one tracker per video over a frame-sorted detection stream.
/// Detections below the runner-probability threshold are dropped first.
/// Output is ordered by `(video_id, track_id)`; ids restart at 1 per video.
pub fn run_tracker(dets: &[DetectionRecord], cfg: &TrackerConfig) -> Result<Vec<Track>> {
    cfg.validate()?;
    let mut per_video: BTreeMap<&str, Vec<(usize, &DetectionRecord)>> = BTreeMap::new();
    for (i, d) in dets.iter().enumerate() {
        if d.runner_prob >= cfg.runner_thresh {
            per_video
                .entry(d.video_id.as_str())
                .or_default()
                .push((i, d));
        }
    }
    let mut out = Vec::new();
    for (_, stream) in per_video {
        let mut tracker = Tracker::new(cfg.clone())?;
        for frame in stream.chunk_by(|a, b| a.1.frame_idx == b.1.frame_idx) {
            tracker.track_frame(frame)?;
        }
        out.extend(tracker.finish());
    }
    Ok(out)
}

/// Joins track histories back to their detections for `tracks.json`.
pub fn to_track_records(tracks: &[Track], dets: &[DetectionRecord]) -> Vec<TrackRecord> {
    tracks
        .iter()
        .map(|t| TrackRecord {
            track_id: t.track_id,
            video_id: t.video_id.clone(),
            frames: t
                .history
                .iter()
                .map(|h| {
                    let d = &dets[h.det_index];
                    TrackFrame {
                        frame_idx: h.frame_idx,
                        bbox: h.bbox,
                        crop_ref: d.crop_ref.clone(),
                        shoe_boxes: d.shoe_boxes.clone(),
                    }
                })
                .collect(),
        })
        .collect()
}
