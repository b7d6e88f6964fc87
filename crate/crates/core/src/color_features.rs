//! Background-masked RGB histograms and per-scene feature bundles.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{
    load_crop, resolve_ref, ColorHistogram, CropImage, EmbeddingFile, FeatureBundle, SceneRecord,
    SkippedScene, HIST_LEN,
};
use crate::error::{Error, Result};

pub const BODY_SIZE: (u32, u32) = (64, 64);
pub const SHOE_SIZE: (u32, u32) = (200, 100);

const BINS: usize = 8;

/// 8 bins per channel over non-black pixels, flattened R, G, B. Raw counts.
pub fn rgb_histogram(img: &CropImage) -> Result<ColorHistogram> {
    let mut counts = [0.0f64; HIST_LEN];
    let mut foreground = 0usize;
    for px in img.pixels() {
        if *px == [0, 0, 0] {
            continue;
        }
        foreground += 1;
        for (c, &v) in px.iter().enumerate() {
            counts[c * BINS + (v as usize >> 5)] += 1.0;
        }
    }
    if foreground == 0 {
        return Err(Error::EmptyForeground);
    }
    ColorHistogram::from_counts(counts)
}

/// Nearest-neighbor resize sampling source pixel `floor((d + 0.5) * src / dst)`.
pub fn resize_nearest(img: &CropImage, width: u32, height: u32) -> CropImage {
    if img.width() == width && img.height() == height {
        return img.clone();
    }
    let map = |d: u32, src: u32, dst: u32| -> u32 {
        (((d as f64 + 0.5) * src as f64 / dst as f64) as u32).min(src - 1)
    };
    CropImage::from_fn(width, height, |x, y| {
        img.get(map(x, img.width(), width), map(y, img.height(), height))
    })
    .expect("positive target size")
}

/// Histogram of the top half of the crop after resizing to 64x64.
pub fn upper_body_hist(img: &CropImage) -> Result<ColorHistogram> {
    let (w, h) = BODY_SIZE;
    let resized = resize_nearest(img, w, h);
    rgb_histogram(&resized.sub_image(0, 0, w, h / 2)?)
}

/// Histogram of the whole shoe crop after resizing to 200x100.
pub fn shoe_hist(img: &CropImage) -> Result<ColorHistogram> {
    let (w, h) = SHOE_SIZE;
    rgb_histogram(&resize_nearest(img, w, h))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BodyHistMode {
    /// The frame nearest the middle of the scene.
    #[default]
    Representative,
    /// Mean of the per-frame upper-body histograms.
    MeanOverFrames,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub body_hist_mode: BodyHistMode,
}

/// Arithmetic mean of equally long vectors, accumulated incrementally so
/// that pooling identical vectors returns them unchanged.
pub fn mean_pool(vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = vectors
        .first()
        .ok_or(Error::InvalidValue("nothing to pool".into()))?;
    let mut mean = first.clone();
    for (i, v) in vectors.iter().enumerate().skip(1) {
        if v.len() != mean.len() {
            return Err(Error::LengthMismatch(mean.len(), v.len()));
        }
        let k = (i + 1) as f64;
        for (m, x) in mean.iter_mut().zip(v) {
            *m += (x - *m) / k;
        }
    }
    Ok(mean)
}

fn body_hist(scene: &SceneRecord, root: &Path, mode: BodyHistMode) -> Result<ColorHistogram> {
    match mode {
        BodyHistMode::Representative => {
            let f = &scene.frames[scene.representative_index()];
            upper_body_hist(&load_crop(&resolve_ref(root, &f.crop_ref))?)
        }
        BodyHistMode::MeanOverFrames => {
            let mut hists = Vec::new();
            for f in &scene.frames {
                match upper_body_hist(&load_crop(&resolve_ref(root, &f.crop_ref))?) {
                    Ok(h) => hists.push(h.bins().to_vec()),
                    Err(Error::EmptyForeground) => continue,
                    Err(e) => return Err(e),
                }
            }
            if hists.is_empty() {
                return Err(Error::EmptyForeground);
            }
            ColorHistogram::try_from(mean_pool(&hists)?)
        }
    }
}

fn scene_embeddings(scene_id: &str, files: &[EmbeddingFile]) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut out = BTreeMap::new();
    for f in files {
        let v = match (f.scenes.get(scene_id), f.frames.get(scene_id)) {
            (Some(v), _) => v.clone(),
            (None, Some(frames)) if !frames.is_empty() => mean_pool(frames)?,
            _ => continue,
        };
        if out.insert(f.name.clone(), v).is_some() {
            return Err(Error::InvalidValue(format!(
                "embedding {:?} supplied more than once",
                f.name
            )));
        }
    }
    Ok(out)
}

fn featurize_one(
    scene: &SceneRecord,
    root: &Path,
    embeddings: &[EmbeddingFile],
    cfg: &FeatureConfig,
) -> Result<std::result::Result<FeatureBundle, SkippedScene>> {
    let body = match body_hist(scene, root, cfg.body_hist_mode) {
        Ok(h) => h,
        Err(Error::EmptyForeground) => {
            return Ok(Err(SkippedScene {
                scene_id: scene.scene_id.clone(),
                reason: "EmptyForeground".into(),
            }))
        }
        Err(e) => return Err(e),
    };
    let shoe = match &scene.shoe_crop {
        Some(s) => match shoe_hist(&load_crop(&resolve_ref(root, &s.crop_ref))?) {
            Ok(h) => Some(h),
            Err(Error::EmptyForeground) => None,
            Err(e) => return Err(e),
        },
        None => None,
    };
    let emb = scene_embeddings(&scene.scene_id, embeddings)?;
    FeatureBundle::new(scene.scene_id.clone(), body, shoe, emb).map(Ok)
}

/// Builds one bundle per scene, ordered by scene id. Scenes whose body crop
/// has no foreground are reported as skipped rather than failing the batch.
pub fn featurize_scenes(
    scenes: &[SceneRecord],
    crop_root: &Path,
    embeddings: &[EmbeddingFile],
    cfg: &FeatureConfig,
) -> Result<(Vec<FeatureBundle>, Vec<SkippedScene>)> {
    let results: Vec<_> = scenes
        .par_iter()
        .map(|s| featurize_one(s, crop_root, embeddings, cfg))
        .collect::<Result<_>>()?;
    let mut bundles = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        match r {
            Ok(b) => bundles.push(b),
            Err(s) => skipped.push(s),
        }
    }
    bundles.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
    skipped.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
    Ok((bundles, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::{save_crop, BBox, SceneFrame, ShoeCrop};
    use proptest::prelude::*;

    fn bin(c: usize, v: u8) -> usize {
        c * 8 + v as usize / 32
    }

    #[test]
    fn all_black_is_empty_foreground() {
        let img = CropImage::filled(2, 2, [0, 0, 0]).unwrap();
        assert!(matches!(rgb_histogram(&img), Err(Error::EmptyForeground)));
        assert!(matches!(shoe_hist(&img), Err(Error::EmptyForeground)));
    }

    #[test]
    fn single_red_pixel() {
        let img = CropImage::from_fn(3, 3, |x, y| {
            if (x, y) == (1, 1) {
                [255, 0, 0]
            } else {
                [0, 0, 0]
            }
        })
        .unwrap();
        let h = rgb_histogram(&img).unwrap();
        let mut expected = [0.0; 24];
        expected[7] = 1.0;
        expected[8] = 1.0;
        expected[16] = 1.0;
        assert_eq!(h.bins(), &expected);
    }

    #[test]
    fn gray_128_lands_in_bin_4() {
        let img = CropImage::filled(2, 2, [128, 128, 128]).unwrap();
        let h = rgb_histogram(&img).unwrap();
        assert_eq!(h.bins()[4], 4.0);
        assert_eq!(h.bins()[12], 4.0);
        assert_eq!(h.bins()[20], 4.0);
        assert_eq!(h.total(), 12.0);
    }

    #[test]
    fn upper_body_sees_only_top_half() {
        let img = CropImage::from_fn(
            30,
            80,
            |_, y| if y < 40 { [220, 10, 10] } else { [10, 10, 220] },
        )
        .unwrap();
        let h = upper_body_hist(&img).unwrap();
        assert_eq!(h.bins()[bin(0, 220)], 32.0 * 64.0);
        assert_eq!(h.bins()[bin(2, 220)], 0.0);
    }

    #[test]
    fn upper_body_64_is_top_rows_histogram() {
        let img = CropImage::from_fn(64, 64, |x, y| [(x * 4) as u8, (y * 4) as u8, 77]).unwrap();
        let top = img.sub_image(0, 0, 64, 32).unwrap();
        assert_eq!(upper_body_hist(&img).unwrap(), rgb_histogram(&top).unwrap());
    }

    #[test]
    fn upper_body_two_tone_128_matches_per_pixel_count() {
        // Left third green, rest orange, with a black border column band.
        let img = CropImage::from_fn(128, 128, |x, y| {
            if x < 6 || y % 17 == 0 {
                [0, 0, 0]
            } else if x < 43 {
                [20, 200, 30]
            } else {
                [250, 140, 0]
            }
        })
        .unwrap();
        // Oracle: 128 -> 64 nearest picks source index 2d + 1.
        let mut expected = [0.0; 24];
        for y in 0..32u32 {
            for x in 0..64u32 {
                let p = img.get(2 * x + 1, 2 * y + 1);
                if p != [0, 0, 0] {
                    for c in 0..3 {
                        expected[bin(c, p[c])] += 1.0;
                    }
                }
            }
        }
        assert_eq!(upper_body_hist(&img).unwrap().bins(), &expected);
    }

    #[test]
    fn white_shoe_counts_every_resized_pixel() {
        let img = CropImage::filled(37, 23, [255, 255, 255]).unwrap();
        let h = shoe_hist(&img).unwrap();
        assert_eq!(h.bins()[7], 20000.0);
        assert_eq!(h.bins()[15], 20000.0);
        assert_eq!(h.bins()[23], 20000.0);
    }

    #[test]
    fn shoe_identity_resize() {
        let img = CropImage::from_fn(200, 100, |x, y| [x as u8, y as u8, (x + y) as u8]).unwrap();
        assert_eq!(shoe_hist(&img).unwrap(), rgb_histogram(&img).unwrap());
    }

    #[test]
    fn mean_pooling() {
        assert_eq!(
            mean_pool(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            vec![0.5, 0.5]
        );
        assert!(matches!(
            mean_pool(&[vec![1.0], vec![1.0, 2.0]]),
            Err(Error::LengthMismatch(1, 2))
        ));
    }

    fn scene_on_disk(root: &Path, id: &str, color: [u8; 3], shoe: bool) -> SceneRecord {
        let crop =
            CropImage::from_fn(20, 50, |x, _| if x < 3 { [0, 0, 0] } else { color }).unwrap();
        let r = format!("{id}.png");
        save_crop(&root.join(&r), &crop).unwrap();
        let shoe_crop = shoe.then(|| {
            let s = format!("{id}_shoe.png");
            save_crop(
                &root.join(&s),
                &CropImage::filled(10, 5, [250, 250, 250]).unwrap(),
            )
            .unwrap();
            ShoeCrop {
                crop_ref: s,
                confidence: 0.8,
                frame_idx: 0,
                source_ref: r.clone(),
                source_bbox: BBox::new(0.0, 0.0, 10.0, 5.0),
            }
        });
        SceneRecord {
            scene_id: id.into(),
            video_id: "v".into(),
            track_id: 0,
            start_frame: 0,
            end_frame: 0,
            frames: vec![SceneFrame {
                frame_idx: 0,
                bbox: BBox::new(0.0, 0.0, 20.0, 50.0),
                crop_ref: r,
            }],
            stride_period: None,
            two_step_indices: None,
            shoe_crop,
            runner_id: None,
        }
    }

    #[test]
    fn distinct_colors_have_disjoint_support() {
        let dir = tempfile::tempdir().unwrap();
        let scenes = vec![
            scene_on_disk(dir.path(), "c", [230, 10, 10], true),
            scene_on_disk(dir.path(), "a", [10, 230, 70], false),
            scene_on_disk(dir.path(), "b", [70, 100, 230], false),
        ];
        let (bundles, skipped) =
            featurize_scenes(&scenes, dir.path(), &[], &FeatureConfig::default()).unwrap();
        assert!(skipped.is_empty());
        let ids: Vec<_> = bundles.iter().map(|b| b.scene_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        for i in 0..3 {
            for j in (i + 1)..3 {
                let overlap = bundles[i]
                    .body_hist
                    .bins()
                    .iter()
                    .zip(bundles[j].body_hist.bins())
                    .any(|(a, b)| *a > 0.0 && *b > 0.0);
                assert!(!overlap, "{i} vs {j}");
            }
        }
        assert!(bundles[2].shoe_hist.is_some());
        assert!(bundles[0].shoe_hist.is_none());
    }

    #[test]
    fn black_scene_is_skipped_not_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let scenes = vec![
            scene_on_disk(dir.path(), "a", [0, 0, 0], false),
            scene_on_disk(dir.path(), "b", [90, 90, 90], false),
        ];
        let (bundles, skipped) =
            featurize_scenes(&scenes, dir.path(), &[], &FeatureConfig::default()).unwrap();
        assert_eq!(bundles.len(), 1);
        assert_eq!(skipped[0].scene_id, "a");
    }

    #[test]
    fn frame_embeddings_pooled_and_scene_embeddings_pass_through() {
        let dir = tempfile::tempdir().unwrap();
        let scenes = vec![scene_on_disk(dir.path(), "a", [90, 90, 90], false)];
        let mut per_frame = EmbeddingFile {
            name: "hhcl_runner".into(),
            ..Default::default()
        };
        per_frame
            .frames
            .insert("a".into(), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let mut per_scene = EmbeddingFile {
            name: "gruae".into(),
            ..Default::default()
        };
        per_scene.scenes.insert("a".into(), vec![0.25, -3.0, 1.5]);
        let (bundles, _) = featurize_scenes(
            &scenes,
            dir.path(),
            &[per_frame, per_scene],
            &FeatureConfig::default(),
        )
        .unwrap();
        assert_eq!(bundles[0].embeddings["hhcl_runner"], vec![0.5, 0.5]);
        assert_eq!(bundles[0].embeddings["gruae"], vec![0.25, -3.0, 1.5]);
    }

    fn crop() -> impl Strategy<Value = CropImage> {
        (1u32..24, 1u32..24).prop_flat_map(|(w, h)| {
            proptest::collection::vec(
                prop_oneof![Just([0u8, 0, 0]), any::<[u8; 3]>()],
                (w * h) as usize,
            )
            .prop_map(move |px| CropImage::new(w, h, px).unwrap())
        })
    }

    fn mirror(img: &CropImage) -> CropImage {
        CropImage::from_fn(img.width(), img.height(), |x, y| {
            img.get(img.width() - 1 - x, y)
        })
        .unwrap()
    }

    proptest! {
        #[test]
        fn histogram_sum_is_three_per_foreground_pixel(img in crop()) {
            let fg = img.pixels().iter().filter(|p| **p != [0, 0, 0]).count();
            match rgb_histogram(&img) {
                Ok(h) => prop_assert_eq!(h.total(), 3.0 * fg as f64),
                Err(Error::EmptyForeground) => prop_assert_eq!(fg, 0),
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            }
        }

        #[test]
        fn histogram_permutation_and_mirror_invariant(img in crop(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut px = img.pixels().to_vec();
            px.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let shuffled = CropImage::new(img.width(), img.height(), px).unwrap();
            let a = rgb_histogram(&img).ok();
            prop_assert_eq!(&a, &rgb_histogram(&shuffled).ok());
            prop_assert_eq!(&a, &rgb_histogram(&mirror(&img)).ok());
        }

        #[test]
        fn upper_body_mirror_invariant(
            h in 1u32..100,
            px in proptest::collection::vec(any::<[u8; 3]>(), 64 * 100),
        ) {
            let img = CropImage::new(64, h, px[..(64 * h) as usize].to_vec()).unwrap();
            prop_assert_eq!(upper_body_hist(&img).ok(), upper_body_hist(&mirror(&img)).ok());
        }

        #[test]
        fn pooling_identical_vectors_is_exact(v in proptest::collection::vec(-1e3f64..1e3, 1..16), k in 1usize..9) {
            prop_assert_eq!(mean_pool(&vec![v.clone(); k]).unwrap(), v);
        }
    }
}
