//! One function per pipeline stage. Each reads its inputs from disk and
//! writes its artifact, so `pipeline` and the individual subcommands share
//! exactly the same code path.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use runreid_core::color_features::featurize_scenes;
use runreid_core::evaluator::{evaluate, lambda_sweep, parse_grid, PROTOCOL};
use runreid_core::scene_builder::{build_scenes, infer_frame_width, write_shoe_crops};
use runreid_core::similarity::build_matrix;
use runreid_core::synth::{write_synth, SynthOutput, SynthSpec};
use runreid_core::tracker::{run_tracker, to_track_records};
use runreid_core::{
    read_detections, read_embeddings, read_features, read_json, write_features, write_json,
    EmbeddingFile, Error, FeaturesDoc, LabelsDoc, PipelineConfig, ScenesDoc, SimilarityMatrix,
    TracksDoc,
};
use serde_json::Value;

use crate::artifacts::{EvalDoc, SimilarityDoc, SweepDoc};

fn echo(cfg: &PipelineConfig) -> Value {
    serde_json::to_value(cfg).expect("config serializes")
}

fn absolute_dir(dir: &Path) -> PathBuf {
    let dir = if dir.as_os_str().is_empty() {
        Path::new(".")
    } else {
        dir
    };
    fs::canonicalize(dir).unwrap_or_else(|_| dir.to_path_buf())
}

/// Crops resolve against `crop_root` when given, else the detections file's
/// directory.
pub fn track(
    detections: &Path,
    crop_root: Option<&Path>,
    cfg: &PipelineConfig,
    out: &Path,
) -> Result<TracksDoc> {
    let dets = read_detections(detections)?;
    let tracks = run_tracker(&dets, &cfg.tracker)?;
    let root = crop_root.map_or_else(
        || absolute_dir(detections.parent().unwrap_or(Path::new(""))),
        absolute_dir,
    );
    let doc = TracksDoc {
        config: Some(echo(cfg)),
        crop_root: root.display().to_string(),
        tracks: to_track_records(&tracks, &dets),
    };
    write_json(out, &doc)?;
    Ok(doc)
}

pub fn scenes(tracks: &Path, cfg: &PipelineConfig, out: &Path) -> Result<ScenesDoc> {
    let doc: TracksDoc = read_json(tracks)?;
    // Without tracks the width is irrelevant.
    let frame_width = cfg
        .frame_width
        .or_else(|| infer_frame_width(&doc.tracks))
        .unwrap_or(1.0);
    let mut scenes = build_scenes(&doc.tracks, &cfg.scenes, frame_width)?;
    write_shoe_crops(&mut scenes, Path::new(&doc.crop_root))?;
    let doc = ScenesDoc {
        config: Some(echo(cfg)),
        crop_root: doc.crop_root,
        scenes,
    };
    write_json(out, &doc)?;
    Ok(doc)
}

/// Embedding sources: files, or directories whose `*.json` files are read in
/// name order.
pub fn embedding_files(paths: &[PathBuf]) -> Result<Vec<EmbeddingFile>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = fs::read_dir(p)
                .with_context(|| format!("reading {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|e| e.extension().is_some_and(|x| x == "json"))
                .collect();
            entries.sort();
            files.extend(entries);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files
        .iter()
        .map(|f| read_embeddings(f))
        .collect::<Result<_, _>>()?)
}

pub fn featurize(
    scenes: &Path,
    embeddings: &[PathBuf],
    cfg: &PipelineConfig,
    out: &Path,
) -> Result<FeaturesDoc> {
    let doc: ScenesDoc = read_json(scenes)?;
    let emb = embedding_files(embeddings)?;
    let (bundles, skipped) =
        featurize_scenes(&doc.scenes, Path::new(&doc.crop_root), &emb, &cfg.features)?;
    let doc = FeaturesDoc {
        config: Some(echo(cfg)),
        scenes: bundles,
        skipped,
    };
    write_features(out, &doc)?;
    Ok(doc)
}

/// Scenes that have a feature bundle, in scenes.json order.
fn featured(scenes: &ScenesDoc, features: &FeaturesDoc) -> Vec<runreid_core::SceneRecord> {
    let ids: std::collections::BTreeSet<&str> = features
        .scenes
        .iter()
        .map(|b| b.scene_id.as_str())
        .collect();
    scenes
        .scenes
        .iter()
        .filter(|s| ids.contains(s.scene_id.as_str()))
        .cloned()
        .collect()
}

pub fn reid(
    scenes: &Path,
    features: &Path,
    cfg: &PipelineConfig,
    out: &Path,
) -> Result<SimilarityDoc> {
    let sdoc: ScenesDoc = read_json(scenes)?;
    let fdoc = read_features(features)?;
    let kept = featured(&sdoc, &fdoc);
    let matrix = build_matrix(&kept, &fdoc.scenes, &cfg.method()?, &cfg.fusion, &cfg.lap)?;
    let doc = SimilarityDoc {
        config: Some(echo(cfg)),
        matrix,
    };
    write_json(out, &doc)?;
    Ok(doc)
}

/// Runner label per scene id. With scenes available, crop-level labels are
/// resolved by majority vote; otherwise only scene-level labels apply.
fn scene_labels(
    labels: &LabelsDoc,
    scenes: Option<&ScenesDoc>,
    ids: &[String],
) -> BTreeMap<String, String> {
    let by_id: BTreeMap<&str, &runreid_core::SceneRecord> = scenes
        .map(|d| d.scenes.iter().map(|s| (s.scene_id.as_str(), s)).collect())
        .unwrap_or_default();
    ids.iter()
        .filter_map(|id| {
            let label = match by_id.get(id.as_str()) {
                Some(s) => labels.label_for(s),
                None => labels.scenes.get(id).cloned(),
            };
            label.map(|l| (id.clone(), l))
        })
        .collect()
}

pub fn eval(
    similarity: &Path,
    labels: &Path,
    scenes: Option<&Path>,
    cfg: &PipelineConfig,
    out: &Path,
) -> Result<EvalDoc> {
    let sim: SimilarityDoc = read_json(similarity)?;
    let labels: LabelsDoc = read_json(labels)?;
    let sdoc: Option<ScenesDoc> = scenes.map(read_json).transpose()?;
    let m: &SimilarityMatrix = &sim.matrix;
    let map = scene_labels(&labels, sdoc.as_ref(), &m.scene_ids);
    let report = evaluate(m, &map, &cfg.ranks)?;
    let doc = EvalDoc {
        config: echo(cfg),
        protocol: PROTOCOL.to_string(),
        method_tag: m.method_tag.clone(),
        report,
    };
    write_json(out, &doc)?;
    Ok(doc)
}

pub fn sweep(
    scenes: &Path,
    features: &Path,
    labels: &Path,
    embedding: &str,
    cfg: &PipelineConfig,
    out: &Path,
) -> Result<SweepDoc> {
    let sdoc: ScenesDoc = read_json(scenes)?;
    let fdoc = read_features(features)?;
    let labels: LabelsDoc = read_json(labels)?;
    let kept = featured(&sdoc, &fdoc);
    let ids: Vec<String> = kept.iter().map(|s| s.scene_id.clone()).collect();
    let map = scene_labels(&labels, Some(&sdoc), &ids);
    let grid = parse_grid(&cfg.grid)?;
    let result = lambda_sweep(
        &kept,
        &fdoc.scenes,
        embedding,
        &grid,
        &cfg.fusion,
        &cfg.lap,
        &map,
    )?;
    let doc = SweepDoc {
        config: echo(cfg),
        embedding: embedding.to_string(),
        metric: "mAP".into(),
        result,
    };
    write_json(out, &doc)?;
    Ok(doc)
}

/// Reads a synthetic spec from JSON or TOML (by extension).
pub fn read_spec(path: &Path) -> Result<SynthSpec> {
    if path.extension().is_some_and(|e| e == "toml") {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Io {
                path: path.to_path_buf(),
                source: e,
            },
        })?;
        return toml::from_str(&text)
            .map_err(|e| Error::SpecInvalid(e.message().to_string()).into());
    }
    Ok(read_json(path)?)
}

pub fn synth(spec: &Path, out: &Path) -> Result<SynthOutput> {
    Ok(write_synth(&read_spec(spec)?, out)?)
}

/// File names used by `pipeline` inside its output directory.
pub const TRACKS: &str = "tracks.json";
pub const SCENES: &str = "scenes.json";
pub const FEATURES: &str = "features.json";
pub const SIMILARITY: &str = "similarity.json";
pub const EVAL: &str = "eval.json";

pub struct PipelineInputs<'a> {
    pub detections: &'a Path,
    pub labels: Option<&'a Path>,
    pub embeddings: &'a [PathBuf],
    pub crop_root: Option<&'a Path>,
}

/// All stages in order; evaluation runs only when labels are given.
pub fn pipeline(
    inp: &PipelineInputs<'_>,
    cfg: &PipelineConfig,
    out_dir: &Path,
) -> Result<Option<EvalDoc>> {
    let p = |name: &str| out_dir.join(name);
    track(inp.detections, inp.crop_root, cfg, &p(TRACKS))?;
    scenes(&p(TRACKS), cfg, &p(SCENES))?;
    featurize(&p(SCENES), inp.embeddings, cfg, &p(FEATURES))?;
    reid(&p(SCENES), &p(FEATURES), cfg, &p(SIMILARITY))?;
    inp.labels
        .map(|l| eval(&p(SIMILARITY), l, Some(&p(SCENES)), cfg, &p(EVAL)))
        .transpose()
}
