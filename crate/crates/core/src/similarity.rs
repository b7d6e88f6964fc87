//! Pairwise scene similarity: cosine for embeddings, Pearson correlation
//! for color histograms, convex fusions of the two, and the lap-time filter
//! that zeroes pairs of scenes starting too far apart in the same video.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{ColorHistogram, FeatureBundle, SceneRecord, SimilarityMatrix};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionWeights {
    /// Weight on the embedding similarity when mixing it with color.
    pub lambda: f64,
    pub body_color_w: f64,
    pub shoe_color_w: f64,
    pub hhcl_runner_w: f64,
    pub hhcl_shoe_w: f64,
}

impl Default for FusionWeights {
    fn default() -> Self {
        Self {
            lambda: 0.85,
            body_color_w: 0.9,
            shoe_color_w: 0.1,
            hhcl_runner_w: 0.75,
            hhcl_shoe_w: 0.25,
        }
    }
}

impl FusionWeights {
    pub fn validate(&self) -> Result<()> {
        check_lambda(self.lambda)?;
        let pair_ok = |a: f64, b: f64| a >= 0.0 && b >= 0.0 && (a + b - 1.0).abs() <= 1e-12;
        if !pair_ok(self.body_color_w, self.shoe_color_w) {
            return Err(Error::InvalidConfig(
                "fusion: body_color_w + shoe_color_w must equal 1".into(),
            ));
        }
        if !pair_ok(self.hhcl_runner_w, self.hhcl_shoe_w) {
            return Err(Error::InvalidConfig(
                "fusion: hhcl_runner_w + hhcl_shoe_w must equal 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LapFilter {
    /// Lap-time threshold in frames (3600 frames is 60 s at 60 fps).
    pub th: u64,
    pub enabled: bool,
}

impl Default for LapFilter {
    fn default() -> Self {
        Self {
            th: 3600,
            enabled: true,
        }
    }
}

impl LapFilter {
    pub fn validate(&self) -> Result<()> {
        if self.th == 0 {
            return Err(Error::InvalidConfig("lap filter: th must be > 0".into()));
        }
        Ok(())
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::LambdaOutOfRange(lambda));
    }
    Ok(())
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::LengthMismatch(u.len(), v.len()));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Pearson correlation of two histograms.
pub fn hist_correlation(h1: &ColorHistogram, h2: &ColorHistogram) -> Result<f64> {
    pearson(h1.bins(), h2.bins())
}

pub(crate) fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Body/shoe color mix; falls back to body alone when either scene has no shoe.
pub fn color_similarity(a: &FeatureBundle, b: &FeatureBundle, w: &FusionWeights) -> Result<f64> {
    let body = hist_correlation(&a.body_hist, &b.body_hist)?;
    match (&a.shoe_hist, &b.shoe_hist) {
        (Some(sa), Some(sb)) => {
            Ok(w.body_color_w * body + w.shoe_color_w * hist_correlation(sa, sb)?)
        }
        _ => Ok(body),
    }
}

/// `lambda * sim_g + (1 - lambda) * sim_c`.
pub fn fuse(sim_g: f64, sim_c: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(lambda * sim_g + (1.0 - lambda) * sim_c)
}

/// Runner/shoe embedding mix; runner only when the shoe similarity is absent.
pub fn hhcl_fuse(sim_runner: f64, sim_shoe: Option<f64>, w: &FusionWeights) -> f64 {
    match sim_shoe {
        Some(s) => w.hhcl_runner_w * sim_runner + w.hhcl_shoe_w * s,
        None => sim_runner,
    }
}

/// True when a pair's start frames are more than `th` apart.
pub fn lap_filtered(start_q: u64, start_c: u64, f: &LapFilter) -> bool {
    f.enabled && start_q.abs_diff(start_c) > f.th
}

#[derive(Clone, Debug, PartialEq)]
pub enum Method {
    ColorOnly,
    ColorWithShoes,
    EmbedOnly(String),
    /// Embedding fused with body+shoe color; `None` takes lambda from the weights.
    EmbedWithColor(String, Option<f64>),
    HhclWithShoes(String, String),
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::ColorOnly => write!(f, "color_only"),
            Method::ColorWithShoes => write!(f, "color_with_shoes"),
            Method::EmbedOnly(n) => write!(f, "embed_only({n})"),
            Method::EmbedWithColor(n, None) => write!(f, "embed_with_color({n})"),
            Method::EmbedWithColor(n, Some(l)) => write!(f, "embed_with_color({n},{l})"),
            Method::HhclWithShoes(r, s) => write!(f, "hhcl_with_shoes({r},{s})"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidValue(format!("unknown similarity method {s:?}"));
        let (name, args) = match s.split_once('(') {
            Some((n, rest)) => {
                let inner = rest.strip_suffix(')').ok_or_else(bad)?;
                (n, inner.split(',').map(str::trim).collect::<Vec<_>>())
            }
            None => (s, Vec::new()),
        };
        match (name, args.as_slice()) {
            ("color_only", []) => Ok(Method::ColorOnly),
            ("color_with_shoes", []) => Ok(Method::ColorWithShoes),
            ("embed_only", []) => Ok(Method::EmbedOnly("gruae".into())),
            ("embed_only", [n]) => Ok(Method::EmbedOnly(n.to_string())),
            ("embed_with_color", []) => Ok(Method::EmbedWithColor("gruae".into(), None)),
            ("embed_with_color", [n]) => Ok(Method::EmbedWithColor(n.to_string(), None)),
            ("embed_with_color", [n, l]) => {
                let l: f64 = l.parse().map_err(|_| bad())?;
                check_lambda(l)?;
                Ok(Method::EmbedWithColor(n.to_string(), Some(l)))
            }
            ("hhcl_with_shoes", []) => Ok(Method::HhclWithShoes(
                "hhcl_runner".into(),
                "hhcl_shoe".into(),
            )),
            ("hhcl_with_shoes", [r, sh]) => {
                Ok(Method::HhclWithShoes(r.to_string(), sh.to_string()))
            }
            _ => Err(bad()),
        }
    }
}

fn embedding<'a>(b: &'a FeatureBundle, name: &str) -> Result<&'a [f64]> {
    b.embeddings
        .get(name)
        .map(Vec::as_slice)
        .ok_or_else(|| Error::MissingFeature {
            scene_id: b.scene_id.clone(),
            feature: name.to_string(),
        })
}

/// Similarity of one pair under `method`, before lap filtering.
pub fn pair_similarity(
    a: &FeatureBundle,
    b: &FeatureBundle,
    method: &Method,
    w: &FusionWeights,
) -> Result<f64> {
    match method {
        Method::ColorOnly => hist_correlation(&a.body_hist, &b.body_hist),
        Method::ColorWithShoes => color_similarity(a, b, w),
        Method::EmbedOnly(n) => cosine(embedding(a, n)?, embedding(b, n)?),
        Method::EmbedWithColor(n, l) => {
            let g = cosine(embedding(a, n)?, embedding(b, n)?)?;
            fuse(g, color_similarity(a, b, w)?, l.unwrap_or(w.lambda))
        }
        Method::HhclWithShoes(r, s) => {
            let runner = cosine(embedding(a, r)?, embedding(b, r)?)?;
            let shoe = match (a.embeddings.get(s), b.embeddings.get(s)) {
                (Some(x), Some(y)) => Some(cosine(x, y)?),
                _ => None,
            };
            Ok(hhcl_fuse(runner, shoe, w))
        }
    }
}

fn method_tag(method: &Method, w: &FusionWeights, f: &LapFilter) -> String {
    let mut tag = method.to_string();
    match method {
        Method::ColorOnly | Method::EmbedOnly(_) => {}
        Method::ColorWithShoes => {
            tag += &format!(";body_w={};shoe_w={}", w.body_color_w, w.shoe_color_w)
        }
        Method::EmbedWithColor(_, l) => {
            tag += &format!(
                ";lambda={};body_w={};shoe_w={}",
                l.unwrap_or(w.lambda),
                w.body_color_w,
                w.shoe_color_w
            )
        }
        Method::HhclWithShoes(..) => {
            tag += &format!(";runner_w={};shoe_w={}", w.hhcl_runner_w, w.hhcl_shoe_w)
        }
    }
    if f.enabled {
        tag += &format!(";lap_th={}", f.th);
    } else {
        tag += ";lap_off";
    }
    tag
}

/// Pairwise similarity matrix over `scenes` (in the given order). Pairs from
/// the same video whose start frames differ by more than the lap threshold
/// are set to exactly 0; the diagonal is 0.
pub fn build_matrix(
    scenes: &[SceneRecord],
    bundles: &[FeatureBundle],
    method: &Method,
    w: &FusionWeights,
    f: &LapFilter,
) -> Result<SimilarityMatrix> {
    w.validate()?;
    f.validate()?;
    let by_id: BTreeMap<&str, &FeatureBundle> =
        bundles.iter().map(|b| (b.scene_id.as_str(), b)).collect();
    let rows: Vec<&FeatureBundle> = scenes
        .iter()
        .map(|s| {
            by_id
                .get(s.scene_id.as_str())
                .copied()
                .ok_or_else(|| Error::MissingFeature {
                    scene_id: s.scene_id.clone(),
                    feature: "bundle".into(),
                })
        })
        .collect::<Result<_>>()?;
    let n = scenes.len();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            ((i + 1)..n)
                .map(|j| {
                    let (si, sj) = (&scenes[i], &scenes[j]);
                    if si.video_id == sj.video_id && lap_filtered(si.start_frame, sj.start_frame, f)
                    {
                        return Ok(0.0);
                    }
                    pair_similarity(rows[i], rows[j], method, w)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mut values = vec![vec![0.0; n]; n];
    for (i, row) in upper.into_iter().enumerate() {
        for (k, v) in row.into_iter().enumerate() {
            let j = i + 1 + k;
            values[i][j] = v;
            values[j][i] = v;
        }
    }
    Ok(SimilarityMatrix {
        scene_ids: scenes.iter().map(|s| s.scene_id.clone()).collect(),
        values,
        method_tag: method_tag(method, w, f),
    })
}
