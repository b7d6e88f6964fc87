//! Leave-one-out re-identification metrics: mAP and CMC rank-n.
//!
//! Each scene queries every other scene. Gallery order is descending
//! similarity with ties broken by ascending scene id, so reports are
//! reproducible. Queries with no same-runner gallery entry are excluded.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{EvalReport, FeatureBundle, QueryResult, SceneRecord, SimilarityMatrix};
use crate::error::{Error, Result};
use crate::similarity::{build_matrix, FusionWeights, LapFilter, Method};

pub const PROTOCOL: &str =
    "leave-one-out; gallery sorted by descending similarity, ties by ascending scene_id; queries without a same-runner gallery scene excluded";

/// `(1/R) * sum_k precision@k * rel_k` over a ranked relevance list.
pub fn average_precision(relevance: &[bool]) -> Result<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &rel) in relevance.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(Error::NoPositives);
    }
    Ok(sum / hits as f64)
}

fn ranked_gallery(m: &SimilarityMatrix, q: usize) -> Vec<usize> {
    let mut gallery: Vec<usize> = (0..m.len()).filter(|&j| j != q).collect();
    gallery.sort_by(|&a, &b| {
        m.values[q][b]
            .partial_cmp(&m.values[q][a])
            .unwrap_or(Ordering::Equal)
            .then_with(|| m.scene_ids[a].cmp(&m.scene_ids[b]))
    });
    gallery
}

pub fn evaluate(
    m: &SimilarityMatrix,
    labels: &BTreeMap<String, String>,
    ranks: &[usize],
) -> Result<EvalReport> {
    m.validate()?;
    let ids: Vec<&String> = m
        .scene_ids
        .iter()
        .map(|id| {
            labels
                .get(id)
                .ok_or_else(|| Error::LabelMissing(id.clone()))
        })
        .collect::<Result<_>>()?;

    // Per query: (AP, positives, rank of the first correct match) or excluded.
    let per: Vec<Option<(f64, usize, usize)>> = (0..m.len())
        .into_par_iter()
        .map(|q| {
            let rel: Vec<bool> = ranked_gallery(m, q)
                .into_iter()
                .map(|j| ids[j] == ids[q])
                .collect();
            let positives = rel.iter().filter(|&&r| r).count();
            if positives == 0 {
                return Ok(None);
            }
            let first = rel.iter().position(|&r| r).expect("has positives") + 1;
            Ok(Some((average_precision(&rel)?, positives, first)))
        })
        .collect::<Result<_>>()?;

    let mut per_query = Vec::new();
    let mut excluded = Vec::new();
    let mut firsts = Vec::new();
    for (q, r) in per.into_iter().enumerate() {
        match r {
            Some((ap, num_positives, first)) => {
                per_query.push(QueryResult {
                    scene_id: m.scene_ids[q].clone(),
                    ap,
                    num_positives,
                });
                firsts.push(first);
            }
            None => excluded.push(m.scene_ids[q].clone()),
        }
    }
    let nq = per_query.len();
    let frac = |n: usize| {
        if nq == 0 {
            0.0
        } else {
            firsts.iter().filter(|&&f| f <= n).count() as f64 / nq as f64
        }
    };
    let map_score = if nq == 0 {
        0.0
    } else {
        per_query.iter().map(|q| q.ap).sum::<f64>() / nq as f64
    };
    Ok(EvalReport {
        map_score,
        rank1: frac(1),
        rank5: frac(5),
        cmc: ranks.iter().map(|&n| (n, frac(n))).collect(),
        num_queries: nq,
        empty: nq == 0,
        per_query,
        excluded_queries: excluded,
    })
}

/// Plain-text table with the mAP / Rank-1 / Rank-5 columns.
pub fn format_table(label: &str, r: &EvalReport) -> String {
    format!(
        "{:<24} {:>7} {:>7} {:>7}\n{:<24} {:>7.3} {:>7.3} {:>7.3}\n",
        "method", "mAP", "Rank-1", "Rank-5", label, r.map_score, r.rank1, r.rank5
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub best_lambda: f64,
    pub curve: Vec<(f64, f64)>,
}

/// Evaluates mAP of `embed_with_color(embed_name, lambda)` for every lambda
/// in `grid`; the best lambda is the smallest one reaching the maximum.
pub fn lambda_sweep(
    scenes: &[SceneRecord],
    bundles: &[FeatureBundle],
    embed_name: &str,
    grid: &[f64],
    w: &FusionWeights,
    f: &LapFilter,
    labels: &BTreeMap<String, String>,
) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(Error::InvalidValue("lambda grid is empty".into()));
    }
    if let Some(&l) = grid.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(Error::LambdaOutOfRange(l));
    }
    let mut curve = Vec::with_capacity(grid.len());
    for &l in grid {
        let method = Method::EmbedWithColor(embed_name.to_string(), Some(l));
        let m = build_matrix(scenes, bundles, &method, w, f)?;
        curve.push((l, evaluate(&m, labels, &[1, 5])?.map_score));
    }
    let best = curve
        .iter()
        .copied()
        .fold(None::<(f64, f64)>, |best, (l, s)| match best {
            Some((bl, bs)) if bs > s || (bs == s && bl <= l) => Some((bl, bs)),
            _ => Some((l, s)),
        })
        .expect("non-empty grid");
    Ok(SweepResult {
        best_lambda: best.0,
        curve,
    })
}

/// Parses `start:stop:step` (inclusive) into lambda values.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || {
        Error::InvalidValue(format!(
            "bad grid {spec:?}; expected start:stop:step or a,b,c"
        ))
    };
    if !spec.contains(':') {
        return spec
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
            .collect();
    }
    let parts: Vec<f64> = spec
        .split(':')
        .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let [start, stop, step] = parts[..] else {
        return Err(bad());
    };
    if step.is_nan() || step <= 0.0 || stop < start {
        return Err(bad());
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n)
        .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
        .collect())
}
