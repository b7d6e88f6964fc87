//! Deterministic inputs for the benchmarks.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use runreid_core::synth::{generate, SynthSpec};
use runreid_core::{DetectionRecord, SimilarityMatrix};

pub fn cost_matrix(rows: usize, cols: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect()
}

pub fn detections(runners: usize, laps: u32) -> Vec<DetectionRecord> {
    generate(&SynthSpec::demo(runners, laps))
        .expect("demo spec is valid")
        .detections
}

/// Symmetric matrix over `n` scenes with `ids` identities and labels.
#[allow(clippy::needless_range_loop)]
pub fn similarity(n: usize, ids: usize, seed: u64) -> (SimilarityMatrix, BTreeMap<String, String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = (0..n).map(|i| format!("s{i:04}")).collect();
    let mut values = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = rng.random_range(-1.0..1.0);
            values[i][j] = v;
            values[j][i] = v;
        }
    }
    let labels = names
        .iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), format!("r{}", i % ids)))
        .collect();
    (
        SimilarityMatrix {
            scene_ids: names,
            values,
            method_tag: "bench".into(),
        },
        labels,
    )
}
