use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use runreid_core::synth::SynthSpec;
use runreid_core::{read_json, write_json, EmbeddingFile, ScenesDoc};
use serde_json::Value;

fn runreid(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_runreid"));
    for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("RUNREID_")) {
        cmd.env_remove(k);
    }
    cmd.args(args)
        .envs(env.iter().copied())
        .output()
        .expect("runreid runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

/// Writes a synthetic dataset and returns its directory.
fn synth(root: &Path, spec: &SynthSpec) -> PathBuf {
    write_json(&root.join("spec.json"), spec).unwrap();
    let data = root.join("data");
    ok(&runreid(
        &[
            "synth",
            "--spec",
            s(&root.join("spec.json")),
            "--out",
            s(&data),
        ],
        &[],
    ));
    data
}

#[test]
fn missing_detections_is_usage_error() {
    let out = runreid(&["track", "--out", "tracks.json"], &[]);
    assert_eq!(out.status.code(), Some(2));
    let out = runreid(&["pipeline", "--out", "x"], &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn lambda_out_of_range_is_domain_error() {
    let out = runreid(
        &[
            "reid",
            "--scenes",
            "s.json",
            "--features",
            "f.json",
            "--lambda",
            "1.5",
            "--out",
            "o.json",
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1);
    let err: Value = serde_json::from_str(stderr.trim()).unwrap();
    assert_eq!(err["error"], "LambdaOutOfRange");
}

#[test]
fn missing_input_file_reports_kind() {
    let dir = tempfile::tempdir().unwrap();
    let out = runreid(
        &[
            "track",
            "--detections",
            s(&dir.path().join("nope.jsonl")),
            "--out",
            s(&dir.path().join("t.json")),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "MissingFile");
}

#[test]
fn pipeline_matches_subcommands_with_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = synth(root, &SynthSpec::demo(3, 2));
    let det = data.join("detections.jsonl");
    let labels = data.join("labels.json");
    let cfg = root.join("cfg.toml");
    std::fs::write(&cfg, "[tracker]\nmax_age = 25\n[lap]\nth = 3000\n").unwrap();

    let p = root.join("pipe");
    ok(&runreid(
        &[
            "pipeline",
            "--config",
            s(&cfg),
            "--detections",
            s(&det),
            "--labels",
            s(&labels),
            "--out",
            s(&p),
        ],
        &[],
    ));

    let q = root.join("seq");
    let f = |n: &str| q.join(n);
    let common = ["--config", s(&cfg)];
    let run = |args: &[&str]| {
        let mut all: Vec<&str> = args.to_vec();
        all.extend_from_slice(&common);
        ok(&runreid(&all, &[]));
    };
    run(&[
        "track",
        "--detections",
        s(&det),
        "--out",
        s(&f("tracks.json")),
    ]);
    run(&[
        "scenes",
        "--tracks",
        s(&f("tracks.json")),
        "--out",
        s(&f("scenes.json")),
    ]);
    run(&[
        "featurize",
        "--scenes",
        s(&f("scenes.json")),
        "--out",
        s(&f("features.json")),
    ]);
    run(&[
        "reid",
        "--scenes",
        s(&f("scenes.json")),
        "--features",
        s(&f("features.json")),
        "--out",
        s(&f("similarity.json")),
    ]);
    run(&[
        "eval",
        "--similarity",
        s(&f("similarity.json")),
        "--labels",
        s(&labels),
        "--scenes",
        s(&f("scenes.json")),
        "--out",
        s(&f("eval.json")),
    ]);
    for name in [
        "tracks.json",
        "scenes.json",
        "features.json",
        "similarity.json",
        "eval.json",
    ] {
        assert_eq!(
            std::fs::read(p.join(name)).unwrap(),
            std::fs::read(f(name)).unwrap(),
            "{name}"
        );
    }
    assert_eq!(
        json(&p.join("similarity.json"))["config"]["lap"]["th"],
        3000
    );
    assert_eq!(
        json(&p.join("tracks.json"))["config"]["tracker"]["max_age"],
        25
    );
}

#[test]
fn pipeline_without_labels_matches_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = synth(root, &SynthSpec::demo(2, 2));
    let det = data.join("detections.jsonl");
    let p = root.join("pipe");
    ok(&runreid(
        &["pipeline", "--detections", s(&det), "--out", s(&p)],
        &[],
    ));
    assert!(!p.join("eval.json").exists());
    let q = root.join("seq");
    ok(&runreid(
        &[
            "track",
            "--detections",
            s(&det),
            "--out",
            s(&q.join("tracks.json")),
        ],
        &[],
    ));
    ok(&runreid(
        &[
            "scenes",
            "--tracks",
            s(&q.join("tracks.json")),
            "--out",
            s(&q.join("scenes.json")),
        ],
        &[],
    ));
    ok(&runreid(
        &[
            "featurize",
            "--scenes",
            s(&q.join("scenes.json")),
            "--out",
            s(&q.join("features.json")),
        ],
        &[],
    ));
    ok(&runreid(
        &[
            "reid",
            "--scenes",
            s(&q.join("scenes.json")),
            "--features",
            s(&q.join("features.json")),
            "--out",
            s(&q.join("similarity.json")),
        ],
        &[],
    ));
    for name in [
        "tracks.json",
        "scenes.json",
        "features.json",
        "similarity.json",
    ] {
        assert_eq!(
            std::fs::read(p.join(name)).unwrap(),
            std::fs::read(q.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn output_independent_of_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = synth(root, &SynthSpec::demo(4, 2));
    let det = data.join("detections.jsonl");
    let labels = data.join("labels.json");
    for (w, name) in [("1", "w1"), ("4", "w4")] {
        ok(&runreid(
            &[
                "--workers",
                w,
                "pipeline",
                "--detections",
                s(&det),
                "--labels",
                s(&labels),
                "--out",
                s(&root.join(name)),
            ],
            &[],
        ));
    }
    for a in [
        "tracks.json",
        "scenes.json",
        "features.json",
        "similarity.json",
        "eval.json",
    ] {
        assert_eq!(
            std::fs::read(root.join("w1").join(a)).unwrap(),
            std::fs::read(root.join("w4").join(a)).unwrap()
        );
    }
}

#[test]
fn env_overrides_file_and_flags_override_env() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = synth(root, &SynthSpec::demo(1, 1));
    let cfg = root.join("cfg.toml");
    std::fs::write(&cfg, "[lap]\nth = 100\n[tracker]\nmax_age = 5\n").unwrap();
    let out = root.join("t.json");
    let det = data.join("detections.jsonl");
    let args = [
        "track",
        "--config",
        s(&cfg),
        "--detections",
        s(&det),
        "--out",
        s(&out),
    ];
    ok(&runreid(&args, &[("RUNREID_LAP__TH", "200")]));
    let doc = json(&out);
    assert_eq!(doc["config"]["lap"]["th"], 200);
    assert_eq!(doc["config"]["tracker"]["max_age"], 5);
    let mut with_flag = args.to_vec();
    with_flag.extend(["--set", "lap.th=300"]);
    ok(&runreid(&with_flag, &[("RUNREID_LAP__TH", "200")]));
    assert_eq!(json(&out)["config"]["lap"]["th"], 300);
    let bad = runreid(&args, &[("RUNREID_NO_SUCH_KEY", "1")]);
    assert_eq!(bad.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&bad.stderr).unwrap();
    assert_eq!(err["error"], "InvalidConfig");
}

#[test]
fn lap_gap_beyond_threshold_zeroes_cross_lap_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let mut spec = SynthSpec::demo(2, 2);
    spec.lap_gap = 4000;
    let data = synth(root, &spec);
    let p = root.join("out");
    ok(&runreid(
        &[
            "pipeline",
            "--detections",
            s(&data.join("detections.jsonl")),
            "--labels",
            s(&data.join("labels.json")),
            "--out",
            s(&p),
        ],
        &[],
    ));
    let scenes: ScenesDoc = read_json(&p.join("scenes.json")).unwrap();
    assert_eq!(scenes.scenes.len(), 4);
    let start: BTreeMap<String, u64> = scenes
        .scenes
        .iter()
        .map(|s| (s.scene_id.clone(), s.start_frame))
        .collect();
    let sim = json(&p.join("similarity.json"));
    let ids: Vec<String> = serde_json::from_value(sim["scene_ids"].clone()).unwrap();
    let values: Vec<Vec<f64>> = serde_json::from_value(sim["values"].clone()).unwrap();
    for i in 0..ids.len() {
        for j in 0..ids.len() {
            if i == j {
                continue;
            }
            let gap = start[&ids[i]].abs_diff(start[&ids[j]]);
            if gap > 3600 {
                assert_eq!(values[i][j], 0.0, "{} vs {}", ids[i], ids[j]);
            } else {
                assert_ne!(values[i][j], 0.0);
            }
        }
    }
    // Every same-runner pair is cross-lap, so the filter costs recall.
    let eval = json(&p.join("eval.json"));
    assert!(eval["map_score"].as_f64().unwrap() < 1.0);
}

#[test]
fn external_embeddings_drive_embedding_methods() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = synth(root, &SynthSpec::demo(3, 2));
    let p = root.join("out");
    ok(&runreid(
        &[
            "pipeline",
            "--detections",
            s(&data.join("detections.jsonl")),
            "--out",
            s(&p),
        ],
        &[],
    ));
    let scenes: ScenesDoc = read_json(&p.join("scenes.json")).unwrap();
    let labels: runreid_core::LabelsDoc = read_json(&data.join("labels.json")).unwrap();

    // One-hot-ish vectors per runner; a second file with per-frame vectors.
    let emb_dir = root.join("emb");
    let mut gruae = EmbeddingFile {
        name: "gruae".into(),
        ..Default::default()
    };
    let mut shoe = EmbeddingFile {
        name: "hhcl_shoe".into(),
        ..Default::default()
    };
    for sc in &scenes.scenes {
        let runner = labels.label_for(sc).unwrap();
        let k: usize = runner.trim_start_matches("runner").parse().unwrap();
        let mut v = vec![0.1; 128];
        v[k] = 1.0;
        gruae.scenes.insert(sc.scene_id.clone(), v.clone());
        shoe.frames.insert(sc.scene_id.clone(), vec![v.clone(), v]);
    }
    let mut runner_file = gruae.clone();
    runner_file.name = "hhcl_runner".into();
    write_json(&emb_dir.join("gruae.json"), &gruae).unwrap();
    write_json(&emb_dir.join("hhcl_runner.json"), &runner_file).unwrap();
    write_json(&emb_dir.join("hhcl_shoe.json"), &shoe).unwrap();

    let f = p.join("features_emb.json");
    ok(&runreid(
        &[
            "featurize",
            "--scenes",
            s(&p.join("scenes.json")),
            "--embeddings",
            s(&emb_dir),
            "--out",
            s(&f),
        ],
        &[],
    ));
    let feats = json(&f);
    assert_eq!(
        feats["scenes"][0]["embeddings"]["gruae"]
            .as_array()
            .unwrap()
            .len(),
        128
    );

    for method in [
        "embed_only(gruae)",
        "embed_with_color(gruae,0.5)",
        "hhcl_with_shoes",
    ] {
        let sim = root.join("sim.json");
        ok(&runreid(
            &[
                "reid",
                "--scenes",
                s(&p.join("scenes.json")),
                "--features",
                s(&f),
                "--method",
                method,
                "--out",
                s(&sim),
            ],
            &[],
        ));
        let e = root.join("eval.json");
        let out = runreid(
            &[
                "eval",
                "--similarity",
                s(&sim),
                "--labels",
                s(&data.join("labels.json")),
                "--scenes",
                s(&p.join("scenes.json")),
                "--table",
                "--out",
                s(&e),
            ],
            &[],
        );
        ok(&out);
        assert!(String::from_utf8_lossy(&out.stdout).contains("Rank-1"));
        assert_eq!(json(&e)["map_score"], 1.0, "{method}");
    }

    let sweep = root.join("sweep.json");
    ok(&runreid(
        &[
            "sweep",
            "--scenes",
            s(&p.join("scenes.json")),
            "--features",
            s(&f),
            "--labels",
            s(&data.join("labels.json")),
            "--grid",
            "0:1:0.25",
            "--out",
            s(&sweep),
        ],
        &[],
    ));
    let doc = json(&sweep);
    assert_eq!(doc["curve"].as_array().unwrap().len(), 5);
    assert_eq!(doc["best_lambda"], 0.0);

    // Color features alone lack the embedding.
    let out = runreid(
        &[
            "reid",
            "--scenes",
            s(&p.join("scenes.json")),
            "--features",
            s(&p.join("features.json")),
            "--method",
            "embed_only(gruae)",
            "--out",
            s(&root.join("x.json")),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(
        serde_json::from_slice::<Value>(&out.stderr).unwrap()["error"],
        "MissingFeature"
    );
}

#[test]
fn eval_without_labels_for_scene_fails() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = synth(root, &SynthSpec::demo(2, 1));
    let p = root.join("out");
    ok(&runreid(
        &[
            "pipeline",
            "--detections",
            s(&data.join("detections.jsonl")),
            "--out",
            s(&p),
        ],
        &[],
    ));
    std::fs::write(root.join("labels.json"), "{}").unwrap();
    let out = runreid(
        &[
            "eval",
            "--similarity",
            s(&p.join("similarity.json")),
            "--labels",
            s(&root.join("labels.json")),
            "--out",
            s(&root.join("e.json")),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(
        serde_json::from_slice::<Value>(&out.stderr).unwrap()["error"],
        "LabelMissing"
    );
}

#[test]
fn synth_spec_from_toml() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    std::fs::write(
        &spec,
        "seed = 3\nlaps_per_runner = 1\nlap_gap = 500\nframe_size = [640, 360]\nnoise = 0.0\n\n\
         [[runners]]\nrunner_id = \"a\"\nbody_color = [200, 30, 30]\nshoe_color = [30, 30, 200]\nstride_period = 24\nspeed = 5.0\n",
    )
    .unwrap();
    ok(&runreid(
        &[
            "synth",
            "--spec",
            s(&spec),
            "--out",
            s(&dir.path().join("d")),
        ],
        &[],
    ));
    assert!(dir.path().join("d/detections.jsonl").exists());
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "seed = 1\n").unwrap();
    let out = runreid(
        &[
            "synth",
            "--spec",
            s(&bad),
            "--out",
            s(&dir.path().join("e")),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(
        serde_json::from_slice::<Value>(&out.stderr).unwrap()["error"],
        "SpecInvalid"
    );
}
