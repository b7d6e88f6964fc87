//! `runreid`: command-line front end for the runner re-identification engine.

pub mod artifacts;
pub mod settings;
pub mod stages;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use runreid_core::evaluator::format_table;
use runreid_core::PipelineConfig;
use serde_json::json;

use crate::settings::Override;

#[derive(Debug, Parser)]
#[command(
    name = "runreid",
    version,
    about = "Runner re-identification from fixed-camera race video"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML file with pipeline defaults.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override any config key, e.g. `--set tracker.max_age=40`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Worker threads for parallel sections (default: available parallelism).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FusionArgs {
    /// color_only | color_with_shoes | embed_only(NAME) | embed_with_color(NAME[,LAMBDA]) | hhcl_with_shoes(RUNNER,SHOE)
    #[arg(long)]
    pub method: Option<String>,
    /// Weight on the embedding similarity.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Lap-time threshold in frames.
    #[arg(long)]
    pub th: Option<u64>,
    #[arg(long)]
    pub no_lap_filter: bool,
}

impl FusionArgs {
    fn overrides(&self, out: &mut Vec<Override>) {
        if let Some(m) = &self.method {
            out.push(("method".into(), json!(m)));
        }
        if let Some(l) = self.lambda {
            out.push(("fusion.lambda".into(), json!(l)));
        }
        if let Some(th) = self.th {
            out.push(("lap.th".into(), json!(th)));
        }
        if self.no_lap_filter {
            out.push(("lap.enabled".into(), json!(false)));
        }
    }
}

fn parse_ranks(s: &str) -> Result<Vec<usize>, String> {
    s.split(',')
        .map(|r| {
            r.trim()
                .parse::<usize>()
                .map_err(|e| format!("bad rank {r:?}: {e}"))
        })
        .collect()
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Link detections into tracks.
    Track {
        #[arg(long)]
        detections: PathBuf,
        /// Directory crop references resolve against (default: the detections file's directory).
        #[arg(long)]
        crop_root: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn tracks into running scenes.
    Scenes {
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long)]
        frame_width: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute color histograms and attach external embeddings.
    Featurize {
        #[arg(long)]
        scenes: PathBuf,
        /// Embedding file or directory of embedding files; repeatable.
        #[arg(long)]
        embeddings: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the scene similarity matrix.
    Reid {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[command(flatten)]
        fusion: FusionArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a similarity matrix against ground-truth labels.
    Eval {
        #[arg(long)]
        similarity: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// scenes.json, needed when labels are keyed by crop.
        #[arg(long)]
        scenes: Option<PathBuf>,
        #[arg(long, value_parser = parse_ranks)]
        ranks: Option<Vec<usize>>,
        /// Also print a mAP / Rank-1 / Rank-5 table.
        #[arg(long)]
        table: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// mAP of embed_with_color over a grid of lambda values.
    Sweep {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value = "gruae")]
        embedding: String,
        /// `start:stop:step` (inclusive) or a comma list.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        th: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every stage, writing all artifacts into one directory.
    Pipeline {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        embeddings: Vec<PathBuf>,
        #[arg(long)]
        crop_root: Option<PathBuf>,
        #[arg(long)]
        frame_width: Option<f64>,
        #[command(flatten)]
        fusion: FusionArgs,
        #[arg(long, value_parser = parse_ranks)]
        ranks: Option<Vec<usize>>,
        #[arg(long)]
        table: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic detection stream with crops and labels.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

impl Command {
    fn overrides(&self) -> Vec<Override> {
        let mut o = Vec::new();
        match self {
            Command::Scenes { frame_width, .. } => {
                if let Some(w) = frame_width {
                    o.push(("frame_width".into(), json!(w)));
                }
            }
            Command::Reid { fusion, .. } => fusion.overrides(&mut o),
            Command::Eval { ranks, .. } => {
                if let Some(r) = ranks {
                    o.push(("ranks".into(), json!(r)));
                }
            }
            Command::Sweep { grid, th, .. } => {
                if let Some(g) = grid {
                    o.push(("grid".into(), json!(g)));
                }
                if let Some(th) = th {
                    o.push(("lap.th".into(), json!(th)));
                }
            }
            Command::Pipeline {
                frame_width,
                fusion,
                ranks,
                ..
            } => {
                if let Some(w) = frame_width {
                    o.push(("frame_width".into(), json!(w)));
                }
                fusion.overrides(&mut o);
                if let Some(r) = ranks {
                    o.push(("ranks".into(), json!(r)));
                }
            }
            Command::Track { .. } | Command::Featurize { .. } | Command::Synth { .. } => {}
        }
        o
    }
}

/// Effective config: defaults < `--config` file < environment < flags.
pub fn effective_config(cli: &Cli) -> Result<PipelineConfig> {
    let env = settings::env_overrides(std::env::vars());
    let mut flags: Vec<Override> = cli
        .global
        .set
        .iter()
        .map(|s| settings::parse_assignment(s))
        .collect::<Result<_, _>>()?;
    flags.extend(cli.command.overrides());
    Ok(settings::load(cli.global.config.as_deref(), &env, &flags)?)
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.global.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    if let Command::Synth { spec, out } = &cli.command {
        let o = stages::synth(spec, out)?;
        println!(
            "wrote {} detections to {}",
            o.detections.len(),
            out.display()
        );
        return Ok(());
    }
    let cfg = effective_config(&cli)?;
    match &cli.command {
        Command::Track {
            detections,
            crop_root,
            out,
        } => {
            let d = stages::track(detections, crop_root.as_deref(), &cfg, out)?;
            println!("wrote {} tracks to {}", d.tracks.len(), out.display());
        }
        Command::Scenes { tracks, out, .. } => {
            let d = stages::scenes(tracks, &cfg, out)?;
            println!("wrote {} scenes to {}", d.scenes.len(), out.display());
        }
        Command::Featurize {
            scenes,
            embeddings,
            out,
        } => {
            let d = stages::featurize(scenes, embeddings, &cfg, out)?;
            println!(
                "wrote {} feature bundles ({} skipped) to {}",
                d.scenes.len(),
                d.skipped.len(),
                out.display()
            );
        }
        Command::Reid {
            scenes,
            features,
            out,
            ..
        } => {
            let d = stages::reid(scenes, features, &cfg, out)?;
            println!(
                "wrote {0}x{0} similarity matrix to {1}",
                d.matrix.len(),
                out.display()
            );
        }
        Command::Eval {
            similarity,
            labels,
            scenes,
            table,
            out,
            ..
        } => {
            let d = stages::eval(similarity, labels, scenes.as_deref(), &cfg, out)?;
            if *table {
                print!("{}", format_table(&cfg.method, &d.report));
            }
            println!(
                "mAP {:.4} over {} queries; wrote {}",
                d.report.map_score,
                d.report.num_queries,
                out.display()
            );
        }
        Command::Sweep {
            scenes,
            features,
            labels,
            embedding,
            out,
            ..
        } => {
            let d = stages::sweep(scenes, features, labels, embedding, &cfg, out)?;
            println!(
                "best lambda {} over {} grid points; wrote {}",
                d.result.best_lambda,
                d.result.curve.len(),
                out.display()
            );
        }
        Command::Pipeline {
            detections,
            labels,
            embeddings,
            crop_root,
            table,
            out,
            ..
        } => {
            let inputs = stages::PipelineInputs {
                detections,
                labels: labels.as_deref(),
                embeddings,
                crop_root: crop_root.as_deref(),
            };
            match stages::pipeline(&inputs, &cfg, out)? {
                Some(d) => {
                    if *table {
                        print!("{}", format_table(&cfg.method, &d.report));
                    }
                    println!(
                        "mAP {:.4} over {} queries; artifacts in {}",
                        d.report.map_score,
                        d.report.num_queries,
                        out.display()
                    );
                }
                None => println!("artifacts in {}", out.display()),
            }
        }
        Command::Synth { .. } => unreachable!("handled above"),
    }
    Ok(())
}

/// Single-line machine-readable description of a failure.
pub fn error_line(err: &anyhow::Error) -> String {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<runreid_core::Error>())
        .map_or("Error", runreid_core::Error::kind);
    let message = format!("{err:#}").replace('\n', " ");
    json!({ "error": kind, "message": message }).to_string()
}
