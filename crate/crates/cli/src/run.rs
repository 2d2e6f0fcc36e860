//! `canopy run`: the full pipeline from a cloud file to reports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use canopy_core::eval::SegmentationScore;
use canopy_core::io::{self, CloudFormat, ReportFormat, TreeReport};
use canopy_core::pipeline::{run_pipeline, AtStage, Stage, StageError, StageTiming};
use canopy_core::Error;

use crate::config::{ConfigError, PipelineConfig};
use crate::{RunArgs, EXIT_FATAL, EXIT_OK, EXIT_PARTIAL};

pub const SEGMENTED_CLOUD: &str = "segmented.ply";
pub const REPORT_JSON: &str = "reports.json";
pub const REPORT_CSV: &str = "reports.csv";
pub const MANIFEST: &str = "manifest.json";

/// Per-point truth property picked up from input PLY files when present.
pub const TREE_PROPERTY: &str = "tree";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub canopy_cli: String,
    pub canopy_core: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub versions: Versions,
    /// Every config key with its value as config-file text.
    pub config: BTreeMap<String, String>,
    pub threads: usize,
    pub input_points: usize,
    pub canopy_points: usize,
    pub downsampled_points: usize,
    pub clusters: usize,
    pub noise_points: usize,
    pub degenerate_trees: Vec<String>,
    pub segmentation: Option<SegmentationScore>,
    pub timings: Vec<StageTiming>,
    pub stage_seconds_total: f64,
    pub wall_seconds: f64,
}

impl Manifest {
    pub fn config(&self) -> Result<PipelineConfig, ConfigError> {
        PipelineConfig::from_pairs(self.config.iter().map(|(k, v)| (k.as_str(), v.as_str())), "manifest")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("stage `config` failed: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Stage(#[from] StageError),
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub reports: Vec<TreeReport>,
    pub manifest: Manifest,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.manifest.degenerate_trees.is_empty() {
            EXIT_OK
        } else {
            EXIT_PARTIAL
        }
    }
}

fn required<'a>(p: &'a Option<PathBuf>, name: &'static str) -> Result<&'a Path, RunError> {
    p.as_deref().ok_or_else(|| {
        ConfigError::Invalid(Error::Parameter {
            name,
            reason: "is required".into(),
        })
        .into()
    })
}

fn write_outputs(out_dir: &Path, out: &canopy_core::pipeline::PipelineOutput) -> canopy_core::Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|source| Error::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let labels = out.segmentation.labels(out.downsampled.len());
    io::write_cloud(&out.downsampled, out_dir.join(SEGMENTED_CLOUD), CloudFormat::PlyBinaryLe, Some(&labels))?;
    io::write_report(&out.reports, out_dir.join(REPORT_JSON), ReportFormat::Json)?;
    io::write_report(&out.reports, out_dir.join(REPORT_CSV), ReportFormat::Csv)
}

/// Runs the pipeline and writes every artifact into the configured output
/// directory.
pub fn execute(cfg: &PipelineConfig) -> Result<RunOutcome, RunError> {
    let params = cfg.params()?;
    let input = required(&cfg.input, "input")?;
    let out_dir = required(&cfg.out_dir, "out-dir")?.to_path_buf();

    let wall = Instant::now();
    let read_start = Instant::now();
    let loaded = io::read_cloud_with_properties(input, &[TREE_PROPERTY]).at(Stage::Read)?;
    let read_seconds = read_start.elapsed().as_secs_f64();
    let point_tree = loaded.properties.into_iter().next().flatten();

    let out = run_pipeline(&loaded.cloud, point_tree.as_deref(), &params)?;

    let write_start = Instant::now();
    write_outputs(&out_dir, &out).at(Stage::Write)?;
    let write_seconds = write_start.elapsed().as_secs_f64();
    let wall_seconds = wall.elapsed().as_secs_f64();

    let mut timings = vec![StageTiming {
        stage: Stage::Read,
        seconds: read_seconds,
    }];
    timings.extend(out.timings.iter().cloned());
    timings.push(StageTiming {
        stage: Stage::Write,
        seconds: write_seconds,
    });
    let manifest = Manifest {
        versions: Versions {
            canopy_cli: env!("CARGO_PKG_VERSION").to_string(),
            canopy_core: canopy_core::VERSION.to_string(),
        },
        config: cfg.pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        threads: rayon::current_num_threads(),
        input_points: out.input_points,
        canopy_points: out.canopy_points,
        downsampled_points: out.downsampled.len(),
        clusters: out.segmentation.clusters.len(),
        noise_points: out.segmentation.noise.len(),
        degenerate_trees: out.degenerate_labels().into_iter().map(String::from).collect(),
        segmentation: out.score.clone(),
        stage_seconds_total: timings.iter().map(|t| t.seconds).sum(),
        timings,
        wall_seconds,
    };
    let manifest_path = out_dir.join(MANIFEST);
    let text = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Serialize(e.to_string())).at(Stage::Write)?;
    std::fs::write(&manifest_path, text)
        .map_err(|source| Error::Io {
            path: manifest_path,
            source,
        })
        .at(Stage::Write)?;

    Ok(RunOutcome {
        out_dir,
        reports: out.reports,
        manifest,
    })
}

pub fn cmd_run(cfg: &PipelineConfig) -> i32 {
    match execute(cfg) {
        Ok(outcome) => {
            let m = &outcome.manifest;
            println!(
                "{} trees from {} points ({} canopy, {} after downsampling) in {:.2} s; outputs in {}",
                outcome.reports.len(),
                m.input_points,
                m.canopy_points,
                m.downsampled_points,
                m.wall_seconds,
                outcome.out_dir.display()
            );
            if let Some(s) = &m.segmentation {
                println!("segmentation success {}/{} ({:.3})", s.matched_trees, s.total_trees, s.success_rate);
            }
            if !m.degenerate_trees.is_empty() {
                eprintln!("warning: degenerate geometry, volumes set to 0 for: {}", m.degenerate_trees.join(", "));
            }
            outcome.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FATAL
        }
    }
}

pub fn cmd_run_args(args: &RunArgs) -> i32 {
    match args.resolve() {
        Ok(cfg) => cmd_run(&cfg),
        Err(e) => {
            eprintln!("error: stage `config` failed: {e}");
            EXIT_FATAL
        }
    }
}
