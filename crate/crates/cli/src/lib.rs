//! Batch front end for the canopy pipeline: `run`, `synth` and `eval`.

pub mod config;
pub mod eval;
pub mod run;
pub mod synth;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::{ConfigError, PipelineConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FATAL: i32 = 1;
/// Outputs were written but something per-tree went wrong.
pub const EXIT_PARTIAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "canopy", version, about = "Per-tree canopy segmentation and volume estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment a cloud and estimate per-tree volumes.
    Run(RunArgs),
    /// Generate a synthetic orchard cloud with its truth table.
    Synth(synth::SynthArgs),
    /// Compare a report against truth volumes.
    Eval(eval::EvalArgs),
}

/// Every flag overrides the matching key of `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub min_points: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub voxel: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub max_cluster_size: Option<usize>,
    #[arg(long)]
    pub knn_k: Option<usize>,
    #[arg(long)]
    pub embed_sample_cap: Option<usize>,
    #[arg(long)]
    pub kmeans_max_iters: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub kmeans_tol: Option<f64>,
    /// on/off or true/false.
    #[arg(long, value_name = "BOOL")]
    pub enable_split: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub trunk_band: Option<f64>,
    #[arg(long)]
    pub ransac_iters: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub ransac_threshold: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub row_threshold: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub reference_y: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl RunArgs {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        fn push<T: ToString>(out: &mut Vec<(&'static str, String)>, key: &'static str, v: &Option<T>) {
            if let Some(v) = v {
                out.push((key, v.to_string()));
            }
        }
        let mut o = Vec::new();
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        push(&mut o, "input", &path(&self.input));
        push(&mut o, "out-dir", &path(&self.out_dir));
        push(&mut o, "epsilon", &self.epsilon);
        push(&mut o, "min-points", &self.min_points);
        push(&mut o, "voxel", &self.voxel);
        push(&mut o, "alpha", &self.alpha);
        push(&mut o, "max-cluster-size", &self.max_cluster_size);
        push(&mut o, "knn-k", &self.knn_k);
        push(&mut o, "embed-sample-cap", &self.embed_sample_cap);
        push(&mut o, "kmeans-max-iters", &self.kmeans_max_iters);
        push(&mut o, "kmeans-tol", &self.kmeans_tol);
        push(&mut o, "enable-split", &self.enable_split);
        push(&mut o, "trunk-band", &self.trunk_band);
        push(&mut o, "ransac-iters", &self.ransac_iters);
        push(&mut o, "ransac-threshold", &self.ransac_threshold);
        push(&mut o, "row-threshold", &self.row_threshold);
        push(&mut o, "reference-y", &self.reference_y);
        push(&mut o, "seed", &self.seed);
        o
    }

    /// Config file first, then flags on top.
    pub fn resolve(&self) -> Result<PipelineConfig, ConfigError> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        for (k, v) in self.overrides() {
            cfg.set(k, &v, "command line")?;
        }
        Ok(cfg)
    }
}

/// Applies `CANOPY_THREADS` to the global worker pool. Unset or empty
/// leaves the default.
pub fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("CANOPY_THREADS") else {
        return Ok(());
    };
    if raw.trim().is_empty() {
        return Ok(());
    }
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| anyhow::anyhow!("CANOPY_THREADS must be a positive integer, got `{raw}`"))?;
    if n == 0 {
        anyhow::bail!("CANOPY_THREADS must be at least 1");
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

pub fn dispatch(cli: Cli) -> i32 {
    match cli.command {
        Command::Run(args) => run::cmd_run_args(&args),
        Command::Synth(args) => synth::cmd_synth(&args),
        Command::Eval(args) => eval::cmd_eval(&args),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_beats_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.conf");
        std::fs::write(&path, "epsilon = 0.5\nmin-points = 20\n").unwrap();
        let cli = Cli::try_parse_from(["canopy", "run", "--config", path.to_str().unwrap(), "--epsilon", "0.7"]).unwrap();
        let Command::Run(args) = cli.command else { panic!() };
        let cfg = args.resolve().unwrap();
        assert_eq!(cfg.epsilon, 0.7);
        assert_eq!(cfg.min_points, 20);
    }

    #[test]
    fn negative_flag_values_parse() {
        let cli = Cli::try_parse_from(["canopy", "run", "--epsilon", "-1", "--reference-y", "-3.5"]).unwrap();
        let Command::Run(args) = cli.command else { panic!() };
        let cfg = args.resolve().unwrap();
        assert_eq!((cfg.epsilon, cfg.reference_y), (-1.0, -3.5));
    }

    #[test]
    fn split_switch() {
        let cli = Cli::try_parse_from(["canopy", "run", "--enable-split", "off"]).unwrap();
        let Command::Run(args) = cli.command else { panic!() };
        assert!(!args.resolve().unwrap().enable_split);
    }
}
