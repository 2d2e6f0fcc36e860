//! `canopy synth`: synthetic orchard cloud plus truth table.

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;

use canopy_core::io::{self, CloudFormat};
use canopy_core::synth::{generate_orchard, write_truth_csv, CrownShape, OrchardSpec};

use crate::{EXIT_FATAL, EXIT_OK};

pub const CLOUD_FILE: &str = "cloud.ply";
pub const CLOUD_FILE_XYZ: &str = "cloud.xyz";
pub const TRUTH_FILE: &str = "truth.csv";
pub const SPEC_FILE: &str = "spec.json";

/// Flags override fields of `--spec`.
#[derive(Debug, Clone, Default, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    /// JSON orchard spec; missing fields take defaults.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub trees_per_row: Option<usize>,
    #[arg(long)]
    pub row_spacing: Option<f64>,
    #[arg(long)]
    pub tree_spacing: Option<f64>,
    /// Spherical crown radius.
    #[arg(long, conflicts_with = "ellipsoid")]
    pub radius: Option<f64>,
    /// Ellipsoidal crown semi-axes as `a,b,c`.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub ellipsoid: Option<Vec<f64>>,
    #[arg(long)]
    pub jitter: Option<f64>,
    #[arg(long)]
    pub overlap: Option<f64>,
    #[arg(long)]
    pub trunk_height: Option<f64>,
    #[arg(long)]
    pub points_per_tree: Option<usize>,
    #[arg(long)]
    pub ground_noise: Option<f64>,
    #[arg(long)]
    pub ground_points: Option<usize>,
    #[arg(long)]
    pub trunk_points: Option<usize>,
    #[arg(long)]
    pub trunk_radius: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// ply_binary_le, ply_ascii or xyz_text. Only PLY keeps the labels.
    #[arg(long, default_value = "ply_binary_le")]
    pub format: String,
}

impl SynthArgs {
    pub fn resolve(&self) -> anyhow::Result<OrchardSpec> {
        let mut spec = match &self.spec {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => OrchardSpec::default(),
        };
        macro_rules! over {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag { spec.$field = v; })*
            };
        }
        over!(
            rows => rows,
            trees_per_row => trees_per_row,
            row_spacing => row_spacing,
            tree_spacing => tree_spacing,
            jitter => crown_radius_jitter,
            overlap => crown_overlap_fraction,
            trunk_height => trunk_height,
            points_per_tree => points_per_tree,
            ground_noise => ground_noise_sigma,
            ground_points => ground_points,
            trunk_points => trunk_points_per_tree,
            trunk_radius => trunk_radius,
            seed => seed
        );
        if let Some(r) = self.radius {
            spec.crown = CrownShape::Sphere { radius: r };
        }
        if let Some(e) = &self.ellipsoid {
            spec.crown = CrownShape::Ellipsoid { a: e[0], b: e[1], c: e[2] };
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Writes the cloud (with `tree` and `part` vertex properties), the truth
/// CSV and the resolved spec into `out_dir`.
pub fn write_orchard(spec: &OrchardSpec, out_dir: &Path, format: CloudFormat) -> anyhow::Result<usize> {
    let (cloud, truth) = generate_orchard(spec)?;
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let parts: Vec<i64> = truth.point_part.iter().map(|&p| p as i64).collect();
    io::write_cloud_with_properties(
        &cloud,
        out_dir.join(if format == CloudFormat::XyzText { CLOUD_FILE_XYZ } else { CLOUD_FILE }),
        format,
        &[("tree", &truth.point_tree), ("part", &parts)],
    )?;
    write_truth_csv(&truth.trees, out_dir.join(TRUTH_FILE))?;
    std::fs::write(out_dir.join(SPEC_FILE), serde_json::to_vec_pretty(spec)?)?;
    Ok(cloud.len())
}

pub fn cmd_synth(args: &SynthArgs) -> i32 {
    let result = (|| {
        let spec = args.resolve()?;
        let format: CloudFormat = args.format.parse()?;
        let n = write_orchard(&spec, &args.out_dir, format)?;
        anyhow::Ok((spec.tree_count(), n))
    })();
    match result {
        Ok((trees, n)) => {
            println!("{trees} trees, {n} points written to {}", args.out_dir.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_FATAL
        }
    }
}
