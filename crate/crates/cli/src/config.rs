//! Flat `key = value` run configuration. Keys are the long flag names
//! without the leading dashes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use canopy_core::layout::LayoutParams;
use canopy_core::pipeline::PipelineParams;
use canopy_core::preprocess::PreprocessParams;
use canopy_core::segment::{DbscanParams, SpectralParams};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{origin}: unknown key `{key}`")]
    UnknownKey { origin: String, key: String },

    #[error("{origin}: expected `key = value`, got `{text}`")]
    Syntax { origin: String, text: String },

    #[error("invalid value `{value}` for `{key}`: {reason}")]
    BadValue { key: String, value: String, reason: String },

    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Invalid(#[from] canopy_core::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub input: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub epsilon: f64,
    pub min_points: usize,
    pub voxel: f64,
    pub alpha: f64,
    pub max_cluster_size: usize,
    pub knn_k: usize,
    pub embed_sample_cap: usize,
    pub kmeans_max_iters: usize,
    pub kmeans_tol: f64,
    pub enable_split: bool,
    pub trunk_band: f64,
    pub ransac_iters: usize,
    pub ransac_threshold: f64,
    pub row_threshold: f64,
    pub reference_y: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let p = PipelineParams::default();
        PipelineConfig {
            input: None,
            out_dir: None,
            epsilon: p.dbscan.epsilon,
            min_points: p.dbscan.min_points,
            voxel: p.downsample_resolution,
            alpha: p.alpha,
            max_cluster_size: p.spectral.max_cluster_size,
            knn_k: p.spectral.knn_k,
            embed_sample_cap: p.spectral.embed_sample_cap,
            kmeans_max_iters: p.spectral.kmeans_max_iters,
            kmeans_tol: p.spectral.kmeans_tol,
            enable_split: p.enable_split,
            trunk_band: p.preprocess.trunk_band_height,
            ransac_iters: p.preprocess.ransac_iterations,
            ransac_threshold: p.preprocess.ransac_distance_threshold,
            row_threshold: p.layout.row_distance_threshold,
            reference_y: p.layout.reference_y,
            seed: 0,
        }
    }
}

/// Every recognised key, in rendering order.
pub const KEYS: [&str; 18] = [
    "input",
    "out-dir",
    "epsilon",
    "min-points",
    "voxel",
    "alpha",
    "max-cluster-size",
    "knn-k",
    "embed-sample-cap",
    "kmeans-max-iters",
    "kmeans-tol",
    "enable-split",
    "trunk-band",
    "ransac-iters",
    "ransac-threshold",
    "row-threshold",
    "reference-y",
    "seed",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
            reason: "expected true/false or on/off".into(),
        }),
    }
}

fn path_value(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl PipelineConfig {
    /// Assigns one key. Unknown keys are rejected with `origin` in the message.
    pub fn set(&mut self, key: &str, value: &str, origin: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "input" => self.input = path_value(v),
            "out-dir" => self.out_dir = path_value(v),
            "epsilon" => self.epsilon = parse(key, v)?,
            "min-points" => self.min_points = parse(key, v)?,
            "voxel" => self.voxel = parse(key, v)?,
            "alpha" => self.alpha = parse(key, v)?,
            "max-cluster-size" => self.max_cluster_size = parse(key, v)?,
            "knn-k" => self.knn_k = parse(key, v)?,
            "embed-sample-cap" => self.embed_sample_cap = parse(key, v)?,
            "kmeans-max-iters" => self.kmeans_max_iters = parse(key, v)?,
            "kmeans-tol" => self.kmeans_tol = parse(key, v)?,
            "enable-split" => self.enable_split = parse_bool(key, v)?,
            "trunk-band" => self.trunk_band = parse(key, v)?,
            "ransac-iters" => self.ransac_iters = parse(key, v)?,
            "ransac-threshold" => self.ransac_threshold = parse(key, v)?,
            "row-threshold" => self.row_threshold = parse(key, v)?,
            "reference-y" => self.reference_y = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    origin: origin.to_string(),
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Current value of every key as text, in [`KEYS`] order. Floats use
    /// shortest round-trip formatting, so `set` restores them exactly.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        vec![
            ("input", path(&self.input)),
            ("out-dir", path(&self.out_dir)),
            ("epsilon", self.epsilon.to_string()),
            ("min-points", self.min_points.to_string()),
            ("voxel", self.voxel.to_string()),
            ("alpha", self.alpha.to_string()),
            ("max-cluster-size", self.max_cluster_size.to_string()),
            ("knn-k", self.knn_k.to_string()),
            ("embed-sample-cap", self.embed_sample_cap.to_string()),
            ("kmeans-max-iters", self.kmeans_max_iters.to_string()),
            ("kmeans-tol", self.kmeans_tol.to_string()),
            ("enable-split", self.enable_split.to_string()),
            ("trunk-band", self.trunk_band.to_string()),
            ("ransac-iters", self.ransac_iters.to_string()),
            ("ransac-threshold", self.ransac_threshold.to_string()),
            ("row-threshold", self.row_threshold.to_string()),
            ("reference-y", self.reference_y.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    pub fn from_pairs<'a>(
        pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
        origin: &str,
    ) -> Result<PipelineConfig, ConfigError> {
        let mut cfg = PipelineConfig::default();
        for (k, v) in pairs {
            cfg.set(k, v, origin)?;
        }
        Ok(cfg)
    }

    /// Parses config text: one `key = value` per line, `#` comments.
    pub fn parse_text(text: &str, origin: &str) -> Result<PipelineConfig, ConfigError> {
        let mut cfg = PipelineConfig::default();
        for (i, line) in text.lines().enumerate() {
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let at = format!("{origin}:{}", i + 1);
            let (k, v) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                origin: at.clone(),
                text: content.to_string(),
            })?;
            cfg.set(k.trim(), v, &at)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<PipelineConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        PipelineConfig::parse_text(&text, &path.display().to_string())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.pairs() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Library parameters, validated.
    pub fn params(&self) -> Result<PipelineParams, ConfigError> {
        let p = PipelineParams {
            preprocess: PreprocessParams {
                ransac_iterations: self.ransac_iters,
                ransac_distance_threshold: self.ransac_threshold,
                trunk_band_height: self.trunk_band,
                seed: self.seed,
            },
            downsample_resolution: self.voxel,
            dbscan: DbscanParams {
                epsilon: self.epsilon,
                min_points: self.min_points,
            },
            spectral: SpectralParams {
                max_cluster_size: self.max_cluster_size,
                knn_k: self.knn_k,
                embed_sample_cap: self.embed_sample_cap,
                kmeans_max_iters: self.kmeans_max_iters,
                kmeans_tol: self.kmeans_tol,
                seed: self.seed,
            },
            enable_split: self.enable_split,
            layout: LayoutParams {
                row_distance_threshold: self.row_threshold,
                reference_y: self.reference_y,
            },
            alpha: self.alpha,
        };
        p.validate()?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_library() {
        let p = PipelineConfig::default().params().unwrap();
        assert_eq!(p, PipelineParams::default());
    }

    #[test]
    fn render_round_trips() {
        let mut cfg = PipelineConfig::default();
        cfg.epsilon = 0.1 + 0.2;
        cfg.kmeans_tol = 1e-7;
        cfg.enable_split = false;
        cfg.input = Some("a b/c.ply".into());
        cfg.seed = u64::MAX;
        assert_eq!(PipelineConfig::parse_text(&cfg.render(), "echo").unwrap(), cfg);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = PipelineConfig::parse_text("epsilon = 1\nepsilonn = 2\n", "f.conf").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { ref key, .. } if key == "epsilonn"));
        assert!(err.to_string().contains("f.conf:2"));
    }

    #[test]
    fn comments_and_blanks() {
        let cfg = PipelineConfig::parse_text("# x\n\n min-points = 7 # trailing\n", "t").unwrap();
        assert_eq!(cfg.min_points, 7);
    }

    #[test]
    fn negative_epsilon_names_field() {
        let cfg = PipelineConfig::parse_text("epsilon = -1", "t").unwrap();
        assert!(cfg.params().unwrap_err().to_string().contains("epsilon"));
    }

    #[test]
    fn bad_bool_and_syntax() {
        assert!(PipelineConfig::parse_text("enable-split = maybe", "t").is_err());
        assert!(matches!(PipelineConfig::parse_text("epsilon 1", "t"), Err(ConfigError::Syntax { .. })));
    }

    #[test]
    fn pairs_cover_all_keys() {
        let keys: Vec<_> = PipelineConfig::default().pairs().into_iter().map(|(k, _)| k).collect();
        assert_eq!(keys, KEYS);
    }
}
