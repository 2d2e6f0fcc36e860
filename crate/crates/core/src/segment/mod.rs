//! Per-tree segmentation: DBSCAN over canopy points, then spectral
//! splitting of clusters too large to be a single crown.

mod dbscan;
mod eigen;
mod graph;
mod kmeans;
mod spectral;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point3, PointCloud};

pub use dbscan::{dbscan, DbscanParams, DbscanResult};
pub use eigen::{smallest_eigenpairs, EigenPair};
pub use graph::{knn_graph, knn_graph_points, normalized_laplacian_dense, KnnGraph};
pub use kmeans::{kmeans, KMeansResult};
pub use spectral::{spectral_split, split_seed, subcluster_count, SpectralParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Dbscan,
    SpectralSplit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeCluster {
    /// Strictly ascending indices into the segmented cloud.
    pub point_indices: Vec<usize>,
    pub centroid: Point3,
    pub provenance: Provenance,
    /// DBSCAN cluster this part was split from.
    pub source_cluster_id: Option<usize>,
    /// The split followed disconnected graph components rather than k-means.
    pub split_by_components: bool,
}

impl TreeCluster {
    pub fn len(&self) -> usize {
        self.point_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.point_indices.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Segmentation {
    /// Ordered by lowest member index.
    pub clusters: Vec<TreeCluster>,
    pub noise: Vec<usize>,
}

impl Segmentation {
    /// Cluster id per point, `-1` for noise.
    pub fn labels(&self, n: usize) -> Vec<i64> {
        let mut out = vec![-1; n];
        for (id, c) in self.clusters.iter().enumerate() {
            for &i in &c.point_indices {
                out[i] = id as i64;
            }
        }
        out
    }
}

/// DBSCAN followed, when `enable_split` is set, by spectral splitting of
/// every cluster above `spectral.max_cluster_size`.
pub fn segment_trees(
    cloud: &PointCloud,
    dbscan_params: &DbscanParams,
    spectral_params: &SpectralParams,
    enable_split: bool,
) -> Result<Segmentation> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput("segmentation input cloud"));
    }
    if enable_split {
        spectral_params.validate()?;
    }
    let DbscanResult { clusters, noise } = dbscan(cloud, dbscan_params)?;
    if !enable_split {
        return Ok(Segmentation { clusters, noise });
    }
    let parts: Vec<Vec<TreeCluster>> = clusters
        .into_par_iter()
        .enumerate()
        .map(|(id, c)| {
            if c.len() > spectral_params.max_cluster_size {
                spectral_split(cloud, &c, id, spectral_params)
            } else {
                Ok(vec![c])
            }
        })
        .collect::<Result<_>>()?;
    let mut clusters: Vec<TreeCluster> = parts.into_iter().flatten().collect();
    clusters.sort_by_key(|c| c.point_indices[0]);
    Ok(Segmentation { clusters, noise })
}
