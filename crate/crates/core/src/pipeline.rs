//! The full canopy run: ground/trunk removal, downsampling, segmentation,
//! row layout and per-tree volumes, with per-stage timings.

use std::collections::HashMap;
use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{match_clusters_to_truth, SegmentationScore};
use crate::geom::{voxel_group, PointCloud};
use crate::io::TreeReport;
use crate::layout::{group_rows, label_trees, LayoutParams};
use crate::preprocess::{canopy_indices, ransac_plane, PreprocessParams};
use crate::segment::{segment_trees, DbscanParams, Segmentation, SpectralParams, TreeCluster};
use crate::volume::{estimate_tree_volumes, TreeVolume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Read,
    Preprocess,
    Downsample,
    Segment,
    Layout,
    Volumes,
    Reports,
    Write,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Read => "read",
            Stage::Preprocess => "preprocess",
            Stage::Downsample => "downsample",
            Stage::Segment => "segment",
            Stage::Layout => "layout",
            Stage::Volumes => "volumes",
            Stage::Reports => "reports",
            Stage::Write => "write",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An error tagged with the stage that raised it.
#[derive(Debug, thiserror::Error)]
#[error("stage `{stage}` failed: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

pub trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineParams {
    pub preprocess: PreprocessParams,
    pub downsample_resolution: f64,
    pub dbscan: DbscanParams,
    pub spectral: SpectralParams,
    pub enable_split: bool,
    pub layout: LayoutParams,
    pub alpha: f64,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            preprocess: PreprocessParams::default(),
            downsample_resolution: 0.1,
            dbscan: DbscanParams::default(),
            spectral: SpectralParams::default(),
            enable_split: true,
            layout: LayoutParams::default(),
            alpha: 0.9,
        }
    }
}

impl PipelineParams {
    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        self.dbscan.validate()?;
        self.spectral.validate()?;
        self.layout.validate()?;
        if !(self.downsample_resolution > 0.0) || !self.downsample_resolution.is_finite() {
            return Err(Error::param(
                "voxel",
                format!("must be positive and finite, got {}", self.downsample_resolution),
            ));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::param("alpha", format!("must be positive and finite, got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub input_points: usize,
    pub canopy_points: usize,
    /// The cloud that was segmented.
    pub downsampled: PointCloud,
    pub segmentation: Segmentation,
    pub volumes: Vec<TreeVolume>,
    /// One per cluster, in cluster order.
    pub reports: Vec<TreeReport>,
    pub timings: Vec<StageTiming>,
    /// Present when per-point tree labels were supplied.
    pub score: Option<SegmentationScore>,
}

impl PipelineOutput {
    pub fn degenerate_labels(&self) -> Vec<&str> {
        self.reports.iter().filter(|r| r.degenerate).map(|r| r.label.as_str()).collect()
    }
}

/// Most frequent label in each voxel, ties to the smaller label.
fn voxel_majority(voxel_of_point: &[u32], members: &[usize], labels: &[i64], voxels: usize) -> Vec<i64> {
    let mut counts: Vec<HashMap<i64, usize>> = vec![HashMap::new(); voxels];
    for (local, &orig) in members.iter().enumerate() {
        *counts[voxel_of_point[local] as usize].entry(labels[orig]).or_default() += 1;
    }
    counts
        .into_iter()
        .map(|c| {
            c.into_iter()
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                .map_or(-1, |(l, _)| l)
        })
        .collect()
}

fn timed<T>(timings: &mut Vec<StageTiming>, stage: Stage, f: impl FnOnce() -> Result<T>) -> std::result::Result<T, StageError> {
    let start = Instant::now();
    let out = f().at(stage);
    timings.push(StageTiming {
        stage,
        seconds: start.elapsed().as_secs_f64(),
    });
    out
}

/// Runs everything after reading. `point_tree`, when given, labels each
/// input point with its true tree (negative for none) and yields a
/// segmentation score over the downsampled cloud.
pub fn run_pipeline(
    cloud: &PointCloud,
    point_tree: Option<&[i64]>,
    params: &PipelineParams,
) -> std::result::Result<PipelineOutput, StageError> {
    params.validate().at(Stage::Config)?;
    if let Some(pt) = point_tree {
        if pt.len() != cloud.len() {
            return Err(Error::Validation(format!(
                "{} tree labels for {} points",
                pt.len(),
                cloud.len()
            )))
            .at(Stage::Config);
        }
    }
    let mut timings = Vec::new();

    let (canopy_idx, canopy) = timed(&mut timings, Stage::Preprocess, || {
        let plane = ransac_plane(cloud, &params.preprocess)?;
        let idx = canopy_indices(cloud, &plane, params.preprocess.trunk_band_height);
        let canopy = cloud.select(&idx);
        Ok((idx, canopy))
    })?;

    let (downsampled, voxel_of_point, voxel_labels) = timed(&mut timings, Stage::Downsample, || {
        let bb = canopy
            .aabb()
            .ok_or(Error::EmptyInput("no canopy points left after ground and trunk removal"))?;
        let mut grouping = voxel_group(&canopy.points, params.downsample_resolution, bb.min)?;
        let labels = point_tree.map(|pt| voxel_majority(&grouping.voxel_of_point, &canopy_idx, pt, grouping.keys.len()));
        let voxel_of_point = std::mem::take(&mut grouping.voxel_of_point);
        Ok((grouping.into_cloud(cloud.frame_note.clone()), voxel_of_point, labels))
    })?;

    let segmentation = timed(&mut timings, Stage::Segment, || {
        segment_trees(&downsampled, &params.dbscan, &params.spectral, params.enable_split)
    })?;

    let labels = timed(&mut timings, Stage::Layout, || {
        if segmentation.clusters.is_empty() {
            return Ok(Vec::new());
        }
        let centroids: Vec<_> = segmentation.clusters.iter().enumerate().map(|(i, c)| (i, c.centroid)).collect();
        let mut by_cluster = label_trees(&group_rows(&centroids, &params.layout)?);
        by_cluster.sort_by_key(|l| l.cluster_id);
        Ok(by_cluster)
    })?;

    // volumes use the full-resolution canopy points of each cluster's voxels,
    // downsampled per cluster
    let volumes = timed(&mut timings, Stage::Volumes, || {
        let mut cluster_of_voxel = vec![u32::MAX; downsampled.len()];
        for (id, c) in segmentation.clusters.iter().enumerate() {
            for &v in &c.point_indices {
                cluster_of_voxel[v] = id as u32;
            }
        }
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); segmentation.clusters.len()];
        for (i, &v) in voxel_of_point.iter().enumerate() {
            let c = cluster_of_voxel[v as usize];
            if c != u32::MAX {
                members[c as usize].push(i);
            }
        }
        let full: Vec<TreeCluster> = segmentation
            .clusters
            .iter()
            .zip(members)
            .map(|(c, point_indices)| TreeCluster {
                point_indices,
                ..c.clone()
            })
            .collect();
        estimate_tree_volumes(&canopy, &full, params.alpha, params.downsample_resolution)
    })?;

    let (reports, score) = timed(&mut timings, Stage::Reports, || {
        let reports: Vec<TreeReport> = segmentation
            .clusters
            .iter()
            .zip(&labels)
            .zip(&volumes)
            .map(|((c, l), v)| TreeReport {
                label: l.label.clone(),
                row_id: l.row_id.clone(),
                index_in_row: l.index_in_row,
                centroid: c.centroid,
                point_count: c.len(),
                convex_hull_volume: v.convex_hull_volume,
                alpha_shape_volume: v.alpha_shape_volume.min(v.convex_hull_volume),
                provenance: c.provenance,
                degenerate: v.degenerate.is_some(),
            })
            .collect();
        let score = match (&voxel_labels, point_tree) {
            (Some(vl), Some(pt)) => {
                let total = pt.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize);
                Some(match_clusters_to_truth(&segmentation.clusters, total, vl)?)
            }
            _ => None,
        };
        Ok((reports, score))
    })?;

    Ok(PipelineOutput {
        input_points: cloud.len(),
        canopy_points: canopy.len(),
        downsampled,
        segmentation,
        volumes,
        reports,
        timings,
        score,
    })
}
