//! Spectral splitting of clusters that hold several merged crowns.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::{centroid_of, Point3, PointCloud};

use super::eigen::smallest_eigenpairs;
use super::graph::knn_graph_points;
use super::kmeans::kmeans;
use super::{Provenance, TreeCluster};

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralParams {
    pub max_cluster_size: usize,
    pub knn_k: usize,
    pub embed_sample_cap: usize,
    pub kmeans_max_iters: usize,
    pub kmeans_tol: f64,
    pub seed: u64,
}

impl Default for SpectralParams {
    fn default() -> Self {
        SpectralParams {
            max_cluster_size: 45_000,
            knn_k: 10,
            embed_sample_cap: 5_000,
            kmeans_max_iters: 100,
            kmeans_tol: 1e-6,
            seed: 0,
        }
    }
}

impl SpectralParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_cluster_size == 0 {
            return Err(Error::param("max_cluster_size", "must be at least 1"));
        }
        if self.knn_k == 0 {
            return Err(Error::param("knn_k", "must be at least 1"));
        }
        if self.embed_sample_cap < self.knn_k + 1 {
            return Err(Error::param(
                "embed_sample_cap",
                format!("must be at least knn_k + 1 = {}", self.knn_k + 1),
            ));
        }
        if self.kmeans_max_iters == 0 {
            return Err(Error::param("kmeans_max_iters", "must be at least 1"));
        }
        if !(self.kmeans_tol >= 0.0) {
            return Err(Error::param("kmeans_tol", "must be non-negative"));
        }
        Ok(())
    }
}

/// Number of parts for an oversized cluster: `ceil(size / max)`, never
/// fewer than two once the cap is exceeded.
pub fn subcluster_count(cluster_size: usize, max_cluster_size: usize) -> usize {
    let max = max_cluster_size.max(1);
    let parts = cluster_size.div_ceil(max);
    if cluster_size > max {
        parts.max(2)
    } else {
        parts
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-cluster seed, independent of scheduling.
pub fn split_seed(global: u64, source_cluster_id: usize) -> u64 {
    splitmix64(global ^ splitmix64(source_cluster_id as u64))
}

/// Splits one oversized cluster. `cluster_id` identifies it in errors and is
/// recorded as the parts' `source_cluster_id`.
pub fn spectral_split(
    cloud: &PointCloud,
    cluster: &TreeCluster,
    cluster_id: usize,
    params: &SpectralParams,
) -> Result<Vec<TreeCluster>> {
    params.validate()?;
    let members = &cluster.point_indices;
    let size = members.len();
    if size <= params.max_cluster_size {
        return Err(Error::param(
            "max_cluster_size",
            format!("cluster {cluster_id} has {size} points, which does not exceed the cap"),
        ));
    }
    let seg_err = |reason: String| Error::Segmentation {
        cluster: cluster_id,
        reason,
    };
    let m = subcluster_count(size, params.max_cluster_size);
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed(params.seed, cluster_id));

    // positions into `members` used for the embedding
    let working: Vec<usize> = if size > params.embed_sample_cap {
        let mut s = rand::seq::index::sample(&mut rng, size, params.embed_sample_cap).into_vec();
        s.sort_unstable();
        s
    } else {
        (0..size).collect()
    };
    let wpts: Vec<Point3> = working.iter().map(|&w| cloud.points[members[w]]).collect();
    let k = params.knn_k.min(wpts.len() - 1);
    if k == 0 {
        return Err(seg_err("too few points to build a neighbor graph".into()));
    }
    let graph = knn_graph_points(&wpts, k)?;
    let (comp, n_comp) = graph.components();

    let (labels, parts, by_components) = if n_comp >= m {
        (comp, n_comp, n_comp > m)
    } else {
        let pairs = smallest_eigenpairs(&graph, m, rng_seed(&mut rng)).map_err(seg_err)?;
        if pairs.len() < m {
            return Err(seg_err(format!("only {} eigenpairs for {m} parts", pairs.len())));
        }
        let n = wpts.len();
        let mut emb = vec![0.0; n * m];
        for (c, p) in pairs.iter().enumerate() {
            if p.vector.iter().any(|v| !v.is_finite()) {
                return Err(seg_err("non-finite eigenvector".into()));
            }
            for i in 0..n {
                emb[i * m + c] = p.vector[i];
            }
        }
        for row in emb.chunks_mut(m) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        let km = kmeans(&emb, m, m, params.kmeans_max_iters, params.kmeans_tol, &mut rng);
        (km.labels, m, false)
    };

    // 3D centroids of the sampled members of each part
    let mut groups: Vec<Vec<Point3>> = vec![Vec::new(); parts];
    for (&l, &p) in labels.iter().zip(&wpts) {
        groups[l as usize].push(p);
    }
    let centers: Vec<(u32, Point3)> = groups
        .iter()
        .enumerate()
        .filter(|(_, g)| !g.is_empty())
        .map(|(l, g)| Ok((l as u32, centroid_of(g)?)))
        .collect::<Result<_>>()?;

    let mut part_of = vec![u32::MAX; size];
    for (&w, &l) in working.iter().zip(&labels) {
        part_of[w] = l;
    }
    for (pos, slot) in part_of.iter_mut().enumerate() {
        if *slot != u32::MAX {
            continue;
        }
        let p = cloud.points[members[pos]];
        let mut best = (f64::INFINITY, 0u32);
        for &(l, c) in &centers {
            let d = p.dist2(c);
            if d < best.0 {
                best = (d, l);
            }
        }
        *slot = best.1;
    }

    let mut out: Vec<Vec<usize>> = vec![Vec::new(); parts];
    for (pos, &l) in part_of.iter().enumerate() {
        out[l as usize].push(members[pos]);
    }
    let mut result: Vec<TreeCluster> = out
        .into_iter()
        .filter(|idx| !idx.is_empty())
        .map(|idx| {
            let pts: Vec<Point3> = idx.iter().map(|&i| cloud.points[i]).collect();
            Ok(TreeCluster {
                centroid: centroid_of(&pts)?,
                point_indices: idx,
                provenance: Provenance::SpectralSplit,
                source_cluster_id: Some(cluster_id),
                split_by_components: by_components,
            })
        })
        .collect::<Result<_>>()?;
    result.sort_by_key(|c| c.point_indices[0]);
    Ok(result)
}

fn rng_seed(rng: &mut ChaCha8Rng) -> u64 {
    rand::Rng::random(rng)
}
