//! Grid-accelerated exact DBSCAN.
//!
//! Cells have side just under `eps / sqrt(3)`, so any two points sharing a
//! cell are within `eps` of each other. That gives three shortcuts without
//! changing the result of the classic sequential algorithm:
//!
//! * a cell holding at least `min_points` points is entirely core;
//! * all core points of one cell belong to the same cluster;
//! * two cells' clusters merge as soon as one core pair is found within `eps`.
//!
//! Border points go to the cluster discovered first by an ascending-index
//! seed scan, which is the cluster with the smallest lowest-core index among
//! those having a core point within `eps`.

use std::ops::Range;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{centroid_of, Point3, PointCloud};
use crate::spatial::{CellKey, SpatialIndex};

use super::{Provenance, TreeCluster};

#[derive(Debug, Clone, PartialEq)]
pub struct DbscanParams {
    /// Neighborhood radius in meters.
    pub epsilon: f64,
    /// Neighbors (including the point itself) required for a core point.
    pub min_points: usize,
}

impl Default for DbscanParams {
    fn default() -> Self {
        DbscanParams {
            epsilon: 0.8,
            min_points: 1300,
        }
    }
}

impl DbscanParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::param(
                "epsilon",
                format!("must be positive and finite, got {}", self.epsilon),
            ));
        }
        if self.min_points == 0 {
            return Err(Error::param("min_points", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DbscanResult {
    /// Clusters ordered by their lowest member index.
    pub clusters: Vec<TreeCluster>,
    /// Ascending indices of noise points.
    pub noise: Vec<usize>,
}

const NOISE: u32 = u32::MAX;

struct Grid {
    index: SpatialIndex,
    keys: Vec<CellKey>,
    runs: Vec<Range<u32>>,
    /// Positions (into `keys`) of cells that can hold points within eps.
    neighbors: Vec<Vec<u32>>,
}

impl Grid {
    fn build(points: &[Point3], eps: f64) -> Result<Grid> {
        let side = eps / 3f64.sqrt() * (1.0 - 1e-9);
        let index = SpatialIndex::new(points, side)?;
        let mut cells: Vec<(CellKey, Range<u32>)> =
            index.cells().map(|(k, r)| (*k, r.clone())).collect();
        cells.sort_unstable_by_key(|(k, _)| *k);
        let reach = (eps / side).ceil() as i64;
        let mut offsets = Vec::new();
        for i in -reach..=reach {
            for j in -reach..=reach {
                for k in -reach..=reach {
                    let gap = |d: i64| ((d.abs() - 1).max(0)) as f64 * side;
                    let g2 = gap(i).powi(2) + gap(j).powi(2) + gap(k).powi(2);
                    if g2 <= eps * eps * (1.0 + 1e-9) {
                        offsets.push([i, j, k]);
                    }
                }
            }
        }
        let position: crate::spatial::CellMap<u32> = cells
            .iter()
            .enumerate()
            .map(|(pos, (k, _))| (*k, pos as u32))
            .collect();
        let neighbors = cells
            .par_iter()
            .map(|(key, _)| {
                offsets
                    .iter()
                    .filter_map(|o| {
                        position
                            .get(&[key[0] + o[0], key[1] + o[1], key[2] + o[2]])
                            .copied()
                    })
                    .collect()
            })
            .collect();
        let (keys, runs) = cells.into_iter().unzip();
        Ok(Grid {
            index,
            keys,
            runs,
            neighbors,
        })
    }

    #[inline]
    fn members(&self, cell: usize) -> (&[u32], &[Point3]) {
        self.index.cell_members(self.runs[cell].clone())
    }
}

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n as u32).collect(),
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Density-based clustering with classic core/border/noise semantics.
pub fn dbscan(cloud: &PointCloud, params: &DbscanParams) -> Result<DbscanResult> {
    params.validate()?;
    let points = &cloud.points;
    let n = points.len();
    if n == 0 {
        return Ok(DbscanResult::default());
    }
    let eps2 = params.epsilon * params.epsilon;
    let min_pts = params.min_points;
    let grid = Grid::build(points, params.epsilon)?;
    let n_cells = grid.keys.len();

    // 1. core flags, per cell
    let core_by_cell: Vec<Vec<bool>> = (0..n_cells)
        .into_par_iter()
        .map(|c| {
            let (_, own) = grid.members(c);
            if own.len() >= min_pts {
                return vec![true; own.len()];
            }
            own.iter()
                .map(|&p| {
                    let mut count = 0usize;
                    for &nc in &grid.neighbors[c] {
                        let (_, pts) = grid.members(nc as usize);
                        for &q in pts {
                            if q.dist2(p) <= eps2 {
                                count += 1;
                                if count >= min_pts {
                                    return true;
                                }
                            }
                        }
                    }
                    false
                })
                .collect()
        })
        .collect();
    let mut is_core = vec![false; n];
    for c in 0..n_cells {
        let (ids, _) = grid.members(c);
        for (&i, &flag) in ids.iter().zip(&core_by_cell[c]) {
            is_core[i as usize] = flag;
        }
    }
    let cell_has_core: Vec<bool> = core_by_cell.iter().map(|f| f.contains(&true)).collect();

    // 2. connect core cells that share a core pair within eps
    let links: Vec<Vec<u32>> = (0..n_cells)
        .into_par_iter()
        .map(|a| {
            if !cell_has_core[a] {
                return Vec::new();
            }
            let (a_ids, a_pts) = grid.members(a);
            grid.neighbors[a]
                .iter()
                .copied()
                .filter(|&b| (b as usize) > a && cell_has_core[b as usize])
                .filter(|&b| {
                    let (b_ids, b_pts) = grid.members(b as usize);
                    a_ids.iter().zip(a_pts).any(|(&i, &p)| {
                        is_core[i as usize]
                            && b_ids
                                .iter()
                                .zip(b_pts)
                                .any(|(&j, &q)| is_core[j as usize] && q.dist2(p) <= eps2)
                    })
                })
                .collect()
        })
        .collect();
    let mut uf = UnionFind::new(n_cells);
    for (a, bs) in links.iter().enumerate() {
        for &b in bs {
            uf.union(a as u32, b);
        }
    }

    // 3. rank components by their lowest core index (seed-scan discovery order)
    let mut lowest_core = vec![u32::MAX; n_cells];
    for c in 0..n_cells {
        if !cell_has_core[c] {
            continue;
        }
        let (ids, _) = grid.members(c);
        // ids ascend within a cell
        let first = ids.iter().copied().find(|&i| is_core[i as usize]).unwrap();
        let root = uf.find(c as u32) as usize;
        lowest_core[root] = lowest_core[root].min(first);
    }
    let mut roots: Vec<usize> = (0..n_cells)
        .filter(|&c| cell_has_core[c] && uf.find(c as u32) as usize == c)
        .collect();
    roots.sort_unstable_by_key(|&r| lowest_core[r]);
    let mut rank_of_root = vec![NOISE; n_cells];
    for (rank, &r) in roots.iter().enumerate() {
        rank_of_root[r] = rank as u32;
    }
    let cell_rank: Vec<u32> = (0..n_cells)
        .map(|c| {
            if cell_has_core[c] {
                rank_of_root[uf.find(c as u32) as usize]
            } else {
                NOISE
            }
        })
        .collect();

    // 4. label cores by rank, borders by the smallest reachable rank
    let labels_by_cell: Vec<Vec<u32>> = (0..n_cells)
        .into_par_iter()
        .map(|c| {
            let (ids, pts) = grid.members(c);
            ids.iter()
                .zip(pts)
                .map(|(&i, &p)| {
                    if is_core[i as usize] {
                        return cell_rank[c];
                    }
                    let mut best = NOISE;
                    for &nc in &grid.neighbors[c] {
                        let nc = nc as usize;
                        if cell_rank[nc] >= best {
                            continue;
                        }
                        let (q_ids, q_pts) = grid.members(nc);
                        let reached = q_ids
                            .iter()
                            .zip(q_pts)
                            .any(|(&j, &q)| is_core[j as usize] && q.dist2(p) <= eps2);
                        if reached {
                            best = cell_rank[nc];
                        }
                    }
                    best
                })
                .collect()
        })
        .collect();
    let mut labels = vec![NOISE; n];
    for c in 0..n_cells {
        let (ids, _) = grid.members(c);
        for (&i, &l) in ids.iter().zip(&labels_by_cell[c]) {
            labels[i as usize] = l;
        }
    }

    Ok(assemble(points, &labels, roots.len()))
}

fn assemble(points: &[Point3], labels: &[u32], n_clusters: usize) -> DbscanResult {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    let mut noise = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        if l == NOISE {
            noise.push(i);
        } else {
            members[l as usize].push(i);
        }
    }
    members.sort_unstable_by_key(|m| m[0]);
    let clusters = members
        .into_iter()
        .map(|idx| {
            let pts: Vec<Point3> = idx.iter().map(|&i| points[i]).collect();
            TreeCluster {
                centroid: centroid_of(&pts).expect("clusters are non-empty"),
                point_indices: idx,
                provenance: Provenance::Dbscan,
                source_cluster_id: None,
                split_by_components: false,
            }
        })
        .collect();
    DbscanResult { clusters, noise }
}
