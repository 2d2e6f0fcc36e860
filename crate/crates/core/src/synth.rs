//! Labeled synthetic orchards with analytic crown volumes.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point3, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "shape")]
pub enum CrownShape {
    Sphere { radius: f64 },
    /// Semi-axes along x, y and z.
    Ellipsoid { a: f64, b: f64, c: f64 },
}

impl CrownShape {
    fn radii(self) -> [f64; 3] {
        match self {
            CrownShape::Sphere { radius } => [radius; 3],
            CrownShape::Ellipsoid { a, b, c } => [a, b, c],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrchardSpec {
    pub rows: usize,
    pub trees_per_row: usize,
    pub row_spacing: f64,
    pub tree_spacing: f64,
    pub crown: CrownShape,
    /// Each tree's radii are scaled by `1 + u`, `u` uniform in `±jitter`.
    pub crown_radius_jitter: f64,
    /// Along-row center distance is `tree_spacing * (1 - overlap)`.
    pub crown_overlap_fraction: f64,
    pub trunk_height: f64,
    /// Crown points per tree.
    pub points_per_tree: usize,
    pub ground_noise_sigma: f64,
    pub trunk_points_per_tree: usize,
    pub trunk_radius: f64,
    pub ground_points: usize,
    pub seed: u64,
}

impl Default for OrchardSpec {
    fn default() -> Self {
        OrchardSpec {
            rows: 2,
            trees_per_row: 5,
            row_spacing: 8.0,
            tree_spacing: 5.0,
            crown: CrownShape::Sphere { radius: 2.0 },
            crown_radius_jitter: 0.0,
            crown_overlap_fraction: 0.0,
            trunk_height: 1.0,
            points_per_tree: 20_000,
            ground_noise_sigma: 0.02,
            trunk_points_per_tree: 400,
            trunk_radius: 0.12,
            ground_points: 100_000,
            seed: 0,
        }
    }
}

impl OrchardSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(name, format!("must be positive, got {v}")))
            }
        };
        if self.rows == 0 {
            return Err(Error::param("rows", "must be at least 1"));
        }
        if self.trees_per_row == 0 {
            return Err(Error::param("trees_per_row", "must be at least 1"));
        }
        if self.points_per_tree == 0 {
            return Err(Error::param("points_per_tree", "must be at least 1"));
        }
        positive("row_spacing", self.row_spacing)?;
        positive("tree_spacing", self.tree_spacing)?;
        for r in self.crown.radii() {
            positive("crown radius", r)?;
        }
        if !(0.0..1.0).contains(&self.crown_radius_jitter) {
            return Err(Error::param("crown_radius_jitter", "must be in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.crown_overlap_fraction) {
            return Err(Error::param("crown_overlap_fraction", "must be in [0, 1)"));
        }
        if !(self.trunk_height >= 0.0) || !self.trunk_height.is_finite() {
            return Err(Error::param("trunk_height", "must be non-negative"));
        }
        if !(self.ground_noise_sigma >= 0.0) || !self.ground_noise_sigma.is_finite() {
            return Err(Error::param("ground_noise_sigma", "must be non-negative"));
        }
        if self.trunk_points_per_tree > 0 {
            positive("trunk_radius", self.trunk_radius)?;
        }
        Ok(())
    }

    pub fn tree_count(&self) -> usize {
        self.rows * self.trees_per_row
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Ground = 0,
    Trunk = 1,
    Crown = 2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeTruth {
    pub tree_id: usize,
    pub row: usize,
    pub index: usize,
    /// Crown center, which is also the crown solid's centroid.
    pub center: Point3,
    pub radii: [f64; 3],
    pub true_volume_m3: f64,
}

impl TreeTruth {
    pub fn contains(&self, p: Point3, tol: f64) -> bool {
        let d = p - self.center;
        let q = (d.x / self.radii[0]).powi(2) + (d.y / self.radii[1]).powi(2) + (d.z / self.radii[2]).powi(2);
        q <= 1.0 + tol
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrchardTruth {
    pub trees: Vec<TreeTruth>,
    /// Owning tree of each crown point, -1 for ground and trunk points.
    pub point_tree: Vec<i64>,
    pub point_part: Vec<Part>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn ellipsoid_volume(radii: [f64; 3]) -> f64 {
    4.0 / 3.0 * PI * radii[0] * radii[1] * radii[2]
}

/// Volume of a sphere with diameter `d`.
pub fn sphere_volume_from_diameter(d: f64) -> Result<f64> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::param("diameter", format!("must be positive, got {d}")));
    }
    Ok(PI * d.powi(3) / 6.0)
}

/// Tree layout only, without sampling points.
pub fn tree_layout(spec: &OrchardSpec) -> Result<Vec<TreeTruth>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(spec.seed ^ 0x7265_6573));
    let step = spec.tree_spacing * (1.0 - spec.crown_overlap_fraction);
    let base = spec.crown.radii();
    let mut trees = Vec::with_capacity(spec.tree_count());
    for row in 0..spec.rows {
        let y = (row as f64 - (spec.rows as f64 - 1.0) / 2.0) * spec.row_spacing;
        for index in 0..spec.trees_per_row {
            let scale = if spec.crown_radius_jitter > 0.0 {
                1.0 + rng.random_range(-spec.crown_radius_jitter..=spec.crown_radius_jitter)
            } else {
                1.0
            };
            let radii = base.map(|r| r * scale);
            trees.push(TreeTruth {
                tree_id: trees.len(),
                row,
                index,
                center: Point3::new(index as f64 * step, y, spec.trunk_height + radii[2]),
                radii,
                true_volume_m3: ellipsoid_volume(radii),
            });
        }
    }
    Ok(trees)
}

fn sample_tree(spec: &OrchardSpec, t: &TreeTruth) -> Vec<(Point3, Part)> {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(spec.seed ^ splitmix64(t.tree_id as u64 + 1)));
    let mut out = Vec::with_capacity(spec.points_per_tree + spec.trunk_points_per_tree);
    while out.len() < spec.points_per_tree {
        let u = Point3::new(
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        );
        if u.norm_squared() <= 1.0 {
            let p = Point3::new(u.x * t.radii[0], u.y * t.radii[1], u.z * t.radii[2]);
            out.push((t.center + p, Part::Crown));
        }
    }
    for _ in 0..spec.trunk_points_per_tree {
        let a = rng.random_range(0.0..2.0 * PI);
        let z = rng.random_range(0.0..=spec.trunk_height);
        out.push((
            Point3::new(
                t.center.x + spec.trunk_radius * a.cos(),
                t.center.y + spec.trunk_radius * a.sin(),
                z,
            ),
            Part::Trunk,
        ));
    }
    out
}

/// Crown and trunk points per tree in tree-id order, then ground points.
/// Crown points are uniform inside the crown solid; ground heights carry
/// Gaussian noise.
pub fn generate_orchard(spec: &OrchardSpec) -> Result<(PointCloud, OrchardTruth)> {
    let trees = tree_layout(spec)?;
    let per_tree: Vec<Vec<(Point3, Part)>> = trees.par_iter().map(|t| sample_tree(spec, t)).collect();

    let mut points = Vec::new();
    let mut point_tree = Vec::new();
    let mut point_part = Vec::new();
    for (t, pts) in trees.iter().zip(per_tree) {
        for (p, part) in pts {
            points.push(p);
            point_tree.push(if part == Part::Crown { t.tree_id as i64 } else { -1 });
            point_part.push(part);
        }
    }

    let margin = 2.0;
    let (mut lo, mut hi) = (Point3::new(f64::MAX, f64::MAX, 0.0), Point3::new(f64::MIN, f64::MIN, 0.0));
    for t in &trees {
        lo = lo.component_min(t.center - Point3::new(t.radii[0], t.radii[1], 0.0));
        hi = hi.component_max(t.center + Point3::new(t.radii[0], t.radii[1], 0.0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(spec.seed ^ 0x6772_6f75_6e64));
    let noise = Normal::new(0.0, spec.ground_noise_sigma).map_err(|e| Error::param("ground_noise_sigma", e.to_string()))?;
    for _ in 0..spec.ground_points {
        points.push(Point3::new(
            rng.random_range(lo.x - margin..=hi.x + margin),
            rng.random_range(lo.y - margin..=hi.y + margin),
            noise.sample(&mut rng),
        ));
        point_tree.push(-1);
        point_part.push(Part::Ground);
    }

    Ok((
        PointCloud::with_note(points, format!("synthetic orchard, seed {}", spec.seed)),
        OrchardTruth {
            trees,
            point_tree,
            point_part,
        },
    ))
}

pub const TRUTH_HEADER: [&str; 7] = ["tree_id", "row", "index", "cx", "cy", "cz", "true_volume_m3"];

pub fn write_truth_csv(trees: &[TreeTruth], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    let ser = |e: csv::Error| Error::Serialize(e.to_string());
    w.write_record(TRUTH_HEADER).map_err(ser)?;
    for t in trees {
        w.write_record([
            t.tree_id.to_string(),
            t.row.to_string(),
            t.index.to_string(),
            t.center.x.to_string(),
            t.center.y.to_string(),
            t.center.z.to_string(),
            t.true_volume_m3.to_string(),
        ])
        .map_err(ser)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> OrchardSpec {
        OrchardSpec {
            points_per_tree: 3_000,
            ground_points: 2_000,
            ..Default::default()
        }
    }

    #[test]
    fn single_sphere_volume() {
        let spec = OrchardSpec { rows: 1, trees_per_row: 1, points_per_tree: 50_000, ..Default::default() };
        let (_, truth) = generate_orchard(&spec).unwrap();
        assert!((truth.trees[0].true_volume_m3 - 33.5103).abs() < 1e-4);
    }

    #[test]
    fn lattice_centroids() {
        let (_, truth) = generate_orchard(&small()).unwrap();
        assert_eq!(truth.trees.len(), 10);
        for t in &truth.trees {
            assert_eq!(t.center.x, t.index as f64 * 5.0);
            assert_eq!(t.center.y, if t.row == 0 { -4.0 } else { 4.0 });
        }
    }

    #[test]
    fn overlap_brings_crowns_together() {
        let spec = OrchardSpec { tree_spacing: 4.0, crown_overlap_fraction: 0.3, ..small() };
        let trees = tree_layout(&spec).unwrap();
        let d = trees[0].center.dist(trees[1].center);
        assert!((d - 2.8).abs() < 1e-12);
        assert!(d < trees[0].radii[0] + trees[1].radii[0]);
    }

    #[test]
    fn counts_labels_and_containment() {
        let spec = OrchardSpec { crown_radius_jitter: 0.1, crown: CrownShape::Ellipsoid { a: 2.0, b: 1.5, c: 1.8 }, ..small() };
        let (cloud, truth) = generate_orchard(&spec).unwrap();
        assert_eq!(cloud.len(), truth.point_tree.len());
        assert_eq!(cloud.len(), 10 * (3_000 + 400) + 2_000);
        for t in &truth.trees {
            let members: Vec<usize> = (0..cloud.len()).filter(|&i| truth.point_tree[i] == t.tree_id as i64).collect();
            assert_eq!(members.len(), spec.points_per_tree);
            assert!(members.iter().all(|&i| t.contains(cloud.points[i], 1e-12)));
            assert!((t.true_volume_m3 - ellipsoid_volume(t.radii)).abs() < 1e-12);
        }
        assert!(truth.point_part.iter().filter(|p| **p == Part::Ground).count() == 2_000);
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let (a, ta) = generate_orchard(&small()).unwrap();
        let (b, tb) = generate_orchard(&small()).unwrap();
        assert_eq!(a.points, b.points);
        assert_eq!(ta, tb);
        let (c, _) = generate_orchard(&OrchardSpec { seed: 1, ..small() }).unwrap();
        assert_ne!(a.points, c.points);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(generate_orchard(&OrchardSpec { rows: 0, ..small() }).is_err());
        assert!(generate_orchard(&OrchardSpec { crown_overlap_fraction: 1.0, ..small() }).is_err());
        assert!(generate_orchard(&OrchardSpec { tree_spacing: -1.0, ..small() }).is_err());
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn sphere_from_diameter() {
        assert!((sphere_volume_from_diameter(2.0).unwrap() - 4.18879).abs() < 1e-5);
        assert!((sphere_volume_from_diameter(1.0).unwrap() - 0.523599).abs() < 1e-6);
        let d = (6.0 * 28.06 / PI).cbrt();
        assert!((d - 3.768).abs() < 5e-3);
        assert!((sphere_volume_from_diameter(d).unwrap() - 28.06).abs() < 1e-6);
        assert!(sphere_volume_from_diameter(0.0).is_err());
    }

    #[test]
    fn truth_csv_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truth.csv");
        let trees = tree_layout(&small()).unwrap();
        write_truth_csv(&trees, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), TRUTH_HEADER.join(","));
        assert_eq!(text.lines().count(), 11);
    }
}
