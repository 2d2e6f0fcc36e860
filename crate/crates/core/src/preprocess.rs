//! Ground-plane RANSAC and removal of ground and trunk points.

use nalgebra::{Matrix3, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{centroid_of, Point3, PointCloud};

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessParams {
    pub ransac_iterations: usize,
    /// Maximum point-plane distance of an inlier, meters.
    pub ransac_distance_threshold: f64,
    /// Points at or below this height above the ground plane are dropped.
    pub trunk_band_height: f64,
    pub seed: u64,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        PreprocessParams {
            ransac_iterations: 500,
            ransac_distance_threshold: 0.15,
            trunk_band_height: 0.8,
            seed: 0,
        }
    }
}

impl PreprocessParams {
    pub fn validate(&self) -> Result<()> {
        if self.ransac_iterations == 0 {
            return Err(Error::param("ransac_iterations", "must be at least 1"));
        }
        if !(self.ransac_distance_threshold > 0.0) || !self.ransac_distance_threshold.is_finite() {
            return Err(Error::param(
                "ransac_distance_threshold",
                format!("must be positive, got {}", self.ransac_distance_threshold),
            ));
        }
        if !(self.trunk_band_height > 0.0) || !self.trunk_band_height.is_finite() {
            return Err(Error::param(
                "trunk_band_height",
                format!("must be positive, got {}", self.trunk_band_height),
            ));
        }
        Ok(())
    }
}

/// Plane `{p : normal·p + d = 0}` with a unit, upward-facing normal.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneModel {
    pub normal: Point3,
    pub d: f64,
    /// Ascending indices of points within the fitting threshold.
    pub inlier_indices: Vec<usize>,
}

impl PlaneModel {
    /// Signed distance along the normal; positive above the ground.
    #[inline]
    pub fn height(&self, p: Point3) -> f64 {
        self.normal.dot(p) + self.d
    }
}

struct Hypothesis {
    normal: Point3,
    d: f64,
}

fn plane_through(a: Point3, b: Point3, c: Point3) -> Option<Hypothesis> {
    let e1 = b - a;
    let e2 = c - a;
    let n = e1.cross(e2);
    let len = n.norm();
    if !(len > 1e-12 * e1.norm() * e2.norm()) {
        return None;
    }
    let normal = n / len;
    Some(Hypothesis {
        normal,
        d: -normal.dot(a),
    })
}

fn inliers(points: &[Point3], normal: Point3, d: f64, threshold: f64) -> Vec<usize> {
    points
        .iter()
        .enumerate()
        .filter(|(_, &p)| (normal.dot(p) + d).abs() <= threshold)
        .map(|(i, _)| i)
        .collect()
}

/// Least-squares plane through `points`: normal is the eigenvector of the
/// scatter matrix with the smallest eigenvalue.
fn least_squares_plane(points: &[Point3]) -> Result<(Point3, f64)> {
    let c = centroid_of(points)?;
    let mut m = Matrix3::<f64>::zeros();
    for &p in points {
        let v = p - c;
        let a = [v.x, v.y, v.z];
        for r in 0..3 {
            for s in 0..3 {
                m[(r, s)] += a[r] * a[s];
            }
        }
    }
    let eig = SymmetricEigen::new(m);
    let (mut best, mut best_val) = (0, f64::INFINITY);
    for i in 0..3 {
        if eig.eigenvalues[i] < best_val {
            best_val = eig.eigenvalues[i];
            best = i;
        }
    }
    let col = eig.eigenvectors.column(best);
    let n = Point3::new(col[0], col[1], col[2]);
    let len = n.norm();
    if !(len > 0.0) || !len.is_finite() {
        return Err(Error::Fit("least-squares refit produced no normal".into()));
    }
    let n = n / len;
    Ok((n, -n.dot(c)))
}

/// Seeded RANSAC ground-plane fit.
///
/// All hypotheses are drawn up front from one seeded stream, scored
/// independently (in parallel), and reduced by `(inlier count desc, draw
/// index asc)`, so the result does not depend on thread count. The winner is
/// refined by least squares over its inliers and the inlier set recomputed
/// once against the refined plane.
pub fn ransac_plane(cloud: &PointCloud, params: &PreprocessParams) -> Result<PlaneModel> {
    params.validate()?;
    let pts = &cloud.points;
    let n = pts.len();
    if n < 3 {
        return Err(Error::Fit(format!("need at least 3 points, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let samples: Vec<[usize; 3]> = (0..params.ransac_iterations)
        .map(|_| {
            let a = rng.random_range(0..n);
            let mut b = rng.random_range(0..n);
            while b == a {
                b = rng.random_range(0..n);
            }
            let mut c = rng.random_range(0..n);
            while c == a || c == b {
                c = rng.random_range(0..n);
            }
            [a, b, c]
        })
        .collect();

    let threshold = params.ransac_distance_threshold;
    let best = samples
        .par_iter()
        .enumerate()
        .filter_map(|(i, s)| {
            let h = plane_through(pts[s[0]], pts[s[1]], pts[s[2]])?;
            let count = pts
                .iter()
                .filter(|&&p| (h.normal.dot(p) + h.d).abs() <= threshold)
                .count();
            Some((count, i, h.normal, h.d))
        })
        .reduce_with(|a, b| {
            if (b.0, std::cmp::Reverse(b.1)) > (a.0, std::cmp::Reverse(a.1)) {
                b
            } else {
                a
            }
        })
        .ok_or_else(|| Error::Fit("every sampled triple was collinear".into()))?;

    let (_, _, normal, d) = best;
    let first = inliers(pts, normal, d, threshold);
    let support: Vec<Point3> = first.iter().map(|&i| pts[i]).collect();
    let (mut normal, mut d) = least_squares_plane(&support)?;
    if normal.z < 0.0 {
        normal = -normal;
        d = -d;
    }
    Ok(PlaneModel {
        inlier_indices: inliers(pts, normal, d, threshold),
        normal,
        d,
    })
}

/// Indices of canopy points: neither plane inliers nor within the trunk band.
pub fn canopy_indices(cloud: &PointCloud, plane: &PlaneModel, band: f64) -> Vec<usize> {
    let mut is_inlier = vec![false; cloud.len()];
    for &i in &plane.inlier_indices {
        is_inlier[i] = true;
    }
    cloud
        .points
        .iter()
        .enumerate()
        .filter(|&(i, &p)| !is_inlier[i] && plane.height(p) > band)
        .map(|(i, _)| i)
        .collect()
}

/// Drops ground-plane inliers, then everything within `trunk_band_height` of
/// the plane. Survivors keep their input order.
pub fn remove_ground_and_trunk(cloud: &PointCloud, params: &PreprocessParams) -> Result<PointCloud> {
    let plane = ransac_plane(cloud, params)?;
    Ok(cloud.select(&canopy_indices(cloud, &plane, params.trunk_band_height)))
}
