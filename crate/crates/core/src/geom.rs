//! Geometric primitives: points, clouds, bounding boxes and voxel-grid
//! downsampling.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point (or vector) in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    #[inline]
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    #[inline]
    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    #[inline]
    pub fn from_array(a: [f64; 3]) -> Self {
        Point3::new(a[0], a[1], a[2])
    }

    #[inline]
    pub fn dot(self, o: Point3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Point3) -> Point3 {
        Point3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// Squared Euclidean distance. Every neighborhood predicate in the crate
    /// compares this value against `r * r` so that indexed and brute-force
    /// searches agree bit for bit.
    #[inline]
    pub fn dist2(self, o: Point3) -> f64 {
        let dx = self.x - o.x;
        let dy = self.y - o.y;
        let dz = self.z - o.z;
        dx * dx + dy * dy + dz * dz
    }

    #[inline]
    pub fn dist(self, o: Point3) -> f64 {
        self.dist2(o).sqrt()
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    #[inline]
    pub fn component_min(self, o: Point3) -> Point3 {
        Point3::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    #[inline]
    pub fn component_max(self, o: Point3) -> Point3 {
        Point3::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }
}

impl Add for Point3 {
    type Output = Point3;
    #[inline]
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Point3 {
    #[inline]
    fn add_assign(&mut self, o: Point3) {
        self.x += o.x;
        self.y += o.y;
        self.z += o.z;
    }
}

impl Sub for Point3 {
    type Output = Point3;
    #[inline]
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    #[inline]
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Div<f64> for Point3 {
    type Output = Point3;
    #[inline]
    fn div(self, s: f64) -> Point3 {
        Point3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Point3 {
    type Output = Point3;
    #[inline]
    fn neg(self) -> Point3 {
        Point3::new(-self.x, -self.y, -self.z)
    }
}

/// An ordered point cloud. Filtering operations preserve relative order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub frame_note: String,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        PointCloud {
            points,
            frame_note: String::new(),
        }
    }

    pub fn with_note(points: Vec<Point3>, note: impl Into<String>) -> Self {
        PointCloud {
            points,
            frame_note: note.into(),
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.points.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn aabb(&self) -> Option<Aabb> {
        Aabb::from_points(&self.points)
    }

    /// Points at `indices`, in the order given.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            frame_note: self.frame_note.clone(),
        }
    }

    pub fn translated(&self, t: Point3) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|&p| p + t).collect(),
            frame_note: self.frame_note.clone(),
        }
    }
}

impl From<Vec<Point3>> for PointCloud {
    fn from(points: Vec<Point3>) -> Self {
        PointCloud::new(points)
    }
}

/// Axis-aligned bounding box, `min <= max` componentwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub fn from_points(points: &[Point3]) -> Option<Aabb> {
        let first = *points.first()?;
        let (min, max) = points
            .iter()
            .fold((first, first), |(lo, hi), &p| {
                (lo.component_min(p), hi.component_max(p))
            });
        Some(Aabb { min, max })
    }

    pub fn extent(&self) -> Point3 {
        self.max - self.min
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn center(&self) -> Point3 {
        (self.min + self.max) * 0.5
    }

    pub fn contains(&self, p: Point3) -> bool {
        p.x >= self.min.x
            && p.y >= self.min.y
            && p.z >= self.min.z
            && p.x <= self.max.x
            && p.y <= self.max.y
            && p.z <= self.max.z
    }
}

/// Integer voxel coordinates relative to a grid origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VoxelKey {
    pub i: i64,
    pub j: i64,
    pub k: i64,
}

impl VoxelKey {
    #[inline]
    pub fn of(p: Point3, origin: Point3, resolution: f64) -> VoxelKey {
        VoxelKey {
            i: ((p.x - origin.x) / resolution).floor() as i64,
            j: ((p.y - origin.y) / resolution).floor() as i64,
            k: ((p.z - origin.z) / resolution).floor() as i64,
        }
    }
}

/// Result of bucketing a cloud into voxels.
#[derive(Debug, Clone)]
pub struct VoxelGrouping {
    /// Occupied voxels in ascending key order.
    pub keys: Vec<VoxelKey>,
    /// Voxel centroids, parallel to `keys`.
    pub centroids: Vec<Point3>,
    /// For each input point, the position of its voxel in `keys`.
    pub voxel_of_point: Vec<u32>,
}

impl VoxelGrouping {
    pub fn into_cloud(self, note: String) -> PointCloud {
        PointCloud::with_note(self.centroids, note)
    }
}

fn check_resolution(resolution: f64) -> Result<()> {
    if !(resolution > 0.0) || !resolution.is_finite() {
        return Err(Error::param(
            "resolution",
            format!("must be positive and finite, got {resolution}"),
        ));
    }
    Ok(())
}

/// Buckets `points` into voxels of side `resolution` anchored at `origin`.
pub fn voxel_group(points: &[Point3], resolution: f64, origin: Point3) -> Result<VoxelGrouping> {
    check_resolution(resolution)?;
    let keys: Vec<VoxelKey> = points
        .iter()
        .map(|&p| VoxelKey::of(p, origin, resolution))
        .collect();
    let mut order: Vec<u32> = (0..points.len() as u32).collect();
    // stable: members of a voxel stay in input order
    order.sort_by_key(|&i| keys[i as usize]);

    let mut out_keys = Vec::new();
    let mut centroids = Vec::new();
    let mut voxel_of_point = vec![0u32; points.len()];
    let mut start = 0;
    while start < order.len() {
        let key = keys[order[start] as usize];
        let mut end = start + 1;
        while end < order.len() && keys[order[end] as usize] == key {
            end += 1;
        }
        let members = &order[start..end];
        let anchor = points[members[0] as usize];
        let mut acc = Point3::ORIGIN;
        for &m in members {
            acc += points[m as usize] - anchor;
            voxel_of_point[m as usize] = out_keys.len() as u32;
        }
        centroids.push(anchor + acc / members.len() as f64);
        out_keys.push(key);
        start = end;
    }
    Ok(VoxelGrouping {
        keys: out_keys,
        centroids,
        voxel_of_point,
    })
}

/// One point per occupied voxel, at the centroid of that voxel's points.
/// The grid is anchored at the cloud's minimum corner; output is ordered by
/// ascending voxel key.
pub fn voxel_downsample(cloud: &PointCloud, resolution: f64) -> Result<PointCloud> {
    check_resolution(resolution)?;
    let Some(bb) = cloud.aabb() else {
        return Ok(PointCloud::with_note(Vec::new(), cloud.frame_note.clone()));
    };
    Ok(voxel_group(&cloud.points, resolution, bb.min)?.into_cloud(cloud.frame_note.clone()))
}

/// Same as [`voxel_downsample`] with an explicit grid origin.
pub fn voxel_downsample_with_origin(
    cloud: &PointCloud,
    resolution: f64,
    origin: Point3,
) -> Result<PointCloud> {
    Ok(voxel_group(&cloud.points, resolution, origin)?.into_cloud(cloud.frame_note.clone()))
}

/// Arithmetic mean of a non-empty point set.
pub fn centroid_of(points: &[Point3]) -> Result<Point3> {
    let Some(&anchor) = points.first() else {
        return Err(Error::EmptyInput("centroid of an empty point set"));
    };
    let mut acc = Point3::ORIGIN;
    for &p in points {
        acc += p - anchor;
    }
    Ok(anchor + acc / points.len() as f64)
}

pub fn centroid(cloud: &PointCloud) -> Result<Point3> {
    centroid_of(&cloud.points)
}
