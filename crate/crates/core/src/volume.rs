//! Canopy volume from a Delaunay tetrahedralization: the convex hull is the
//! union of all finite tetrahedra and the alpha shape keeps those whose
//! circumradius does not exceed alpha.
//!
//! Predicates are exact (adaptive arithmetic). Coordinates are still nudged
//! by a fixed, seeded offset of at most 1e-9 m per axis so that cospherical
//! and coplanar configurations, common in voxel-grid output, do not occur.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use robust::{insphere, orient2d, orient3d, Coord, Coord3D};

use crate::error::{Error, Result};
use crate::geom::{voxel_downsample, Aabb, Point3, PointCloud};
use crate::segment::TreeCluster;

pub const JITTER: f64 = 1e-9;
const JITTER_SEED: u64 = 0x6a09_e667_f3bc_c908;

const INF: u32 = u32::MAX;
const NONE: u32 = u32::MAX;
const DEAD: u32 = u32::MAX - 1;

/// Closed triangle mesh with outward (counterclockwise from outside) faces.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3>,
    pub faces: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn translated(&self, t: Point3) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(|&v| v + t).collect(),
            faces: self.faces.clone(),
        }
    }

    /// Signed distance from `p` to the plane of face `f` (positive outside).
    pub fn face_distance(&self, f: usize, p: Point3) -> f64 {
        let [a, b, c] = self.faces[f].map(|i| self.vertices[i as usize]);
        let n = (b - a).cross(c - a);
        let len = n.norm();
        if len == 0.0 {
            return 0.0;
        }
        (p - a).dot(n) / len
    }
}

#[derive(Debug, Clone, Copy)]
struct Tet {
    v: [u32; 4],
    n: [u32; 4],
}

impl Tet {
    fn inf_pos(&self) -> Option<usize> {
        self.v.iter().position(|&v| v == INF)
    }

    fn is_dead(&self) -> bool {
        self.v[0] == DEAD
    }
}

#[inline]
fn c3(p: [f64; 3]) -> Coord3D<f64> {
    Coord3D {
        x: p[0],
        y: p[1],
        z: p[2],
    }
}

#[inline]
fn orient(a: [f64; 3], b: [f64; 3], c: [f64; 3], d: [f64; 3]) -> f64 {
    orient3d(c3(a), c3(b), c3(c), c3(d))
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Delaunay tetrahedralization of a point set, built incrementally with
/// ghost tetrahedra on the hull.
pub struct Delaunay {
    /// Centered, jittered coordinates in input order.
    pts: Vec<[f64; 3]>,
    tets: Vec<Tet>,
    free: Vec<u32>,
    marks: Vec<u32>,
    epoch: u32,
}

fn spread_bits(mut v: u64) -> u64 {
    v &= 0x1f_ffff;
    v = (v | v << 32) & 0x001f_0000_0000_ffff;
    v = (v | v << 16) & 0x1f_0000_ff00_00ff;
    v = (v | v << 8) & 0x100f_00f0_0f00_f00f;
    v = (v | v << 4) & 0x10c3_0c30_c30c_30c3;
    v = (v | v << 2) & 0x1249_2492_4924_9249;
    v
}

impl Delaunay {
    /// Fails with a degenerate-geometry error when fewer than four points
    /// are given or all points are coplanar.
    pub fn new(points: &[Point3]) -> Result<Delaunay> {
        if points.len() < 4 {
            return Err(Error::Degenerate(format!(
                "{} points cannot span a volume",
                points.len()
            )));
        }
        if let Some(p) = points.iter().find(|p| !p.is_finite()) {
            return Err(Error::param("points", format!("non-finite coordinate {p:?}")));
        }
        let center = Aabb::from_points(points).expect("non-empty").center();
        let local: Vec<[f64; 3]> = points.iter().map(|&p| (p - center).to_array()).collect();
        let seed = initial_simplex(&local)?;
        let mut rng = ChaCha8Rng::seed_from_u64(JITTER_SEED);
        let pts: Vec<[f64; 3]> = local
            .iter()
            .map(|p| p.map(|c| c + rng.random_range(-JITTER..=JITTER)))
            .collect();

        let mut dt = Delaunay {
            pts,
            tets: Vec::with_capacity(points.len() * 7),
            free: Vec::new(),
            marks: Vec::new(),
            epoch: 0,
        };
        let mut s = seed;
        let o = orient(dt.pts[s[0] as usize], dt.pts[s[1] as usize], dt.pts[s[2] as usize], dt.pts[s[3] as usize]);
        if o == 0.0 {
            return Err(Error::Degenerate("initial simplex flat after jitter".into()));
        }
        if o < 0.0 {
            s.swap(0, 1);
        }
        dt.init(s);

        let mut order: Vec<u32> = (0..points.len() as u32).filter(|i| !seed.contains(i)).collect();
        let bb = Aabb::from_points(points).unwrap();
        let ext = bb.extent().to_array().map(|e| if e > 0.0 { e } else { 1.0 });
        let scale = ((1u64 << 21) - 1) as f64;
        let code = |i: u32| {
            let p = points[i as usize].to_array();
            let q = |k: usize| (((p[k] - bb.min.to_array()[k]) / ext[k]) * scale) as u64;
            spread_bits(q(0)) | spread_bits(q(1)) << 1 | spread_bits(q(2)) << 2
        };
        order.sort_by_cached_key(|&i| (code(i), i));

        let mut hint = 0u32;
        for vi in order {
            dt.insert(vi, &mut hint)?;
        }
        Ok(dt)
    }

    fn init(&mut self, s: [u32; 4]) {
        self.tets.push(Tet { v: s, n: [NONE; 4] });
        for k in 0..4 {
            let mut v = s;
            v[k] = INF;
            // orientation with INF standing for an outside point is the
            // reverse of the finite tet's, so swap two finite vertices
            v.swap((k + 1) % 4, (k + 2) % 4);
            self.tets.push(Tet { v, n: [NONE; 4] });
        }
        let all: Vec<u32> = (0..5).collect();
        self.link_by_faces(&all);
    }

    fn link_by_faces(&mut self, ids: &[u32]) {
        let mut pending: Vec<([u32; 3], u32, usize)> = Vec::new();
        for &t in ids {
            for f in 0..4 {
                let mut key = [0u32; 3];
                let mut k = 0;
                for (j, &v) in self.tets[t as usize].v.iter().enumerate() {
                    if j != f {
                        key[k] = v;
                        k += 1;
                    }
                }
                key.sort_unstable();
                if let Some(pos) = pending.iter().position(|e| e.0 == key) {
                    let (_, t2, f2) = pending.swap_remove(pos);
                    self.tets[t as usize].n[f] = t2;
                    self.tets[t2 as usize].n[f2] = t;
                } else {
                    pending.push((key, t, f));
                }
            }
        }
    }

    #[inline]
    fn coord(&self, v: u32, p: [f64; 3]) -> [f64; 3] {
        if v == INF {
            p
        } else {
            self.pts[v as usize]
        }
    }

    fn finite_insphere(&self, t: u32, p: [f64; 3]) -> f64 {
        let v = self.tets[t as usize].v;
        let q = v.map(|i| self.pts[i as usize]);
        insphere(c3(q[0]), c3(q[1]), c3(q[2]), c3(q[3]), c3(p))
    }

    fn in_conflict(&self, t: u32, p: [f64; 3]) -> bool {
        let tet = self.tets[t as usize];
        match tet.inf_pos() {
            None => self.finite_insphere(t, p) > 0.0,
            Some(j) => {
                let q = tet.v.map(|v| self.coord(v, p));
                let o = orient(q[0], q[1], q[2], q[3]);
                if o > 0.0 {
                    true
                } else if o < 0.0 {
                    false
                } else {
                    // on the hull plane: inside the face's circumcircle iff
                    // inside the circumsphere of the tet behind it
                    self.finite_insphere(tet.n[j], p) > 0.0
                }
            }
        }
    }

    /// A tetrahedron in conflict with `p`, or `None` when `p` duplicates an
    /// existing vertex.
    fn locate(&self, p: [f64; 3], hint: u32) -> Option<u32> {
        let mut t = hint;
        let tet = self.tets[t as usize];
        if let Some(j) = tet.inf_pos() {
            if self.in_conflict(t, p) {
                return Some(t);
            }
            t = tet.n[j];
        }
        let limit = 4 * self.tets.len() + 64;
        let mut state = 0x9e37_79b9u32;
        for _ in 0..limit {
            let tet = self.tets[t as usize];
            state ^= state << 13;
            state ^= state >> 17;
            state ^= state << 5;
            let rot = (state % 4) as usize;
            let mut next = None;
            for r in 0..4 {
                let i = (r + rot) % 4;
                let mut q = tet.v.map(|v| self.pts[v as usize]);
                q[i] = p;
                if orient(q[0], q[1], q[2], q[3]) < 0.0 {
                    next = Some(tet.n[i]);
                    break;
                }
            }
            match next {
                None => {
                    if tet.v.iter().any(|&v| self.pts[v as usize] == p) {
                        return None;
                    }
                    return Some(t);
                }
                Some(n) => {
                    t = n;
                    if self.tets[t as usize].inf_pos().is_some() {
                        return Some(t);
                    }
                }
            }
        }
        // walk did not settle; fall back to a scan
        (0..self.tets.len() as u32).find(|&t| !self.tets[t as usize].is_dead() && self.in_conflict(t, p))
    }

    fn alloc(&mut self, tet: Tet) -> u32 {
        if let Some(t) = self.free.pop() {
            self.tets[t as usize] = tet;
            t
        } else {
            self.tets.push(tet);
            self.marks.push(0);
            (self.tets.len() - 1) as u32
        }
    }

    fn insert(&mut self, vi: u32, hint: &mut u32) -> Result<()> {
        let p = self.pts[vi as usize];
        let Some(start) = self.locate(p, *hint) else {
            return Ok(());
        };
        if self.marks.len() < self.tets.len() {
            self.marks.resize(self.tets.len(), 0);
        }
        self.epoch = self.epoch.wrapping_add(2);
        if self.epoch == 0 {
            self.marks.iter_mut().for_each(|m| *m = 0);
            self.epoch = 2;
        }
        let (in_cavity, outside) = (self.epoch | 1, self.epoch);
        let mut cavity = vec![start];
        self.marks[start as usize] = in_cavity;
        let mut boundary: Vec<(u32, usize)> = Vec::new();
        let mut k = 0;
        while k < cavity.len() {
            let t = cavity[k];
            k += 1;
            for i in 0..4 {
                let nb = self.tets[t as usize].n[i];
                let m = self.marks[nb as usize];
                if m == in_cavity {
                    continue;
                }
                if m == outside {
                    boundary.push((t, i));
                    continue;
                }
                if self.in_conflict(nb, p) {
                    self.marks[nb as usize] = in_cavity;
                    cavity.push(nb);
                } else {
                    self.marks[nb as usize] = outside;
                    boundary.push((t, i));
                }
            }
        }

        let mut pending: Vec<((u32, u32), u32, usize)> = Vec::new();
        let mut last = NONE;
        for &(t, i) in &boundary {
            let old = self.tets[t as usize];
            let mut v = old.v;
            v[i] = vi;
            let outer = old.n[i];
            let mut n = [NONE; 4];
            n[i] = outer;
            let new = self.alloc(Tet { v, n });
            if self.marks.len() < self.tets.len() {
                self.marks.resize(self.tets.len(), 0);
            }
            self.marks[new as usize] = 0;
            let back = self.tets[outer as usize]
                .n
                .iter()
                .position(|&x| x == t)
                .ok_or_else(|| Error::Topology("cavity boundary lost its neighbor".into()))?;
            self.tets[outer as usize].n[back] = new;
            for j in 0..4 {
                if j == i {
                    continue;
                }
                let mut e = [0u32; 2];
                let mut c = 0;
                for (x, &vx) in v.iter().enumerate() {
                    if x != i && x != j {
                        e[c] = vx;
                        c += 1;
                    }
                }
                let key = (e[0].min(e[1]), e[0].max(e[1]));
                if let Some(pos) = pending.iter().position(|q| q.0 == key) {
                    let (_, t2, j2) = pending.swap_remove(pos);
                    self.tets[new as usize].n[j] = t2;
                    self.tets[t2 as usize].n[j2] = new;
                } else {
                    pending.push((key, new, j));
                }
            }
            last = new;
        }
        if !pending.is_empty() {
            return Err(Error::Topology("cavity faces left unmatched".into()));
        }
        for &t in &cavity {
            self.tets[t as usize].v[0] = DEAD;
            self.free.push(t);
        }
        *hint = last;
        Ok(())
    }

    fn live(&self) -> impl Iterator<Item = &Tet> {
        self.tets.iter().filter(|t| !t.is_dead())
    }

    /// Vertex index quadruples of the finite tetrahedra.
    pub fn tetrahedra(&self) -> Vec<[u32; 4]> {
        self.live().filter(|t| t.inf_pos().is_none()).map(|t| t.v).collect()
    }

    pub fn tet_volume(&self, v: [u32; 4]) -> f64 {
        let a = self.pts[v[0] as usize];
        let [b, c, d] = [1, 2, 3].map(|k| sub(self.pts[v[k] as usize], a));
        dot(b, cross(c, d)).abs() / 6.0
    }

    pub fn circumradius(&self, v: [u32; 4]) -> f64 {
        let a = self.pts[v[0] as usize];
        let [u, w, x] = [1, 2, 3].map(|k| sub(self.pts[v[k] as usize], a));
        let det = dot(u, cross(w, x));
        if det == 0.0 {
            return f64::INFINITY;
        }
        let (uu, ww, xx) = (dot(u, u), dot(w, w), dot(x, x));
        let cwx = cross(w, x);
        let cxu = cross(x, u);
        let cuw = cross(u, w);
        let o: [f64; 3] = std::array::from_fn(|k| (uu * cwx[k] + ww * cxu[k] + xx * cuw[k]) / (2.0 * det));
        dot(o, o).sqrt()
    }

    /// Sum of all finite tetrahedra, i.e. the hull volume.
    pub fn hull_volume(&self) -> f64 {
        self.tetrahedra().into_iter().map(|v| self.tet_volume(v)).sum()
    }

    /// Volume of the tetrahedra with circumradius at most `alpha`.
    pub fn alpha_volume(&self, alpha: f64) -> f64 {
        self.tetrahedra()
            .into_iter()
            .filter(|&v| self.circumradius(v) <= alpha)
            .map(|v| self.tet_volume(v))
            .sum()
    }

    /// Outward hull triangles, as indices into the input points.
    pub fn hull_faces(&self) -> Vec<[u32; 3]> {
        self.live()
            .filter_map(|t| {
                let j = t.inf_pos()?;
                let inner = self.tets[t.n[j] as usize];
                let mut f = [0u32; 3];
                let mut k = 0;
                for (x, &v) in t.v.iter().enumerate() {
                    if x != j {
                        f[k] = v;
                        k += 1;
                    }
                }
                let apex = inner.v.iter().copied().find(|v| !f.contains(v)).unwrap();
                let [a, b, c] = f.map(|i| self.pts[i as usize]);
                if orient(a, b, c, self.pts[apex as usize]) < 0.0 {
                    f.swap(1, 2);
                }
                Some(f)
            })
            .collect()
    }

    /// Structural and empty-circumsphere check; quadratic, for tests.
    pub fn validate(&self) -> std::result::Result<(), String> {
        for (ti, t) in self.tets.iter().enumerate() {
            if t.is_dead() {
                continue;
            }
            for i in 0..4 {
                let n = t.n[i];
                let nt = self.tets.get(n as usize).ok_or(format!("tet {ti} face {i} unlinked"))?;
                if nt.is_dead() || !nt.n.contains(&(ti as u32)) {
                    return Err(format!("tet {ti} face {i} not mutual"));
                }
            }
            if t.inf_pos().is_none() {
                let q = t.v.map(|v| self.pts[v as usize]);
                if orient(q[0], q[1], q[2], q[3]) <= 0.0 {
                    return Err(format!("tet {ti} not positively oriented"));
                }
                for (pi, &p) in self.pts.iter().enumerate() {
                    if !t.v.contains(&(pi as u32)) && self.finite_insphere(ti as u32, p) > 0.0 {
                        return Err(format!("point {pi} inside circumsphere of tet {ti}"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Four affinely independent points, chosen well spread; exact tests decide.
fn initial_simplex(p: &[[f64; 3]]) -> Result<[u32; 4]> {
    let flat = || Error::Degenerate("all points are coplanar".into());
    let a = 0usize;
    let b = (0..p.len())
        .max_by(|&i, &j| dist2(p[i], p[a]).total_cmp(&dist2(p[j], p[a])).then(j.cmp(&i)))
        .unwrap();
    if p[b] == p[a] {
        return Err(Error::Degenerate("all points coincide".into()));
    }
    let area = |i: usize| {
        let c = cross(sub(p[b], p[a]), sub(p[i], p[a]));
        dot(c, c)
    };
    let collinear = |i: usize| {
        let proj = |x: usize, y: usize, q: [f64; 3]| Coord { x: q[x], y: q[y] };
        [(0, 1), (1, 2), (0, 2)]
            .iter()
            .all(|&(x, y)| orient2d(proj(x, y, p[a]), proj(x, y, p[b]), proj(x, y, p[i])) == 0.0)
    };
    let mut c = (0..p.len()).max_by(|&i, &j| area(i).total_cmp(&area(j)).then(j.cmp(&i))).unwrap();
    if collinear(c) {
        c = (0..p.len()).find(|&i| !collinear(i)).ok_or_else(flat)?;
    }
    let vol = |i: usize| orient(p[a], p[b], p[c], p[i]).abs();
    let mut d = (0..p.len()).max_by(|&i, &j| vol(i).total_cmp(&vol(j)).then(j.cmp(&i))).unwrap();
    if vol(d) == 0.0 {
        d = (0..p.len()).find(|&i| vol(i) != 0.0).ok_or_else(flat)?;
    }
    Ok([a as u32, b as u32, c as u32, d as u32])
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = sub(a, b);
    dot(d, d)
}

/// Convex hull as an outward-oriented triangle mesh over the hull vertices.
pub fn convex_hull(cloud: &PointCloud) -> Result<TriangleMesh> {
    let dt = Delaunay::new(&cloud.points)?;
    let faces = dt.hull_faces();
    let mut remap = vec![u32::MAX; cloud.len()];
    let mut vertices = Vec::new();
    let faces = faces
        .into_iter()
        .map(|f| {
            f.map(|v| {
                if remap[v as usize] == u32::MAX {
                    remap[v as usize] = vertices.len() as u32;
                    vertices.push(cloud.points[v as usize]);
                }
                remap[v as usize]
            })
        })
        .collect();
    Ok(TriangleMesh { vertices, faces })
}

/// Enclosed volume of a closed, consistently oriented mesh.
pub fn mesh_volume(mesh: &TriangleMesh) -> Result<f64> {
    use std::collections::HashMap;
    if mesh.faces.is_empty() {
        return Err(Error::Topology("mesh has no faces".into()));
    }
    let mut directed: HashMap<(u32, u32), u32> = HashMap::with_capacity(mesh.faces.len() * 3);
    for f in &mesh.faces {
        if f.iter().any(|&v| v as usize >= mesh.vertices.len()) {
            return Err(Error::Topology("face references a missing vertex".into()));
        }
        for k in 0..3 {
            *directed.entry((f[k], f[(k + 1) % 3])).or_default() += 1;
        }
    }
    for (&(a, b), &count) in &directed {
        if count != 1 || directed.get(&(b, a)) != Some(&1) {
            return Err(Error::Topology(format!(
                "edge ({a}, {b}) is not shared by exactly two consistently oriented faces"
            )));
        }
    }
    let r = mesh.vertices[mesh.faces[0][0] as usize];
    let six_v: f64 = mesh
        .faces
        .iter()
        .map(|f| {
            let [a, b, c] = f.map(|i| mesh.vertices[i as usize] - r);
            a.dot(b.cross(c))
        })
        .sum();
    Ok(six_v / 6.0)
}

pub fn alpha_shape_volume(cloud: &PointCloud, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::param("alpha", format!("must be positive, got {alpha}")));
    }
    Ok(Delaunay::new(&cloud.points)?.alpha_volume(alpha))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeVolume {
    pub convex_hull_volume: f64,
    pub alpha_shape_volume: f64,
    /// Points left after per-tree downsampling.
    pub volume_points: usize,
    /// Reason the volumes were set to 0, if any.
    pub degenerate: Option<String>,
}

/// Both volumes for each cluster, computed on the cluster's points
/// downsampled at `resolution`. Degenerate clusters are flagged with zero
/// volumes instead of failing the batch.
pub fn estimate_tree_volumes(
    cloud: &PointCloud,
    clusters: &[TreeCluster],
    alpha: f64,
    resolution: f64,
) -> Result<Vec<TreeVolume>> {
    if !(alpha > 0.0) {
        return Err(Error::param("alpha", format!("must be positive, got {alpha}")));
    }
    if !(resolution > 0.0) {
        return Err(Error::param("downsample_resolution", format!("must be positive, got {resolution}")));
    }
    clusters
        .par_iter()
        .map(|c| {
            let pts = cloud.select(&c.point_indices);
            let down = voxel_downsample(&pts, resolution)?;
            match Delaunay::new(&down.points) {
                Ok(dt) => Ok(TreeVolume {
                    convex_hull_volume: dt.hull_volume(),
                    alpha_shape_volume: dt.alpha_volume(alpha),
                    volume_points: down.len(),
                    degenerate: None,
                }),
                Err(Error::Degenerate(reason)) => Ok(TreeVolume {
                    convex_hull_volume: 0.0,
                    alpha_shape_volume: 0.0,
                    volume_points: down.len(),
                    degenerate: Some(reason),
                }),
                Err(e) => Err(e),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segment::Provenance;

    fn cube_corners() -> Vec<Point3> {
        let mut v = Vec::new();
        for x in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for z in [0.0, 1.0] {
                    v.push(Point3::new(x, y, z));
                }
            }
        }
        v
    }

    fn regular_tet(a: f64) -> Vec<Point3> {
        let s = a / (2.0 * 2f64.sqrt());
        vec![
            Point3::new(s, s, s),
            Point3::new(s, -s, -s),
            Point3::new(-s, s, -s),
            Point3::new(-s, -s, s),
        ]
    }

    fn ball(n: usize, r: f64, seed: u64) -> Vec<Point3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let v = Point3::new(rng.random_range(-r..r), rng.random_range(-r..r), rng.random_range(-r..r));
            if v.norm_squared() <= r * r {
                out.push(v);
            }
        }
        out
    }

    #[test]
    fn insphere_sign_convention() {
        let t = regular_tet(1.0);
        let q = t.iter().map(|p| p.to_array()).collect::<Vec<_>>();
        let (a, b, c, d) = if orient(q[0], q[1], q[2], q[3]) > 0.0 { (q[0], q[1], q[2], q[3]) } else { (q[1], q[0], q[2], q[3]) };
        assert!(insphere(c3(a), c3(b), c3(c), c3(d), c3([0.0; 3])) > 0.0);
        assert!(insphere(c3(a), c3(b), c3(c), c3(d), c3([5.0, 0.0, 0.0])) < 0.0);
    }

    #[test]
    fn cube_hull() {
        let mesh = convex_hull(&PointCloud::new(cube_corners())).unwrap();
        assert_eq!(mesh.faces.len(), 12);
        assert!((mesh_volume(&mesh).unwrap() - 1.0).abs() < 1e-12);
        let mut with_center = cube_corners();
        with_center.push(Point3::new(0.5, 0.5, 0.5));
        let mesh2 = convex_hull(&PointCloud::new(with_center)).unwrap();
        assert_eq!(mesh2.faces.len(), 12);
        assert!((mesh_volume(&mesh2).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn regular_tetrahedron_volume() {
        let expected = 1.0 / (6.0 * 2f64.sqrt());
        let cloud = PointCloud::new(regular_tet(1.0));
        let mesh = convex_hull(&cloud).unwrap();
        assert!((mesh_volume(&mesh).unwrap() - expected).abs() < 1e-12);
        let r = 6f64.sqrt() / 4.0;
        // jitter moves each vertex by at most 1e-9 m
        assert!((alpha_shape_volume(&cloud, r + 1e-6).unwrap() - expected).abs() < 1e-8);
        assert_eq!(alpha_shape_volume(&cloud, r * 0.9).unwrap(), 0.0);
    }

    #[test]
    fn translated_mesh_same_volume() {
        let mesh = convex_hull(&PointCloud::new(ball(2000, 1.5, 1))).unwrap();
        let v = mesh_volume(&mesh).unwrap();
        let w = mesh_volume(&mesh.translated(Point3::new(1000.0, 1000.0, 1000.0))).unwrap();
        assert!((v - w).abs() <= 1e-6 * v);
    }

    #[test]
    fn open_mesh_rejected() {
        let mut mesh = convex_hull(&PointCloud::new(cube_corners())).unwrap();
        mesh.faces.pop();
        assert!(matches!(mesh_volume(&mesh), Err(Error::Topology(_))));
    }

    #[test]
    fn degenerate_inputs() {
        let three = PointCloud::new(cube_corners()[..3].to_vec());
        assert!(matches!(convex_hull(&three), Err(Error::Degenerate(_))));
        let plane: Vec<Point3> = (0..50).map(|i| Point3::new(i as f64, (i * i % 7) as f64, 0.0)).collect();
        assert!(matches!(convex_hull(&PointCloud::new(plane)), Err(Error::Degenerate(_))));
        let line: Vec<Point3> = (0..10).map(|i| Point3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(matches!(convex_hull(&PointCloud::new(line)), Err(Error::Degenerate(_))));
        let same = vec![Point3::new(1.0, 1.0, 1.0); 6];
        assert!(matches!(convex_hull(&PointCloud::new(same)), Err(Error::Degenerate(_))));
    }

    #[test]
    fn grid_points_triangulate() {
        // cospherical lattice points are the hard case for Delaunay
        let mut pts = Vec::new();
        for x in 0..6 {
            for y in 0..5 {
                for z in 0..4 {
                    pts.push(Point3::new(x as f64 * 0.1, y as f64 * 0.1, z as f64 * 0.1));
                }
            }
        }
        let dt = Delaunay::new(&pts).unwrap();
        dt.validate().unwrap();
        assert!((dt.hull_volume() - 0.5 * 0.4 * 0.3).abs() < 1e-9);
    }

    #[test]
    fn ball_hull_close_to_analytic() {
        let pts = ball(20_000, 1.5, 7);
        let cloud = PointCloud::new(pts);
        let mesh = convex_hull(&cloud).unwrap();
        let v = mesh_volume(&mesh).unwrap();
        let exact = 4.0 / 3.0 * std::f64::consts::PI * 1.5f64.powi(3);
        // the hull of uniform interior samples falls short of the ball by
        // roughly 3% at this size (the gap shrinks like n^-1/2)
        let deficit = (exact - v) / exact;
        assert!(deficit > 0.0 && deficit < 0.04, "{v} vs {exact}");
        for &p in &cloud.points {
            let worst = (0..mesh.faces.len()).map(|f| mesh.face_distance(f, p)).fold(f64::MIN, f64::max);
            assert!(worst <= 1e-9, "point outside hull by {worst}");
        }
        let a = alpha_shape_volume(&cloud, 10.0).unwrap();
        // flat hull slivers have circumradius above 10 m, so the gap is
        // small but not zero; covering every circumradius closes it
        assert!(a <= v && (v - a) / v < 1e-3, "{a} vs {v}");
        let dt = Delaunay::new(&cloud.points).unwrap();
        let r_max = dt.tetrahedra().into_iter().map(|t| dt.circumradius(t)).fold(0.0, f64::max);
        let full = dt.alpha_volume(r_max);
        assert!((full - dt.hull_volume()).abs() <= 1e-9 * full);
        assert!((full - v).abs() <= 1e-6 * v);
    }

    #[test]
    fn sphere_surface_hull_within_two_percent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Point3> = (0..20_000)
            .map(|_| loop {
                let v = Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                let n = v.norm();
                if n > 1e-3 && n <= 1.0 {
                    break v * (1.5 / n);
                }
            })
            .collect();
        let v = mesh_volume(&convex_hull(&PointCloud::new(pts)).unwrap()).unwrap();
        let exact = 4.0 / 3.0 * std::f64::consts::PI * 1.5f64.powi(3);
        assert!((v - exact).abs() / exact < 0.02, "{v} vs {exact}");
    }

    #[test]
    fn small_instances_are_delaunay() {
        for seed in 0..30 {
            let n = 5 + (seed as usize * 7) % 46;
            let dt = Delaunay::new(&ball(n, 1.0, seed)).unwrap();
            dt.validate().unwrap();
        }
    }

    #[test]
    fn tiny_cluster_flagged() {
        let cloud = PointCloud::new(cube_corners());
        let cl = |idx: Vec<usize>| TreeCluster {
            centroid: Point3::ORIGIN,
            point_indices: idx,
            provenance: Provenance::Dbscan,
            source_cluster_id: None,
            split_by_components: false,
        };
        let out = estimate_tree_volumes(&cloud, &[cl(vec![0, 1, 2]), cl((0..8).collect())], 0.9, 0.1).unwrap();
        assert!(out[0].degenerate.is_some());
        assert_eq!(out[0].convex_hull_volume, 0.0);
        assert!((out[1].convex_hull_volume - 1.0).abs() < 1e-8);
        assert!(out[1].degenerate.is_none());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(20))]
            #[test]
            fn alpha_monotone_and_bounded(seed in any::<u64>(), n in 4usize..300, a1 in 0.05f64..3.0, a2 in 0.05f64..3.0) {
                let dt = Delaunay::new(&ball(n, 1.0, seed)).unwrap();
                let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
                let (vl, vh, hull) = (dt.alpha_volume(lo), dt.alpha_volume(hi), dt.hull_volume());
                prop_assert!(vl <= vh);
                prop_assert!(vh <= hull + 1e-9);
            }

            #[test]
            fn hull_volume_rigid_invariant(seed in any::<u64>(), n in 4usize..200, angle in 0.0f64..std::f64::consts::TAU, t in -500.0f64..500.0) {
                let pts = ball(n, 1.0, seed);
                let v = mesh_volume(&convex_hull(&PointCloud::new(pts.clone())).unwrap()).unwrap();
                let (s, c) = angle.sin_cos();
                let moved: Vec<Point3> = pts.iter().rev().map(|p| Point3::new(c * p.x - s * p.y + t, s * p.x + c * p.y - t, p.z + t)).collect();
                let w = mesh_volume(&convex_hull(&PointCloud::new(moved)).unwrap()).unwrap();
                prop_assert!((v - w).abs() <= 1e-6 * v.max(1e-12));
            }

            #[test]
            fn interior_points_do_not_change_hull(seed in any::<u64>(), n in 4usize..100) {
                let pts = ball(n, 1.0, seed);
                let v = mesh_volume(&convex_hull(&PointCloud::new(pts.clone())).unwrap()).unwrap();
                let c = crate::geom::centroid_of(&pts).unwrap();
                let mut more = pts.clone();
                for p in &pts {
                    more.push(c + (*p - c) * 0.5);
                }
                let w = mesh_volume(&convex_hull(&PointCloud::new(more)).unwrap()).unwrap();
                prop_assert!((v - w).abs() <= 1e-9 * v.max(1.0));
            }
        }
    }
}
