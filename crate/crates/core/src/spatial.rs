//! Exact neighbor search over a uniform grid.
//!
//! Points are bucketed into cubic cells; each cell stores a contiguous run of
//! point indices in ascending order. Radius queries scan the cells overlapping
//! the query ball, kNN queries expand Chebyshev shells of cells until the k-th
//! best distance is provably final.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::hash::{BuildHasherDefault, Hasher};
use std::ops::Range;

use crate::error::{Error, Result};
use crate::geom::{Aabb, Point3};

pub(crate) type CellKey = [i64; 3];

/// Multiply-xorshift hasher for integer cell keys.
#[derive(Default, Clone, Copy)]
pub(crate) struct CellHasher(u64);

impl Hasher for CellHasher {
    #[inline]
    fn finish(&self) -> u64 {
        let mut h = self.0;
        h ^= h >> 33;
        h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
        h ^= h >> 33;
        h
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = (self.0 ^ b as u64).wrapping_mul(0x100_0000_01b3);
        }
    }

    #[inline]
    fn write_i64(&mut self, v: i64) {
        self.0 = (self.0.rotate_left(21) ^ v as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    }

    #[inline]
    fn write_usize(&mut self, _: usize) {
        // array length prefix; constant for CellKey
    }
}

pub(crate) type CellMap<V> = HashMap<CellKey, V, BuildHasherDefault<CellHasher>>;

/// Immutable grid index over a point set. Queries take `&self` and may run
/// concurrently.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    origin: Point3,
    cell: f64,
    /// Point indices grouped by cell, ascending within each cell.
    sorted: Vec<u32>,
    /// Coordinates parallel to `sorted`.
    sorted_points: Vec<Point3>,
    cells: CellMap<Range<u32>>,
    key_min: CellKey,
    key_max: CellKey,
    len: usize,
}

#[derive(Clone, Copy, PartialEq)]
struct Candidate {
    d2: f64,
    idx: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2
            .total_cmp(&other.d2)
            .then_with(|| self.idx.cmp(&other.idx))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl SpatialIndex {
    /// Builds a grid with the given cell side. Fails on an empty point set
    /// or a non-positive cell size.
    pub fn new(points: &[Point3], cell_size: f64) -> Result<Self> {
        if !(cell_size > 0.0) || !cell_size.is_finite() {
            return Err(Error::param(
                "cell_size",
                format!("must be positive and finite, got {cell_size}"),
            ));
        }
        let bb = Aabb::from_points(points).ok_or(Error::EmptyInput("spatial index"))?;
        let origin = bb.min;
        let key_of = |p: Point3| -> CellKey {
            [
                ((p.x - origin.x) / cell_size).floor() as i64,
                ((p.y - origin.y) / cell_size).floor() as i64,
                ((p.z - origin.z) / cell_size).floor() as i64,
            ]
        };
        let keys: Vec<CellKey> = points.iter().map(|&p| key_of(p)).collect();
        let mut sorted: Vec<u32> = (0..points.len() as u32).collect();
        sorted.sort_by_key(|&i| keys[i as usize]);

        let mut cells = CellMap::default();
        let mut key_min = [i64::MAX; 3];
        let mut key_max = [i64::MIN; 3];
        let mut start = 0usize;
        while start < sorted.len() {
            let key = keys[sorted[start] as usize];
            let mut end = start + 1;
            while end < sorted.len() && keys[sorted[end] as usize] == key {
                end += 1;
            }
            for a in 0..3 {
                key_min[a] = key_min[a].min(key[a]);
                key_max[a] = key_max[a].max(key[a]);
            }
            cells.insert(key, start as u32..end as u32);
            start = end;
        }
        let sorted_points = sorted.iter().map(|&i| points[i as usize]).collect();
        Ok(SpatialIndex {
            origin,
            cell: cell_size,
            sorted,
            sorted_points,
            cells,
            key_min,
            key_max,
            len: points.len(),
        })
    }

    /// Grid sized so that a cell holds roughly `k` points on average, which
    /// keeps kNN shell expansion short.
    pub fn for_knn(points: &[Point3], k: usize) -> Result<Self> {
        let bb = Aabb::from_points(points).ok_or(Error::EmptyInput("spatial index"))?;
        let ext = bb.extent().to_array();
        let diag = bb.diagonal();
        let floor = diag * 1e-6;
        let spanning: Vec<f64> = ext.iter().copied().filter(|&e| e > floor).collect();
        let cell = if spanning.is_empty() {
            1.0
        } else {
            let volume: f64 = spanning.iter().product();
            let per_point = volume * k.max(1) as f64 / points.len() as f64;
            per_point.powf(1.0 / spanning.len() as f64).max(floor)
        };
        SpatialIndex::new(points, cell)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    #[inline]
    pub(crate) fn key_of(&self, p: Point3) -> CellKey {
        [
            ((p.x - self.origin.x) / self.cell).floor() as i64,
            ((p.y - self.origin.y) / self.cell).floor() as i64,
            ((p.z - self.origin.z) / self.cell).floor() as i64,
        ]
    }

    /// Occupied cells with their runs into [`Self::cell_members`].
    pub(crate) fn cells(&self) -> impl Iterator<Item = (&CellKey, &Range<u32>)> {
        self.cells.iter()
    }

    pub(crate) fn cell_members(&self, run: Range<u32>) -> (&[u32], &[Point3]) {
        let r = run.start as usize..run.end as usize;
        (&self.sorted[r.clone()], &self.sorted_points[r])
    }

    /// All indices within distance `r` of `p` (inclusive), ascending.
    pub fn radius_query(&self, p: Point3, r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.radius_query_into(p, r, &mut out);
        out
    }

    /// Like [`Self::radius_query`] but reuses `out`.
    pub fn radius_query_into(&self, p: Point3, r: f64, out: &mut Vec<usize>) {
        out.clear();
        let r2 = r * r;
        let lo = self.key_of(p - Point3::new(r, r, r));
        let hi = self.key_of(p + Point3::new(r, r, r));
        let lo = [
            lo[0].max(self.key_min[0]),
            lo[1].max(self.key_min[1]),
            lo[2].max(self.key_min[2]),
        ];
        let hi = [
            hi[0].min(self.key_max[0]),
            hi[1].min(self.key_max[1]),
            hi[2].min(self.key_max[2]),
        ];
        if (0..3).any(|a| lo[a] > hi[a]) {
            return;
        }
        let span = (0..3)
            .map(|a| (hi[a] - lo[a] + 1) as u128)
            .product::<u128>();
        let mut scan = |run: &Range<u32>| {
            let (ids, pts) = self.cell_members(run.clone());
            for (&i, &q) in ids.iter().zip(pts) {
                if q.dist2(p) <= r2 {
                    out.push(i as usize);
                }
            }
        };
        if span > self.cells.len() as u128 {
            for (key, run) in &self.cells {
                if (0..3).all(|a| key[a] >= lo[a] && key[a] <= hi[a]) {
                    scan(run);
                }
            }
        } else {
            for i in lo[0]..=hi[0] {
                for j in lo[1]..=hi[1] {
                    for k in lo[2]..=hi[2] {
                        if let Some(run) = self.cells.get(&[i, j, k]) {
                            scan(run);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
    }

    /// The `k` nearest indices to `p`, nearest first; equal distances are
    /// ordered by ascending index.
    pub fn knn_query(&self, p: Point3, k: usize) -> Result<Vec<usize>> {
        if k == 0 || k > self.len {
            return Err(Error::param(
                "k",
                format!("must be in 1..={}, got {k}", self.len),
            ));
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        let center = self.key_of(p);
        let offer = |run: &Range<u32>, heap: &mut BinaryHeap<Candidate>| {
            let (ids, pts) = self.cell_members(run.clone());
            for (&i, &q) in ids.iter().zip(pts) {
                let c = Candidate {
                    d2: q.dist2(p),
                    idx: i,
                };
                if heap.len() < k {
                    heap.push(c);
                } else if c < *heap.peek().expect("heap is full") {
                    heap.pop();
                    heap.push(c);
                }
            }
        };

        let mut shell: i64 = 0;
        loop {
            let shell_cells = if shell == 0 {
                1u128
            } else {
                let a = (2 * shell + 1) as u128;
                let b = (2 * shell - 1) as u128;
                a * a * a - b * b * b
            };
            if shell_cells > self.cells.len() as u128 {
                for (key, run) in &self.cells {
                    let cheb = (0..3).map(|a| (key[a] - center[a]).abs()).max().unwrap();
                    if cheb == shell {
                        offer(run, &mut heap);
                    }
                }
            } else {
                for_each_shell_cell(center, shell, |key| {
                    if let Some(run) = self.cells.get(&key) {
                        offer(run, &mut heap);
                    }
                });
            }

            let covered = (0..3).all(|a| {
                center[a] - shell <= self.key_min[a] && center[a] + shell >= self.key_max[a]
            });
            if covered {
                break;
            }
            if heap.len() == k {
                // distance from p to the outside of the searched cube of cells
                let pa = p.to_array();
                let oa = self.origin.to_array();
                let mut bound = f64::INFINITY;
                for a in 0..3 {
                    let lower = oa[a] + (center[a] - shell) as f64 * self.cell;
                    let upper = oa[a] + (center[a] + shell + 1) as f64 * self.cell;
                    bound = bound.min(pa[a] - lower).min(upper - pa[a]);
                }
                let bound = bound.max(0.0);
                if heap.peek().expect("heap is full").d2 < bound * bound {
                    break;
                }
            }
            shell += 1;
        }
        let mut best = heap.into_vec();
        best.sort_unstable();
        Ok(best.into_iter().map(|c| c.idx as usize).collect())
    }
}

/// Calls `f` for every cell at Chebyshev distance exactly `shell` from `c`.
fn for_each_shell_cell(c: CellKey, shell: i64, mut f: impl FnMut(CellKey)) {
    if shell == 0 {
        f(c);
        return;
    }
    for i in -shell..=shell {
        for j in -shell..=shell {
            let on_face = i.abs() == shell || j.abs() == shell;
            if on_face {
                for k in -shell..=shell {
                    f([c[0] + i, c[1] + j, c[2] + k]);
                }
            } else {
                f([c[0] + i, c[1] + j, c[2] - shell]);
                f([c[0] + i, c[1] + j, c[2] + shell]);
            }
        }
    }
}

/// O(n) reference scans; used by tests and as a fallback for tiny inputs.
pub mod brute {
    use crate::geom::Point3;

    pub fn radius(points: &[Point3], p: Point3, r: f64) -> Vec<usize> {
        let r2 = r * r;
        (0..points.len())
            .filter(|&i| points[i].dist2(p) <= r2)
            .collect()
    }

    pub fn knn(points: &[Point3], p: Point3, k: usize) -> Vec<usize> {
        let mut all: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .map(|(i, q)| (q.dist2(p), i))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.truncate(k);
        all.into_iter().map(|(_, i)| i).collect()
    }
}
