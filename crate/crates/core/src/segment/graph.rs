//! Symmetrized kNN graphs and their normalized Laplacian.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{Point3, PointCloud};
use crate::spatial::SpatialIndex;

/// Undirected, unweighted graph stored as sorted adjacency lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnnGraph {
    adj: Vec<Vec<u32>>,
}

impl KnnGraph {
    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.adj[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Edges `(i, j)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adj.iter().enumerate().flat_map(|(i, ns)| {
            ns.iter()
                .map(|&j| j as usize)
                .filter(move |&j| j > i)
                .map(move |j| (i, j))
        })
    }

    /// Component label per vertex plus the component count. Labels are
    /// numbered in order of each component's lowest vertex.
    pub fn components(&self) -> (Vec<u32>, usize) {
        let n = self.len();
        let mut label = vec![u32::MAX; n];
        let mut count = 0u32;
        let mut stack = Vec::new();
        for s in 0..n {
            if label[s] != u32::MAX {
                continue;
            }
            label[s] = count;
            stack.push(s);
            while let Some(v) = stack.pop() {
                for &w in &self.adj[v] {
                    if label[w as usize] == u32::MAX {
                        label[w as usize] = count;
                        stack.push(w as usize);
                    }
                }
            }
            count += 1;
        }
        (label, count as usize)
    }

    /// Subgraph induced by `vertices` (ascending), renumbered 0..len.
    pub fn induced(&self, vertices: &[usize]) -> KnnGraph {
        let mut local = vec![u32::MAX; self.len()];
        for (li, &v) in vertices.iter().enumerate() {
            local[v] = li as u32;
        }
        let adj = vertices
            .iter()
            .map(|&v| {
                self.adj[v]
                    .iter()
                    .map(|&w| local[w as usize])
                    .filter(|&w| w != u32::MAX)
                    .collect()
            })
            .collect();
        KnnGraph { adj }
    }

    #[cfg(test)]
    pub(crate) fn from_adjacency(adj: Vec<Vec<u32>>) -> KnnGraph {
        KnnGraph { adj }
    }
}

/// `j` is linked to `i` when either is among the other's `k` nearest
/// neighbors (ties by lower index). Requires at least `k + 1` points.
pub fn knn_graph(cloud: &PointCloud, k: usize) -> Result<KnnGraph> {
    knn_graph_points(&cloud.points, k)
}

pub fn knn_graph_points(points: &[Point3], k: usize) -> Result<KnnGraph> {
    let n = points.len();
    if k == 0 {
        return Err(Error::param("knn_k", "must be at least 1"));
    }
    if n < k + 1 {
        return Err(Error::param(
            "knn_k",
            format!("graph needs at least k + 1 = {} points, got {n}", k + 1),
        ));
    }
    let index = SpatialIndex::for_knn(points, k + 1)?;
    let directed: Vec<Vec<u32>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let found = index.knn_query(points[i], k + 1)?;
            Ok(found
                .into_iter()
                .filter(|&j| j != i)
                .take(k)
                .map(|j| j as u32)
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut adj = directed.clone();
    for (i, ns) in directed.iter().enumerate() {
        for &j in ns {
            adj[j as usize].push(i as u32);
        }
    }
    adj.par_iter_mut().for_each(|ns| {
        ns.sort_unstable();
        ns.dedup();
    });
    Ok(KnnGraph { adj })
}

/// `D^-1/2` diagonal; isolated vertices get 0 so their Laplacian row is the
/// identity row.
pub(crate) fn inv_sqrt_degrees(g: &KnnGraph) -> Vec<f64> {
    (0..g.len())
        .map(|i| match g.degree(i) {
            0 => 0.0,
            d => 1.0 / (d as f64).sqrt(),
        })
        .collect()
}

/// `y = L x` with `L = I - D^-1/2 A D^-1/2`.
pub(crate) fn laplacian_apply(g: &KnnGraph, inv_sqrt_deg: &[f64], x: &[f64], y: &mut [f64]) {
    y.par_iter_mut().enumerate().for_each(|(i, yi)| {
        let s: f64 = g.adj[i].iter().map(|&j| inv_sqrt_deg[j as usize] * x[j as usize]).sum();
        *yi = x[i] - inv_sqrt_deg[i] * s;
    });
}

/// Dense symmetric normalized Laplacian. Only sensible for small graphs.
pub fn normalized_laplacian_dense(g: &KnnGraph) -> DMatrix<f64> {
    let n = g.len();
    let isd = inv_sqrt_degrees(g);
    let mut l = DMatrix::identity(n, n);
    for (i, j) in g.edges() {
        let v = -isd[i] * isd[j];
        l[(i, j)] = v;
        l[(j, i)] = v;
    }
    l
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::brute;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn random_points(n: usize, seed: u64) -> Vec<Point3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Point3::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0), rng.random_range(0.0..4.0)))
            .collect()
    }

    fn brute_edges(points: &[Point3], k: usize) -> BTreeSet<(usize, usize)> {
        let mut edges = BTreeSet::new();
        for (i, &p) in points.iter().enumerate() {
            // brute::knn includes the query point itself when it is among the nearest
            let near: Vec<usize> = brute::knn(points, p, k + 1).into_iter().filter(|&j| j != i).take(k).collect();
            for j in near {
                edges.insert((i.min(j), i.max(j)));
            }
        }
        edges
    }

    #[test]
    fn collinear_k1() {
        let pts = vec![Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0), Point3::new(2.5, 0.0, 0.0)];
        let g = knn_graph_points(&pts, 1).unwrap();
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn k_n_minus_one_is_complete() {
        let pts = random_points(12, 3);
        let g = knn_graph_points(&pts, 11).unwrap();
        assert_eq!(g.edge_count(), 12 * 11 / 2);
    }

    #[test]
    fn too_small_rejected() {
        assert!(matches!(knn_graph_points(&random_points(5, 1), 5), Err(Error::Parameter { .. })));
        assert!(knn_graph_points(&random_points(5, 1), 0).is_err());
    }

    #[test]
    fn matches_brute_force_500() {
        let pts = random_points(500, 8);
        let g = knn_graph_points(&pts, 10).unwrap();
        assert_eq!(g.edges().collect::<BTreeSet<_>>(), brute_edges(&pts, 10));
    }

    #[test]
    fn duplicates_never_self_loop() {
        let pts = vec![Point3::ORIGIN; 6];
        let g = knn_graph_points(&pts, 2).unwrap();
        assert!((0..6).all(|i| !g.neighbors(i).contains(&(i as u32))));
    }

    #[test]
    fn components_ordered_by_lowest_vertex() {
        let g = KnnGraph::from_adjacency(vec![vec![2], vec![], vec![0], vec![]]);
        assert_eq!(g.components(), (vec![0, 1, 0, 2], 3));
    }

    #[test]
    fn laplacian_apply_matches_dense() {
        let pts = random_points(80, 4);
        let g = knn_graph_points(&pts, 4).unwrap();
        let dense = normalized_laplacian_dense(&g);
        let x: Vec<f64> = (0..80).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut y = vec![0.0; 80];
        laplacian_apply(&g, &inv_sqrt_degrees(&g), &x, &mut y);
        let yd = &dense * nalgebra::DVector::from_vec(x);
        for i in 0..80 {
            assert!((y[i] - yd[i]).abs() < 1e-12);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        fn union_find_components(n: usize, edges: &[(usize, usize)]) -> usize {
            let mut parent: Vec<usize> = (0..n).collect();
            fn find(p: &mut [usize], mut x: usize) -> usize {
                while p[x] != x {
                    p[x] = p[p[x]];
                    x = p[x];
                }
                x
            }
            for &(a, b) in edges {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                parent[ra] = rb;
            }
            (0..n).filter(|&i| find(&mut parent, i) == i).count()
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]
            #[test]
            fn graph_matches_brute(seed in any::<u64>(), n in 2usize..300, k in 1usize..12) {
                prop_assume!(n > k);
                let pts = random_points(n, seed);
                let g = knn_graph_points(&pts, k).unwrap();
                prop_assert_eq!(g.edges().collect::<BTreeSet<_>>(), brute_edges(&pts, k));
            }

            #[test]
            fn zero_eigenvalues_count_components(seed in any::<u64>(), blobs in 1usize..5, per in 5usize..60) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut pts = Vec::new();
                for b in 0..blobs {
                    let c = Point3::new(b as f64 * 50.0, 0.0, 0.0);
                    for _ in 0..per {
                        pts.push(c + Point3::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)));
                    }
                }
                let g = knn_graph_points(&pts, 3).unwrap();
                let edges: Vec<_> = g.edges().collect();
                let comps = union_find_components(pts.len(), &edges);
                prop_assert_eq!(g.components().1, comps);
                let eig = nalgebra::SymmetricEigen::new(normalized_laplacian_dense(&g));
                let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
                prop_assert!(min.abs() < 1e-8);
                let zeros = eig.eigenvalues.iter().filter(|v| v.abs() < 1e-8).count();
                prop_assert_eq!(zeros, comps);
            }
        }
    }
}
