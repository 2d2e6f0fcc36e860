//! Smallest eigenpairs of a graph's normalized Laplacian.
//!
//! Small graphs go through a dense solver. Larger ones use Lanczos with full
//! reorthogonalization on `2I - L`, whose largest eigenvalues are the
//! smallest of `L` (the spectrum of `L` lies in `[0, 2]`).

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{inv_sqrt_degrees, laplacian_apply, normalized_laplacian_dense, KnnGraph};

/// Graphs up to this size are solved densely.
const DENSE_LIMIT: usize = 600;
const RESIDUAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct EigenPair {
    pub value: f64,
    pub vector: Vec<f64>,
}

/// Up to `m` eigenpairs of smallest eigenvalue, ascending. Vectors have unit
/// norm. Each connected component is solved on its own and the results are
/// merged, since a disconnected graph has repeated eigenvalues that a single
/// Krylov sequence cannot separate. Fails only when an iteration does not
/// converge.
pub fn smallest_eigenpairs(g: &KnnGraph, m: usize, seed: u64) -> Result<Vec<EigenPair>, String> {
    let n = g.len();
    let m = m.min(n);
    if m == 0 {
        return Ok(Vec::new());
    }
    let (labels, count) = g.components();
    if count == 1 {
        return connected_smallest(g, m, seed);
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); count];
    for (i, &l) in labels.iter().enumerate() {
        members[l as usize].push(i);
    }
    let mut all: Vec<(f64, usize, usize, Vec<f64>)> = Vec::new();
    for (c, vs) in members.iter().enumerate() {
        let sub = g.induced(vs);
        let pairs = connected_smallest(&sub, m, seed.wrapping_add(c as u64))?;
        for (r, p) in pairs.into_iter().enumerate() {
            all.push((p.value, c, r, p.vector));
        }
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    Ok(all
        .into_iter()
        .take(m)
        .map(|(value, c, _, local)| {
            let mut vector = vec![0.0; n];
            for (&v, x) in members[c].iter().zip(local) {
                vector[v] = x;
            }
            EigenPair { value, vector }
        })
        .collect())
}

fn connected_smallest(g: &KnnGraph, m: usize, seed: u64) -> Result<Vec<EigenPair>, String> {
    let n = g.len();
    let m = m.min(n);
    if n <= DENSE_LIMIT {
        return Ok(dense(g, m));
    }
    let isd = inv_sqrt_degrees(g);
    let mut lx = vec![0.0; n];
    let op = |x: &[f64], y: &mut [f64]| {
        laplacian_apply(g, &isd, x, &mut lx);
        for i in 0..n {
            y[i] = 2.0 * x[i] - lx[i];
        }
    };
    let top = lanczos_largest(n, op, m, seed)?;
    Ok(top
        .into_iter()
        .map(|p| EigenPair {
            value: (2.0 - p.value).max(0.0),
            vector: p.vector,
        })
        .collect())
}

fn dense(g: &KnnGraph, m: usize) -> Vec<EigenPair> {
    let eig = SymmetricEigen::new(normalized_laplacian_dense(g));
    let mut order: Vec<usize> = (0..g.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    order
        .into_iter()
        .take(m)
        .map(|c| EigenPair {
            value: eig.eigenvalues[c].max(0.0),
            vector: eig.eigenvectors.column(c).iter().copied().collect(),
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn orthogonalize(w: &mut [f64], basis: &[Vec<f64>]) {
    // two passes keep the basis orthonormal to working precision
    for _ in 0..2 {
        for q in basis {
            let c = dot(q, w);
            axpy(-c, q, w);
        }
    }
}

fn random_unit(n: usize, rng: &mut ChaCha8Rng, basis: &[Vec<f64>]) -> Option<Vec<f64>> {
    for _ in 0..8 {
        let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
        orthogonalize(&mut v, basis);
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            return Some(v);
        }
    }
    None
}

/// `m` largest eigenpairs of a symmetric operator, descending.
fn lanczos_largest(
    n: usize,
    mut op: impl FnMut(&[f64], &mut [f64]),
    m: usize,
    seed: u64,
) -> Result<Vec<EigenPair>, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut q = random_unit(n, &mut rng, &basis).ok_or("could not draw a start vector")?;
    let mut w = vec![0.0; n];
    let mut next_check = (2 * m).max(20);
    loop {
        op(&q, &mut w);
        let a = dot(&q, &w);
        axpy(-a, &q, &mut w);
        if let (Some(&b), Some(prev)) = (beta.last(), basis.last()) {
            axpy(-b, prev, &mut w);
        }
        basis.push(q);
        alpha.push(a);
        orthogonalize(&mut w, &basis);
        let b = dot(&w, &w).sqrt();
        let steps = basis.len();
        let exhausted = steps == n;
        let breakdown = b < 1e-10;

        if steps >= m && (steps >= next_check || exhausted || breakdown) {
            next_check = steps + (steps / 8).max(10);
            let (values, vectors) = tridiagonal_eigen(&alpha, &beta);
            let mut order: Vec<usize> = (0..steps).collect();
            order.sort_by(|&i, &j| values[j].total_cmp(&values[i]).then(i.cmp(&j)));
            let converged = exhausted
                || order[..m]
                    .iter()
                    .all(|&c| (b * vectors[(steps - 1, c)]).abs() <= RESIDUAL_TOL);
            if converged {
                return Ok(order[..m]
                    .iter()
                    .map(|&c| {
                        let mut v = vec![0.0; n];
                        for (k, qk) in basis.iter().enumerate() {
                            axpy(vectors[(k, c)], qk, &mut v);
                        }
                        let norm = dot(&v, &v).sqrt();
                        v.iter_mut().for_each(|x| *x /= norm);
                        EigenPair {
                            value: values[c],
                            vector: v,
                        }
                    })
                    .collect());
            }
        }
        if exhausted {
            return Err("Lanczos iteration exhausted the space without converging".into());
        }
        if breakdown {
            // invariant subspace found; continue in its orthogonal complement
            q = random_unit(n, &mut rng, &basis).ok_or("Lanczos restart failed")?;
            beta.push(0.0);
        } else {
            q = w.iter().map(|x| x / b).collect();
            beta.push(b);
        }
    }
}

fn tridiagonal_eigen(alpha: &[f64], beta: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let k = alpha.len();
    let mut t = DMatrix::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alpha[i];
        if i + 1 < k {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
}
