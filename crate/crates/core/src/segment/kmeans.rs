//! Seeded k-means++ over dense row-major data.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Independent k-means++ starts; the lowest-inertia run wins.
const RESTARTS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<u32>,
    /// `k * dim` row-major.
    pub centers: Vec<f64>,
    pub inertia: f64,
    pub iterations: usize,
}

fn d2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Clusters `n = data.len() / dim` rows into `k` groups. Lloyd iterations
/// stop after `max_iters` or once no center moves more than `tol`. Empty
/// clusters keep their previous center.
pub fn kmeans(
    data: &[f64],
    dim: usize,
    k: usize,
    max_iters: usize,
    tol: f64,
    rng: &mut ChaCha8Rng,
) -> KMeansResult {
    assert!(dim > 0 && k > 0 && data.len().is_multiple_of(dim));
    let n = data.len() / dim;
    assert!(n >= k, "fewer rows than clusters");
    let mut best: Option<KMeansResult> = None;
    for _ in 0..RESTARTS {
        let centers = plus_plus(data, dim, k, rng);
        let run = lloyd(data, dim, k, centers, max_iters, tol);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    best.expect("at least one restart")
}

fn plus_plus(data: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = data.len() / dim;
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut centers = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centers.extend_from_slice(row(first));
    let mut nearest: Vec<f64> = (0..n).map(|i| d2(row(i), row(first))).collect();
    for _ in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random_range(0.0..total);
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in nearest.iter().enumerate() {
                acc += w;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = row(pick).to_vec();
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(d2(row(i), &c));
        }
        centers.extend_from_slice(&c);
    }
    centers
}

fn lloyd(
    data: &[f64],
    dim: usize,
    k: usize,
    mut centers: Vec<f64>,
    max_iters: usize,
    tol: f64,
) -> KMeansResult {
    let n = data.len() / dim;
    let mut labels = vec![0u32; n];
    let mut iterations = 0;
    for _ in 0..max_iters.max(1) {
        iterations += 1;
        assign(data, dim, k, &centers, &mut labels);
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            let l = l as usize;
            counts[l] += 1;
            for d in 0..dim {
                sums[l * dim + d] += data[i * dim + d];
            }
        }
        let mut shift = 0.0f64;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let new: Vec<f64> = (0..dim).map(|d| sums[c * dim + d] / counts[c] as f64).collect();
            shift = shift.max(d2(&new, &centers[c * dim..(c + 1) * dim]).sqrt());
            centers[c * dim..(c + 1) * dim].copy_from_slice(&new);
        }
        if shift <= tol {
            break;
        }
    }
    assign(data, dim, k, &centers, &mut labels);
    let inertia = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| d2(&data[i * dim..(i + 1) * dim], &centers[l as usize * dim..(l as usize + 1) * dim]))
        .sum();
    KMeansResult {
        labels,
        centers,
        inertia,
        iterations,
    }
}

fn assign(data: &[f64], dim: usize, k: usize, centers: &[f64], labels: &mut [u32]) {
    for (i, l) in labels.iter_mut().enumerate() {
        let r = &data[i * dim..(i + 1) * dim];
        let mut best = (f64::INFINITY, 0u32);
        for c in 0..k {
            let d = d2(r, &centers[c * dim..(c + 1) * dim]);
            if d < best.0 {
                best = (d, c as u32);
            }
        }
        *l = best.1;
    }
}
