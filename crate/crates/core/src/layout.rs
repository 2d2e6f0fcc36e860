//! Grouping tree centroids into rows and assigning sequential labels.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    L,
    R,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::L => "L",
            Side::R => "R",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayoutParams {
    pub row_distance_threshold: f64,
    /// y of the robot path; rows below it are on the right.
    pub reference_y: f64,
}

impl Default for LayoutParams {
    fn default() -> Self {
        LayoutParams {
            row_distance_threshold: 2.0,
            reference_y: 0.0,
        }
    }
}

impl LayoutParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.row_distance_threshold > 0.0) || !self.row_distance_threshold.is_finite() {
            return Err(Error::param(
                "row_distance_threshold",
                format!("must be positive, got {}", self.row_distance_threshold),
            ));
        }
        if !self.reference_y.is_finite() {
            return Err(Error::param("reference_y", "must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowModel {
    /// Side letter followed by the row's rank on that side, e.g. `L0`.
    pub row_id: String,
    pub side: Side,
    pub index_on_side: usize,
    /// Cluster ids in ascending centroid x.
    pub members: Vec<usize>,
    /// Least-squares fit `y = slope * x + intercept`.
    pub slope: f64,
    pub intercept: f64,
    pub mean_y: f64,
}

impl RowModel {
    pub fn fit_y(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeLabel {
    pub cluster_id: usize,
    pub label: String,
    pub row_id: String,
    pub index_in_row: usize,
}

fn by_xy_then_id(a: &(usize, Point3), b: &(usize, Point3)) -> Ordering {
    a.1.x
        .total_cmp(&b.1.x)
        .then(a.1.y.total_cmp(&b.1.y))
        .then(a.0.cmp(&b.0))
}

fn fit_line(members: &[(usize, Point3)]) -> (f64, f64) {
    let n = members.len() as f64;
    let mx = members.iter().map(|m| m.1.x).sum::<f64>() / n;
    let my = members.iter().map(|m| m.1.y).sum::<f64>() / n;
    let x_spread = members.iter().map(|m| (m.1.x - mx).abs()).fold(0.0, f64::max);
    if x_spread <= 1e-9 {
        return (0.0, my);
    }
    let sxx: f64 = members.iter().map(|m| (m.1.x - mx).powi(2)).sum();
    let sxy: f64 = members.iter().map(|m| (m.1.x - mx) * (m.1.y - my)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Splits centroids into rows wherever consecutive y values (sorted) differ
/// by more than the threshold, then fits each row's line.
pub fn group_rows(centroids: &[(usize, Point3)], params: &LayoutParams) -> Result<Vec<RowModel>> {
    params.validate()?;
    if centroids.is_empty() {
        return Err(Error::param("centroids", "at least one centroid is required"));
    }
    if let Some((id, _)) = centroids.iter().find(|(_, p)| !p.is_finite()) {
        return Err(Error::param("centroids", format!("cluster {id} has a non-finite centroid")));
    }
    let mut sorted = centroids.to_vec();
    sorted.sort_by(|a, b| {
        a.1.y
            .total_cmp(&b.1.y)
            .then(a.1.x.total_cmp(&b.1.x))
            .then(a.0.cmp(&b.0))
    });
    let mut groups: Vec<Vec<(usize, Point3)>> = vec![vec![sorted[0]]];
    for w in sorted.windows(2) {
        if w[1].1.y - w[0].1.y > params.row_distance_threshold {
            groups.push(Vec::new());
        }
        groups.last_mut().unwrap().push(w[1]);
    }

    let mut rows: Vec<RowModel> = groups
        .into_iter()
        .map(|mut g| {
            g.sort_by(by_xy_then_id);
            let (slope, intercept) = fit_line(&g);
            let mean_y = g.iter().map(|m| m.1.y).sum::<f64>() / g.len() as f64;
            let side = if mean_y < params.reference_y { Side::R } else { Side::L };
            RowModel {
                row_id: String::new(),
                side,
                index_on_side: 0,
                members: g.iter().map(|m| m.0).collect(),
                slope,
                intercept,
                mean_y,
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        a.side
            .cmp(&b.side)
            .then((a.mean_y - params.reference_y).abs().total_cmp(&(b.mean_y - params.reference_y).abs()))
            .then(a.mean_y.total_cmp(&b.mean_y))
    });
    let mut next = [0usize; 2];
    for r in &mut rows {
        let slot = &mut next[r.side as usize];
        r.index_on_side = *slot;
        r.row_id = format!("{}{}", r.side, *slot);
        *slot += 1;
    }
    Ok(rows)
}

/// Labels `<side>_<n>` where `n` counts trees on that side, row by row
/// outward from the reference line, each row in ascending x.
pub fn label_trees(rows: &[RowModel]) -> Vec<TreeLabel> {
    let mut ordered: Vec<&RowModel> = rows.iter().collect();
    ordered.sort_by_key(|r| (r.side, r.index_on_side));
    let mut next = [0usize; 2];
    let mut out = Vec::new();
    for r in ordered {
        for (pos, &id) in r.members.iter().enumerate() {
            let n = &mut next[r.side as usize];
            out.push(TreeLabel {
                cluster_id: id,
                label: format!("{}_{}", r.side, *n),
                row_id: r.row_id.clone(),
                index_in_row: pos,
            });
            *n += 1;
        }
    }
    out
}
