//! Segmentation success and volume error against known truth.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point3;
use crate::io::TreeReport;
use crate::layout::{group_rows, label_trees, LayoutParams};
use crate::segment::TreeCluster;

/// Minimum purity and coverage for a tree to count as segmented.
pub const SUCCESS_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeMatch {
    pub tree_id: usize,
    pub cluster: Option<usize>,
    /// Share of the cluster's points that belong to the tree.
    pub purity: f64,
    /// Share of the tree's crown points captured by the cluster.
    pub coverage: f64,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationScore {
    pub matched_trees: usize,
    pub total_trees: usize,
    pub success_rate: f64,
    pub per_tree: Vec<TreeMatch>,
}

/// Greedy one-to-one matching of trees to clusters in descending overlap
/// order. `point_tree[i]` is the owning tree of point `i`, or negative for
/// points that belong to no crown.
pub fn match_clusters_to_truth(
    clusters: &[TreeCluster],
    total_trees: usize,
    point_tree: &[i64],
) -> Result<SegmentationScore> {
    let n = point_tree.len();
    let mut crown = vec![0usize; total_trees];
    for &t in point_tree {
        if t >= 0 {
            let t = t as usize;
            if t >= total_trees {
                return Err(Error::Validation(format!(
                    "point label {t} exceeds the {total_trees} truth trees"
                )));
            }
            crown[t] += 1;
        }
    }
    let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
    for (c, cl) in clusters.iter().enumerate() {
        let mut counts: HashMap<usize, usize> = HashMap::new();
        for &i in &cl.point_indices {
            let t = *point_tree.get(i).ok_or_else(|| {
                Error::Validation(format!("cluster {c} references point {i} but only {n} labels were given"))
            })?;
            if t >= 0 {
                *counts.entry(t as usize).or_default() += 1;
            }
        }
        pairs.extend(counts.into_iter().map(|(t, k)| (k, t, c)));
    }
    pairs.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut per_tree: Vec<TreeMatch> = (0..total_trees)
        .map(|t| TreeMatch {
            tree_id: t,
            cluster: None,
            purity: 0.0,
            coverage: 0.0,
            success: false,
        })
        .collect();
    let mut cluster_taken = vec![false; clusters.len()];
    for (k, t, c) in pairs {
        if per_tree[t].cluster.is_some() || cluster_taken[c] {
            continue;
        }
        cluster_taken[c] = true;
        let purity = k as f64 / clusters[c].len() as f64;
        let coverage = k as f64 / crown[t] as f64;
        per_tree[t] = TreeMatch {
            tree_id: t,
            cluster: Some(c),
            purity,
            coverage,
            success: purity >= SUCCESS_THRESHOLD && coverage >= SUCCESS_THRESHOLD,
        };
    }
    let matched = per_tree.iter().filter(|m| m.success).count();
    Ok(SegmentationScore {
        matched_trees: matched,
        total_trees,
        success_rate: if total_trees == 0 { 0.0 } else { matched as f64 / total_trees as f64 },
        per_tree,
    })
}

/// `|est - gt| / gt * 100`.
pub fn percent_error(gt: f64, est: f64) -> Result<f64> {
    if !(gt > 0.0) || !gt.is_finite() {
        return Err(Error::param("ground_truth", format!("must be positive, got {gt}")));
    }
    Ok((est - gt).abs() / gt * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub tree_id: usize,
    pub row: usize,
    pub index: usize,
    pub center: Point3,
    pub true_volume_m3: f64,
    /// Present when the truth file carries a `label` column.
    pub label: Option<String>,
}

pub fn read_truth_csv(path: impl AsRef<Path>) -> Result<Vec<TruthRecord>> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse { path: display.clone(), location: "line 1".into(), reason: e.to_string() })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let mut idx = [0usize; 7];
    for (slot, name) in idx.iter_mut().zip(crate::synth::TRUTH_HEADER) {
        *slot = col(name).ok_or_else(|| Error::Parse {
            path: display.clone(),
            location: "line 1".into(),
            reason: format!("missing column `{name}`"),
        })?;
    }
    let label_col = col("label");
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let location = format!("line {}", line + 2);
        let rec = rec.map_err(|e| Error::Parse { path: display.clone(), location: location.clone(), reason: e.to_string() })?;
        let field = |k: usize| rec.get(idx[k]).unwrap_or("").trim();
        let bad = |what: &str| Error::Parse {
            path: display.clone(),
            location: location.clone(),
            reason: format!("bad {what}"),
        };
        let uint = |k: usize| field(k).parse::<usize>().map_err(|_| bad(crate::synth::TRUTH_HEADER[k]));
        let num = |k: usize| {
            field(k)
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(crate::synth::TRUTH_HEADER[k]))
        };
        out.push(TruthRecord {
            tree_id: uint(0)?,
            row: uint(1)?,
            index: uint(2)?,
            center: Point3::new(num(3)?, num(4)?, num(5)?),
            true_volume_m3: num(6)?,
            label: label_col.and_then(|c| rec.get(c)).map(|s| s.trim().to_string()),
        });
    }
    Ok(out)
}

/// Labels for truth trees: the file's own labels when present, otherwise the
/// labels the row layout assigns to the truth crown centers.
pub fn truth_labels(truth: &[TruthRecord], layout: &LayoutParams) -> Result<Vec<String>> {
    if truth.iter().all(|t| t.label.as_deref().is_some_and(|l| !l.is_empty())) && !truth.is_empty() {
        return Ok(truth.iter().map(|t| t.label.clone().unwrap()).collect());
    }
    if truth.is_empty() {
        return Ok(Vec::new());
    }
    let centroids: Vec<(usize, Point3)> = truth.iter().enumerate().map(|(i, t)| (i, t.center)).collect();
    let mut labels = vec![String::new(); truth.len()];
    for l in label_trees(&group_rows(&centroids, layout)?) {
        labels[l.cluster_id] = l.label;
    }
    Ok(labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeRow {
    pub label: String,
    pub tree_id: usize,
    pub gt: f64,
    pub convex: f64,
    pub convex_err_pct: f64,
    pub alpha: f64,
    pub alpha_err_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMeans {
    pub convex_mean_pct: f64,
    pub convex_max_pct: f64,
    pub alpha_mean_pct: f64,
    pub alpha_max_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub segmentation: Option<SegmentationScore>,
    pub volumes: Vec<VolumeRow>,
    pub means: ErrorMeans,
    pub unmatched_reports: Vec<String>,
    pub unmatched_truth: Vec<String>,
}

/// Joins reports to truth by label and tabulates both methods' errors.
/// Rows follow truth order.
pub fn evaluate_run(
    reports: &[TreeReport],
    truth: &[TruthRecord],
    layout: &LayoutParams,
    segmentation: Option<SegmentationScore>,
) -> Result<EvaluationSummary> {
    let labels = truth_labels(truth, layout)?;
    let by_label: HashMap<&str, &TreeReport> = reports.iter().map(|r| (r.label.as_str(), r)).collect();
    let mut volumes = Vec::new();
    let mut unmatched_truth = Vec::new();
    for (t, label) in truth.iter().zip(&labels) {
        match by_label.get(label.as_str()) {
            Some(r) => volumes.push(VolumeRow {
                label: label.clone(),
                tree_id: t.tree_id,
                gt: t.true_volume_m3,
                convex: r.convex_hull_volume,
                convex_err_pct: percent_error(t.true_volume_m3, r.convex_hull_volume)?,
                alpha: r.alpha_shape_volume,
                alpha_err_pct: percent_error(t.true_volume_m3, r.alpha_shape_volume)?,
            }),
            None => unmatched_truth.push(label.clone()),
        }
    }
    let known: std::collections::HashSet<&str> = labels.iter().map(String::as_str).collect();
    let unmatched_reports = reports
        .iter()
        .filter(|r| !known.contains(r.label.as_str()))
        .map(|r| r.label.clone())
        .collect();
    let stats = |f: fn(&VolumeRow) -> f64| {
        if volumes.is_empty() {
            return (0.0, 0.0);
        }
        let vals: Vec<f64> = volumes.iter().map(f).collect();
        (vals.iter().sum::<f64>() / vals.len() as f64, vals.iter().copied().fold(0.0, f64::max))
    };
    let (cm, cx) = stats(|v| v.convex_err_pct);
    let (am, ax) = stats(|v| v.alpha_err_pct);
    Ok(EvaluationSummary {
        segmentation,
        volumes,
        means: ErrorMeans {
            convex_mean_pct: cm,
            convex_max_pct: cx,
            alpha_mean_pct: am,
            alpha_max_pct: ax,
        },
        unmatched_reports,
        unmatched_truth,
    })
}

pub fn render_summary_csv(summary: &EvaluationSummary) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let ser = |e: csv::Error| Error::Serialize(e.to_string());
    w.write_record(["label", "tree_id", "gt", "convex", "convex_err_pct", "alpha", "alpha_err_pct"])
        .map_err(ser)?;
    for v in &summary.volumes {
        w.write_record([
            v.label.clone(),
            v.tree_id.to_string(),
            v.gt.to_string(),
            v.convex.to_string(),
            v.convex_err_pct.to_string(),
            v.alpha.to_string(),
            v.alpha_err_pct.to_string(),
        ])
        .map_err(ser)?;
    }
    w.into_inner().map_err(|e| Error::Serialize(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segment::Provenance;

    fn cluster(idx: Vec<usize>) -> TreeCluster {
        TreeCluster {
            point_indices: idx,
            centroid: Point3::ORIGIN,
            provenance: Provenance::Dbscan,
            source_cluster_id: None,
            split_by_components: false,
        }
    }

    #[test]
    fn perfect_segmentation() {
        let labels: Vec<i64> = (0..100).map(|i| i / 10).collect();
        let clusters: Vec<TreeCluster> = (0..10).map(|t| cluster((t * 10..t * 10 + 10).collect())).collect();
        let s = match_clusters_to_truth(&clusters, 10, &labels).unwrap();
        assert_eq!(s.success_rate, 1.0);
        assert!(s.per_tree.iter().all(|m| m.purity == 1.0 && m.coverage == 1.0));
    }

    #[test]
    fn merged_pair_costs_a_tree() {
        let labels: Vec<i64> = (0..100).map(|i| i / 10).collect();
        let mut clusters: Vec<TreeCluster> = (2..10).map(|t| cluster((t * 10..t * 10 + 10).collect())).collect();
        clusters.push(cluster((0..20).collect()));
        let s = match_clusters_to_truth(&clusters, 10, &labels).unwrap();
        assert!(s.success_rate <= 0.9);
        let mut used: Vec<usize> = s.per_tree.iter().filter_map(|m| m.cluster).collect();
        let before = used.len();
        used.sort_unstable();
        used.dedup();
        assert_eq!(used.len(), before);
    }

    #[test]
    fn label_mismatch_is_validation_error() {
        let e = match_clusters_to_truth(&[cluster(vec![0, 5])], 1, &[0, 0]).unwrap_err();
        assert!(matches!(e, Error::Validation(_)));
    }

    #[test]
    fn percent_error_cases() {
        // trees 1 and 5 of the reference volume table
        assert!((percent_error(28.06, 33.26).unwrap() - 18.55).abs() <= 0.05);
        assert!((percent_error(27.83, 27.77).unwrap() - 0.21).abs() <= 0.05);
        assert_eq!(percent_error(5.0, 5.0).unwrap(), 0.0);
        assert!(percent_error(0.0, 1.0).is_err());
    }

    #[test]
    fn identical_estimates_give_zero_error() {
        let truth: Vec<TruthRecord> = (0..3)
            .map(|i| TruthRecord {
                tree_id: i,
                row: 0,
                index: i,
                center: Point3::new(i as f64 * 5.0, -4.0, 3.0),
                true_volume_m3: 30.0 + i as f64,
                label: None,
            })
            .collect();
        let reports: Vec<TreeReport> = (0..3)
            .map(|i| TreeReport {
                label: format!("R_{i}"),
                row_id: "R0".into(),
                index_in_row: i,
                centroid: truth[i].center,
                point_count: 10,
                convex_hull_volume: 30.0 + i as f64,
                alpha_shape_volume: 30.0 + i as f64,
                provenance: Provenance::Dbscan,
                degenerate: false,
            })
            .collect();
        let s = evaluate_run(&reports, &truth, &LayoutParams::default(), None).unwrap();
        assert_eq!(s.volumes.len(), 3);
        assert!(s.volumes.iter().all(|v| v.convex_err_pct == 0.0 && v.alpha_err_pct == 0.0));
        assert!(s.unmatched_reports.is_empty() && s.unmatched_truth.is_empty());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn scale_invariant(gt in 0.01f64..1e3, est in 0.0f64..1e3, c in 0.01f64..1e3) {
                let a = percent_error(gt, est).unwrap();
                let b = percent_error(c * gt, c * est).unwrap();
                prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
                prop_assert!(a >= 0.0);
            }

            #[test]
            fn matching_is_one_to_one(labels in prop::collection::vec(-1i64..6, 1..200), cuts in prop::collection::vec(0usize..200, 0..10)) {
                let n = labels.len();
                let mut bounds: Vec<usize> = cuts.into_iter().map(|c| c % n).chain([0, n]).collect();
                bounds.sort_unstable();
                bounds.dedup();
                let clusters: Vec<TreeCluster> = bounds.windows(2).map(|w| cluster((w[0]..w[1]).collect())).collect();
                let s = match_clusters_to_truth(&clusters, 6, &labels).unwrap();
                let mut used: Vec<usize> = s.per_tree.iter().filter_map(|m| m.cluster).collect();
                let k = used.len();
                used.sort_unstable();
                used.dedup();
                prop_assert_eq!(used.len(), k);
                prop_assert!(s.matched_trees <= s.total_trees);
                prop_assert!((0.0..=1.0).contains(&s.success_rate));
            }
        }
    }
}
