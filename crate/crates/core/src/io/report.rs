use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point3;
use crate::segment::Provenance;

/// One labeled tree with both volume estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeReport {
    pub label: String,
    pub row_id: String,
    pub index_in_row: usize,
    pub centroid: Point3,
    pub point_count: usize,
    pub convex_hull_volume: f64,
    pub alpha_shape_volume: f64,
    pub provenance: Provenance,
    /// Set when the canopy could not span a volume; both volumes are then 0.
    #[serde(default)]
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

pub const CSV_HEADER: [&str; 11] = [
    "label",
    "row_id",
    "index_in_row",
    "centroid_x",
    "centroid_y",
    "centroid_z",
    "point_count",
    "convex_hull_volume",
    "alpha_shape_volume",
    "provenance",
    "degenerate",
];

fn validate(records: &[TreeReport]) -> Result<()> {
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.label.as_str()) {
            return Err(Error::Validation(format!("duplicate label `{}`", r.label)));
        }
        if !(r.convex_hull_volume >= 0.0) || !(r.alpha_shape_volume >= 0.0) {
            return Err(Error::Validation(format!(
                "negative or NaN volume for `{}`",
                r.label
            )));
        }
        if r.alpha_shape_volume > r.convex_hull_volume + 1e-9 {
            return Err(Error::Validation(format!(
                "alpha shape volume exceeds convex hull volume for `{}`",
                r.label
            )));
        }
    }
    Ok(())
}

/// Serializes reports as a JSON array or a CSV table. Floats use the
/// shortest representation that round-trips exactly.
pub fn render_report(records: &[TreeReport], format: ReportFormat) -> Result<Vec<u8>> {
    validate(records)?;
    match format {
        ReportFormat::Json => {
            let mut out = serde_json::to_vec_pretty(records)
                .map_err(|e| Error::Serialize(e.to_string()))?;
            out.push(b'\n');
            Ok(out)
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let csv_err = |e: csv::Error| Error::Serialize(e.to_string());
            w.write_record(CSV_HEADER).map_err(csv_err)?;
            for r in records {
                let prov = match r.provenance {
                    Provenance::Dbscan => "dbscan",
                    Provenance::SpectralSplit => "spectral_split",
                };
                w.write_record([
                    r.label.clone(),
                    r.row_id.clone(),
                    r.index_in_row.to_string(),
                    r.centroid.x.to_string(),
                    r.centroid.y.to_string(),
                    r.centroid.z.to_string(),
                    r.point_count.to_string(),
                    r.convex_hull_volume.to_string(),
                    r.alpha_shape_volume.to_string(),
                    prov.to_string(),
                    r.degenerate.to_string(),
                ])
                .map_err(csv_err)?;
            }
            w.into_inner()
                .map_err(|e| Error::Serialize(e.to_string()))
        }
    }
}

pub fn write_report(records: &[TreeReport], path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = render_report(records, format)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_report_json(path: impl AsRef<Path>) -> Result<Vec<TreeReport>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        location: format!("line {} column {}", e.line(), e.column()),
        reason: e.to_string(),
    })
}
