//! Cloud files (PLY, XYZ text) and per-tree report files (JSON, CSV).

pub mod ply;
mod report;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{Point3, PointCloud};

pub use report::{read_report_json, render_report, write_report, ReportFormat, TreeReport, CSV_HEADER};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    PlyAscii,
    PlyBinaryLe,
    XyzText,
}

impl CloudFormat {
    /// Guess from the file extension; `.ply` defaults to binary.
    pub fn from_extension(path: &Path) -> CloudFormat {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("ply") => CloudFormat::PlyBinaryLe,
            _ => CloudFormat::XyzText,
        }
    }
}

impl std::str::FromStr for CloudFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ply_ascii" => Ok(CloudFormat::PlyAscii),
            "ply_binary_le" => Ok(CloudFormat::PlyBinaryLe),
            "xyz_text" => Ok(CloudFormat::XyzText),
            _ => Err(Error::param(
                "format",
                format!("expected ply_ascii, ply_binary_le or xyz_text, got `{s}`"),
            )),
        }
    }
}

/// A cloud together with optional integer per-point properties.
#[derive(Debug, Clone, Default)]
pub struct LabeledCloud {
    pub cloud: PointCloud,
    /// Parallel to the requested property names.
    pub properties: Vec<Option<Vec<i64>>>,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Reads a cloud, auto-detecting PLY by its magic line and falling back to
/// whitespace-delimited XYZ text. Non-coordinate properties are ignored.
pub fn read_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    Ok(read_cloud_with_properties(path, &[])?.cloud)
}

/// Reads a cloud plus the named integer vertex properties (PLY only; XYZ
/// files yield `None` for every name).
pub fn read_cloud_with_properties(path: impl AsRef<Path>, names: &[&str]) -> Result<LabeledCloud> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let display = path.display().to_string();
    let note = format!("read from {display}");
    if ply::looks_like_ply(&bytes) {
        let v = ply::parse(&bytes, &display, names)?;
        return Ok(LabeledCloud {
            cloud: PointCloud::with_note(v.points, note),
            properties: v.extras,
        });
    }
    if CloudFormat::from_extension(path) != CloudFormat::XyzText {
        return Err(Error::Parse {
            path: display,
            location: "byte 0".into(),
            reason: "missing `ply` magic line".into(),
        });
    }
    let points = parse_xyz(&bytes, &display)?;
    Ok(LabeledCloud {
        cloud: PointCloud::with_note(points, note),
        properties: vec![None; names.len()],
    })
}

fn parse_xyz(bytes: &[u8], path: &str) -> Result<Vec<Point3>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        path: path.to_string(),
        location: format!("byte {}", e.valid_up_to()),
        reason: "xyz text is not valid UTF-8".into(),
    })?;
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let parse_err = |reason: String| Error::Parse {
            path: path.to_string(),
            location: format!("line {}", i + 1),
            reason,
        };
        let mut tok = content.split_whitespace();
        let mut coord = [0.0f64; 3];
        for (slot, axis) in coord.iter_mut().zip(["x", "y", "z"]) {
            let t = tok
                .next()
                .ok_or_else(|| parse_err(format!("missing {axis} coordinate")))?;
            *slot = t
                .parse()
                .map_err(|_| parse_err(format!("`{t}` is not a number")))?;
        }
        let p = Point3::from_array(coord);
        if !p.is_finite() {
            return Err(parse_err("non-finite coordinate".into()));
        }
        points.push(p);
    }
    Ok(points)
}

/// Writes a cloud. A per-point label, when given, is stored as the integer
/// vertex property `cluster` (a fourth column for XYZ text).
pub fn write_cloud(
    cloud: &PointCloud,
    path: impl AsRef<Path>,
    format: CloudFormat,
    labels: Option<&[i64]>,
) -> Result<()> {
    match labels {
        Some(l) => write_cloud_with_properties(cloud, path, format, &[("cluster", l)]),
        None => write_cloud_with_properties(cloud, path, format, &[]),
    }
}

/// Writes a cloud with arbitrary named integer properties.
pub fn write_cloud_with_properties(
    cloud: &PointCloud,
    path: impl AsRef<Path>,
    format: CloudFormat,
    properties: &[(&str, &[i64])],
) -> Result<()> {
    let path = path.as_ref();
    for (name, vals) in properties {
        if vals.len() != cloud.len() {
            return Err(Error::Validation(format!(
                "property `{name}` has {} values for {} points",
                vals.len(),
                cloud.len()
            )));
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let result = match format {
        CloudFormat::PlyAscii => ply::write(&mut w, &cloud.points, ply::Encoding::Ascii, properties),
        CloudFormat::PlyBinaryLe => ply::write(
            &mut w,
            &cloud.points,
            ply::Encoding::BinaryLittleEndian,
            properties,
        ),
        CloudFormat::XyzText => write_xyz(&mut w, &cloud.points, properties),
    };
    result
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

fn write_xyz<W: Write>(
    w: &mut W,
    points: &[Point3],
    properties: &[(&str, &[i64])],
) -> std::io::Result<()> {
    if !properties.is_empty() {
        let names: Vec<&str> = properties.iter().map(|(n, _)| *n).collect();
        writeln!(w, "# x y z {}", names.join(" "))?;
    }
    for (i, p) in points.iter().enumerate() {
        write!(w, "{} {} {}", p.x, p.y, p.z)?;
        for (_, vals) in properties {
            write!(w, " {}", vals[i])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| {
                    Point3::new(
                        rng.random_range(-500.0..500.0),
                        rng.random_range(-500.0..500.0),
                        rng.random_range(0.0..30.0),
                    )
                })
                .collect(),
        )
    }

    #[test]
    fn ascii_ply_three_vertices_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("three.ply");
        std::fs::write(
            &path,
            "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\n\
             property float z\nend_header\n1 2 3\n4 5 6\n7 8 9\n",
        )
        .unwrap();
        let c = read_cloud(&path).unwrap();
        assert_eq!(
            c.points,
            vec![
                Point3::new(1.0, 2.0, 3.0),
                Point3::new(4.0, 5.0, 6.0),
                Point3::new(7.0, 8.0, 9.0)
            ]
        );
    }

    #[test]
    fn xyz_skips_comments_and_blanks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pts.xyz");
        std::fs::write(&path, "# header\n\n1 2 3\n  \n4 5 6 # trailing\n# end\n").unwrap();
        let c = read_cloud(&path).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.points[1], Point3::new(4.0, 5.0, 6.0));
    }

    #[test]
    fn xyz_errors_name_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.xyz");
        std::fs::write(&path, "1 2 3\n4 5\n").unwrap();
        let e = read_cloud(&path).unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
        std::fs::write(&path, "1 2 3\n4 inf 5\n").unwrap();
        assert!(read_cloud(&path).is_err());
    }

    #[test]
    fn empty_cloud_writes_zero_vertex_file() {
        let dir = tempfile::tempdir().unwrap();
        for fmt in [CloudFormat::PlyAscii, CloudFormat::PlyBinaryLe] {
            let path = dir.path().join("empty.ply");
            write_cloud(&PointCloud::default(), &path, fmt, None).unwrap();
            let text = std::fs::read(&path).unwrap();
            assert!(String::from_utf8_lossy(&text).contains("element vertex 0"));
            assert!(read_cloud(&path).unwrap().is_empty());
        }
    }

    #[test]
    fn labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cloud = random_cloud(3, 1);
        let labels = [4i64, -1, 0];
        for fmt in [CloudFormat::PlyAscii, CloudFormat::PlyBinaryLe] {
            let path = dir.path().join("lab.ply");
            write_cloud(&cloud, &path, fmt, Some(&labels)).unwrap();
            let back = read_cloud_with_properties(&path, &["cluster"]).unwrap();
            assert_eq!(back.properties[0].as_deref(), Some(&labels[..]));
            assert_eq!(back.cloud.points, cloud.points);
        }
    }

    #[test]
    fn million_points_binary_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("big.ply");
        let cloud = random_cloud(1_000_000, 9);
        write_cloud(&cloud, &path, CloudFormat::PlyBinaryLe, None).unwrap();
        let back = read_cloud(&path).unwrap();
        assert_eq!(back.len(), cloud.len());
        assert!(back
            .points
            .iter()
            .zip(&cloud.points)
            .all(|(a, b)| a.x.to_bits() == b.x.to_bits()
                && a.y.to_bits() == b.y.to_bits()
                && a.z.to_bits() == b.z.to_bits()));
    }

    #[test]
    fn missing_file_reports_path() {
        let e = read_cloud("/nonexistent/dir/cloud.ply").unwrap_err();
        assert!(e.to_string().contains("/nonexistent/dir/cloud.ply"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]
            #[test]
            fn round_trip_all_formats(
                pts in prop::collection::vec((-1e4f64..1e4, -1e4f64..1e4, -1e2f64..1e2), 0..200)
            ) {
                let cloud = PointCloud::new(pts.into_iter().map(|(x, y, z)| Point3::new(x, y, z)).collect());
                let dir = tempfile::tempdir().unwrap();
                for (fmt, name) in [
                    (CloudFormat::PlyBinaryLe, "a.ply"),
                    (CloudFormat::PlyAscii, "b.ply"),
                    (CloudFormat::XyzText, "c.xyz"),
                ] {
                    let path = dir.path().join(name);
                    write_cloud(&cloud, &path, fmt, None).unwrap();
                    let back = read_cloud(&path).unwrap();
                    prop_assert_eq!(back.len(), cloud.len());
                    for (a, b) in back.points.iter().zip(&cloud.points) {
                        if fmt == CloudFormat::PlyBinaryLe {
                            prop_assert_eq!(a, b);
                        } else {
                            prop_assert!(a.dist(*b) <= 1e-6);
                        }
                    }
                }
            }
        }
    }
}
