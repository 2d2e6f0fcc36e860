//! Minimal PLY reader/writer for vertex clouds.
//!
//! Reads any PLY with a `vertex` element carrying `x`, `y`, `z` scalar
//! properties, in `ascii` or `binary_little_endian` encoding. Other elements
//! and properties (including lists) are parsed and skipped. Writes `double`
//! coordinates so that binary round trips are bit-exact.

use std::io::Write;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::geom::Point3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Scalar> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, mut b: &[u8]) -> f64 {
        // caller guarantees b.len() >= size()
        match self {
            Scalar::I8 => b.read_i8().unwrap() as f64,
            Scalar::U8 => b.read_u8().unwrap() as f64,
            Scalar::I16 => b.read_i16::<LittleEndian>().unwrap() as f64,
            Scalar::U16 => b.read_u16::<LittleEndian>().unwrap() as f64,
            Scalar::I32 => b.read_i32::<LittleEndian>().unwrap() as f64,
            Scalar::U32 => b.read_u32::<LittleEndian>().unwrap() as f64,
            Scalar::F32 => b.read_f32::<LittleEndian>().unwrap() as f64,
            Scalar::F64 => b.read_f64::<LittleEndian>().unwrap(),
        }
    }
}

#[derive(Debug, Clone)]
enum PropKind {
    Scalar(Scalar),
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Property {
    name: String,
    kind: PropKind,
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

#[derive(Debug)]
struct Header {
    encoding: Encoding,
    elements: Vec<Element>,
    body_offset: usize,
    /// 1-based line number of the first body line (ascii only).
    body_line: usize,
}

/// Parsed vertex data.
#[derive(Debug, Clone, Default)]
pub struct PlyVertices {
    pub points: Vec<Point3>,
    /// Requested extra integer properties, in request order; `None` when the
    /// file does not carry that property.
    pub extras: Vec<Option<Vec<i64>>>,
}

pub(crate) fn looks_like_ply(bytes: &[u8]) -> bool {
    bytes.starts_with(b"ply\n") || bytes.starts_with(b"ply\r\n")
}

fn err(path: &str, location: String, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        location,
        reason: reason.into(),
    }
}

fn parse_header(bytes: &[u8], path: &str) -> Result<Header> {
    let mut offset = 0usize;
    let mut line_no = 0usize;
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let rest = &bytes[offset..];
        let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
            return Err(err(
                path,
                format!("byte {offset}"),
                "header not terminated by end_header",
            ));
        };
        line_no += 1;
        let raw = &rest[..nl];
        let line = std::str::from_utf8(raw)
            .map_err(|_| err(path, format!("line {line_no}"), "header is not valid UTF-8"))?
            .trim_end_matches('\r')
            .trim();
        offset += nl + 1;
        let here = || format!("line {line_no}");
        let mut tok = line.split_whitespace();
        let Some(first) = tok.next() else { continue };
        if line_no == 1 {
            if line != "ply" {
                return Err(err(path, here(), "missing `ply` magic"));
            }
            continue;
        }
        match first {
            "format" => {
                let kind = tok.next().unwrap_or("");
                encoding = Some(match kind {
                    "ascii" => Encoding::Ascii,
                    "binary_little_endian" => Encoding::BinaryLittleEndian,
                    other => {
                        return Err(err(path, here(), format!("unsupported format `{other}`")))
                    }
                });
            }
            "comment" | "obj_info" => {}
            "element" => {
                let name = tok
                    .next()
                    .ok_or_else(|| err(path, here(), "element without name"))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| err(path, here(), "element count is not a non-negative integer"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            "property" => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| err(path, here(), "property before any element"))?;
                let words: Vec<&str> = tok.collect();
                let prop = match words.as_slice() {
                    ["list", c, i, name] => Property {
                        name: name.to_string(),
                        kind: PropKind::List {
                            count: Scalar::parse(c)
                                .ok_or_else(|| err(path, here(), format!("unknown type `{c}`")))?,
                            item: Scalar::parse(i)
                                .ok_or_else(|| err(path, here(), format!("unknown type `{i}`")))?,
                        },
                    },
                    [t, name] => Property {
                        name: name.to_string(),
                        kind: PropKind::Scalar(
                            Scalar::parse(t)
                                .ok_or_else(|| err(path, here(), format!("unknown type `{t}`")))?,
                        ),
                    },
                    _ => return Err(err(path, here(), "malformed property line")),
                };
                el.props.push(prop);
            }
            "end_header" => break,
            other => {
                return Err(err(path, here(), format!("unexpected header keyword `{other}`")))
            }
        }
    }
    let encoding = encoding.ok_or_else(|| err(path, "header".into(), "missing format line"))?;
    Ok(Header {
        encoding,
        elements,
        body_offset: offset,
        body_line: line_no + 1,
    })
}

struct VertexLayout {
    element: usize,
    xyz: [usize; 3],
    extras: Vec<Option<usize>>,
}

fn vertex_layout(h: &Header, path: &str, extras: &[&str]) -> Result<VertexLayout> {
    let element = h
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| err(path, "header".into(), "no `vertex` element"))?;
    let props = &h.elements[element].props;
    let find_scalar = |name: &str| {
        props
            .iter()
            .position(|p| p.name == name && matches!(p.kind, PropKind::Scalar(_)))
    };
    let mut xyz = [0usize; 3];
    for (slot, name) in xyz.iter_mut().zip(["x", "y", "z"]) {
        *slot = find_scalar(name).ok_or_else(|| {
            err(path, "header".into(), format!("vertex has no scalar `{name}` property"))
        })?;
    }
    Ok(VertexLayout {
        element,
        xyz,
        extras: extras.iter().map(|n| find_scalar(n)).collect(),
    })
}

/// Parses a PLY file already loaded in memory.
pub fn parse(bytes: &[u8], path: &str, extras: &[&str]) -> Result<PlyVertices> {
    let header = parse_header(bytes, path)?;
    let layout = vertex_layout(&header, path, extras)?;
    match header.encoding {
        Encoding::Ascii => parse_ascii(bytes, &header, &layout, path),
        Encoding::BinaryLittleEndian => parse_binary(bytes, &header, &layout, path),
    }
}

fn new_output(layout: &VertexLayout, n: usize) -> PlyVertices {
    PlyVertices {
        points: Vec::with_capacity(n),
        extras: layout
            .extras
            .iter()
            .map(|e| e.map(|_| Vec::with_capacity(n)))
            .collect(),
    }
}

fn parse_ascii(
    bytes: &[u8],
    h: &Header,
    layout: &VertexLayout,
    path: &str,
) -> Result<PlyVertices> {
    let body = std::str::from_utf8(&bytes[h.body_offset..])
        .map_err(|_| err(path, format!("byte {}", h.body_offset), "ascii body is not UTF-8"))?;
    let mut lines = body
        .lines()
        .enumerate()
        .map(|(i, l)| (h.body_line + i, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let mut out = new_output(layout, h.elements[layout.element].count);
    let mut values: Vec<f64> = Vec::new();
    for (ei, el) in h.elements.iter().enumerate() {
        for item in 0..el.count {
            let Some((line_no, line)) = lines.next() else {
                return Err(err(
                    path,
                    "end of file".into(),
                    format!(
                        "truncated body: element `{}` declares {} items, found {item}",
                        el.name, el.count
                    ),
                ));
            };
            let here = || format!("line {line_no}");
            let mut tok = line.split_whitespace();
            let mut next = |what: &str| -> Result<f64> {
                let t = tok
                    .next()
                    .ok_or_else(|| err(path, here(), format!("missing value for `{what}`")))?;
                t.parse::<f64>()
                    .map_err(|_| err(path, here(), format!("`{t}` is not a number")))
            };
            if ei != layout.element {
                for p in &el.props {
                    match p.kind {
                        PropKind::Scalar(_) => {
                            next(&p.name)?;
                        }
                        PropKind::List { .. } => {
                            let n = next(&p.name)? as usize;
                            for _ in 0..n {
                                next(&p.name)?;
                            }
                        }
                    }
                }
            } else {
                values.clear();
                for p in &el.props {
                    match p.kind {
                        PropKind::Scalar(_) => values.push(next(&p.name)?),
                        PropKind::List { .. } => {
                            let n = next(&p.name)? as usize;
                            for _ in 0..n {
                                next(&p.name)?;
                            }
                            values.push(f64::NAN);
                        }
                    }
                }
                let p = Point3::new(
                    values[layout.xyz[0]],
                    values[layout.xyz[1]],
                    values[layout.xyz[2]],
                );
                if !p.is_finite() {
                    return Err(err(path, here(), "non-finite coordinate"));
                }
                out.points.push(p);
                for (slot, col) in out.extras.iter_mut().zip(&layout.extras) {
                    if let (Some(v), Some(c)) = (slot.as_mut(), col) {
                        v.push(values[*c] as i64);
                    }
                }
            }
            if tok.next().is_some() {
                return Err(err(path, here(), "trailing values on element line"));
            }
        }
    }
    if let Some((line_no, _)) = lines.next() {
        return Err(err(
            path,
            format!("line {line_no}"),
            "body has more lines than the header declares",
        ));
    }
    Ok(out)
}

fn parse_binary(
    bytes: &[u8],
    h: &Header,
    layout: &VertexLayout,
    path: &str,
) -> Result<PlyVertices> {
    let mut pos = h.body_offset;
    let mut out = new_output(layout, h.elements[layout.element].count);
    let take = |pos: &mut usize, n: usize, what: &str| -> Result<usize> {
        if *pos + n > bytes.len() {
            return Err(err(
                path,
                format!("byte {}", *pos),
                format!("truncated body while reading `{what}`"),
            ));
        }
        let at = *pos;
        *pos += n;
        Ok(at)
    };
    let mut values: Vec<f64> = Vec::new();
    for (ei, el) in h.elements.iter().enumerate() {
        let is_vertex = ei == layout.element;
        for _ in 0..el.count {
            let item_start = pos;
            values.clear();
            for p in &el.props {
                match p.kind {
                    PropKind::Scalar(s) => {
                        let at = take(&mut pos, s.size(), &p.name)?;
                        if is_vertex {
                            values.push(s.read_le(&bytes[at..]));
                        }
                    }
                    PropKind::List { count, item } => {
                        let at = take(&mut pos, count.size(), &p.name)?;
                        let n = count.read_le(&bytes[at..]);
                        if !(n >= 0.0) {
                            return Err(err(path, format!("byte {at}"), "negative list length"));
                        }
                        take(&mut pos, n as usize * item.size(), &p.name)?;
                        if is_vertex {
                            values.push(f64::NAN);
                        }
                    }
                }
            }
            if is_vertex {
                let p = Point3::new(
                    values[layout.xyz[0]],
                    values[layout.xyz[1]],
                    values[layout.xyz[2]],
                );
                if !p.is_finite() {
                    return Err(err(path, format!("byte {item_start}"), "non-finite coordinate"));
                }
                out.points.push(p);
                for (slot, col) in out.extras.iter_mut().zip(&layout.extras) {
                    if let (Some(v), Some(c)) = (slot.as_mut(), col) {
                        v.push(values[*c] as i64);
                    }
                }
            }
        }
    }
    if pos != bytes.len() {
        return Err(err(
            path,
            format!("byte {pos}"),
            format!(
                "{} bytes beyond the declared elements",
                bytes.len() - pos
            ),
        ));
    }
    Ok(out)
}

/// Writes a vertex-only PLY with `double` x/y/z and optional `int` extras.
pub fn write<W: Write>(
    w: &mut W,
    points: &[Point3],
    encoding: Encoding,
    extras: &[(&str, &[i64])],
) -> std::io::Result<()> {
    writeln!(w, "ply")?;
    match encoding {
        Encoding::Ascii => writeln!(w, "format ascii 1.0")?,
        Encoding::BinaryLittleEndian => writeln!(w, "format binary_little_endian 1.0")?,
    }
    writeln!(w, "element vertex {}", points.len())?;
    for axis in ["x", "y", "z"] {
        writeln!(w, "property double {axis}")?;
    }
    for (name, _) in extras {
        writeln!(w, "property int {name}")?;
    }
    writeln!(w, "end_header")?;
    match encoding {
        Encoding::Ascii => {
            for (i, p) in points.iter().enumerate() {
                write!(w, "{} {} {}", p.x, p.y, p.z)?;
                for (_, vals) in extras {
                    write!(w, " {}", vals[i])?;
                }
                writeln!(w)?;
            }
        }
        Encoding::BinaryLittleEndian => {
            for (i, p) in points.iter().enumerate() {
                w.write_f64::<LittleEndian>(p.x)?;
                w.write_f64::<LittleEndian>(p.y)?;
                w.write_f64::<LittleEndian>(p.z)?;
                for (_, vals) in extras {
                    w.write_i32::<LittleEndian>(vals[i] as i32)?;
                }
            }
        }
    }
    Ok(())
}
