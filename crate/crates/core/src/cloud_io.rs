//! Point cloud and ground-truth file formats.
//!
//! Point clouds are PLY 1.0 (`ascii` or `binary_little_endian`), with a
//! `vertex` element carrying `x`, `y`, `z` and optionally `red`, `green`,
//! `blue`. Other elements are skipped. Ground truth is a CSV table with the
//! header `id,strike,dip,dipdir,nx,ny,nz`.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, UnitVector3};

pub type Rgb = [u8; 3];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub colors: Option<Vec<Rgb>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        Self {
            points,
            colors: None,
        }
    }

    pub fn with_colors(points: Vec<Point3>, colors: Vec<Rgb>) -> Result<Self> {
        if colors.len() != points.len() {
            return Err(Error::invalid(format!(
                "{} colors for {} points",
                colors.len(),
                points.len()
            )));
        }
        Ok(Self {
            points,
            colors: Some(colors),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Sub-cloud of the given indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            colors: self
                .colors
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
        }
    }

    /// Applies `f` to every point, keeping colors.
    pub fn map_points(&self, f: impl Fn(&Point3) -> Point3) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(f).collect(),
            colors: self.colors.clone(),
        }
    }
}

// ---------------------------------------------------------------------------
// PLY

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
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
    fn parse(name: &str) -> Option<Self> {
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

    fn decode_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
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

struct Header {
    encoding: Encoding,
    elements: Vec<Element>,
    body_offset: usize,
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset: offset as u64,
        message: message.into(),
    }
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut offset = 0usize;
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut first = true;

    loop {
        let rest = &bytes[offset..];
        let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
            return Err(parse_err(
                offset,
                "unterminated header (missing end_header)",
            ));
        };
        let line_start = offset;
        let raw = &rest[..nl];
        offset += nl + 1;
        let line = std::str::from_utf8(raw)
            .map_err(|_| parse_err(line_start, "header is not valid UTF-8"))?
            .trim_end_matches('\r')
            .trim();

        if first {
            if line != "ply" {
                return Err(parse_err(line_start, "missing 'ply' magic"));
            }
            first = false;
            continue;
        }

        let mut tokens = line.split_whitespace();
        match tokens.next() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                let fmt = tokens.next().unwrap_or_default();
                encoding = Some(match fmt {
                    "ascii" => Encoding::Ascii,
                    "binary_little_endian" => Encoding::BinaryLittleEndian,
                    other => {
                        return Err(parse_err(
                            line_start,
                            format!("unsupported format '{other}'"),
                        ))
                    }
                });
                if tokens.next() != Some("1.0") {
                    return Err(parse_err(line_start, "unsupported PLY version"));
                }
            }
            Some("element") => {
                let name = tokens
                    .next()
                    .ok_or_else(|| parse_err(line_start, "element without a name"))?;
                let count = tokens
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| parse_err(line_start, "element count is not an integer"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let elem = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(line_start, "property before any element"))?;
                let ty = tokens
                    .next()
                    .ok_or_else(|| parse_err(line_start, "property without a type"))?;
                let kind = if ty == "list" {
                    let count = tokens.next().and_then(Scalar::parse);
                    let item = tokens.next().and_then(Scalar::parse);
                    match (count, item) {
                        (Some(count), Some(item)) => PropKind::List { count, item },
                        _ => return Err(parse_err(line_start, "bad list property types")),
                    }
                } else {
                    PropKind::Scalar(Scalar::parse(ty).ok_or_else(|| {
                        parse_err(line_start, format!("unknown property type '{ty}'"))
                    })?)
                };
                let name = tokens
                    .next()
                    .ok_or_else(|| parse_err(line_start, "property without a name"))?;
                elem.props.push(Property {
                    name: name.to_string(),
                    kind,
                });
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(parse_err(
                    line_start,
                    format!("unexpected header keyword '{other}'"),
                ))
            }
        }
    }

    let encoding = encoding.ok_or_else(|| parse_err(0, "header has no format line"))?;
    Ok(Header {
        encoding,
        elements,
        body_offset: offset,
    })
}

/// Column positions of the fields we extract from the vertex element.
struct VertexLayout {
    xyz: [usize; 3],
    rgb: Option<[usize; 3]>,
}

fn vertex_layout(elem: &Element) -> Result<VertexLayout> {
    let find = |name: &str| -> Option<usize> {
        elem.props
            .iter()
            .position(|p| p.name == name && matches!(p.kind, PropKind::Scalar(_)))
    };
    let mut xyz = [0usize; 3];
    for (slot, name) in xyz.iter_mut().zip(["x", "y", "z"]) {
        *slot = find(name).ok_or_else(|| {
            Error::Schema(format!("vertex element has no scalar '{name}' property"))
        })?;
    }
    let rgb = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        _ => None,
    };
    Ok(VertexLayout { xyz, rgb })
}

fn color_byte(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

struct BinaryCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl BinaryCursor<'_> {
    fn read(&mut self, ty: Scalar) -> Result<f64> {
        let n = ty.size();
        if self.pos + n > self.bytes.len() {
            return Err(parse_err(self.pos, "truncated binary body"));
        }
        let v = ty.decode_le(&self.bytes[self.pos..self.pos + n]);
        self.pos += n;
        Ok(v)
    }

    /// Reads one element instance; scalar values land in `out`, lists are skipped.
    fn read_instance(&mut self, elem: &Element, out: &mut Vec<f64>) -> Result<()> {
        out.clear();
        for prop in &elem.props {
            match prop.kind {
                PropKind::Scalar(ty) => out.push(self.read(ty)?),
                PropKind::List { count, item } => {
                    let at = self.pos;
                    let n = self.read(count)?;
                    if n < 0.0 {
                        return Err(parse_err(at, "negative list length"));
                    }
                    let skip = n as usize * item.size();
                    if self.pos + skip > self.bytes.len() {
                        return Err(parse_err(self.pos, "truncated binary body"));
                    }
                    self.pos += skip;
                    out.push(f64::NAN);
                }
            }
        }
        Ok(())
    }
}

struct AsciiCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl AsciiCursor<'_> {
    fn next_token(&mut self) -> Option<(usize, &str)> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if self.pos >= self.bytes.len() {
            return None;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .map(|s| (start, s))
    }

    fn read_number(&mut self) -> Result<f64> {
        let at = self.pos;
        let (start, tok) = self
            .next_token()
            .ok_or_else(|| parse_err(at, "truncated ascii body"))?;
        tok.parse::<f64>()
            .map_err(|_| parse_err(start, format!("'{tok}' is not a number")))
    }

    fn read_instance(&mut self, elem: &Element, out: &mut Vec<f64>) -> Result<()> {
        out.clear();
        for prop in &elem.props {
            match prop.kind {
                PropKind::Scalar(_) => out.push(self.read_number()?),
                PropKind::List { .. } => {
                    let at = self.pos;
                    let n = self.read_number()?;
                    if n < 0.0 || n.fract() != 0.0 {
                        return Err(parse_err(at, "bad list length"));
                    }
                    for _ in 0..n as usize {
                        self.read_number()?;
                    }
                    out.push(f64::NAN);
                }
            }
        }
        Ok(())
    }
}

/// Parses PLY bytes already held in memory.
pub fn parse_ply(bytes: &[u8]) -> Result<PointCloud> {
    let header = parse_header(bytes)?;
    let vertex_pos = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| Error::Schema("no 'vertex' element".into()))?;
    let vertex = &header.elements[vertex_pos];
    let layout = vertex_layout(vertex)?;

    let mut points = Vec::with_capacity(vertex.count);
    let mut colors = layout.rgb.map(|_| Vec::with_capacity(vertex.count));
    let mut row = Vec::new();

    let emit = |row: &[f64], points: &mut Vec<Point3>, colors: &mut Option<Vec<Rgb>>| {
        points.push(Vector3::new(
            row[layout.xyz[0]],
            row[layout.xyz[1]],
            row[layout.xyz[2]],
        ));
        if let (Some(c), Some(idx)) = (colors.as_mut(), layout.rgb) {
            c.push([
                color_byte(row[idx[0]]),
                color_byte(row[idx[1]]),
                color_byte(row[idx[2]]),
            ]);
        }
    };

    match header.encoding {
        Encoding::Ascii => {
            let mut cur = AsciiCursor {
                bytes,
                pos: header.body_offset,
            };
            for elem in &header.elements[..=vertex_pos] {
                let is_vertex = elem.name == "vertex";
                for _ in 0..elem.count {
                    let at = cur.pos;
                    cur.read_instance(elem, &mut row)?;
                    if is_vertex {
                        if layout.xyz.iter().any(|&i| !row[i].is_finite()) {
                            return Err(parse_err(at, "non-finite vertex coordinate"));
                        }
                        emit(&row, &mut points, &mut colors);
                    }
                }
            }
        }
        Encoding::BinaryLittleEndian => {
            let mut cur = BinaryCursor {
                bytes,
                pos: header.body_offset,
            };
            for elem in &header.elements[..=vertex_pos] {
                let is_vertex = elem.name == "vertex";
                for _ in 0..elem.count {
                    let at = cur.pos;
                    cur.read_instance(elem, &mut row)?;
                    if is_vertex {
                        if layout.xyz.iter().any(|&i| !row[i].is_finite()) {
                            return Err(parse_err(at, "non-finite vertex coordinate"));
                        }
                        emit(&row, &mut points, &mut colors);
                    }
                }
            }
        }
    }

    Ok(PointCloud { points, colors })
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&bytes)
}

/// Serializes a cloud to PLY bytes. Coordinates are written as `double`;
/// the ASCII form uses shortest round-trip formatting.
pub fn encode_ply(cloud: &PointCloud, binary: bool) -> Result<Vec<u8>> {
    if cloud.is_empty() {
        return Err(Error::invalid("cannot write an empty point cloud"));
    }
    if let Some(c) = &cloud.colors {
        if c.len() != cloud.len() {
            return Err(Error::invalid("color count does not match point count"));
        }
    }
    let mut out = Vec::with_capacity(64 + cloud.len() * if binary { 27 } else { 48 });
    let format = if binary {
        "binary_little_endian"
    } else {
        "ascii"
    };
    let _ = write!(
        out,
        "ply\nformat {format} 1.0\ncomment generated by strikedip\nelement vertex {}\n\
         property double x\nproperty double y\nproperty double z\n",
        cloud.len()
    );
    if cloud.colors.is_some() {
        out.extend_from_slice(b"property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    out.extend_from_slice(b"end_header\n");

    for (i, p) in cloud.points.iter().enumerate() {
        let rgb = cloud.colors.as_ref().map(|c| c[i]);
        if binary {
            for v in p.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            if let Some(rgb) = rgb {
                out.extend_from_slice(&rgb);
            }
        } else {
            let _ = write!(out, "{} {} {}", p.x, p.y, p.z);
            if let Some([r, g, b]) = rgb {
                let _ = write!(out, " {r} {g} {b}");
            }
            out.push(b'\n');
        }
    }
    Ok(out)
}

pub fn write_ply(cloud: &PointCloud, path: impl AsRef<Path>, binary: bool) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_ply(cloud, binary)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Ground truth

/// One ground-truth planar surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSurface {
    pub id: i64,
    pub strike_deg: f64,
    pub dip_deg: f64,
    pub dipdir_deg: f64,
    pub normal: UnitVector3,
}

#[derive(Debug, Serialize, Deserialize)]
struct GroundTruthRow {
    id: i64,
    strike: f64,
    dip: f64,
    dipdir: f64,
    nx: f64,
    ny: f64,
    nz: f64,
}

const GT_HEADER: [&str; 7] = ["id", "strike", "dip", "dipdir", "nx", "ny", "nz"];

impl GroundTruthSurface {
    /// Validates the angle ranges and normalizes the normal.
    pub fn new(
        id: i64,
        strike_deg: f64,
        dip_deg: f64,
        dipdir_deg: f64,
        normal: Vector3<f64>,
    ) -> std::result::Result<Self, String> {
        if !(0.0..360.0).contains(&strike_deg) {
            return Err(format!("strike {strike_deg} outside [0, 360)"));
        }
        if !(0.0..=90.0).contains(&dip_deg) {
            return Err(format!("dip {dip_deg} outside [0, 90]"));
        }
        if !(0.0..360.0).contains(&dipdir_deg) {
            return Err(format!("dip direction {dipdir_deg} outside [0, 360)"));
        }
        let norm = normal.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-2 {
            return Err(format!("normal has norm {norm}, expected ~1"));
        }
        Ok(Self {
            id,
            strike_deg,
            dip_deg,
            dipdir_deg,
            normal: Unit::new_normalize(normal),
        })
    }
}

pub fn parse_ground_truth(text: &str) -> Result<Vec<GroundTruthSurface>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::Schema(format!("ground truth header: {e}")))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != GT_HEADER {
        return Err(Error::Schema(format!(
            "ground truth header must be '{}'",
            GT_HEADER.join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<GroundTruthRow>().enumerate() {
        let row_no = i + 1;
        let r = rec.map_err(|e| Error::Validation {
            row: row_no,
            message: e.to_string(),
        })?;
        let s = GroundTruthSurface::new(
            r.id,
            r.strike,
            r.dip,
            r.dipdir,
            Vector3::new(r.nx, r.ny, r.nz),
        )
        .map_err(|message| Error::Validation {
            row: row_no,
            message,
        })?;
        out.push(s);
    }
    Ok(out)
}

pub fn read_ground_truth(path: impl AsRef<Path>) -> Result<Vec<GroundTruthSurface>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ground_truth(&text)
}

pub fn encode_ground_truth(surfaces: &[GroundTruthSurface]) -> Result<String> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for s in surfaces {
        wtr.serialize(GroundTruthRow {
            id: s.id,
            strike: s.strike_deg,
            dip: s.dip_deg,
            dipdir: s.dipdir_deg,
            nx: s.normal.x,
            ny: s.normal.y,
            nz: s.normal.z,
        })
        .map_err(|e| Error::Serialization(e.to_string()))?;
    }
    let bytes = wtr
        .into_inner()
        .map_err(|e| Error::Serialization(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Serialization(e.to_string()))
}

pub fn write_ground_truth(surfaces: &[GroundTruthSurface], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = encode_ground_truth(surfaces)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
