//! PLY reader and writer (ascii and binary little-endian).
//!
//! Vertex positions, optional normals and triangle faces are extracted;
//! other vertex properties and other elements are parsed and dropped.
//! Polygons with more than three corners are fan-triangulated.

use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::geometry::{TriangleMesh, Vec3};

#[derive(Debug, thiserror::Error)]
pub enum PlyError {
    #[error("not a PLY file (missing 'ply' magic line)")]
    MissingMagic,
    #[error("header line {line}: {msg}")]
    Header { line: usize, msg: String },
    #[error("header line {line}: unsupported format '{format}'")]
    UnsupportedFormat { line: usize, format: String },
    #[error("header line {line}: unsupported element '{element}': {msg}")]
    UnsupportedElement {
        line: usize,
        element: String,
        msg: String,
    },
    #[error("body line {line}: {msg}")]
    AsciiBody { line: usize, msg: String },
    #[error("truncated body at byte offset {offset} while reading element '{element}'")]
    Truncated { offset: usize, element: String },
    #[error("body byte offset {offset}: {msg}")]
    BinaryBody { offset: usize, msg: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

impl fmt::Display for PlyFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlyFormat::Ascii => "ascii",
            PlyFormat::BinaryLittleEndian => "binary_little_endian",
        })
    }
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
    fn parse(s: &str) -> Option<Scalar> {
        Some(match s {
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

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }

    fn is_integer(self) -> bool {
        !matches!(self, Scalar::F32 | Scalar::F64)
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar(Scalar, String),
    List { count: Scalar, item: Scalar, name: String },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
    line: usize,
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    /// Byte offset of the body.
    body_start: usize,
    /// Line number of the first body line (1-based).
    body_line: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, PlyError> {
    let mut pos = 0usize;
    let mut line_no = 0usize;
    let next_line = |pos: &mut usize| -> Option<String> {
        if *pos >= bytes.len() {
            return None;
        }
        let end = bytes[*pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map_or(bytes.len(), |e| *pos + e);
        let line = String::from_utf8_lossy(&bytes[*pos..end])
            .trim_end_matches('\r')
            .to_string();
        *pos = (end + 1).min(bytes.len());
        Some(line)
    };

    line_no += 1;
    if next_line(&mut pos).as_deref().map(str::trim) != Some("ply") {
        return Err(PlyError::MissingMagic);
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        line_no += 1;
        let Some(line) = next_line(&mut pos) else {
            return Err(PlyError::Header {
                line: line_no,
                msg: "missing end_header".into(),
            });
        };
        let toks: Vec<&str> = line.split_whitespace().collect();
        let header_err = |msg: &str| PlyError::Header {
            line: line_no,
            msg: format!("{msg}: '{line}'"),
        };
        match toks.first().copied() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                if toks.len() != 3 {
                    return Err(header_err("malformed format line"));
                }
                format = Some(match toks[1] {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    other => {
                        return Err(PlyError::UnsupportedFormat {
                            line: line_no,
                            format: other.to_string(),
                        })
                    }
                });
            }
            Some("element") => {
                if toks.len() != 3 {
                    return Err(header_err("malformed element line"));
                }
                let count = toks[2]
                    .parse()
                    .map_err(|_| header_err("element count is not a non-negative integer"))?;
                elements.push(Element {
                    name: toks[1].to_string(),
                    count,
                    properties: Vec::new(),
                    line: line_no,
                });
            }
            Some("property") => {
                let Some(el) = elements.last_mut() else {
                    return Err(header_err("property before any element"));
                };
                let prop = match toks.get(1).copied() {
                    Some("list") if toks.len() == 5 => {
                        let count = Scalar::parse(toks[2]).ok_or_else(|| header_err("unknown type"))?;
                        let item = Scalar::parse(toks[3]).ok_or_else(|| header_err("unknown type"))?;
                        if !count.is_integer() {
                            return Err(header_err("list count type must be an integer"));
                        }
                        Property::List {
                            count,
                            item,
                            name: toks[4].to_string(),
                        }
                    }
                    Some(t) if toks.len() == 3 => Property::Scalar(
                        Scalar::parse(t).ok_or_else(|| header_err("unknown type"))?,
                        toks[2].to_string(),
                    ),
                    _ => return Err(header_err("malformed property line")),
                };
                el.properties.push(prop);
            }
            Some("end_header") => break,
            Some(_) => return Err(header_err("unknown header keyword")),
        }
    }
    let format = format.ok_or(PlyError::Header {
        line: line_no,
        msg: "missing format line".into(),
    })?;
    Ok(Header {
        format,
        elements,
        body_start: pos,
        body_line: line_no + 1,
    })
}

/// Geometry read from a PLY file.
#[derive(Debug, Clone, PartialEq)]
pub struct PlyData {
    pub vertices: Vec<Vec3>,
    /// Present when the vertex element has `nx`, `ny`, `nz`.
    pub normals: Option<Vec<Vec3>>,
    pub faces: Vec<[u32; 3]>,
}

impl PlyData {
    pub fn mesh(&self) -> Option<TriangleMesh> {
        (!self.faces.is_empty()).then(|| TriangleMesh::new(self.vertices.clone(), self.faces.clone()))
    }
}

/// Where the values needed from an element record are found.
struct Layout {
    xyz: Option<[usize; 3]>,
    normal: Option<[usize; 3]>,
    face_list: Option<usize>,
}

fn layout(el: &Element) -> Result<Layout, PlyError> {
    let find = |n: &str| {
        el.properties
            .iter()
            .position(|p| matches!(p, Property::Scalar(_, name) if name == n))
    };
    let unsupported = |msg: &str| PlyError::UnsupportedElement {
        line: el.line,
        element: el.name.clone(),
        msg: msg.to_string(),
    };
    match el.name.as_str() {
        "vertex" => {
            let xyz = match (find("x"), find("y"), find("z")) {
                (Some(x), Some(y), Some(z)) => [x, y, z],
                _ => return Err(unsupported("vertex element needs scalar x, y and z")),
            };
            let normal = match (find("nx"), find("ny"), find("nz")) {
                (Some(x), Some(y), Some(z)) => Some([x, y, z]),
                (None, None, None) => None,
                _ => return Err(unsupported("incomplete normal (nx, ny, nz)")),
            };
            Ok(Layout {
                xyz: Some(xyz),
                normal,
                face_list: None,
            })
        }
        "face" => {
            let list = el.properties.iter().position(|p| {
                matches!(p, Property::List { name, .. } if name == "vertex_indices" || name == "vertex_index")
            });
            match list {
                Some(i) => Ok(Layout {
                    xyz: None,
                    normal: None,
                    face_list: Some(i),
                }),
                None => Err(unsupported("face element needs a vertex_indices list")),
            }
        }
        _ => Ok(Layout {
            xyz: None,
            normal: None,
            face_list: None,
        }),
    }
}

/// Parses a PLY file held in memory.
pub fn parse_ply(bytes: &[u8]) -> Result<PlyData, PlyError> {
    let header = parse_header(bytes)?;
    if !header.elements.iter().any(|e| e.name == "vertex") {
        return Err(PlyError::Header {
            line: header.body_line - 1,
            msg: "no vertex element".into(),
        });
    }
    let layouts = header
        .elements
        .iter()
        .map(layout)
        .collect::<Result<Vec<_>, _>>()?;
    let mut data = PlyData {
        vertices: Vec::new(),
        normals: None,
        faces: Vec::new(),
    };
    let mut raw_faces: Vec<(Vec<f64>, usize)> = Vec::new();
    let mut reader = BodyReader::new(bytes, &header);
    let mut scalars = Vec::new();
    let mut list = Vec::new();
    for (el, lay) in header.elements.iter().zip(&layouts) {
        if lay.normal.is_some() {
            data.normals = Some(Vec::with_capacity(el.count));
        }
        for _ in 0..el.count {
            reader.begin_record(el)?;
            scalars.clear();
            let mut face = None;
            for (k, prop) in el.properties.iter().enumerate() {
                match prop {
                    Property::Scalar(t, _) => scalars.push(reader.value(*t, el)?),
                    Property::List { count, item, .. } => {
                        scalars.push(f64::NAN);
                        let n = reader.value(*count, el)?;
                        if !(n >= 0.0) {
                            return Err(reader.error(el, "negative list length"));
                        }
                        list.clear();
                        for _ in 0..n as usize {
                            list.push(reader.value(*item, el)?);
                        }
                        if lay.face_list == Some(k) {
                            face = Some((list.clone(), reader.position()));
                        }
                    }
                }
            }
            reader.end_record(el)?;
            if let Some([x, y, z]) = lay.xyz {
                data.vertices.push(Vec3::new(scalars[x], scalars[y], scalars[z]));
            }
            if let (Some([x, y, z]), Some(normals)) = (lay.normal, data.normals.as_mut()) {
                normals.push(Vec3::new(scalars[x], scalars[y], scalars[z]));
            }
            if let Some(f) = face {
                raw_faces.push(f);
            }
        }
    }
    reader.finish()?;
    let nv = data.vertices.len();
    for (idx, at) in raw_faces {
        if idx.len() < 3 {
            continue;
        }
        let bad = idx
            .iter()
            .find(|&&i| !(i >= 0.0 && (i as usize) < nv && i.fract() == 0.0));
        if let Some(i) = bad {
            return Err(reader.located_error(at, format!("face index {i} out of range for {nv} vertices")));
        }
        for k in 1..idx.len() - 1 {
            data.faces.push([idx[0] as u32, idx[k] as u32, idx[k + 1] as u32]);
        }
    }
    Ok(data)
}

enum BodyReader<'a> {
    Ascii {
        lines: std::iter::Peekable<std::str::Lines<'a>>,
        line_no: usize,
        tokens: Vec<&'a str>,
        next: usize,
    },
    Binary {
        bytes: &'a [u8],
        offset: usize,
    },
}

impl<'a> BodyReader<'a> {
    fn new(bytes: &'a [u8], header: &Header) -> Self {
        let body = &bytes[header.body_start..];
        match header.format {
            PlyFormat::Ascii => BodyReader::Ascii {
                lines: std::str::from_utf8(body).unwrap_or("\u{0}").lines().peekable(),
                line_no: header.body_line - 1,
                tokens: Vec::new(),
                next: 0,
            },
            PlyFormat::BinaryLittleEndian => BodyReader::Binary {
                bytes,
                offset: header.body_start,
            },
        }
    }

    fn position(&self) -> usize {
        match self {
            BodyReader::Ascii { line_no, .. } => *line_no,
            BodyReader::Binary { offset, .. } => *offset,
        }
    }

    fn located_error(&self, at: usize, msg: String) -> PlyError {
        match self {
            BodyReader::Ascii { .. } => PlyError::AsciiBody { line: at, msg },
            BodyReader::Binary { .. } => PlyError::BinaryBody { offset: at, msg },
        }
    }

    fn error(&self, el: &Element, msg: &str) -> PlyError {
        self.located_error(self.position(), format!("element '{}': {msg}", el.name))
    }

    fn begin_record(&mut self, el: &Element) -> Result<(), PlyError> {
        if let BodyReader::Ascii {
            lines,
            line_no,
            tokens,
            next,
        } = self
        {
            loop {
                let Some(l) = lines.next() else {
                    return Err(PlyError::AsciiBody {
                        line: *line_no + 1,
                        msg: format!("unexpected end of file in element '{}'", el.name),
                    });
                };
                *line_no += 1;
                if l.contains('\u{0}') {
                    return Err(PlyError::AsciiBody {
                        line: *line_no,
                        msg: "body is not valid text".into(),
                    });
                }
                let t: Vec<&str> = l.split_whitespace().collect();
                if !t.is_empty() {
                    *tokens = t;
                    *next = 0;
                    break;
                }
            }
        }
        Ok(())
    }

    fn end_record(&mut self, el: &Element) -> Result<(), PlyError> {
        if let BodyReader::Ascii { tokens, next, .. } = self {
            if *next != tokens.len() {
                let extra = tokens.len() - *next;
                return Err(self.error(el, &format!("{extra} unexpected trailing value(s)")));
            }
        }
        Ok(())
    }

    fn value(&mut self, t: Scalar, el: &Element) -> Result<f64, PlyError> {
        match self {
            BodyReader::Ascii { tokens, next, .. } => {
                let Some(tok) = tokens.get(*next).copied() else {
                    return Err(self.error(el, "too few values on line"));
                };
                *next += 1;
                let v = if t.is_integer() {
                    tok.parse::<i64>().map(|v| v as f64).ok()
                } else {
                    tok.parse::<f64>().ok()
                };
                v.ok_or_else(|| self.error(el, &format!("cannot parse '{tok}'")))
            }
            BodyReader::Binary { bytes, offset } => {
                let n = t.size();
                if *offset + n > bytes.len() {
                    return Err(PlyError::Truncated {
                        offset: *offset,
                        element: el.name.clone(),
                    });
                }
                let v = t.decode(&bytes[*offset..*offset + n]);
                *offset += n;
                Ok(v)
            }
        }
    }

    fn finish(&mut self) -> Result<(), PlyError> {
        match self {
            BodyReader::Ascii { lines, line_no, .. } => {
                for l in lines.by_ref() {
                    *line_no += 1;
                    if !l.trim().is_empty() {
                        return Err(PlyError::AsciiBody {
                            line: *line_no,
                            msg: "data after the last declared element".into(),
                        });
                    }
                }
                Ok(())
            }
            BodyReader::Binary { bytes, offset } => {
                if *offset != bytes.len() {
                    return Err(PlyError::BinaryBody {
                        offset: *offset,
                        msg: format!("{} trailing bytes", bytes.len() - *offset),
                    });
                }
                Ok(())
            }
        }
    }
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<PlyData, PlyError> {
    parse_ply(&std::fs::read(path)?)
}

/// Serializes vertices (as `float`), optional normals and triangle faces.
pub fn write_ply(
    w: &mut impl Write,
    vertices: &[Vec3],
    normals: Option<&[Vec3]>,
    faces: &[[u32; 3]],
    format: PlyFormat,
) -> std::io::Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format {format} 1.0")?;
    writeln!(w, "element vertex {}", vertices.len())?;
    for c in ["x", "y", "z"] {
        writeln!(w, "property float {c}")?;
    }
    if normals.is_some() {
        for c in ["nx", "ny", "nz"] {
            writeln!(w, "property float {c}")?;
        }
    }
    if !faces.is_empty() {
        writeln!(w, "element face {}", faces.len())?;
        writeln!(w, "property list uchar int vertex_indices")?;
    }
    writeln!(w, "end_header")?;
    for (i, v) in vertices.iter().enumerate() {
        let mut vals = vec![v.x as f32, v.y as f32, v.z as f32];
        if let Some(n) = normals {
            vals.extend([n[i].x as f32, n[i].y as f32, n[i].z as f32]);
        }
        match format {
            PlyFormat::Ascii => {
                let s: Vec<String> = vals.iter().map(|v| v.to_string()).collect();
                writeln!(w, "{}", s.join(" "))?;
            }
            PlyFormat::BinaryLittleEndian => {
                for v in vals {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
    }
    for f in faces {
        match format {
            PlyFormat::Ascii => writeln!(w, "3 {} {} {}", f[0], f[1], f[2])?,
            PlyFormat::BinaryLittleEndian => {
                w.write_all(&[3u8])?;
                for i in f {
                    w.write_all(&(*i as i32).to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}

pub fn save_ply(
    path: impl AsRef<Path>,
    vertices: &[Vec3],
    normals: Option<&[Vec3]>,
    faces: &[[u32; 3]],
    format: PlyFormat,
) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_ply(&mut w, vertices, normals, faces, format)?;
    w.flush()
}
