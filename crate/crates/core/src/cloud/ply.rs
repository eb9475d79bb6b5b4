//! PLY reader and writer for colored point clouds.
//!
//! Writes `float` (or `double`) `x, y, z` and `uchar red, green, blue`
//! vertex properties in either ASCII or binary little-endian form. The reader accepts any scalar
//! property types, properties in any order, and skips extra elements.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::PointCloud;
use crate::geom::Vec3;

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("missing property \"{0}\"")]
    MissingProperty(&'static str),
    #[error("unsupported format \"{0}\"")]
    UnsupportedFormat(String),
    #[error("truncated payload: expected {expected} vertices, read {read}")]
    Truncated { expected: usize, read: usize },
    #[error("bad value on line {line}: {message}")]
    BadValue { line: usize, message: String },
    #[error("invalid cloud: {0}")]
    Cloud(#[from] super::CloudError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlyFormat {
    Ascii,
    #[default]
    BinaryLittleEndian,
}

/// Storage width of written coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F32,
    F64,
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
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
}

fn parse_header<R: BufRead>(reader: &mut R) -> Result<Header, PlyError> {
    let mut line = String::new();
    let mut next_line = |reader: &mut R| -> Result<String, PlyError> {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(PlyError::MalformedHeader("unexpected end of header".into()));
        }
        Ok(line.trim_end_matches(['\n', '\r']).to_string())
    };

    if next_line(reader)? != "ply" {
        return Err(PlyError::MalformedHeader("missing \"ply\" magic".into()));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let l = next_line(reader)?;
        let mut tok = l.split_whitespace();
        match tok.next() {
            Some("format") => {
                let f = tok.next().unwrap_or_default();
                format = Some(match f {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    other => return Err(PlyError::UnsupportedFormat(other.to_string())),
                });
            }
            Some("comment") | Some("obj_info") => {}
            Some("element") => {
                let name = tok.next().ok_or_else(|| PlyError::MalformedHeader(l.clone()))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| PlyError::MalformedHeader(l.clone()))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| PlyError::MalformedHeader("property before element".into()))?;
                let bad = || PlyError::MalformedHeader(l.clone());
                let ty = tok.next().ok_or_else(bad)?;
                if ty == "list" {
                    let count = tok.next().and_then(Scalar::parse).ok_or_else(bad)?;
                    let item = tok.next().and_then(Scalar::parse).ok_or_else(bad)?;
                    el.properties.push(Property::List { count, item });
                } else {
                    let ty = Scalar::parse(ty).ok_or_else(bad)?;
                    let name = tok.next().ok_or_else(bad)?;
                    el.properties.push(Property::Scalar {
                        name: name.to_string(),
                        ty,
                    });
                }
            }
            Some("end_header") => break,
            _ => return Err(PlyError::MalformedHeader(l.clone())),
        }
    }
    let format = format.ok_or_else(|| PlyError::MalformedHeader("missing format line".into()))?;
    Ok(Header { format, elements })
}

const FIELDS: [&str; 6] = ["x", "y", "z", "red", "green", "blue"];

/// Reads a PLY point cloud from any buffered reader.
pub fn read_from<R: BufRead>(mut reader: R) -> Result<PointCloud, PlyError> {
    let header = parse_header(&mut reader)?;
    let vertex_pos = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| PlyError::MalformedHeader("no vertex element".into()))?;
    let vertex = &header.elements[vertex_pos];

    let mut slots = [usize::MAX; 6];
    for (i, field) in FIELDS.iter().enumerate() {
        slots[i] = vertex
            .properties
            .iter()
            .position(|p| matches!(p, Property::Scalar { name, .. } if name == field))
            .ok_or(PlyError::MissingProperty(field))?;
    }
    let color_scale: Vec<f64> = (3..6)
        .map(|i| match &vertex.properties[slots[i]] {
            Property::Scalar { ty: Scalar::F32 | Scalar::F64, .. } => 1.0,
            Property::Scalar { ty: Scalar::U16, .. } => 65535.0,
            _ => 255.0,
        })
        .collect();

    let mut points = Vec::with_capacity(vertex.count);
    let mut colors = Vec::with_capacity(vertex.count);
    let mut values = vec![0.0; vertex.properties.len()];
    let mut push = |values: &[f64]| {
        points.push(Vec3::new(values[slots[0]], values[slots[1]], values[slots[2]]));
        colors.push(Vec3::new(
            values[slots[3]] / color_scale[0],
            values[slots[4]] / color_scale[1],
            values[slots[5]] / color_scale[2],
        ));
    };

    match header.format {
        PlyFormat::Ascii => {
            let mut lines = reader.lines().enumerate();
            // Elements before the vertex block: one line per entry.
            for el in &header.elements[..vertex_pos] {
                for _ in 0..el.count {
                    if lines.next().is_none() {
                        return Err(PlyError::Truncated {
                            expected: vertex.count,
                            read: 0,
                        });
                    }
                }
            }
            for read in 0..vertex.count {
                let (lineno, line) = match lines.next() {
                    Some((n, l)) => (n, l?),
                    None => {
                        return Err(PlyError::Truncated {
                            expected: vertex.count,
                            read,
                        })
                    }
                };
                let mut tok = line.split_whitespace();
                for (slot, prop) in values.iter_mut().zip(&vertex.properties) {
                    let bad = |message: String| PlyError::BadValue {
                        line: lineno + 1,
                        message,
                    };
                    match prop {
                        Property::Scalar { ty, .. } => {
                            let t = tok.next().ok_or_else(|| bad("too few values".into()))?;
                            let not_number = |_| bad(format!("not a number: {t}"));
                            // Parse at declared precision so float32 text round-trips exactly.
                            *slot = match ty {
                                Scalar::F32 => t.parse::<f32>().map_err(not_number)? as f64,
                                _ => t.parse::<f64>().map_err(not_number)?,
                            };
                        }
                        Property::List { .. } => {
                            let n: usize = tok
                                .next()
                                .and_then(|t| t.parse().ok())
                                .ok_or_else(|| bad("bad list count".into()))?;
                            for _ in 0..n {
                                tok.next().ok_or_else(|| bad("short list".into()))?;
                            }
                        }
                    }
                }
                push(&values);
            }
        }
        PlyFormat::BinaryLittleEndian => {
            for el in &header.elements[..vertex_pos] {
                for _ in 0..el.count {
                    skip_binary_entry(&mut reader, el).map_err(|_| PlyError::Truncated {
                        expected: vertex.count,
                        read: 0,
                    })?;
                }
            }
            let mut buf = [0u8; 8];
            for read in 0..vertex.count {
                let truncated = |_| PlyError::Truncated {
                    expected: vertex.count,
                    read,
                };
                for (slot, prop) in values.iter_mut().zip(&vertex.properties) {
                    match prop {
                        Property::Scalar { ty, .. } => {
                            reader.read_exact(&mut buf[..ty.size()]).map_err(truncated)?;
                            *slot = ty.decode_le(&buf);
                        }
                        Property::List { count, item } => {
                            reader.read_exact(&mut buf[..count.size()]).map_err(truncated)?;
                            let n = count.decode_le(&buf) as usize;
                            io::copy(&mut (&mut reader).take((n * item.size()) as u64), &mut io::sink())
                                .map_err(truncated)?;
                        }
                    }
                }
                push(&values);
            }
        }
    }
    Ok(PointCloud::new(points, colors)?)
}

fn skip_binary_entry<R: Read>(reader: &mut R, el: &Element) -> io::Result<()> {
    let mut buf = [0u8; 8];
    for prop in &el.properties {
        match prop {
            Property::Scalar { ty, .. } => reader.read_exact(&mut buf[..ty.size()])?,
            Property::List { count, item } => {
                reader.read_exact(&mut buf[..count.size()])?;
                let n = count.decode_le(&buf) as usize;
                let mut rest = vec![0u8; n * item.size()];
                reader.read_exact(&mut rest)?;
            }
        }
    }
    Ok(())
}

fn color_byte(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes `pc` as PLY. Positions are stored as 32-bit floats.
pub fn write_to<W: Write>(pc: &PointCloud, w: W, format: PlyFormat) -> Result<(), PlyError> {
    write_to_with(pc, w, format, Precision::F32)
}

pub fn write_to_with<W: Write>(pc: &PointCloud, mut w: W, format: PlyFormat, precision: Precision) -> Result<(), PlyError> {
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    let ty = match precision {
        Precision::F32 => "float",
        Precision::F64 => "double",
    };
    write!(
        w,
        "ply\nformat {fmt} 1.0\nelement vertex {}\n\
         property {ty} x\nproperty {ty} y\nproperty {ty} z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        pc.len()
    )?;
    for (p, c) in pc.points().iter().zip(pc.colors()) {
        let rgb = [color_byte(c.x), color_byte(c.y), color_byte(c.z)];
        match (format, precision) {
            (PlyFormat::Ascii, Precision::F32) => {
                let xyz = [p.x as f32, p.y as f32, p.z as f32];
                writeln!(w, "{:?} {:?} {:?} {} {} {}", xyz[0], xyz[1], xyz[2], rgb[0], rgb[1], rgb[2])?
            }
            (PlyFormat::Ascii, Precision::F64) => {
                writeln!(w, "{:?} {:?} {:?} {} {} {}", p.x, p.y, p.z, rgb[0], rgb[1], rgb[2])?
            }
            (PlyFormat::BinaryLittleEndian, Precision::F32) => {
                for v in p.iter() {
                    w.write_all(&(*v as f32).to_le_bytes())?;
                }
                w.write_all(&rgb)?;
            }
            (PlyFormat::BinaryLittleEndian, Precision::F64) => {
                for v in p.iter() {
                    w.write_all(&v.to_le_bytes())?;
                }
                w.write_all(&rgb)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read(path: impl AsRef<Path>) -> Result<PointCloud, PlyError> {
    read_from(BufReader::new(File::open(path)?))
}

pub fn write(pc: &PointCloud, path: impl AsRef<Path>, format: PlyFormat) -> Result<(), PlyError> {
    write_to(pc, BufWriter::new(File::create(path)?), format)
}

pub fn write_with(pc: &PointCloud, path: impl AsRef<Path>, format: PlyFormat, precision: Precision) -> Result<(), PlyError> {
    write_to_with(pc, BufWriter::new(File::create(path)?), format, precision)
}
