//! PLY point clouds: reads ascii and binary (either endianness), writes
//! ascii or little-endian binary with double coordinates.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
    BinaryBigEndian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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
    fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            other => return Err(Error::Format(format!("unknown PLY type `{other}`"))),
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn decode(self, bytes: &[u8], big_endian: bool) -> f64 {
        macro_rules! num {
            ($t:ty) => {{
                let arr = bytes.try_into().expect("slice has scalar width");
                (if big_endian { <$t>::from_be_bytes(arr) } else { <$t>::from_le_bytes(arr) }) as f64
            }};
        }
        match self {
            Self::I8 => num!(i8),
            Self::U8 => num!(u8),
            Self::I16 => num!(i16),
            Self::U16 => num!(u16),
            Self::I32 => num!(i32),
            Self::U32 => num!(u32),
            Self::F32 => num!(f32),
            Self::F64 => num!(f64),
        }
    }
}

#[derive(Clone, Debug)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Clone, Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
}

fn read_header(reader: &mut impl BufRead) -> Result<Header> {
    let mut line = String::new();
    let mut next_line = |line: &mut String| -> Result<()> {
        line.clear();
        if reader.read_line(line)? == 0 {
            return Err(Error::Format("unexpected end of PLY header".into()));
        }
        Ok(())
    };
    next_line(&mut line)?;
    if line.trim_end() != "ply" {
        return Err(Error::Format("missing `ply` magic".into()));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        next_line(&mut line)?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", f, _version] => {
                format = Some(match *f {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    "binary_big_endian" => PlyFormat::BinaryBigEndian,
                    other => return Err(Error::Format(format!("unknown PLY format `{other}`"))),
                })
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| Error::Format(format!("bad element count `{count}`")))?,
                properties: Vec::new(),
            }),
            ["property", "list", count, item, _name] => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| Error::Format("property before element".into()))?;
                element.properties.push(Property::List {
                    count: Scalar::parse(count)?,
                    item: Scalar::parse(item)?,
                });
            }
            ["property", ty, name] => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| Error::Format("property before element".into()))?;
                element.properties.push(Property::Scalar {
                    name: name.to_string(),
                    ty: Scalar::parse(ty)?,
                });
            }
            _ => return Err(Error::Format(format!("bad PLY header line `{}`", line.trim_end()))),
        }
    }
    let format = format.ok_or_else(|| Error::Format("PLY header has no format line".into()))?;
    Ok(Header { format, elements })
}

fn xyz_slots(element: &Element) -> Result<[usize; 3]> {
    let find = |axis: &str| {
        element
            .properties
            .iter()
            .position(|p| matches!(p, Property::Scalar { name, .. } if name == axis))
            .ok_or_else(|| Error::Format(format!("vertex element lacks property `{axis}`")))
    };
    Ok([find("x")?, find("y")?, find("z")?])
}

fn read_ascii(reader: &mut impl BufRead, header: &Header) -> Result<Vec<Point3>> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let mut tokens = text.split_whitespace();
    let mut next = || -> Result<f64> {
        let tok = tokens
            .next()
            .ok_or_else(|| Error::Format("PLY body ended early".into()))?;
        tok.parse::<f64>()
            .map_err(|_| Error::Format(format!("bad PLY number `{tok}`")))
    };
    let mut points = Vec::new();
    for element in &header.elements {
        let slots = if element.name == "vertex" { Some(xyz_slots(element)?) } else { None };
        for _ in 0..element.count {
            let mut xyz = [0.0; 3];
            for (k, prop) in element.properties.iter().enumerate() {
                match prop {
                    Property::Scalar { .. } => {
                        let v = next()?;
                        if let Some(axis) = slots.and_then(|s| s.iter().position(|&i| i == k)) {
                            xyz[axis] = v;
                        }
                    }
                    Property::List { .. } => {
                        let n = next()? as usize;
                        for _ in 0..n {
                            next()?;
                        }
                    }
                }
            }
            if slots.is_some() {
                points.push(Point3::new(xyz[0], xyz[1], xyz[2]));
            }
        }
    }
    Ok(points)
}

fn read_binary(reader: &mut impl Read, header: &Header, big_endian: bool) -> Result<Vec<Point3>> {
    let mut buf = [0u8; 8];
    let mut scalar = |reader: &mut dyn Read, ty: Scalar| -> Result<f64> {
        let bytes = &mut buf[..ty.size()];
        reader
            .read_exact(bytes)
            .map_err(|_| Error::Format("PLY body ended early".into()))?;
        Ok(ty.decode(bytes, big_endian))
    };
    let mut points = Vec::new();
    for element in &header.elements {
        let slots = if element.name == "vertex" { Some(xyz_slots(element)?) } else { None };
        for _ in 0..element.count {
            let mut xyz = [0.0; 3];
            for (k, prop) in element.properties.iter().enumerate() {
                match prop {
                    Property::Scalar { ty, .. } => {
                        let v = scalar(reader, *ty)?;
                        if let Some(axis) = slots.and_then(|s| s.iter().position(|&i| i == k)) {
                            xyz[axis] = v;
                        }
                    }
                    Property::List { count, item } => {
                        let n = scalar(reader, *count)? as usize;
                        for _ in 0..n {
                            scalar(reader, *item)?;
                        }
                    }
                }
            }
            if slots.is_some() {
                points.push(Point3::new(xyz[0], xyz[1], xyz[2]));
            }
        }
    }
    Ok(points)
}

/// Reads the `vertex` element's x, y, z; other properties and elements are
/// skipped.
pub fn read_ply(reader: impl Read) -> Result<PointCloud> {
    let mut reader = BufReader::new(reader);
    let header = read_header(&mut reader)?;
    if !header.elements.iter().any(|e| e.name == "vertex") {
        return Err(Error::Format("PLY has no vertex element".into()));
    }
    let points = match header.format {
        PlyFormat::Ascii => read_ascii(&mut reader, &header)?,
        PlyFormat::BinaryLittleEndian => read_binary(&mut reader, &header, false)?,
        PlyFormat::BinaryBigEndian => read_binary(&mut reader, &header, true)?,
    };
    PointCloud::new(points)
}

pub fn read_ply_file(path: impl AsRef<Path>) -> Result<PointCloud> {
    read_ply(std::fs::File::open(path)?)
}

/// Writes a vertex-only PLY with double x, y, z.
pub fn write_ply(mut writer: impl Write, cloud: &PointCloud, format: PlyFormat) -> Result<()> {
    let name = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
        PlyFormat::BinaryBigEndian => "binary_big_endian",
    };
    let mut out = Vec::with_capacity(128 + cloud.len() * 24);
    write!(
        out,
        "ply\nformat {name} 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        cloud.len()
    )?;
    for p in cloud.iter() {
        match format {
            // `{:?}` prints the shortest string that parses back exactly.
            PlyFormat::Ascii => writeln!(out, "{:?} {:?} {:?}", p.x, p.y, p.z)?,
            PlyFormat::BinaryLittleEndian => {
                for v in [p.x, p.y, p.z] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            PlyFormat::BinaryBigEndian => {
                for v in [p.x, p.y, p.z] {
                    out.extend_from_slice(&v.to_be_bytes());
                }
            }
        }
    }
    writer.write_all(&out)?;
    Ok(())
}

pub fn write_ply_file(path: impl AsRef<Path>, cloud: &PointCloud, format: PlyFormat) -> Result<()> {
    write_ply(std::fs::File::create(path)?, cloud, format)
}
