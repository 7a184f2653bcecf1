//! PLY and OBJ point/mesh IO.
//!
//! PLY supports ASCII and binary little-endian, with per-point region labels
//! stored as an integer vertex property named `region`. OBJ reads the vertex
//! list of point or mesh files and writes plain vertex lines.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{PointCloud, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PlyFormat {
    Ascii,
    BinaryLe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "char" | "int8" => ScalarType::I8,
            "uchar" | "uint8" => ScalarType::U8,
            "short" | "int16" => ScalarType::I16,
            "ushort" | "uint16" => ScalarType::U16,
            "int" | "int32" => ScalarType::I32,
            "uint" | "uint32" => ScalarType::U32,
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            other => return Err(Error::Parse(format!("unknown PLY type {other:?}"))),
        })
    }

    fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }

    fn read_le(self, buf: &[u8]) -> f64 {
        match self {
            ScalarType::I8 => buf[0] as i8 as f64,
            ScalarType::U8 => buf[0] as f64,
            ScalarType::I16 => i16::from_le_bytes([buf[0], buf[1]]) as f64,
            ScalarType::U16 => u16::from_le_bytes([buf[0], buf[1]]) as f64,
            ScalarType::I32 => i32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as f64,
            ScalarType::U32 => u32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as f64,
            ScalarType::F32 => f32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as f64,
            ScalarType::F64 => f64::from_le_bytes([
                buf[0], buf[1], buf[2], buf[3], buf[4], buf[5], buf[6], buf[7],
            ]),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: ScalarType },
    List { count_ty: ScalarType, item_ty: ScalarType },
}

#[derive(Debug, Clone)]
struct ElementDecl {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

/// Reads a PLY point cloud (ASCII or binary little-endian).
pub fn read_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let file = std::fs::File::open(path)?;
    read_ply_from(BufReader::new(file))
}

pub fn read_ply_from(mut reader: impl BufRead) -> Result<PointCloud> {
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.trim() != "ply" {
        return Err(Error::Parse("missing ply magic".into()));
    }

    let mut format = None;
    let mut elements: Vec<ElementDecl> = Vec::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(Error::Parse("unexpected EOF in PLY header".into()));
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.first().copied() {
            Some("comment") | Some("obj_info") | None => continue,
            Some("format") => {
                format = Some(match tokens.get(1).copied() {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLe,
                    other => {
                        return Err(Error::Parse(format!("unsupported PLY format {other:?}")))
                    }
                });
            }
            Some("element") => {
                let name = tokens
                    .get(1)
                    .ok_or_else(|| Error::Parse("element without name".into()))?;
                let count: usize = tokens
                    .get(2)
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| Error::Parse("element without count".into()))?;
                elements.push(ElementDecl {
                    name: (*name).to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::Parse("property before element".into()))?;
                if tokens.get(1) == Some(&"list") {
                    el.properties.push(Property::List {
                        count_ty: ScalarType::parse(tokens[2])?,
                        item_ty: ScalarType::parse(tokens[3])?,
                    });
                } else {
                    el.properties.push(Property::Scalar {
                        name: tokens
                            .get(2)
                            .ok_or_else(|| Error::Parse("property without name".into()))?
                            .to_string(),
                        ty: ScalarType::parse(tokens[1])?,
                    });
                }
            }
            Some("end_header") => break,
            Some(other) => return Err(Error::Parse(format!("unknown header line {other:?}"))),
        }
    }
    let format = format.ok_or_else(|| Error::Parse("PLY header missing format".into()))?;

    let mut points = Vec::new();
    let mut labels: Option<Vec<u32>> = None;
    for el in &elements {
        let is_vertex = el.name == "vertex";
        let (mut xi, mut yi, mut zi, mut ri) = (None, None, None, None);
        for (i, p) in el.properties.iter().enumerate() {
            if let Property::Scalar { name, .. } = p {
                match name.as_str() {
                    "x" => xi = Some(i),
                    "y" => yi = Some(i),
                    "z" => zi = Some(i),
                    "region" => ri = Some(i),
                    _ => {}
                }
            }
        }
        if is_vertex && (xi.is_none() || yi.is_none() || zi.is_none()) {
            return Err(Error::Parse("vertex element lacks x/y/z".into()));
        }
        if is_vertex && ri.is_some() {
            labels = Some(Vec::with_capacity(el.count));
        }
        for _ in 0..el.count {
            let values = match format {
                PlyFormat::Ascii => read_ascii_row(&mut reader, el)?,
                PlyFormat::BinaryLe => read_binary_row(&mut reader, el)?,
            };
            if is_vertex {
                let p = Vec3::new(
                    values[xi.unwrap()],
                    values[yi.unwrap()],
                    values[zi.unwrap()],
                );
                points.push(p);
                if let (Some(ls), Some(r)) = (labels.as_mut(), ri) {
                    ls.push(values[r] as u32);
                }
            }
        }
    }
    match labels {
        Some(ls) => PointCloud::with_labels(points, ls),
        None => PointCloud::new(points),
    }
}

/// Scalar slots for one element row; list properties contribute only a
/// placeholder value (their items are consumed and discarded).
fn read_ascii_row(reader: &mut impl BufRead, el: &ElementDecl) -> Result<Vec<f64>> {
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(Error::Parse("unexpected EOF in PLY body".into()));
        }
        if !line.trim().is_empty() {
            break;
        }
    }
    let mut tokens = line.split_whitespace();
    let mut out = Vec::with_capacity(el.properties.len());
    for p in &el.properties {
        match p {
            Property::Scalar { .. } => {
                let t = tokens
                    .next()
                    .ok_or_else(|| Error::Parse("short PLY row".into()))?;
                out.push(
                    t.parse::<f64>()
                        .map_err(|_| Error::Parse(format!("bad PLY scalar {t:?}")))?,
                );
            }
            Property::List { .. } => {
                let n: usize = tokens
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| Error::Parse("bad PLY list count".into()))?;
                for _ in 0..n {
                    tokens
                        .next()
                        .ok_or_else(|| Error::Parse("short PLY list".into()))?;
                }
                out.push(0.0);
            }
        }
    }
    Ok(out)
}

fn read_binary_row(reader: &mut impl BufRead, el: &ElementDecl) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(el.properties.len());
    let mut buf = [0u8; 8];
    for p in &el.properties {
        match p {
            Property::Scalar { ty, .. } => {
                reader.read_exact(&mut buf[..ty.size()])?;
                out.push(ty.read_le(&buf));
            }
            Property::List { count_ty, item_ty } => {
                reader.read_exact(&mut buf[..count_ty.size()])?;
                let n = count_ty.read_le(&buf) as usize;
                let mut skip = vec![0u8; n * item_ty.size()];
                reader.read_exact(&mut skip)?;
                out.push(0.0);
            }
        }
    }
    Ok(out)
}

/// Writes a PLY point cloud; labels become a `uint region` property.
pub fn write_ply(path: impl AsRef<Path>, cloud: &PointCloud, binary: bool) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_ply_to(BufWriter::new(file), cloud, binary)
}

pub fn write_ply_to(mut w: impl Write, cloud: &PointCloud, binary: bool) -> Result<()> {
    let format = if binary {
        "binary_little_endian"
    } else {
        "ascii"
    };
    writeln!(w, "ply")?;
    writeln!(w, "format {format} 1.0")?;
    writeln!(w, "element vertex {}", cloud.len())?;
    writeln!(w, "property double x")?;
    writeln!(w, "property double y")?;
    writeln!(w, "property double z")?;
    if cloud.is_labeled() {
        writeln!(w, "property uint region")?;
    }
    writeln!(w, "end_header")?;
    for (i, p) in cloud.points().iter().enumerate() {
        if binary {
            w.write_all(&p.x.to_le_bytes())?;
            w.write_all(&p.y.to_le_bytes())?;
            w.write_all(&p.z.to_le_bytes())?;
            if cloud.is_labeled() {
                w.write_all(&cloud.label(i).to_le_bytes())?;
            }
        } else if cloud.is_labeled() {
            writeln!(w, "{:.17} {:.17} {:.17} {}", p.x, p.y, p.z, cloud.label(i))?;
        } else {
            writeln!(w, "{:.17} {:.17} {:.17}", p.x, p.y, p.z)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads the vertices of an OBJ point or mesh file; faces and other
/// directives are ignored.
pub fn read_obj(path: impl AsRef<Path>) -> Result<PointCloud> {
    let file = std::fs::File::open(path)?;
    read_obj_from(BufReader::new(file))
}

pub fn read_obj_from(reader: impl BufRead) -> Result<PointCloud> {
    let mut points = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let mut t = line.split_whitespace();
        if t.next() == Some("v") {
            let coord = |t: &mut dyn Iterator<Item = &str>| -> Result<f64> {
                t.next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Parse("bad OBJ vertex".into()))
            };
            let x = coord(&mut t)?;
            let y = coord(&mut t)?;
            let z = coord(&mut t)?;
            points.push(Vec3::new(x, y, z));
        }
    }
    PointCloud::new(points)
}

pub fn write_obj(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_obj_to(BufWriter::new(file), cloud)
}

pub fn write_obj_to(mut w: impl Write, cloud: &PointCloud) -> Result<()> {
    for p in cloud.points() {
        writeln!(w, "v {:.17} {:.17} {:.17}", p.x, p.y, p.z)?;
    }
    w.flush()?;
    Ok(())
}
