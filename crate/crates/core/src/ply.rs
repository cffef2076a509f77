//! Binary little-endian PLY point clouds.
//!
//! The writer always emits `float x y z` and `uchar red green blue`. The
//! reader accepts any binary little-endian or ASCII vertex element with
//! scalar properties and ignores elements after the vertices.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// One colored point as stored on disk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlyVertex {
    pub position: [f32; 3],
    pub color: [u8; 3],
}

pub fn write_ply<W: Write>(
    mut out: W,
    vertices: impl ExactSizeIterator<Item = PlyVertex>,
) -> std::io::Result<()> {
    write!(
        out,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        vertices.len()
    )?;
    let mut record = [0u8; 15];
    for v in vertices {
        for (k, c) in v.position.iter().enumerate() {
            record[k * 4..k * 4 + 4].copy_from_slice(&c.to_le_bytes());
        }
        record[12..15].copy_from_slice(&v.color);
        out.write_all(&record)?;
    }
    out.flush()
}

pub fn write_ply_file(
    path: &Path,
    vertices: impl ExactSizeIterator<Item = PlyVertex>,
) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_ply(BufWriter::new(f), vertices).map_err(|e| Error::io(path, e))
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
    fn parse(s: &str) -> Option<Self> {
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

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Ascii,
    BinaryLittleEndian,
}

/// Reads vertex positions and colors (gray 200 when the file has none).
pub fn read_ply<R: Read>(reader: R, path: &Path) -> Result<Vec<PlyVertex>> {
    let mut reader = BufReader::new(reader);
    let mut line = String::new();
    let next_line = |reader: &mut BufReader<R>, line: &mut String| -> Result<()> {
        line.clear();
        let n = reader.read_line(line).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(Error::format(path, "unexpected end of PLY header"));
        }
        Ok(())
    };

    next_line(&mut reader, &mut line)?;
    if line.trim() != "ply" {
        return Err(Error::format(path, "missing `ply` magic"));
    }
    let mut encoding = None;
    let mut vertex_count = None;
    let mut in_vertex = false;
    let mut props: Vec<(String, Scalar)> = Vec::new();
    loop {
        next_line(&mut reader, &mut line)?;
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                encoding = Some(match tok.next() {
                    Some("ascii") => Encoding::Ascii,
                    Some("binary_little_endian") => Encoding::BinaryLittleEndian,
                    other => {
                        return Err(Error::format(
                            path,
                            format!("unsupported PLY format {other:?}"),
                        ))
                    }
                });
            }
            Some("element") => {
                let name = tok.next().unwrap_or("");
                let count: usize = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| Error::format(path, "bad element count"))?;
                in_vertex = name == "vertex";
                if in_vertex {
                    if vertex_count.is_some() {
                        return Err(Error::format(path, "duplicate vertex element"));
                    }
                    vertex_count = Some(count);
                } else if vertex_count.is_none() {
                    return Err(Error::format(path, "vertex element must come first"));
                }
            }
            Some("property") if in_vertex => {
                let ty = tok.next().unwrap_or("");
                if ty == "list" {
                    return Err(Error::format(
                        path,
                        "list properties on vertices are not supported",
                    ));
                }
                let scalar = Scalar::parse(ty)
                    .ok_or_else(|| Error::format(path, format!("unknown property type `{ty}`")))?;
                let name = tok
                    .next()
                    .ok_or_else(|| Error::format(path, "property without name"))?;
                props.push((name.to_string(), scalar));
            }
            Some("end_header") => break,
            _ => {}
        }
    }
    let encoding = encoding.ok_or_else(|| Error::format(path, "missing format line"))?;
    let count = vertex_count.ok_or_else(|| Error::format(path, "missing vertex element"))?;
    let find = |n: &str| props.iter().position(|(name, _)| name == n);
    let (ix, iy, iz) = match (find("x"), find("y"), find("z")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(Error::format(path, "vertex element lacks x/y/z")),
    };
    let color_idx = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        _ => None,
    };

    let mut values = vec![0.0f64; props.len()];
    let mut out = Vec::with_capacity(count);
    let record_size: usize = props.iter().map(|(_, s)| s.size()).sum();
    let mut record = vec![0u8; record_size];
    for n in 0..count {
        match encoding {
            Encoding::BinaryLittleEndian => {
                reader.read_exact(&mut record).map_err(|_| {
                    Error::format(path, format!("truncated at vertex {n} of {count}"))
                })?;
                let mut off = 0;
                for (k, (_, s)) in props.iter().enumerate() {
                    values[k] = s.decode_le(&record[off..]);
                    off += s.size();
                }
            }
            Encoding::Ascii => {
                next_line(&mut reader, &mut line)?;
                let mut tok = line.split_whitespace();
                for v in values.iter_mut() {
                    *v = tok
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| Error::format(path, format!("bad ASCII vertex {n}")))?;
                }
            }
        }
        let color = match color_idx {
            Some([r, g, b]) => [values[r] as u8, values[g] as u8, values[b] as u8],
            None => [200, 200, 200],
        };
        out.push(PlyVertex {
            position: [values[ix] as f32, values[iy] as f32, values[iz] as f32],
            color,
        });
    }
    Ok(out)
}

pub fn read_ply_file(path: &Path) -> Result<Vec<PlyVertex>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_ply(f, path)
}
