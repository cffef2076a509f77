//! Portable float maps (single channel, little-endian, scale -1.0) and 8-bit
//! PGM masks.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::matcher::DisparityField;

/// Grayscale float map; rows are stored bottom to top as the format requires.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatMap {
    pub width: usize,
    pub height: usize,
    /// Row-major, top row first.
    pub data: Vec<f32>,
}

pub fn encode_pfm(map: &FloatMap) -> Vec<u8> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", map.width, map.height).into_bytes();
    out.reserve(map.data.len() * 4);
    for y in (0..map.height).rev() {
        for v in &map.data[y * map.width..(y + 1) * map.width] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_pfm(map: &FloatMap, path: &Path) -> Result<()> {
    std::fs::write(path, encode_pfm(map)).map_err(|e| Error::io(path, e))
}

pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<FloatMap> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, "truncated PFM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    if magic != "Pf" {
        return Err(Error::format(
            path,
            format!("expected single-channel `Pf`, found `{magic}`"),
        ));
    }
    let parse_dim = |s: String| {
        s.parse::<usize>()
            .map_err(|_| Error::format(path, format!("bad dimension `{s}`")))
    };
    let width = parse_dim(token()?)?;
    let height = parse_dim(token()?)?;
    let scale_tok = token()?;
    let scale: f64 = scale_tok
        .parse()
        .map_err(|_| Error::format(path, format!("bad scale `{scale_tok}`")))?;
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = width * height * 4;
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| Error::format(path, "truncated PFM raster"))?;
    let little = scale < 0.0;
    let mut data = vec![0.0f32; width * height];
    for (k, chunk) in raster.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        };
        let (row_from_bottom, x) = (k / width, k % width);
        data[(height - 1 - row_from_bottom) * width + x] = v;
    }
    Ok(FloatMap {
        width,
        height,
        data,
    })
}

pub fn read_pfm(path: &Path) -> Result<FloatMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes, path)
}

/// Binary PGM (P5) with 255 for `true`.
pub fn write_pgm_mask(width: usize, height: usize, mask: &[bool], path: &Path) -> Result<()> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(mask.iter().map(|&m| if m { 255u8 } else { 0 }));
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Disparity as PFM with invalid pixels stored as +inf.
pub fn disparity_to_map(field: &DisparityField) -> FloatMap {
    let data = field
        .disparity()
        .iter()
        .zip(field.valid())
        .map(|(&d, &v)| if v { d as f32 } else { f32::INFINITY })
        .collect();
    FloatMap {
        width: field.width(),
        height: field.height(),
        data,
    }
}

/// Finite entries are valid; confidence is 1 for valid pixels.
pub fn map_to_disparity(map: &FloatMap) -> Result<DisparityField> {
    DisparityField::from_values(
        map.width,
        map.height,
        map.data.iter().map(|&v| v as f64).collect(),
    )
}

/// Paths written by [`export_disparity`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DisparityExport {
    pub disparity: PathBuf,
    pub confidence: PathBuf,
    pub mask: PathBuf,
}

/// Writes `<path>` (disparity PFM), `<stem>_conf.pfm` and `<stem>_mask.pgm`.
pub fn export_disparity(field: &DisparityField, path: &Path) -> Result<DisparityExport> {
    let stem = path.with_extension("");
    let stem = stem.to_string_lossy();
    let conf_path = PathBuf::from(format!("{stem}_conf.pfm"));
    let mask_path = PathBuf::from(format!("{stem}_mask.pgm"));
    write_pfm(&disparity_to_map(field), path)?;
    let conf = FloatMap {
        width: field.width(),
        height: field.height(),
        data: field.confidence().iter().map(|&c| c as f32).collect(),
    };
    write_pfm(&conf, &conf_path)?;
    write_pgm_mask(field.width(), field.height(), field.valid(), &mask_path)?;
    Ok(DisparityExport {
        disparity: path.to_path_buf(),
        confidence: conf_path,
        mask: mask_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_and_row_order() {
        let map = FloatMap {
            width: 2,
            height: 2,
            data: vec![1.0, 2.0, 3.0, 4.0],
        };
        let bytes = encode_pfm(&map);
        assert!(bytes.starts_with(b"Pf\n2 2\n-1.0\n"));
        let raster = &bytes[12..];
        // bottom row first
        assert_eq!(f32::from_le_bytes(raster[0..4].try_into().unwrap()), 3.0);
    }

    #[test]
    fn rejects_color_pfm() {
        let err = decode_pfm(
            b"PF\n1 1\n-1.0\n\0\0\0\0\0\0\0\0\0\0\0\0",
            Path::new("x.pfm"),
        );
        assert!(err.is_err());
        assert!(decode_pfm(b"Pf\n4 4\n-1.0\n\0\0", Path::new("x.pfm")).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(w in 1usize..12, h in 1usize..12, seed in any::<u32>()) {
            let data: Vec<f32> = (0..w * h)
                .map(|i| ((i as u32).wrapping_mul(2654435761) ^ seed) as f32 * 1e-3)
                .collect();
            let map = FloatMap { width: w, height: h, data };
            let back = decode_pfm(&encode_pfm(&map), Path::new("mem")).unwrap();
            prop_assert_eq!(back, map);
        }
    }
}
