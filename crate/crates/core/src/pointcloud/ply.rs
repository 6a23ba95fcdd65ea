//! PLY geometry I/O: ASCII and binary little-endian, x/y/z stored as 32-bit
//! floats. Other vertex properties are skipped on load; non-vertex elements
//! declared after the vertex data are ignored.

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::PointCloud;

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("header missing required property {name}")]
    MissingProperty { name: String },
    #[error("truncated payload at byte {offset}: expected {expected} bytes, found {actual}")]
    Truncated {
        offset: usize,
        expected: usize,
        actual: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy)]
struct Property {
    size: usize,
    is_float: bool,
    is_double: bool,
}

fn property_info(type_name: &str) -> Option<Property> {
    let (size, is_float, is_double) = match type_name {
        "float" | "float32" => (4, true, false),
        "double" | "float64" => (8, false, true),
        "char" | "int8" | "uchar" | "uint8" => (1, false, false),
        "short" | "int16" | "ushort" | "uint16" => (2, false, false),
        "int" | "int32" | "uint" | "uint32" => (4, false, false),
        _ => return None,
    };
    Some(Property { size, is_float, is_double })
}

pub fn load_ply(path: &Path) -> Result<PointCloud, PlyError> {
    let bytes = fs::read(path)?;
    parse_ply(&bytes)
}

pub(crate) fn parse_ply(bytes: &[u8]) -> Result<PointCloud, PlyError> {
    let parse_err = |offset: usize, message: &str| PlyError::Parse {
        offset,
        message: message.to_string(),
    };

    // ---- header ----
    let mut offset = 0usize;
    let next_line = |off: &mut usize| -> Result<String, PlyError> {
        let start = *off;
        let end = bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|p| start + p)
            .ok_or_else(|| parse_err(start, "unterminated header line"))?;
        *off = end + 1;
        Ok(String::from_utf8_lossy(&bytes[start..end]).trim_end_matches('\r').to_string())
    };

    let magic = next_line(&mut offset)?;
    if magic.trim() != "ply" {
        return Err(parse_err(0, "missing 'ply' magic"));
    }

    let mut format: Option<PlyFormat> = None;
    let mut vertex_count: Option<usize> = None;
    let mut properties: Vec<(String, Property)> = Vec::new();
    let mut in_vertex_element = false;
    let mut element_before_vertex = false;

    loop {
        let line_start = offset;
        let line = next_line(&mut offset)?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.first().copied() {
            Some("comment") | None => continue,
            Some("format") => {
                format = Some(match tokens.get(1).copied() {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLittleEndian,
                    other => {
                        return Err(parse_err(
                            line_start,
                            &format!("unsupported format {:?}", other),
                        ))
                    }
                });
            }
            Some("element") => {
                if tokens.get(1).copied() == Some("vertex") {
                    in_vertex_element = true;
                    vertex_count = Some(
                        tokens
                            .get(2)
                            .and_then(|v| v.parse().ok())
                            .ok_or_else(|| parse_err(line_start, "bad vertex count"))?,
                    );
                } else {
                    if vertex_count.is_none() {
                        element_before_vertex = true;
                    }
                    in_vertex_element = false;
                }
            }
            Some("property") => {
                if in_vertex_element {
                    if tokens.get(1).copied() == Some("list") {
                        return Err(parse_err(line_start, "list property on vertex element"));
                    }
                    let type_name = tokens
                        .get(1)
                        .ok_or_else(|| parse_err(line_start, "property missing type"))?;
                    let name = tokens
                        .get(2)
                        .ok_or_else(|| parse_err(line_start, "property missing name"))?;
                    let info = property_info(type_name).ok_or_else(|| {
                        parse_err(line_start, &format!("unsupported property type {type_name}"))
                    })?;
                    properties.push((name.to_string(), info));
                }
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(parse_err(line_start, &format!("unknown header keyword {other}")))
            }
        }
    }

    let format = format.ok_or_else(|| parse_err(0, "header missing format line"))?;
    let n = vertex_count.ok_or_else(|| parse_err(0, "header missing vertex element"))?;
    if element_before_vertex {
        return Err(parse_err(0, "elements before vertex data are not supported"));
    }
    if n == 0 {
        return Err(parse_err(offset, "vertex count must be at least 1"));
    }

    let mut coord_cols = [usize::MAX; 3];
    for (i, (name, info)) in properties.iter().enumerate() {
        let slot = match name.as_str() {
            "x" => 0,
            "y" => 1,
            "z" => 2,
            _ => continue,
        };
        if !info.is_float && !info.is_double {
            return Err(parse_err(0, &format!("property {name} must be float typed")));
        }
        coord_cols[slot] = i;
    }
    for (slot, name) in ["x", "y", "z"].iter().enumerate() {
        if coord_cols[slot] == usize::MAX {
            return Err(PlyError::MissingProperty { name: name.to_string() });
        }
    }

    // ---- payload ----
    let mut points = Vec::with_capacity(n);
    match format {
        PlyFormat::Ascii => {
            let body = String::from_utf8_lossy(&bytes[offset..]);
            let mut lines = body.lines();
            for row in 0..n {
                let line = lines.next().ok_or(PlyError::Truncated {
                    offset: bytes.len(),
                    expected: n,
                    actual: row,
                })?;
                let fields: Vec<&str> = line.split_whitespace().collect();
                if fields.len() < properties.len() {
                    return Err(parse_err(offset, &format!("vertex row {row} too short")));
                }
                let mut p = [0.0f64; 3];
                for (slot, &col) in coord_cols.iter().enumerate() {
                    p[slot] = fields[col].parse::<f64>().map_err(|_| {
                        parse_err(offset, &format!("bad number {:?} in row {row}", fields[col]))
                    })?;
                }
                points.push(p);
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let stride: usize = properties.iter().map(|(_, p)| p.size).sum();
            let expected = n * stride;
            let actual = bytes.len() - offset;
            if actual < expected {
                return Err(PlyError::Truncated {
                    offset: offset + actual,
                    expected,
                    actual,
                });
            }
            let mut prop_offsets = Vec::with_capacity(properties.len());
            let mut acc = 0;
            for (_, info) in &properties {
                prop_offsets.push(acc);
                acc += info.size;
            }
            for row in 0..n {
                let base = offset + row * stride;
                let mut p = [0.0f64; 3];
                for (slot, &col) in coord_cols.iter().enumerate() {
                    let at = base + prop_offsets[col];
                    let info = properties[col].1;
                    p[slot] = if info.is_double {
                        f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap())
                    } else {
                        f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as f64
                    };
                }
                points.push(p);
            }
        }
    }

    Ok(PointCloud::new(points))
}

pub fn save_ply(pc: &PointCloud, path: &Path, format: PlyFormat) -> Result<(), PlyError> {
    fs::write(path, encode_ply(pc, format))?;
    Ok(())
}

pub(crate) fn encode_ply(pc: &PointCloud, format: PlyFormat) -> Vec<u8> {
    let mut out = Vec::new();
    let fmt_line = match format {
        PlyFormat::Ascii => "format ascii 1.0",
        PlyFormat::BinaryLittleEndian => "format binary_little_endian 1.0",
    };
    out.extend_from_slice(
        format!(
            "ply\n{}\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
            fmt_line,
            pc.len()
        )
        .as_bytes(),
    );
    for p in pc.points() {
        match format {
            PlyFormat::Ascii => {
                out.extend_from_slice(format!("{:.6} {:.6} {:.6}\n", p[0], p[1], p[2]).as_bytes());
            }
            PlyFormat::BinaryLittleEndian => {
                for a in 0..3 {
                    out.extend_from_slice(&(p[a] as f32).to_le_bytes());
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_ascii() {
        let src = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n";
        let pc = parse_ply(src).unwrap();
        assert_eq!(pc.len(), 1);
        assert_eq!(pc.points()[0], [0.0, 0.0, 0.0]);
    }

    #[test]
    fn binary_roundtrip_is_bit_identical() {
        let mut rng = crate::random::rng_stream(2024, 0);
        // coordinates drawn on the f32 grid so the f64<->f32 casts are exact
        let pts: Vec<[f64; 3]> = (0..2048)
            .map(|_| {
                [
                    crate::random::uniform_open01(&mut rng) as f32 as f64,
                    crate::random::uniform_open01(&mut rng) as f32 as f64,
                    crate::random::uniform_open01(&mut rng) as f32 as f64,
                ]
            })
            .collect();
        let pc = PointCloud::new(pts);
        let bytes = encode_ply(&pc, PlyFormat::BinaryLittleEndian);
        let back = parse_ply(&bytes).unwrap();
        assert_eq!(pc.points(), back.points());
        let bytes2 = encode_ply(&back, PlyFormat::BinaryLittleEndian);
        assert_eq!(bytes, bytes2);
    }

    #[test]
    fn ascii_roundtrip_six_decimals() {
        let pc = PointCloud::new(vec![[0.123456789, 1.0, 0.5], [0.25, 0.75, 0.1]]);
        let bytes = encode_ply(&pc, PlyFormat::Ascii);
        let back = parse_ply(&bytes).unwrap();
        for (a, b) in pc.points().iter().zip(back.points()) {
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() <= 5e-7);
            }
        }
    }

    #[test]
    fn missing_z_property_is_rejected() {
        let src = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n0 0\n";
        match parse_ply(src) {
            Err(PlyError::MissingProperty { name }) => assert_eq!(name, "z"),
            other => panic!("expected missing-property error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn truncated_binary_payload_reports_offset() {
        let pc = PointCloud::new(vec![[0.5, 0.5, 0.5], [0.25, 0.5, 0.75]]);
        let mut bytes = encode_ply(&pc, PlyFormat::BinaryLittleEndian);
        bytes.truncate(bytes.len() - 5);
        match parse_ply(&bytes) {
            Err(PlyError::Truncated { expected, actual, .. }) => {
                assert_eq!(expected, 24);
                assert_eq!(actual, 19);
            }
            other => panic!("expected truncation error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn extra_properties_are_skipped() {
        let src = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty uchar red\nproperty float x\nproperty float y\nproperty float z\nend_header\n255 1 2 3\n";
        let pc = parse_ply(src).unwrap();
        assert_eq!(pc.points()[0], [1.0, 2.0, 3.0]);
    }

    #[test]
    fn save_and_load_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cloud.ply");
        let pc = PointCloud::new(vec![[0.1f32 as f64, 0.2f32 as f64, 0.3f32 as f64]]);
        save_ply(&pc, &path, PlyFormat::BinaryLittleEndian).unwrap();
        let back = load_ply(&path).unwrap();
        assert_eq!(pc.points(), back.points());
    }
}
