//! Simplified octree geometry codec over the unit cube.
//!
//! Breadth-first occupancy-byte serialization: the root cell is [0,1)^3;
//! each occupied cell emits one byte whose bit i (LSB first) marks child i,
//! with child index 4*cx + 2*cy + cz and c_axis = 1 when the coordinate is
//! in the upper half of the cell. Decoding emits leaf-cell centers at the
//! coded depth. No entropy coding or neighbor contexts; byte-count
//! mismatches surface as decode failures rather than crashes.
//!
//! Stream layout (little-endian): magic "OCT1", depth u8, byte count u32,
//! occupancy bytes.

use thiserror::Error;

use crate::pointcloud::PointCloud;

#[derive(Debug, Error)]
pub enum OctreeError {
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("octree decode failure at byte {offset}: {message}")]
    Decode { offset: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OctreeCode {
    pub depth: u8,
    pub occupancy: Vec<u8>,
}

const MAGIC: &[u8; 4] = b"OCT1";

/// Voxelizes a normalized cloud ([0,1] coordinates) and serializes the
/// occupancy tree breadth-first.
pub fn octree_encode(pc: &PointCloud, depth: u8) -> Result<OctreeCode, OctreeError> {
    if depth < 1 || depth > 16 {
        return Err(OctreeError::Parameter(format!(
            "depth {depth} out of supported range 1..=16"
        )));
    }
    for p in pc.points() {
        if p.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
            return Err(OctreeError::Parameter(
                "octree input must be normalized to the unit cube".into(),
            ));
        }
    }
    let cells = 1u32 << depth;
    // quantize to depth-level cell keys
    let key_of = |p: &[f64; 3]| -> (u32, u32, u32) {
        let q = |v: f64| -> u32 { ((v * cells as f64) as u32).min(cells - 1) };
        (q(p[0]), q(p[1]), q(p[2]))
    };
    let keys: Vec<(u32, u32, u32)> = pc.points().iter().map(key_of).collect();

    // occupied cell sets per level, each sorted for membership lookups
    let mut levels: Vec<Vec<(u32, u32, u32)>> = Vec::with_capacity(depth as usize);
    for d in 1..=depth {
        let shift = depth - d;
        let mut set: Vec<(u32, u32, u32)> = keys
            .iter()
            .map(|&(x, y, z)| (x >> shift, y >> shift, z >> shift))
            .collect();
        set.sort_unstable();
        set.dedup();
        levels.push(set);
    }

    let mut occupancy = Vec::new();
    let mut level: Vec<(u32, u32, u32)> = vec![(0, 0, 0)];
    for set in &levels {
        let mut next = Vec::new();
        for &(cx, cy, cz) in &level {
            let mut byte = 0u8;
            for child in 0..8u8 {
                let nx = cx * 2 + ((child >> 2) & 1) as u32;
                let ny = cy * 2 + ((child >> 1) & 1) as u32;
                let nz = cz * 2 + (child & 1) as u32;
                if set.binary_search(&(nx, ny, nz)).is_ok() {
                    byte |= 1 << child;
                    next.push((nx, ny, nz));
                }
            }
            occupancy.push(byte);
        }
        level = next;
    }
    Ok(OctreeCode { depth, occupancy })
}

/// Leaf-cell centers of the coded occupancy tree.
pub fn octree_decode(code: &OctreeCode) -> Result<PointCloud, OctreeError> {
    if code.depth < 1 || code.depth > 16 {
        return Err(OctreeError::Decode {
            offset: 0,
            message: format!("depth {} out of range", code.depth),
        });
    }
    let mut level: Vec<(u32, u32, u32)> = vec![(0, 0, 0)];
    let mut cursor = 0usize;
    for d in 0..code.depth {
        let mut next = Vec::new();
        for &(cx, cy, cz) in &level {
            let Some(&byte) = code.occupancy.get(cursor) else {
                return Err(OctreeError::Decode {
                    offset: cursor,
                    message: "occupancy stream ended mid-level".into(),
                });
            };
            cursor += 1;
            if byte == 0 {
                return Err(OctreeError::Decode {
                    offset: cursor - 1,
                    message: "occupied cell with empty child mask".into(),
                });
            }
            for child in 0..8u8 {
                if byte & (1 << child) != 0 {
                    next.push((
                        cx * 2 + ((child >> 2) & 1) as u32,
                        cy * 2 + ((child >> 1) & 1) as u32,
                        cz * 2 + (child & 1) as u32,
                    ));
                }
            }
        }
        level = next;
        let _ = d;
    }
    if cursor != code.occupancy.len() {
        return Err(OctreeError::Decode {
            offset: cursor,
            message: format!(
                "trailing occupancy bytes: consumed {cursor} of {}",
                code.occupancy.len()
            ),
        });
    }
    let cell = 1.0 / (1u32 << code.depth) as f64;
    let points = level
        .into_iter()
        .map(|(x, y, z)| {
            [
                (x as f64 + 0.5) * cell,
                (y as f64 + 0.5) * cell,
                (z as f64 + 0.5) * cell,
            ]
        })
        .collect();
    Ok(PointCloud::new(points))
}

/// Byte-stream serialization with the self-describing header.
pub fn serialize(code: &OctreeCode) -> Vec<u8> {
    let mut out = Vec::with_capacity(9 + code.occupancy.len());
    out.extend_from_slice(MAGIC);
    out.push(code.depth);
    out.extend_from_slice(&(code.occupancy.len() as u32).to_le_bytes());
    out.extend_from_slice(&code.occupancy);
    out
}

pub fn deserialize(bytes: &[u8]) -> Result<OctreeCode, OctreeError> {
    if bytes.len() < 9 {
        return Err(OctreeError::Decode {
            offset: bytes.len(),
            message: "stream shorter than header".into(),
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(OctreeError::Decode {
            offset: 0,
            message: "bad magic".into(),
        });
    }
    let depth = bytes[4];
    let count = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    if bytes.len() < 9 + count {
        return Err(OctreeError::Decode {
            offset: bytes.len(),
            message: format!("payload truncated: header promises {count} bytes"),
        });
    }
    Ok(OctreeCode {
        depth,
        occupancy: bytes[9..9 + count].to_vec(),
    })
}
