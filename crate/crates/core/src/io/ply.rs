use std::fmt::Write as _;
use std::path::Path;

use super::write_atomic;
use crate::error::Result;
use crate::geometry::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

/// `x y z` floats, then optional `nx ny nz` floats and `red green blue` uchars.
pub fn encode_ply(pc: &PointCloud, format: PlyFormat) -> Result<Vec<u8>> {
    pc.validate()?;
    let mut header = String::from("ply\n");
    header += match format {
        PlyFormat::Ascii => "format ascii 1.0\n",
        PlyFormat::BinaryLittleEndian => "format binary_little_endian 1.0\n",
    };
    let _ = writeln!(header, "element vertex {}", pc.len());
    for p in ["x", "y", "z"] {
        let _ = writeln!(header, "property float {p}");
    }
    if pc.normals.is_some() {
        for p in ["nx", "ny", "nz"] {
            let _ = writeln!(header, "property float {p}");
        }
    }
    if pc.colors.is_some() {
        for p in ["red", "green", "blue"] {
            let _ = writeln!(header, "property uchar {p}");
        }
    }
    header += "end_header\n";
    let mut out = header.into_bytes();
    for i in 0..pc.len() {
        let n = pc.normals.as_ref().map(|n| n[i]);
        let c = pc.colors.as_ref().map(|c| c[i]);
        match format {
            PlyFormat::Ascii => {
                let p = pc.points[i];
                let mut line = format!("{} {} {}", p[0], p[1], p[2]);
                if let Some(n) = n {
                    let _ = write!(line, " {} {} {}", n[0], n[1], n[2]);
                }
                if let Some(c) = c {
                    let _ = write!(line, " {} {} {}", c[0], c[1], c[2]);
                }
                line.push('\n');
                out.extend_from_slice(line.as_bytes());
            }
            PlyFormat::BinaryLittleEndian => {
                for v in pc.points[i].iter().chain(n.iter().flatten()) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                if let Some(c) = c {
                    out.extend_from_slice(&c);
                }
            }
        }
    }
    Ok(out)
}

pub fn write_ply(pc: &PointCloud, path: impl AsRef<Path>, format: PlyFormat) -> Result<()> {
    write_atomic(path, &encode_ply(pc, format)?)
}
