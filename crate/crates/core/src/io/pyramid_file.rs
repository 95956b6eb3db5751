use std::path::Path;

use super::{checked_product, push_f32s, push_u32, to_u32, write_atomic, ByteReader};
use crate::error::{Error, Result};
use crate::field::{FeatureLevel, FeaturePyramid};

pub const PYRAMID_MAGIC: &[u8; 4] = b"IDFP";
pub const PYRAMID_VERSION: u32 = 1;

/// Layout: magic, version, W, H, L, then per level `h, w, C` and
/// `h * w * C` f32 values (row-major, channel-last).
pub fn encode_pyramid(p: &FeaturePyramid) -> Result<Vec<u8>> {
    p.validate()?;
    let mut out = Vec::new();
    out.extend_from_slice(PYRAMID_MAGIC);
    push_u32(&mut out, PYRAMID_VERSION);
    push_u32(&mut out, p.image_width);
    push_u32(&mut out, p.image_height);
    push_u32(&mut out, to_u32(p.levels.len(), "level count")?);
    for level in &p.levels {
        push_u32(&mut out, to_u32(level.height, "level height")?);
        push_u32(&mut out, to_u32(level.width, "level width")?);
        push_u32(&mut out, to_u32(level.channels, "level channels")?);
        push_f32s(&mut out, &level.data);
    }
    Ok(out)
}

pub fn decode_pyramid(bytes: &[u8]) -> Result<FeaturePyramid> {
    let mut r = ByteReader::new(bytes);
    let magic = r.take(4, "magic")?;
    if magic != PYRAMID_MAGIC {
        return Err(Error::parse(0, format!("bad magic {magic:?}, expected \"IDFP\"")));
    }
    let version = r.u32("version")?;
    if version != PYRAMID_VERSION {
        return Err(Error::parse(4, format!("unsupported pyramid version {version}")));
    }
    let width = r.u32("image width")?;
    let height = r.u32("image height")?;
    let num_levels = r.u32("level count")? as usize;
    if num_levels == 0 {
        return Err(Error::parse(16, "pyramid has no levels"));
    }
    // each level needs at least its 12-byte header
    let mut levels = Vec::with_capacity(num_levels.min(r.remaining() / 12));
    for k in 0..num_levels {
        let start = r.pos();
        let name = format!("level {}", k + 1);
        let h = r.u32(&format!("{name} header"))? as usize;
        let w = r.u32(&format!("{name} header"))? as usize;
        let c = r.u32(&format!("{name} header"))? as usize;
        let count = checked_product(&[h, w, c], start, &name)?;
        let data = r.f32s(count, &format!("{name} data ({h}x{w}x{c})"))?;
        let level = FeatureLevel::new(h, w, c, data).map_err(|e| Error::parse(start, format!("{name}: {e}")))?;
        levels.push(level);
    }
    r.finish("last level")?;
    FeaturePyramid::new(levels, width, height).map_err(|e| Error::parse(0, e.to_string()))
}

pub fn read_pyramid(path: impl AsRef<Path>) -> Result<FeaturePyramid> {
    decode_pyramid(&std::fs::read(path)?)
}

pub fn write_pyramid(p: &FeaturePyramid, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &encode_pyramid(p)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FeaturePyramid {
        let l1 = FeatureLevel::new(4, 6, 2, (0..48).map(|v| v as f32 * 0.25 - 3.0).collect()).unwrap();
        let l2 = FeatureLevel::new(2, 3, 3, (0..18).map(|v| (v as f32).sin()).collect()).unwrap();
        FeaturePyramid::new(vec![l1, l2], 12, 8).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = sample();
        let bytes = encode_pyramid(&p).unwrap();
        let back = decode_pyramid(&bytes).unwrap();
        assert_eq!(back, p);
        assert_eq!(encode_pyramid(&back).unwrap(), bytes);
        assert_eq!(bytes.len(), 20 + 12 + 48 * 4 + 12 + 18 * 4);
    }

    #[test]
    fn header_layout() {
        let bytes = encode_pyramid(&sample()).unwrap();
        assert_eq!(&bytes[..4], b"IDFP");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &12u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &2u32.to_le_bytes());
        assert_eq!(&bytes[20..24], &4u32.to_le_bytes());
    }

    #[test]
    fn truncation_names_the_level() {
        let bytes = encode_pyramid(&sample()).unwrap();
        let err = decode_pyramid(&bytes[..bytes.len() - 3]).unwrap_err().to_string();
        assert!(err.contains("level 2"), "{err}");
        let err = decode_pyramid(&bytes[..40]).unwrap_err().to_string();
        assert!(err.contains("level 1"), "{err}");
    }

    #[test]
    fn rejects_bad_headers() {
        let mut bytes = encode_pyramid(&sample()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_pyramid(&bytes), Err(Error::Parse { offset: 0, .. })));
        let mut bytes = encode_pyramid(&sample()).unwrap();
        bytes[4] = 2;
        assert!(matches!(decode_pyramid(&bytes), Err(Error::Parse { offset: 4, .. })));
        let mut bytes = encode_pyramid(&sample()).unwrap();
        bytes.push(0);
        assert!(decode_pyramid(&bytes).is_err());
        // level 2 larger than level 1
        let l1 = FeatureLevel::filled(2, 2, 1, 0.0).unwrap();
        let l2 = FeatureLevel::filled(3, 3, 1, 0.0).unwrap();
        let bad = FeaturePyramid {
            levels: vec![l1, l2],
            image_width: 4,
            image_height: 4,
        };
        let mut raw = Vec::new();
        raw.extend_from_slice(b"IDFP");
        for v in [1u32, 4, 4, 2] {
            push_u32(&mut raw, v);
        }
        for l in &bad.levels {
            for v in [l.height, l.width, l.channels] {
                push_u32(&mut raw, v as u32);
            }
            push_f32s(&mut raw, &l.data);
        }
        assert!(decode_pyramid(&raw).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.idfp");
        write_pyramid(&sample(), &path).unwrap();
        assert_eq!(read_pyramid(&path).unwrap(), sample());
    }
}
