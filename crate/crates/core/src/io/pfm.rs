use std::path::Path;

use super::write_atomic;
use crate::depth_map::DepthMap;
use crate::error::{Error, Result};

/// Stored for invalid depth pixels.
pub const INVALID_SENTINEL: f32 = -1.0;

/// Raw PFM raster in top-down row order, `channels` interleaved floats per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PfmImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

fn is_space(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r')
}

/// Next whitespace-delimited ASCII token and the offset where it started.
fn token<'a>(bytes: &'a [u8], pos: &mut usize, what: &str) -> Result<(usize, &'a str)> {
    while *pos < bytes.len() && is_space(bytes[*pos]) {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !is_space(bytes[*pos]) && *pos - start < 64 {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::parse(start, format!("missing {what}")));
    }
    let s = std::str::from_utf8(&bytes[start..*pos]).map_err(|_| Error::parse(start, format!("non-ASCII {what}")))?;
    Ok((start, s))
}

pub fn decode_pfm_image(bytes: &[u8]) -> Result<PfmImage> {
    let mut pos = 0usize;
    let (_, magic) = token(bytes, &mut pos, "magic")?;
    let channels = match magic {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(Error::parse(0, format!("bad PFM magic '{other}'"))),
    };
    let dim = |pos: &mut usize, what: &str| -> Result<usize> {
        let (at, t) = token(bytes, pos, what)?;
        match t.parse::<usize>() {
            Ok(v) if v > 0 => Ok(v),
            _ => Err(Error::parse(at, format!("bad {what} '{t}'"))),
        }
    };
    let width = dim(&mut pos, "width")?;
    let height = dim(&mut pos, "height")?;
    let (at, t) = token(bytes, &mut pos, "scale")?;
    let scale: f32 = t.parse().map_err(|_| Error::parse(at, format!("bad scale '{t}'")))?;
    if !(scale.is_finite() && scale != 0.0) {
        return Err(Error::parse(at, format!("bad scale '{t}'")));
    }
    let little = scale < 0.0;
    if pos >= bytes.len() || !is_space(bytes[pos]) {
        return Err(Error::parse(pos, "missing whitespace after scale"));
    }
    pos += 1;
    let count = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| Error::parse(at, format!("raster {width}x{height} overflows")))?;
    let body = &bytes[pos..];
    if body.len() / 4 < count || body.len() != count * 4 {
        return Err(Error::parse(
            pos,
            format!(
                "expected {} raster bytes for {width}x{height}x{channels}, found {}",
                count.saturating_mul(4),
                body.len()
            ),
        ));
    }
    let mut data = vec![0.0f32; count];
    let row_len = width * channels;
    for (file_row, chunk) in body.chunks_exact(row_len * 4).enumerate() {
        let j = height - 1 - file_row;
        for (k, c) in chunk.chunks_exact(4).enumerate() {
            let b = [c[0], c[1], c[2], c[3]];
            data[j * row_len + k] = if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            };
        }
    }
    Ok(PfmImage {
        width,
        height,
        channels,
        data,
    })
}

/// Little-endian PFM (scale `-1`), rows written bottom-up.
pub fn encode_pfm_image(img: &PfmImage) -> Result<Vec<u8>> {
    let magic = match img.channels {
        1 => "Pf",
        3 => "PF",
        c => return Err(Error::InvalidArgument(format!("PFM supports 1 or 3 channels, not {c}"))),
    };
    if img.width == 0 || img.height == 0 || img.data.len() != img.width * img.height * img.channels {
        return Err(Error::Shape(format!(
            "{} floats for a {}x{}x{} PFM",
            img.data.len(),
            img.width,
            img.height,
            img.channels
        )));
    }
    let mut out = format!("{magic}\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    let row_len = img.width * img.channels;
    for j in (0..img.height).rev() {
        for v in &img.data[j * row_len..(j + 1) * row_len] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Grayscale depth. Values that are not positive and finite become invalid.
pub fn decode_pfm(bytes: &[u8]) -> Result<DepthMap> {
    let img = decode_pfm_image(bytes)?;
    if img.channels != 1 {
        return Err(Error::parse(0, "color PFM ('PF') is not a depth map"));
    }
    DepthMap::from_raw(img.width, img.height, img.data.iter().map(|&v| v as f64).collect())
}

/// Stores depth as f32; invalid pixels as [`INVALID_SENTINEL`].
pub fn encode_pfm(d: &DepthMap) -> Result<Vec<u8>> {
    let data = d
        .values()
        .iter()
        .zip(d.valid())
        .map(|(&v, &ok)| if ok { v as f32 } else { INVALID_SENTINEL })
        .collect();
    encode_pfm_image(&PfmImage {
        width: d.width(),
        height: d.height(),
        channels: 1,
        data,
    })
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<DepthMap> {
    decode_pfm(&std::fs::read(path)?)
}

pub fn write_pfm(d: &DepthMap, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &encode_pfm(d)?)
}

pub fn write_pfm_image(img: &PfmImage, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &encode_pfm_image(img)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> DepthMap {
        DepthMap::with_mask(
            3,
            2,
            vec![1.5, 2.25, 0.0, 4.0, 0.125, 8.0],
            vec![true, true, false, true, true, true],
        )
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let d = sample();
        let bytes = encode_pfm(&d).unwrap();
        assert!(bytes.starts_with(b"Pf\n3 2\n-1.0\n"));
        assert_eq!(decode_pfm(&bytes).unwrap(), d);
    }

    #[test]
    fn rows_are_bottom_up() {
        let bytes = encode_pfm(&sample()).unwrap();
        let body = &bytes[bytes.len() - 24..];
        // first stored row is image row 1
        assert_eq!(f32::from_le_bytes(body[0..4].try_into().unwrap()), 4.0);
        assert_eq!(f32::from_le_bytes(body[20..24].try_into().unwrap()), INVALID_SENTINEL);
    }

    #[test]
    fn big_endian_input() {
        let vals = [1.0f32, 2.0, 3.0, 4.0];
        let mut bytes = b"Pf\n2 2\n1.0\n".to_vec();
        for v in [3.0f32, 4.0, 1.0, 2.0] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        let d = decode_pfm(&bytes).unwrap();
        assert_eq!(d.values(), &vals.map(|v| v as f64));
    }

    #[test]
    fn color_header_rejected_for_depth() {
        let img = PfmImage {
            width: 1,
            height: 1,
            channels: 3,
            data: vec![0.0, 0.0, -1.0],
        };
        let bytes = encode_pfm_image(&img).unwrap();
        assert_eq!(decode_pfm_image(&bytes).unwrap(), img);
        assert!(decode_pfm(&bytes).is_err());
    }

    #[test]
    fn malformed_headers() {
        for bad in [
            &b"P5\n1 1\n-1\n\0\0\0\0"[..],
            b"Pf\n0 1\n-1\n",
            b"Pf\n1 1\nabc\n\0\0\0\0",
            b"Pf\n1 1\n-1\n\0\0",
            b"Pf\n2",
        ] {
            assert!(matches!(decode_pfm(bad), Err(Error::Parse { .. })), "{bad:?}");
        }
    }
}
