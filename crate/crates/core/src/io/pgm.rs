use std::path::Path;

use super::write_atomic;
use crate::error::{Error, Result};

/// Binary 8-bit PGM, `255` where the mask is set.
pub fn encode_pgm(width: usize, height: usize, mask: &[bool]) -> Result<Vec<u8>> {
    if width == 0 || height == 0 || mask.len() != width * height {
        return Err(Error::Shape(format!(
            "{} mask entries for {width}x{height}",
            mask.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(mask.iter().map(|&m| if m { 255u8 } else { 0 }));
    Ok(out)
}

/// Any nonzero sample is treated as set. Comment lines are not supported.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<bool>)> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0usize;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && pos - start < 32 {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse(start, "truncated PGM header"));
        }
        fields.push((start, &bytes[start..pos]));
    }
    if fields[0].1 != b"P5" {
        return Err(Error::parse(0, "expected binary PGM magic 'P5'"));
    }
    let num = |(at, raw): (usize, &[u8])| -> Result<usize> {
        std::str::from_utf8(raw)
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::parse(at, "bad PGM header number"))
    };
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval > 255 {
        return Err(Error::parse(fields[3].0, "only 8-bit PGM is supported"));
    }
    if pos >= bytes.len() {
        return Err(Error::parse(pos, "missing raster"));
    }
    pos += 1;
    let n = w
        .checked_mul(h)
        .ok_or_else(|| Error::parse(fields[1].0, "PGM size overflows"))?;
    if bytes.len() - pos != n {
        return Err(Error::parse(
            pos,
            format!("expected {n} raster bytes, found {}", bytes.len() - pos),
        ));
    }
    Ok((w, h, bytes[pos..].iter().map(|&b| b != 0).collect()))
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<bool>)> {
    decode_pgm(&std::fs::read(path)?)
}

pub fn write_pgm(width: usize, height: usize, mask: &[bool], path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &encode_pgm(width, height, mask)?)
}
