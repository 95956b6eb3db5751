use std::path::Path;

use super::{checked_product, push_f32s, push_u32, to_u32, write_atomic, ByteReader};
use crate::error::{Error, Result};
use crate::field::{DecoderParams, FusionStage, Linear};

pub const PARAMS_MAGIC: &[u8; 4] = b"IDFW";
pub const PARAMS_VERSION: u32 = 1;

fn push_linear(out: &mut Vec<u8>, lin: &Linear) -> Result<()> {
    push_u32(out, to_u32(lin.rows, "rows")?);
    push_u32(out, to_u32(lin.cols, "cols")?);
    push_f32s(out, &lin.weight);
    push_u32(out, to_u32(lin.bias.len(), "bias length")?);
    push_f32s(out, &lin.bias);
    Ok(())
}

fn read_linear(r: &mut ByteReader, name: &str) -> Result<Linear> {
    let start = r.pos();
    let rows = r.u32(&format!("{name} rows"))? as usize;
    let cols = r.u32(&format!("{name} cols"))? as usize;
    let count = checked_product(&[rows, cols], start, name)?;
    let weight = r.f32s(count, &format!("{name} weights ({rows}x{cols})"))?;
    let bias_at = r.pos();
    let bias_len = r.u32(&format!("{name} bias length"))? as usize;
    if bias_len != rows {
        return Err(Error::parse(
            bias_at,
            format!("{name}: bias length {bias_len} != rows {rows}"),
        ));
    }
    let bias = r.f32s(bias_len, &format!("{name} bias"))?;
    Ok(Linear {
        rows,
        cols,
        weight,
        bias,
    })
}

/// Layout: magic, version, stage count `S`; per stage the `proj`, `ffn_in`
/// and `ffn_out` blocks; the three head blocks; then per stage a `u32`
/// length and the gate logits. A block is `rows, cols`, the row-major
/// matrix, `bias_len` and the bias.
pub fn encode_params(p: &DecoderParams) -> Result<Vec<u8>> {
    p.validate_for(&p.channel_dims())?;
    let mut out = Vec::new();
    out.extend_from_slice(PARAMS_MAGIC);
    push_u32(&mut out, PARAMS_VERSION);
    push_u32(&mut out, to_u32(p.stages.len(), "stage count")?);
    for s in &p.stages {
        push_linear(&mut out, &s.proj)?;
        push_linear(&mut out, &s.ffn_in)?;
        push_linear(&mut out, &s.ffn_out)?;
    }
    for lin in &p.head {
        push_linear(&mut out, lin)?;
    }
    for s in &p.stages {
        push_u32(&mut out, to_u32(s.gate_raw.len(), "gate length")?);
        push_f32s(&mut out, &s.gate_raw);
    }
    Ok(out)
}

pub fn decode_params(bytes: &[u8]) -> Result<DecoderParams> {
    let mut r = ByteReader::new(bytes);
    let magic = r.take(4, "magic")?;
    if magic != PARAMS_MAGIC {
        return Err(Error::parse(0, format!("bad magic {magic:?}, expected \"IDFW\"")));
    }
    let version = r.u32("version")?;
    if version != PARAMS_VERSION {
        return Err(Error::parse(4, format!("unsupported params version {version}")));
    }
    let num_stages = r.u32("stage count")? as usize;
    // every stage takes at least three 12-byte block headers
    let mut linears = Vec::with_capacity(num_stages.min(r.remaining() / 36));
    for k in 0..num_stages {
        let proj = read_linear(&mut r, &format!("stage {k} proj"))?;
        let ffn_in = read_linear(&mut r, &format!("stage {k} ffn_in"))?;
        let ffn_out = read_linear(&mut r, &format!("stage {k} ffn_out"))?;
        linears.push((proj, ffn_in, ffn_out));
    }
    let head = [
        read_linear(&mut r, "head 0")?,
        read_linear(&mut r, "head 1")?,
        read_linear(&mut r, "head 2")?,
    ];
    let mut stages = Vec::with_capacity(linears.len());
    for (k, (proj, ffn_in, ffn_out)) in linears.into_iter().enumerate() {
        let at = r.pos();
        let len = r.u32(&format!("stage {k} gate length"))? as usize;
        if len != proj.rows {
            return Err(Error::parse(
                at,
                format!("stage {k}: gate length {len} != {}", proj.rows),
            ));
        }
        let gate_raw = r.f32s(len, &format!("stage {k} gates"))?;
        stages.push(FusionStage {
            gate_raw,
            proj,
            ffn_in,
            ffn_out,
        });
    }
    r.finish("gate vectors")?;
    let p = DecoderParams { stages, head };
    p.validate_for(&p.channel_dims())
        .map_err(|e| Error::parse(0, e.to_string()))?;
    Ok(p)
}

pub fn read_params(path: impl AsRef<Path>) -> Result<DecoderParams> {
    decode_params(&std::fs::read(path)?)
}

pub fn write_params(p: &DecoderParams, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &encode_params(p)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> DecoderParams {
        let mut p = DecoderParams::zeros(&[3, 2, 4]);
        for (t, tensor) in p.tensors_mut().into_iter().enumerate() {
            for (i, v) in tensor.iter_mut().enumerate() {
                *v = ((t * 17 + i) as f32 * 0.37).cos();
            }
        }
        p
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = sample();
        let bytes = encode_params(&p).unwrap();
        let back = decode_params(&bytes).unwrap();
        assert_eq!(back, p);
        assert_eq!(encode_params(&back).unwrap(), bytes);
    }

    #[test]
    fn corrupted_inputs_fail() {
        let bytes = encode_params(&sample()).unwrap();
        assert!(decode_params(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[3] = b'X';
        assert!(matches!(decode_params(&bad), Err(Error::Parse { offset: 0, .. })));
        let mut bad = bytes.clone();
        // stage 0 proj rows: 2 -> 3 breaks the block layout
        bad[12] = 3;
        assert!(decode_params(&bad).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.idfw");
        write_params(&sample(), &path).unwrap();
        assert_eq!(read_params(&path).unwrap(), sample());
    }
}
