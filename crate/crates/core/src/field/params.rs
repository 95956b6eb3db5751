use crate::error::{Error, Result};
use crate::scalar::{dot, gate, gelu, Real};

/// Hidden width of the depth head.
pub const HEAD_HIDDEN: usize = 256;
/// Expansion factor of the fusion feed-forward networks.
pub const FFN_EXPANSION: usize = 4;

/// Affine map `y = W x + b`, `W` stored row-major with shape `rows x cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Linear {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weight: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f32] {
        &self.weight[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.weight[r * self.cols + c] = v;
    }

    pub fn forward<T: Real>(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| T::from_f32(self.bias[r]) + dot(self.row(r), x))
            .collect()
    }

    fn validate(&self, name: &str, rows: usize, cols: usize) -> Result<()> {
        if self.rows != rows || self.cols != cols {
            return Err(Error::Shape(format!(
                "{name}: expected {rows}x{cols}, found {}x{}",
                self.rows, self.cols
            )));
        }
        if self.weight.len() != rows * cols || self.bias.len() != rows {
            return Err(Error::Shape(format!(
                "{name}: buffer lengths do not match {rows}x{cols}"
            )));
        }
        if self.weight.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams(format!("{name}: non-finite entry")));
        }
        Ok(())
    }
}

/// Gated fusion from level `k` (width `C_k`) into level `k + 1` (width `C_{k+1}`).
#[derive(Debug, Clone, PartialEq)]
pub struct FusionStage {
    /// Pre-sigmoid channel gates, length `C_{k+1}`.
    pub gate_raw: Vec<f32>,
    /// `C_{k+1} x C_k` projection.
    pub proj: Linear,
    /// `4 C_{k+1} x C_{k+1}` expansion.
    pub ffn_in: Linear,
    /// `C_{k+1} x 4 C_{k+1}` contraction.
    pub ffn_out: Linear,
}

impl FusionStage {
    pub fn zeros(c_in: usize, c_out: usize) -> Self {
        Self {
            gate_raw: vec![0.0; c_out],
            proj: Linear::zeros(c_out, c_in),
            ffn_in: Linear::zeros(FFN_EXPANSION * c_out, c_out),
            ffn_out: Linear::zeros(c_out, FFN_EXPANSION * c_out),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.proj.cols
    }

    pub fn out_dim(&self) -> usize {
        self.proj.rows
    }

    pub fn gates(&self) -> Vec<f32> {
        self.gate_raw.iter().map(|&r| gate(r)).collect()
    }

    fn validate(&self, k: usize, c_in: usize, c_out: usize) -> Result<()> {
        let hidden = FFN_EXPANSION * c_out;
        if self.gate_raw.len() != c_out {
            return Err(Error::Shape(format!(
                "stage {k} gate: expected {c_out} entries, found {}",
                self.gate_raw.len()
            )));
        }
        if self.gate_raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams(format!("stage {k} gate: non-finite entry")));
        }
        self.proj.validate(&format!("stage {k} proj"), c_out, c_in)?;
        self.ffn_in.validate(&format!("stage {k} ffn_in"), hidden, c_out)?;
        self.ffn_out.validate(&format!("stage {k} ffn_out"), c_out, hidden)
    }
}

/// Learnable decoder: `L - 1` fusion stages followed by a three-layer head.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    pub stages: Vec<FusionStage>,
    pub head: [Linear; 3],
}

impl DecoderParams {
    /// All-zero parameters for the given pyramid channel dims. The head
    /// then outputs `z = 0`, i.e. depth 1 everywhere.
    pub fn zeros(channel_dims: &[usize]) -> Self {
        let stages = channel_dims
            .windows(2)
            .map(|w| FusionStage::zeros(w[0], w[1]))
            .collect();
        let c_last = *channel_dims.last().expect("at least one level");
        Self {
            stages,
            head: [
                Linear::zeros(HEAD_HIDDEN, c_last),
                Linear::zeros(HEAD_HIDDEN, HEAD_HIDDEN),
                Linear::zeros(1, HEAD_HIDDEN),
            ],
        }
    }

    /// Channel dims implied by the parameter shapes.
    pub fn channel_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.stages.len() + 1);
        match self.stages.first() {
            Some(s) => dims.push(s.in_dim()),
            None => dims.push(self.head[0].cols),
        }
        dims.extend(self.stages.iter().map(|s| s.out_dim()));
        dims
    }

    pub fn validate_for(&self, channel_dims: &[usize]) -> Result<()> {
        if channel_dims.is_empty() {
            return Err(Error::Shape("no pyramid levels".into()));
        }
        if self.stages.len() + 1 != channel_dims.len() {
            return Err(Error::Shape(format!(
                "{} fusion stages for a {}-level pyramid",
                self.stages.len(),
                channel_dims.len()
            )));
        }
        for (k, (stage, w)) in self.stages.iter().zip(channel_dims.windows(2)).enumerate() {
            stage.validate(k, w[0], w[1])?;
        }
        let c_last = channel_dims[channel_dims.len() - 1];
        let hidden = self.head[0].rows;
        if hidden == 0 {
            return Err(Error::Shape("head hidden width is zero".into()));
        }
        self.head[0].validate("head.0", hidden, c_last)?;
        self.head[1].validate("head.1", hidden, hidden)?;
        self.head[2].validate("head.2", 1, hidden)
    }

    /// Named views of every tensor, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &[f32])> {
        let mut out: Vec<(String, &[f32])> = Vec::new();
        for (k, s) in self.stages.iter().enumerate() {
            out.push((format!("stage{k}.gate_raw"), &s.gate_raw));
            for (name, lin) in [("proj", &s.proj), ("ffn_in", &s.ffn_in), ("ffn_out", &s.ffn_out)] {
                out.push((format!("stage{k}.{name}.weight"), &lin.weight));
                out.push((format!("stage{k}.{name}.bias"), &lin.bias));
            }
        }
        for (i, lin) in self.head.iter().enumerate() {
            out.push((format!("head.{i}.weight"), &lin.weight));
            out.push((format!("head.{i}.bias"), &lin.bias));
        }
        out
    }

    /// Mutable views in the same order as [`DecoderParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f32>> {
        let mut out = Vec::new();
        for s in &mut self.stages {
            out.push(&mut s.gate_raw);
            for lin in [&mut s.proj, &mut s.ffn_in, &mut s.ffn_out] {
                out.push(&mut lin.weight);
                out.push(&mut lin.bias);
            }
        }
        for lin in &mut self.head {
            out.push(&mut lin.weight);
            out.push(&mut lin.bias);
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

/// `h_{k+1} = FFN_k(f_{k+1} + g_k * (P_k h_k + b_k))`.
pub fn fuse_step<T: Real>(h: &[T], f_next: &[T], stage: &FusionStage) -> Result<Vec<T>> {
    if h.len() != stage.in_dim() || f_next.len() != stage.out_dim() {
        return Err(Error::Shape(format!(
            "fusion stage {}->{} given inputs of length {} and {}",
            stage.in_dim(),
            stage.out_dim(),
            h.len(),
            f_next.len()
        )));
    }
    Ok(fuse_unchecked(h, f_next, stage))
}

pub(crate) fn fuse_unchecked<T: Real>(h: &[T], f_next: &[T], stage: &FusionStage) -> Vec<T> {
    let lin = stage.proj.forward(h);
    let u: Vec<T> = f_next
        .iter()
        .zip(&lin)
        .zip(&stage.gate_raw)
        .map(|((&f, &l), &raw)| f + l * T::gate(raw))
        .collect();
    let hidden: Vec<T> = stage.ffn_in.forward(&u).into_iter().map(gelu).collect();
    stage.ffn_out.forward(&hidden)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_ffn_gives_zero_output() {
        let mut stage = FusionStage::zeros(3, 2);
        stage.proj.weight.iter_mut().for_each(|w| *w = 0.7);
        stage.gate_raw = vec![1.0, -2.0];
        let out = fuse_step(&[1.0f64, 2.0, 3.0], &[0.5, -0.5], &stage).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn closed_gate_suppresses_previous_level() {
        // identity-like FFN on both channels via the gelu(a) - gelu(-a) pair
        let c = 2;
        let mut stage = FusionStage::zeros(2, c);
        stage.gate_raw = vec![-60.0; c];
        stage.proj.weight = vec![5.0; 4];
        for ch in 0..c {
            stage.ffn_in.set(2 * ch, ch, 1.0);
            stage.ffn_in.set(2 * ch + 1, ch, -1.0);
            stage.ffn_out.set(ch, 2 * ch, 1.0);
            stage.ffn_out.set(ch, 2 * ch + 1, -1.0);
        }
        let f_next = [0.3f64, -1.1];
        let out = fuse_step(&[10.0, -4.0], &f_next, &stage).unwrap();
        for (o, f) in out.iter().zip(f_next) {
            assert!((o - f).abs() < 1e-12, "{o} vs {f}");
        }
    }

    #[test]
    fn fuse_step_shape_error() {
        let stage = FusionStage::zeros(3, 2);
        assert!(matches!(
            fuse_step(&[1.0f64; 2], &[0.0; 2], &stage),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            fuse_step(&[1.0f64; 3], &[0.0; 3], &stage),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn params_shape_chain() {
        let p = DecoderParams::zeros(&[4, 6, 8]);
        assert_eq!(p.channel_dims(), vec![4, 6, 8]);
        p.validate_for(&[4, 6, 8]).unwrap();
        assert!(p.validate_for(&[4, 6]).is_err());
        assert!(p.validate_for(&[4, 5, 8]).is_err());
        assert_eq!(p.tensors().len(), 2 * 7 + 6);
        let single = DecoderParams::zeros(&[5]);
        assert_eq!(single.channel_dims(), vec![5]);
        single.validate_for(&[5]).unwrap();
    }

    #[test]
    fn gates_are_open_interval() {
        let mut stage = FusionStage::zeros(2, 3);
        stage.gate_raw = vec![-100.0, 0.0, 100.0];
        assert!(stage.gates().iter().all(|&g| g > 0.0 && g < 1.0));
    }
}
