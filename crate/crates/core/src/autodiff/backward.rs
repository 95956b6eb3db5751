use crate::error::{Error, Result};
use crate::field::{
    preactivation_from_features, query_pyramid_generic, DecoderParams, DepthField, FusionStage, Linear, QueryCoord,
};
use crate::scalar::{gelu, gelu_grad, output_activation, Real};

/// Gradient buffers shaped exactly like a [`DecoderParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradients(pub DecoderParams);

impl ParamGradients {
    pub fn zeros_like(params: &DecoderParams) -> Self {
        let mut g = params.clone();
        for t in g.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        Self(g)
    }

    pub fn tensors(&self) -> Vec<(String, &[f32])> {
        self.0.tensors()
    }

    pub fn add_assign(&mut self, other: &ParamGradients) {
        for (a, b) in self.0.tensors_mut().into_iter().zip(other.0.tensors()) {
            a.iter_mut().zip(b.1).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: f32) {
        for t in self.0.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn max_abs(&self) -> f32 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .fold(0.0f32, |m, v| m.max(v.abs()))
    }
}

struct StageTape {
    h_in: Vec<f32>,
    lin: Vec<f32>,
    gates: Vec<f32>,
    u: Vec<f32>,
    pre: Vec<f32>,
    act: Vec<f32>,
}

/// Forward activations of one sample, replayed backwards.
struct Tape {
    stages: Vec<StageTape>,
    h_last: Vec<f32>,
    a1: Vec<f32>,
    r1: Vec<f32>,
    a2: Vec<f32>,
    r2: Vec<f32>,
    z: f32,
    depth: f32,
}

fn record(params: &DecoderParams, feats: Vec<Vec<f32>>) -> Tape {
    let mut levels = feats.into_iter();
    let mut h = levels.next().expect("validated pyramid has a level");
    let mut stages = Vec::with_capacity(params.stages.len());
    for (stage, f_next) in params.stages.iter().zip(levels) {
        let lin = stage.proj.forward(&h);
        let gates = stage.gates();
        let u: Vec<f32> = f_next
            .iter()
            .zip(&lin)
            .zip(&gates)
            .map(|((&f, &l), &g)| f + l * g)
            .collect();
        let pre = stage.ffn_in.forward(&u);
        let act: Vec<f32> = pre.iter().map(|&a| gelu(a)).collect();
        let out = stage.ffn_out.forward(&act);
        stages.push(StageTape {
            h_in: std::mem::replace(&mut h, out),
            lin,
            gates,
            u,
            pre,
            act,
        });
    }
    let a1 = params.head[0].forward(&h);
    let r1: Vec<f32> = a1.iter().map(|&a| a.max(0.0)).collect();
    let a2 = params.head[1].forward(&r1);
    let r2: Vec<f32> = a2.iter().map(|&a| a.max(0.0)).collect();
    let z = params.head[2].forward(&r2)[0];
    Tape {
        stages,
        h_last: h,
        a1,
        r1,
        a2,
        r2,
        z,
        depth: output_activation(z),
    }
}

/// Accumulates `dW += dy x^T`, `db += dy` and returns `W^T dy`.
fn linear_backward(lin: &Linear, grad: &mut Linear, x: &[f32], dy: &[f32]) -> Vec<f32> {
    let mut dx = vec![0.0f32; lin.cols];
    for (r, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        grad.bias[r] += g;
        let row = r * lin.cols..(r + 1) * lin.cols;
        for ((gw, &xv), (d, &w)) in grad.weight[row.clone()]
            .iter_mut()
            .zip(x)
            .zip(dx.iter_mut().zip(&lin.weight[row]))
        {
            *gw += g * xv;
            *d += g * w;
        }
    }
    dx
}

fn stage_backward(stage: &FusionStage, grad: &mut FusionStage, tape: &StageTape, dh_out: &[f32]) -> Vec<f32> {
    let dact = linear_backward(&stage.ffn_out, &mut grad.ffn_out, &tape.act, dh_out);
    let dpre: Vec<f32> = dact
        .iter()
        .zip(&tape.pre)
        .map(|(&d, &a)| d * gelu_grad(a as f64) as f32)
        .collect();
    let du = linear_backward(&stage.ffn_in, &mut grad.ffn_in, &tape.u, &dpre);
    let mut dlin = vec![0.0f32; du.len()];
    for c in 0..du.len() {
        let g = tape.gates[c];
        grad.gate_raw[c] += du[c] * tape.lin[c] * g * (1.0 - g);
        dlin[c] = du[c] * g;
    }
    linear_backward(&stage.proj, &mut grad.proj, &tape.h_in, &dlin)
}

fn backward(params: &DecoderParams, tape: &Tape, d_depth: f32, grads: &mut DecoderParams) {
    let dz = d_depth * if tape.z > 0.0 { 1.0 } else { tape.z.exp() };
    let dr2 = linear_backward(&params.head[2], &mut grads.head[2], &tape.r2, &[dz]);
    let da2: Vec<f32> = dr2
        .iter()
        .zip(&tape.a2)
        .map(|(&d, &a)| if a > 0.0 { d } else { 0.0 })
        .collect();
    let dr1 = linear_backward(&params.head[1], &mut grads.head[1], &tape.r1, &da2);
    let da1: Vec<f32> = dr1
        .iter()
        .zip(&tape.a1)
        .map(|(&d, &a)| if a > 0.0 { d } else { 0.0 })
        .collect();
    let mut dh = linear_backward(&params.head[0], &mut grads.head[0], &tape.h_last, &da1);
    for k in (0..params.stages.len()).rev() {
        dh = stage_backward(&params.stages[k], &mut grads.stages[k], &tape.stages[k], &dh);
    }
}

fn check_batch(field: &DepthField, batch: &[(QueryCoord, f64)]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty supervision batch".into()));
    }
    for (q, t) in batch {
        q.check(field.image_width(), field.image_height())?;
        if !t.is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite target {t}")));
        }
    }
    Ok(())
}

fn features<T: Real>(field: &DepthField, q: QueryCoord) -> Vec<Vec<T>> {
    query_pyramid_generic(field.pyramid(), T::from_f64(q.x), T::from_f64(q.y))
}

/// Mean absolute error over the batch and its reverse-mode gradient with
/// respect to every decoder tensor. The L1 subgradient at zero residual is 0.
pub fn loss_gradients(field: &DepthField, batch: &[(QueryCoord, f64)]) -> Result<(f64, ParamGradients)> {
    check_batch(field, batch)?;
    let params = field.params();
    let mut grads = ParamGradients::zeros_like(params);
    let n = batch.len() as f64;
    let mut loss = 0.0f64;
    for &(q, target) in batch {
        let tape = record(params, features::<f32>(field, q));
        let residual = tape.depth as f64 - target;
        loss += residual.abs();
        let sign = if residual > 0.0 {
            1.0
        } else if residual < 0.0 {
            -1.0
        } else {
            0.0
        };
        if sign != 0.0 {
            backward(params, &tape, (sign / n) as f32, &mut grads.0);
        }
    }
    Ok((loss / n, grads))
}

/// Batch L1 loss of the 64-bit field with parameters `params`, given
/// per-sample features precomputed in 64-bit.
fn loss_f64(params: &DecoderParams, feats: &[Vec<Vec<f64>>], targets: &[f64]) -> f64 {
    let total: f64 = feats
        .iter()
        .zip(targets)
        .map(|(f, t)| (output_activation(preactivation_from_features(params, f.clone(), &mut |_| {})) - t).abs())
        .sum();
    total / targets.len() as f64
}

/// Central-difference gradients of the batch loss, 64-bit. `select(t, len)`
/// returns the entry indices of tensor `t` to probe; unprobed entries are
/// left at zero. Steps are taken on the stored `f32` values and the actual
/// (rounded) step is used as denominator.
pub fn fd_param_gradients(
    field: &DepthField,
    batch: &[(QueryCoord, f64)],
    h: f64,
    mut select: impl FnMut(usize, usize) -> Vec<usize>,
) -> Result<ParamGradients> {
    check_batch(field, batch)?;
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("finite-difference step {h}")));
    }
    let feats: Vec<Vec<Vec<f64>>> = batch.iter().map(|&(q, _)| features::<f64>(field, q)).collect();
    let targets: Vec<f64> = batch.iter().map(|&(_, t)| t).collect();
    let mut params = field.params().clone();
    let mut grads = ParamGradients::zeros_like(&params);
    let num_tensors = params.tensors().len();
    for t in 0..num_tensors {
        let len = params.tensors()[t].1.len();
        for i in select(t, len) {
            let orig = params.tensors()[t].1[i];
            let plus = (orig as f64 + h) as f32;
            let minus = (orig as f64 - h) as f32;
            params.tensors_mut()[t][i] = plus;
            let lp = loss_f64(&params, &feats, &targets);
            params.tensors_mut()[t][i] = minus;
            let lm = loss_f64(&params, &feats, &targets);
            params.tensors_mut()[t][i] = orig;
            grads.0.tensors_mut()[t][i] = ((lp - lm) / (plus as f64 - minus as f64)) as f32;
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{FeatureLevel, FeaturePyramid};

    fn pyramid() -> FeaturePyramid {
        let l1 = FeatureLevel::new(4, 4, 2, (0..32).map(|v| (v as f32 * 0.41).sin()).collect()).unwrap();
        let l2 = FeatureLevel::new(2, 2, 3, (0..12).map(|v| (v as f32 * 0.9).cos()).collect()).unwrap();
        FeaturePyramid::new(vec![l1, l2], 8, 8).unwrap()
    }

    #[test]
    fn empty_batch_is_an_error() {
        let field = DepthField::new(pyramid(), DecoderParams::zeros(&[2, 3])).unwrap();
        assert!(loss_gradients(&field, &[]).is_err());
    }

    #[test]
    fn perfect_predictions_have_zero_loss_and_gradient() {
        let field = DepthField::new(pyramid(), DecoderParams::zeros(&[2, 3])).unwrap();
        let batch = vec![(QueryCoord::new(1.0, 2.0), 1.0), (QueryCoord::new(5.5, 7.0), 1.0)];
        let (loss, grads) = loss_gradients(&field, &batch).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grads.max_abs(), 0.0);
    }

    #[test]
    fn zero_head_single_point_chain_rule() {
        // z = 0, d = elu(0) + 1 = 1, elu'(0) = 1: dL/d(head.2 bias) = sign(1 - gt)
        let field = DepthField::new(pyramid(), DecoderParams::zeros(&[2, 3])).unwrap();
        for &(gt, expected) in &[(0.4, 1.0f32), (1.7, -1.0)] {
            let (loss, grads) = loss_gradients(&field, &[(QueryCoord::new(3.0, 3.0), gt)]).unwrap();
            assert!((loss - (1.0 - gt).abs()).abs() < 1e-12);
            assert_eq!(grads.0.head[2].bias[0], expected);
            // hidden activations are all zero, so weights get no gradient
            assert!(grads.0.head[2].weight.iter().all(|&w| w == 0.0));
        }
    }
}
