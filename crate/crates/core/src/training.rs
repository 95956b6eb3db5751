//! Toy-scale decoder training on sparse continuous-coordinate supervision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{loss_gradients, ParamGradients};
use crate::depth_map::DepthMap;
use crate::error::{Error, Result};
use crate::field::{DecoderParams, DepthField, FeaturePyramid, QueryCoord};
use crate::fixture::{make_fixture, FixtureKind};
use crate::metrics::{log_normalize, LogNormalization};

/// Loss above this multiple of the initial loss aborts training.
pub const DIVERGENCE_FACTOR: f64 = 1e3;

/// Samples per gradient shard; shards are summed in a fixed order, so
/// results do not depend on the worker count.
const SHARD: usize = 32;

/// Coordinate/target pairs. Coordinates are in ground-truth pixel units,
/// targets are log-normalized depths in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisionSet {
    pub pairs: Vec<(QueryCoord, f64)>,
    pub gt_width: usize,
    pub gt_height: usize,
    pub range: LogNormalization,
    pub seed: u64,
}

impl SupervisionSet {
    /// Pairs with coordinates rescaled to a `width x height` field.
    pub fn field_batch(&self, width: u32, height: u32) -> Vec<(QueryCoord, f64)> {
        let sx = width as f64 / self.gt_width as f64;
        let sy = height as f64 / self.gt_height as f64;
        self.pairs
            .iter()
            .map(|&(q, t)| (QueryCoord::new(q.x * sx, q.y * sy), t))
            .collect()
    }
}

/// Bilinear lookup with pixel `(i, j)` sampled at its center `(i + 0.5, j + 0.5)`.
/// `None` if any contributing neighbour is invalid.
fn sample_pixel_centered(values: &[f64], valid: &[bool], w: usize, h: usize, x: f64, y: f64) -> Option<f64> {
    let px = (x - 0.5).clamp(0.0, (w - 1) as f64);
    let py = (y - 0.5).clamp(0.0, (h - 1) as f64);
    let i0 = (px.floor() as usize).min(w - 1);
    let j0 = (py.floor() as usize).min(h - 1);
    let i1 = (i0 + 1).min(w - 1);
    let j1 = (j0 + 1).min(h - 1);
    let (tx, ty) = (px - i0 as f64, py - j0 as f64);
    let mut acc = 0.0;
    for (i, j, wt) in [
        (i0, j0, (1.0 - tx) * (1.0 - ty)),
        (i1, j0, tx * (1.0 - ty)),
        (i0, j1, (1.0 - tx) * ty),
        (i1, j1, tx * ty),
    ] {
        if wt > 0.0 {
            let idx = j * w + i;
            if !valid[idx] {
                return None;
            }
            acc += wt * values[idx];
        }
    }
    Some(acc)
}

/// `n` coordinates uniform over `[0, W_gt) x [0, H_gt)` with bilinearly
/// interpolated log-normalized targets. Draws touching invalid pixels are
/// rejected and redrawn.
pub fn draw_supervision(gt: &DepthMap, n: usize, seed: u64) -> Result<SupervisionSet> {
    if n == 0 {
        return Err(Error::InvalidArgument("supervision count must be >= 1".into()));
    }
    if gt.num_valid() == 0 {
        return Err(Error::Degenerate("ground truth has no valid pixels".into()));
    }
    let norm = log_normalize(gt)?;
    let (w, h) = (gt.width(), gt.height());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(n);
    let max_attempts = n.saturating_mul(1000);
    let mut attempts = 0usize;
    while pairs.len() < n {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::Degenerate("too few valid ground-truth neighbourhoods".into()));
        }
        let x = rng.random::<f64>() * w as f64;
        let y = rng.random::<f64>() * h as f64;
        if let Some(t) = sample_pixel_centered(&norm.values, &norm.valid, w, h, x, y) {
            pairs.push((QueryCoord::new(x, y), t));
        }
    }
    Ok(SupervisionSet {
        pairs,
        gt_width: w,
        gt_height: h,
        range: norm.range,
        seed,
    })
}

/// Zero-mean normal weights with standard deviation `scale / sqrt(fan_in)`;
/// biases and gate logits start at 0.
pub fn init_params(channel_dims: &[usize], seed: u64, scale: f64) -> Result<DecoderParams> {
    if channel_dims.is_empty() || channel_dims.contains(&0) {
        return Err(Error::InvalidArgument(format!("channel dims {channel_dims:?}")));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("init scale {scale}")));
    }
    let mut p = DecoderParams::zeros(channel_dims);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fill = |lin: &mut crate::field::Linear| {
        let std = scale / (lin.cols as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("positive std");
        lin.weight.iter_mut().for_each(|w| *w = dist.sample(&mut rng) as f32);
    };
    for stage in &mut p.stages {
        fill(&mut stage.proj);
        fill(&mut stage.ffn_in);
        fill(&mut stage.ffn_out);
    }
    p.head.iter_mut().for_each(&mut fill);
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Cosine decay of the learning rate to zero over `steps`.
    pub cosine_decay: bool,
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch_size: 256,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            cosine_decay: true,
            seed: 0,
            init_scale: 1.0,
        }
    }
}

impl TrainConfig {
    /// Settings for the single-scene overfit run: the default schedule with
    /// a larger peak learning rate.
    pub fn toy() -> Self {
        Self {
            learning_rate: TOY_LEARNING_RATE,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.batch_size > 0
            && self.learning_rate >= 0.0
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.init_scale > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("training config {self:?}")))
        }
    }

    fn lr_at(&self, step: usize) -> f64 {
        if self.cosine_decay && self.steps > 0 {
            let progress = step as f64 / self.steps as f64;
            self.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
        } else {
            self.learning_rate
        }
    }
}

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl AdamW {
    pub fn new(params: &DecoderParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut DecoderParams, grads: &ParamGradients, lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        let grad_tensors = grads.tensors();
        for (k, p) in params.tensors_mut().into_iter().enumerate() {
            let g = grad_tensors[k].1;
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                let gi = g[i] as f64;
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
                let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + cfg.eps);
                let pi = p[i] as f64;
                p[i] = (pi - lr * (update + cfg.weight_decay * pi)) as f32;
            }
        }
    }
}

/// Mean L1 loss and its gradient, sharded over fixed-size chunks and summed in order.
pub fn batch_gradients(field: &DepthField, batch: &[(QueryCoord, f64)]) -> Result<(f64, ParamGradients)> {
    let shards = batch
        .par_chunks(SHARD)
        .map(|chunk| loss_gradients(field, chunk).map(|(l, g)| (l, g, chunk.len())))
        .collect::<Result<Vec<_>>>()?;
    let total = batch.len() as f64;
    let mut grads = ParamGradients::zeros_like(field.params());
    let mut loss = 0.0;
    for (l, mut g, len) in shards {
        let w = len as f64 / total;
        loss += l * w;
        g.scale(w as f32);
        grads.add_assign(&g);
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: DecoderParams,
    /// Minibatch loss before each update.
    pub losses: Vec<f64>,
}

/// Minibatch AdamW on the L1 loss. Deterministic for a given config.
pub fn train_toy(initial: &DepthField, supervision: &[(QueryCoord, f64)], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if supervision.is_empty() {
        return Err(Error::InvalidArgument("empty supervision".into()));
    }
    let mut field = initial.clone();
    let mut opt = AdamW::new(field.params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x05ee_d0fb_a7c4);
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut batch = Vec::with_capacity(cfg.batch_size);
    let mut limit = f64::INFINITY;
    for step in 0..cfg.steps {
        batch.clear();
        for _ in 0..cfg.batch_size {
            batch.push(supervision[rng.random_range(0..supervision.len())]);
        }
        let (loss, grads) = batch_gradients(&field, &batch)?;
        if step == 0 {
            limit = DIVERGENCE_FACTOR * loss;
        }
        if !loss.is_finite() || loss > limit {
            return Err(Error::Diverged { step, loss, limit });
        }
        losses.push(loss);
        let (pyramid, mut params) = field.into_parts();
        opt.step(&mut params, &grads, cfg.lr_at(step), cfg);
        field = DepthField::new(pyramid, params).map_err(|e| match e {
            Error::InvalidParams(_) => Error::Diverged {
                step,
                loss: f64::INFINITY,
                limit,
            },
            other => other,
        })?;
    }
    Ok(TrainOutcome {
        params: field.into_parts().1,
        losses,
    })
}

/// Loss and δ accuracy of a field on a supervision set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Mean L1 in normalized space.
    pub loss: f64,
    /// Percentage of pairs with `max(d/d*, d*/d) < threshold` after mapping
    /// prediction and target back to depth.
    pub delta: f64,
    pub threshold: f64,
}

pub fn evaluate_fit(
    field: &DepthField,
    supervision: &[(QueryCoord, f64)],
    range: &LogNormalization,
    threshold: f64,
) -> Result<FitReport> {
    if supervision.is_empty() {
        return Err(Error::InvalidArgument("empty supervision".into()));
    }
    let preds = supervision
        .par_iter()
        .map(|&(q, _)| field.decode_depth(q).map(|d| d as f64))
        .collect::<Result<Vec<f64>>>()?;
    let n = supervision.len() as f64;
    let mut loss = 0.0;
    let mut hits = 0usize;
    for (p, &(_, t)) in preds.iter().zip(supervision) {
        loss += (p - t).abs();
        let (dp, dt) = (range.denormalize(*p), range.denormalize(t));
        if (dp / dt).max(dt / dp) < threshold {
            hits += 1;
        }
    }
    Ok(FitReport {
        loss: loss / n,
        delta: 100.0 * hits as f64 / n,
        threshold,
    })
}

/// Nominal size of the toy scene.
pub const TOY_SIZE: usize = 8;
/// Ground truth is rendered this many times finer than the nominal grid.
pub const TOY_GT_UPSAMPLE: usize = 4;
pub const TOY_PAIRS: usize = 2000;
pub const TOY_LEARNING_RATE: f64 = 1e-2;

/// Fixture pyramid with freshly initialized weights, plus supervision drawn
/// from the analytic ground truth rendered at sub-pixel resolution.
pub fn toy_problem(kind: FixtureKind, seed: u64, init_scale: f64) -> Result<(DepthField, SupervisionSet)> {
    let fx = make_fixture(kind, TOY_SIZE, TOY_SIZE, seed)?;
    let gt = fx.render_gt(TOY_SIZE * TOY_GT_UPSAMPLE, TOY_SIZE * TOY_GT_UPSAMPLE)?;
    let sup = draw_supervision(&gt, TOY_PAIRS, seed.wrapping_add(1))?;
    let pyramid: FeaturePyramid = fx.pyramid;
    let params = init_params(&pyramid.channel_dims(), seed.wrapping_add(2), init_scale)?;
    Ok((DepthField::new(pyramid, params)?, sup))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture::make_fixture;

    #[test]
    fn constant_gt_gives_equal_targets() {
        // a constant map cannot be log-normalized, so use a two-valued map
        // and sample only inside one flat half
        let gt = DepthMap::from_fn(8, 4, |i, _| if i < 4 { 1.0 } else { 2.0 }).unwrap();
        let sup = draw_supervision(&gt, 200, 3).unwrap();
        for (q, t) in &sup.pairs {
            if q.x < 3.5 {
                assert_eq!(*t, 0.0);
            } else if q.x > 4.5 {
                assert_eq!(*t, 1.0);
            }
        }
    }

    #[test]
    fn supervision_is_seeded() {
        let gt = DepthMap::from_fn(6, 5, |i, j| 1.0 + (i * 5 + j) as f64 * 0.1).unwrap();
        let a = draw_supervision(&gt, 1, 11).unwrap();
        assert_eq!(a, draw_supervision(&gt, 1, 11).unwrap());
        assert_ne!(a.pairs, draw_supervision(&gt, 1, 12).unwrap().pairs);
        assert!(draw_supervision(&gt, 0, 0).is_err());
    }

    #[test]
    fn pixel_center_targets_match_lookup() {
        let gt = DepthMap::from_fn(6, 5, |i, j| 1.0 + (i * 5 + j) as f64 * 0.1).unwrap();
        let norm = log_normalize(&gt).unwrap();
        for j in 0..5 {
            for i in 0..6 {
                let t = sample_pixel_centered(&norm.values, &norm.valid, 6, 5, i as f64 + 0.5, j as f64 + 0.5);
                assert_eq!(t, Some(norm.values[j * 6 + i]));
            }
        }
    }

    #[test]
    fn invalid_neighbours_are_rejected() {
        let valid = vec![true, false, true, true];
        assert_eq!(
            sample_pixel_centered(&[0.1, 0.2, 0.3, 0.4], &valid, 2, 2, 1.0, 1.0),
            None
        );
        assert_eq!(
            sample_pixel_centered(&[0.1, 0.2, 0.3, 0.4], &valid, 2, 2, 0.5, 0.5),
            Some(0.1)
        );
    }

    #[test]
    fn init_is_seeded_and_finite() {
        let dims = [4, 4, 4];
        let a = init_params(&dims, 5, 1.0).unwrap();
        assert_eq!(a, init_params(&dims, 5, 1.0).unwrap());
        assert_ne!(a, init_params(&dims, 6, 1.0).unwrap());
        assert!(a.stages.iter().all(|s| s.gate_raw.iter().all(|&g| g == 0.0)));
        assert!(a.head.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn initial_output_spread() {
        let fx = make_fixture(FixtureKind::Slanted { angle_deg: 30.0 }, 8, 8, 0).unwrap();
        let params = init_params(&fx.pyramid.channel_dims(), 1, 1.0).unwrap();
        let field = DepthField::new(fx.pyramid, params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let outs: Vec<f64> = (0..1000)
            .map(|_| {
                let q = QueryCoord::new(rng.random::<f64>() * 8.0, rng.random::<f64>() * 8.0);
                field.decode_depth(q).unwrap() as f64
            })
            .collect();
        assert!(outs.iter().all(|v| v.is_finite()));
        let mean = outs.iter().sum::<f64>() / 1000.0;
        let std = (outs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 1000.0).sqrt();
        assert!(std > 0.0 && std < 10.0, "{std}");
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let (field, sup) = toy_problem(FixtureKind::Ramp { base: 1.5, slope: 0.0 }, 0, 1.0).unwrap();
        let batch = sup.field_batch(field.image_width(), field.image_height());
        let cfg = TrainConfig {
            steps: 5,
            batch_size: 16,
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let out = train_toy(&field, &batch, &cfg).unwrap();
        assert_eq!(&out.params, field.params());
    }

    #[test]
    fn perfect_decoder_has_zero_loss() {
        let fx = make_fixture(FixtureKind::Constant { depth: 0.5 }, 4, 4, 0).unwrap();
        let field = fx.field().unwrap();
        let d = field.decode_depth(QueryCoord::new(1.0, 1.0)).unwrap() as f64;
        let batch: Vec<(QueryCoord, f64)> = (0..20).map(|i| (QueryCoord::new(i as f64 * 0.2, 2.0), d)).collect();
        let cfg = TrainConfig {
            steps: 10,
            batch_size: 8,
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let out = train_toy(&field, &batch, &cfg).unwrap();
        assert!(out.losses.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn divergence_aborts() {
        let (field, sup) = toy_problem(FixtureKind::Ramp { base: 1.5, slope: 0.0 }, 0, 1.0).unwrap();
        let batch = sup.field_batch(field.image_width(), field.image_height());
        let cfg = TrainConfig {
            steps: 50,
            batch_size: 16,
            learning_rate: 1e6,
            cosine_decay: false,
            ..TrainConfig::default()
        };
        assert!(matches!(train_toy(&field, &batch, &cfg), Err(Error::Diverged { .. })));
    }

    #[test]
    fn sharded_gradients_match_single_pass() {
        let (field, sup) = toy_problem(FixtureKind::TwoPlane, 2, 1.0).unwrap();
        let batch = sup.field_batch(field.image_width(), field.image_height());
        let (l1, g1) = batch_gradients(&field, &batch[..100]).unwrap();
        let (l2, g2) = loss_gradients(&field, &batch[..100]).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for ((_, a), (_, b)) in g1.tensors().iter().zip(g2.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 1e-5 * (1.0 + y.abs()));
            }
        }
    }
}
