//! Log-space normalization, scale-shift alignment, δ accuracy and the L1 loss.

use serde::{Deserialize, Serialize};

use crate::depth_map::DepthMap;
use crate::error::{Error, Result};

pub const NORMALIZE_LOW_QUANTILE: f64 = 0.02;
pub const NORMALIZE_HIGH_QUANTILE: f64 = 0.98;

/// Linearly interpolated order statistic at fraction `q` in `[0, 1]`
/// (position `q (n - 1)` in the sorted values).
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("quantile of an empty set".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidArgument(format!("quantile fraction {q}")));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("quantile of NaN values".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

/// Range of `ln(d)` used to map depth into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalization {
    pub log_min: f64,
    pub log_max: f64,
}

impl LogNormalization {
    /// Fits the range to the 2% / 98% quantiles of `ln(d)` over valid pixels.
    pub fn fit(d: &DepthMap) -> Result<Self> {
        let logs: Vec<f64> = d.valid_values().iter().map(|v| v.ln()).collect();
        if logs.len() < 2 {
            return Err(Error::Degenerate(format!("{} valid depth values", logs.len())));
        }
        let log_min = quantile(&logs, NORMALIZE_LOW_QUANTILE)?;
        let log_max = quantile(&logs, NORMALIZE_HIGH_QUANTILE)?;
        let s = Self { log_min, log_max };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.log_max > self.log_min && self.log_min.is_finite() && self.log_max.is_finite()) {
            return Err(Error::Degenerate(format!(
                "log-depth range [{}, {}] is empty",
                self.log_min, self.log_max
            )));
        }
        Ok(())
    }

    /// `clip((ln d - log_min) / (log_max - log_min), 0, 1)`.
    pub fn normalize(&self, depth: f64) -> f64 {
        ((depth.ln() - self.log_min) / (self.log_max - self.log_min)).clamp(0.0, 1.0)
    }

    /// Inverse of [`normalize`](Self::normalize) on `[0, 1]`.
    pub fn denormalize(&self, v: f64) -> f64 {
        (self.log_min + v * (self.log_max - self.log_min)).exp()
    }
}

/// Log-normalized depth. Values lie in `[0, 1]`; invalid pixels carry 0.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedDepth {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
    pub range: LogNormalization,
}

pub fn log_normalize(d: &DepthMap) -> Result<NormalizedDepth> {
    let range = LogNormalization::fit(d)?;
    let values = d
        .values()
        .iter()
        .zip(d.valid())
        .map(|(&v, &ok)| if ok { range.normalize(v) } else { 0.0 })
        .collect();
    Ok(NormalizedDepth {
        width: d.width(),
        height: d.height(),
        values,
        valid: d.valid().to_vec(),
        range,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignSpace {
    /// Least squares on depth values.
    Depth,
    /// Least squares on inverse depth; the result is inverted back.
    Disparity,
    None,
}

impl AlignSpace {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "depth" => Ok(AlignSpace::Depth),
            "disparity" => Ok(AlignSpace::Disparity),
            "none" => Ok(AlignSpace::None),
            other => Err(Error::InvalidArgument(format!("unknown alignment '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AlignSpace::Depth => "depth",
            AlignSpace::Disparity => "disparity",
            AlignSpace::None => "none",
        }
    }
}

fn overlap(pred: &DepthMap, gt: &DepthMap, mask: Option<&[bool]>) -> Result<Vec<usize>> {
    pred.check_same_shape(gt)?;
    if let Some(m) = mask {
        if m.len() != gt.len() {
            return Err(Error::Shape(format!(
                "mask has {} entries for {} pixels",
                m.len(),
                gt.len()
            )));
        }
    }
    Ok((0..gt.len())
        .filter(|&i| pred.valid()[i] && gt.valid()[i] && mask.is_none_or(|m| m[i]))
        .collect())
}

/// Closed-form `(a, b)` minimizing `sum (a x + b - y)^2`.
pub fn fit_scale_shift(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} vs {} values", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::Degenerate(format!("{} pixels to align", x.len())));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let scale = x.iter().map(|v| v.abs()).fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);
    if !(sxx > n * (scale * 1e-12).powi(2)) {
        return Err(Error::Degenerate(
            "prediction is constant; alignment is singular".into(),
        ));
    }
    let a = sxy / sxx;
    Ok((a, my - a * mx))
}

/// Applies `a * pred + b`; pixels that leave `(0, inf)` become invalid.
fn apply_affine(pred: &DepthMap, f: impl Fn(f64) -> f64) -> Result<DepthMap> {
    let mut valid = pred.valid().to_vec();
    let values = pred
        .values()
        .iter()
        .zip(valid.iter_mut())
        .map(|(&v, ok)| {
            if !*ok {
                return 0.0;
            }
            let out = f(v);
            if !(out > 0.0 && out.is_finite()) {
                *ok = false;
            }
            out
        })
        .collect();
    DepthMap::with_mask(pred.width(), pred.height(), values, valid)
}

/// Aligned prediction and the fitted `(scale, shift)` in the chosen space.
pub fn align(pred: &DepthMap, gt: &DepthMap, space: AlignSpace, mask: Option<&[bool]>) -> Result<(DepthMap, f64, f64)> {
    let idx = overlap(pred, gt, mask)?;
    match space {
        AlignSpace::None => Ok((pred.clone(), 1.0, 0.0)),
        AlignSpace::Depth => {
            let x: Vec<f64> = idx.iter().map(|&i| pred.values()[i]).collect();
            let y: Vec<f64> = idx.iter().map(|&i| gt.values()[i]).collect();
            let (a, b) = fit_scale_shift(&x, &y)?;
            Ok((apply_affine(pred, |v| a * v + b)?, a, b))
        }
        AlignSpace::Disparity => {
            let x: Vec<f64> = idx.iter().map(|&i| 1.0 / pred.values()[i]).collect();
            let y: Vec<f64> = idx.iter().map(|&i| 1.0 / gt.values()[i]).collect();
            let (a, b) = fit_scale_shift(&x, &y)?;
            Ok((apply_affine(pred, |v| 1.0 / (a / v + b))?, a, b))
        }
    }
}

/// Depth-space least-squares alignment of `pred` onto `gt`.
pub fn align_scale_shift(pred: &DepthMap, gt: &DepthMap) -> Result<DepthMap> {
    align(pred, gt, AlignSpace::Depth, None).map(|r| r.0)
}

/// Percentage of ground-truth-valid (and masked-in) pixels whose ratio
/// `max(d / d*, d* / d)` is below `t`. Invalid predictions count as failures.
pub fn delta_accuracy(pred: &DepthMap, gt: &DepthMap, t: f64, mask: Option<&[bool]>) -> Result<f64> {
    Ok(delta_counts(pred, gt, t, mask)?.percent())
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct DeltaCount {
    hits: usize,
    total: usize,
}

impl DeltaCount {
    fn percent(&self) -> f64 {
        100.0 * self.hits as f64 / self.total as f64
    }
}

fn delta_counts(pred: &DepthMap, gt: &DepthMap, t: f64, mask: Option<&[bool]>) -> Result<DeltaCount> {
    if !(t > 1.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!("δ threshold {t} must exceed 1")));
    }
    pred.check_same_shape(gt)?;
    if let Some(m) = mask {
        if m.len() != gt.len() {
            return Err(Error::Shape(format!(
                "mask has {} entries for {} pixels",
                m.len(),
                gt.len()
            )));
        }
    }
    let mut hits = 0;
    let mut total = 0;
    for i in 0..gt.len() {
        if !gt.valid()[i] || mask.is_some_and(|m| !m[i]) {
            continue;
        }
        total += 1;
        if pred.valid()[i] {
            let (d, g) = (pred.values()[i], gt.values()[i]);
            if (d / g).max(g / d) < t {
                hits += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::Degenerate("no valid pixels to score".into()));
    }
    Ok(DeltaCount { hits, total })
}

/// `(1/N) sum |pred - target|`.
pub fn l1_loss(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::InvalidArgument("empty loss input".into()));
    }
    Ok(preds.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum::<f64>() / preds.len() as f64)
}

/// A δ threshold as written on the command line, e.g. `1.25^0.5`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub label: String,
    pub value: f64,
}

impl Threshold {
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad threshold '{s}'"));
        let s = s.trim();
        let value = match s.split_once('^') {
            Some((base, exp)) => {
                let base: f64 = base.trim().parse().map_err(|_| bad())?;
                let exp: f64 = exp.trim().parse().map_err(|_| bad())?;
                base.powf(exp)
            }
            None => s.parse().map_err(|_| bad())?,
        };
        if !(value > 1.0 && value.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "threshold '{s}' = {value} must exceed 1"
            )));
        }
        Ok(Self {
            label: s.to_string(),
            value,
        })
    }

    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        s.split(',').map(Self::parse).collect()
    }
}

pub fn default_thresholds() -> Vec<Threshold> {
    Threshold::parse_list("1.25^0.5,1.25,1.25^2").expect("valid literals")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaScore {
    pub threshold: String,
    pub value: f64,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub align: AlignSpace,
    pub scale: f64,
    pub shift: f64,
    pub pixels: usize,
    pub deltas: Vec<DeltaScore>,
    pub masked_pixels: Option<usize>,
    pub masked_deltas: Option<Vec<DeltaScore>>,
}

impl EvalReport {
    /// Flat `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "align={}\nscale={}\nshift={}\npixels={}\n",
            self.align.name(),
            self.scale,
            self.shift,
            self.pixels
        );
        for d in &self.deltas {
            s += &format!("delta[{}]={:.4}\n", d.threshold, d.percent);
        }
        if let (Some(n), Some(ds)) = (self.masked_pixels, &self.masked_deltas) {
            s += &format!("masked_pixels={n}\n");
            for d in ds {
                s += &format!("masked_delta[{}]={:.4}\n", d.threshold, d.percent);
            }
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Aligns (over all valid pixels) and scores, optionally also inside a mask.
pub fn evaluate(
    pred: &DepthMap,
    gt: &DepthMap,
    mask: Option<&[bool]>,
    space: AlignSpace,
    thresholds: &[Threshold],
) -> Result<EvalReport> {
    if thresholds.is_empty() {
        return Err(Error::InvalidArgument("no δ thresholds".into()));
    }
    let (aligned, scale, shift) = align(pred, gt, space, None)?;
    let score = |m: Option<&[bool]>| -> Result<(usize, Vec<DeltaScore>)> {
        let mut total = 0;
        let mut out = Vec::with_capacity(thresholds.len());
        for t in thresholds {
            let c = delta_counts(&aligned, gt, t.value, m)?;
            total = c.total;
            out.push(DeltaScore {
                threshold: t.label.clone(),
                value: t.value,
                percent: c.percent(),
            });
        }
        Ok((total, out))
    };
    let (pixels, deltas) = score(None)?;
    let (masked_pixels, masked_deltas) = match mask {
        Some(m) => {
            let (n, d) = score(Some(m))?;
            (Some(n), Some(d))
        }
        None => (None, None),
    };
    Ok(EvalReport {
        align: space,
        scale,
        shift,
        pixels,
        deltas,
        masked_pixels,
        masked_deltas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(v: &[f64]) -> DepthMap {
        DepthMap::new(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn quantile_interpolates() {
        let v = [4.0, 1.0, 3.0, 2.0, 5.0];
        assert_eq!(quantile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(quantile(&v, 1.0).unwrap(), 5.0);
        assert_eq!(quantile(&v, 0.5).unwrap(), 3.0);
        assert!((quantile(&v, 0.1).unwrap() - 1.4).abs() < 1e-15);
        assert!(quantile(&[], 0.5).is_err());
    }

    #[test]
    fn log_normalize_endpoints_and_median() {
        // 101 values with ln d evenly spaced over [0, 1]
        let v: Vec<f64> = (0..=100).map(|i| (i as f64 / 100.0).exp()).collect();
        let n = log_normalize(&map(&v)).unwrap();
        assert!((n.range.log_min - 0.02).abs() < 1e-12);
        assert!((n.range.log_max - 0.98).abs() < 1e-12);
        assert!((n.values[50] - 0.5).abs() < 1e-12);
        assert_eq!(n.values[2], 0.0);
        assert!((n.values[98] - 1.0).abs() < 1e-12);
        assert_eq!(n.values[0], 0.0);
        assert_eq!(n.values[100], 1.0);
        assert!((n.range.denormalize(n.values[50]) - v[50]).abs() < 1e-12);
    }

    #[test]
    fn log_normalize_rejects_constant() {
        assert!(matches!(log_normalize(&map(&[2.0; 5])), Err(Error::Degenerate(_))));
    }

    #[test]
    fn alignment_examples() {
        let gt = map(&[1.0, 2.0, 3.5, 0.7]);
        let same = align_scale_shift(&gt, &gt).unwrap();
        for (a, b) in same.values().iter().zip(gt.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        let pred = map(&gt.values().iter().map(|v| 2.0 * v + 3.0).collect::<Vec<_>>());
        let (aligned, a, b) = align(&pred, &gt, AlignSpace::Depth, None).unwrap();
        assert!((a - 0.5).abs() < 1e-12 && (b + 1.5).abs() < 1e-12);
        for (x, y) in aligned.values().iter().zip(gt.values()) {
            assert!((x - y).abs() < 1e-10);
        }
        assert!(matches!(
            align_scale_shift(&map(&[2.0; 4]), &gt),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn disparity_alignment_recovers_affine_disparity() {
        let gt = map(&[1.0, 2.0, 4.0, 5.0]);
        let pred = map(&gt.values().iter().map(|d| 1.0 / (3.0 / d + 0.5)).collect::<Vec<_>>());
        let (aligned, _, _) = align(&pred, &gt, AlignSpace::Disparity, None).unwrap();
        for (x, y) in aligned.values().iter().zip(gt.values()) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn delta_examples() {
        let gt = map(&[1.0, 2.0]);
        assert_eq!(delta_accuracy(&map(&[1.0, 1.0]), &gt, 1.25, None).unwrap(), 50.0);
        assert_eq!(delta_accuracy(&gt, &gt, 1.25f64.powf(0.5), None).unwrap(), 100.0);
        let scaled = map(&[1.005, 2.01]);
        assert_eq!(delta_accuracy(&scaled, &gt, 1.01, None).unwrap(), 100.0);
        assert_eq!(delta_accuracy(&scaled, &gt, 1.001, None).unwrap(), 0.0);
        assert!(delta_accuracy(&gt, &gt, 1.0, None).is_err());
    }

    #[test]
    fn invalid_predictions_fail() {
        let gt = map(&[1.0, 1.0]);
        let pred = DepthMap::with_mask(2, 1, vec![1.0, 0.0], vec![true, false]).unwrap();
        assert_eq!(delta_accuracy(&pred, &gt, 1.25, None).unwrap(), 50.0);
        let all_bad = DepthMap::with_mask(2, 1, vec![0.0; 2], vec![false; 2]).unwrap();
        assert!(delta_accuracy(&gt, &all_bad, 1.25, None).is_err());
    }

    #[test]
    fn l1_examples() {
        assert_eq!(l1_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(l1_loss(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!(l1_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn threshold_parsing() {
        let t = Threshold::parse_list("1.25^0.5,1.25,1.25^2").unwrap();
        assert!((t[0].value - 1.25f64.sqrt()).abs() < 1e-15);
        assert_eq!(t[2].value, 1.5625);
        assert!(Threshold::parse("0.9").is_err());
        assert!(Threshold::parse("abc").is_err());
    }

    #[test]
    fn report_text_and_json() {
        let gt = map(&[1.0, 2.0, 3.0]);
        let r = evaluate(
            &gt,
            &gt,
            Some(&[true, false, true]),
            AlignSpace::None,
            &default_thresholds(),
        )
        .unwrap();
        assert_eq!(r.masked_pixels, Some(2));
        assert!(r.to_text().contains("delta[1.25]=100.0000"));
        let back: EvalReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..40).prop_flat_map(|n| {
            (
                prop::collection::vec(0.1f64..10.0, n),
                prop::collection::vec(0.1f64..10.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn delta_monotone_and_symmetric((p, g) in pair(), t1 in 1.0001f64..2.0, dt in 0.0f64..1.0) {
            let (p, g) = (map(&p), map(&g));
            let a = delta_accuracy(&p, &g, t1, None).unwrap();
            let b = delta_accuracy(&p, &g, t1 + dt, None).unwrap();
            prop_assert!(a <= b);
            prop_assert_eq!(a, delta_accuracy(&g, &p, t1, None).unwrap());
            let full = vec![true; g.len()];
            prop_assert_eq!(a, delta_accuracy(&p, &g, t1, Some(&full)).unwrap());
        }

        #[test]
        fn alignment_absorbs_affine((p, g) in pair(), a in 0.1f64..5.0, b in 0.0f64..3.0) {
            let (pm, gm) = (map(&p), map(&g));
            prop_assume!(fit_scale_shift(&p, &g).is_ok());
            let moved = map(&p.iter().map(|v| a * v + b).collect::<Vec<_>>());
            let r1 = align_scale_shift(&pm, &gm).unwrap();
            let r2 = align_scale_shift(&moved, &gm).unwrap();
            for (x, y) in r1.values().iter().zip(r2.values()) {
                prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
            }
            prop_assert_eq!(r1.valid(), r2.valid());
        }

        #[test]
        fn log_normalize_scale_invariant(v in prop::collection::vec(0.1f64..10.0, 3..50), s in 0.01f64..100.0) {
            prop_assume!(log_normalize(&map(&v)).is_ok());
            let a = log_normalize(&map(&v)).unwrap();
            let b = log_normalize(&map(&v.iter().map(|x| x * s).collect::<Vec<_>>())).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
