//! High-frequency evaluation masks from multi-scale Laplacian energy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::depth_map::DepthMap;
use crate::error::{Error, Result};
use crate::metrics::quantile;

pub const DEFAULT_SCALES: [f64; 4] = [0.0, 1.0, 2.0, 4.0];
pub const DEFAULT_TAU: f64 = 0.5;
pub const CLIP_QUANTILE: f64 = 0.98;

/// Per-pixel energy, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HfMask {
    pub width: usize,
    pub height: usize,
    pub mask: Vec<bool>,
    pub samples: usize,
    pub tau: f64,
    pub scales: Vec<f64>,
}

impl HfMask {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur with replicate borders. `sigma = 0` is the identity.
pub fn gaussian_blur(values: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return values.to_vec();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; values.len()];
    tmp.par_chunks_mut(width).enumerate().for_each(|(j, row)| {
        for (i, out) in row.iter_mut().enumerate() {
            *out = k
                .iter()
                .enumerate()
                .map(|(t, w)| w * values[j * width + clamp(i as isize + t as isize - r, width)])
                .sum();
        }
    });
    let mut out = vec![0.0; values.len()];
    out.par_chunks_mut(width).enumerate().for_each(|(j, row)| {
        for (i, o) in row.iter_mut().enumerate() {
            *o = k
                .iter()
                .enumerate()
                .map(|(t, w)| w * tmp[clamp(j as isize + t as isize - r, height) * width + i])
                .sum();
        }
    });
    out
}

/// `|[[0,1,0],[1,-4,1],[0,1,0]] * D|` with replicate padding.
pub fn laplacian_abs(values: &[f64], width: usize, height: usize) -> Vec<f64> {
    let at = |i: isize, j: isize| {
        let i = i.clamp(0, width as isize - 1) as usize;
        let j = j.clamp(0, height as isize - 1) as usize;
        values[j * width + i]
    };
    (0..width * height)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = ((idx % width) as isize, (idx / width) as isize);
            (at(i - 1, j) + at(i + 1, j) + at(i, j - 1) + at(i, j + 1) - 4.0 * at(i, j)).abs()
        })
        .collect()
}

/// Per-pixel maximum of the Laplacian magnitude over Gaussian-blurred copies.
pub fn multiscale_energy(d: &DepthMap, scales: &[f64]) -> Result<EnergyMap> {
    if scales.is_empty() {
        return Err(Error::InvalidArgument("no blur scales".into()));
    }
    if let Some(s) = scales.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
        return Err(Error::InvalidArgument(format!("blur scale {s}")));
    }
    if !d.all_valid() {
        return Err(Error::InvalidArgument(format!(
            "energy needs a dense depth map ({} of {} pixels invalid)",
            d.len() - d.num_valid(),
            d.len()
        )));
    }
    let (w, h) = (d.width(), d.height());
    let mut energy = vec![0.0f64; d.len()];
    for &s in scales {
        let lap = laplacian_abs(&gaussian_blur(d.values(), w, h, s), w, h);
        energy.iter_mut().zip(lap).for_each(|(e, l)| *e = e.max(l));
    }
    Ok(EnergyMap {
        width: w,
        height: h,
        values: energy,
    })
}

/// `E_hat = min(E / q98(E), 1)`, `E_tilde = E_hat^(1/tau)`, normalized to sum 1.
/// If the 98th percentile is zero (fewer than 2% of pixels carry energy) the
/// maximum is used as the normalizer instead.
pub fn normalize_sharpen(e: &EnergyMap, tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("temperature {tau}")));
    }
    if e.values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidArgument("energy must be finite and nonnegative".into()));
    }
    let max = e.values.iter().cloned().fold(0.0f64, f64::max);
    if max == 0.0 {
        return Err(Error::ZeroMass);
    }
    let mut q = quantile(&e.values, CLIP_QUANTILE)?;
    if q == 0.0 {
        q = max;
    }
    let sharp: Vec<f64> = e.values.iter().map(|&v| (v / q).min(1.0).powf(1.0 / tau)).collect();
    let total: f64 = sharp.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroMass);
    }
    Ok(sharp.into_iter().map(|v| v / total).collect())
}

/// Draws `n` distinct pixels with probability proportional to `p`
/// (sequential sampling without replacement, via exponential keys).
pub fn sample_mask(p: &[f64], width: usize, height: usize, n: usize, seed: u64) -> Result<Vec<bool>> {
    if p.len() != width * height {
        return Err(Error::Shape(format!("{} probabilities for {width}x{height}", p.len())));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("mask sample count must be >= 1".into()));
    }
    if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidArgument(
            "probabilities must be finite and nonnegative".into(),
        ));
    }
    let support = p.iter().filter(|&&v| v > 0.0).count();
    if n > support {
        return Err(Error::InvalidArgument(format!(
            "cannot draw {n} distinct pixels from {support} with nonzero probability"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keys: Vec<(f64, usize)> = p
        .iter()
        .enumerate()
        .map(|(i, &pi)| {
            let u = 1.0 - rng.random::<f64>();
            let key = if pi > 0.0 { u.ln() / pi } else { f64::NEG_INFINITY };
            (key, i)
        })
        .collect();
    keys.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut mask = vec![false; p.len()];
    keys.iter().take(n).for_each(|&(_, i)| mask[i] = true);
    Ok(mask)
}

pub fn build_hf_mask(d: &DepthMap, scales: &[f64], tau: f64, n: usize, seed: u64) -> Result<HfMask> {
    let e = multiscale_energy(d, scales)?;
    let p = normalize_sharpen(&e, tau)?;
    let mask = sample_mask(&p, e.width, e.height, n, seed)?;
    Ok(HfMask {
        width: e.width,
        height: e.height,
        mask,
        samples: n,
        tau,
        scales: scales.to_vec(),
    })
}
