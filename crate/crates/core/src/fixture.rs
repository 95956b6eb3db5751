//! Synthetic scenes with analytically known depth.
//!
//! A fixture pyramid stores, on its shallowest level, the pre-activation of
//! the analytic depth (`z` with `elu(z) + 1 = d`) at every grid point. The
//! routed decoder passes channel 0 through open gates, identity-configured
//! FFNs (`gelu(a) - gelu(-a) = a`) and an identity head
//! (`relu(a) - relu(-a) = a`), so the field equals the output activation of
//! the bilinearly interpolated stored values.
//!
//! Level sizes are `4W x 4H`, `2W x 2H` and `W x H` for a `W x H` image. On
//! the shallow level, pixel centers of the nominal image fall exactly on grid
//! points, so `decode_grid(W, H)` reproduces the analytic depth there.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::depth_map::DepthMap;
use crate::error::{Error, Result};
use crate::field::{DecoderParams, DepthField, FeatureLevel, FeaturePyramid, HEAD_HIDDEN};
use crate::geometry::CameraIntrinsics;
use crate::scalar::inverse_output_activation;

pub const FIXTURE_CHANNELS: usize = 4;
pub const FIXTURE_LEVEL_SCALES: [usize; 3] = [4, 2, 1];

const OPEN_GATE_RAW: f32 = 20.0;
const NOISE_AMPLITUDE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FixtureKind {
    /// Fronto-parallel plane at the given depth.
    Constant { depth: f64 },
    /// `d = base + slope * x` (slope per image pixel).
    Ramp { base: f64, slope: f64 },
    /// Plane through `(0, 0, 2)` tilted about the camera y axis.
    Slanted { angle_deg: f64 },
    /// Near fronto-parallel plane on the left half, far 45-degree plane on the right.
    TwoPlane,
    /// Vertical depth discontinuity at `x = W / 2`.
    StepEdge,
}

impl FixtureKind {
    pub const SLANTED_BASE_DEPTH: f64 = 2.0;
    pub const TWO_PLANE_NEAR: f64 = 1.5;
    pub const TWO_PLANE_FAR: f64 = 3.0;
    pub const STEP_LOW: f64 = 1.5;
    pub const STEP_HIGH: f64 = 3.0;

    /// Parses `constant[:d]`, `ramp`, `slanted[:deg]`, `two-plane`, `step-edge`.
    pub fn parse(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let num = |default: f64| -> Result<f64> {
            arg.map_or(Ok(default), |a| {
                a.parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("bad fixture argument '{a}'")))
            })
        };
        match name {
            "constant" => Ok(FixtureKind::Constant { depth: num(0.5)? }),
            "ramp" => Ok(FixtureKind::Ramp {
                base: 1.5,
                slope: num(0.0)?,
            }),
            "slanted" => Ok(FixtureKind::Slanted { angle_deg: num(45.0)? }),
            "two-plane" => Ok(FixtureKind::TwoPlane),
            "step-edge" | "step" => Ok(FixtureKind::StepEdge),
            other => Err(Error::InvalidArgument(format!("unknown fixture kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub kind: FixtureKind,
    pub pyramid: FeaturePyramid,
    pub params: DecoderParams,
    /// Analytic depth at the nominal pixel centers.
    pub gt: DepthMap,
    pub intrinsics: CameraIntrinsics,
}

/// Intrinsics shared by all fixtures: `fx = fy = W`, principal point at the
/// image center.
pub fn fixture_intrinsics(width: usize, height: usize) -> CameraIntrinsics {
    CameraIntrinsics {
        fx: width as f64,
        fy: width as f64,
        cx: width as f64 / 2.0,
        cy: height as f64 / 2.0,
    }
}

fn analytic_depth(kind: FixtureKind, k: &CameraIntrinsics, width: f64, x: f64, _y: f64) -> f64 {
    let u = (x - k.cx) / k.fx;
    match kind {
        FixtureKind::Constant { depth } => depth,
        FixtureKind::Ramp { base, slope } => {
            let slope = if slope == 0.0 { 1.0 / width } else { slope };
            base + slope * x
        }
        FixtureKind::Slanted { angle_deg } => {
            FixtureKind::SLANTED_BASE_DEPTH / (1.0 - angle_deg.to_radians().tan() * u)
        }
        FixtureKind::TwoPlane => {
            if x < width / 2.0 {
                FixtureKind::TWO_PLANE_NEAR
            } else {
                FixtureKind::TWO_PLANE_FAR / (1.0 - u)
            }
        }
        FixtureKind::StepEdge => {
            if x < width / 2.0 {
                FixtureKind::STEP_LOW
            } else {
                FixtureKind::STEP_HIGH
            }
        }
    }
}

impl Fixture {
    pub fn width(&self) -> usize {
        self.pyramid.image_width as usize
    }

    pub fn height(&self) -> usize {
        self.pyramid.image_height as usize
    }

    pub fn field(&self) -> Result<DepthField> {
        DepthField::new(self.pyramid.clone(), self.params.clone())
    }

    /// Analytic depth at an image coordinate.
    pub fn depth_at(&self, x: f64, y: f64) -> f64 {
        analytic_depth(self.kind, &self.intrinsics, self.width() as f64, x, y)
    }

    /// Analytic depth at the pixel centers of a `w x h` grid over the image.
    pub fn render_gt(&self, w: usize, h: usize) -> Result<DepthMap> {
        let (sx, sy) = (self.width() as f64 / w as f64, self.height() as f64 / h as f64);
        DepthMap::from_fn(w, h, |i, j| self.depth_at((i as f64 + 0.5) * sx, (j as f64 + 0.5) * sy))
    }

    /// Camera-facing normal for planar fixtures.
    pub fn plane_normal(&self) -> Option<[f64; 3]> {
        match self.kind {
            FixtureKind::Constant { .. } => Some([0.0, 0.0, -1.0]),
            FixtureKind::Slanted { angle_deg } => {
                let t = angle_deg.to_radians();
                Some([t.sin(), 0.0, -t.cos()])
            }
            _ => None,
        }
    }
}

/// Decoder that routes channel 0 of the shallowest level straight to the
/// head pre-activation.
pub fn routed_params(channel_dims: &[usize]) -> DecoderParams {
    let mut p = DecoderParams::zeros(channel_dims);
    for stage in &mut p.stages {
        stage.gate_raw.iter_mut().for_each(|g| *g = OPEN_GATE_RAW);
        stage.proj.set(0, 0, 1.0);
        stage.ffn_in.set(0, 0, 1.0);
        stage.ffn_in.set(1, 0, -1.0);
        stage.ffn_out.set(0, 0, 1.0);
        stage.ffn_out.set(0, 1, -1.0);
    }
    let [h0, h1, h2] = &mut p.head;
    h0.set(0, 0, 1.0);
    h0.set(1, 0, -1.0);
    h1.set(0, 0, 1.0);
    h1.set(1, 1, 1.0);
    h2.set(0, 0, 1.0);
    h2.set(0, 1, -1.0);
    const { assert!(HEAD_HIDDEN >= 2) };
    p
}

pub fn make_fixture(kind: FixtureKind, width: usize, height: usize, seed: u64) -> Result<Fixture> {
    if width < 4 || height < 4 {
        return Err(Error::InvalidArgument(format!(
            "fixture dims {width}x{height} (need >= 4)"
        )));
    }
    if let FixtureKind::Slanted { angle_deg } = kind {
        // keeps 1 - tan(theta) u > 0 for |u| <= 1/2
        if !(0.0..63.0).contains(&angle_deg) {
            return Err(Error::InvalidArgument(format!(
                "slant angle {angle_deg} outside [0, 63)"
            )));
        }
    }
    if let FixtureKind::Constant { depth } = kind {
        if !(depth > 0.0 && depth.is_finite()) {
            return Err(Error::InvalidDepth(depth));
        }
    }
    let k = fixture_intrinsics(width, height);
    let (wf, hf) = (width as f64, height as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut levels = Vec::with_capacity(FIXTURE_LEVEL_SCALES.len());
    for (li, &scale) in FIXTURE_LEVEL_SCALES.iter().enumerate() {
        let (lw, lh) = (width * scale, height * scale);
        let mut level = FeatureLevel::filled(lh, lw, FIXTURE_CHANNELS, 0.0)?;
        for j in 0..lh {
            for i in 0..lw {
                let x = i as f64 * wf / lw as f64;
                let y = j as f64 * hf / lh as f64;
                let f = level.at_mut(i, j);
                if li == 0 {
                    let d = analytic_depth(kind, &k, wf, x, y);
                    if !(d > 0.0 && d.is_finite()) {
                        return Err(Error::InvalidDepth(d));
                    }
                    f[0] = inverse_output_activation(d) as f32;
                }
                f[1] = (x / wf) as f32;
                f[2] = (y / hf) as f32;
                f[3] = (NOISE_AMPLITUDE * (rng.random::<f64>() * 2.0 - 1.0)) as f32;
            }
        }
        levels.push(level);
    }
    let pyramid = FeaturePyramid::new(levels, width as u32, height as u32)?;
    let params = routed_params(&pyramid.channel_dims());
    let gt = DepthMap::from_fn(width, height, |i, j| {
        analytic_depth(kind, &k, wf, i as f64 + 0.5, j as f64 + 0.5)
    })?;
    Ok(Fixture {
        kind,
        pyramid,
        params,
        gt,
        intrinsics: k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::QueryCoord;

    #[test]
    fn constant_fixture_decodes_its_depth() {
        let fx = make_fixture(FixtureKind::Constant { depth: 0.5 }, 8, 6, 1).unwrap();
        let field = fx.field().unwrap();
        for &(x, y) in &[(0.0, 0.0), (3.7, 2.2), (8.0, 6.0), (5.01, 0.3)] {
            let d = field.decode_depth(QueryCoord::new(x, y)).unwrap();
            assert!((d as f64 - 0.5).abs() <= 1e-6, "{d}");
        }
    }

    #[test]
    fn routed_output_matches_analytic_gt() {
        for kind in [
            FixtureKind::Ramp { base: 1.5, slope: 0.0 },
            FixtureKind::Slanted { angle_deg: 60.0 },
            FixtureKind::TwoPlane,
            FixtureKind::StepEdge,
        ] {
            let fx = make_fixture(kind, 8, 8, 3).unwrap();
            let grid = fx.field().unwrap().decode_grid(8, 8).unwrap();
            for (a, b) in grid.values().iter().zip(fx.gt.values()) {
                assert!((a - b).abs() < 1e-5, "{kind:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn rejects_bad_fixtures() {
        assert!(make_fixture(FixtureKind::StepEdge, 3, 8, 0).is_err());
        assert!(make_fixture(FixtureKind::Slanted { angle_deg: 70.0 }, 8, 8, 0).is_err());
        assert!(FixtureKind::parse("spiral").is_err());
        assert_eq!(
            FixtureKind::parse("slanted:30").unwrap(),
            FixtureKind::Slanted { angle_deg: 30.0 }
        );
    }

    #[test]
    fn seed_only_changes_noise_channel() {
        let a = make_fixture(FixtureKind::TwoPlane, 6, 6, 1).unwrap();
        let b = make_fixture(FixtureKind::TwoPlane, 6, 6, 2).unwrap();
        assert_eq!(a.gt, b.gt);
        assert_ne!(a.pyramid, b.pyramid);
        assert_eq!(a.pyramid, make_fixture(FixtureKind::TwoPlane, 6, 6, 1).unwrap().pyramid);
    }
}
