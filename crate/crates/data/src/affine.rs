//! Shared affine warps of mask sets.

use rand::Rng;
use serde::{Deserialize, Serialize};

use ribforge_core::Tensor;

use crate::error::{DataError, Result};
use crate::sample::MaskSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineParams {
    pub rotation_deg: f64,
    /// Translation as fractions of width and height.
    pub translate_frac: (f64, f64),
    pub scale: f64,
    pub hflip: bool,
}

impl AffineParams {
    pub const IDENTITY: AffineParams = AffineParams { rotation_deg: 0.0, translate_frac: (0.0, 0.0), scale: 1.0, hflip: false };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineRanges {
    pub rotation_deg: (f64, f64),
    pub translate_frac: (f64, f64),
    pub scale: (f64, f64),
    pub hflip_prob: f64,
}

impl Default for AffineRanges {
    fn default() -> Self {
        AffineRanges { rotation_deg: (-10.0, 10.0), translate_frac: (-0.05, 0.05), scale: (0.9, 1.1), hflip_prob: 0.5 }
    }
}

impl AffineRanges {
    /// Ranges that always produce [`AffineParams::IDENTITY`].
    pub fn identity() -> Self {
        AffineRanges { rotation_deg: (0.0, 0.0), translate_frac: (0.0, 0.0), scale: (1.0, 1.0), hflip_prob: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("rotation_deg", self.rotation_deg), ("translate_frac", self.translate_frac), ("scale", self.scale)] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(DataError::Config(format!("{name} range ({lo}, {hi}) is invalid")));
            }
        }
        if self.scale.0 <= 0.0 {
            return Err(DataError::Config("scale must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(DataError::Config(format!("hflip_prob {} outside [0, 1]", self.hflip_prob)));
        }
        Ok(())
    }
}

/// Uniform draws inside `ranges`. Always consumes five values from `rng`, so
/// the stream position does not depend on the ranges.
pub fn sample_affine_params<R: Rng>(rng: &mut R, ranges: &AffineRanges) -> Result<AffineParams> {
    ranges.validate()?;
    let mut u = |(lo, hi): (f64, f64)| lo + (hi - lo) * rng.random::<f64>();
    let rotation_deg = u(ranges.rotation_deg);
    let tx = u(ranges.translate_frac);
    let ty = u(ranges.translate_frac);
    let scale = u(ranges.scale);
    let hflip = u((0.0, 1.0)) < ranges.hflip_prob;
    Ok(AffineParams { rotation_deg, translate_frac: (tx, ty), scale, hflip })
}

/// Warps every channel with one map: rotation about the image centre, then
/// scale, then translation, then an optional horizontal flip. Nearest-
/// neighbour sampling with zero fill keeps the masks binary.
pub fn affine_transform_maskset(masks: &MaskSet, p: &AffineParams) -> Result<MaskSet> {
    masks.validate()?;
    if !(p.scale > 0.0) {
        return Err(DataError::Invalid(format!("scale {} must be positive", p.scale)));
    }
    let (h, w) = masks.extent();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = p.rotation_deg.to_radians().sin_cos();
    let (tx, ty) = (p.translate_frac.0 * w as f64, p.translate_frac.1 * h as f64);
    // Source pixel of every destination pixel, by inverting the forward map.
    let source: Vec<Option<usize>> = (0..h * w)
        .map(|i| {
            let (r, c) = ((i / w) as f64, (i % w) as f64);
            let c = if p.hflip { w as f64 - 1.0 - c } else { c };
            let (x, y) = ((c - cx - tx) / p.scale, (r - cy - ty) / p.scale);
            let (sx, sy) = (cos * x + sin * y + cx, -sin * x + cos * y + cy);
            let (sr, sc) = (sy.round(), sx.round());
            (sr >= 0.0 && sc >= 0.0 && sr < h as f64 && sc < w as f64).then(|| sr as usize * w + sc as usize)
        })
        .collect();
    let warp = |t: &Tensor<f32>| -> Tensor<f32> {
        let c = t.shape()[0];
        let mut out = vec![0.0f32; t.numel()];
        for ch in 0..c {
            let src = &t.data()[ch * h * w..(ch + 1) * h * w];
            for (d, s) in out[ch * h * w..(ch + 1) * h * w].iter_mut().zip(&source) {
                if let Some(s) = *s {
                    *d = src[s];
                }
            }
        }
        Tensor::from_vec(t.shape(), out).expect("warp extent")
    };
    Ok(MaskSet { ribs: warp(&masks.ribs), lungs: warp(&masks.lungs), clavicles: warp(&masks.clavicles) })
}
