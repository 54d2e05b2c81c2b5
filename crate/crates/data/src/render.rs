//! Radiograph-like rendering of mask sets.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use ribforge_core::{seeded, Tensor};

use crate::error::{DataError, Result};
use crate::sample::MaskSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderConfig {
    pub background: f64,
    /// Added at the bottom edge, fading to zero at the top.
    pub background_gradient: f64,
    pub lung_weight: f64,
    pub rib_weight: f64,
    pub clavicle_weight: f64,
    /// Gaussian blur sigma in pixels applied to each mask before weighting.
    pub blur_radius: f64,
    /// Peak amplitude of the smooth value-noise texture.
    pub texture_amplitude: f64,
    /// Texture lattice cells across the image.
    pub texture_cells: usize,
    pub noise_sigma: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            background: 0.5,
            background_gradient: 0.12,
            lung_weight: -0.24,
            rib_weight: 0.24,
            clavicle_weight: 0.3,
            blur_radius: 0.7,
            texture_amplitude: 0.05,
            texture_cells: 4,
            noise_sigma: 0.02,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rib_weight <= 0.0 || self.clavicle_weight <= 0.0 || self.lung_weight >= 0.0 {
            return Err(DataError::Config("bones must brighten and lungs darken".into()));
        }
        if self.blur_radius < 0.0 || self.noise_sigma < 0.0 || self.texture_amplitude < 0.0 || self.texture_cells == 0 {
            return Err(DataError::Config("blur, noise and texture parameters must be non-negative".into()));
        }
        Ok(())
    }
}

/// Separable Gaussian blur of one `h×w` plane with zero padding.
fn blur(plane: &[f32], h: usize, w: usize, sigma: f64) -> Vec<f32> {
    if sigma == 0.0 {
        return plane.to_vec();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f32> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp() as f32).collect();
    let s: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    let pass = |src: &[f32], horizontal: bool| -> Vec<f32> {
        let mut dst = vec![0.0f32; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (t, &kv) in k.iter().enumerate() {
                    let o = t as isize - r;
                    let (yy, xx) = if horizontal { (y as isize, x as isize + o) } else { (y as isize + o, x as isize) };
                    if yy >= 0 && yy < h as isize && xx >= 0 && xx < w as isize {
                        acc += kv * src[yy as usize * w + xx as usize];
                    }
                }
                dst[y * w + x] = acc;
            }
        }
        dst
    };
    pass(&pass(plane, true), false)
}

/// Smoothstep-interpolated lattice noise in `[-amp, amp]`.
fn value_noise(h: usize, w: usize, cells: usize, amp: f64, seed: u64) -> Vec<f32> {
    let mut rng = seeded(seed);
    let g = cells + 1;
    let lattice: Vec<f64> = (0..g * g).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut out = vec![0.0f32; h * w];
    for y in 0..h {
        let fy = (y as f64 + 0.5) / h as f64 * cells as f64;
        let (iy, ty) = ((fy.floor() as usize).min(cells - 1), smooth(fy - fy.floor().min((cells - 1) as f64)));
        for x in 0..w {
            let fx = (x as f64 + 0.5) / w as f64 * cells as f64;
            let (ix, tx) = ((fx.floor() as usize).min(cells - 1), smooth(fx - fx.floor().min((cells - 1) as f64)));
            let at = |a: usize, b: usize| lattice[a * g + b];
            let top = at(iy, ix) * (1.0 - tx) + at(iy, ix + 1) * tx;
            let bot = at(iy + 1, ix) * (1.0 - tx) + at(iy + 1, ix + 1) * tx;
            out[y * w + x] = (amp * (top * (1.0 - ty) + bot * ty)) as f32;
        }
    }
    out
}

/// `clamp01(background + Σ w·blur(mask) + texture + noise)`, `[1, H, W]`.
///
/// The texture depends only on `texture_seed` and the noise only on
/// `noise_seed`.
pub fn render_xray(masks: &MaskSet, cfg: &RenderConfig, texture_seed: u64, noise_seed: u64) -> Result<Tensor<f32>> {
    cfg.validate()?;
    masks.validate()?;
    let (h, w) = masks.extent();
    let mut img: Vec<f32> = (0..h * w)
        .map(|i| {
            let y = (i / w) as f64 / (h.max(2) - 1) as f64;
            (cfg.background + cfg.background_gradient * y) as f32
        })
        .collect();
    let g = masks.groups();
    for c in 0..g.total() {
        let weight = match g.organ_of(c) {
            Some(ribforge_core::Organ::Ribs) => cfg.rib_weight,
            Some(ribforge_core::Organ::Lungs) => cfg.lung_weight,
            _ => cfg.clavicle_weight,
        } as f32;
        let soft = blur(masks.channel(c), h, w, cfg.blur_radius);
        img.iter_mut().zip(&soft).for_each(|(p, &m)| *p += weight * m);
    }
    if cfg.texture_amplitude > 0.0 {
        let tex = value_noise(h, w, cfg.texture_cells, cfg.texture_amplitude, texture_seed);
        img.iter_mut().zip(&tex).for_each(|(p, &t)| *p += t);
    }
    if cfg.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_sigma).map_err(|e| DataError::Config(e.to_string()))?;
        let mut rng = seeded(noise_seed);
        img.iter_mut().for_each(|p| *p += normal.sample(&mut rng) as f32);
    }
    img.iter_mut().for_each(|p| *p = p.clamp(0.0, 1.0));
    Tensor::from_vec(&[1, h, w], img).map_err(|e| DataError::Invalid(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blur_preserves_mass_away_from_edges() {
        let mut p = vec![0.0f32; 15 * 15];
        p[7 * 15 + 7] = 1.0;
        let b = blur(&p, 15, 15, 1.0);
        assert!((b.iter().sum::<f32>() - 1.0).abs() < 1e-5);
        assert!(b[7 * 15 + 7] > b[7 * 15 + 8]);
    }

    #[test]
    fn noise_is_bounded() {
        let t = value_noise(32, 32, 4, 0.05, 3);
        assert!(t.iter().all(|v| v.abs() <= 0.05 + 1e-7));
        assert_ne!(t[0], t[31 * 32 + 31]);
    }
}
