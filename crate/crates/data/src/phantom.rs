//! Procedural chest phantoms: two lungs, two clavicles and mirrored rib arcs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use ribforge_core::{derive_seed, seeded, ChannelGroups, SeededRng, Tensor};

use crate::error::{DataError, Result};
use crate::render::{render_xray, RenderConfig};
use crate::sample::{MaskSet, Provenance, Sample};

/// Scene geometry. Lengths are fractions of the image extent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomConfig {
    pub image_size: usize,
    pub rib_pairs: usize,
    pub groups: ChannelGroups,
    /// Full band width of a rib.
    pub rib_thickness: (f64, f64),
    /// Vertical position of the top rib's medial end.
    pub rib_top: f64,
    pub rib_spacing: (f64, f64),
    /// Upward bulge of a rib arc at mid-length.
    pub rib_bulge: (f64, f64),
    /// Downward drop of a rib's lateral end relative to its medial end.
    pub rib_droop: (f64, f64),
    /// Horizontal distance past the midline reached by each rib's medial end.
    pub rib_midline_overlap: f64,
    pub rib_lateral_x: (f64, f64),
    pub lung_center_x: (f64, f64),
    pub lung_center_y: (f64, f64),
    pub lung_semi_x: (f64, f64),
    pub lung_semi_y: (f64, f64),
    pub clavicle_medial: (f64, f64),
    pub clavicle_lateral: (f64, f64),
    pub clavicle_jitter: f64,
    pub clavicle_thickness: f64,
    /// Vertical jitter of individual structures.
    pub jitter: f64,
    pub render: RenderConfig,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            image_size: 64,
            rib_pairs: 6,
            groups: ChannelGroups::DESK,
            rib_thickness: (0.042, 0.052),
            rib_top: 0.2,
            rib_spacing: (0.1, 0.11),
            rib_bulge: (0.04, 0.06),
            rib_droop: (0.08, 0.11),
            rib_midline_overlap: 0.03,
            rib_lateral_x: (0.11, 0.14),
            lung_center_x: (0.29, 0.32),
            lung_center_y: (0.52, 0.56),
            lung_semi_x: (0.12, 0.15),
            lung_semi_y: (0.26, 0.3),
            clavicle_medial: (0.45, 0.16),
            clavicle_lateral: (0.13, 0.1),
            clavicle_jitter: 0.015,
            clavicle_thickness: 0.045,
            jitter: 0.008,
            render: RenderConfig::default(),
        }
    }
}

impl PhantomConfig {
    /// Full-scale anatomy: 448×448 with 12 rib pairs.
    pub fn full() -> Self {
        PhantomConfig {
            image_size: 448,
            rib_pairs: 12,
            groups: ChannelGroups::FULL,
            rib_top: 0.16,
            rib_spacing: (0.055, 0.06),
            rib_thickness: (0.022, 0.028),
            rib_droop: (0.05, 0.07),
            rib_bulge: (0.02, 0.035),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DataError::Config(m));
        if self.image_size == 0 || self.image_size % 16 != 0 {
            return bad(format!("image_size {} is not a positive multiple of 16", self.image_size));
        }
        if self.rib_pairs == 0 || self.rib_pairs * 2 != self.groups.ribs {
            return bad(format!("rib_pairs {} does not match {} rib channels", self.rib_pairs, self.groups.ribs));
        }
        if self.groups.lungs != 2 || self.groups.clavicles != 2 {
            return bad("phantoms carry exactly two lung and two clavicle channels".into());
        }
        for (name, (lo, hi)) in [
            ("rib_thickness", self.rib_thickness),
            ("rib_spacing", self.rib_spacing),
            ("rib_bulge", self.rib_bulge),
            ("rib_droop", self.rib_droop),
            ("rib_lateral_x", self.rib_lateral_x),
            ("lung_center_x", self.lung_center_x),
            ("lung_center_y", self.lung_center_y),
            ("lung_semi_x", self.lung_semi_x),
            ("lung_semi_y", self.lung_semi_y),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return bad(format!("{name} range ({lo}, {hi}) is empty"));
            }
        }
        if self.rib_thickness.0 <= 0.0 || self.clavicle_thickness <= 0.0 {
            return bad("thickness must be positive".into());
        }
        if self.lung_center_x.0 + self.lung_semi_x.1 >= 0.5 {
            return bad("lungs may cross the midline".into());
        }
        if self.clavicle_medial.0 + self.clavicle_jitter + self.clavicle_thickness / 2.0 >= 0.5 {
            return bad("clavicles may cross the midline".into());
        }
        self.render.validate()
    }
}

fn draw(rng: &mut SeededRng, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn jitter(rng: &mut SeededRng, amp: f64) -> f64 {
    amp * (2.0 * rng.random::<f64>() - 1.0)
}

const SUBSAMPLES: usize = 4;

/// Rasterises `inside` with 4×4 supersampling and keeps pixels whose coverage
/// reaches one half. Only pixels within the inclusive bounding box
/// `(r0, r1, c0, c1)` are tested.
fn raster(n: usize, bbox: (f64, f64, f64, f64), inside: impl Fn(f64, f64) -> bool) -> Vec<f32> {
    let mut out = vec![0.0f32; n * n];
    let clamp = |v: f64| (v.floor().max(0.0) as usize).min(n.saturating_sub(1));
    let (r0, r1, c0, c1) = (clamp(bbox.0 - 1.0), clamp(bbox.1 + 1.0), clamp(bbox.2 - 1.0), clamp(bbox.3 + 1.0));
    let step = 1.0 / SUBSAMPLES as f64;
    for r in r0..=r1 {
        for c in c0..=c1 {
            let mut hits = 0;
            for i in 0..SUBSAMPLES {
                for j in 0..SUBSAMPLES {
                    let y = r as f64 + (i as f64 + 0.5) * step;
                    let x = c as f64 + (j as f64 + 0.5) * step;
                    hits += inside(y, x) as usize;
                }
            }
            if 2 * hits >= SUBSAMPLES * SUBSAMPLES {
                out[r * n + c] = 1.0;
            }
        }
    }
    out
}

fn seg_dist((y, x): (f64, f64), (ay, ax): (f64, f64), (by, bx): (f64, f64)) -> f64 {
    let (dy, dx) = (by - ay, bx - ax);
    let len2 = dy * dy + dx * dx;
    let t = if len2 == 0.0 { 0.0 } else { (((y - ay) * dy + (x - ax) * dx) / len2).clamp(0.0, 1.0) };
    let (py, px) = (ay + t * dy, ax + t * dx);
    ((y - py).powi(2) + (x - px).powi(2)).sqrt()
}

/// Band of half-width `half` around a polyline given in pixel coordinates.
fn stroke(n: usize, pts: &[(f64, f64)], half: f64) -> Vec<f32> {
    let ys = pts.iter().map(|p| p.0);
    let xs = pts.iter().map(|p| p.1);
    let bbox = (
        ys.clone().fold(f64::INFINITY, f64::min) - half,
        ys.fold(f64::NEG_INFINITY, f64::max) + half,
        xs.clone().fold(f64::INFINITY, f64::min) - half,
        xs.fold(f64::NEG_INFINITY, f64::max) + half,
    );
    raster(n, bbox, |y, x| pts.windows(2).any(|w| seg_dist((y, x), w[0], w[1]) <= half))
}

fn ellipse(n: usize, (cy, cx): (f64, f64), (ay, ax): (f64, f64)) -> Vec<f32> {
    raster(n, (cy - ay, cy + ay, cx - ax, cx + ax), |y, x| ((y - cy) / ay).powi(2) + ((x - cx) / ax).powi(2) <= 1.0)
}

/// Centre line of one rib from its medial end (`t = 0`) to its lateral end.
fn rib_curve(n: f64, medial: (f64, f64), lateral_x: f64, bulge: f64, droop: f64) -> Vec<(f64, f64)> {
    let len = (medial.1 - lateral_x).abs();
    let steps = ((len * 2.0).ceil() as usize).max(8);
    (0..=steps)
        .map(|k| {
            let t = k as f64 / steps as f64;
            let x = medial.1 + (lateral_x - medial.1) * t;
            let y = medial.0 - bulge * (std::f64::consts::PI * t).sin() + droop * t * t;
            (y * n, x * n)
        })
        .collect()
}

fn masks_tensor(channels: Vec<Vec<f32>>, n: usize) -> Tensor<f32> {
    let c = channels.len();
    Tensor::from_vec(&[c, n, n], channels.concat()).expect("mask extent")
}

/// Masks of one phantom scene, fully determined by `seed`.
pub fn generate_masks(seed: u64, cfg: &PhantomConfig) -> Result<MaskSet> {
    cfg.validate()?;
    let n = cfg.image_size;
    let nf = n as f64;
    let mut rng = seeded(derive_seed(seed, "phantom.geometry"));

    let mut lungs = Vec::with_capacity(2);
    for side in [0, 1] {
        let cx = draw(&mut rng, cfg.lung_center_x);
        let cx = if side == 0 { cx } else { 1.0 - cx };
        let cy = draw(&mut rng, cfg.lung_center_y);
        let ax = draw(&mut rng, cfg.lung_semi_x);
        let ay = draw(&mut rng, cfg.lung_semi_y);
        lungs.push(ellipse(n, (cy * nf, cx * nf), (ay * nf, ax * nf)));
    }

    let mut clavicles = Vec::with_capacity(2);
    for side in [0, 1] {
        let mirror = |x: f64| if side == 0 { x } else { 1.0 - x };
        let j = cfg.clavicle_jitter;
        let (my, mx) = (cfg.clavicle_medial.1 + jitter(&mut rng, j), cfg.clavicle_medial.0 + jitter(&mut rng, j));
        let (ly, lx) = (cfg.clavicle_lateral.1 + jitter(&mut rng, j), cfg.clavicle_lateral.0 + jitter(&mut rng, j));
        let pts = [(my * nf, mirror(mx) * nf), (ly * nf, mirror(lx) * nf)];
        clavicles.push(stroke(n, &pts, cfg.clavicle_thickness * nf / 2.0));
    }

    // Left ribs first (top to bottom), then right ribs. Medial ends cross the
    // midline, so each left rib overlaps its right partner there.
    let spacing = draw(&mut rng, cfg.rib_spacing);
    let mut ribs = Vec::with_capacity(cfg.groups.ribs);
    let mut levels = Vec::with_capacity(cfg.rib_pairs);
    for k in 0..cfg.rib_pairs {
        levels.push(cfg.rib_top + k as f64 * spacing);
    }
    for side in [0, 1] {
        for &level in &levels {
            let mirror = |x: f64| if side == 0 { x } else { 1.0 - x };
            let medial = (level + jitter(&mut rng, cfg.jitter), mirror(0.5 + cfg.rib_midline_overlap));
            let lateral = mirror(draw(&mut rng, cfg.rib_lateral_x));
            let bulge = draw(&mut rng, cfg.rib_bulge);
            let droop = draw(&mut rng, cfg.rib_droop);
            let half = draw(&mut rng, cfg.rib_thickness) * nf / 2.0;
            ribs.push(stroke(n, &rib_curve(nf, medial, lateral, bulge, droop), half));
        }
    }

    let m = MaskSet {
        ribs: masks_tensor(ribs, n),
        lungs: masks_tensor(lungs, n),
        clavicles: masks_tensor(clavicles, n),
    };
    m.validate()?;
    Ok(m)
}

/// A rendered phantom: masks plus a synthetic radiograph.
pub fn generate_phantom(seed: u64, cfg: &PhantomConfig) -> Result<Sample> {
    let masks = generate_masks(seed, cfg)?;
    let image = render_xray(&masks, &cfg.render, derive_seed(seed, "phantom.texture"), derive_seed(seed, "phantom.noise"))?;
    Ok(Sample { image, masks, provenance: Provenance::Real, seed })
}
