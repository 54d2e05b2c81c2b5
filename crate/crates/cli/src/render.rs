//! Side-by-side PPM panel of an image and its colour-coded masks.

use ribforge_core::Organ;
use ribforge_data::Sample;

/// One colour per rib; lungs and clavicles reuse the first entries in their
/// own tile.
pub const PALETTE: [[u8; 3]; 24] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [255, 250, 200],
    [128, 0, 0],
    [170, 255, 195],
    [128, 128, 0],
    [255, 215, 180],
    [0, 0, 128],
    [128, 128, 128],
    [255, 99, 71],
    [46, 139, 87],
    [106, 90, 205],
    [218, 165, 32],
];

const ALPHA: f32 = 0.55;

/// Three tiles left to right: the grey image, ribs over the image, lungs and
/// clavicles over the image. Returns binary PPM bytes.
pub fn render_panel(sample: &Sample) -> Vec<u8> {
    let (h, w) = sample.masks.extent();
    let groups = sample.masks.groups();
    let grey: Vec<u8> = sample.image.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let tiles = [
        Vec::new(),
        groups.range(Organ::Ribs).collect::<Vec<_>>(),
        groups.range(Organ::Lungs).chain(groups.range(Organ::Clavicles)).collect(),
    ];
    let width = w * tiles.len();
    let mut rgb = vec![0u8; width * h * 3];
    for (t, channels) in tiles.iter().enumerate() {
        for r in 0..h {
            for c in 0..w {
                let g = grey[r * w + c] as f32;
                let mut px = [g, g, g];
                for (k, &ch) in channels.iter().enumerate() {
                    if sample.masks.channel(ch)[r * w + c] > 0.5 {
                        let col = PALETTE[k % PALETTE.len()];
                        for i in 0..3 {
                            px[i] = (1.0 - ALPHA) * px[i] + ALPHA * col[i] as f32;
                        }
                    }
                }
                let o = (r * width + t * w + c) * 3;
                for i in 0..3 {
                    rgb[o + i] = px[i].round() as u8;
                }
            }
        }
    }
    let mut out = format!("P6\n{width} {h}\n255\n").into_bytes();
    out.extend_from_slice(&rgb);
    out
}
