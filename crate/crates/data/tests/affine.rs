use proptest::prelude::*;
use rand::Rng;
use ribforge_core::{seeded, ChannelGroups, Tensor};
use ribforge_data::{affine_transform_maskset, generate_masks, sample_affine_params, AffineParams, AffineRanges, MaskSet, PhantomConfig};

const TINY: ChannelGroups = ChannelGroups { ribs: 2, lungs: 1, clavicles: 1 };

fn random_masks(seed: u64, n: usize) -> MaskSet {
    let mut rng = seeded(seed);
    let stack: Vec<f32> = (0..TINY.total() * n * n).map(|_| if rng.random::<f64>() < 0.3 { 1.0 } else { 0.0 }).collect();
    MaskSet::from_stacked(&Tensor::from_vec(&[TINY.total(), n, n], stack).unwrap(), &TINY).unwrap()
}

fn single_pixel(n: usize, r: usize, c: usize) -> MaskSet {
    let mut stack = vec![0.0f32; TINY.total() * n * n];
    for ch in 0..TINY.total() {
        stack[ch * n * n + r * n + c] = 1.0;
    }
    MaskSet::from_stacked(&Tensor::from_vec(&[TINY.total(), n, n], stack).unwrap(), &TINY).unwrap()
}

fn ones(m: &MaskSet) -> Vec<(usize, usize, usize)> {
    let (h, w) = m.extent();
    let mut v = Vec::new();
    for c in 0..m.groups().total() {
        for (i, x) in m.channel(c).iter().enumerate() {
            if *x == 1.0 {
                v.push((c, i / w, i % w));
            }
        }
    }
    assert!(v.iter().all(|p| p.1 < h));
    v
}

#[test]
fn identity_is_bit_exact() {
    let m = generate_masks(2, &PhantomConfig::default()).unwrap();
    assert_eq!(affine_transform_maskset(&m, &AffineParams::IDENTITY).unwrap(), m);
}

#[test]
fn hflip_is_an_involution() {
    let m = random_masks(5, 13);
    let flip = AffineParams { hflip: true, ..AffineParams::IDENTITY };
    let once = affine_transform_maskset(&m, &flip).unwrap();
    assert_ne!(once, m);
    assert_eq!(affine_transform_maskset(&once, &flip).unwrap(), m);
    // A flip mirrors columns.
    let p = single_pixel(8, 2, 1);
    assert_eq!(ones(&affine_transform_maskset(&p, &flip).unwrap())[0], (0, 2, 6));
}

#[test]
fn quarter_turn_moves_single_pixels_to_closed_form() {
    let n = 9;
    let rot = AffineParams { rotation_deg: 90.0, ..AffineParams::IDENTITY };
    for (r, c) in [(0, 0), (1, 7), (4, 4), (8, 3), (6, 0)] {
        let out = ones(&affine_transform_maskset(&single_pixel(n, r, c), &rot).unwrap());
        let expect: Vec<_> = (0..TINY.total()).map(|ch| (ch, c, n - 1 - r)).collect();
        assert_eq!(out, expect, "pixel ({r},{c})");
    }
}

#[test]
fn pure_translation_shifts_and_zero_fills() {
    let n = 10;
    let shift = AffineParams { translate_frac: (0.2, -0.1), ..AffineParams::IDENTITY };
    let out = ones(&affine_transform_maskset(&single_pixel(n, 5, 3), &shift).unwrap());
    assert_eq!(out[0], (0, 4, 5));
    let gone = affine_transform_maskset(&single_pixel(n, 5, 9), &shift).unwrap();
    assert!(ones(&gone).is_empty());
}

#[test]
fn channels_share_one_map() {
    let p = single_pixel(16, 3, 11);
    let params = AffineParams { rotation_deg: 7.0, translate_frac: (0.03, 0.04), scale: 1.07, hflip: true };
    let out = ones(&affine_transform_maskset(&p, &params).unwrap());
    let first: Vec<_> = out.iter().filter(|q| q.0 == 0).map(|q| (q.1, q.2)).collect();
    for ch in 1..TINY.total() {
        let this: Vec<_> = out.iter().filter(|q| q.0 == ch).map(|q| (q.1, q.2)).collect();
        assert_eq!(this, first);
    }
}

#[test]
fn degenerate_ranges_are_deterministic() {
    let ranges = AffineRanges { rotation_deg: (3.0, 3.0), translate_frac: (0.01, 0.01), scale: (1.05, 1.05), hflip_prob: 1.0 };
    let mut rng = seeded(1);
    for _ in 0..10 {
        let p = sample_affine_params(&mut rng, &ranges).unwrap();
        assert_eq!(p, AffineParams { rotation_deg: 3.0, translate_frac: (0.01, 0.01), scale: 1.05, hflip: true });
    }
    let mut rng = seeded(1);
    assert_eq!(sample_affine_params(&mut rng, &AffineRanges::identity()).unwrap(), AffineParams::IDENTITY);
}

#[test]
fn draws_stay_in_default_bounds() {
    let ranges = AffineRanges::default();
    let mut rng = seeded(77);
    for _ in 0..1000 {
        let p = sample_affine_params(&mut rng, &ranges).unwrap();
        assert!((-10.0..=10.0).contains(&p.rotation_deg));
        assert!((-0.05..=0.05).contains(&p.translate_frac.0));
        assert!((-0.05..=0.05).contains(&p.translate_frac.1));
        assert!((0.9..=1.1).contains(&p.scale));
    }
}

#[test]
fn hflip_frequency_is_near_half() {
    let mut rng = seeded(2024);
    let flips = (0..10_000).filter(|_| sample_affine_params(&mut rng, &AffineRanges::default()).unwrap().hflip).count();
    let freq = flips as f64 / 10_000.0;
    assert!((0.45..=0.55).contains(&freq), "{freq}");
}

#[test]
fn invalid_ranges_rejected() {
    let mut rng = seeded(0);
    let bad = AffineRanges { scale: (1.1, 0.9), ..AffineRanges::default() };
    assert!(sample_affine_params(&mut rng, &bad).is_err());
    let bad = AffineRanges { hflip_prob: 1.5, ..AffineRanges::default() };
    assert!(sample_affine_params(&mut rng, &bad).is_err());
    let m = random_masks(0, 4);
    assert!(affine_transform_maskset(&m, &AffineParams { scale: 0.0, ..AffineParams::IDENTITY }).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn warped_masks_stay_binary_with_shape(
        seed in 0u64..1000,
        rot in -30.0f64..30.0,
        tx in -0.2f64..0.2,
        ty in -0.2f64..0.2,
        scale in 0.5f64..1.5,
        hflip in any::<bool>(),
    ) {
        let m = random_masks(seed, 12);
        let out = affine_transform_maskset(&m, &AffineParams { rotation_deg: rot, translate_frac: (tx, ty), scale, hflip }).unwrap();
        prop_assert_eq!(out.groups(), m.groups());
        prop_assert_eq!(out.extent(), m.extent());
        prop_assert!(out.validate().is_ok());
    }
}
