use proptest::prelude::*;
use ribforge_core::metrics::{binarize, dice, evaluate_dataset, iou};
use ribforge_core::nn::{bce_loss, dice_loss};
use ribforge_core::ops::Conv2dOpts;
use ribforge_core::{ChannelGroups, Init, Tape, Tensor};

fn normal(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::create(shape, Init::Normal { mean: 0.0, std: 1.0, seed }).unwrap()
}

fn inner(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn conv_transpose_is_the_adjoint_of_conv(
        n in 1usize..3, cin in 1usize..4, cout in 1usize..4,
        h in 4usize..9, w in 4usize..9, k in 1usize..4,
        stride in 1usize..3, pad in 0usize..2, seed in any::<u64>(),
    ) {
        let opts = Conv2dOpts::new(stride, pad, 1);
        let tape = Tape::<f64>::new();
        let x = normal(&[n, cin, h, w], seed);
        let wt = normal(&[cout, cin, k, k], seed.wrapping_add(1));
        let y = tape.constant(x.clone()).conv2d(tape.constant(wt.clone()), None, opts).unwrap().value();
        let probe = normal(y.shape(), seed.wrapping_add(2));
        // conv_transpose maps back onto the input grid only when no trailing
        // rows were dropped by the stride.
        let (ho, wo) = (y.shape()[2], y.shape()[3]);
        prop_assume!((ho - 1) * stride + k == h + 2 * pad && (wo - 1) * stride + k == w + 2 * pad);
        let wt_t = tape.constant(wt.clone());
        let back = tape.constant(probe.clone()).conv_transpose2d(wt_t, None, stride, pad).unwrap().value();
        prop_assert_eq!(back.shape(), x.shape());
        let lhs = inner(&y, &probe);
        let rhs = inner(&x, &back);
        prop_assert!((lhs - rhs).abs() <= 1e-4 * lhs.abs().max(rhs.abs()).max(1.0), "{} vs {}", lhs, rhs);
    }

    #[test]
    fn softmax_rows_sum_to_one(a in 1usize..4, b in 1usize..6, c in 1usize..6, axis in 0usize..3, seed in any::<u64>()) {
        let tape = Tape::<f32>::new();
        let x = Tensor::<f32>::create(&[a, b, c], Init::Normal { mean: 0.0, std: 4.0, seed }).unwrap();
        let y = tape.constant(x).softmax(axis).unwrap().value();
        let dims = [a, b, c];
        let strides = [b * c, c, 1];
        for base in 0..a * b * c {
            if (base / strides[axis]) % dims[axis] != 0 {
                continue;
            }
            let s: f32 = (0..dims[axis]).map(|i| y.data()[base + i * strides[axis]]).sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn shape_round_trips_are_bit_exact(a in 1usize..4, b in 1usize..5, c in 1usize..5, seed in any::<u64>()) {
        let tape = Tape::<f32>::new();
        let x = Tensor::<f32>::create(&[a, b, c], Init::Normal { mean: 0.0, std: 1.0, seed }).unwrap();
        let v = tape.constant(x.clone());
        let p = v.permute(&[2, 0, 1]).unwrap().permute(&[1, 2, 0]).unwrap().value();
        prop_assert_eq!(&*p, &x);
        let r = v.reshape(&[a * b * c]).unwrap().reshape(&[a, b, c]).unwrap().value();
        prop_assert_eq!(&*r, &x);
        let cut = b / 2;
        let parts = [v.slice(1, 0, cut).unwrap(), v.slice(1, cut, b).unwrap()];
        let joined = ribforge_core::Var::concat(&parts, 1).unwrap().value();
        prop_assert_eq!(&*joined, &x);
    }

    #[test]
    fn unit_pointwise_kernel_is_identity(n in 1usize..3, c in 1usize..4, h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
        let tape = Tape::<f64>::new();
        let x = normal(&[n, c, h, w], seed);
        let mut eye = Tensor::<f64>::zeros(&[c, c, 1, 1]);
        for i in 0..c {
            eye.data_mut()[i * c + i] = 1.0;
        }
        let y = tape.constant(x.clone()).conv2d(tape.constant(eye), None, Conv2dOpts::default()).unwrap().value();
        prop_assert_eq!(&*y, &x);
    }

    #[test]
    fn same_seed_same_bits(seed in any::<u64>(), len in 1usize..64) {
        let a = Tensor::<f32>::create(&[len], Init::Uniform { lo: -1.0, hi: 1.0, seed }).unwrap();
        let b = Tensor::<f32>::create(&[len], Init::Uniform { lo: -1.0, hi: 1.0, seed }).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn dice_is_a_function_of_iou(bits_p in prop::collection::vec(any::<bool>(), 1..40), seed in any::<u64>()) {
        let g: Vec<f64> = Tensor::<f64>::create(&[bits_p.len()], Init::Uniform { lo: 0.0, hi: 1.0, seed }).unwrap()
            .data().iter().map(|&v| if v > 0.5 { 1.0 } else { 0.0 }).collect();
        let p: Vec<f64> = bits_p.iter().map(|&b| b as u8 as f64).collect();
        let j = iou(&p, &g).unwrap();
        let d = dice(&p, &g).unwrap();
        prop_assert!((0.0..=1.0).contains(&j) && (0.0..=1.0).contains(&d));
        prop_assert!((d - 2.0 * j / (1.0 + j)).abs() < 1e-12);
        prop_assert!(d >= j);
    }

    #[test]
    fn losses_are_bounded(len in 1usize..50, seed in any::<u64>()) {
        let tape = Tape::<f64>::new();
        let p = Tensor::<f64>::create(&[len], Init::Uniform { lo: 0.0, hi: 1.0, seed }).unwrap();
        let t = binarize(&Tensor::<f64>::create(&[len], Init::Uniform { lo: 0.0, hi: 1.0, seed: !seed }).unwrap(), 0.5);
        prop_assert!(bce_loss(tape.constant(p.clone()), &t).unwrap().item() >= 0.0);
        let d = dice_loss(tape.constant(p), &t, 1.0).unwrap().item();
        prop_assert!((0.0..=1.0).contains(&d));
    }

    #[test]
    fn soft_dice_on_hard_masks_tracks_iou(len in 1usize..50, seed in any::<u64>()) {
        let tape = Tape::<f64>::new();
        let draw = |s: u64| binarize(&Tensor::<f64>::create(&[len], Init::Uniform { lo: 0.0, hi: 1.0, seed: s }).unwrap(), 0.5);
        let (p, t) = (draw(seed), draw(!seed));
        prop_assume!(p.sum() + t.sum() > 0.0);
        let j = iou(p.data(), t.data()).unwrap();
        let loss = dice_loss(tape.constant(p), &t, 1e-12).unwrap().item();
        prop_assert!((1.0 - loss - 2.0 * j / (1.0 + j)).abs() < 1e-6);
    }

    #[test]
    fn evaluation_ignores_sample_order(n in 1usize..6, seed in any::<u64>(), rot in 0usize..6) {
        let groups = ChannelGroups { ribs: 2, lungs: 1, clavicles: 1 };
        let outs: Vec<Tensor<f64>> = (0..n)
            .map(|i| Tensor::create(&[4, 3, 3], Init::Uniform { lo: 0.0, hi: 1.0, seed: seed ^ i as u64 }).unwrap())
            .collect();
        let gts: Vec<Tensor<f64>> = (0..n)
            .map(|i| binarize(&Tensor::create(&[4, 3, 3], Init::Uniform { lo: 0.0, hi: 1.0, seed: !seed ^ i as u64 }).unwrap(), 0.5))
            .collect();
        let base = evaluate_dataset(&outs, &gts, &groups, 0.5).unwrap();
        let k = rot % n;
        let mut o2 = outs.clone();
        let mut g2 = gts.clone();
        o2.rotate_left(k);
        g2.rotate_left(k);
        o2.reverse();
        g2.reverse();
        let moved = evaluate_dataset(&o2, &g2, &groups, 0.5).unwrap();
        prop_assert_eq!(&base, &moved);
        for ch in &base.per_channel {
            prop_assert!((0.0..=1.0).contains(&ch.iou) && (0.0..=1.0).contains(&ch.dice));
        }
        let rib_mean = (base.per_channel[0].iou + base.per_channel[1].iou) / 2.0;
        prop_assert!((base.groups.ribs.miou - rib_mean).abs() < 1e-15);
    }
}

/// Exhaustive check over every pair of 3x3 binary masks against a set-based
/// oracle.
#[test]
fn overlap_metrics_match_set_oracle_exhaustively() {
    let mask = |bits: u32| -> Vec<f64> { (0..9).map(|i| ((bits >> i) & 1) as f64).collect() };
    for a in 0u32..512 {
        for b in 0u32..512 {
            let inter = (a & b).count_ones() as f64;
            let union = (a | b).count_ones() as f64;
            let size = (a.count_ones() + b.count_ones()) as f64;
            let want_iou = if union == 0.0 { 1.0 } else { inter / union };
            let want_dice = if size == 0.0 { 1.0 } else { 2.0 * inter / size };
            assert_eq!(iou(&mask(a), &mask(b)).unwrap(), want_iou);
            assert_eq!(dice(&mask(a), &mask(b)).unwrap(), want_dice);
        }
    }
}

#[test]
fn nan_survives_relu_max_pool_and_bce() {
    let tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::from_vec(&[1, 1, 2, 2], vec![f64::NAN, -1.0, 0.5, 2.0]).unwrap());
    assert!(x.relu().value().data()[0].is_nan());
    assert!(x.max_pool2d(2, 2).unwrap().value().data()[0].is_nan());
    let target = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
    let p = tape.constant(Tensor::from_vec(&[1, 1, 2, 2], vec![f64::NAN, 0.2, 0.7, 0.1]).unwrap());
    assert!(bce_loss(p, &target).unwrap().value().data()[0].is_nan());
}
