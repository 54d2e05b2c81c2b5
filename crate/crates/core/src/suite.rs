//! A fixed gradient-check suite over every differentiable op, in `f64`.

use crate::error::Result;
use crate::gradcheck::grad_check;
use crate::nn::{bce_loss, dice_loss, discriminator_loss, generator_adv_loss, seg_loss};
use crate::ops::{BatchNormMode, Conv2dOpts, PoolKind, RunningStats};
use crate::tape::{Tape, Var};
use crate::tensor::{Init, Tensor};

pub const SUITE_TOLERANCE: f64 = 1e-5;
pub const SUITE_EPS: f64 = 1e-5;
pub const SUITE_SEEDS: [u64; 3] = [11, 22, 33];

#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub name: &'static str,
    pub seed: u64,
    pub max_rel_error: f64,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < SUITE_TOLERANCE
    }
}

type Inputs = fn(u64) -> Vec<Tensor<f64>>;
type Body = for<'t> fn(&[Var<'t, f64>], u64) -> Result<Var<'t, f64>>;

fn normal(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::create(shape, Init::Normal { mean: 0.0, std: 1.0, seed }).expect("valid shape")
}

fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    Tensor::create(shape, Init::Uniform { lo, hi, seed }).expect("valid shape")
}

fn off_kink(shape: &[usize], seed: u64) -> Tensor<f64> {
    normal(shape, seed).map(|v| if v.abs() < 0.05 { v.signum() * 0.05 + v } else { v })
}

fn binary_target(shape: &[usize], seed: u64) -> Tensor<f64> {
    uniform(shape, 0.0, 1.0, seed ^ 0x7777).map(|v| if v > 0.5 { 1.0 } else { 0.0 })
}

/// Weighted sum with fixed non-uniform weights, so every output element
/// carries a distinct upstream gradient.
fn project<'t>(y: Var<'t, f64>, seed: u64) -> Result<Var<'t, f64>> {
    let w = normal(&y.shape(), seed ^ 0xABCD);
    y.dot_const(&w)
}

fn conv_inputs(s: u64) -> Vec<Tensor<f64>> {
    vec![normal(&[2, 2, 6, 6], s), normal(&[3, 2, 3, 3], s + 1), normal(&[3], s + 2)]
}

fn probs(s: u64) -> Vec<Tensor<f64>> {
    vec![uniform(&[2, 3, 4, 4], 0.05, 0.95, s)]
}

fn logits(s: u64) -> Vec<Tensor<f64>> {
    vec![normal(&[1, 1, 3, 3], s), normal(&[1, 1, 3, 3], s + 1)]
}

const CASES: &[(&str, Inputs, Body)] = &[
    ("conv2d", conv_inputs, |v, s| project(v[0].conv2d(v[1], Some(v[2]), Conv2dOpts::same(3, 1))?, s)),
    ("conv2d_strided", conv_inputs, |v, s| project(v[0].conv2d(v[1], Some(v[2]), Conv2dOpts::new(2, 1, 1))?, s)),
    ("conv2d_dilated", conv_inputs, |v, s| project(v[0].conv2d(v[1], Some(v[2]), Conv2dOpts::new(1, 2, 2))?, s)),
    (
        "conv_transpose2d",
        |s| vec![normal(&[2, 3, 3, 3], s), normal(&[3, 2, 2, 2], s + 1), normal(&[2], s + 2)],
        |v, s| project(v[0].conv_transpose2d(v[1], Some(v[2]), 2, 0)?, s),
    ),
    ("max_pool2d", |s| vec![normal(&[2, 2, 6, 6], s)], |v, s| project(v[0].max_pool2d(2, 2)?, s)),
    ("max_pool2d_overlap", |s| vec![normal(&[1, 2, 5, 5], s)], |v, s| project(v[0].pool2d(PoolKind::Max, 3, 1)?, s)),
    ("avg_pool2d", |s| vec![normal(&[2, 2, 6, 6], s)], |v, s| project(v[0].avg_pool2d(2, 2)?, s)),
    ("global_avg_pool", |s| vec![normal(&[2, 3, 4, 5], s)], |v, s| project(v[0].global_avg_pool()?, s)),
    ("upsample_bilinear", |s| vec![normal(&[2, 2, 3, 4], s)], |v, s| project(v[0].upsample_bilinear(6, 8)?, s)),
    ("relu", |s| vec![off_kink(&[4, 6], s)], |v, s| project(v[0].relu(), s)),
    ("leaky_relu", |s| vec![off_kink(&[4, 6], s)], |v, s| project(v[0].leaky_relu(0.2), s)),
    ("sigmoid", |s| vec![normal(&[4, 6], s)], |v, s| project(v[0].sigmoid(), s)),
    ("tanh", |s| vec![normal(&[4, 6], s)], |v, s| project(v[0].tanh(), s)),
    ("gelu", |s| vec![normal(&[4, 6], s)], |v, s| project(v[0].gelu(), s)),
    ("softmax", |s| vec![normal(&[2, 3, 5], s)], |v, s| project(v[0].softmax(2)?, s)),
    (
        "batch_norm2d",
        |s| vec![normal(&[3, 2, 3, 3], s), uniform(&[2], 0.5, 1.5, s + 1), normal(&[2], s + 2)],
        |v, s| {
            let mut stats = RunningStats::new(2);
            project(v[0].batch_norm2d(v[1], v[2], 1e-5, BatchNormMode::Train { stats: &mut stats, momentum: 0.1 })?, s)
        },
    ),
    (
        "batch_norm2d_eval",
        |s| vec![normal(&[2, 2, 3, 3], s), uniform(&[2], 0.5, 1.5, s + 1), normal(&[2], s + 2)],
        |v, s| {
            let mut stats = RunningStats::new(2);
            let warm_tape = Tape::<f64>::new();
            let warm = warm_tape.constant(normal(&[4, 2, 3, 3], s + 5));
            let (g, b) = (warm_tape.constant(Tensor::ones(&[2])), warm_tape.constant(Tensor::zeros(&[2])));
            warm.batch_norm2d(g, b, 1e-5, BatchNormMode::Train { stats: &mut stats, momentum: 0.5 })?;
            project(v[0].batch_norm2d(v[1], v[2], 1e-5, BatchNormMode::Eval(&stats))?, s)
        },
    ),
    (
        "layer_norm",
        |s| vec![normal(&[2, 3, 6], s), uniform(&[6], 0.5, 1.5, s + 1), normal(&[6], s + 2)],
        |v, s| project(v[0].layer_norm(v[1], v[2], 1e-5)?, s),
    ),
    ("matmul", |s| vec![normal(&[3, 4], s), normal(&[4, 5], s + 1)], |v, s| project(v[0].matmul(v[1])?, s)),
    (
        "matmul_batched",
        |s| vec![normal(&[2, 3, 4], s), normal(&[2, 4, 2], s + 1)],
        |v, s| project(v[0].matmul(v[1])?, s),
    ),
    ("bce_loss", probs, |v, s| bce_loss(v[0], &binary_target(&[2, 3, 4, 4], s))),
    ("dice_loss", probs, |v, s| dice_loss(v[0], &binary_target(&[2, 3, 4, 4], s), 1.0)),
    ("seg_loss", probs, |v, s| seg_loss(v[0], &binary_target(&[2, 3, 4, 4], s))),
    ("discriminator_loss", logits, |v, _| discriminator_loss(v[0], v[1])),
    ("generator_adv_loss", logits, |v, _| Ok(generator_adv_loss(v[1]))),
];

/// Names of the suite's cases, in run order.
pub fn case_names() -> Vec<&'static str> {
    CASES.iter().map(|c| c.0).collect()
}

/// Runs every case at every seed.
pub fn run_suite(seeds: &[u64]) -> Result<Vec<CaseResult>> {
    let mut out = Vec::with_capacity(CASES.len() * seeds.len());
    for &(name, inputs, body) in CASES {
        for &seed in seeds {
            let max_rel_error = grad_check(|v| body(v, seed), &inputs(seed), SUITE_EPS)?;
            out.push(CaseResult { name, seed, max_rel_error });
        }
    }
    Ok(out)
}
