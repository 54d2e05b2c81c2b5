//! Unconditional PatchGAN discriminator.

use serde::{Deserialize, Serialize};

use ribforge_core::nn::ParamStore;
use ribforge_core::ops::{conv_out_extent, Activation, Conv2dOpts};
use ribforge_core::{derive_seed, Result, Scalar, Tape, Tensor, TensorError, Var};

use crate::layers::{BatchNorm2d, Builder, Conv2d, Ctx};

pub const LEAKY_SLOPE: f64 = 0.2;
const KERNEL: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorConfig {
    /// Number of stride-2 layers.
    pub n_layers: usize,
    pub base_channels: usize,
}

impl DiscriminatorConfig {
    pub fn desk() -> Self {
        DiscriminatorConfig { n_layers: 2, base_channels: 8 }
    }

    pub fn full() -> Self {
        DiscriminatorConfig { n_layers: 3, base_channels: 64 }
    }

    fn layer_opts(&self) -> Vec<Conv2dOpts> {
        let mut v = vec![Conv2dOpts::new(2, 1, 1); self.n_layers];
        v.extend([Conv2dOpts::new(1, 1, 1); 2]);
        v
    }

    /// Patch-map extent for an input extent, or `None` if the input is too small.
    pub fn output_extent(&self, size: usize) -> Option<usize> {
        self.layer_opts().into_iter().try_fold(size, |s, o| conv_out_extent(s, KERNEL, o).filter(|&e| e > 0))
    }
}

#[derive(Debug, Clone)]
struct Layer {
    conv: Conv2d,
    bn: Option<BatchNorm2d>,
    act: bool,
}

#[derive(Debug)]
pub struct Discriminator<T: Scalar> {
    pub cfg: DiscriminatorConfig,
    pub store: ParamStore<T>,
    layers: Vec<Layer>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(cfg: DiscriminatorConfig, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut b = Builder::new(&mut store, derive_seed(seed, "discriminator"));
        let opts = cfg.layer_opts();
        let last = opts.len() - 1;
        let mut layers = Vec::with_capacity(opts.len());
        let mut c = 1;
        for (i, o) in opts.into_iter().enumerate() {
            let out = if i == last { 1 } else { cfg.base_channels << i.min(3) };
            let name = format!("layer{i}");
            let norm = i > 0 && i < last;
            layers.push(Layer {
                conv: Conv2d::new(&mut b, &name, c, out, KERNEL, o, !norm),
                bn: norm.then(|| BatchNorm2d::new(&mut b, &format!("{name}.bn"), out)),
                act: i < last,
            });
            c = out;
        }
        Discriminator { cfg, store, layers }
    }

    /// Patch logits `[N,1,h,w]`; the sigmoid is left to the loss.
    pub fn forward<'t>(&mut self, tape: &'t Tape<T>, x: Var<'t, T>, train: bool) -> Result<Var<'t, T>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != 1 {
            return Err(TensorError::Invalid { op: "discriminator", msg: format!("expected [N,1,H,W], got {s:?}") });
        }
        if self.cfg.output_extent(s[2]).is_none() || self.cfg.output_extent(s[3]).is_none() {
            return Err(TensorError::Invalid {
                op: "discriminator",
                msg: format!("input {}x{} too small for {} strided layers", s[2], s[3], self.cfg.n_layers),
            });
        }
        let mut cx = Ctx::new(tape, &mut self.store, train);
        let mut y = x;
        for l in &self.layers {
            y = l.conv.forward(&cx, y)?;
            if let Some(bn) = &l.bn {
                y = bn.forward(&mut cx, y)?;
            }
            if l.act {
                y = y.activation(Activation::LeakyRelu(LEAKY_SLOPE));
            }
        }
        Ok(y)
    }

    pub fn forward_tensor<'t>(&mut self, tape: &'t Tape<T>, x: &Tensor<T>, train: bool) -> Result<Var<'t, T>> {
        let v = tape.constant(x.clone());
        self.forward(tape, v, train)
    }
}
