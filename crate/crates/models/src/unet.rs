//! Guidance UNet: multi-label segmenter used to score generated images.

use serde::{Deserialize, Serialize};

use ribforge_core::nn::ParamStore;
use ribforge_core::{derive_seed, ChannelGroups, Result, Scalar, Tape, Tensor, TensorError, Var};

use crate::layers::{Builder, Conv2d, ConvTranspose2d, Ctx, DoubleConv};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceUNetConfig {
    /// Number of 2× downsamplings.
    pub depth: usize,
    pub base_channels: usize,
    pub groups: ChannelGroups,
}

impl GuidanceUNetConfig {
    pub fn desk() -> Self {
        GuidanceUNetConfig { depth: 3, base_channels: 8, groups: ChannelGroups::DESK }
    }

    pub fn full() -> Self {
        GuidanceUNetConfig { depth: 4, base_channels: 64, groups: ChannelGroups::FULL }
    }

    pub fn out_channels(&self) -> usize {
        self.groups.total()
    }
}

#[derive(Debug)]
pub struct GuidanceUNet<T: Scalar> {
    pub cfg: GuidanceUNetConfig,
    pub store: ParamStore<T>,
    down: Vec<DoubleConv>,
    up: Vec<(ConvTranspose2d, DoubleConv)>,
    head: Conv2d,
}

impl<T: Scalar> GuidanceUNet<T> {
    pub fn new(cfg: GuidanceUNetConfig, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut b = Builder::new(&mut store, derive_seed(seed, "guidance"));
        let width = |i: usize| cfg.base_channels << i;
        let mut down = Vec::with_capacity(cfg.depth + 1);
        let mut c = 1;
        for i in 0..=cfg.depth {
            down.push(DoubleConv::new(&mut b, &format!("down{i}"), c, width(i)));
            c = width(i);
        }
        let mut up = Vec::with_capacity(cfg.depth);
        for i in (0..cfg.depth).rev() {
            let t = ConvTranspose2d::up2(&mut b, &format!("up{i}.t"), c, width(i));
            let dc = DoubleConv::new(&mut b, &format!("up{i}.conv"), 2 * width(i), width(i));
            up.push((t, dc));
            c = width(i);
        }
        let head = Conv2d::same(&mut b, "head", c, cfg.out_channels(), 1, true);
        GuidanceUNet { cfg, store, down, up, head }
    }

    /// Per-channel probabilities `[N, C, H, W]`.
    pub fn forward<'t>(&mut self, tape: &'t Tape<T>, x: Var<'t, T>, train: bool) -> Result<Var<'t, T>> {
        let s = x.shape();
        let f = 1 << self.cfg.depth;
        if s.len() != 4 || s[1] != 1 || s[2] % f != 0 || s[3] % f != 0 || s[2] == 0 || s[3] == 0 {
            return Err(TensorError::Invalid {
                op: "guidance_unet",
                msg: format!("expected [N,1,H,W] with H, W positive multiples of {f}, got {s:?}"),
            });
        }
        let mut cx = Ctx::new(tape, &mut self.store, train);
        let mut skips = Vec::with_capacity(self.cfg.depth);
        let mut y = x;
        for (i, blk) in self.down.iter().enumerate() {
            if i > 0 {
                y = y.max_pool2d(2, 2)?;
            }
            y = blk.forward(&mut cx, y)?;
            if i < self.cfg.depth {
                skips.push(y);
            }
        }
        for (t, dc) in &self.up {
            let skip = skips.pop().expect("one skip per level");
            let upsampled = t.forward(&cx, y)?;
            y = dc.forward(&mut cx, Var::concat(&[skip, upsampled], 1)?)?;
        }
        Ok(self.head.forward(&cx, y)?.sigmoid())
    }

    pub fn forward_tensor<'t>(&mut self, tape: &'t Tape<T>, x: &Tensor<T>, train: bool) -> Result<Var<'t, T>> {
        let v = tape.constant(x.clone());
        self.forward(tape, v, train)
    }
}
