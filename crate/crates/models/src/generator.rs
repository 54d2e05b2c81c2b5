//! Mask-to-image generator: one residual encoder per organ group and a shared
//! upsampling decoder.

use serde::{Deserialize, Serialize};

use ribforge_core::nn::ParamStore;
use ribforge_core::ops::{Activation, Conv2dOpts};
use ribforge_core::{derive_seed, ChannelGroups, Organ, Result, Scalar, Tape, Tensor, TensorError, Var};

use crate::layers::{Builder, Conv2d, ConvBnAct, Ctx};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Residual blocks per encoder stage; every stage halves the extent.
    pub encoder_depth_per_stage: Vec<usize>,
    pub base_channels: usize,
    /// Bottleneck output width as a multiple of its inner width.
    pub expansion: usize,
    pub mask_channel_groups: ChannelGroups,
}

impl GeneratorConfig {
    pub fn desk() -> Self {
        GeneratorConfig {
            encoder_depth_per_stage: vec![1, 1, 1, 1],
            base_channels: 8,
            expansion: 2,
            mask_channel_groups: ChannelGroups::DESK,
        }
    }

    pub fn full() -> Self {
        GeneratorConfig {
            encoder_depth_per_stage: vec![3, 4, 6, 3],
            base_channels: 64,
            expansion: 4,
            mask_channel_groups: ChannelGroups::FULL,
        }
    }

    pub fn downsample(&self) -> usize {
        1 << self.encoder_depth_per_stage.len()
    }

    fn stage_width(&self, i: usize) -> usize {
        self.base_channels << i
    }

    /// Channels of one encoder's output feature map.
    pub fn feature_channels(&self) -> usize {
        self.stage_width(self.encoder_depth_per_stage.len() - 1) * self.expansion
    }
}

/// 1×1 reduce, 3×3 (possibly strided), 1×1 expand, plus a shortcut that is
/// projected whenever the shape changes.
#[derive(Debug, Clone)]
struct Bottleneck {
    reduce: ConvBnAct,
    spatial: ConvBnAct,
    expand: ConvBnAct,
    shortcut: Option<ConvBnAct>,
}

impl Bottleneck {
    fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, cin: usize, mid: usize, cout: usize, stride: usize) -> Self {
        let strided = Conv2dOpts::new(stride, 1, 1);
        let shortcut = (cin != cout || stride != 1)
            .then(|| ConvBnAct::new(b, &format!("{name}.proj"), cin, cout, 1, Conv2dOpts::new(stride, 0, 1), None));
        Bottleneck {
            reduce: ConvBnAct::relu(b, &format!("{name}.reduce"), cin, mid, 1),
            spatial: ConvBnAct::new(b, &format!("{name}.spatial"), mid, mid, 3, strided, Some(Activation::Relu)),
            expand: ConvBnAct::new(b, &format!("{name}.expand"), mid, cout, 1, Conv2dOpts::default(), None),
            shortcut,
        }
    }

    fn forward<'t, T: Scalar>(&self, cx: &mut Ctx<'_, 't, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let y = self.reduce.forward(cx, x)?;
        let y = self.spatial.forward(cx, y)?;
        let y = self.expand.forward(cx, y)?;
        let skip = match &self.shortcut {
            Some(p) => p.forward(cx, x)?,
            None => x,
        };
        Ok(y.add(skip)?.relu())
    }
}

#[derive(Debug, Clone)]
struct Encoder {
    in_channels: usize,
    stem: ConvBnAct,
    blocks: Vec<Bottleneck>,
}

impl Encoder {
    fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, cfg: &GeneratorConfig, cin: usize) -> Self {
        let stem = ConvBnAct::relu(b, &format!("{name}.stem"), cin, cfg.base_channels, 3);
        let mut blocks = Vec::new();
        let mut c = cfg.base_channels;
        for (s, &depth) in cfg.encoder_depth_per_stage.iter().enumerate() {
            let mid = cfg.stage_width(s);
            let out = mid * cfg.expansion;
            for k in 0..depth.max(1) {
                let stride = if k == 0 { 2 } else { 1 };
                blocks.push(Bottleneck::new(b, &format!("{name}.stage{s}.block{k}"), c, mid, out, stride));
                c = out;
            }
        }
        Encoder { in_channels: cin, stem, blocks }
    }

    fn forward<'t, T: Scalar>(&self, cx: &mut Ctx<'_, 't, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let mut y = self.stem.forward(cx, x)?;
        for blk in &self.blocks {
            y = blk.forward(cx, y)?;
        }
        Ok(y)
    }
}

#[derive(Debug)]
pub struct Generator<T: Scalar> {
    pub cfg: GeneratorConfig,
    pub store: ParamStore<T>,
    encoders: [Encoder; 3],
    decoder: Vec<ConvBnAct>,
    head: Conv2d,
}

impl<T: Scalar> Generator<T> {
    pub fn new(cfg: GeneratorConfig, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut b = Builder::new(&mut store, derive_seed(seed, "generator"));
        let g = cfg.mask_channel_groups;
        let encoders = Organ::ALL.map(|o| Encoder::new(&mut b, &format!("enc_{}", o.name()), &cfg, g.count(o)));
        let stages = cfg.encoder_depth_per_stage.len();
        let mut c = 3 * cfg.feature_channels();
        let mut decoder = Vec::new();
        for i in (0..stages).rev() {
            let out = cfg.stage_width(i);
            decoder.push(ConvBnAct::relu(&mut b, &format!("dec.up{}", stages - 1 - i), c, out, 3));
            c = out;
        }
        let head = Conv2d::same(&mut b, "dec.out", c, 1, 3, true);
        Generator { cfg, store, encoders, decoder, head }
    }

    /// Feature map of one organ encoder, `[N, F, H/16, W/16]`.
    pub fn encode<'t>(&mut self, tape: &'t Tape<T>, organ: Organ, masks: &Tensor<T>, train: bool) -> Result<Var<'t, T>> {
        let enc = &self.encoders[organ as usize];
        self.check_input(enc, masks)?;
        let mut cx = Ctx::new(tape, &mut self.store, train);
        let x = cx.input(masks.clone());
        enc.forward(&mut cx, x)
    }

    fn check_input(&self, enc: &Encoder, masks: &Tensor<T>) -> Result<()> {
        let s = masks.shape();
        let f = self.cfg.downsample();
        if s.len() != 4 || s[1] != enc.in_channels {
            return Err(TensorError::Invalid {
                op: "generator",
                msg: format!("expected [N,{},H,W] masks, got {s:?}", enc.in_channels),
            });
        }
        if s[2] % f != 0 || s[3] % f != 0 || s[2] == 0 || s[3] == 0 {
            return Err(TensorError::Invalid {
                op: "generator",
                msg: format!("spatial extent {}x{} is not a positive multiple of {f}", s[2], s[3]),
            });
        }
        Ok(())
    }

    /// `tanh(D(cat(E_rib(p_rib), E_lung(p_lung), E_clav(p_clav))))`, `[N,1,H,W]`.
    pub fn forward<'t>(&mut self, tape: &'t Tape<T>, ribs: &Tensor<T>, lungs: &Tensor<T>, clavicles: &Tensor<T>, train: bool) -> Result<Var<'t, T>> {
        let inputs = [ribs, lungs, clavicles];
        let lead = &ribs.shape()[..];
        for (enc, m) in self.encoders.iter().zip(inputs) {
            self.check_input(enc, m)?;
            if m.shape()[0] != lead[0] || m.shape()[2..] != lead[2..] {
                return Err(TensorError::mismatch("generator", lead, m.shape()));
            }
        }
        let (h, w) = (lead[2], lead[3]);
        let mut cx = Ctx::new(tape, &mut self.store, train);
        let mut feats = Vec::with_capacity(3);
        for (enc, m) in self.encoders.iter().zip(inputs) {
            let x = cx.input(m.clone());
            feats.push(enc.forward(&mut cx, x)?);
        }
        let mut y = Var::concat(&feats, 1)?;
        let stages = self.decoder.len();
        for (i, blk) in self.decoder.iter().enumerate() {
            let scale = 1 << (stages - 1 - i);
            let up = y.upsample_bilinear(h / scale, w / scale)?;
            y = blk.forward(&mut cx, up)?;
        }
        Ok(self.head.forward(&cx, y)?.tanh())
    }

    /// Splits a `[N, Cr+Cl+Cc, H, W]` mask stack into its three groups.
    pub fn forward_stacked<'t>(&mut self, tape: &'t Tape<T>, masks: &Tensor<T>, train: bool) -> Result<Var<'t, T>> {
        let g = self.cfg.mask_channel_groups;
        let parts = split_groups(masks, &g)?;
        self.forward(tape, &parts[0], &parts[1], &parts[2], train)
    }

    /// Parameter-name prefixes owned by each encoder.
    pub fn encoder_prefix(organ: Organ) -> String {
        format!("enc_{}.", organ.name())
    }
}

/// Channel slices of a grouped `[N,C,H,W]` stack, in ribs/lungs/clavicles order.
pub fn split_groups<T: Scalar>(stack: &Tensor<T>, g: &ChannelGroups) -> Result<[Tensor<T>; 3]> {
    let s = stack.shape();
    if s.len() != 4 || s[1] != g.total() {
        return Err(TensorError::Invalid {
            op: "split_groups",
            msg: format!("expected [N,{},H,W], got {s:?}", g.total()),
        });
    }
    let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
    Ok(Organ::ALL.map(|o| {
        let r = g.range(o);
        let mut data = Vec::with_capacity(n * r.len() * plane);
        for b in 0..n {
            data.extend_from_slice(&stack.data()[(b * c + r.start) * plane..(b * c + r.end) * plane]);
        }
        Tensor::from_vec(&[n, r.len(), s[2], s[3]], data).expect("slice extent")
    }))
}
