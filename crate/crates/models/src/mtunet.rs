//! Hybrid CNN-transformer segmenter with ASPP and one sigmoid head per organ
//! group.

use serde::{Deserialize, Serialize};

use ribforge_core::nn::ParamStore;
use ribforge_core::{derive_seed, ChannelGroups, Organ, Result, Scalar, Tape, Tensor, TensorError, Var};

use crate::layers::{sinusoidal_positions, Aspp, Builder, Conv2d, ConvBnAct, Ctx, DoubleConv, TransformerLayer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MTUNetConfig {
    /// Widths of the five CNN stages at extents H, H/2, H/4, H/8, H/16.
    pub cnn_stage_channels: [usize; 5],
    pub patch_embed_dim: usize,
    pub n_transformer_layers: usize,
    pub n_heads: usize,
    pub mlp_ratio: usize,
    pub aspp_dilations: [usize; 4],
    pub aspp_out_channels: usize,
    /// Widths of the four decoder stages, deepest first.
    pub decoder_channels: [usize; 4],
    pub head_channels: usize,
    pub head_groups: ChannelGroups,
    pub use_aspp: bool,
}

impl MTUNetConfig {
    pub fn desk() -> Self {
        MTUNetConfig {
            cnn_stage_channels: [8, 16, 32, 32, 64],
            patch_embed_dim: 64,
            n_transformer_layers: 2,
            n_heads: 4,
            mlp_ratio: 2,
            aspp_dilations: [1, 2, 4, 6],
            aspp_out_channels: 32,
            decoder_channels: [32, 32, 16, 16],
            head_channels: 16,
            head_groups: ChannelGroups::DESK,
            use_aspp: true,
        }
    }

    pub fn full() -> Self {
        MTUNetConfig {
            cnn_stage_channels: [64, 128, 256, 512, 1024],
            patch_embed_dim: 768,
            n_transformer_layers: 12,
            n_heads: 12,
            mlp_ratio: 4,
            aspp_dilations: [1, 6, 12, 18],
            aspp_out_channels: 256,
            decoder_channels: [256, 128, 64, 16],
            head_channels: 16,
            head_groups: ChannelGroups::FULL,
            use_aspp: true,
        }
    }
}

/// Context module between the transformer and the decoder: ASPP, or a single
/// 1×1 projection to the same width when ASPP is disabled.
#[derive(Debug, Clone)]
enum Context {
    Aspp(Aspp),
    Plain(ConvBnAct),
}

#[derive(Debug, Clone)]
struct Head {
    hidden: ConvBnAct,
    out: Conv2d,
}

#[derive(Debug)]
pub struct MTUNet<T: Scalar> {
    pub cfg: MTUNetConfig,
    pub store: ParamStore<T>,
    stem: Vec<DoubleConv>,
    embed: Conv2d,
    layers: Vec<TransformerLayer>,
    context: Context,
    decoder: Vec<DoubleConv>,
    heads: [Head; 3],
}

/// Intermediate values exposed for inspection.
pub struct MTUNetTrace<'t, T: Scalar> {
    pub probs: Var<'t, T>,
    /// Attention probabilities of every transformer layer, `[N·heads, L, L]`.
    pub attention: Vec<Var<'t, T>>,
}

impl<T: Scalar> MTUNet<T> {
    pub fn new(cfg: MTUNetConfig, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut b = Builder::new(&mut store, derive_seed(seed, "mtunet"));
        let ch = cfg.cnn_stage_channels;
        let mut stem = Vec::with_capacity(5);
        let mut c = 1;
        for (i, &w) in ch.iter().enumerate() {
            stem.push(DoubleConv::new(&mut b, &format!("cnn{i}"), c, w));
            c = w;
        }
        let d = cfg.patch_embed_dim;
        let embed = Conv2d::same(&mut b, "embed", c, d, 1, true);
        let layers = (0..cfg.n_transformer_layers)
            .map(|i| TransformerLayer::new(&mut b, &format!("transformer{i}"), d, cfg.n_heads, d * cfg.mlp_ratio))
            .collect();
        let context = if cfg.use_aspp {
            Context::Aspp(Aspp::new(&mut b, "aspp", d, cfg.aspp_out_channels, &cfg.aspp_dilations))
        } else {
            Context::Plain(ConvBnAct::relu(&mut b, "context", d, cfg.aspp_out_channels, 1))
        };
        let mut c = cfg.aspp_out_channels;
        let mut decoder = Vec::with_capacity(4);
        for (i, &w) in cfg.decoder_channels.iter().enumerate() {
            let skip = ch[3 - i];
            decoder.push(DoubleConv::new(&mut b, &format!("dec{i}"), c + skip, w));
            c = w;
        }
        b.set_he_init(true);
        let heads = Organ::ALL.map(|o| Head {
            hidden: ConvBnAct::relu(&mut b, &format!("head_{}.hidden", o.name()), c, cfg.head_channels, 3),
            out: Conv2d::same(&mut b, &format!("head_{}.out", o.name()), cfg.head_channels, cfg.head_groups.count(o), 1, true),
        });
        b.set_he_init(false);
        MTUNet { cfg, store, stem, embed, layers, context, decoder, heads }
    }

    pub fn forward<'t>(&mut self, tape: &'t Tape<T>, x: Var<'t, T>, train: bool) -> Result<Var<'t, T>> {
        Ok(self.trace(tape, x, train)?.probs)
    }

    pub fn forward_tensor<'t>(&mut self, tape: &'t Tape<T>, x: &Tensor<T>, train: bool) -> Result<Var<'t, T>> {
        let v = tape.constant(x.clone());
        self.forward(tape, v, train)
    }

    pub fn trace<'t>(&mut self, tape: &'t Tape<T>, x: Var<'t, T>, train: bool) -> Result<MTUNetTrace<'t, T>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != 1 || s[2] % 16 != 0 || s[3] % 16 != 0 || s[2] == 0 || s[3] == 0 {
            return Err(TensorError::Invalid {
                op: "mtunet",
                msg: format!("expected [N,1,H,W] with H, W positive multiples of 16, got {s:?}"),
            });
        }
        let (n, h, w) = (s[0], s[2], s[3]);
        let mut cx = Ctx::new(tape, &mut self.store, train);
        let mut skips = Vec::with_capacity(4);
        let mut y = x;
        for (i, blk) in self.stem.iter().enumerate() {
            if i > 0 {
                y = y.max_pool2d(2, 2)?;
            }
            y = blk.forward(&mut cx, y)?;
            if i < 4 {
                skips.push(y);
            }
        }
        let (hh, ww, d) = (h / 16, w / 16, self.cfg.patch_embed_dim);
        let tokens = self.embed.forward(&cx, y)?.reshape(&[n, d, hh * ww])?.transpose_last()?;
        let pos = cx.input(sinusoidal_positions(hh, ww, d));
        let mut t = tokens.add(pos)?;
        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, probs) = layer.forward(&cx, t)?;
            t = next;
            attention.push(probs);
        }
        let map = t.transpose_last()?.reshape(&[n, d, hh, ww])?;
        let mut y = match &self.context {
            Context::Aspp(a) => a.forward(&mut cx, map)?,
            Context::Plain(p) => p.forward(&mut cx, map)?,
        };
        for blk in &self.decoder {
            let skip = skips.pop().expect("one skip per decoder stage");
            let sk = skip.shape();
            let up = y.upsample_bilinear(sk[2], sk[3])?;
            y = blk.forward(&mut cx, Var::concat(&[up, skip], 1)?)?;
        }
        let mut outs = Vec::with_capacity(3);
        for head in &self.heads {
            let hdn = head.hidden.forward(&mut cx, y)?;
            outs.push(head.out.forward(&cx, hdn)?.sigmoid());
        }
        Ok(MTUNetTrace { probs: Var::concat(&outs, 1)?, attention })
    }

    /// Concatenated ASPP branch outputs for a deepest-level feature map;
    /// `None` when ASPP is disabled.
    pub fn aspp_branches<'t>(&mut self, tape: &'t Tape<T>, feat: &Tensor<T>, train: bool) -> Option<Result<Var<'t, T>>> {
        let Context::Aspp(a) = &self.context else { return None };
        let mut cx = Ctx::new(tape, &mut self.store, train);
        let x = cx.input(feat.clone());
        Some(a.branches(&mut cx, x))
    }
}
