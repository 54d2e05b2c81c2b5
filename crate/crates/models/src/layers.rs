//! Building blocks shared by the networks: parameter builders, a forward
//! context, and the layer types.

use ribforge_core::nn::{ParamId, ParamStore};
use ribforge_core::ops::{Activation, BatchNormMode, Conv2dOpts, RunningStats};
use ribforge_core::{seeded, Result, Scalar, SeededRng, Tape, Tensor, Var};

pub const CONV_INIT_STD: f64 = 0.02;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const LN_EPS: f64 = 1e-5;

/// Registers parameters into a store, drawing initial values from one seeded
/// stream in registration order.
pub struct Builder<'a, T: Scalar> {
    store: &'a mut ParamStore<T>,
    rng: SeededRng,
    he_init: bool,
}

impl<'a, T: Scalar> Builder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, seed: u64) -> Self {
        Builder { store, rng: seeded(seed), he_init: false }
    }

    /// While set, convolution kernels are drawn with std `sqrt(2 / fan_in)`
    /// instead of [`CONV_INIT_STD`].
    pub fn set_he_init(&mut self, on: bool) {
        self.he_init = on;
    }

    pub fn conv_std(&self, fan_in: usize) -> f64 {
        if self.he_init {
            (2.0 / fan_in as f64).sqrt()
        } else {
            CONV_INIT_STD
        }
    }

    pub fn normal(&mut self, name: String, shape: &[usize], std: f64) -> ParamId {
        let t = Tensor::normal_with(shape, 0.0, std, &mut self.rng);
        self.store.add_weight(name, t)
    }

    pub fn constant(&mut self, name: String, shape: &[usize], value: f64) -> ParamId {
        self.store.add_weight(name, Tensor::full(shape, T::from_f64_lossy(value)))
    }

    pub fn buffer(&mut self, name: String, value: Tensor<T>) -> ParamId {
        self.store.add_buffer(name, value)
    }
}

/// Per-forward state: the tape, the parameter store and the train/eval flag.
pub struct Ctx<'a, 't, T: Scalar> {
    pub tape: &'t Tape<T>,
    store: &'a mut ParamStore<T>,
    train: bool,
}

impl<'a, 't, T: Scalar> Ctx<'a, 't, T> {
    pub fn new(tape: &'t Tape<T>, store: &'a mut ParamStore<T>, train: bool) -> Self {
        Ctx { tape, store, train }
    }

    pub fn param(&self, id: ParamId) -> Var<'t, T> {
        self.store.var(self.tape, id)
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn input(&self, t: Tensor<T>) -> Var<'t, T> {
        self.tape.constant(t)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub opts: Conv2dOpts,
}

impl Conv2d {
    pub fn new<T: Scalar>(
        b: &mut Builder<'_, T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        opts: Conv2dOpts,
        bias: bool,
    ) -> Self {
        let std = b.conv_std(cin * k * k);
        let weight = b.normal(format!("{name}.weight"), &[cout, cin, k, k], std);
        let bias = bias.then(|| b.constant(format!("{name}.bias"), &[cout], 0.0));
        Conv2d { weight, bias, opts }
    }

    /// Stride-1 convolution that preserves the spatial extent.
    pub fn same<T: Scalar>(b: &mut Builder<'_, T>, name: &str, cin: usize, cout: usize, k: usize, bias: bool) -> Self {
        Self::new(b, name, cin, cout, k, Conv2dOpts::same(k, 1), bias)
    }

    pub fn forward<'t, T: Scalar>(&self, cx: &Ctx<'_, 't, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.conv2d(cx.param(self.weight), self.bias.map(|b| cx.param(b)), self.opts)
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
}

impl ConvTranspose2d {
    /// Kernel and stride 2: doubles the spatial extent exactly.
    pub fn up2<T: Scalar>(b: &mut Builder<'_, T>, name: &str, cin: usize, cout: usize) -> Self {
        let weight = b.normal(format!("{name}.weight"), &[cin, cout, 2, 2], CONV_INIT_STD);
        let bias = b.constant(format!("{name}.bias"), &[cout], 0.0);
        ConvTranspose2d { weight, bias, stride: 2 }
    }

    pub fn forward<'t, T: Scalar>(&self, cx: &Ctx<'_, 't, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.conv_transpose2d(cx.param(self.weight), Some(cx.param(self.bias)), self.stride, 0)
    }
}

/// Batch normalisation whose running statistics live in the store as buffers,
/// so they travel with the weight file.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub scale: ParamId,
    pub shift: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub updates: ParamId,
}

impl BatchNorm2d {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, c: usize) -> Self {
        BatchNorm2d {
            scale: b.constant(format!("{name}.scale"), &[c], 1.0),
            shift: b.constant(format!("{name}.shift"), &[c], 0.0),
            running_mean: b.buffer(format!("{name}.running_mean"), Tensor::zeros(&[c])),
            running_var: b.buffer(format!("{name}.running_var"), Tensor::ones(&[c])),
            updates: b.buffer(format!("{name}.updates"), Tensor::zeros(&[1])),
        }
    }

    pub fn forward<'t, T: Scalar>(&self, cx: &mut Ctx<'_, 't, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let mut stats = RunningStats {
            mean: cx.store.get(self.running_mean).data().to_vec(),
            var: cx.store.get(self.running_var).data().to_vec(),
            updates: cx.store.get(self.updates).item().to_f64_lossy() as u64,
        };
        let (g, s) = (cx.param(self.scale), cx.param(self.shift));
        if !cx.train {
            return x.batch_norm2d(g, s, BN_EPS, BatchNormMode::Eval(&stats));
        }
        let y = x.batch_norm2d(g, s, BN_EPS, BatchNormMode::Train { stats: &mut stats, momentum: BN_MOMENTUM })?;
        let c = stats.mean.len();
        cx.store.set(self.running_mean, Tensor::from_vec(&[c], stats.mean)?);
        cx.store.set(self.running_var, Tensor::from_vec(&[c], stats.var)?);
        cx.store.set(self.updates, Tensor::scalar(T::from_u64(stats.updates).unwrap()).reshaped(&[1])?);
        Ok(y)
    }
}

/// Convolution, batch norm, activation.
#[derive(Debug, Clone)]
pub struct ConvBnAct {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
    pub act: Option<Activation>,
}

impl ConvBnAct {
    pub fn new<T: Scalar>(
        b: &mut Builder<'_, T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        opts: Conv2dOpts,
        act: Option<Activation>,
    ) -> Self {
        ConvBnAct {
            conv: Conv2d::new(b, &format!("{name}.conv"), cin, cout, k, opts, false),
            bn: BatchNorm2d::new(b, &format!("{name}.bn"), cout),
            act,
        }
    }

    pub fn relu<T: Scalar>(b: &mut Builder<'_, T>, name: &str, cin: usize, cout: usize, k: usize) -> Self {
        Self::new(b, name, cin, cout, k, Conv2dOpts::same(k, 1), Some(Activation::Relu))
    }

    pub fn forward<'t, T: Scalar>(&self, cx: &mut Ctx<'_, 't, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let y = self.conv.forward(cx, x)?;
        let y = self.bn.forward(cx, y)?;
        Ok(match self.act {
            Some(a) => y.activation(a),
            None => y,
        })
    }
}

/// Two 3×3 conv-BN-ReLU layers.
#[derive(Debug, Clone)]
pub struct DoubleConv {
    pub a: ConvBnAct,
    pub b: ConvBnAct,
}

impl DoubleConv {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, cin: usize, cout: usize) -> Self {
        DoubleConv {
            a: ConvBnAct::relu(b, &format!("{name}.0"), cin, cout, 3),
            b: ConvBnAct::relu(b, &format!("{name}.1"), cout, cout, 3),
        }
    }

    pub fn forward<'t, T: Scalar>(&self, cx: &mut Ctx<'_, 't, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let y = self.a.forward(cx, x)?;
        self.b.forward(cx, y)
    }
}

/// `x·W + b` over the last axis, `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, din: usize, dout: usize) -> Self {
        Linear {
            weight: b.normal(format!("{name}.weight"), &[din, dout], CONV_INIT_STD),
            bias: b.constant(format!("{name}.bias"), &[dout], 0.0),
        }
    }

    pub fn forward<'t, T: Scalar>(&self, cx: &Ctx<'_, 't, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.matmul(cx.param(self.weight))?.add(cx.param(self.bias))
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub scale: ParamId,
    pub shift: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, d: usize) -> Self {
        LayerNorm {
            scale: b.constant(format!("{name}.scale"), &[d], 1.0),
            shift: b.constant(format!("{name}.shift"), &[d], 0.0),
        }
    }

    pub fn forward<'t, T: Scalar>(&self, cx: &Ctx<'_, 't, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.layer_norm(cx.param(self.scale), cx.param(self.shift), LN_EPS)
    }
}

/// Multi-head self-attention over `[N, L, D]` token sequences.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl SelfAttention {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, d: usize, heads: usize) -> Self {
        assert!(heads > 0 && d % heads == 0, "embedding {d} not divisible into {heads} heads");
        SelfAttention {
            q: Linear::new(b, &format!("{name}.q"), d, d),
            k: Linear::new(b, &format!("{name}.k"), d, d),
            v: Linear::new(b, &format!("{name}.v"), d, d),
            out: Linear::new(b, &format!("{name}.out"), d, d),
            heads,
        }
    }

    /// Returns the attended sequence and the attention probabilities
    /// `[N·heads, L, L]`.
    pub fn forward<'t, T: Scalar>(&self, cx: &Ctx<'_, 't, T>, x: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let s = x.shape();
        let (n, l, d) = (s[0], s[1], s[2]);
        let h = self.heads;
        let dh = d / h;
        let split = |t: Var<'t, T>| -> Result<Var<'t, T>> {
            t.reshape(&[n, l, h, dh])?.permute(&[0, 2, 1, 3])?.reshape(&[n * h, l, dh])
        };
        let q = split(self.q.forward(cx, x)?)?;
        let k = split(self.k.forward(cx, x)?)?;
        let v = split(self.v.forward(cx, x)?)?;
        let scores = q.matmul(k.transpose_last()?)?.scale(T::from_f64_lossy(1.0 / (dh as f64).sqrt()));
        let probs = scores.softmax(2)?;
        let ctx = probs.matmul(v)?.reshape(&[n, h, l, dh])?.permute(&[0, 2, 1, 3])?.reshape(&[n, l, d])?;
        Ok((self.out.forward(cx, ctx)?, probs))
    }
}

/// Pre-norm transformer encoder layer: attention and a GELU MLP, each with a
/// residual connection.
#[derive(Debug, Clone)]
pub struct TransformerLayer {
    pub ln1: LayerNorm,
    pub attn: SelfAttention,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl TransformerLayer {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, d: usize, heads: usize, mlp: usize) -> Self {
        TransformerLayer {
            ln1: LayerNorm::new(b, &format!("{name}.ln1"), d),
            attn: SelfAttention::new(b, &format!("{name}.attn"), d, heads),
            ln2: LayerNorm::new(b, &format!("{name}.ln2"), d),
            fc1: Linear::new(b, &format!("{name}.fc1"), d, mlp),
            fc2: Linear::new(b, &format!("{name}.fc2"), mlp, d),
        }
    }

    pub fn forward<'t, T: Scalar>(&self, cx: &Ctx<'_, 't, T>, x: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let (a, probs) = self.attn.forward(cx, self.ln1.forward(cx, x)?)?;
        let x = x.add(a)?;
        let m = self.fc2.forward(cx, self.fc1.forward(cx, self.ln2.forward(cx, x)?)?.gelu())?;
        Ok((x.add(m)?, probs))
    }
}

/// Fixed 2-D sinusoidal position code `[h·w, d]`: the first half of the
/// channels encodes the row, the second half the column.
pub fn sinusoidal_positions<T: Scalar>(h: usize, w: usize, d: usize) -> Tensor<T> {
    let half = d / 2;
    let mut out = vec![T::zero(); h * w * d];
    let code = |pos: usize, i: usize, dim: usize| -> f64 {
        let pair = (i / 2) as f64;
        let freq = 1.0 / 10000f64.powf(2.0 * pair / dim.max(1) as f64);
        let a = pos as f64 * freq;
        if i % 2 == 0 { a.sin() } else { a.cos() }
    };
    for r in 0..h {
        for c in 0..w {
            let row = &mut out[(r * w + c) * d..][..d];
            for i in 0..half {
                row[i] = T::from_f64_lossy(code(r, i, half));
            }
            for i in half..d {
                row[i] = T::from_f64_lossy(code(c, i - half, d - half));
            }
        }
    }
    Tensor::from_vec(&[h * w, d], out).expect("position table shape")
}

/// Atrous spatial pyramid pooling: a 1×1 branch, three dilated 3×3 branches,
/// and an image-pooling branch, concatenated and fused by a 1×1 projection.
#[derive(Debug, Clone)]
pub struct Aspp {
    pub pointwise: ConvBnAct,
    pub dilated: Vec<ConvBnAct>,
    pub pool: Conv2d,
    pub fuse: ConvBnAct,
    pub branch_channels: usize,
}

impl Aspp {
    /// `dilations[0]` belongs to the 1×1 branch; the remaining three set the
    /// 3×3 branch rates.
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, cin: usize, cout: usize, dilations: &[usize]) -> Self {
        assert_eq!(dilations.len(), 4, "ASPP takes four rates");
        let pointwise = ConvBnAct::relu(b, &format!("{name}.b0"), cin, cout, 1);
        let dilated = dilations[1..]
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                ConvBnAct::new(b, &format!("{name}.b{}", i + 1), cin, cout, 3, Conv2dOpts::same(3, d), Some(Activation::Relu))
            })
            .collect();
        let pool = Conv2d::same(b, &format!("{name}.pool"), cin, cout, 1, true);
        let fuse = ConvBnAct::relu(b, &format!("{name}.fuse"), 5 * cout, cout, 1);
        Aspp { pointwise, dilated, pool, fuse, branch_channels: cout }
    }

    /// Concatenated branch outputs before the fusing projection.
    pub fn branches<'t, T: Scalar>(&self, cx: &mut Ctx<'_, 't, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = x.shape();
        let (h, w) = (s[2], s[3]);
        let mut parts = vec![self.pointwise.forward(cx, x)?];
        for br in &self.dilated {
            parts.push(br.forward(cx, x)?);
        }
        let pooled = self.pool.forward(cx, x.global_avg_pool()?)?.relu();
        parts.push(pooled.upsample_bilinear(h, w)?);
        Var::concat(&parts, 1)
    }

    pub fn forward<'t, T: Scalar>(&self, cx: &mut Ctx<'_, 't, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let cat = self.branches(cx, x)?;
        self.fuse.forward(cx, cat)
    }
}
