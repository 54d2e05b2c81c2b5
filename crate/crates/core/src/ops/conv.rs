//! 2-D convolution (cross-correlation) and its adjoint via im2col + GEMM.

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dOpts {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Default for Conv2dOpts {
    fn default() -> Self {
        Conv2dOpts {
            stride: 1,
            padding: 0,
            dilation: 1,
        }
    }
}

impl Conv2dOpts {
    pub fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        Conv2dOpts {
            stride,
            padding,
            dilation,
        }
    }

    /// Stride 1 with padding that preserves the extent of an odd `k`.
    pub fn same(k: usize, dilation: usize) -> Self {
        Conv2dOpts::new(1, dilation * (k - 1) / 2, dilation)
    }
}

/// Output extent of a convolution, `None` when it would be < 1.
pub fn conv_out_extent(size: usize, k: usize, o: Conv2dOpts) -> Option<usize> {
    let span = o.dilation * (k - 1) + 1;
    let padded = size + 2 * o.padding;
    if o.stride == 0 || padded < span {
        return None;
    }
    Some((padded - span) / o.stride + 1)
}

/// Geometry of a sliding window over one `[C,H,W]` plane.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Window {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub ho: usize,
    pub wo: usize,
    pub opts: Conv2dOpts,
}

impl Window {
    pub fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn cols(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.opts.stride == 1 && self.opts.padding == 0
    }

    /// Output columns `[lo, hi)` whose tap at kernel column `kj` lands
    /// inside the input row.
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let Conv2dOpts { stride, padding, dilation } = self.opts;
        let off = kj * dilation;
        let lo = if padding > off { (padding - off).div_ceil(stride) } else { 0 };
        let hi = if self.w + padding > off { (self.w + padding - off).div_ceil(stride) } else { 0 };
        (lo.min(self.wo), hi.min(self.wo).max(lo.min(self.wo)))
    }

    /// Unfolds `src` (`[c,h,w]`) into `dst` (`[c*kh*kw, ho*wo]`).
    pub fn im2col<T: Scalar>(&self, src: &[T], dst: &mut [T]) {
        let Conv2dOpts { stride, padding, dilation } = self.opts;
        let p = self.cols();
        for c in 0..self.c {
            let plane = &src[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let out = &mut dst[row * p..(row + 1) * p];
                    let (lo, hi) = self.valid_cols(kj);
                    // First input column read by output column `lo`.
                    let x0 = (lo * stride + kj * dilation).wrapping_sub(padding);
                    for oy in 0..self.ho {
                        let iy = (oy * stride + ki * dilation) as isize - padding as isize;
                        let seg = &mut out[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize || lo >= hi {
                            seg.fill(T::zero());
                            continue;
                        }
                        let line = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        seg[..lo].fill(T::zero());
                        seg[hi..].fill(T::zero());
                        if stride == 1 {
                            seg[lo..hi].copy_from_slice(&line[x0..x0 + hi - lo]);
                        } else {
                            for (k, v) in seg[lo..hi].iter_mut().enumerate() {
                                *v = line[x0 + k * stride];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Window::im2col`]: scatter-adds `src` back into `dst`.
    pub fn col2im<T: Scalar>(&self, src: &[T], dst: &mut [T]) {
        let Conv2dOpts { stride, padding, dilation } = self.opts;
        let p = self.cols();
        for c in 0..self.c {
            let plane = &mut dst[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let inp = &src[row * p..(row + 1) * p];
                    let (lo, hi) = self.valid_cols(kj);
                    if lo >= hi {
                        continue;
                    }
                    let x0 = (lo * stride + kj * dilation).wrapping_sub(padding);
                    for oy in 0..self.ho {
                        let iy = (oy * stride + ki * dilation) as isize - padding as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let line = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let seg = &inp[oy * self.wo + lo..oy * self.wo + hi];
                        if stride == 1 {
                            for (d, &v) in line[x0..x0 + hi - lo].iter_mut().zip(seg) {
                                *d += v;
                            }
                        } else {
                            for (k, &v) in seg.iter().enumerate() {
                                line[x0 + k * stride] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_bias<T: Scalar>(op: &'static str, bias: Option<&Tensor<T>>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [channels] {
            return Err(TensorError::mismatch(op, b.shape(), &[channels]));
        }
    }
    Ok(())
}

fn add_bias<T: Scalar>(out: &mut [T], bias: &[T], plane: usize) {
    for (chunk, &b) in out.chunks_mut(plane).zip(bias.iter().cycle()) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn bias_grad<T: Scalar>(g: &[T], gb: &mut [T], plane: usize) {
    let c = gb.len();
    for (i, chunk) in g.chunks(plane).enumerate() {
        let s: T = chunk.iter().copied().sum();
        gb[i % c] += s;
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Cross-correlation of `[N,Cin,H,W]` with weight `[Cout,Cin,kh,kw]`.
    pub fn conv2d(
        self,
        weight: Var<'t, T>,
        bias: Option<Var<'t, T>>,
        opts: Conv2dOpts,
    ) -> Result<Var<'t, T>> {
        let x = self.value();
        let w = weight.value();
        let (&[n, cin, h, wd], &[cout, wcin, kh, kw]) = (x.shape(), w.shape()) else {
            return Err(TensorError::mismatch("conv2d", x.shape(), w.shape()));
        };
        if cin != wcin {
            return Err(TensorError::mismatch("conv2d", x.shape(), w.shape()));
        }
        let bval = bias.map(|b| b.value());
        check_bias("conv2d", bval.as_deref(), cout)?;
        let (Some(ho), Some(wo)) = (conv_out_extent(h, kh, opts), conv_out_extent(wd, kw, opts)) else {
            return Err(TensorError::invalid("conv2d", format!(
                "non-positive output extent for input {h}x{wd}, kernel {kh}x{kw}, {opts:?}"
            )));
        };
        let win = Window { c: cin, h, w: wd, kh, kw, ho, wo, opts };
        let (rows, p) = (win.rows(), win.cols());
        let in_plane = cin * h * wd;
        let mut out = vec![T::zero(); n * cout * p];
        let mut cols = if win.is_pointwise() { Vec::new() } else { vec![T::zero(); rows * p] };
        for i in 0..n {
            let src = &x.data()[i * in_plane..(i + 1) * in_plane];
            let colv: &[T] = if win.is_pointwise() {
                src
            } else {
                win.im2col(src, &mut cols);
                &cols
            };
            T::gemm(
                cout, rows, p, T::one(),
                w.data(), (rows as isize, 1),
                colv, (p as isize, 1),
                T::zero(),
                &mut out[i * cout * p..], (p as isize, 1),
            );
        }
        if let Some(b) = &bval {
            add_bias(&mut out, b.data(), p);
        }
        let out = Tensor::from_vec(&[n, cout, ho, wo], out)?;
        let (xid, wid, bid) = (self.id(), weight.id(), bias.map(|b| b.id()));
        let mut inputs = vec![self, weight];
        inputs.extend(bias);
        Ok(self.tape().record(out, &inputs, move |g, sink| {
            if let Some(bid) = bid {
                if sink.wants(bid) {
                    bias_grad(g, sink.slot(bid), p);
                }
            }
            let want_w = sink.wants(wid);
            let want_x = sink.wants(xid);
            let mut cols = vec![T::zero(); rows * p];
            let mut gcols = vec![T::zero(); rows * p];
            for i in 0..n {
                let gi = &g[i * cout * p..(i + 1) * cout * p];
                if want_w {
                    let src = &x.data()[i * in_plane..(i + 1) * in_plane];
                    let colv: &[T] = if win.is_pointwise() {
                        src
                    } else {
                        win.im2col(src, &mut cols);
                        &cols
                    };
                    T::gemm(
                        cout, p, rows, T::one(),
                        gi, (p as isize, 1),
                        colv, (1, p as isize),
                        T::one(),
                        sink.slot(wid), (rows as isize, 1),
                    );
                }
                if want_x {
                    let gx = &mut sink.slot(xid)[i * in_plane..(i + 1) * in_plane];
                    if win.is_pointwise() {
                        T::gemm(
                            rows, cout, p, T::one(),
                            w.data(), (1, rows as isize),
                            gi, (p as isize, 1),
                            T::one(),
                            gx, (p as isize, 1),
                        );
                    } else {
                        T::gemm(
                            rows, cout, p, T::one(),
                            w.data(), (1, rows as isize),
                            gi, (p as isize, 1),
                            T::zero(),
                            &mut gcols, (p as isize, 1),
                        );
                        win.col2im(&gcols, gx);
                    }
                }
            }
        }))
    }

    /// Transposed convolution of `[N,Cin,H,W]` with weight `[Cin,Cout,kh,kw]`.
    /// Output extent is `(H-1)*stride - 2*padding + kh`.
    pub fn conv_transpose2d(
        self,
        weight: Var<'t, T>,
        bias: Option<Var<'t, T>>,
        stride: usize,
        padding: usize,
    ) -> Result<Var<'t, T>> {
        let x = self.value();
        let w = weight.value();
        let (&[n, cin, h, wd], &[wcin, cout, kh, kw]) = (x.shape(), w.shape()) else {
            return Err(TensorError::mismatch("conv_transpose2d", x.shape(), w.shape()));
        };
        if cin != wcin {
            return Err(TensorError::mismatch("conv_transpose2d", x.shape(), w.shape()));
        }
        let bval = bias.map(|b| b.value());
        check_bias("conv_transpose2d", bval.as_deref(), cout)?;
        let extent = |s: usize, k: usize| (s as isize - 1) * stride as isize - 2 * padding as isize + k as isize;
        let (ho, wo) = (extent(h, kh), extent(wd, kw));
        if ho < 1 || wo < 1 || stride == 0 {
            return Err(TensorError::invalid(
                "conv_transpose2d",
                format!("non-positive output extent {ho}x{wo}"),
            ));
        }
        let (ho, wo) = (ho as usize, wo as usize);
        // The matching forward convolution maps [cout,ho,wo] -> [cin,h,wd].
        let opts = Conv2dOpts::new(stride, padding, 1);
        if conv_out_extent(ho, kh, opts) != Some(h) || conv_out_extent(wo, kw, opts) != Some(wd) {
            return Err(TensorError::invalid("conv_transpose2d", "inconsistent geometry"));
        }
        let win = Window { c: cout, h: ho, w: wo, kh, kw, ho: h, wo: wd, opts };
        let (rows, p) = (win.rows(), win.cols());
        let in_plane = cin * p;
        let out_plane = cout * ho * wo;
        let mut out = vec![T::zero(); n * out_plane];
        let mut cols = vec![T::zero(); rows * p];
        for i in 0..n {
            T::gemm(
                rows, cin, p, T::one(),
                w.data(), (1, rows as isize),
                &x.data()[i * in_plane..], (p as isize, 1),
                T::zero(),
                &mut cols, (p as isize, 1),
            );
            win.col2im(&cols, &mut out[i * out_plane..(i + 1) * out_plane]);
        }
        if let Some(b) = &bval {
            add_bias(&mut out, b.data(), ho * wo);
        }
        let out = Tensor::from_vec(&[n, cout, ho, wo], out)?;
        let (xid, wid, bid) = (self.id(), weight.id(), bias.map(|b| b.id()));
        let mut inputs = vec![self, weight];
        inputs.extend(bias);
        Ok(self.tape().record(out, &inputs, move |g, sink| {
            if let Some(bid) = bid {
                if sink.wants(bid) {
                    bias_grad(g, sink.slot(bid), ho * wo);
                }
            }
            let mut gcols = vec![T::zero(); rows * p];
            for i in 0..n {
                win.im2col(&g[i * out_plane..(i + 1) * out_plane], &mut gcols);
                if sink.wants(xid) {
                    T::gemm(
                        cin, rows, p, T::one(),
                        w.data(), (rows as isize, 1),
                        &gcols, (p as isize, 1),
                        T::one(),
                        &mut sink.slot(xid)[i * in_plane..], (p as isize, 1),
                    );
                }
                if sink.wants(wid) {
                    T::gemm(
                        cin, p, rows, T::one(),
                        &x.data()[i * in_plane..], (p as isize, 1),
                        &gcols, (1, p as isize),
                        T::one(),
                        sink.slot(wid), (rows as isize, 1),
                    );
                }
            }
        }))
    }
}
