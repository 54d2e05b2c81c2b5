use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

/// Source taps `(i0, i1, frac)` for each output index, half-pixel centers.
fn taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Bilinear resize of `[N,C,H,W]` to `[N,C,out_h,out_w]` (align_corners = false).
    pub fn upsample_bilinear(self, out_h: usize, out_w: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let &[n, c, h, w] = x.shape() else {
            return Err(TensorError::invalid("upsample_bilinear", format!("expected rank 4, got {:?}", x.shape())));
        };
        if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
            return Err(TensorError::invalid("upsample_bilinear", "extents must be >= 1"));
        }
        if out_h == h && out_w == w {
            let id = self.id();
            return Ok(self.tape().record((*x).clone(), &[self], move |g, sink| sink.accumulate(id, g)));
        }
        let conv = |t: Vec<(usize, usize, f64)>| -> Vec<(usize, usize, T)> {
            t.into_iter().map(|(a, b, f)| (a, b, T::from_f64_lossy(f))).collect()
        };
        let ty = conv(taps(h, out_h));
        let tx = conv(taps(w, out_w));
        let planes = n * c;
        let mut out = vec![T::zero(); planes * out_h * out_w];
        let one = T::one();
        for pl in 0..planes {
            let src = &x.data()[pl * h * w..(pl + 1) * h * w];
            let dst = &mut out[pl * out_h * out_w..(pl + 1) * out_h * out_w];
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let top = src[y0 * w + x0] * (one - fx) + src[y0 * w + x1] * fx;
                    let bot = src[y1 * w + x0] * (one - fx) + src[y1 * w + x1] * fx;
                    dst[oy * out_w + ox] = top * (one - fy) + bot * fy;
                }
            }
        }
        let out = Tensor::from_vec(&[n, c, out_h, out_w], out)?;
        let id = self.id();
        Ok(self.tape().record(out, &[self], move |g, sink| {
            let gx = sink.slot(id);
            for pl in 0..planes {
                let gsrc = &g[pl * out_h * out_w..(pl + 1) * out_h * out_w];
                let dst = &mut gx[pl * h * w..(pl + 1) * h * w];
                for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                    for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                        let gv = gsrc[oy * out_w + ox];
                        let gt = gv * (one - fy);
                        let gb = gv * fy;
                        dst[y0 * w + x0] += gt * (one - fx);
                        dst[y0 * w + x1] += gt * fx;
                        dst[y1 * w + x0] += gb * (one - fx);
                        dst[y1 * w + x1] += gb * fx;
                    }
                }
            }
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;

    #[test]
    fn same_size_is_identity() {
        let tape = Tape::<f64>::new();
        let x = Tensor::from_f64(&[1, 1, 2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = tape.constant(x.clone()).upsample_bilinear(2, 3).unwrap();
        assert_eq!(*y.value(), x);
    }

    #[test]
    fn single_pixel_broadcasts() {
        let tape = Tape::<f64>::new();
        let y = tape
            .constant(Tensor::from_f64(&[1, 2, 1, 1], &[3.0, -1.0]).unwrap())
            .upsample_bilinear(4, 5)
            .unwrap()
            .value();
        assert!(y.data()[..20].iter().all(|&v| v == 3.0));
        assert!(y.data()[20..].iter().all(|&v| v == -1.0));
    }

    #[test]
    fn two_to_four_closed_form() {
        // Half-pixel centers: output rows/cols sample at -0.25 (clamped), 0.25, 0.75, 1.25 (clamped).
        let (a, b, c, d) = (1.0, 2.0, 3.0, 5.0);
        let tape = Tape::<f64>::new();
        let y = tape
            .constant(Tensor::from_f64(&[1, 1, 2, 2], &[a, b, c, d]).unwrap())
            .upsample_bilinear(4, 4)
            .unwrap()
            .value();
        let wts = [(1.0, 0.0), (0.75, 0.25), (0.25, 0.75), (0.0, 1.0)];
        for (i, &(ry0, ry1)) in wts.iter().enumerate() {
            for (j, &(rx0, rx1)) in wts.iter().enumerate() {
                let want = ry0 * (rx0 * a + rx1 * b) + ry1 * (rx0 * c + rx1 * d);
                assert!((y.data()[i * 4 + j] - want).abs() < 1e-12, "({i},{j})");
            }
        }
    }
}
