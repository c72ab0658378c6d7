//! 2-D cross-correlation via blocked im2col + GEMM.
//!
//! Output positions are split into fixed-size blocks that are processed
//! independently; the block size does not depend on the thread count, and
//! cross-block reductions run sequentially in block order.

use super::tape::{Op, Tape};
use super::{shape_err, Real, TensorError, Var};
use crate::par;

const BLOCK: usize = 128;

/// `(input + 2·pad − kernel) / stride + 1`, requiring exact division.
pub fn conv_output_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Result<usize, TensorError> {
    if stride == 0 {
        return Err(TensorError::InvalidArgument {
            op: "conv2d",
            detail: "stride must be >= 1".into(),
        });
    }
    let padded = input + 2 * pad;
    if kernel == 0 || kernel > padded {
        return Err(shape_err(
            "conv2d",
            format!("kernel {kernel} does not fit padded extent {padded}"),
        ));
    }
    if (padded - kernel) % stride != 0 {
        return Err(TensorError::NonIntegralExtent {
            input,
            pad,
            kernel,
            stride,
        });
    }
    Ok((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl Geom {
    fn ckk(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Input offset feeding output position `p` through column `k`, if inside.
    #[inline]
    fn source(&self, p: usize, k: usize) -> Option<usize> {
        let (oy, ox) = (p / self.ow, p % self.ow);
        let ch = k / (self.kh * self.kw);
        let (ky, kx) = ((k / self.kw) % self.kh, k % self.kw);
        let y = (oy * self.stride + ky).checked_sub(self.pad)?;
        let x = (ox * self.stride + kx).checked_sub(self.pad)?;
        (y < self.h && x < self.w).then(|| (ch * self.h + y) * self.w + x)
    }

    /// Rows `p0..p0+b` of the `[positions, C·kh·kw]` patch matrix of one sample.
    fn im2col<T: Real>(&self, sample: &[T], p0: usize, b: usize) -> Vec<T> {
        let ckk = self.ckk();
        let mut cols = vec![T::zero(); b * ckk];
        for r in 0..b {
            for k in 0..ckk {
                if let Some(i) = self.source(p0 + r, k) {
                    cols[r * ckk + k] = sample[i];
                }
            }
        }
        cols
    }
}

fn blocks(n: usize, positions: usize) -> Vec<(usize, usize, usize)> {
    (0..n)
        .flat_map(|s| {
            (0..positions)
                .step_by(BLOCK)
                .map(move |p0| (s, p0, BLOCK.min(positions - p0)))
        })
        .collect()
}

impl<T: Real> Tape<T> {
    /// Cross-correlation of `input: [N, C, H, W]` with `weight: [F, C, kh, kw]`,
    /// zero padding `pad` on every side.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var, TensorError> {
        let (is, ws) = (self.shape(input), self.shape(weight));
        let ([n, c, h, w], [f, wc, kh, kw]) = match (is.try_into(), ws.try_into()) {
            (Ok(a), Ok(b)) => (a, b),
            _ => return Err(shape_err("conv2d", format!("input {is:?}, weight {ws:?}"))),
        };
        if c != wc {
            return Err(shape_err(
                "conv2d",
                format!("input has {c} channels, weight expects {wc}"),
            ));
        }
        if let Some(b) = bias {
            if self.shape(b) != [f] {
                return Err(shape_err(
                    "conv2d",
                    format!("bias {:?} for {f} filters", self.shape(b)),
                ));
            }
        }
        let oh = conv_output_extent(h, kh, stride, pad)?;
        let ow = conv_output_extent(w, kw, stride, pad)?;
        let g = Geom {
            c,
            h,
            w,
            kh,
            kw,
            oh,
            ow,
            stride,
            pad,
        };
        let out = conv2d_forward(
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            n,
            f,
            g,
        );
        let out = super::Tensor::new(&[n, f, oh, ow], out).unwrap();
        let mut parents = vec![input, weight];
        parents.extend(bias);
        let rg = self.any_grad(&parents);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            },
            rg,
        ))
    }
}

fn conv2d_forward<T: Real>(
    x: &[T],
    wt: &[T],
    bias: Option<&[T]>,
    n: usize,
    f: usize,
    g: Geom,
) -> Vec<T> {
    let (ckk, np, plane) = (g.ckk(), g.positions(), g.c * g.h * g.w);
    let parts = par::map_slice(&blocks(n, np), |&(s, p0, b)| {
        let cols = g.im2col(&x[s * plane..(s + 1) * plane], p0, b);
        // [b, F] = cols · Wᵀ
        let mut o = vec![T::zero(); b * f];
        T::gemm(
            b,
            ckk,
            f,
            &cols,
            (ckk as isize, 1),
            wt,
            (1, ckk as isize),
            T::zero(),
            &mut o,
        );
        o
    });
    let mut out = vec![T::zero(); n * f * np];
    for (&(s, p0, b), o) in blocks(n, np).iter().zip(parts) {
        for r in 0..b {
            for j in 0..f {
                let bj = bias.map_or(T::zero(), |bv| bv[j]);
                out[(s * f + j) * np + p0 + r] = o[r * f + j] + bj;
            }
        }
    }
    out
}

/// Gradients w.r.t. `(input, weight)` of a recorded convolution given the upstream
/// gradient `g` of shape `out_shape`. Entries are `None` where `wants` is false.
pub(super) fn conv2d_backward<T: Real>(
    input: &super::Tensor<T>,
    weight: &super::Tensor<T>,
    out_shape: &[usize],
    g: &[T],
    stride: usize,
    pad: usize,
    wants: [bool; 2],
) -> [Option<Vec<T>>; 2] {
    let [n, c, h, w]: [usize; 4] = input.shape().try_into().unwrap();
    let [f, _, kh, kw]: [usize; 4] = weight.shape().try_into().unwrap();
    let (oh, ow) = (out_shape[2], out_shape[3]);
    let geom = Geom {
        c,
        h,
        w,
        kh,
        kw,
        oh,
        ow,
        stride,
        pad,
    };
    let (ckk, np, plane) = (geom.ckk(), geom.positions(), c * h * w);
    let x = input.data();
    let wt = weight.data();
    let bl = blocks(n, np);

    let dw = wants[1].then(|| {
        let parts = par::map_slice(&bl, |&(s, p0, b)| {
            let cols = geom.im2col(&x[s * plane..(s + 1) * plane], p0, b);
            // [F, ckk] = gᵀ_block [F, b] · cols [b, ckk]
            let gb = &g[s * f * np + p0..];
            let mut d = vec![T::zero(); f * ckk];
            T::gemm(
                f,
                b,
                ckk,
                gb,
                (np as isize, 1),
                &cols,
                (ckk as isize, 1),
                T::zero(),
                &mut d,
            );
            d
        });
        let mut acc = vec![T::zero(); f * ckk];
        for p in parts {
            acc.iter_mut().zip(&p).for_each(|(a, v)| *a = *a + *v);
        }
        acc
    });

    let dx = wants[0].then(|| {
        let mut dx = vec![T::zero(); n * plane];
        // every sample is scattered by one closure, blocks in order
        par::for_each_chunk_mut(&mut dx, plane, |s, d| {
            for p0 in (0..np).step_by(BLOCK) {
                let b = BLOCK.min(np - p0);
                // [b, ckk] = g_block [b, F] · W [F, ckk]
                let gb = &g[s * f * np + p0..];
                let mut dcol = vec![T::zero(); b * ckk];
                T::gemm(
                    b,
                    f,
                    ckk,
                    gb,
                    (1, np as isize),
                    wt,
                    (ckk as isize, 1),
                    T::zero(),
                    &mut dcol,
                );
                for r in 0..b {
                    for k in 0..ckk {
                        if let Some(i) = geom.source(p0 + r, k) {
                            d[i] = d[i] + dcol[r * ckk + k];
                        }
                    }
                }
            }
        });
        dx
    });
    [dx, dw]
}
