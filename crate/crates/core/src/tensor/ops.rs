//! Forward definitions and local gradients of every non-convolution op.

use super::tape::{Op, Tape};
use super::{shape_err, Real, Tensor, TensorError, Var};
use crate::par;

fn dims4(op: &'static str, s: &[usize]) -> Result<[usize; 4], TensorError> {
    s.try_into()
        .map_err(|_| shape_err(op, format!("expected [N, C, H, W], got {s:?}")))
}

fn dims2(op: &'static str, s: &[usize]) -> Result<[usize; 2], TensorError> {
    s.try_into()
        .map_err(|_| shape_err(op, format!("expected a matrix, got {s:?}")))
}

/// Sum of `g` over everything but axis 1 of `shape` (`[N, C, ...]`).
pub(super) fn channel_sum<T: Real>(g: &[T], shape: &[usize]) -> Vec<T> {
    let (n, c) = (shape[0], shape[1]);
    let inner: usize = shape[2..].iter().product();
    let mut out = vec![T::zero(); c];
    for s in 0..n {
        for (ch, o) in out.iter_mut().enumerate() {
            let base = (s * c + ch) * inner;
            *o = *o + g[base..base + inner].iter().copied().sum::<T>();
        }
    }
    out
}

impl<T: Real> Tape<T> {
    fn unary(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let v = self.value(x);
        let out = Tensor::new(v.shape(), v.data().iter().map(|&a| f(a)).collect()).unwrap();
        let rg = self.requires_grad(x);
        self.push(out, op, rg)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op<T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err(
                name,
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(va.shape(), data).unwrap();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, op, rg))
    }

    /// `max(x, 0) + slope · min(x, 0)`.
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::of(slope);
        self.unary(x, Op::LeakyRelu { x, slope: s }, |a| {
            if a > T::zero() {
                a
            } else {
                a * s
            }
        })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid { x }, |a| T::one() / (T::one() + (-a).exp()))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = T::of(c);
        self.unary(x, Op::Scale { x, c }, |a| a * c)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let c = T::of(c);
        self.unary(x, Op::AddScalar { x }, |a| a + c)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square { x }, |a| a * a)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("add", a, b, Op::Add { a, b }, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("sub", a, b, Op::Sub { a, b }, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("mul", a, b, Op::Mul { a, b }, |x, y| x * y)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        let rg = self.requires_grad(x);
        self.push(Tensor::scalar(s), Op::Sum { x }, rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().copied().sum::<T>() / T::of(v.numel() as f64);
        let rg = self.requires_grad(x);
        self.push(Tensor::scalar(s), Op::Mean { x }, rg)
    }

    /// Per-(sample, channel) standardization over spatial dims, biased variance.
    pub fn instance_norm_raw(&mut self, x: Var, eps: f64) -> Result<Var, TensorError> {
        if !(eps > 0.0) {
            return Err(TensorError::InvalidArgument {
                op: "instance_norm",
                detail: format!("eps must be positive, got {eps}"),
            });
        }
        let [n, c, h, w] = dims4("instance_norm", self.shape(x))?;
        let hw = h * w;
        let eps = T::of(eps);
        let mut out = self.value(x).data().to_vec();
        let mut inv_std = vec![T::zero(); n * c];
        let stats = par::map_range(n * c, |i| {
            let ch = &self.value(x).data()[i * hw..(i + 1) * hw];
            let m = T::of(hw as f64);
            let mean = ch.iter().copied().sum::<T>() / m;
            let var = ch.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / m;
            (mean, T::one() / (var + eps).sqrt())
        });
        par::for_each_chunk_mut(&mut out, hw, |i, ch| {
            let (mean, r) = stats[i];
            ch.iter_mut().for_each(|v| *v = (*v - mean) * r);
        });
        for (slot, (_, r)) in inv_std.iter_mut().zip(&stats) {
            *slot = *r;
        }
        let out = Tensor::new(&[n, c, h, w], out).unwrap();
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::InstanceNorm { x, inv_std }, rg))
    }

    /// `gamma[c] · x + beta[c]` along axis 1.
    pub fn channel_affine(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, TensorError> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(shape_err("channel_affine", format!("rank-1 input {s:?}")));
        }
        let c = s[1];
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(shape_err(
                "channel_affine",
                format!(
                    "gamma {:?} / beta {:?} for {c} channels",
                    self.shape(gamma),
                    self.shape(beta)
                ),
            ));
        }
        let inner: usize = s[2..].iter().product();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let ch = (i / inner) % c;
                g[ch] * v + b[ch]
            })
            .collect();
        let out = Tensor::new(&s, data).unwrap();
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(out, Op::ChannelAffine { x, gamma, beta }, rg))
    }

    /// Instance normalization followed by a learnable per-channel affine map.
    pub fn instance_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<Var, TensorError> {
        let z = self.instance_norm_raw(x, eps)?;
        self.channel_affine(z, gamma, beta)
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var, TensorError> {
        if factor == 0 {
            return Err(TensorError::InvalidArgument {
                op: "upsample_nearest",
                detail: "factor must be >= 1".into(),
            });
        }
        let [n, c, h, w] = dims4("upsample_nearest", self.shape(x))?;
        let (oh, ow) = (h * factor, w * factor);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); n * c * oh * ow];
        par::for_each_chunk_mut(&mut out, oh * ow, |plane, o| {
            let s = &src[plane * h * w..(plane + 1) * h * w];
            for y in 0..oh {
                for xx in 0..ow {
                    o[y * ow + xx] = s[(y / factor) * w + xx / factor];
                }
            }
        });
        let out = Tensor::new(&[n, c, oh, ow], out).unwrap();
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::UpsampleNearest { x, factor }, rg))
    }

    /// Replicate-edge padding by `[top, bottom, left, right]`.
    pub fn pad_edge(&mut self, x: Var, pad: [usize; 4]) -> Result<Var, TensorError> {
        let [n, c, h, w] = dims4("pad_edge", self.shape(x))?;
        let (oh, ow) = (h + pad[0] + pad[1], w + pad[2] + pad[3]);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); n * c * oh * ow];
        par::for_each_chunk_mut(&mut out, oh * ow, |plane, o| {
            let s = &src[plane * h * w..(plane + 1) * h * w];
            for y in 0..oh {
                let sy = y.saturating_sub(pad[0]).min(h - 1);
                for xx in 0..ow {
                    let sx = xx.saturating_sub(pad[2]).min(w - 1);
                    o[y * ow + xx] = s[sy * w + sx];
                }
            }
        });
        let out = Tensor::new(&[n, c, oh, ow], out).unwrap();
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::PadEdge { x, pad }, rg))
    }

    /// Spatial window `[y0, y0 + h) × [x0, x0 + w)`.
    pub fn crop(
        &mut self,
        x: Var,
        y0: usize,
        x0: usize,
        h: usize,
        w: usize,
    ) -> Result<Var, TensorError> {
        let [n, c, ih, iw] = dims4("crop", self.shape(x))?;
        if y0 + h > ih || x0 + w > iw || h == 0 || w == 0 {
            return Err(shape_err(
                "crop",
                format!("window {h}x{w} at ({y0}, {x0}) outside {ih}x{iw}"),
            ));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * h * w);
        for plane in 0..n * c {
            for y in 0..h {
                let row = plane * ih * iw + (y0 + y) * iw + x0;
                out.extend_from_slice(&src[row..row + w]);
            }
        }
        let out = Tensor::new(&[n, c, h, w], out).unwrap();
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::Crop { x, y0, x0 }, rg))
    }

    /// Picks spatial `positions` (flat `y·W + x`) from every sample of `[N, C, H, W]`,
    /// returning `[N·P, C]` with row `n·P + p`.
    pub fn gather_positions(&mut self, x: Var, positions: &[usize]) -> Result<Var, TensorError> {
        let [n, c, h, w] = dims4("gather_positions", self.shape(x))?;
        if let Some(&bad) = positions.iter().find(|&&p| p >= h * w) {
            return Err(shape_err(
                "gather_positions",
                format!("position {bad} outside {h}x{w}"),
            ));
        }
        let src = self.value(x).data();
        let p = positions.len();
        let mut out = Vec::with_capacity(n * p * c);
        for s in 0..n {
            for &pos in positions {
                out.extend((0..c).map(|ch| src[(s * c + ch) * h * w + pos]));
            }
        }
        let out = Tensor::new(&[n * p, c], out).unwrap();
        let rg = self.requires_grad(x);
        Ok(self.push(
            out,
            Op::Gather {
                x,
                positions: positions.to_vec(),
            },
            rg,
        ))
    }

    /// `x · weightᵀ + bias` for `x: [M, K]`, `weight: [O, K]`, `bias: [O]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var, TensorError> {
        let [m, k] = dims2("linear", self.shape(x))?;
        let [o, k2] = dims2("linear", self.shape(weight))?;
        if k != k2 || bias.is_some_and(|b| self.shape(b) != [o]) {
            return Err(shape_err(
                "linear",
                format!(
                    "x {:?}, weight {:?}, bias {:?}",
                    self.shape(x),
                    self.shape(weight),
                    bias.map(|b| self.shape(b).to_vec())
                ),
            ));
        }
        let mut out = match bias {
            Some(b) => {
                let bv = self.value(b).data();
                (0..m).flat_map(|_| bv.iter().copied()).collect()
            }
            None => vec![T::zero(); m * o],
        };
        T::gemm(
            m,
            k,
            o,
            self.value(x).data(),
            (k as isize, 1),
            self.value(weight).data(),
            (1, k as isize),
            T::one(),
            &mut out,
        );
        let out = Tensor::new(&[m, o], out).unwrap();
        let mut parents = vec![x, weight];
        parents.extend(bias);
        let rg = self.any_grad(&parents);
        Ok(self.push(out, Op::Linear { x, weight, bias }, rg))
    }

    /// Scales each row to unit L2 norm (norms below 1e-12 are clamped).
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        let [m, d] = dims2("l2_normalize_rows", self.shape(x))?;
        let floor = T::of(1e-12);
        let src = self.value(x).data();
        let norms: Vec<T> = (0..m)
            .map(|r| {
                let n = src[r * d..(r + 1) * d]
                    .iter()
                    .map(|&v| v * v)
                    .sum::<T>()
                    .sqrt();
                if n > floor {
                    n
                } else {
                    floor
                }
            })
            .collect();
        let data = src
            .iter()
            .enumerate()
            .map(|(i, &v)| v / norms[i / d])
            .collect();
        let out = Tensor::new(&[m, d], data).unwrap();
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::L2NormalizeRows { x, norms }, rg))
    }

    /// Block-diagonal `a · bᵀ`: rows `g·P .. (g+1)·P` of `a` against the same rows
    /// of `b`, giving `[G·P, P]`.
    pub fn group_matmul_nt(&mut self, a: Var, b: Var, group: usize) -> Result<Var, TensorError> {
        let [m, d] = dims2("group_matmul_nt", self.shape(a))?;
        if self.shape(b) != [m, d] || group == 0 || m % group != 0 {
            return Err(shape_err(
                "group_matmul_nt",
                format!(
                    "a {:?}, b {:?}, group {group}",
                    self.shape(a),
                    self.shape(b)
                ),
            ));
        }
        let mut out = vec![T::zero(); m * group];
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        for g in 0..m / group {
            let rows = g * group * d..(g + 1) * group * d;
            T::gemm(
                group,
                d,
                group,
                &av[rows.clone()],
                (d as isize, 1),
                &bv[rows],
                (1, d as isize),
                T::zero(),
                &mut out[g * group * group..(g + 1) * group * group],
            );
        }
        let out = Tensor::new(&[m, group], out).unwrap();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::GroupMatMulNt { a, b, group }, rg))
    }

    /// Mean over rows `r` of `logsumexp(L[r, :]) − L[r, r mod P]` for `L: [G·P, P]`:
    /// softmax cross-entropy whose target is the diagonal of each group.
    pub fn diag_cross_entropy(&mut self, logits: Var) -> Result<Var, TensorError> {
        let [m, p] = dims2("diag_cross_entropy", self.shape(logits))?;
        if p == 0 || m % p != 0 {
            return Err(shape_err(
                "diag_cross_entropy",
                format!("{m} rows is not a multiple of {p}"),
            ));
        }
        let l = self.value(logits).data();
        let mut softmax = vec![T::zero(); m * p];
        let mut total = T::zero();
        for r in 0..m {
            let row = &l[r * p..(r + 1) * p];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = row.iter().map(|&v| (v - max).exp()).sum();
            for (j, &v) in row.iter().enumerate() {
                softmax[r * p + j] = (v - max).exp() / z;
            }
            total = total + (max + z.ln() - row[r % p]);
        }
        let loss = total / T::of(m as f64);
        let rg = self.requires_grad(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::DiagCrossEntropy { logits, softmax },
            rg,
        ))
    }
}

/// `d loss / d parent[slot]` for non-convolution ops.
pub(super) fn backward<T: Real>(
    tape: &Tape<T>,
    op: &Op<T>,
    slot: usize,
    out: &Tensor<T>,
    g: &[T],
) -> Vec<T> {
    let val = |v: Var| tape.value(v).data();
    match op {
        Op::LeakyRelu { x, slope } => val(*x)
            .iter()
            .zip(g)
            .map(|(&a, &gi)| if a > T::zero() { gi } else { gi * *slope })
            .collect(),
        Op::Sigmoid { .. } => out
            .data()
            .iter()
            .zip(g)
            .map(|(&y, &gi)| gi * y * (T::one() - y))
            .collect(),
        Op::InstanceNorm { inv_std, .. } => {
            let s = out.shape();
            let hw = s[2] * s[3];
            let m = T::of(hw as f64);
            let y = out.data();
            let mut dx = vec![T::zero(); y.len()];
            par::for_each_chunk_mut(&mut dx, hw, |i, d| {
                let (yc, gc) = (&y[i * hw..(i + 1) * hw], &g[i * hw..(i + 1) * hw]);
                let sum_g: T = gc.iter().copied().sum();
                let sum_gy: T = gc.iter().zip(yc).map(|(&a, &b)| a * b).sum();
                let r = inv_std[i];
                for j in 0..hw {
                    d[j] = r / m * (m * gc[j] - sum_g - yc[j] * sum_gy);
                }
            });
            dx
        }
        Op::ChannelAffine { x, gamma, .. } => {
            let s = out.shape();
            let c = s[1];
            let inner: usize = s[2..].iter().product();
            match slot {
                0 => {
                    let gm = val(*gamma);
                    g.iter()
                        .enumerate()
                        .map(|(i, &gi)| gi * gm[(i / inner) % c])
                        .collect()
                }
                1 => {
                    let prod: Vec<T> = g.iter().zip(val(*x)).map(|(&a, &b)| a * b).collect();
                    channel_sum(&prod, s)
                }
                _ => channel_sum(g, s),
            }
        }
        Op::UpsampleNearest { x, factor } => {
            let s = tape.shape(*x);
            let (h, w) = (s[2], s[3]);
            let (oh, ow) = (h * factor, w * factor);
            let mut dx = vec![T::zero(); s.iter().product()];
            par::for_each_chunk_mut(&mut dx, h * w, |plane, d| {
                let go = &g[plane * oh * ow..(plane + 1) * oh * ow];
                for y in 0..oh {
                    for xx in 0..ow {
                        let k = (y / factor) * w + xx / factor;
                        d[k] = d[k] + go[y * ow + xx];
                    }
                }
            });
            dx
        }
        Op::PadEdge { x, pad } => {
            let s = tape.shape(*x);
            let (h, w) = (s[2], s[3]);
            let (oh, ow) = (out.shape()[2], out.shape()[3]);
            let mut dx = vec![T::zero(); s.iter().product()];
            par::for_each_chunk_mut(&mut dx, h * w, |plane, d| {
                let go = &g[plane * oh * ow..(plane + 1) * oh * ow];
                for y in 0..oh {
                    let sy = y.saturating_sub(pad[0]).min(h - 1);
                    for xx in 0..ow {
                        let sx = xx.saturating_sub(pad[2]).min(w - 1);
                        d[sy * w + sx] = d[sy * w + sx] + go[y * ow + xx];
                    }
                }
            });
            dx
        }
        Op::Crop { x, y0, x0 } => {
            let s = tape.shape(*x);
            let (ih, iw) = (s[2], s[3]);
            let (h, w) = (out.shape()[2], out.shape()[3]);
            let mut dx = vec![T::zero(); s.iter().product()];
            for plane in 0..s[0] * s[1] {
                for y in 0..h {
                    let dst = plane * ih * iw + (y0 + y) * iw + x0;
                    let src = (plane * h + y) * w;
                    dx[dst..dst + w].copy_from_slice(&g[src..src + w]);
                }
            }
            dx
        }
        Op::Add { .. } => g.to_vec(),
        Op::Sub { .. } => {
            if slot == 0 {
                g.to_vec()
            } else {
                g.iter().map(|&v| -v).collect()
            }
        }
        Op::Mul { a, b } => {
            let other = if slot == 0 { val(*b) } else { val(*a) };
            g.iter().zip(other).map(|(&gi, &o)| gi * o).collect()
        }
        Op::Scale { c, .. } => g.iter().map(|&v| v * *c).collect(),
        Op::AddScalar { .. } => g.to_vec(),
        Op::Square { x } => val(*x)
            .iter()
            .zip(g)
            .map(|(&a, &gi)| T::of(2.0) * a * gi)
            .collect(),
        Op::Sum { x } => vec![g[0]; tape.value(*x).numel()],
        Op::Mean { x } => {
            let n = tape.value(*x).numel();
            vec![g[0] / T::of(n as f64); n]
        }
        Op::Gather { x, positions } => {
            let s = tape.shape(*x);
            let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
            let p = positions.len();
            let mut dx = vec![T::zero(); n * c * hw];
            for sample in 0..n {
                for (pi, &pos) in positions.iter().enumerate() {
                    let row = (sample * p + pi) * c;
                    for ch in 0..c {
                        let k = (sample * c + ch) * hw + pos;
                        dx[k] = dx[k] + g[row + ch];
                    }
                }
            }
            dx
        }
        Op::Linear { x, weight, .. } => {
            let (m, k) = (tape.shape(*x)[0], tape.shape(*x)[1]);
            let o = tape.shape(*weight)[0];
            match slot {
                0 => {
                    let mut dx = vec![T::zero(); m * k];
                    T::gemm(
                        m,
                        o,
                        k,
                        g,
                        (o as isize, 1),
                        val(*weight),
                        (k as isize, 1),
                        T::zero(),
                        &mut dx,
                    );
                    dx
                }
                1 => {
                    let mut dw = vec![T::zero(); o * k];
                    T::gemm(
                        o,
                        m,
                        k,
                        g,
                        (1, o as isize),
                        val(*x),
                        (k as isize, 1),
                        T::zero(),
                        &mut dw,
                    );
                    dw
                }
                _ => (0..o)
                    .map(|j| (0..m).map(|r| g[r * o + j]).sum::<T>())
                    .collect(),
            }
        }
        Op::L2NormalizeRows { norms, .. } => {
            let d = out.shape()[1];
            let y = out.data();
            let mut dx = vec![T::zero(); y.len()];
            for (r, &n) in norms.iter().enumerate() {
                let (yr, gr) = (&y[r * d..(r + 1) * d], &g[r * d..(r + 1) * d]);
                let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                // clamped norms make the map linear there
                let clamped = n <= T::of(1e-12);
                for j in 0..d {
                    dx[r * d + j] = if clamped {
                        gr[j] / n
                    } else {
                        (gr[j] - yr[j] * dot) / n
                    };
                }
            }
            dx
        }
        Op::GroupMatMulNt { a, b, group } => {
            let p = *group;
            let (m, d) = (tape.shape(*a)[0], tape.shape(*a)[1]);
            let other = if slot == 0 { val(*b) } else { val(*a) };
            let mut dx = vec![T::zero(); m * d];
            for gi in 0..m / p {
                let gblock = &g[gi * p * p..(gi + 1) * p * p];
                let rows = gi * p * d..(gi + 1) * p * d;
                // slot 0: G · B_g ; slot 1: Gᵀ · A_g
                let gs = if slot == 0 {
                    (p as isize, 1)
                } else {
                    (1, p as isize)
                };
                T::gemm(
                    p,
                    p,
                    d,
                    gblock,
                    gs,
                    &other[rows.clone()],
                    (d as isize, 1),
                    T::zero(),
                    &mut dx[rows],
                );
            }
            dx
        }
        Op::DiagCrossEntropy { logits, softmax } => {
            let p = tape.shape(*logits)[1];
            let m = softmax.len() / p;
            let scale = g[0] / T::of(m as f64);
            softmax
                .iter()
                .enumerate()
                .map(|(i, &s)| {
                    let (r, j) = (i / p, i % p);
                    let target = if j == r % p { T::one() } else { T::zero() };
                    (s - target) * scale
                })
                .collect()
        }
        Op::Leaf | Op::Conv2d { .. } => unreachable!("handled by the tape"),
    }
}
