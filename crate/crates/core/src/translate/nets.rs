use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{DiscriminatorSpec, GeneratorSpec, TranslateError};
use crate::tensor::{Real, Tape, Tensor, Var};

const INIT_STD: f64 = 0.02;
const NORM_EPS: f64 = 1e-5;

/// Named parameter tensors of one network, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    pub names: Vec<String>,
    pub values: Vec<Tensor<T>>,
}

impl<T: Real> ParamSet<T> {
    fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    fn add(&mut self, name: String, t: Tensor<T>) -> usize {
        self.names.push(name);
        self.values.push(t);
        self.values.len() - 1
    }

    fn normal(&mut self, name: String, shape: &[usize], rng: &mut impl Rng) -> usize {
        let d = Normal::new(0.0, INIT_STD).unwrap();
        let t = Tensor::from_fn(shape, |_| T::of(d.sample(rng)));
        self.add(name, t)
    }

    /// Records every parameter as a leaf.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.values
            .iter()
            .map(|v| tape.leaf(v.clone(), trainable))
            .collect()
    }

    pub fn count(&self) -> usize {
        self.values.iter().map(|v| v.numel()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Conv {
    w: usize,
    b: usize,
    stride: usize,
    pad: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Norm {
    gamma: usize,
    beta: usize,
}

fn add_conv<T: Real>(
    p: &mut ParamSet<T>,
    name: &str,
    [f, c, k]: [usize; 3],
    stride: usize,
    pad: usize,
    rng: &mut impl Rng,
) -> Conv {
    Conv {
        w: p.normal(format!("{name}.w"), &[f, c, k, k], rng),
        b: p.add(format!("{name}.b"), Tensor::zeros(&[f])),
        stride,
        pad,
    }
}

fn add_norm<T: Real>(p: &mut ParamSet<T>, name: &str, c: usize) -> Norm {
    Norm {
        gamma: p.add(format!("{name}.gamma"), Tensor::full(&[c], T::one())),
        beta: p.add(format!("{name}.beta"), Tensor::zeros(&[c])),
    }
}

fn conv<T: Real>(t: &mut Tape<T>, v: &[Var], c: Conv, x: Var) -> Result<Var, TranslateError> {
    Ok(t.conv2d(x, v[c.w], Some(v[c.b]), c.stride, c.pad)?)
}

fn norm<T: Real>(t: &mut Tape<T>, v: &[Var], n: Norm, x: Var) -> Result<Var, TranslateError> {
    Ok(t.instance_norm(x, v[n.gamma], v[n.beta], NORM_EPS)?)
}

fn conv_norm_relu<T: Real>(
    t: &mut Tape<T>,
    v: &[Var],
    c: Conv,
    n: Norm,
    x: Var,
) -> Result<Var, TranslateError> {
    let y = conv(t, v, c, x)?;
    let y = norm(t, v, n, y)?;
    Ok(t.relu(y))
}

/// Generator forward result.
#[derive(Debug, Clone)]
pub struct GenOutput {
    /// `[N, 1, H, W]` in `[0, 1]`.
    pub image: Var,
    /// Encoder features for each of `spec.nce_layers`, in order.
    pub features: Vec<Var>,
}

/// Residual encoder/decoder with a sigmoid output.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator<T> {
    pub spec: GeneratorSpec,
    pub params: ParamSet<T>,
    stem: (Conv, Norm),
    down: Vec<(Conv, Norm)>,
    res: Vec<[(Conv, Norm); 2]>,
    up: Vec<(Conv, Norm)>,
    head: Conv,
}

impl<T: Real> Generator<T> {
    pub fn new(spec: &GeneratorSpec, rng: &mut impl Rng) -> Result<Self, TranslateError> {
        spec.validate()?;
        let mut p = ParamSet::new();
        let b = spec.base_channels;
        let stem = (
            add_conv(&mut p, "stem", [b, 1, 7], 1, 3, rng),
            add_norm(&mut p, "stem.in", b),
        );
        let mut c = b;
        let down = (0..spec.n_downsamples)
            .map(|i| {
                let l = (
                    add_conv(&mut p, &format!("down{i}"), [2 * c, c, 4], 2, 1, rng),
                    add_norm(&mut p, &format!("down{i}.in"), 2 * c),
                );
                c *= 2;
                l
            })
            .collect();
        let res = (0..spec.n_resblocks)
            .map(|i| {
                [0, 1].map(|j| {
                    (
                        add_conv(&mut p, &format!("res{i}.{j}"), [c, c, 3], 1, 1, rng),
                        add_norm(&mut p, &format!("res{i}.{j}.in"), c),
                    )
                })
            })
            .collect();
        let up = (0..spec.n_downsamples)
            .map(|i| {
                let l = (
                    add_conv(&mut p, &format!("up{i}"), [c / 2, c, 3], 1, 1, rng),
                    add_norm(&mut p, &format!("up{i}.in"), c / 2),
                );
                c /= 2;
                l
            })
            .collect();
        let head = add_conv(&mut p, "head", [1, c, 7], 1, 3, rng);
        if spec.input_skip {
            p.values[head.w] = Tensor::zeros(p.values[head.w].shape());
        }
        Ok(Self {
            spec: spec.clone(),
            params: p,
            stem,
            down,
            res,
            up,
            head,
        })
    }

    /// Rebuilds the layer layout for `spec` around existing parameter values.
    pub fn from_params(
        spec: &GeneratorSpec,
        values: Vec<Tensor<T>>,
    ) -> Result<Self, TranslateError> {
        let mut g = Self::new(spec, &mut crate::seed::rng(0))?;
        check_shapes(&g.params, &values)?;
        g.params.values = values;
        Ok(g)
    }

    fn pad_amounts(&self, h: usize, w: usize) -> [usize; 4] {
        let m = self.spec.stride_multiple();
        let (ph, pw) = ((m - h % m) % m, (m - w % m) % m);
        [ph / 2, ph - ph / 2, pw / 2, pw - pw / 2]
    }

    /// Encoder only; returns the features of `nce_layers` (or all layers up to the
    /// last one requested). `x` is `[N, 1, H, W]` in `[0, 1]`, already padded.
    fn encode(
        &self,
        t: &mut Tape<T>,
        v: &[Var],
        x: Var,
        stop_early: bool,
    ) -> Result<(Var, Vec<Var>), TranslateError> {
        let last = *self.spec.nce_layers.last().unwrap();
        let mut feats = Vec::with_capacity(self.spec.nce_layers.len());
        let keep = |layer: usize, y: Var, feats: &mut Vec<Var>| {
            if self.spec.nce_layers.contains(&layer) {
                feats.push(y);
            }
            stop_early && layer == last
        };
        let centred = t.scale(x, 2.0);
        let centred = t.add_scalar(centred, -1.0);
        let mut y = conv_norm_relu(t, v, self.stem.0, self.stem.1, centred)?;
        let mut layer = 0;
        if keep(layer, y, &mut feats) {
            return Ok((y, feats));
        }
        for &(c, n) in &self.down {
            y = conv_norm_relu(t, v, c, n, y)?;
            layer += 1;
            if keep(layer, y, &mut feats) {
                return Ok((y, feats));
            }
        }
        for [(c1, n1), (c2, n2)] in &self.res {
            let h = conv_norm_relu(t, v, *c1, *n1, y)?;
            let h = conv(t, v, *c2, h)?;
            let h = norm(t, v, *n2, h)?;
            y = t.add(y, h)?;
            layer += 1;
            if keep(layer, y, &mut feats) {
                return Ok((y, feats));
            }
        }
        Ok((y, feats))
    }

    /// Full forward pass on `[N, 1, H, W]` inputs in `[0, 1]` of any size.
    pub fn forward(&self, t: &mut Tape<T>, v: &[Var], x: Var) -> Result<GenOutput, TranslateError> {
        let s = t.shape(x).to_vec();
        if s.len() != 4 || s[1] != 1 {
            return Err(TranslateError::Tensor(crate::tensor::TensorError::Shape {
                op: "generator",
                detail: format!("expected [N, 1, H, W], got {s:?}"),
            }));
        }
        let (h, w) = (s[2], s[3]);
        let pad = self.pad_amounts(h, w);
        let xp = if pad == [0; 4] {
            x
        } else {
            t.pad_edge(x, pad)?
        };
        let (mut y, features) = self.encode(t, v, xp, false)?;
        for &(c, n) in &self.up {
            y = t.upsample_nearest(y, 2)?;
            y = conv_norm_relu(t, v, c, n, y)?;
        }
        let mut logits = conv(t, v, self.head, y)?;
        if self.spec.input_skip {
            let inp = t.value(xp).clone();
            let eps = T::of(1e-3);
            let lg = Tensor::new(
                inp.shape(),
                inp.data()
                    .iter()
                    .map(|&p| {
                        let p = p.max(eps).min(T::one() - eps);
                        (p / (T::one() - p)).ln()
                    })
                    .collect(),
            )?;
            let lg = t.constant(lg);
            logits = t.add(logits, lg)?;
        }
        let mut out = t.sigmoid(logits);
        if pad != [0; 4] {
            out = t.crop(out, pad[0], pad[2], h, w)?;
        }
        Ok(GenOutput {
            image: out,
            features,
        })
    }

    /// Encoder features of `nce_layers` for an unpadded input whose extents are
    /// already multiples of [`GeneratorSpec::stride_multiple`].
    pub fn encode_features(
        &self,
        t: &mut Tape<T>,
        v: &[Var],
        x: Var,
    ) -> Result<Vec<Var>, TranslateError> {
        let s = t.shape(x).to_vec();
        let pad = self.pad_amounts(s[2], s[3]);
        let xp = if pad == [0; 4] {
            x
        } else {
            t.pad_edge(x, pad)?
        };
        Ok(self.encode(t, v, xp, true)?.1)
    }
}

/// PatchGAN: strided 4×4 convolutions with leaky ReLU, then a 3×3 convolution to a
/// one-channel map of realness scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator<T> {
    pub spec: DiscriminatorSpec,
    pub params: ParamSet<T>,
    layers: Vec<(Conv, Option<Norm>)>,
    out: Conv,
}

impl<T: Real> Discriminator<T> {
    pub fn new(spec: &DiscriminatorSpec, rng: &mut impl Rng) -> Result<Self, TranslateError> {
        spec.validate()?;
        let mut p = ParamSet::new();
        let mut c_in = 1;
        let mut c = spec.base_channels;
        let layers = (0..spec.n_layers)
            .map(|i| {
                let conv = add_conv(&mut p, &format!("d{i}"), [c, c_in, 4], 2, 1, rng);
                let norm = (i > 0).then(|| add_norm(&mut p, &format!("d{i}.in"), c));
                c_in = c;
                c = (c * 2).min(spec.base_channels * 8);
                (conv, norm)
            })
            .collect();
        let out = add_conv(&mut p, "dout", [1, c_in, 3], 1, 1, rng);
        Ok(Self {
            spec: spec.clone(),
            params: p,
            layers,
            out,
        })
    }

    pub fn from_params(
        spec: &DiscriminatorSpec,
        values: Vec<Tensor<T>>,
    ) -> Result<Self, TranslateError> {
        let mut d = Self::new(spec, &mut crate::seed::rng(0))?;
        check_shapes(&d.params, &values)?;
        d.params.values = values;
        Ok(d)
    }

    /// `[N, 1, H, W]` → `[N, 1, H / 2^n, W / 2^n]` scores.
    pub fn forward(&self, t: &mut Tape<T>, v: &[Var], x: Var) -> Result<Var, TranslateError> {
        let y = t.scale(x, 2.0);
        let mut y = t.add_scalar(y, -1.0);
        for &(c, n) in &self.layers {
            y = conv(t, v, c, y)?;
            if let Some(n) = n {
                y = norm(t, v, n, y)?;
            }
            y = t.leaky_relu(y, 0.2);
        }
        conv(t, v, self.out, y)
    }
}

/// One Linear → ReLU → Linear projection per NCE layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHeads<T> {
    pub params: ParamSet<T>,
    pub dim: usize,
    /// `(w1, b1, w2, b2)` parameter indices per head.
    heads: Vec<[usize; 4]>,
}

impl<T: Real> ProjectionHeads<T> {
    /// Heads for the given input channel counts.
    pub fn new(in_channels: &[usize], dim: usize, rng: &mut impl Rng) -> Self {
        let mut p = ParamSet::new();
        let heads = in_channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                [
                    p.normal(format!("head{i}.w1"), &[dim, c], rng),
                    p.add(format!("head{i}.b1"), Tensor::zeros(&[dim])),
                    p.normal(format!("head{i}.w2"), &[dim, dim], rng),
                    p.add(format!("head{i}.b2"), Tensor::zeros(&[dim])),
                ]
            })
            .collect();
        Self {
            params: p,
            dim,
            heads,
        }
    }

    pub fn for_generator(spec: &GeneratorSpec, dim: usize, rng: &mut impl Rng) -> Self {
        let chans: Vec<usize> = spec
            .nce_layers
            .iter()
            .map(|&l| spec.layer_channels(l))
            .collect();
        Self::new(&chans, dim, rng)
    }

    pub fn from_params(
        in_channels: &[usize],
        dim: usize,
        values: Vec<Tensor<T>>,
    ) -> Result<Self, TranslateError> {
        let mut h = Self::new(in_channels, dim, &mut crate::seed::rng(0));
        check_shapes(&h.params, &values)?;
        h.params.values = values;
        Ok(h)
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    /// Applies head `i` to `[M, C]` rows, returning `[M, dim]` (not normalized).
    pub fn project(
        &self,
        t: &mut Tape<T>,
        v: &[Var],
        i: usize,
        x: Var,
    ) -> Result<Var, TranslateError> {
        let [w1, b1, w2, b2] = self.heads[i];
        let h = t.linear(x, v[w1], Some(v[b1]))?;
        let h = t.relu(h);
        Ok(t.linear(h, v[w2], Some(v[b2]))?)
    }
}

fn check_shapes<T: Real>(
    expected: &ParamSet<T>,
    values: &[Tensor<T>],
) -> Result<(), TranslateError> {
    if expected.values.len() != values.len() {
        return Err(TranslateError::Checkpoint(format!(
            "expected {} tensors, found {}",
            expected.values.len(),
            values.len()
        )));
    }
    for ((name, e), v) in expected.names.iter().zip(&expected.values).zip(values) {
        if e.shape() != v.shape() {
            return Err(TranslateError::Checkpoint(format!(
                "{name}: expected shape {:?}, found {:?}",
                e.shape(),
                v.shape()
            )));
        }
    }
    Ok(())
}
