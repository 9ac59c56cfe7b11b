//! Reverse-mode tape.
//!
//! Every op evaluates eagerly and records its inputs; [`Graph::backward`]
//! walks the tape in reverse creation order. Leaves created with
//! [`Graph::leaf`] receive gradients, constants do not, and ops whose inputs
//! are all constant are skipped during the backward sweep.

use std::cell::{Ref, RefCell};

use crate::kernels::{col2im, gemm, im2col, ConvGeom};
use crate::tensor::{Real, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, Real),
    AddScalar(Var),
    Relu(Var),
    LeakyRelu(Var, Real),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    LogClamped(Var, Real),
    Abs(Var),
    Square(Var),
    MulSpatial(Var, Var),
    ScaleChannels(Var, Var),
    ShiftChannels(Var, Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    SoftmaxChannels(Var),
    InstanceNorm {
        x: Var,
        inv_std: Vec<Real>,
    },
    BatchNorm {
        x: Var,
        inv_std: Vec<Real>,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    Upsample2(Var),
    ConcatChannels(Var, Var),
    MeanSpatial(Var),
    Reshape(Var),
    Sum(Var),
    StraightThrough(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// A single-use computation tape. Build one per forward/backward pass.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients of a scalar with respect to the leaves of a [`Graph`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of `shape` when `v` did not influence the loss.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn spatial(shape: &[usize]) -> usize {
    shape[2..].iter().product::<usize>().max(1)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].needs_grad
    }

    /// A value that never receives gradient.
    pub fn constant(&self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A differentiable leaf (parameter or input of interest).
    pub fn leaf(&self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    fn unary(&self, a: Var, f: impl Fn(Real) -> Real, op: Op) -> Var {
        let value = self.value(a).map(f);
        let needs = self.needs(a);
        self.push(value, op, needs)
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(&self.value(b), |x, y| x + y);
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), needs)
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(&self.value(b), |x, y| x - y);
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Sub(a, b), needs)
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(&self.value(b), |x, y| x * y);
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Mul(a, b), needs)
    }

    pub fn scale(&self, a: Var, s: Real) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&self, a: Var, s: Real) -> Var {
        self.unary(a, |x| x + s, Op::AddScalar(a))
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn leaky_relu(&self, a: Var, slope: Real) -> Var {
        self.unary(
            a,
            |x| if x > 0.0 { x } else { slope * x },
            Op::LeakyRelu(a, slope),
        )
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, Real::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, Real::exp, Op::Exp(a))
    }

    /// `ln(max(x, floor))`; gradient is zero below the floor.
    pub fn log_clamped(&self, a: Var, floor: Real) -> Var {
        self.unary(a, |x| x.max(floor).ln(), Op::LogClamped(a, floor))
    }

    pub fn abs(&self, a: Var) -> Var {
        self.unary(a, Real::abs, Op::Abs(a))
    }

    pub fn square(&self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// `x[N,C,...] * m[N,1,...]`, the mask broadcast over channels.
    pub fn mul_spatial(&self, x: Var, m: Var) -> Var {
        let value = {
            let xv = self.value(x);
            let mv = self.value(m);
            let (n, c) = (xv.dim(0), xv.dim(1));
            let s = spatial(xv.shape());
            assert_eq!(mv.len(), n * s, "mul_spatial mask must be [N,1,...]");
            let mut out = xv.clone();
            let od = out.data_mut();
            let md = mv.data();
            for i in 0..n {
                let mrow = &md[i * s..(i + 1) * s];
                for ch in 0..c {
                    let base = (i * c + ch) * s;
                    for (o, &mm) in od[base..base + s].iter_mut().zip(mrow) {
                        *o *= mm;
                    }
                }
            }
            out
        };
        let needs = self.needs(x) || self.needs(m);
        self.push(value, Op::MulSpatial(x, m), needs)
    }

    fn channel_factor_index(xs: &[usize], factor_len: usize) -> bool {
        let (n, c) = (xs[0], xs[1]);
        if factor_len == c {
            false
        } else {
            assert_eq!(factor_len, n * c, "channel factor must be [C] or [N,C]");
            true
        }
    }

    /// Multiply channel `c` of sample `n` by `s[c]` (shape `[C]`) or
    /// `s[n, c]` (shape `[N, C]`).
    pub fn scale_channels(&self, x: Var, s: Var) -> Var {
        let value = {
            let xv = self.value(x);
            let sv = self.value(s);
            let per_sample = Self::channel_factor_index(xv.shape(), sv.len());
            let (n, c) = (xv.dim(0), xv.dim(1));
            let sp = spatial(xv.shape());
            let mut out = xv.clone();
            let od = out.data_mut();
            for i in 0..n {
                for ch in 0..c {
                    let f = sv.data()[if per_sample { i * c + ch } else { ch }];
                    for o in &mut od[(i * c + ch) * sp..(i * c + ch + 1) * sp] {
                        *o *= f;
                    }
                }
            }
            out
        };
        let needs = self.needs(x) || self.needs(s);
        self.push(value, Op::ScaleChannels(x, s), needs)
    }

    /// Add `b[c]` (shape `[C]`) or `b[n, c]` (shape `[N, C]`) to each channel.
    pub fn shift_channels(&self, x: Var, b: Var) -> Var {
        let value = {
            let xv = self.value(x);
            let bv = self.value(b);
            let per_sample = Self::channel_factor_index(xv.shape(), bv.len());
            let (n, c) = (xv.dim(0), xv.dim(1));
            let sp = spatial(xv.shape());
            let mut out = xv.clone();
            let od = out.data_mut();
            for i in 0..n {
                for ch in 0..c {
                    let f = bv.data()[if per_sample { i * c + ch } else { ch }];
                    for o in &mut od[(i * c + ch) * sp..(i * c + ch + 1) * sp] {
                        *o += f;
                    }
                }
            }
            out
        };
        let needs = self.needs(x) || self.needs(b);
        self.push(value, Op::ShiftChannels(x, b), needs)
    }

    /// 2D convolution: `x[N,C,H,W]`, `w[O,C,KH,KW]`, optional `b[O]`.
    pub fn conv2d(&self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let value = {
            let xv = self.value(x);
            let wv = self.value(w);
            let xs = xv.shape();
            let ws = wv.shape();
            assert_eq!(xs.len(), 4, "conv2d input must be NCHW");
            assert_eq!(xs[1], ws[1], "conv2d channel mismatch: {xs:?} vs {ws:?}");
            let geom = ConvGeom {
                channels: xs[1],
                height: xs[2],
                width: xs[3],
                kernel_h: ws[2],
                kernel_w: ws[3],
                stride,
                pad,
            };
            let (n, o) = (xs[0], ws[0]);
            let (oh, ow) = (geom.out_h(), geom.out_w());
            let plane = oh * ow;
            let in_len = xs[1] * xs[2] * xs[3];
            let mut out = Tensor::zeros(&[n, o, oh, ow]);
            let mut cols = if geom.is_pointwise() {
                Vec::new()
            } else {
                vec![0.0; geom.col_rows() * plane]
            };
            for i in 0..n {
                let xi = &xv.data()[i * in_len..(i + 1) * in_len];
                let src: &[Real] = if geom.is_pointwise() {
                    xi
                } else {
                    im2col(xi, &geom, &mut cols);
                    &cols
                };
                let dst = &mut out.data_mut()[i * o * plane..(i + 1) * o * plane];
                gemm(o, geom.col_rows(), plane, wv.data(), false, src, false, 0.0, dst);
            }
            if let Some(b) = b {
                let bv = self.value(b);
                for (idx, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
                    let bias = bv.data()[idx % o];
                    for v in chunk {
                        *v += bias;
                    }
                }
            }
            out
        };
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        self.push(
            value,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
            needs,
        )
    }

    /// `x[N,D] * w[O,D]^T + b[O]`.
    pub fn linear(&self, x: Var, w: Var, b: Option<Var>) -> Var {
        let value = {
            let xv = self.value(x);
            let wv = self.value(w);
            let (n, d) = (xv.dim(0), xv.len() / xv.dim(0));
            let o = wv.dim(0);
            assert_eq!(wv.len(), o * d, "linear weight/input mismatch");
            let mut out = Tensor::zeros(&[n, o]);
            gemm(n, d, o, xv.data(), false, wv.data(), true, 0.0, out.data_mut());
            if let Some(b) = b {
                let bv = self.value(b);
                for row in out.data_mut().chunks_mut(o) {
                    for (v, bb) in row.iter_mut().zip(bv.data()) {
                        *v += bb;
                    }
                }
            }
            out
        };
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        self.push(value, Op::Linear { x, w, b }, needs)
    }

    /// Softmax across axis 1 (channels), independently per sample and site.
    pub fn softmax_channels(&self, x: Var) -> Var {
        let value = {
            let xv = self.value(x);
            softmax_channels_value(&xv)
        };
        let needs = self.needs(x);
        self.push(value, Op::SoftmaxChannels(x), needs)
    }

    /// Normalize each (sample, channel) plane to zero mean and unit
    /// (biased) variance.
    pub fn instance_norm(&self, x: Var, eps: Real) -> Var {
        let (value, inv_std) = {
            let xv = self.value(x);
            let (n, c) = (xv.dim(0), xv.dim(1));
            let sp = spatial(xv.shape());
            let mut out = xv.clone();
            let mut inv_std = Vec::with_capacity(n * c);
            for plane in out.data_mut().chunks_mut(sp) {
                let mean = plane.iter().sum::<Real>() / sp as Real;
                let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / sp as Real;
                let r = 1.0 / (var + eps).sqrt();
                for v in plane.iter_mut() {
                    *v = (*v - mean) * r;
                }
                inv_std.push(r);
            }
            (out, inv_std)
        };
        let needs = self.needs(x);
        self.push(value, Op::InstanceNorm { x, inv_std }, needs)
    }

    /// Batch normalization with batch statistics (training mode).
    ///
    /// Returns the normalized output together with the per-channel batch
    /// mean and biased variance, for running-statistics bookkeeping.
    pub fn batch_norm(&self, x: Var, eps: Real) -> (Var, Vec<Real>, Vec<Real>) {
        let (value, inv_std, means, vars) = {
            let xv = self.value(x);
            let (n, c) = (xv.dim(0), xv.dim(1));
            let sp = spatial(xv.shape());
            let count = (n * sp) as Real;
            let mut means = vec![0.0; c];
            let mut vars = vec![0.0; c];
            for i in 0..n {
                for ch in 0..c {
                    let plane = &xv.data()[(i * c + ch) * sp..(i * c + ch + 1) * sp];
                    means[ch] += plane.iter().sum::<Real>();
                }
            }
            for m in &mut means {
                *m /= count;
            }
            for i in 0..n {
                for ch in 0..c {
                    let plane = &xv.data()[(i * c + ch) * sp..(i * c + ch + 1) * sp];
                    vars[ch] += plane.iter().map(|v| (v - means[ch]).powi(2)).sum::<Real>();
                }
            }
            for v in &mut vars {
                *v /= count;
            }
            let inv_std: Vec<Real> = vars.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
            let mut out = xv.clone();
            for i in 0..n {
                for ch in 0..c {
                    for v in &mut out.data_mut()[(i * c + ch) * sp..(i * c + ch + 1) * sp] {
                        *v = (*v - means[ch]) * inv_std[ch];
                    }
                }
            }
            (out, inv_std, means, vars)
        };
        let needs = self.needs(x);
        (self.push(value, Op::BatchNorm { x, inv_std }, needs), means, vars)
    }

    /// 2x2 max pooling with stride 2 (odd trailing rows/cols are dropped).
    pub fn max_pool2(&self, x: Var) -> Var {
        let (value, argmax) = {
            let xv = self.value(x);
            let s = xv.shape();
            let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
            let (oh, ow) = (h / 2, w / 2);
            let mut out = Tensor::zeros(&[n, c, oh, ow]);
            let mut argmax = Vec::with_capacity(n * c * oh * ow);
            let xd = xv.data();
            let od = out.data_mut();
            let mut k = 0;
            for p in 0..n * c {
                let base = p * h * w;
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut best = base + 2 * y * w + 2 * xx;
                        for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                            let idx = base + (2 * y + dy) * w + 2 * xx + dx;
                            if xd[idx] > xd[best] {
                                best = idx;
                            }
                        }
                        od[k] = xd[best];
                        argmax.push(best);
                        k += 1;
                    }
                }
            }
            (out, argmax)
        };
        let needs = self.needs(x);
        self.push(value, Op::MaxPool2 { x, argmax }, needs)
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(&self, x: Var) -> Var {
        let value = {
            let xv = self.value(x);
            let s = xv.shape();
            let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
            let mut out = Tensor::zeros(&[n, c, 2 * h, 2 * w]);
            let od = out.data_mut();
            for p in 0..n * c {
                for y in 0..2 * h {
                    for xx in 0..2 * w {
                        od[p * 4 * h * w + y * 2 * w + xx] = xv.data()[p * h * w + (y / 2) * w + xx / 2];
                    }
                }
            }
            out
        };
        let needs = self.needs(x);
        self.push(value, Op::Upsample2(x), needs)
    }

    /// Concatenate along axis 1.
    pub fn concat_channels(&self, a: Var, b: Var) -> Var {
        let value = {
            let av = self.value(a);
            let bv = self.value(b);
            let (sa, sb) = (av.shape(), bv.shape());
            assert_eq!(sa[0], sb[0]);
            assert_eq!(sa[2..], sb[2..], "concat spatial mismatch");
            let n = sa[0];
            let (pa, pb) = (av.len() / n, bv.len() / n);
            let mut data = Vec::with_capacity(av.len() + bv.len());
            for i in 0..n {
                data.extend_from_slice(&av.data()[i * pa..(i + 1) * pa]);
                data.extend_from_slice(&bv.data()[i * pb..(i + 1) * pb]);
            }
            let mut shape = sa.to_vec();
            shape[1] = sa[1] + sb[1];
            Tensor::new(&shape, data)
        };
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::ConcatChannels(a, b), needs)
    }

    /// Mean over spatial sites: `[N,C,...] -> [N,C]`.
    pub fn mean_spatial(&self, x: Var) -> Var {
        let value = {
            let xv = self.value(x);
            let sp = spatial(xv.shape());
            let data = xv
                .data()
                .chunks(sp)
                .map(|p| p.iter().sum::<Real>() / sp as Real)
                .collect();
            Tensor::new(&[xv.dim(0), xv.dim(1)], data)
        };
        let needs = self.needs(x);
        self.push(value, Op::MeanSpatial(x), needs)
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Var {
        let value = self.value(x).clone().reshape(shape);
        let needs = self.needs(x);
        self.push(value, Op::Reshape(x), needs)
    }

    /// `[N, ...] -> [N, prod(...)]`.
    pub fn flatten(&self, x: Var) -> Var {
        let s = self.shape(x);
        let n = s[0];
        let rest = s[1..].iter().product();
        self.reshape(x, &[n, rest])
    }

    pub fn sum(&self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let needs = self.needs(x);
        self.push(value, Op::Sum(x), needs)
    }

    pub fn mean(&self, x: Var) -> Var {
        let n = self.value(x).len() as Real;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Forward value `hard`, backward identity into `soft`.
    pub fn straight_through(&self, hard: Tensor, soft: Var) -> Var {
        assert_eq!(hard.shape(), self.value(soft).shape());
        let needs = self.needs(soft);
        self.push(hard, Op::StraightThrough(soft), needs)
    }

    /// Gradients of the single-element `loss` with respect to every leaf.
    pub fn backward(&self, loss: Var) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[loss.0].value.len(), 1, "backward from non-scalar");
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(nodes.len(), || None);
        grads[loss.0] = Some(Tensor::full(nodes[loss.0].value.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            if !nodes[i].needs_grad {
                grads[i] = None;
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            let node = &nodes[i];
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(gy);
                continue;
            }
            let y = &node.value;
            let mut acc = |v: Var, g: Tensor| {
                if !nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => existing.add_assign(&g),
                    slot => *slot = Some(g),
                }
            };
            let val = |v: Var| &nodes[v.0].value;
            let need = |v: Var| nodes[v.0].needs_grad;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Add(a, b) => {
                    acc(*a, gy.clone());
                    acc(*b, gy);
                }
                Op::Sub(a, b) => {
                    acc(*b, gy.map(|v| -v));
                    acc(*a, gy);
                }
                Op::Mul(a, b) => {
                    if need(*a) {
                        acc(*a, gy.zip_map(val(*b), |g, bv| g * bv));
                    }
                    if need(*b) {
                        acc(*b, gy.zip_map(val(*a), |g, av| g * av));
                    }
                }
                Op::Scale(a, s) => acc(*a, gy.map(|g| g * s)),
                Op::AddScalar(a) => acc(*a, gy),
                Op::Relu(a) => acc(*a, gy.zip_map(val(*a), |g, x| if x > 0.0 { g } else { 0.0 })),
                Op::LeakyRelu(a, slope) => {
                    acc(*a, gy.zip_map(val(*a), |g, x| if x > 0.0 { g } else { g * slope }))
                }
                Op::Tanh(a) => acc(*a, gy.zip_map(y, |g, t| g * (1.0 - t * t))),
                Op::Sigmoid(a) => acc(*a, gy.zip_map(y, |g, s| g * s * (1.0 - s))),
                Op::Exp(a) => acc(*a, gy.zip_map(y, |g, e| g * e)),
                Op::LogClamped(a, floor) => acc(
                    *a,
                    gy.zip_map(val(*a), |g, x| if x > *floor { g / x } else { 0.0 }),
                ),
                Op::Abs(a) => acc(*a, gy.zip_map(val(*a), |g, x| g * x.signum() * (x != 0.0) as u8 as Real)),
                Op::Square(a) => acc(*a, gy.zip_map(val(*a), |g, x| 2.0 * g * x)),
                Op::MulSpatial(x, m) => {
                    let xv = val(*x);
                    let mv = val(*m);
                    let (n, c) = (xv.dim(0), xv.dim(1));
                    let sp = spatial(xv.shape());
                    if need(*x) {
                        let mut gx = gy.clone();
                        for i in 0..n {
                            for ch in 0..c {
                                let base = (i * c + ch) * sp;
                                for (k, v) in gx.data_mut()[base..base + sp].iter_mut().enumerate() {
                                    *v *= mv.data()[i * sp + k];
                                }
                            }
                        }
                        acc(*x, gx);
                    }
                    if need(*m) {
                        let mut gm = Tensor::zeros(mv.shape());
                        for i in 0..n {
                            for ch in 0..c {
                                let base = (i * c + ch) * sp;
                                for k in 0..sp {
                                    gm.data_mut()[i * sp + k] += gy.data()[base + k] * xv.data()[base + k];
                                }
                            }
                        }
                        acc(*m, gm);
                    }
                }
                Op::ScaleChannels(x, s) => {
                    let xv = val(*x);
                    let sv = val(*s);
                    let per_sample = Self::channel_factor_index(xv.shape(), sv.len());
                    let (n, c) = (xv.dim(0), xv.dim(1));
                    let sp = spatial(xv.shape());
                    let idx = |i: usize, ch: usize| if per_sample { i * c + ch } else { ch };
                    if need(*x) {
                        let mut gx = gy.clone();
                        for i in 0..n {
                            for ch in 0..c {
                                let f = sv.data()[idx(i, ch)];
                                for v in &mut gx.data_mut()[(i * c + ch) * sp..(i * c + ch + 1) * sp] {
                                    *v *= f;
                                }
                            }
                        }
                        acc(*x, gx);
                    }
                    if need(*s) {
                        let mut gs = Tensor::zeros(sv.shape());
                        for i in 0..n {
                            for ch in 0..c {
                                let r = (i * c + ch) * sp..(i * c + ch + 1) * sp;
                                let dot: Real = gy.data()[r.clone()]
                                    .iter()
                                    .zip(&xv.data()[r])
                                    .map(|(a, b)| a * b)
                                    .sum();
                                gs.data_mut()[idx(i, ch)] += dot;
                            }
                        }
                        acc(*s, gs);
                    }
                }
                Op::ShiftChannels(x, b) => {
                    let bv = val(*b);
                    let (n, c) = (gy.dim(0), gy.dim(1));
                    let per_sample = Self::channel_factor_index(gy.shape(), bv.len());
                    let sp = spatial(gy.shape());
                    if need(*b) {
                        let mut gb = Tensor::zeros(bv.shape());
                        for i in 0..n {
                            for ch in 0..c {
                                let s: Real = gy.data()[(i * c + ch) * sp..(i * c + ch + 1) * sp].iter().sum();
                                gb.data_mut()[if per_sample { i * c + ch } else { ch }] += s;
                            }
                        }
                        acc(*b, gb);
                    }
                    acc(*x, gy);
                }
                Op::Conv2d {
                    x,
                    w,
                    b,
                    stride,
                    pad,
                } => {
                    let xv = val(*x);
                    let wv = val(*w);
                    let xs = xv.shape();
                    let ws = wv.shape();
                    let geom = ConvGeom {
                        channels: xs[1],
                        height: xs[2],
                        width: xs[3],
                        kernel_h: ws[2],
                        kernel_w: ws[3],
                        stride: *stride,
                        pad: *pad,
                    };
                    let (n, o) = (xs[0], ws[0]);
                    let plane = geom.out_h() * geom.out_w();
                    let in_len = xs[1] * xs[2] * xs[3];
                    let rows = geom.col_rows();
                    if let Some(b) = b {
                        if need(*b) {
                            let mut gb = Tensor::zeros(&[o]);
                            for (idx, chunk) in gy.data().chunks(plane).enumerate() {
                                gb.data_mut()[idx % o] += chunk.iter().sum::<Real>();
                            }
                            acc(*b, gb);
                        }
                    }
                    let need_w = need(*w);
                    let need_x = need(*x);
                    let mut gw = if need_w { Some(Tensor::zeros(ws)) } else { None };
                    let mut gx = if need_x { Some(Tensor::zeros(xs)) } else { None };
                    let mut cols = vec![0.0; if geom.is_pointwise() { 0 } else { rows * plane }];
                    let mut dcols = vec![0.0; if need_x && !geom.is_pointwise() { rows * plane } else { 0 }];
                    for i in 0..n {
                        let gyi = &gy.data()[i * o * plane..(i + 1) * o * plane];
                        let xi = &xv.data()[i * in_len..(i + 1) * in_len];
                        if let Some(gw) = gw.as_mut() {
                            let src: &[Real] = if geom.is_pointwise() {
                                xi
                            } else {
                                im2col(xi, &geom, &mut cols);
                                &cols
                            };
                            gemm(o, plane, rows, gyi, false, src, true, 1.0, gw.data_mut());
                        }
                        if let Some(gx) = gx.as_mut() {
                            let dst = &mut gx.data_mut()[i * in_len..(i + 1) * in_len];
                            if geom.is_pointwise() {
                                gemm(rows, o, plane, wv.data(), true, gyi, false, 1.0, dst);
                            } else {
                                gemm(rows, o, plane, wv.data(), true, gyi, false, 0.0, &mut dcols);
                                col2im(&dcols, &geom, dst);
                            }
                        }
                    }
                    if let Some(gw) = gw {
                        acc(*w, gw);
                    }
                    if let Some(gx) = gx {
                        acc(*x, gx);
                    }
                }
                Op::Linear { x, w, b } => {
                    let xv = val(*x);
                    let wv = val(*w);
                    let n = xv.dim(0);
                    let d = xv.len() / n;
                    let o = wv.dim(0);
                    if let Some(b) = b {
                        if need(*b) {
                            let mut gb = Tensor::zeros(&[o]);
                            for row in gy.data().chunks(o) {
                                for (acc_b, g) in gb.data_mut().iter_mut().zip(row) {
                                    *acc_b += g;
                                }
                            }
                            acc(*b, gb);
                        }
                    }
                    if need(*w) {
                        let mut gw = Tensor::zeros(wv.shape());
                        gemm(o, n, d, gy.data(), true, xv.data(), false, 0.0, gw.data_mut());
                        acc(*w, gw);
                    }
                    if need(*x) {
                        let mut gx = Tensor::zeros(xv.shape());
                        gemm(n, o, d, gy.data(), false, wv.data(), false, 0.0, gx.data_mut());
                        acc(*x, gx);
                    }
                }
                Op::SoftmaxChannels(x) => {
                    let (n, c) = (y.dim(0), y.dim(1));
                    let sp = spatial(y.shape());
                    let mut gx = Tensor::zeros(y.shape());
                    for i in 0..n {
                        for s in 0..sp {
                            let mut dot = 0.0;
                            for ch in 0..c {
                                let k = (i * c + ch) * sp + s;
                                dot += gy.data()[k] * y.data()[k];
                            }
                            for ch in 0..c {
                                let k = (i * c + ch) * sp + s;
                                gx.data_mut()[k] = y.data()[k] * (gy.data()[k] - dot);
                            }
                        }
                    }
                    acc(*x, gx);
                }
                Op::InstanceNorm { x, inv_std } => {
                    let sp = spatial(y.shape());
                    let mut gx = Tensor::zeros(y.shape());
                    for (p, r) in inv_std.iter().enumerate() {
                        let ys = &y.data()[p * sp..(p + 1) * sp];
                        let gs = &gy.data()[p * sp..(p + 1) * sp];
                        let mean_g = gs.iter().sum::<Real>() / sp as Real;
                        let mean_gy = gs.iter().zip(ys).map(|(a, b)| a * b).sum::<Real>() / sp as Real;
                        for k in 0..sp {
                            gx.data_mut()[p * sp + k] = r * (gs[k] - mean_g - ys[k] * mean_gy);
                        }
                    }
                    acc(*x, gx);
                }
                Op::BatchNorm { x, inv_std } => {
                    let (n, c) = (y.dim(0), y.dim(1));
                    let sp = spatial(y.shape());
                    let count = (n * sp) as Real;
                    let mut mean_g = vec![0.0; c];
                    let mut mean_gy = vec![0.0; c];
                    for i in 0..n {
                        for ch in 0..c {
                            let r = (i * c + ch) * sp..(i * c + ch + 1) * sp;
                            mean_g[ch] += gy.data()[r.clone()].iter().sum::<Real>();
                            mean_gy[ch] += gy.data()[r.clone()]
                                .iter()
                                .zip(&y.data()[r])
                                .map(|(a, b)| a * b)
                                .sum::<Real>();
                        }
                    }
                    let mut gx = Tensor::zeros(y.shape());
                    for i in 0..n {
                        for ch in 0..c {
                            let (mg, mgy) = (mean_g[ch] / count, mean_gy[ch] / count);
                            for k in (i * c + ch) * sp..(i * c + ch + 1) * sp {
                                gx.data_mut()[k] = inv_std[ch] * (gy.data()[k] - mg - y.data()[k] * mgy);
                            }
                        }
                    }
                    acc(*x, gx);
                }
                Op::MaxPool2 { x, argmax } => {
                    let mut gx = Tensor::zeros(val(*x).shape());
                    for (g, &idx) in gy.data().iter().zip(argmax) {
                        gx.data_mut()[idx] += g;
                    }
                    acc(*x, gx);
                }
                Op::Upsample2(x) => {
                    let xs = val(*x).shape().to_vec();
                    let (h, w) = (xs[2], xs[3]);
                    let mut gx = Tensor::zeros(&xs);
                    for p in 0..xs[0] * xs[1] {
                        for yy in 0..2 * h {
                            for xx in 0..2 * w {
                                gx.data_mut()[p * h * w + (yy / 2) * w + xx / 2] +=
                                    gy.data()[p * 4 * h * w + yy * 2 * w + xx];
                            }
                        }
                    }
                    acc(*x, gx);
                }
                Op::ConcatChannels(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let n = av.dim(0);
                    let (pa, pb) = (av.len() / n, bv.len() / n);
                    let mut ga = Vec::with_capacity(av.len());
                    let mut gb = Vec::with_capacity(bv.len());
                    for i in 0..n {
                        let row = &gy.data()[i * (pa + pb)..(i + 1) * (pa + pb)];
                        ga.extend_from_slice(&row[..pa]);
                        gb.extend_from_slice(&row[pa..]);
                    }
                    let (sa, sb) = (av.shape().to_vec(), bv.shape().to_vec());
                    acc(*a, Tensor::new(&sa, ga));
                    acc(*b, Tensor::new(&sb, gb));
                }
                Op::MeanSpatial(x) => {
                    let xs = val(*x).shape().to_vec();
                    let sp = spatial(&xs);
                    let mut gx = Tensor::zeros(&xs);
                    for (p, g) in gy.data().iter().enumerate() {
                        for v in &mut gx.data_mut()[p * sp..(p + 1) * sp] {
                            *v = g / sp as Real;
                        }
                    }
                    acc(*x, gx);
                }
                Op::Reshape(x) => {
                    let xs = val(*x).shape().to_vec();
                    acc(*x, gy.reshape(&xs));
                }
                Op::Sum(x) => {
                    let g = gy.item();
                    acc(*x, Tensor::full(val(*x).shape(), g));
                }
                Op::StraightThrough(soft) => acc(*soft, gy),
            }
        }
        Gradients { grads }
    }
}

/// Softmax across axis 1 of a plain tensor.
pub fn softmax_channels_value(x: &Tensor) -> Tensor {
    let (n, c) = (x.dim(0), x.dim(1));
    let sp = spatial(x.shape());
    let mut out = x.clone();
    let od = out.data_mut();
    for i in 0..n {
        for s in 0..sp {
            let mut max = Real::NEG_INFINITY;
            for ch in 0..c {
                max = max.max(od[(i * c + ch) * sp + s]);
            }
            let mut total = 0.0;
            for ch in 0..c {
                let k = (i * c + ch) * sp + s;
                od[k] = (od[k] - max).exp();
                total += od[k];
            }
            for ch in 0..c {
                od[(i * c + ch) * sp + s] /= total;
            }
        }
    }
    out
}
