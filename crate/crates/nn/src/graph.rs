use std::sync::Arc;

use ndarray::{s, Array1, ArrayD, ArrayView4, Axis, Ix1, Ix4, IxDyn, Zip};

use crate::kernels::{self, BatchNormCache, ConvGeom, Padding};
use crate::params::{Gradients, ParamId, ParamKey, ParamStore};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op {
    Input,
    Param(ParamKey),
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        geom: ConvGeom,
    },
    UpConv2x2 {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    MaxPool2 {
        x: NodeId,
        argmax: Vec<usize>,
    },
    Relu(NodeId),
    LeakyRelu(NodeId, f64),
    Sigmoid(NodeId),
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        cache: BatchNormCache,
    },
    ConcatChannels(NodeId, NodeId),
    MinMaxNorm {
        x: NodeId,
        // per sample: (argmin, argmax, range); range == 0 marks a constant map
        stats: Vec<(usize, usize, f64)>,
    },
    DiceLoss {
        pred: NodeId,
        target: Arc<ArrayD<f64>>,
        eps: f64,
    },
    NegLogMean {
        x: NodeId,
        complement: bool,
        eps: f64,
    },
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
}

struct Node {
    value: Arc<ArrayD<f64>>,
    op: Op,
    needs_grad: bool,
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Input | Op::Param(_) => vec![],
            Op::Conv2d { x, w, b, .. } | Op::UpConv2x2 { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b.iter().copied());
                v
            }
            Op::MaxPool2 { x, .. }
            | Op::Relu(x)
            | Op::LeakyRelu(x, _)
            | Op::Sigmoid(x)
            | Op::MinMaxNorm { x, .. }
            | Op::NegLogMean { x, .. }
            | Op::Scale(x, _) => vec![*x],
            Op::DiceLoss { pred, .. } => vec![*pred],
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::ConcatChannels(a, b) | Op::Add(a, b) => vec![*a, *b],
        }
    }
}

/// Define-by-run tape. Every op evaluates eagerly and records what it needs
/// for [`Graph::backward`]. Activations are NHWC `[batch, height, width,
/// channels]`.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn as4(a: &ArrayD<f64>) -> ArrayView4<'_, f64> {
    a.view()
        .into_dimensionality::<Ix4>()
        .expect("expected a rank-4 NHWC tensor")
}

fn as1(a: &ArrayD<f64>) -> Array1<f64> {
    a.view()
        .into_dimensionality::<Ix1>()
        .expect("expected a rank-1 tensor")
        .to_owned()
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: ArrayD<f64>, op: Op) -> NodeId {
        self.push_shared(Arc::new(value), op)
    }

    fn push_shared(&mut self, value: Arc<ArrayD<f64>>, op: Op) -> NodeId {
        let needs_grad = matches!(op, Op::Param(_))
            || op.inputs().iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &ArrayD<f64> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Scalar value of a rank-0 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        assert_eq!(v.len(), 1, "node is not a scalar");
        v.iter().copied().next().unwrap_or(f64::NAN)
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, value: ArrayD<f64>) -> NodeId {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.push_shared(store.shared(id), Op::Param(store.key(id)))
    }

    /// A parameter's current value as a constant; receives no gradient.
    pub fn frozen_param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.push_shared(store.shared(id), Op::Input)
    }

    /// 2D convolution, weight `[kh, kw, cin, cout]`, optional bias `[cout]`.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: Padding,
    ) -> NodeId {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(xs.len(), 4, "conv2d input must be NHWC");
        assert_eq!(ws.len(), 4, "conv2d weight must be [kh, kw, cin, cout]");
        assert_eq!(xs[3], ws[2], "conv2d channel mismatch");
        let geom = ConvGeom::new((xs[0], xs[1], xs[2], xs[3]), ws[0], ws[1], stride, pad)
            .expect("conv2d kernel larger than padded input");
        let bias = b.map(|b| as1(self.value(b)));
        let out = kernels::conv2d_forward(as4(self.value(x)), as4(self.value(w)), bias.as_ref(), &geom);
        self.push(out.into_dyn(), Op::Conv2d { x, w, b, geom })
    }

    /// 2x2 stride-2 transposed convolution, weight `[cin, 2, 2, cout]`.
    pub fn upconv2x2(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> NodeId {
        let xs = self.shape(x);
        let ws = self.shape(w);
        assert_eq!(xs.len(), 4, "upconv input must be NHWC");
        assert!(ws.len() == 4 && ws[1] == 2 && ws[2] == 2, "upconv weight must be [cin, 2, 2, cout]");
        assert_eq!(xs[3], ws[0], "upconv channel mismatch");
        let bias = b.map(|b| as1(self.value(b)));
        let out = kernels::upconv_forward(as4(self.value(x)), as4(self.value(w)), bias.as_ref());
        self.push(out.into_dyn(), Op::UpConv2x2 { x, w, b })
    }

    pub fn max_pool2(&mut self, x: NodeId) -> NodeId {
        let xs = self.shape(x);
        assert!(
            xs.len() == 4 && xs[1].is_multiple_of(2) && xs[2].is_multiple_of(2),
            "max_pool2 needs NHWC input with even height and width"
        );
        let (out, argmax) = kernels::max_pool2_forward(as4(self.value(x)));
        self.push(out.into_dyn(), Op::MaxPool2 { x, argmax })
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).mapv(|v| v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let out = self.value(x).mapv(|v| if v > 0.0 { v } else { slope * v });
        self.push(out, Op::LeakyRelu(x, slope))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).mapv(sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    /// Batch normalization using the statistics of the current batch.
    pub fn batch_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> NodeId {
        let g = as1(self.value(gamma));
        let b = as1(self.value(beta));
        let (out, cache) = kernels::batch_norm_forward(as4(self.value(x)), &g, &b, eps);
        self.push(
            out.into_dyn(),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                cache,
            },
        )
    }

    /// Concatenate two NHWC tensors along the channel axis, `a` first.
    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let sa = self.shape(a);
        let sb = self.shape(b);
        assert!(
            sa.len() == 4 && sb.len() == 4 && sa[..3] == sb[..3],
            "concat_channels needs NHWC tensors with equal batch and spatial dims"
        );
        let out = ndarray::concatenate(Axis(3), &[self.value(a).view(), self.value(b).view()])
            .expect("concat");
        self.push(out, Op::ConcatChannels(a, b))
    }

    /// Per-sample min-max rescaling to `[0, 1]`; constant samples map to 0.
    pub fn minmax_normalize(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let batch = v.shape()[0];
        let per = v.len() / batch.max(1);
        let flat = v.as_standard_layout();
        let flat = flat.as_slice().expect("standard layout");
        let mut out = vec![0.0; flat.len()];
        let mut stats = Vec::with_capacity(batch);
        for b in 0..batch {
            let chunk = &flat[b * per..(b + 1) * per];
            let (mut lo, mut hi) = (0, 0);
            for (i, &c) in chunk.iter().enumerate() {
                if c < chunk[lo] {
                    lo = i;
                }
                if c > chunk[hi] {
                    hi = i;
                }
            }
            let range = chunk[hi] - chunk[lo];
            if range > 0.0 {
                let min = chunk[lo];
                for (o, &c) in out[b * per..(b + 1) * per].iter_mut().zip(chunk) {
                    *o = (c - min) / range;
                }
            }
            stats.push((lo, hi, range));
        }
        let out = ArrayD::from_shape_vec(IxDyn(v.shape()), out).expect("normalize shape");
        self.push(out, Op::MinMaxNorm { x, stats })
    }

    /// Batch mean of `1 - (2 sum(p t) + eps) / (sum(p) + sum(t) + eps)`.
    pub fn dice_loss(&mut self, pred: NodeId, target: Arc<ArrayD<f64>>, eps: f64) -> NodeId {
        let p = self.value(pred);
        assert_eq!(p.shape(), target.shape(), "dice_loss shape mismatch");
        let batch = p.shape()[0];
        let mut total = 0.0;
        for b in 0..batch {
            let (inter, sp, st) = dice_sums(p, &target, b);
            total += 1.0 - (2.0 * inter + eps) / (sp + st + eps);
        }
        let out = ArrayD::from_elem(IxDyn(&[]), total / batch as f64);
        self.push(out, Op::DiceLoss { pred, target, eps })
    }

    /// Mean of `-ln(max(x, eps))`, or of `-ln(max(1 - x, eps))` when
    /// `complement` is set.
    pub fn neg_log_mean(&mut self, x: NodeId, complement: bool, eps: f64) -> NodeId {
        let v = self.value(x);
        let n = v.len() as f64;
        let sum: f64 = v
            .iter()
            .map(|&d| {
                let a = if complement { 1.0 - d } else { d };
                -a.max(eps).ln()
            })
            .sum();
        let out = ArrayD::from_elem(IxDyn(&[]), sum / n);
        self.push(out, Op::NegLogMean { x, complement, eps })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b))
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> NodeId {
        let out = self.value(x) * k;
        self.push(out, Op::Scale(x, k))
    }

    /// Reverse-mode sweep from a scalar node. Returns gradients of every
    /// parameter that influenced `loss`.
    pub fn backward(&self, loss: NodeId) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<ArrayD<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(ArrayD::ones(self.value(loss).raw_dim()));
        let mut out = Gradients::default();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Param(key) => out.accumulate(*key, g),
                Op::Conv2d { x, w, b, geom } => {
                    let cg = kernels::conv2d_backward(
                        as4(self.value(*x)),
                        as4(self.value(*w)),
                        as4(&g),
                        geom,
                        self.nodes[x.0].needs_grad,
                        self.nodes[w.0].needs_grad,
                    );
                    if let Some(dx) = cg.dx {
                        accumulate(&mut grads, *x, dx.into_dyn());
                    }
                    if let Some(dw) = cg.dw {
                        accumulate(&mut grads, *w, dw.into_dyn());
                    }
                    if let Some(b) = b {
                        accumulate(&mut grads, *b, cg.db.into_dyn());
                    }
                }
                Op::UpConv2x2 { x, w, b } => {
                    let cg = kernels::upconv_backward(as4(self.value(*x)), as4(self.value(*w)), as4(&g));
                    if let Some(dx) = cg.dx {
                        accumulate(&mut grads, *x, dx.into_dyn());
                    }
                    if let Some(dw) = cg.dw {
                        accumulate(&mut grads, *w, dw.into_dyn());
                    }
                    if let Some(b) = b {
                        accumulate(&mut grads, *b, cg.db.into_dyn());
                    }
                }
                Op::MaxPool2 { x, argmax } => {
                    let mut dx = vec![0.0; self.value(*x).len()];
                    let g = g.as_standard_layout();
                    for (&src, &gv) in argmax.iter().zip(g.iter()) {
                        dx[src] += gv;
                    }
                    let dx = ArrayD::from_shape_vec(self.value(*x).raw_dim(), dx).expect("pool grad");
                    accumulate(&mut grads, *x, dx);
                }
                Op::Relu(x) => {
                    let mut g = g;
                    Zip::from(&mut g).and(&*node.value).for_each(|g, &y| {
                        if y <= 0.0 {
                            *g = 0.0;
                        }
                    });
                    accumulate(&mut grads, *x, g);
                }
                Op::LeakyRelu(x, slope) => {
                    let mut g = g;
                    Zip::from(&mut g).and(&**self.nodes[x.0].value).for_each(|g, &xv| {
                        if xv <= 0.0 {
                            *g *= slope;
                        }
                    });
                    accumulate(&mut grads, *x, g);
                }
                Op::Sigmoid(x) => {
                    let mut g = g;
                    Zip::from(&mut g)
                        .and(&*node.value)
                        .for_each(|g, &y| *g *= y * (1.0 - y));
                    accumulate(&mut grads, *x, g);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    cache,
                } => {
                    let gm = as1(self.value(*gamma));
                    let (dx, dgamma, dbeta) = kernels::batch_norm_backward(as4(&g), &gm, cache);
                    accumulate(&mut grads, *x, dx.into_dyn());
                    accumulate(&mut grads, *gamma, dgamma.into_dyn());
                    accumulate(&mut grads, *beta, dbeta.into_dyn());
                }
                Op::ConcatChannels(a, b) => {
                    let ca = self.shape(*a)[3];
                    let g4 = as4(&g);
                    accumulate(&mut grads, *a, g4.slice(s![.., .., .., ..ca]).to_owned().into_dyn());
                    accumulate(&mut grads, *b, g4.slice(s![.., .., .., ca..]).to_owned().into_dyn());
                }
                Op::MinMaxNorm { x, stats } => {
                    let xv = self.value(*x).as_standard_layout().into_owned();
                    let xs = xv.as_slice().expect("standard layout");
                    let g = g.as_standard_layout().into_owned();
                    let gs = g.as_slice().expect("standard layout");
                    let per = xs.len() / stats.len().max(1);
                    let mut dx = vec![0.0; xs.len()];
                    for (b, &(lo, hi, range)) in stats.iter().enumerate() {
                        if range <= 0.0 {
                            continue;
                        }
                        let base = b * per;
                        let (min, max) = (xs[base + lo], xs[base + hi]);
                        let (mut gmin, mut gmax) = (0.0, 0.0);
                        for k in 0..per {
                            let gk = gs[base + k];
                            dx[base + k] += gk / range;
                            gmin += gk * (xs[base + k] - max);
                            gmax -= gk * (xs[base + k] - min);
                        }
                        dx[base + lo] += gmin / (range * range);
                        dx[base + hi] += gmax / (range * range);
                    }
                    let dx = ArrayD::from_shape_vec(xv.raw_dim(), dx).expect("normalize grad");
                    accumulate(&mut grads, *x, dx);
                }
                Op::DiceLoss { pred, target, eps } => {
                    let upstream = g.iter().copied().next().unwrap_or(0.0);
                    let p = self.value(*pred);
                    let batch = p.shape()[0];
                    let mut dp = ArrayD::zeros(p.raw_dim());
                    for b in 0..batch {
                        let (inter, sp, st) = dice_sums(p, target, b);
                        let num = 2.0 * inter + eps;
                        let den = sp + st + eps;
                        let scale = upstream / batch as f64;
                        Zip::from(dp.index_axis_mut(Axis(0), b))
                            .and(target.index_axis(Axis(0), b))
                            .for_each(|d, &t| {
                                *d = -scale * (2.0 * t * den - num) / (den * den);
                            });
                    }
                    accumulate(&mut grads, *pred, dp);
                }
                Op::NegLogMean { x, complement, eps } => {
                    let upstream = g.iter().copied().next().unwrap_or(0.0);
                    let v = self.value(*x);
                    let n = v.len() as f64;
                    let dx = v.mapv(|d| {
                        if *complement {
                            let a = 1.0 - d;
                            if a > *eps { upstream / (a * n) } else { 0.0 }
                        } else if d > *eps {
                            -upstream / (d * n)
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut grads, *x, dx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Scale(x, k) => accumulate(&mut grads, *x, g * *k),
            }
        }
        out
    }
}

fn dice_sums(p: &ArrayD<f64>, t: &ArrayD<f64>, b: usize) -> (f64, f64, f64) {
    let pb = p.index_axis(Axis(0), b);
    let tb = t.index_axis(Axis(0), b);
    let mut inter = 0.0;
    let mut sp = 0.0;
    let mut st = 0.0;
    Zip::from(&pb).and(&tb).for_each(|&pv, &tv| {
        inter += pv * tv;
        sp += pv;
        st += tv;
    });
    (inter, sp, st)
}

fn accumulate(grads: &mut [Option<ArrayD<f64>>], id: NodeId, g: ArrayD<f64>) {
    match &mut grads[id.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}
