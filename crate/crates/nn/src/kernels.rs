//! Dense NHWC kernels used by the graph ops. Everything works on
//! standard-layout arrays; convolutions are lowered to a single GEMM via
//! im2col so that the `(rows, channels)` result is already NHWC.

use ndarray::{Array1, Array2, Array4, ArrayView2, ArrayView4, Axis};

/// Zero padding applied on each side of the spatial dims.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub const fn uniform(p: usize) -> Self {
        Self {
            top: p,
            bottom: p,
            left: p,
            right: p,
        }
    }

    /// Padding that keeps the spatial size for a stride-1 convolution with
    /// kernel `k`; the extra row/column for even kernels goes after.
    pub const fn same(k: usize) -> Self {
        let before = (k - 1) / 2;
        let after = k - 1 - before;
        Self {
            top: before,
            bottom: after,
            left: before,
            right: after,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: Padding,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(
        x: (usize, usize, usize, usize),
        kh: usize,
        kw: usize,
        stride: usize,
        pad: Padding,
    ) -> Option<Self> {
        let (batch, h, w, cin) = x;
        let hp = h + pad.top + pad.bottom;
        let wp = w + pad.left + pad.right;
        if stride == 0 || hp < kh || wp < kw {
            return None;
        }
        Some(Self {
            batch,
            h,
            w,
            cin,
            kh,
            kw,
            stride,
            pad,
            ho: (hp - kh) / stride + 1,
            wo: (wp - kw) / stride + 1,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == Padding::default()
    }

    fn rows(&self) -> usize {
        self.batch * self.ho * self.wo
    }

    fn cols(&self) -> usize {
        self.kh * self.kw * self.cin
    }
}

pub(crate) fn im2col(x: &[f64], g: &ConvGeom) -> Array2<f64> {
    let cols = g.cols();
    let mut out = vec![0.0; g.rows() * cols];
    let c = g.cin;
    for b in 0..g.batch {
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let row = ((b * g.ho + oy) * g.wo + ox) * cols;
                for ky in 0..g.kh {
                    let iy = (oy * g.stride + ky) as isize - g.pad.top as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = (ox * g.stride + kx) as isize - g.pad.left as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let src = ((b * g.h + iy as usize) * g.w + ix as usize) * c;
                        let dst = row + (ky * g.kw + kx) * c;
                        out[dst..dst + c].copy_from_slice(&x[src..src + c]);
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((g.rows(), cols), out).expect("im2col shape")
}

fn col2im(dcol: ArrayView2<f64>, g: &ConvGeom) -> Vec<f64> {
    let dcol = dcol.as_standard_layout();
    let dcol = dcol.as_slice().expect("standard layout");
    let cols = g.cols();
    let c = g.cin;
    let mut dx = vec![0.0; g.batch * g.h * g.w * c];
    for b in 0..g.batch {
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let row = ((b * g.ho + oy) * g.wo + ox) * cols;
                for ky in 0..g.kh {
                    let iy = (oy * g.stride + ky) as isize - g.pad.top as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = (ox * g.stride + kx) as isize - g.pad.left as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let dst = ((b * g.h + iy as usize) * g.w + ix as usize) * c;
                        let src = row + (ky * g.kw + kx) * c;
                        for (d, s) in dx[dst..dst + c].iter_mut().zip(&dcol[src..src + c]) {
                            *d += *s;
                        }
                    }
                }
            }
        }
    }
    dx
}

fn with_cols<R>(x: &ArrayView4<f64>, g: &ConvGeom, f: impl FnOnce(ArrayView2<f64>) -> R) -> R {
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    if g.is_pointwise() {
        let view = ArrayView2::from_shape((g.rows(), g.cin), xs).expect("pointwise view");
        f(view)
    } else {
        let col = im2col(xs, g);
        f(col.view())
    }
}

fn weight_matrix(w: &ArrayView4<f64>) -> Array2<f64> {
    let (kh, kw, cin, cout) = w.dim();
    w.as_standard_layout()
        .into_owned()
        .into_shape_with_order((kh * kw * cin, cout))
        .expect("weight reshape")
}

pub(crate) fn conv2d_forward(
    x: ArrayView4<f64>,
    w: ArrayView4<f64>,
    bias: Option<&Array1<f64>>,
    g: &ConvGeom,
) -> Array4<f64> {
    let cout = w.dim().3;
    let w2 = weight_matrix(&w);
    let mut out = with_cols(&x, g, |col| col.dot(&w2));
    if let Some(b) = bias {
        out += b;
    }
    out.into_shape_with_order((g.batch, g.ho, g.wo, cout))
        .expect("conv output reshape")
}

pub(crate) struct ConvGrads {
    pub dx: Option<Array4<f64>>,
    pub dw: Option<Array4<f64>>,
    pub db: Array1<f64>,
}

pub(crate) fn conv2d_backward(
    x: ArrayView4<f64>,
    w: ArrayView4<f64>,
    dout: ArrayView4<f64>,
    g: &ConvGeom,
    need_dx: bool,
    need_dw: bool,
) -> ConvGrads {
    let (kh, kw, cin, cout) = w.dim();
    let dout = dout.as_standard_layout();
    let d2 = dout
        .view()
        .into_shape_with_order((g.rows(), cout))
        .expect("dout reshape");
    let w2 = weight_matrix(&w);
    let dw = need_dw.then(|| {
        with_cols(&x, g, |col| col.t().dot(&d2))
            .into_shape_with_order((kh, kw, cin, cout))
            .expect("dw reshape")
    });
    let db = d2.sum_axis(Axis(0));
    let dx = need_dx.then(|| {
        let dcol = d2.dot(&w2.t());
        if g.is_pointwise() {
            dcol.as_standard_layout()
                .into_owned()
                .into_shape_with_order((g.batch, g.h, g.w, cin))
                .expect("pointwise dx")
        } else {
            Array4::from_shape_vec((g.batch, g.h, g.w, cin), col2im(dcol.view(), g)).expect("dx")
        }
    });
    ConvGrads {
        dx,
        dw,
        db,
    }
}

/// 2x2 stride-2 transposed convolution. Weight layout `[cin, 2, 2, cout]`.
pub(crate) fn upconv_forward(
    x: ArrayView4<f64>,
    w: ArrayView4<f64>,
    bias: Option<&Array1<f64>>,
) -> Array4<f64> {
    let (b, h, wd, cin) = x.dim();
    let cout = w.dim().3;
    let x = x.as_standard_layout();
    let x2 = x
        .view()
        .into_shape_with_order((b * h * wd, cin))
        .expect("x reshape");
    let w2 = w
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((cin, 4 * cout))
        .expect("w reshape");
    let y = x2.dot(&w2);
    let ys = y.as_slice().expect("standard layout");
    let mut out = Array4::<f64>::zeros((b, 2 * h, 2 * wd, cout));
    {
        let os = out.as_slice_mut().expect("standard layout");
        for bi in 0..b {
            for i in 0..h {
                for j in 0..wd {
                    let row = ((bi * h + i) * wd + j) * 4 * cout;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let src = row + (dy * 2 + dx) * cout;
                            let dst = ((bi * 2 * h + 2 * i + dy) * 2 * wd + 2 * j + dx) * cout;
                            os[dst..dst + cout].copy_from_slice(&ys[src..src + cout]);
                        }
                    }
                }
            }
        }
    }
    if let Some(bias) = bias {
        out += bias;
    }
    out
}

pub(crate) fn upconv_backward(
    x: ArrayView4<f64>,
    w: ArrayView4<f64>,
    dout: ArrayView4<f64>,
) -> ConvGrads {
    let (b, h, wd, cin) = x.dim();
    let cout = w.dim().3;
    let dout = dout.as_standard_layout();
    let ds = dout.as_slice().expect("standard layout");
    let mut gathered = vec![0.0; b * h * wd * 4 * cout];
    for bi in 0..b {
        for i in 0..h {
            for j in 0..wd {
                let row = ((bi * h + i) * wd + j) * 4 * cout;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let dst = row + (dy * 2 + dx) * cout;
                        let src = ((bi * 2 * h + 2 * i + dy) * 2 * wd + 2 * j + dx) * cout;
                        gathered[dst..dst + cout].copy_from_slice(&ds[src..src + cout]);
                    }
                }
            }
        }
    }
    let g2 = Array2::from_shape_vec((b * h * wd, 4 * cout), gathered).expect("gather");
    let x = x.as_standard_layout();
    let x2 = x
        .view()
        .into_shape_with_order((b * h * wd, cin))
        .expect("x reshape");
    let w2 = w
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((cin, 4 * cout))
        .expect("w reshape");
    let dx = Some(
        g2.dot(&w2.t())
            .into_shape_with_order((b, h, wd, cin))
            .expect("dx"),
    );
    let dw = x2
        .t()
        .dot(&g2)
        .into_shape_with_order((cin, 2, 2, cout))
        .expect("dw");
    let db = dout
        .view()
        .into_shape_with_order((b * 4 * h * wd, cout))
        .expect("db view")
        .sum_axis(Axis(0));
    ConvGrads { dx, dw: Some(dw), db }
}

/// 2x2 stride-2 max pooling; returns the pooled map and, per output element,
/// the flat input index that won (first maximum in raster order).
pub(crate) fn max_pool2_forward(x: ArrayView4<f64>) -> (Array4<f64>, Vec<usize>) {
    let (b, h, w, c) = x.dim();
    let (ho, wo) = (h / 2, w / 2);
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let mut out = vec![0.0; b * ho * wo * c];
    let mut arg = vec![0usize; out.len()];
    for bi in 0..b {
        for oy in 0..ho {
            for ox in 0..wo {
                let o = ((bi * ho + oy) * wo + ox) * c;
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let i = ((bi * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                            if xs[i] > best {
                                best = xs[i];
                                best_i = i;
                            }
                        }
                    }
                    out[o + ch] = best;
                    arg[o + ch] = best_i;
                }
            }
        }
    }
    (
        Array4::from_shape_vec((b, ho, wo, c), out).expect("pool shape"),
        arg,
    )
}

pub(crate) struct BatchNormCache {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
}

/// Training-mode batch normalization over every axis except channels.
pub(crate) fn batch_norm_forward(
    x: ArrayView4<f64>,
    gamma: &Array1<f64>,
    beta: &Array1<f64>,
    eps: f64,
) -> (Array4<f64>, BatchNormCache) {
    let dim = x.dim();
    let n = dim.0 * dim.1 * dim.2;
    let x = x.as_standard_layout();
    let x2 = x
        .view()
        .into_shape_with_order((n, dim.3))
        .expect("bn view");
    let mean = x2.mean_axis(Axis(0)).expect("non-empty batch");
    let centered = &x2 - &mean;
    let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).expect("non-empty");
    let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
    let xhat = centered * &inv_std;
    let y = &xhat * gamma + beta;
    (
        y.into_shape_with_order(dim).expect("bn out"),
        BatchNormCache { xhat, inv_std },
    )
}

pub(crate) fn batch_norm_backward(
    dout: ArrayView4<f64>,
    gamma: &Array1<f64>,
    cache: &BatchNormCache,
) -> (Array4<f64>, Array1<f64>, Array1<f64>) {
    let dim = dout.dim();
    let n = (dim.0 * dim.1 * dim.2) as f64;
    let dout = dout.as_standard_layout();
    let g2 = dout
        .view()
        .into_shape_with_order((dim.0 * dim.1 * dim.2, dim.3))
        .expect("bn grad view");
    let dbeta = g2.sum_axis(Axis(0));
    let dgamma = (&g2 * &cache.xhat).sum_axis(Axis(0));
    let dxhat = &g2 * gamma;
    let sum_dxhat = dxhat.sum_axis(Axis(0));
    let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(0));
    let dx = (&dxhat * n - &sum_dxhat - &cache.xhat * &sum_dxhat_xhat) * &cache.inv_std / n;
    (
        dx.into_shape_with_order(dim).expect("bn dx"),
        dgamma,
        dbeta,
    )
}
