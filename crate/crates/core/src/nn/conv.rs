use ndarray::{Array2, Axis, IxDyn};
use rand::Rng;

use super::{kaiming_normal, Param, Pass, Tensor};

/// 2-d convolution over `(N, C, H, W)` input, lowered to a single GEMM
/// through an im2col buffer of shape `(C*k*k, N*Ho*Wo)`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    cache: Option<ConvCache>,
}

#[derive(Debug, Clone)]
struct ConvCache {
    cols: Array2<f64>,
    input_shape: [usize; 4],
    out_hw: (usize, usize),
}

#[derive(Clone, Copy)]
struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Conv2d {
    pub fn new<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        // fan-out Kaiming, as torchvision initializes ResNet convs
        let fan_out = out_channels * kernel * kernel;
        let weight = kaiming_normal(&[out_channels, in_channels, kernel, kernel], fan_out, rng);
        Self {
            weight: Param::new(weight),
            bias: bias.then(|| Param::new(Tensor::zeros(IxDyn(&[out_channels])))),
            kernel,
            stride,
            padding,
            cache: None,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    fn geometry(&self, shape: &[usize]) -> Geometry {
        assert_eq!(shape.len(), 4, "conv expects (N, C, H, W), got {shape:?}");
        assert_eq!(shape[1], self.in_channels(), "conv channel mismatch");
        let (h, w) = (shape[2], shape[3]);
        let ho = (h + 2 * self.padding - self.kernel) / self.stride + 1;
        let wo = (w + 2 * self.padding - self.kernel) / self.stride + 1;
        Geometry {
            n: shape[0],
            c: shape[1],
            h,
            w,
            k: self.kernel,
            stride: self.stride,
            pad: self.padding,
            ho,
            wo,
        }
    }

    fn weight_matrix(&self) -> ndarray::ArrayView2<'_, f64> {
        let o = self.out_channels();
        let ckk = self.weight.value.len() / o;
        self.weight
            .value
            .view()
            .into_shape_with_order((o, ckk))
            .expect("standard-layout weight")
    }

    pub(super) fn forward(&mut self, x: Tensor, pass: Pass) -> Tensor {
        let g = self.geometry(x.shape());
        let x = x.as_standard_layout();
        let cols = im2col(x.as_slice().expect("standard layout"), g);
        let out_mat = self.weight_matrix().dot(&cols);
        let o = self.out_channels();
        let plane = g.ho * g.wo;
        let src = out_mat.as_slice().expect("gemm output is contiguous");
        let mut out = vec![0.0; g.n * o * plane];
        for oc in 0..o {
            let bias = self.bias.as_ref().map_or(0.0, |b| b.value[[oc]]);
            for ni in 0..g.n {
                let s = &src[oc * g.n * plane + ni * plane..][..plane];
                let d = &mut out[(ni * o + oc) * plane..][..plane];
                for (dv, sv) in d.iter_mut().zip(s) {
                    *dv = sv + bias;
                }
            }
        }
        if pass.caches() {
            self.cache = Some(ConvCache {
                cols,
                input_shape: [g.n, g.c, g.h, g.w],
                out_hw: (g.ho, g.wo),
            });
        }
        Tensor::from_shape_vec(IxDyn(&[g.n, o, g.ho, g.wo]), out).expect("conv output shape")
    }

    pub(super) fn backward(&mut self, grad: Tensor) -> Tensor {
        let cache = self.cache.take().expect("conv backward without cached forward");
        let [n, c, h, w] = cache.input_shape;
        let (ho, wo) = cache.out_hw;
        let o = self.out_channels();
        let plane = ho * wo;
        let grad = grad.as_standard_layout();
        let gs = grad.as_slice().expect("standard layout");
        // (N, O, Ho, Wo) -> (O, N*Ho*Wo)
        let mut gmat = vec![0.0; o * n * plane];
        for ni in 0..n {
            for oc in 0..o {
                gmat[oc * n * plane + ni * plane..][..plane]
                    .copy_from_slice(&gs[(ni * o + oc) * plane..][..plane]);
            }
        }
        let gmat = Array2::from_shape_vec((o, n * plane), gmat).expect("grad matrix");
        let gw = gmat.dot(&cache.cols.t());
        let wshape = self.weight.value.raw_dim();
        self.weight.grad += &gw.into_shape_with_order(wshape).expect("weight grad reshape");
        if let Some(b) = &mut self.bias {
            b.grad += &gmat.sum_axis(Axis(1)).into_dyn();
        }
        let dcols = self.weight_matrix().t().dot(&gmat);
        let geo = Geometry {
            n,
            c,
            h,
            w,
            k: self.kernel,
            stride: self.stride,
            pad: self.padding,
            ho,
            wo,
        };
        let dx = col2im(&dcols, geo);
        Tensor::from_shape_vec(IxDyn(&[n, c, h, w]), dx).expect("conv input grad shape")
    }

    pub(super) fn clear_cache(&mut self) {
        self.cache = None;
    }
}

fn im2col(x: &[f64], g: Geometry) -> Array2<f64> {
    let width = g.n * g.ho * g.wo;
    let rows = g.c * g.k * g.k;
    let mut cols = vec![0.0; rows * width];
    for ci in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst_row = &mut cols[row * width..][..width];
                for ni in 0..g.n {
                    let src = &x[(ni * g.c + ci) * g.h * g.w..][..g.h * g.w];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * g.w..][..g.w];
                        let dst = &mut dst_row[(ni * g.ho + oy) * g.wo..][..g.wo];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((rows, width), cols).expect("im2col shape")
}

fn col2im(cols: &Array2<f64>, g: Geometry) -> Vec<f64> {
    let width = g.n * g.ho * g.wo;
    let cols = cols.as_standard_layout();
    let cs = cols.as_slice().expect("standard layout");
    let mut x = vec![0.0; g.n * g.c * g.h * g.w];
    for ci in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src_row = &cs[row * width..][..width];
                for ni in 0..g.n {
                    let dst = &mut x[(ni * g.c + ci) * g.h * g.w..][..g.h * g.w];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[iy as usize * g.w..][..g.w];
                        let src = &src_row[(ni * g.ho + oy) * g.wo..][..g.wo];
                        for (ox, s) in src.iter().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst_row[ix as usize] += s;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}
