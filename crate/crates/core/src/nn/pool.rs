use ndarray::IxDyn;

use super::{Pass, Tensor};

#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            stride,
            padding,
            cache: None,
        }
    }

    pub(super) fn forward(&mut self, x: Tensor, pass: Pass) -> Tensor {
        let s = x.shape().to_vec();
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let ho = (h + 2 * self.padding - self.kernel) / self.stride + 1;
        let wo = (w + 2 * self.padding - self.kernel) / self.stride + 1;
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let mut out = vec![f64::NEG_INFINITY; n * c * ho * wo];
        let mut arg = vec![0usize; out.len()];
        for plane in 0..n * c {
            let src = &xs[plane * h * w..][..h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let o = plane * ho * wo + oy * wo + ox;
                    for ky in 0..self.kernel {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..self.kernel {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = iy as usize * w + ix as usize;
                            if src[idx] > out[o] {
                                out[o] = src[idx];
                                arg[o] = plane * h * w + idx;
                            }
                        }
                    }
                }
            }
        }
        if pass.caches() {
            self.cache = Some((arg, s));
        }
        Tensor::from_shape_vec(IxDyn(&[n, c, ho, wo]), out).expect("pool output shape")
    }

    pub(super) fn backward(&mut self, grad: Tensor) -> Tensor {
        let (arg, shape) = self.cache.take().expect("maxpool backward without cache");
        let mut dx = vec![0.0; shape.iter().product()];
        for (g, &a) in grad.iter().zip(&arg) {
            dx[a] += g;
        }
        Tensor::from_shape_vec(IxDyn(&shape), dx).expect("pool grad shape")
    }

    pub(super) fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// `(N, C, H, W) -> (N, C)` spatial mean.
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    shape: Option<Vec<usize>>,
}

impl GlobalAvgPool {
    pub(super) fn forward(&mut self, x: Tensor, pass: Pass) -> Tensor {
        let s = x.shape().to_vec();
        let (n, c) = (s[0], s[1]);
        let spatial: usize = s[2..].iter().product();
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let out: Vec<f64> = (0..n * c)
            .map(|p| xs[p * spatial..][..spatial].iter().sum::<f64>() / spatial as f64)
            .collect();
        if pass.caches() {
            self.shape = Some(s);
        }
        Tensor::from_shape_vec(IxDyn(&[n, c]), out).expect("gap output shape")
    }

    pub(super) fn backward(&mut self, grad: Tensor) -> Tensor {
        let shape = self.shape.take().expect("gap backward without cache");
        let spatial: usize = shape[2..].iter().product();
        let mut dx = Vec::with_capacity(shape.iter().product());
        for g in grad.iter() {
            dx.extend(std::iter::repeat_n(g / spatial as f64, spatial));
        }
        Tensor::from_shape_vec(IxDyn(&shape), dx).expect("gap grad shape")
    }

    pub(super) fn clear_cache(&mut self) {
        self.shape = None;
    }
}
