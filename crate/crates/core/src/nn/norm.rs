use ndarray::IxDyn;

use super::{Param, Pass, Tensor};

const EPS: f64 = 1e-5;
const MOMENTUM: f64 = 0.1;

/// Batch normalization over axis 1 of `(N, C)` or `(N, C, H, W)` input.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    shape: Vec<usize>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(Tensor::ones(IxDyn(&[channels]))),
            beta: Param::new(Tensor::zeros(IxDyn(&[channels]))),
            running_mean: Tensor::zeros(IxDyn(&[channels])),
            running_var: Tensor::ones(IxDyn(&[channels])),
            cache: None,
        }
    }

    fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    pub(super) fn forward(&mut self, x: Tensor, pass: Pass) -> Tensor {
        let shape = x.shape().to_vec();
        let (n, c) = (shape[0], shape[1]);
        assert_eq!(c, self.channels(), "batchnorm channel mismatch");
        let spatial: usize = shape[2..].iter().product();
        let x = x.as_standard_layout().into_owned();
        let xs = x.as_slice().expect("standard layout");
        let count = (n * spatial) as f64;

        let (mean, var) = if pass == Pass::Eval {
            (
                self.running_mean.iter().copied().collect::<Vec<_>>(),
                self.running_var.iter().copied().collect::<Vec<_>>(),
            )
        } else {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ci in 0..c {
                let mut s = 0.0;
                for ni in 0..n {
                    s += xs[(ni * c + ci) * spatial..][..spatial].iter().sum::<f64>();
                }
                let m = s / count;
                let mut v = 0.0;
                for ni in 0..n {
                    v += xs[(ni * c + ci) * spatial..][..spatial]
                        .iter()
                        .map(|a| (a - m) * (a - m))
                        .sum::<f64>();
                }
                mean[ci] = m;
                var[ci] = v / count;
            }
            let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            for ci in 0..c {
                self.running_mean[ci] = (1.0 - MOMENTUM) * self.running_mean[ci] + MOMENTUM * mean[ci];
                self.running_var[ci] =
                    (1.0 - MOMENTUM) * self.running_var[ci] + MOMENTUM * var[ci] * unbias;
            }
            (mean, var)
        };

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + EPS).sqrt()).collect();
        let mut xhat = vec![0.0; xs.len()];
        let mut out = vec![0.0; xs.len()];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * spatial;
                let (g, b) = (self.gamma.value[ci], self.beta.value[ci]);
                for j in base..base + spatial {
                    let h = (xs[j] - mean[ci]) * inv_std[ci];
                    xhat[j] = h;
                    out[j] = g * h + b;
                }
            }
        }
        if pass.caches() {
            self.cache = Some(BnCache {
                xhat,
                inv_std,
                shape: shape.clone(),
            });
        }
        Tensor::from_shape_vec(IxDyn(&shape), out).expect("bn output shape")
    }

    pub(super) fn backward(&mut self, grad: Tensor) -> Tensor {
        let cache = self.cache.take().expect("batchnorm backward without cached forward");
        let shape = cache.shape;
        let (n, c) = (shape[0], shape[1]);
        let spatial: usize = shape[2..].iter().product();
        let m = (n * spatial) as f64;
        let grad = grad.as_standard_layout();
        let gs = grad.as_slice().expect("standard layout");
        let mut dx = vec![0.0; gs.len()];
        for ci in 0..c {
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for ni in 0..n {
                let base = (ni * c + ci) * spatial;
                for (g, xh) in gs[base..base + spatial].iter().zip(&cache.xhat[base..base + spatial]) {
                    sum_g += g;
                    sum_gx += g * xh;
                }
            }
            self.beta.grad[ci] += sum_g;
            self.gamma.grad[ci] += sum_gx;
            let k = self.gamma.value[ci] * cache.inv_std[ci] / m;
            for ni in 0..n {
                let base = (ni * c + ci) * spatial;
                for j in base..base + spatial {
                    dx[j] = k * (m * gs[j] - sum_g - cache.xhat[j] * sum_gx);
                }
            }
        }
        Tensor::from_shape_vec(IxDyn(&shape), dx).expect("bn grad shape")
    }

    pub(super) fn clear_cache(&mut self) {
        self.cache = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_pass_normalizes_each_channel() {
        let mut bn = BatchNorm::new(2);
        let x = Tensor::from_shape_vec(
            IxDyn(&[2, 2, 1, 2]),
            vec![1.0, 2.0, 10.0, 10.0, 3.0, 4.0, 20.0, 30.0],
        )
        .unwrap();
        let y = bn.forward(x, Pass::NoGrad);
        for ci in 0..2 {
            let vals: Vec<f64> = (0..2)
                .flat_map(|n| (0..2).map(move |j| (n, j)))
                .map(|(n, j)| y[[n, ci, 0, j]])
                .collect();
            let mean = vals.iter().sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
        }
        // running stats moved off their initial values
        assert!(bn.running_mean[0] > 0.0);
    }

    #[test]
    fn eval_pass_uses_running_stats() {
        let mut bn = BatchNorm::new(1);
        bn.running_mean[0] = 2.0;
        bn.running_var[0] = 4.0 - EPS;
        let x = Tensor::from_shape_vec(IxDyn(&[1, 1]), vec![6.0]).unwrap();
        let y = bn.forward(x, Pass::Eval);
        assert!((y[[0, 0]] - 2.0).abs() < 1e-12);
    }
}
