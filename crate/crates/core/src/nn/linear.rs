use ndarray::{Array2, Axis, Ix2, IxDyn};
use rand::Rng;

use super::{uniform, Param, Pass, Tensor};

/// Fully connected layer, `y = x W^T + b` with `W` shaped `(out, in)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    input: Option<Array2<f64>>,
}

impl Linear {
    pub fn new<R: Rng>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        Self {
            weight: Param::new(uniform(&[out_features, in_features], bound, rng)),
            bias: Param::new(uniform(&[out_features], bound, rng)),
            input: None,
        }
    }

    /// Zero weights and bias.
    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        Self {
            weight: Param::new(Tensor::zeros(IxDyn(&[out_features, in_features]))),
            bias: Param::new(Tensor::zeros(IxDyn(&[out_features]))),
            input: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.value.shape()[0]
    }

    fn weight2(&self) -> ndarray::ArrayView2<'_, f64> {
        self.weight.value.view().into_dimensionality::<Ix2>().expect("2-d weight")
    }

    pub(super) fn forward(&mut self, x: Tensor, pass: Pass) -> Tensor {
        let x = x.into_dimensionality::<Ix2>().expect("linear expects (batch, features)");
        let mut out = x.dot(&self.weight2().t());
        out += &self.bias.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        if pass.caches() {
            self.input = Some(x);
        }
        out.into_dyn()
    }

    pub(super) fn backward(&mut self, grad: Tensor) -> Tensor {
        let x = self.input.take().expect("linear backward without cached forward");
        let g = grad.into_dimensionality::<Ix2>().expect("2-d grad");
        let gw = g.t().dot(&x);
        self.weight.grad += &gw.into_dyn();
        self.bias.grad += &g.sum_axis(Axis(0)).into_dyn();
        g.dot(&self.weight2()).into_dyn()
    }

    pub(super) fn clear_cache(&mut self) {
        self.input = None;
    }
}
