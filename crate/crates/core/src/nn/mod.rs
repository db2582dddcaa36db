//! Minimal layer stack with hand-written backpropagation.
//!
//! Everything runs in `f64` on the CPU. A layer caches what its backward
//! pass needs only when run with [`Pass::Train`]; the other passes are
//! gradient-free and leave no trace, which is how the key encoder's
//! stop-gradient is realized.

mod conv;
mod linear;
mod norm;
mod pool;

pub use conv::Conv2d;
pub use linear::Linear;
pub use norm::BatchNorm;
pub use pool::{GlobalAvgPool, MaxPool2d};

use ndarray::{ArrayD, IxDyn, Zip};
use rand::Rng;

pub type Tensor = ArrayD<f64>;

/// How a forward pass treats caches and normalization statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pass {
    /// Batch statistics, caches kept for `backward`.
    Train,
    /// Batch statistics (running stats still updated), nothing cached.
    NoGrad,
    /// Running statistics, nothing cached.
    Eval,
}

impl Pass {
    pub fn caches(self) -> bool {
        matches!(self, Pass::Train)
    }
}

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.raw_dim());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Tensor>,
}

impl Relu {
    fn forward(&mut self, x: Tensor, pass: Pass) -> Tensor {
        let out = x.mapv(|v| v.max(0.0));
        if pass.caches() {
            self.mask = Some(x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }));
        }
        out
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let mask = self.mask.take().expect("relu backward without cached forward");
        grad * mask
    }
}

#[derive(Debug, Clone, Default)]
pub struct Flatten {
    input_shape: Option<Vec<usize>>,
}

impl Flatten {
    fn forward(&mut self, x: Tensor, pass: Pass) -> Tensor {
        let n = x.shape()[0];
        let rest = x.len() / n.max(1);
        if pass.caches() {
            self.input_shape = Some(x.shape().to_vec());
        }
        let x = x.as_standard_layout().into_owned();
        x.into_shape_with_order(IxDyn(&[n, rest]))
            .expect("flatten of standard layout")
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let shape = self.input_shape.take().expect("flatten backward without cache");
        grad.as_standard_layout()
            .into_owned()
            .into_shape_with_order(IxDyn(&shape))
            .expect("flatten backward reshape")
    }
}

/// `relu(main(x) + shortcut(x))`, the residual unit used by the ResNets.
#[derive(Debug, Clone)]
pub struct Residual {
    pub main: Sequential,
    pub shortcut: Option<Sequential>,
    relu: Relu,
}

impl Residual {
    pub fn new(main: Sequential, shortcut: Option<Sequential>) -> Self {
        Self {
            main,
            shortcut,
            relu: Relu::default(),
        }
    }

    fn forward(&mut self, x: Tensor, pass: Pass) -> Tensor {
        let skip = match &mut self.shortcut {
            Some(s) => s.forward(x.clone(), pass),
            None => x.clone(),
        };
        let out = self.main.forward(x, pass) + skip;
        self.relu.forward(out, pass)
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let g = self.relu.backward(grad);
        let g_main = self.main.backward(g.clone());
        let g_skip = match &mut self.shortcut {
            Some(s) => s.backward(g),
            None => g,
        };
        g_main + g_skip
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Linear(Linear),
    Conv(Conv2d),
    BatchNorm(BatchNorm),
    Relu(Relu),
    MaxPool(MaxPool2d),
    GlobalAvgPool(GlobalAvgPool),
    Flatten(Flatten),
    Residual(Box<Residual>),
}

impl Layer {
    pub fn relu() -> Self {
        Layer::Relu(Relu::default())
    }

    pub fn flatten() -> Self {
        Layer::Flatten(Flatten::default())
    }

    pub fn forward(&mut self, x: Tensor, pass: Pass) -> Tensor {
        match self {
            Layer::Linear(l) => l.forward(x, pass),
            Layer::Conv(l) => l.forward(x, pass),
            Layer::BatchNorm(l) => l.forward(x, pass),
            Layer::Relu(l) => l.forward(x, pass),
            Layer::MaxPool(l) => l.forward(x, pass),
            Layer::GlobalAvgPool(l) => l.forward(x, pass),
            Layer::Flatten(l) => l.forward(x, pass),
            Layer::Residual(l) => l.forward(x, pass),
        }
    }

    pub fn backward(&mut self, grad: Tensor) -> Tensor {
        match self {
            Layer::Linear(l) => l.backward(grad),
            Layer::Conv(l) => l.backward(grad),
            Layer::BatchNorm(l) => l.backward(grad),
            Layer::Relu(l) => l.backward(grad),
            Layer::MaxPool(l) => l.backward(grad),
            Layer::GlobalAvgPool(l) => l.backward(grad),
            Layer::Flatten(l) => l.backward(grad),
            Layer::Residual(l) => l.backward(grad),
        }
    }

    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        match self {
            Layer::Linear(l) => {
                f(&l.weight);
                f(&l.bias);
            }
            Layer::Conv(l) => {
                f(&l.weight);
                if let Some(b) = &l.bias {
                    f(b);
                }
            }
            Layer::BatchNorm(l) => {
                f(&l.gamma);
                f(&l.beta);
            }
            Layer::Residual(r) => {
                r.main.visit_params(f);
                if let Some(s) = &r.shortcut {
                    s.visit_params(f);
                }
            }
            Layer::Relu(_) | Layer::MaxPool(_) | Layer::GlobalAvgPool(_) | Layer::Flatten(_) => {}
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        match self {
            Layer::Linear(l) => {
                f(&mut l.weight);
                f(&mut l.bias);
            }
            Layer::Conv(l) => {
                f(&mut l.weight);
                if let Some(b) = &mut l.bias {
                    f(b);
                }
            }
            Layer::BatchNorm(l) => {
                f(&mut l.gamma);
                f(&mut l.beta);
            }
            Layer::Residual(r) => {
                r.main.visit_params_mut(f);
                if let Some(s) = &mut r.shortcut {
                    s.visit_params_mut(f);
                }
            }
            Layer::Relu(_) | Layer::MaxPool(_) | Layer::GlobalAvgPool(_) | Layer::Flatten(_) => {}
        }
    }

    fn visit_buffers<'a>(&'a self, f: &mut dyn FnMut(&'a Tensor)) {
        match self {
            Layer::BatchNorm(l) => {
                f(&l.running_mean);
                f(&l.running_var);
            }
            Layer::Residual(r) => {
                r.main.visit_buffers(f);
                if let Some(s) = &r.shortcut {
                    s.visit_buffers(f);
                }
            }
            _ => {}
        }
    }

    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        match self {
            Layer::BatchNorm(l) => {
                f(&mut l.running_mean);
                f(&mut l.running_var);
            }
            Layer::Residual(r) => {
                r.main.visit_buffers_mut(f);
                if let Some(s) = &mut r.shortcut {
                    s.visit_buffers_mut(f);
                }
            }
            _ => {}
        }
    }

    fn clear_cache(&mut self) {
        match self {
            Layer::Linear(l) => l.clear_cache(),
            Layer::Conv(l) => l.clear_cache(),
            Layer::BatchNorm(l) => l.clear_cache(),
            Layer::Relu(l) => l.mask = None,
            Layer::MaxPool(l) => l.clear_cache(),
            Layer::GlobalAvgPool(l) => l.clear_cache(),
            Layer::Flatten(l) => l.input_shape = None,
            Layer::Residual(r) => {
                r.main.clear_cache();
                if let Some(s) = &mut r.shortcut {
                    s.clear_cache();
                }
                r.relu.mask = None;
            }
        }
    }
}

/// An ordered chain of layers.
#[derive(Debug, Clone, Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn push(&mut self, layer: Layer) {
        self.layers.push(layer);
    }

    pub fn forward(&mut self, x: Tensor, pass: Pass) -> Tensor {
        self.layers.iter_mut().fold(x, |h, l| l.forward(h, pass))
    }

    pub fn backward(&mut self, grad: Tensor) -> Tensor {
        self.layers
            .iter_mut()
            .rev()
            .fold(grad, |g, l| l.backward(g))
    }

    pub fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        for l in &self.layers {
            l.visit_params(f);
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for l in &mut self.layers {
            l.visit_params_mut(f);
        }
    }

    pub fn visit_buffers<'a>(&'a self, f: &mut dyn FnMut(&'a Tensor)) {
        for l in &self.layers {
            l.visit_buffers(f);
        }
    }

    pub fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        for l in &mut self.layers {
            l.visit_buffers_mut(f);
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        self.visit_params(&mut |p| out.push(p));
        out
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.len());
        n
    }

    pub fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |p| p.zero_grad());
    }

    pub fn clear_cache(&mut self) {
        for l in &mut self.layers {
            l.clear_cache();
        }
    }
}

/// Kaiming-normal tensor, `std = sqrt(2 / fan)`.
pub(crate) fn kaiming_normal<R: Rng>(shape: &[usize], fan: usize, rng: &mut R) -> Tensor {
    use rand_distr::{Distribution, StandardNormal};
    let std = (2.0 / fan as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
        .collect();
    Tensor::from_shape_vec(IxDyn(shape), data).expect("shape/product agree")
}

pub(crate) fn uniform<R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::from_shape_vec(IxDyn(shape), data).expect("shape/product agree")
}

/// `dst = decay * dst + (1 - decay) * src`, elementwise.
pub(crate) fn ema_into(dst: &mut Tensor, src: &Tensor, decay: f64) {
    Zip::from(dst).and(src).for_each(|d, &s| {
        *d = decay * *d + (1.0 - decay) * s;
    });
}

#[cfg(test)]
pub(crate) mod gradcheck {
    use super::*;

    /// Central-difference check of `d(sum(out * probe))/d(param)` and
    /// `.../d(input)` for a single sequential stack.
    pub fn check_stack(net: &mut Sequential, x: &Tensor, probe_seed: u64, tol: f64) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(probe_seed);
        let out = net.clone().forward(x.clone(), Pass::Train);
        let probe = uniform(out.shape(), 1.0, &mut rng);

        let objective = |net: &mut Sequential, x: &Tensor| -> f64 {
            let mut n = net.clone();
            let out = n.forward(x.clone(), Pass::Train);
            (&out * &probe).sum()
        };

        net.zero_grad();
        let mut work = net.clone();
        let _ = work.forward(x.clone(), Pass::Train);
        let gx = work.backward(probe.clone());

        let h = 1e-5;
        // input gradient
        for i in (0..x.len()).step_by((x.len() / 17).max(1)) {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_slice_mut().unwrap()[i] += h;
            xm.as_slice_mut().unwrap()[i] -= h;
            let fd = (objective(net, &xp) - objective(net, &xm)) / (2.0 * h);
            let an = gx.as_slice().unwrap()[i];
            let rel = (fd - an).abs() / (fd.abs() + an.abs()).max(1e-7);
            assert!(rel < tol, "input grad {i}: fd {fd} vs analytic {an}");
        }
        // parameter gradients
        let analytic: Vec<Tensor> = work.params().iter().map(|p| p.grad.clone()).collect();
        for (pi, g) in analytic.iter().enumerate() {
            for i in (0..g.len()).step_by((g.len() / 11).max(1)) {
                let eval = |delta: f64| {
                    let mut n = net.clone();
                    let mut k = 0;
                    n.visit_params_mut(&mut |p| {
                        if k == pi {
                            p.value.as_slice_mut().unwrap()[i] += delta;
                        }
                        k += 1;
                    });
                    objective(&mut n, x)
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let an = g.as_slice().unwrap()[i];
                let rel = (fd - an).abs() / (fd.abs() + an.abs()).max(1e-7);
                assert!(rel < tol, "param {pi}[{i}]: fd {fd} vs analytic {an}");
            }
        }
    }
}
