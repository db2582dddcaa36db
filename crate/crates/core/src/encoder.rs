//! Query / momentum-key encoder pair.
//!
//! The query encoder `f_q` is trained by backpropagation. The key encoder
//! `f_k` shares its architecture, starts as an exact copy and afterwards only
//! moves through [`EncoderPair::momentum_update`]. Keys are produced by a
//! gradient-free pass, so no loss built on them can reach `f_k`.

use ndarray::{Array2, Axis, Ix2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    ema_into, BatchNorm, Conv2d, GlobalAvgPool, Layer, Linear, MaxPool2d, Param, Pass, Residual,
    Sequential, Tensor,
};
use crate::seeding::{self, tag};

const NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Backbone {
    /// Flatten, one hidden ReLU layer. `features = hidden`.
    TinyMlp { input_dim: usize, hidden: usize },
    /// Four conv-(bn)-relu-maxpool blocks of widths `w, 2w, 4w, 8w`, then global pooling.
    SmallCnn { width: usize, batch_norm: bool },
    Resnet18 { base_width: usize, cifar_stem: bool },
    Resnet50 { base_width: usize, cifar_stem: bool },
}

impl Backbone {
    pub fn feature_dim(&self) -> usize {
        match *self {
            Backbone::TinyMlp { hidden, .. } => hidden,
            Backbone::SmallCnn { width, .. } => 8 * width,
            Backbone::Resnet18 { base_width, .. } => 8 * base_width,
            Backbone::Resnet50 { base_width, .. } => 32 * base_width,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchSpec {
    pub backbone: Backbone,
    /// Hidden width of the projection MLP; defaults to the backbone feature width.
    pub proj_hidden: Option<usize>,
    pub proj_dim: usize,
}

impl Default for ArchSpec {
    fn default() -> Self {
        Self::small_cnn(16, 128)
    }
}

impl ArchSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = match &self.backbone {
            Backbone::TinyMlp { input_dim, hidden } => *input_dim == 0 || *hidden == 0,
            Backbone::SmallCnn { width, .. } => *width == 0,
            Backbone::Resnet18 { base_width, .. } | Backbone::Resnet50 { base_width, .. } => *base_width == 0,
        };
        if bad || self.proj_dim == 0 || self.proj_hidden == Some(0) {
            return Err(Error::Config(format!("invalid architecture {self:?}")));
        }
        Ok(())
    }

    pub fn small_cnn(width: usize, proj_dim: usize) -> Self {
        Self {
            backbone: Backbone::SmallCnn { width, batch_norm: true },
            proj_hidden: None,
            proj_dim,
        }
    }

    pub fn resnet18() -> Self {
        Self {
            backbone: Backbone::Resnet18 { base_width: 64, cifar_stem: false },
            proj_hidden: None,
            proj_dim: 128,
        }
    }

    pub fn resnet50() -> Self {
        Self {
            backbone: Backbone::Resnet50 { base_width: 64, cifar_stem: false },
            proj_hidden: None,
            proj_dim: 128,
        }
    }
}

fn conv_bn<R: Rng>(cin: usize, cout: usize, k: usize, stride: usize, pad: usize, rng: &mut R) -> Vec<Layer> {
    vec![
        Layer::Conv(Conv2d::new(cin, cout, k, stride, pad, false, rng)),
        Layer::BatchNorm(BatchNorm::new(cout)),
    ]
}

fn downsample<R: Rng>(cin: usize, cout: usize, stride: usize, rng: &mut R) -> Option<Sequential> {
    (stride != 1 || cin != cout).then(|| Sequential::new(conv_bn(cin, cout, 1, stride, 0, rng)))
}

fn basic_block<R: Rng>(cin: usize, cout: usize, stride: usize, rng: &mut R) -> Layer {
    let mut main = conv_bn(cin, cout, 3, stride, 1, rng);
    main.push(Layer::relu());
    main.extend(conv_bn(cout, cout, 3, 1, 1, rng));
    Layer::Residual(Box::new(Residual::new(
        Sequential::new(main),
        downsample(cin, cout, stride, rng),
    )))
}

fn bottleneck<R: Rng>(cin: usize, mid: usize, stride: usize, rng: &mut R) -> Layer {
    let cout = mid * 4;
    let mut main = conv_bn(cin, mid, 1, 1, 0, rng);
    main.push(Layer::relu());
    main.extend(conv_bn(mid, mid, 3, stride, 1, rng));
    main.push(Layer::relu());
    main.extend(conv_bn(mid, cout, 1, 1, 0, rng));
    Layer::Residual(Box::new(Residual::new(
        Sequential::new(main),
        downsample(cin, cout, stride, rng),
    )))
}

fn resnet<R: Rng>(base: usize, cifar_stem: bool, blocks: [usize; 4], bottlenecked: bool, rng: &mut R) -> Sequential {
    let mut layers = if cifar_stem {
        conv_bn(3, base, 3, 1, 1, rng)
    } else {
        conv_bn(3, base, 7, 2, 3, rng)
    };
    layers.push(Layer::relu());
    if !cifar_stem {
        layers.push(Layer::MaxPool(MaxPool2d::new(3, 2, 1)));
    }
    let mut cin = base;
    for (stage, &count) in blocks.iter().enumerate() {
        let width = base << stage;
        for i in 0..count {
            let stride = if stage > 0 && i == 0 { 2 } else { 1 };
            if bottlenecked {
                layers.push(bottleneck(cin, width, stride, rng));
                cin = width * 4;
            } else {
                layers.push(basic_block(cin, width, stride, rng));
                cin = width;
            }
        }
    }
    layers.push(Layer::GlobalAvgPool(GlobalAvgPool::default()));
    Sequential::new(layers)
}

fn build_backbone<R: Rng>(b: &Backbone, rng: &mut R) -> Sequential {
    match *b {
        Backbone::TinyMlp { input_dim, hidden } => Sequential::new(vec![
            Layer::flatten(),
            Layer::Linear(Linear::new(input_dim, hidden, rng)),
            Layer::relu(),
        ]),
        Backbone::SmallCnn { width, batch_norm } => {
            let mut layers = Vec::new();
            let mut cin = 3;
            for stage in 0..4 {
                let cout = width << stage;
                layers.push(Layer::Conv(Conv2d::new(cin, cout, 3, 1, 1, !batch_norm, rng)));
                if batch_norm {
                    layers.push(Layer::BatchNorm(BatchNorm::new(cout)));
                }
                layers.push(Layer::relu());
                layers.push(Layer::MaxPool(MaxPool2d::new(2, 2, 0)));
                cin = cout;
            }
            layers.push(Layer::GlobalAvgPool(GlobalAvgPool::default()));
            Sequential::new(layers)
        }
        Backbone::Resnet18 { base_width, cifar_stem } => resnet(base_width, cifar_stem, [2, 2, 2, 2], false, rng),
        Backbone::Resnet50 { base_width, cifar_stem } => resnet(base_width, cifar_stem, [3, 4, 6, 3], true, rng),
    }
}

/// Rows of a `B x D` matrix, optionally L2-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    pub vectors: Array2<f64>,
    pub normalized: bool,
}

impl EmbeddingBatch {
    pub fn raw(vectors: Array2<f64>) -> Self {
        Self {
            vectors,
            normalized: false,
        }
    }

    /// Normalizes each row to unit L2 norm.
    pub fn normalize(vectors: Array2<f64>) -> Self {
        let (unit, _) = l2_normalize(&vectors);
        Self {
            vectors: unit,
            normalized: true,
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn check_normalized(&self) -> Result<()> {
        if !self.normalized {
            return Err(Error::Contract("embeddings are not marked normalized".into()));
        }
        check_unit_rows(&self.vectors)
    }
}

pub(crate) fn check_unit_rows(m: &Array2<f64>) -> Result<()> {
    for (i, row) in m.rows().into_iter().enumerate() {
        let n = row.dot(&row).sqrt();
        if !n.is_finite() || (n - 1.0).abs() > NORM_TOL {
            return Err(Error::Contract(format!("row {i} has norm {n}, expected 1")));
        }
    }
    Ok(())
}

fn l2_normalize(z: &Array2<f64>) -> (Array2<f64>, Vec<f64>) {
    let norms: Vec<f64> = z.rows().into_iter().map(|r| r.dot(&r).sqrt().max(1e-12)).collect();
    let mut out = z.clone();
    for (mut row, n) in out.rows_mut().into_iter().zip(&norms) {
        row.mapv_inplace(|v| v / n);
    }
    (out, norms)
}

/// Backbone followed by a two-layer projection MLP and L2 normalization.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub backbone: Sequential,
    pub head: Sequential,
    cache: Option<(Array2<f64>, Vec<f64>)>,
}

impl Encoder {
    pub fn new<R: Rng>(arch: &ArchSpec, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let feat = arch.backbone.feature_dim();
        let hidden = arch.proj_hidden.unwrap_or(feat);
        let backbone = build_backbone(&arch.backbone, rng);
        let head = Sequential::new(vec![
            Layer::Linear(Linear::new(feat, hidden, rng)),
            Layer::relu(),
            Layer::Linear(Linear::new(hidden, arch.proj_dim, rng)),
        ]);
        Ok(Self {
            backbone,
            head,
            cache: None,
        })
    }

    /// Backbone features (the representation evaluated by probes).
    pub fn features(&mut self, x: Tensor, pass: Pass) -> Array2<f64> {
        self.backbone
            .forward(x, pass)
            .into_dimensionality::<Ix2>()
            .expect("backbone emits (batch, features)")
    }

    pub fn embed(&mut self, x: Tensor, pass: Pass) -> EmbeddingBatch {
        let h = self.backbone.forward(x, pass);
        let z = self
            .head
            .forward(h, pass)
            .into_dimensionality::<Ix2>()
            .expect("head emits (batch, dim)");
        let (unit, norms) = l2_normalize(&z);
        if pass.caches() {
            self.cache = Some((unit.clone(), norms));
        }
        EmbeddingBatch {
            vectors: unit,
            normalized: true,
        }
    }

    /// Backpropagates `dL/d(unit embedding)` through normalization, head and backbone.
    pub fn backward(&mut self, grad: &Array2<f64>) {
        let (unit, norms) = self.cache.take().expect("encoder backward without cached forward");
        let mut dz = grad.clone();
        for ((mut d, u), n) in dz.rows_mut().into_iter().zip(unit.rows()).zip(&norms) {
            let proj = d.dot(&u);
            d.zip_mut_with(&u, |dv, &uv| *dv = (*dv - uv * proj) / n);
        }
        let dh = self.head.backward(dz.into_dyn());
        self.backbone.backward(dh);
    }

    pub fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        self.backbone.visit_params(f);
        self.head.visit_params(f);
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.backbone.visit_params_mut(f);
        self.head.visit_params_mut(f);
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = Vec::new();
        self.visit_params(&mut |p| v.push(p));
        v
    }

    pub fn num_params(&self) -> usize {
        self.backbone.num_params() + self.head.num_params()
    }

    pub fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |p| p.zero_grad());
    }

    pub fn clear_cache(&mut self) {
        self.backbone.clear_cache();
        self.head.clear_cache();
        self.cache = None;
    }

    /// Parameters then buffers, in a fixed traversal order.
    pub fn state_tensors(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        self.visit_params(&mut |p| out.push(p.value.clone()));
        self.backbone.visit_buffers(&mut |b| out.push(b.clone()));
        self.head.visit_buffers(&mut |b| out.push(b.clone()));
        out
    }

    pub fn load_state_tensors(&mut self, tensors: &[Tensor]) -> Result<()> {
        let mut it = tensors.iter();
        let mut err = None;
        let mut take = |dst: &mut Tensor| match it.next() {
            Some(src) if src.shape() == dst.shape() => dst.assign(src),
            Some(src) => {
                err.get_or_insert(format!("shape {:?} vs {:?}", src.shape(), dst.shape()));
            }
            None => {
                err.get_or_insert("too few tensors".to_string());
            }
        };
        self.backbone.visit_params_mut(&mut |p| take(&mut p.value));
        self.head.visit_params_mut(&mut |p| take(&mut p.value));
        self.backbone.visit_buffers_mut(&mut |b| take(b));
        self.head.visit_buffers_mut(&mut |b| take(b));
        if let Some(e) = err {
            return Err(Error::Checkpoint(format!("encoder state mismatch: {e}")));
        }
        if it.next().is_some() {
            return Err(Error::Checkpoint("encoder state has extra tensors".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    MomentumContrast,
    /// Both branches share one set of parameters trained by backpropagation.
    EndToEnd,
}

#[derive(Debug, Clone)]
pub struct EncoderPair {
    pub query: Encoder,
    pub key: Encoder,
    pub momentum: f64,
    pub mode: PairMode,
}

impl EncoderPair {
    /// Builds `f_q` from the seeded init stream and copies it into `f_k`.
    pub fn init(arch: &ArchSpec, momentum: f64, mode: PairMode, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        let mut rng = seeding::stream(seed, &[tag::INIT]);
        let query = Encoder::new(arch, &mut rng)?;
        let key = query.clone();
        Ok(Self {
            query,
            key,
            momentum,
            mode,
        })
    }

    /// Query embeddings; the pass is cached so [`Self::backward_query`] can follow.
    pub fn encode_query(&mut self, batch: Tensor) -> Result<EmbeddingBatch> {
        check_batch(&batch)?;
        Ok(self.query.embed(batch, Pass::Train))
    }

    /// Key embeddings from a gradient-free pass (the stop-gradient branch).
    pub fn encode_key(&mut self, batch: Tensor) -> Result<EmbeddingBatch> {
        check_batch(&batch)?;
        let net = match self.mode {
            PairMode::MomentumContrast => &mut self.key,
            PairMode::EndToEnd => &mut self.query,
        };
        Ok(net.embed(batch, Pass::NoGrad))
    }

    pub fn backward_query(&mut self, grad: &Array2<f64>) {
        self.query.backward(grad);
    }

    /// `theta_k <- m * theta_k + (1 - m) * theta_q` over every trainable parameter.
    pub fn momentum_update(&mut self) -> Result<()> {
        if self.mode != PairMode::MomentumContrast {
            return Err(Error::Mode("momentum update is undefined for end-to-end pairs".into()));
        }
        let sources: Vec<&Tensor> = {
            let mut v = Vec::new();
            self.query.visit_params(&mut |p| v.push(&p.value));
            v
        };
        let m = self.momentum;
        let mut i = 0;
        self.key.visit_params_mut(&mut |p| {
            ema_into(&mut p.value, sources[i], m);
            i += 1;
        });
        Ok(())
    }

    /// Copies `theta_q` into `theta_k`; keeps end-to-end checkpoints self-consistent.
    pub fn sync_key(&mut self) {
        let sources: Vec<Tensor> = self.query.params().iter().map(|p| p.value.clone()).collect();
        let mut i = 0;
        self.key.visit_params_mut(&mut |p| {
            p.value.assign(&sources[i]);
            i += 1;
        });
    }

    pub fn shapes_congruent(&self) -> bool {
        let q: Vec<Vec<usize>> = self.query.params().iter().map(|p| p.value.shape().to_vec()).collect();
        let k: Vec<Vec<usize>> = self.key.params().iter().map(|p| p.value.shape().to_vec()).collect();
        q == k
    }
}

fn check_batch(batch: &Tensor) -> Result<()> {
    if batch.ndim() != 4 || batch.shape()[0] == 0 || batch.shape()[1] != 3 {
        return Err(Error::Shape(format!(
            "expected a non-empty (B, 3, H, W) batch, got {:?}",
            batch.shape()
        )));
    }
    Ok(())
}

/// Mean over dimensions of the per-dimension standard deviation across rows.
pub fn embedding_std(e: &Array2<f64>) -> f64 {
    if e.nrows() < 2 {
        return 0.0;
    }
    let std = e.std_axis(Axis(0), 0.0);
    std.mean().unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::uniform;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mlp_arch() -> ArchSpec {
        ArchSpec {
            backbone: Backbone::TinyMlp { input_dim: 48, hidden: 10 },
            proj_hidden: None,
            proj_dim: 6,
        }
    }

    fn batch(b: usize, seed: u64) -> Tensor {
        uniform(&[b, 3, 4, 4], 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn init_copies_query_into_key() {
        let pair = EncoderPair::init(&mlp_arch(), 0.999, PairMode::MomentumContrast, 3).unwrap();
        assert_eq!(pair.query.state_tensors(), pair.key.state_tensors());
        assert_eq!(pair.query.num_params(), pair.key.num_params());
        // 48*10+10 + 10*10+10 + 10*6+6
        assert_eq!(pair.query.num_params(), 666);
        assert!(EncoderPair::init(&mlp_arch(), 1.0, PairMode::MomentumContrast, 0).is_err());
        assert!(EncoderPair::init(&mlp_arch(), 0.0, PairMode::MomentumContrast, 0).is_ok());
    }

    #[test]
    fn query_embeddings_are_unit_rows() {
        let mut pair = EncoderPair::init(
            &ArchSpec {
                backbone: Backbone::TinyMlp { input_dim: 48, hidden: 32 },
                proj_hidden: None,
                proj_dim: 128,
            },
            0.999,
            PairMode::MomentumContrast,
            1,
        )
        .unwrap();
        let e = pair.encode_query(batch(8, 4)).unwrap();
        assert_eq!((e.len(), e.dim()), (8, 128));
        e.check_normalized().unwrap();
        let one = pair.encode_query(batch(1, 4)).unwrap();
        assert_eq!(one.len(), 1);
    }

    #[test]
    fn duplicated_image_gives_identical_rows() {
        let mut pair = EncoderPair::init(&mlp_arch(), 0.9, PairMode::MomentumContrast, 2).unwrap();
        let x = batch(1, 8);
        let doubled = ndarray::concatenate(Axis(0), &[x.view(), x.view()]).unwrap();
        let e = pair.encode_query(doubled).unwrap();
        assert_eq!(e.vectors.row(0), e.vectors.row(1));
    }

    #[test]
    fn key_matches_query_after_init_and_is_repeatable() {
        let mut pair = EncoderPair::init(&mlp_arch(), 0.999, PairMode::MomentumContrast, 5).unwrap();
        let x = batch(3, 1);
        let k1 = pair.encode_key(x.clone()).unwrap();
        let k2 = pair.encode_key(x.clone()).unwrap();
        let q = pair.encode_query(x).unwrap();
        assert_eq!(k1, k2);
        assert_eq!(k1.vectors, q.vectors);
    }

    #[test]
    fn shape_errors() {
        let mut pair = EncoderPair::init(&mlp_arch(), 0.9, PairMode::MomentumContrast, 0).unwrap();
        assert!(matches!(pair.encode_query(Tensor::zeros(ndarray::IxDyn(&[2, 3]))), Err(Error::Shape(_))));
        assert!(matches!(
            pair.encode_key(Tensor::zeros(ndarray::IxDyn(&[0, 3, 4, 4]))),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn scalar_momentum_update() {
        let mut pair = EncoderPair::init(&mlp_arch(), 0.999, PairMode::MomentumContrast, 0).unwrap();
        pair.key.visit_params_mut(&mut |p| p.value.fill(1.0));
        pair.query.visit_params_mut(&mut |p| p.value.fill(0.0));
        pair.momentum_update().unwrap();
        for p in pair.key.params() {
            assert!(p.value.iter().all(|v| (v - 0.999).abs() < 1e-15));
        }
        for p in pair.query.params() {
            assert!(p.value.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn equal_parameters_are_a_fixed_point() {
        let mut pair = EncoderPair::init(&mlp_arch(), 0.7, PairMode::MomentumContrast, 4).unwrap();
        let before = pair.key.state_tensors();
        pair.momentum_update().unwrap();
        let after = pair.key.state_tensors();
        for (a, b) in before.iter().zip(&after) {
            assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-15));
        }
    }

    #[test]
    fn zero_momentum_copies() {
        let mut pair = EncoderPair::init(&mlp_arch(), 0.0, PairMode::MomentumContrast, 4).unwrap();
        pair.query.visit_params_mut(&mut |p| p.value.mapv_inplace(|v| v * 3.0 + 1.0));
        pair.momentum_update().unwrap();
        assert_eq!(pair.key.state_tensors(), pair.query.state_tensors());
    }

    #[test]
    fn repeated_updates_follow_geometric_closed_form() {
        let m = 0.97;
        let mut pair = EncoderPair::init(&mlp_arch(), m, PairMode::MomentumContrast, 6).unwrap();
        pair.query.visit_params_mut(&mut |p| p.value.mapv_inplace(|v| v * 2.0 - 0.3));
        let k0: Vec<Tensor> = pair.key.params().iter().map(|p| p.value.clone()).collect();
        let q: Vec<Tensor> = pair.query.params().iter().map(|p| p.value.clone()).collect();
        let s = 100;
        for _ in 0..s {
            pair.momentum_update().unwrap();
        }
        let ms = m.powi(s);
        for ((k, k0), q) in pair.key.params().iter().zip(&k0).zip(&q) {
            let want = k0 * ms + q * (1.0 - ms);
            assert!(k.value.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12));
        }
        assert!(pair.shapes_congruent());
    }

    #[test]
    fn end_to_end_pair_rejects_momentum_update() {
        let mut pair = EncoderPair::init(&mlp_arch(), 0.9, PairMode::EndToEnd, 0).unwrap();
        assert!(matches!(pair.momentum_update(), Err(Error::Mode(_))));
    }

    #[test]
    fn normalization_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut enc = Encoder::new(&mlp_arch(), &mut rng).unwrap();
        let x = batch(2, 6);
        let probe = uniform(&[2, 6], 1.0, &mut rng).into_dimensionality::<Ix2>().unwrap();
        let f = |enc: &mut Encoder| (&enc.clone().embed(x.clone(), Pass::NoGrad).vectors * &probe).sum();
        enc.zero_grad();
        let mut work = enc.clone();
        work.embed(x.clone(), Pass::Train);
        work.backward(&probe);
        let grads: Vec<Tensor> = work.params().iter().map(|p| p.grad.clone()).collect();
        let h = 1e-6;
        for (pi, g) in grads.iter().enumerate() {
            for i in (0..g.len()).step_by(7) {
                let eval = |d: f64| {
                    let mut e = enc.clone();
                    let mut k = 0;
                    e.visit_params_mut(&mut |p| {
                        if k == pi {
                            p.value.as_slice_mut().unwrap()[i] += d;
                        }
                        k += 1;
                    });
                    f(&mut e)
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let an = g.as_slice().unwrap()[i];
                assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "{pi}[{i}] {fd} vs {an}");
            }
        }
    }

    #[test]
    fn resnet_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let arch = ArchSpec {
            backbone: Backbone::Resnet18 { base_width: 4, cifar_stem: true },
            proj_hidden: None,
            proj_dim: 8,
        };
        let mut enc = Encoder::new(&arch, &mut rng).unwrap();
        let x = uniform(&[2, 3, 32, 32], 1.0, &mut rng);
        assert_eq!(enc.features(x.clone(), Pass::Eval).dim(), (2, 32));
        assert_eq!(enc.embed(x, Pass::NoGrad).dim(), 8);

        let arch50 = ArchSpec {
            backbone: Backbone::Resnet50 { base_width: 2, cifar_stem: false },
            proj_hidden: Some(16),
            proj_dim: 8,
        };
        let mut enc = Encoder::new(&arch50, &mut rng).unwrap();
        let x = uniform(&[1, 3, 64, 64], 1.0, &mut rng);
        assert_eq!(enc.features(x, Pass::Eval).dim(), (1, 64));
    }

    #[test]
    fn full_width_resnet18_parameter_count() {
        // torchvision resnet18 minus its 1000-way fc: 11,689,512 - 513,000
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let backbone = build_backbone(&ArchSpec::resnet18().backbone, &mut rng);
        assert_eq!(backbone.num_params(), 11_176_512);
    }

    #[test]
    fn state_round_trip() {
        let arch = ArchSpec::small_cnn(2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Encoder::new(&arch, &mut rng).unwrap();
        let mut b = Encoder::new(&arch, &mut rng).unwrap();
        b.load_state_tensors(&a.state_tensors()).unwrap();
        assert_eq!(a.state_tensors(), b.state_tensors());
        assert!(b.load_state_tensors(&a.state_tensors()[1..]).is_err());
    }
}
