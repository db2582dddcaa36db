//! InfoNCE and the mode-selected total loss, with analytic gradients.
//!
//! Every term is a softmax cross-entropy over similarity logits divided by the
//! temperature, with the positive included in the partition function.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::encoder::EmbeddingBatch;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Both crops attracted to the uncropped anchor; queue negatives.
    Leoclr,
    /// One crop queried against the other crop's key; queue negatives.
    MocoBaseline,
    /// Leoclr terms with a shared encoder and in-batch negatives.
    EndToEnd,
    /// Two-crop shared-encoder baseline with symmetric in-batch terms.
    EndToEndBaseline,
    /// Leoclr terms where the anchor itself is a random crop.
    RandomAnchor,
    /// Anchor-crop terms plus a crop-crop term.
    AttractAll,
}

impl LossMode {
    pub const ALL: [LossMode; 6] = [
        LossMode::Leoclr,
        LossMode::MocoBaseline,
        LossMode::EndToEnd,
        LossMode::EndToEndBaseline,
        LossMode::RandomAnchor,
        LossMode::AttractAll,
    ];

    pub fn is_end_to_end(self) -> bool {
        matches!(self, LossMode::EndToEnd | LossMode::EndToEndBaseline)
    }

    pub fn name(self) -> &'static str {
        match self {
            LossMode::Leoclr => "leoclr",
            LossMode::MocoBaseline => "moco_baseline",
            LossMode::EndToEnd => "end_to_end",
            LossMode::EndToEndBaseline => "end_to_end_baseline",
            LossMode::RandomAnchor => "random_anchor",
            LossMode::AttractAll => "attract_all",
        }
    }
}

impl std::fmt::Display for LossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown loss mode {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContrastiveConfig {
    pub tau: f64,
    pub loss_mode: LossMode,
    #[serde(default)]
    pub reduction: Reduction,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            tau: 0.2,
            loss_mode: LossMode::Leoclr,
            reduction: Reduction::Mean,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub term1: f64,
    pub term2: f64,
    /// Crop-to-crop term of `attract_all`; zero elsewhere.
    pub term3: f64,
    pub positive_logit_mean: f64,
    pub negative_logit_mean: f64,
}

/// `-log softmax(logits)[pos]` with max subtraction.
fn nce_from_logits(logits: &[f64], pos: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if logits[pos] == m {
        let rest: f64 = logits
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != pos)
            .map(|(_, &l)| (l - m).exp())
            .sum();
        return rest.ln_1p();
    }
    let sum: f64 = logits.iter().map(|&l| (l - m).exp()).sum();
    (m - logits[pos]) + sum.ln()
}

fn ensure_finite<'a>(arrays: impl IntoIterator<Item = ArrayView1<'a, f64>>) -> Result<()> {
    for a in arrays {
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("non-finite value in loss input".into()));
        }
    }
    Ok(())
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Contract(format!("tau must be positive, got {tau}")));
    }
    Ok(())
}

/// Single-query InfoNCE loss against a positive and a set of negatives.
pub fn info_nce(u: ArrayView1<f64>, v_plus: ArrayView1<f64>, negatives: &Array2<f64>, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    if negatives.nrows() == 0 {
        return Err(Error::EmptyQueue);
    }
    if u.len() != v_plus.len() || negatives.ncols() != u.len() {
        return Err(Error::Shape(format!(
            "dims: query {}, positive {}, negatives {}",
            u.len(),
            v_plus.len(),
            negatives.ncols()
        )));
    }
    ensure_finite([u, v_plus])?;
    ensure_finite(negatives.rows())?;
    let mut logits = Vec::with_capacity(negatives.nrows() + 1);
    logits.push(u.dot(&v_plus) / tau);
    logits.extend(negatives.rows().into_iter().map(|n| u.dot(&n) / tau));
    Ok(nce_from_logits(&logits, 0))
}

/// Row-wise InfoNCE with one shared negative set.
pub fn info_nce_batch(
    u: &EmbeddingBatch,
    v_plus: &EmbeddingBatch,
    negatives: &Array2<f64>,
    tau: f64,
) -> Result<Array1<f64>> {
    if u.vectors.dim() != v_plus.vectors.dim() {
        return Err(Error::Shape(format!(
            "query batch {:?} vs positive batch {:?}",
            u.vectors.dim(),
            v_plus.vectors.dim()
        )));
    }
    u.check_normalized()?;
    v_plus.check_normalized()?;
    u.vectors
        .rows()
        .into_iter()
        .zip(v_plus.vectors.rows())
        .map(|(a, b)| info_nce(a, b, negatives, tau))
        .collect()
}

/// Embeddings entering the total loss.
///
/// `anchor` is always on the query side. `view1`/`view2` are key embeddings in
/// momentum modes and query embeddings in end-to-end modes. In `moco_baseline`
/// `anchor` holds the first crop's query and `view1` the second crop's key;
/// in `end_to_end_baseline` `anchor` and `view1` are the two crops. `view2` is
/// unused by both baselines.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a> {
    pub anchor: &'a EmbeddingBatch,
    pub view1: &'a EmbeddingBatch,
    pub view2: &'a EmbeddingBatch,
    /// Query embedding of the first crop; required by `attract_all`.
    pub view1_query: Option<&'a EmbeddingBatch>,
    pub negatives: Option<&'a Array2<f64>>,
}

/// Gradients of the total loss with respect to each trainable input.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrads {
    pub anchor: Array2<f64>,
    /// Present only in end-to-end modes.
    pub view1: Option<Array2<f64>>,
    pub view2: Option<Array2<f64>>,
    pub view1_query: Option<Array2<f64>>,
}

struct TermOut {
    loss: f64,
    dq: Array2<f64>,
    dc: Array2<f64>,
    pos_sum: f64,
    neg_sum: f64,
    neg_count: usize,
}

/// One contrastive term: row `i` of `q` against candidates `c`, positive at
/// `pos(i)`, ignoring every candidate for which `excluded(i, j)` holds.
fn masked_term(
    q: &Array2<f64>,
    c: &Array2<f64>,
    pos: impl Fn(usize) -> usize,
    excluded: impl Fn(usize, usize) -> bool,
    tau: f64,
    scale: f64,
) -> TermOut {
    let logits = q.dot(&c.t()) / tau;
    let (b, m) = logits.dim();
    let mut g = Array2::<f64>::zeros((b, m));
    let mut loss = 0.0;
    let (mut pos_sum, mut neg_sum, mut neg_count) = (0.0, 0.0, 0usize);
    let mut row_logits = Vec::with_capacity(m);
    let mut cols = Vec::with_capacity(m);
    for i in 0..b {
        let p = pos(i);
        row_logits.clear();
        cols.clear();
        let mut p_local = 0;
        for j in 0..m {
            if j != p && excluded(i, j) {
                continue;
            }
            if j == p {
                p_local = cols.len();
                pos_sum += logits[[i, j]];
            } else {
                neg_sum += logits[[i, j]];
                neg_count += 1;
            }
            cols.push(j);
            row_logits.push(logits[[i, j]]);
        }
        loss += nce_from_logits(&row_logits, p_local);
        let mx = row_logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row_logits.iter().map(|&l| (l - mx).exp()).sum();
        for (k, &j) in cols.iter().enumerate() {
            let prob = (row_logits[k] - mx).exp() / z;
            g[[i, j]] = (prob - if k == p_local { 1.0 } else { 0.0 }) * scale / tau;
        }
    }
    TermOut {
        loss: loss * scale,
        dq: g.dot(c),
        dc: g.t().dot(q),
        pos_sum,
        neg_sum,
        neg_count,
    }
}

fn stack(parts: &[&Array2<f64>]) -> Array2<f64> {
    let views: Vec<_> = parts.iter().map(|a| a.view()).collect();
    ndarray::concatenate(Axis(0), &views).expect("embedding widths agree")
}

/// Total loss of the configured mode.
pub fn total_loss(inputs: &LossInputs, cfg: &ContrastiveConfig) -> Result<LossBreakdown> {
    total_loss_with_grad(inputs, cfg).map(|(b, _)| b)
}

pub fn total_loss_with_grad(inputs: &LossInputs, cfg: &ContrastiveConfig) -> Result<(LossBreakdown, LossGrads)> {
    cfg.validate()?;
    let mode = cfg.loss_mode;
    let a = &inputs.anchor.vectors;
    let v1 = &inputs.view1.vectors;
    let v2 = &inputs.view2.vectors;
    let b = a.nrows();
    if b == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    for (name, e) in [("anchor", inputs.anchor), ("view1", inputs.view1), ("view2", inputs.view2)]
        .into_iter()
        .chain(inputs.view1_query.map(|e| ("view1_query", e)))
    {
        if e.vectors.dim() != a.dim() {
            return Err(Error::Shape(format!("{name} is {:?}, anchor is {:?}", e.vectors.dim(), a.dim())));
        }
        e.check_normalized()?;
        ensure_finite(e.vectors.rows())?;
    }
    match (mode.is_end_to_end(), inputs.negatives) {
        (true, Some(_)) => {
            return Err(Error::Config(format!("{} uses in-batch negatives, not a queue", mode.name())))
        }
        (false, None) => return Err(Error::Config(format!("{} requires queue negatives", mode.name()))),
        _ => {}
    }
    if mode == LossMode::AttractAll && inputs.view1_query.is_none() {
        return Err(Error::Config("attract_all requires the first crop's query embedding".into()));
    }
    if let Some(n) = inputs.negatives {
        if n.nrows() == 0 {
            return Err(Error::EmptyQueue);
        }
        if n.ncols() != a.ncols() {
            return Err(Error::Shape(format!("negatives dim {} vs embedding dim {}", n.ncols(), a.ncols())));
        }
        ensure_finite(n.rows())?;
    }
    let (breakdown, grads) = loss_core(a, v1, v2, inputs.view1_query.map(|e| &e.vectors), inputs.negatives, cfg);
    if !breakdown.total.is_finite() {
        return Err(Error::Contract(format!("non-finite loss {}", breakdown.total)));
    }
    Ok((breakdown, grads))
}

/// Loss and gradients without input validation.
fn loss_core(
    a: &Array2<f64>,
    v1: &Array2<f64>,
    v2: &Array2<f64>,
    view1_query: Option<&Array2<f64>>,
    negatives: Option<&Array2<f64>>,
    cfg: &ContrastiveConfig,
) -> (LossBreakdown, LossGrads) {
    let mode = cfg.loss_mode;
    let b = a.nrows();
    let scale = match cfg.reduction {
        Reduction::Mean => 1.0 / b as f64,
        Reduction::Sum => 1.0,
    };
    let tau = cfg.tau;

    let queue_term = |q: &Array2<f64>, k: &Array2<f64>| {
        let c = stack(&[k, negatives.expect("momentum modes carry a queue")]);
        masked_term(q, &c, |i| i, |i, j| j < b && j != i, tau, scale)
    };

    let mut terms = Vec::new();
    let mut grads = LossGrads {
        anchor: Array2::zeros(a.dim()),
        view1: None,
        view2: None,
        view1_query: None,
    };
    match mode {
        LossMode::Leoclr | LossMode::RandomAnchor | LossMode::AttractAll => {
            for k in [v1, v2] {
                let t = queue_term(a, k);
                grads.anchor += &t.dq;
                terms.push(t);
            }
            if let Some(q1) = view1_query.filter(|_| mode == LossMode::AttractAll) {
                let t = queue_term(q1, v2);
                grads.view1_query = Some(t.dq.clone());
                terms.push(t);
            }
        }
        LossMode::MocoBaseline => {
            let t = queue_term(a, v1);
            grads.anchor += &t.dq;
            terms.push(t);
        }
        LossMode::EndToEnd => {
            let c = stack(&[v1, v2]);
            let t1 = masked_term(a, &c, |i| i, |i, j| j == b + i, tau, scale);
            let t2 = masked_term(a, &c, |i| b + i, |i, j| j == i, tau, scale);
            let dc = &t1.dc + &t2.dc;
            grads.anchor = &t1.dq + &t2.dq;
            grads.view1 = Some(dc.slice(s![..b, ..]).to_owned());
            grads.view2 = Some(dc.slice(s![b.., ..]).to_owned());
            terms.extend([t1, t2]);
        }
        LossMode::EndToEndBaseline => {
            let c = stack(&[a, v1]);
            let t1 = masked_term(a, &c, |i| b + i, |i, j| j == i, tau, scale);
            let t2 = masked_term(v1, &c, |i| i, |i, j| j == b + i, tau, scale);
            let dc = &t1.dc + &t2.dc;
            grads.anchor = &t1.dq + &dc.slice(s![..b, ..]);
            grads.view1 = Some(&t2.dq + &dc.slice(s![b.., ..]));
            terms.extend([t1, t2]);
        }
    }

    let loss = |k: usize| terms.get(k).map_or(0.0, |t| t.loss);
    let pos_n = (terms.len() * b) as f64;
    let neg_n: usize = terms.iter().map(|t| t.neg_count).sum();
    let breakdown = LossBreakdown {
        total: terms.iter().map(|t| t.loss).sum(),
        term1: loss(0),
        term2: loss(1),
        term3: loss(2),
        positive_logit_mean: terms.iter().map(|t| t.pos_sum).sum::<f64>() / pos_n,
        negative_logit_mean: terms.iter().map(|t| t.neg_sum).sum::<f64>() / neg_n.max(1) as f64,
    };
    (breakdown, grads)
}
