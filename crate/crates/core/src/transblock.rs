//! TransBlock head: maps the main model's hidden state to instance-level
//! transition terms `(w_x, b_x)` and turns the non-promotional probability `p`
//! into `p_t = p + w_x (1 - p) + b_x`, fine-tuned with two learning rates.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cvrmodel::{CvrModel, Example, ForwardCache};
use crate::error::{Error, Result};
use crate::nn::{self, Optimizer, OptimizerKind};
use crate::synthgen::Features;

/// Training-time clamp of `p_t`, with pass-through gradient.
pub const TRAIN_CLAMP_EPS: f64 = 1e-6;

/// Hidden-layer init relative to Glorot. The output lives in probability
/// units, so full-size hidden activations let one Adam step at `eta1 = 1e-3`
/// move `p_t` by about 0.1.
pub const HIDDEN_INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Slot {
    w: usize,
    b: usize,
    n_in: usize,
    n_out: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransBlock {
    input_dim: usize,
    hidden: Vec<usize>,
    slots: Vec<Slot>,
    params: Vec<f64>,
}

fn slots_for(input_dim: usize, hidden: &[usize]) -> (Vec<Slot>, usize) {
    let mut slots = Vec::new();
    let mut offset = 0;
    let mut n_in = input_dim;
    for &n_out in hidden.iter().chain(std::iter::once(&2)) {
        let w = offset;
        let b = w + n_in * n_out;
        slots.push(Slot { w, b, n_in, n_out });
        offset = b + n_out;
        n_in = n_out;
    }
    (slots, offset)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransOutput {
    pub w_x: f64,
    pub b_x: f64,
    /// Untruncated promotional probability.
    pub p_t: f64,
}

#[derive(Debug, Clone, Default)]
struct TbCache {
    acts: Vec<Vec<f64>>,
    out: [f64; 2],
}

impl TransBlock {
    /// Hidden layers get Glorot-uniform weights from `seed`, scaled by
    /// [`HIDDEN_INIT_SCALE`]; the output layer starts at exactly zero so the
    /// head is the identity.
    pub fn new(input_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut tb = Self::zeros(input_dim, hidden)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for slot in &tb.slots[..tb.slots.len() - 1] {
            let w = &mut tb.params[slot.w..slot.b];
            nn::glorot(&mut rng, w, slot.n_in, slot.n_out);
            w.iter_mut().for_each(|v| *v *= HIDDEN_INIT_SCALE);
        }
        Ok(tb)
    }

    pub fn zeros(input_dim: usize, hidden: &[usize]) -> Result<Self> {
        if input_dim == 0 || hidden.contains(&0) {
            return Err(Error::Config("TransBlock layer sizes must be positive".into()));
        }
        let (slots, total) = slots_for(input_dim, hidden);
        Ok(TransBlock { input_dim, hidden: hidden.to_vec(), slots, params: vec![0.0; total] })
    }

    pub fn from_params(input_dim: usize, hidden: &[usize], params: Vec<f64>) -> Result<Self> {
        let mut tb = Self::zeros(input_dim, hidden)?;
        if params.len() != tb.params.len() {
            return Err(Error::DimensionMismatch { expected: tb.params.len(), got: params.len() });
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite TransBlock parameter".into()));
        }
        tb.params = params;
        Ok(tb)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Output layer `(W_trans, b_trans)`: a `2 x n` matrix and a 2-vector.
    pub fn output_layer(&self) -> (&[f64], &[f64]) {
        let s = *self.slots.last().expect("at least the output layer");
        (&self.params[s.w..s.b], &self.params[s.b..s.b + 2])
    }

    pub fn output_layer_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        let s = *self.slots.last().expect("at least the output layer");
        let (w, b) = self.params[s.w..s.b + 2].split_at_mut(s.b - s.w);
        (w, b)
    }

    fn forward_cached(&self, h: &[f64], cache: &mut TbCache) -> Result<[f64; 2]> {
        if h.len() != self.input_dim {
            return Err(Error::DimensionMismatch { expected: self.input_dim, got: h.len() });
        }
        let n_hidden = self.slots.len() - 1;
        cache.acts.resize_with(n_hidden, Vec::new);
        for i in 0..n_hidden {
            let s = self.slots[i];
            let (before, rest) = cache.acts.split_at_mut(i);
            let input: &[f64] = if i == 0 { h } else { &before[i - 1] };
            rest[0].resize(s.n_out, 0.0);
            nn::dense_forward(&self.params[s.w..s.b], &self.params[s.b..s.b + s.n_out], input, &mut rest[0]);
            nn::relu_in_place(&mut rest[0]);
        }
        let s = self.slots[n_hidden];
        let input: &[f64] = if n_hidden == 0 { h } else { &cache.acts[n_hidden - 1] };
        nn::dense_forward(&self.params[s.w..s.b], &self.params[s.b..s.b + 2], input, &mut cache.out);
        Ok(cache.out)
    }

    /// Accumulates parameter gradients for `d_out = [dL/dw_x, dL/db_x]`.
    /// Returns `dL/dh` when `input_grad` is set.
    fn backward(&self, h: &[f64], cache: &TbCache, d_out: [f64; 2], grad: &mut [f64], input_grad: bool) -> Vec<f64> {
        let mut d_cur = d_out.to_vec();
        let mut d_in = Vec::new();
        for i in (0..self.slots.len()).rev() {
            let s = self.slots[i];
            let input: &[f64] = if i == 0 { h } else { &cache.acts[i - 1] };
            d_in.resize(s.n_in, 0.0);
            let (head, tail) = grad.split_at_mut(s.b);
            let dx = if i > 0 || input_grad { Some(&mut d_in[..]) } else { None };
            nn::dense_backward(&self.params[s.w..s.b], input, &d_cur, &mut head[s.w..], &mut tail[..s.n_out], dx);
            if i > 0 {
                nn::relu_backward(&cache.acts[i - 1], &mut d_in);
            }
            std::mem::swap(&mut d_cur, &mut d_in);
        }
        d_cur
    }
}

/// `p_t = p + w_x (1 - p) + b_x` with `[w_x, b_x]` computed from `h`.
pub fn trans_forward(tb: &TransBlock, h: &[f64], p: f64) -> Result<TransOutput> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidInput(format!("probability {p} outside [0, 1]")));
    }
    let [w_x, b_x] = tb.forward_cached(h, &mut TbCache::default())?;
    Ok(TransOutput { w_x, b_x, p_t: combine(p, w_x, b_x) })
}

pub fn combine(p: f64, w_x: f64, b_x: f64) -> f64 {
    p + w_x * (1.0 - p) + b_x
}

/// Serving-time clamp of `p_t` to `[0, 1]`.
pub fn truncate(p_t: f64) -> Result<f64> {
    if p_t.is_nan() {
        return Err(Error::InvalidInput("cannot truncate NaN".into()));
    }
    Ok(p_t.clamp(0.0, 1.0))
}

/// Anything that serves a conversion probability for a click.
pub trait Predictor {
    fn predict(&self, f: &Features) -> Result<f64>;

    fn predict_many(&self, inputs: &[Features]) -> Result<Vec<f64>> {
        inputs.iter().map(|f| self.predict(f)).collect()
    }
}

impl Predictor for CvrModel {
    fn predict(&self, f: &Features) -> Result<f64> {
        CvrModel::predict(self, f)
    }

    fn predict_many(&self, inputs: &[Features]) -> Result<Vec<f64>> {
        CvrModel::predict_many(self, inputs)
    }
}

/// Main model with a TransBlock stacked on top.
#[derive(Debug, Clone, PartialEq)]
pub struct FinetunedModel {
    pub base: CvrModel,
    pub head: TransBlock,
}

impl FinetunedModel {
    pub fn new(base: CvrModel, head: TransBlock) -> Result<Self> {
        if base.hidden_dim() != head.input_dim() {
            return Err(Error::DimensionMismatch { expected: base.hidden_dim(), got: head.input_dim() });
        }
        Ok(FinetunedModel { base, head })
    }

    pub fn trans_output(&self, f: &Features) -> Result<TransOutput> {
        let out = self.base.forward(f)?;
        trans_forward(&self.head, &out.h, out.p)
    }
}

impl Predictor for FinetunedModel {
    fn predict(&self, f: &Features) -> Result<f64> {
        truncate(self.trans_output(f)?.p_t)
    }

    fn predict_many(&self, inputs: &[Features]) -> Result<Vec<f64>> {
        let mut cache = ForwardCache::default();
        let mut tb_cache = TbCache::default();
        inputs
            .iter()
            .map(|f| {
                self.base.forward_cached(f, &mut cache)?;
                let [w, b] = self.head.forward_cached(cache.hidden(), &mut tb_cache)?;
                truncate(combine(cache.p, w, b))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    /// TransBlock learning rate.
    #[serde(default = "default_eta1")]
    pub eta1: f64,
    /// Main-model learning rate; 0 freezes the backbone.
    #[serde(default = "default_eta2")]
    pub eta2: f64,
    /// Ridge strength handed to the shift estimator.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tb_hidden")]
    pub hidden: Vec<usize>,
}

fn default_eta1() -> f64 {
    1e-3
}
fn default_eta2() -> f64 {
    1e-5
}
fn default_lambda() -> f64 {
    1.0
}
fn default_batch() -> usize {
    5000
}
fn default_epochs() -> usize {
    1
}
fn default_tb_hidden() -> Vec<usize> {
    vec![100]
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            eta1: default_eta1(),
            eta2: default_eta2(),
            lambda: default_lambda(),
            batch_size: default_batch(),
            epochs: default_epochs(),
            seed: 0,
            hidden: default_tb_hidden(),
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta1 > 0.0 && self.eta1.is_finite()) {
            return Err(Error::Config(format!("eta1 must be > 0, got {}", self.eta1)));
        }
        if !(self.eta2 >= 0.0) {
            return Err(Error::Config(format!("eta2 must be >= 0, got {}", self.eta2)));
        }
        if self.eta2 > self.eta1 {
            return Err(Error::Config(format!("eta2 ({}) must not exceed eta1 ({})", self.eta2, self.eta1)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FinetuneReport {
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

/// Mean weighted cross-entropy of the training-clamped `p_t`, with gradients
/// for the main model and the TransBlock.
pub fn composite_loss_and_grad(
    model: &CvrModel,
    tb: &TransBlock,
    batch: &[Example],
    weights: (f64, f64),
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    composite_pass(model, tb, batch, weights, true)
}

/// With `main_grad = false` the main-model gradient is left at zero and its
/// backward pass skipped.
fn composite_pass(
    model: &CvrModel,
    tb: &TransBlock,
    batch: &[Example],
    weights: (f64, f64),
    main_grad: bool,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    if model.hidden_dim() != tb.input_dim() {
        return Err(Error::DimensionMismatch { expected: model.hidden_dim(), got: tb.input_dim() });
    }
    let n = batch.len() as f64;
    let mut g_main = vec![0.0; model.num_params()];
    let mut g_tb = vec![0.0; tb.params.len()];
    let mut cache = ForwardCache::default();
    let mut tb_cache = TbCache::default();
    let mut total = 0.0;
    for ex in batch {
        model.forward_cached(&ex.features, &mut cache)?;
        let [w_x, b_x] = tb.forward_cached(cache.hidden(), &mut tb_cache)?;
        let p = cache.p;
        let q = combine(p, w_x, b_x).clamp(TRAIN_CLAMP_EPS, 1.0 - TRAIN_CLAMP_EPS);
        let wt = if ex.label { weights.0 } else { weights.1 };
        let (loss, d_q) = if ex.label { (-q.ln(), -1.0 / q) } else { (-(1.0 - q).ln(), 1.0 / (1.0 - q)) };
        total += wt * loss;
        let d_pt = wt * d_q / n;
        let d_h = tb.backward(cache.hidden(), &tb_cache, [d_pt * (1.0 - p), d_pt], &mut g_tb, main_grad);
        if main_grad {
            let d_logit = d_pt * (1.0 - w_x) * p * (1.0 - p);
            model.backward(&cache, d_logit, Some(&d_h), &mut g_main);
        }
    }
    Ok((total / n, g_main, g_tb))
}

/// Fine-tunes copies of `model` and `tb` on `data`. TransBlock parameters
/// step with `eta1`, main-model parameters with `eta2`; with `eta2 = 0` the
/// main model is returned untouched.
pub fn finetune(
    model: &CvrModel,
    tb: &TransBlock,
    data: &[Example],
    weights: (f64, f64),
    cfg: &FinetuneConfig,
) -> Result<(CvrModel, TransBlock, FinetuneReport)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("fine-tuning set is empty".into()));
    }
    if !(weights.0 > 0.0 && weights.1 > 0.0) {
        return Err(Error::InvalidInput(format!("weights must be positive, got {weights:?}")));
    }
    let mut model = model.clone();
    let mut tb = tb.clone();
    let mut opt_tb = Optimizer::new(OptimizerKind::Adam, cfg.eta1, tb.params.len());
    let mut opt_main = Optimizer::new(OptimizerKind::Adam, cfg.eta2, model.num_params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size.min(data.len()));
    let mut report = FinetuneReport::default();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i]));
            let (loss, g_main, g_tb) = composite_pass(&model, &tb, &batch, weights, cfg.eta2 > 0.0)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { loss, batch: batch.len(), max_abs_param: model.max_abs_param() });
            }
            opt_tb.step(&mut tb.params, &g_tb);
            if cfg.eta2 > 0.0 {
                opt_main.step(model.params_mut(), &g_main);
            }
            sum += loss;
            count += 1;
        }
        report.steps += count;
        report.epoch_losses.push(sum / count as f64);
    }
    Ok((model, tb, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cvrmodel::ModelConfig;
    use crate::synthgen::NOISE_DIM;

    fn model() -> CvrModel {
        let cfg = ModelConfig { embedding_dim: 3, hidden: vec![6, 4], init_seed: 2, ..ModelConfig::new(3, 3) };
        CvrModel::new(cfg).unwrap()
    }

    fn feat(u: u16, c: u16) -> Features {
        Features { user_group: u, category: c, noise: [0.1, -0.2, 0.3, 0.0][..NOISE_DIM].try_into().unwrap() }
    }

    #[test]
    fn arithmetic_examples() {
        assert_eq!(combine(0.37, 0.0, 0.0), 0.37);
        assert!((combine(0.4, 0.5, -0.1) - 0.6).abs() < 1e-15);
        assert_eq!(truncate(-0.2).unwrap(), 0.0);
        assert_eq!(truncate(1.2).unwrap(), 1.0);
        assert_eq!(truncate(0.37).unwrap(), 0.37);
        assert!(truncate(f64::NAN).is_err());
    }

    #[test]
    fn zero_output_layer_is_identity() {
        let m = model();
        let tb = TransBlock::new(m.hidden_dim(), &[100], 9).unwrap();
        let ft = FinetunedModel::new(m.clone(), tb).unwrap();
        for u in 0..3 {
            for c in 0..3 {
                let f = feat(u, c);
                assert_eq!(ft.predict(&f).unwrap(), m.predict(&f).unwrap());
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let tb = TransBlock::new(5, &[4], 0).unwrap();
        assert!(matches!(trans_forward(&tb, &[0.0; 4], 0.5), Err(Error::DimensionMismatch { .. })));
        assert!(FinetunedModel::new(model(), tb).is_err());
    }

    #[test]
    fn config_rules() {
        assert!(FinetuneConfig { eta2: 1e-2, ..FinetuneConfig::default() }.validate().is_err());
        assert!(FinetuneConfig { eta1: 0.0, ..FinetuneConfig::default() }.validate().is_err());
        assert!(FinetuneConfig { eta2: 0.0, ..FinetuneConfig::default() }.validate().is_ok());
    }

    #[test]
    fn frozen_backbone_and_zero_epochs() {
        let m = model();
        let tb = TransBlock::new(m.hidden_dim(), &[8], 1).unwrap();
        let data: Vec<Example> =
            (0..50).map(|i| Example { features: feat(i % 3, (i / 3) % 3), label: i % 4 == 0 }).collect();
        let cfg = FinetuneConfig { eta2: 0.0, batch_size: 16, epochs: 2, ..FinetuneConfig::default() };
        let (m2, tb2, report) = finetune(&m, &tb, &data, (1.5, 0.9), &cfg).unwrap();
        assert_eq!(m2.params(), m.params());
        assert_ne!(tb2.params(), tb.params());
        assert_eq!(report.steps, 8);

        let cfg0 = FinetuneConfig { epochs: 0, ..FinetuneConfig::default() };
        let (m3, tb3, _) = finetune(&m, &tb, &data, (1.0, 1.0), &cfg0).unwrap();
        let ft = FinetunedModel::new(m3, tb3).unwrap();
        assert_eq!(ft.predict(&feat(1, 2)).unwrap(), m.predict(&feat(1, 2)).unwrap());
    }
}
