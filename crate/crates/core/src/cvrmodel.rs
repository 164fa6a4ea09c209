//! Main CVR model: user-group and category embeddings plus noise features,
//! a ReLU MLP and a sigmoid output, trained on weighted cross-entropy with
//! hand-written gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Optimizer, OptimizerKind};
use crate::synthgen::{Features, NOISE_DIM};

pub const LOGIT_CLAMP: f64 = 30.0;

/// Which activation is exposed as `h_x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HiddenSource {
    /// Output of the last hidden layer.
    #[default]
    LastHidden,
    /// Concatenated embeddings and noise features, before the MLP.
    Embedding,
}

impl HiddenSource {
    pub fn as_str(self) -> &'static str {
        match self {
            HiddenSource::LastHidden => "last_hidden",
            HiddenSource::Embedding => "embedding",
        }
    }
}

impl std::str::FromStr for HiddenSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last_hidden" => Ok(HiddenSource::LastHidden),
            "embedding" => Ok(HiddenSource::Embedding),
            other => Err(Error::Config(format!("unknown hidden source '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_user_groups: usize,
    pub num_categories: usize,
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub hidden_source: HiddenSource,
    #[serde(default)]
    pub init_seed: u64,
}

fn default_embedding_dim() -> usize {
    8
}

fn default_hidden() -> Vec<usize> {
    vec![64, 32]
}

impl ModelConfig {
    pub fn new(num_user_groups: usize, num_categories: usize) -> Self {
        ModelConfig {
            num_user_groups,
            num_categories,
            embedding_dim: default_embedding_dim(),
            hidden: default_hidden(),
            hidden_source: HiddenSource::default(),
            init_seed: 0,
        }
    }

    pub fn input_dim(&self) -> usize {
        2 * self.embedding_dim + NOISE_DIM
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_user_groups == 0 || self.num_categories == 0 {
            return Err(Error::Config("embedding tables need at least one row".into()));
        }
        if self.embedding_dim == 0 {
            return Err(Error::Config("embedding_dim must be positive".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("hidden sizes must be non-empty and positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerSlot {
    w: usize,
    b: usize,
    n_in: usize,
    n_out: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    cat_emb: usize,
    layers: Vec<LayerSlot>,
    total: usize,
}

impl Layout {
    fn new(cfg: &ModelConfig) -> Self {
        let e = cfg.embedding_dim;
        let cat_emb = cfg.num_user_groups * e;
        let mut offset = cat_emb + cfg.num_categories * e;
        let mut layers = Vec::new();
        let mut n_in = cfg.input_dim();
        for &n_out in cfg.hidden.iter().chain(std::iter::once(&1)) {
            let w = offset;
            let b = w + n_in * n_out;
            layers.push(LayerSlot { w, b, n_in, n_out });
            offset = b + n_out;
            n_in = n_out;
        }
        Layout { cat_emb, layers, total: offset }
    }
}

/// Labeled training example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Example {
    pub features: Features,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub h: Vec<f64>,
    pub logit: f64,
    pub p: f64,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    user: usize,
    category: usize,
    /// MLP input.
    pub x: Vec<f64>,
    /// Post-ReLU activation of each hidden layer.
    pub acts: Vec<Vec<f64>>,
    pub raw_logit: f64,
    /// Logit after clamping to `[-LOGIT_CLAMP, LOGIT_CLAMP]`.
    pub logit: f64,
    pub p: f64,
    source: HiddenSource,
}

impl ForwardCache {
    pub fn hidden(&self) -> &[f64] {
        match self.source {
            HiddenSource::LastHidden => self.acts.last().map_or(&[], Vec::as_slice),
            HiddenSource::Embedding => &self.x,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvrModel {
    config: ModelConfig,
    layout: Layout,
    params: Vec<f64>,
}

impl CvrModel {
    /// Random initialization driven by `config.init_seed`: embeddings
    /// `N(0, 0.1)`, Glorot-uniform weights, zero biases.
    pub fn new(config: ModelConfig) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(model.config.init_seed);
        let emb = Normal::new(0.0, 0.1).expect("valid normal");
        let emb_end = model.layout.layers[0].w;
        for v in &mut model.params[..emb_end] {
            *v = emb.sample(&mut rng);
        }
        for slot in model.layout.layers.clone() {
            let w = &mut model.params[slot.w..slot.b];
            nn::glorot(&mut rng, w, slot.n_in, slot.n_out);
        }
        Ok(model)
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let params = vec![0.0; layout.total];
        Ok(CvrModel { config, layout, params })
    }

    pub fn from_params(config: ModelConfig, params: Vec<f64>) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        if params.len() != model.params.len() {
            return Err(Error::DimensionMismatch { expected: model.params.len(), got: params.len() });
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite model parameter".into()));
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Dimension of `h_x`.
    pub fn hidden_dim(&self) -> usize {
        match self.config.hidden_source {
            HiddenSource::LastHidden => *self.config.hidden.last().expect("validated"),
            HiddenSource::Embedding => self.config.input_dim(),
        }
    }

    /// `(name, rows, cols)` per parameter block in storage order.
    pub fn shapes(&self) -> Vec<(String, usize, usize)> {
        let e = self.config.embedding_dim;
        let mut out = vec![
            ("user_embedding".to_string(), self.config.num_user_groups, e),
            ("category_embedding".to_string(), self.config.num_categories, e),
        ];
        for (i, l) in self.layout.layers.iter().enumerate() {
            out.push((format!("layer{i}.weight"), l.n_out, l.n_in));
            out.push((format!("layer{i}.bias"), l.n_out, 1));
        }
        out
    }

    fn check_ids(&self, f: &Features) -> Result<()> {
        if f.user_group as usize >= self.config.num_user_groups {
            return Err(Error::OutOfRange {
                what: "user_group",
                id: f.user_group as usize,
                size: self.config.num_user_groups,
            });
        }
        if f.category as usize >= self.config.num_categories {
            return Err(Error::OutOfRange {
                what: "category",
                id: f.category as usize,
                size: self.config.num_categories,
            });
        }
        Ok(())
    }

    pub fn forward_cached(&self, f: &Features, cache: &mut ForwardCache) -> Result<()> {
        self.check_ids(f)?;
        let e = self.config.embedding_dim;
        let (u, c) = (f.user_group as usize, f.category as usize);
        cache.user = u;
        cache.category = c;
        cache.source = self.config.hidden_source;
        cache.x.clear();
        cache.x.extend_from_slice(&self.params[u * e..(u + 1) * e]);
        let ce = self.layout.cat_emb + c * e;
        cache.x.extend_from_slice(&self.params[ce..ce + e]);
        cache.x.extend_from_slice(&f.noise);

        let hidden_layers = self.layout.layers.len() - 1;
        cache.acts.resize_with(hidden_layers, Vec::new);
        for i in 0..hidden_layers {
            let slot = self.layout.layers[i];
            let (before, rest) = cache.acts.split_at_mut(i);
            let input: &[f64] = if i == 0 { &cache.x } else { &before[i - 1] };
            let out = &mut rest[0];
            out.resize(slot.n_out, 0.0);
            nn::dense_forward(&self.params[slot.w..slot.b], &self.params[slot.b..slot.b + slot.n_out], input, out);
            nn::relu_in_place(out);
        }
        let last = self.layout.layers[hidden_layers];
        let input: &[f64] = if hidden_layers == 0 { &cache.x } else { &cache.acts[hidden_layers - 1] };
        let mut z = [0.0];
        nn::dense_forward(&self.params[last.w..last.b], &self.params[last.b..last.b + 1], input, &mut z);
        cache.raw_logit = z[0];
        cache.logit = z[0].clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
        cache.p = nn::sigmoid(cache.logit);
        Ok(())
    }

    /// Returns `(h_x, p)` for one input.
    pub fn forward(&self, f: &Features) -> Result<ForwardOutput> {
        let mut cache = ForwardCache::default();
        self.forward_cached(f, &mut cache)?;
        Ok(ForwardOutput { h: cache.hidden().to_vec(), logit: cache.logit, p: cache.p })
    }

    pub fn predict(&self, f: &Features) -> Result<f64> {
        let mut cache = ForwardCache::default();
        self.forward_cached(f, &mut cache)?;
        Ok(cache.p)
    }

    pub fn predict_many(&self, inputs: &[Features]) -> Result<Vec<f64>> {
        let mut cache = ForwardCache::default();
        inputs
            .iter()
            .map(|f| {
                self.forward_cached(f, &mut cache)?;
                Ok(cache.p)
            })
            .collect()
    }

    /// Accumulates into `grad` the gradient of a scalar whose derivative is
    /// `d_logit` w.r.t. the clamped logit plus `d_hidden` w.r.t. `h_x`.
    pub fn backward(&self, cache: &ForwardCache, d_logit: f64, d_hidden: Option<&[f64]>, grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        let d_logit = if cache.raw_logit.abs() > LOGIT_CLAMP { 0.0 } else { d_logit };
        let n = self.layout.layers.len();
        let hidden_layers = n - 1;
        let source = self.config.hidden_source;

        // Gradient w.r.t. the input of the current layer, walking backwards.
        let mut d_out = vec![d_logit];
        let mut d_in: Vec<f64> = Vec::new();
        for i in (0..n).rev() {
            let slot = self.layout.layers[i];
            let input: &[f64] = if i == 0 { &cache.x } else { &cache.acts[i - 1] };
            d_in.resize(slot.n_in, 0.0);
            let (head, tail) = grad.split_at_mut(slot.b);
            nn::dense_backward(
                &self.params[slot.w..slot.b],
                input,
                &d_out,
                &mut head[slot.w..],
                &mut tail[..slot.n_out],
                Some(&mut d_in),
            );
            if i == hidden_layers && source == HiddenSource::LastHidden {
                if let Some(dh) = d_hidden {
                    d_in.iter_mut().zip(dh).for_each(|(a, b)| *a += b);
                }
            }
            if i > 0 {
                nn::relu_backward(&cache.acts[i - 1], &mut d_in);
            }
            std::mem::swap(&mut d_out, &mut d_in);
        }
        // d_out now holds the gradient w.r.t. the MLP input x.
        if source == HiddenSource::Embedding {
            if let Some(dh) = d_hidden {
                d_out.iter_mut().zip(dh).for_each(|(a, b)| *a += b);
            }
        }
        let e = self.config.embedding_dim;
        let ue = cache.user * e;
        grad[ue..ue + e].iter_mut().zip(&d_out[..e]).for_each(|(g, d)| *g += d);
        let ce = self.layout.cat_emb + cache.category * e;
        grad[ce..ce + e].iter_mut().zip(&d_out[e..2 * e]).for_each(|(g, d)| *g += d);
    }

    /// Mean weighted cross-entropy over `batch` (divided by the batch size)
    /// and its gradient. `weights` is `(w_pos, w_neg)`.
    pub fn loss_and_grad(&self, batch: &[Example], weights: (f64, f64)) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let n = batch.len() as f64;
        let mut grad = vec![0.0; self.params.len()];
        let mut cache = ForwardCache::default();
        let mut total = 0.0;
        for ex in batch {
            self.forward_cached(&ex.features, &mut cache)?;
            let w = if ex.label { weights.0 } else { weights.1 };
            let y = if ex.label { 1.0 } else { 0.0 };
            total += w * if ex.label { nn::softplus(-cache.logit) } else { nn::softplus(cache.logit) };
            self.backward(&cache, w * (cache.p - y) / n, None, &mut grad);
        }
        Ok((total / n, grad))
    }

    pub fn max_abs_param(&self) -> f64 {
        self.params.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// `(w_pos, w_neg)`; `None` means `(1, 1)`.
    #[serde(default)]
    pub importance_weights: Option<(f64, f64)>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub optimizer: OptimizerKind,
}

fn default_lr() -> f64 {
    1e-3
}

fn default_batch() -> usize {
    5000
}

fn default_epochs() -> usize {
    1
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: default_lr(),
            batch_size: default_batch(),
            epochs: default_epochs(),
            importance_weights: None,
            seed: 0,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if let Some((p, n)) = self.importance_weights {
            if !(p > 0.0 && n > 0.0) {
                return Err(Error::Config(format!("importance weights must be positive, got ({p}, {n})")));
            }
        }
        Ok(())
    }

    pub fn weights(&self) -> (f64, f64) {
        self.importance_weights.unwrap_or((1.0, 1.0))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    /// Mean pre-update batch loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

/// Owns the optimizer state across steps, so consecutive calls continue the
/// same Adam trajectory.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    optimizer: Optimizer,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(config: TrainConfig, model: &CvrModel) -> Result<Self> {
        config.validate()?;
        let optimizer = Optimizer::new(config.optimizer, config.learning_rate, model.num_params());
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Trainer { config, optimizer, rng })
    }

    /// One optimizer step; returns the pre-update loss.
    pub fn step(&mut self, model: &mut CvrModel, batch: &[Example]) -> Result<f64> {
        let (loss, grad) = model.loss_and_grad(batch, self.config.weights())?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { loss, batch: batch.len(), max_abs_param: model.max_abs_param() });
        }
        self.optimizer.step(&mut model.params, &grad);
        Ok(loss)
    }

    /// `epochs` passes over a seed-shuffled copy of `data`.
    pub fn train(&mut self, model: &mut CvrModel, data: &[Example]) -> Result<TrainReport> {
        if data.is_empty() {
            return Err(Error::InvalidInput("training set is empty".into()));
        }
        let mut report = TrainReport::default();
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut batch = Vec::with_capacity(self.config.batch_size.min(data.len()));
        for _ in 0..self.config.epochs {
            order.shuffle(&mut self.rng);
            let (mut sum, mut count) = (0.0, 0usize);
            for chunk in order.chunks(self.config.batch_size) {
                batch.clear();
                batch.extend(chunk.iter().map(|&i| data[i]));
                sum += self.step(model, &batch)?;
                count += 1;
            }
            report.steps += count;
            report.epoch_losses.push(sum / count as f64);
        }
        Ok(report)
    }
}

/// One step with a fresh optimizer.
pub fn train_step(model: &mut CvrModel, batch: &[Example], config: &TrainConfig) -> Result<f64> {
    Trainer::new(config.clone(), model)?.step(model, batch)
}

pub fn train(model: &mut CvrModel, data: &[Example], config: &TrainConfig) -> Result<TrainReport> {
    Trainer::new(config.clone(), model)?.train(model, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feat(u: u16, c: u16, noise: [f64; NOISE_DIM]) -> Features {
        Features { user_group: u, category: c, noise }
    }

    fn small_config() -> ModelConfig {
        ModelConfig { embedding_dim: 2, hidden: vec![3, 2], init_seed: 5, ..ModelConfig::new(3, 2) }
    }

    #[test]
    fn zero_model_predicts_half() {
        let m = CvrModel::zeros(ModelConfig::new(4, 4)).unwrap();
        let out = m.forward(&feat(1, 2, [0.3, -1.0, 2.0, 0.1])).unwrap();
        assert_eq!(out.p, 0.5);
        assert_eq!(out.h.len(), 32);
    }

    #[test]
    fn layout_counts_parameters() {
        let m = CvrModel::new(small_config()).unwrap();
        // 3*2 + 2*2 + (8*3+3) + (3*2+2) + (2*1+1)
        assert_eq!(m.num_params(), 6 + 4 + 27 + 8 + 3);
        let total: usize = m.shapes().iter().map(|s| s.1 * s.2).sum();
        assert_eq!(total, m.num_params());
    }

    #[test]
    fn out_of_range_ids_are_rejected() {
        let m = CvrModel::new(small_config()).unwrap();
        assert!(matches!(m.forward(&feat(3, 0, [0.0; 4])), Err(Error::OutOfRange { what: "user_group", .. })));
        assert!(matches!(m.forward(&feat(0, 2, [0.0; 4])), Err(Error::OutOfRange { what: "category", .. })));
    }

    #[test]
    fn loss_examples() {
        let mut m = CvrModel::zeros(small_config()).unwrap();
        let pos = Example { features: feat(0, 0, [0.0; 4]), label: true };
        let neg = Example { features: feat(1, 1, [0.0; 4]), label: false };
        let cfg = TrainConfig::default();
        let l = train_step(&mut m, &[pos, neg], &cfg).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        let mut m = CvrModel::zeros(small_config()).unwrap();
        let cfg = TrainConfig { importance_weights: Some((2.0, 1.0)), ..TrainConfig::default() };
        let l = train_step(&mut m, &[pos], &cfg).unwrap();
        assert!((l - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn extreme_logits_stay_inside_unit_interval() {
        let mut m = CvrModel::zeros(small_config()).unwrap();
        let n = m.num_params();
        m.params_mut()[n - 1] = 500.0;
        let p = m.predict(&feat(0, 0, [0.0; 4])).unwrap();
        assert!(p < 1.0 && p > 0.99);
        m.params_mut()[n - 1] = -500.0;
        let p = m.predict(&feat(0, 0, [0.0; 4])).unwrap();
        assert!(p > 0.0 && p < 0.01);
    }

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let mut m = CvrModel::new(small_config()).unwrap();
        let before = m.clone();
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let data = [Example { features: feat(0, 0, [0.0; 4]), label: true }];
        let r = train(&mut m, &data, &cfg).unwrap();
        assert!(r.epoch_losses.is_empty());
        assert_eq!(m, before);
    }

    #[test]
    fn config_validation() {
        let m = CvrModel::new(small_config()).unwrap();
        for bad in [
            TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { importance_weights: Some((0.0, 1.0)), ..TrainConfig::default() },
        ] {
            assert!(matches!(Trainer::new(bad, &m), Err(Error::Config(_))));
        }
    }
}
