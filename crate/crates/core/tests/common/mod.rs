//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use hdr_core::cvrmodel::{CvrModel, Example, ModelConfig};
use hdr_core::pipeline::{Arm, ExperimentConfig, Variant};
use hdr_core::synthgen::{CalendarConfig, Features, PromotionWindow, NOISE_DIM};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Pairwise AUC: fraction of (positive, negative) pairs ordered correctly,
/// ties counting one half.
pub fn auc_pairwise(preds: &[f64], labels: &[bool]) -> f64 {
    let (mut good, mut pairs) = (0.0, 0.0);
    for (i, &pi) in preds.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &pj) in preds.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if pi > pj {
                good += 1.0;
            } else if pi == pj {
                good += 0.5;
            }
        }
    }
    good / pairs
}

pub fn logloss_direct(preds: &[f64], labels: &[bool], eps: f64) -> f64 {
    let mut total = 0.0;
    for (&p, &y) in preds.iter().zip(labels) {
        let p = p.max(eps).min(1.0 - eps);
        total -= if y { p.ln() } else { (1.0 - p).ln() };
    }
    total / preds.len() as f64
}

pub fn pcoc_direct(preds: &[f64], labels: &[bool]) -> f64 {
    let mut pred = 0.0;
    let mut pos = 0.0;
    for (&p, &y) in preds.iter().zip(labels) {
        pred += p;
        if y {
            pos += 1.0;
        }
    }
    pred / pos
}

/// ECE over equal-count buckets. Each sample's sorted position is counted
/// directly (smaller values, then equal values with a lower index), and
/// positions are cut into `k` runs whose first `n mod k` take one extra.
pub fn ece_by_position(preds: &[f64], labels: &[bool], k: usize) -> f64 {
    let n = preds.len();
    let mut sums = vec![0.0; k];
    for i in 0..n {
        let pos = (0..n).filter(|&j| preds[j] < preds[i] || (preds[j] == preds[i] && j < i)).count();
        let mut bucket = 0;
        let mut end = 0;
        for b in 0..k {
            end += n / k + usize::from(b < n % k);
            if pos < end {
                bucket = b;
                break;
            }
        }
        sums[bucket] += if labels[i] { 1.0 } else { 0.0 } - preds[i];
    }
    sums.iter().map(|s| s.abs()).sum::<f64>() / n as f64
}

/// Ridge objective `||M x - m_hat||^2 + lambda ||x - prior||^2`.
pub fn ridge_objective(m: &[[f64; 2]; 2], m_hat: [f64; 2], prior: [f64; 2], lambda: f64, x: [f64; 2]) -> f64 {
    let r0 = m[0][0] * x[0] + m[0][1] * x[1] - m_hat[0];
    let r1 = m[1][0] * x[0] + m[1][1] * x[1] - m_hat[1];
    let d0 = x[0] - prior[0];
    let d1 = x[1] - prior[1];
    r0 * r0 + r1 * r1 + lambda * (d0 * d0 + d1 * d1)
}

/// Exact minimum of a convex 2-D objective over the grid
/// `{lo + i*step} x {lo + j*step}`, `i, j in 0..=n`. For each row the
/// objective is a convex quadratic in the second coordinate, so the best
/// grid column is one of the two columns around the row's continuous
/// minimizer; both are evaluated.
fn grid_min(f: &dyn Fn([f64; 2]) -> f64, lo: [f64; 2], step: f64, n: usize) -> ([f64; 2], f64) {
    let mut best = ([lo[0], lo[1]], f64::INFINITY);
    for i in 0..=n {
        let x0 = lo[0] + i as f64 * step;
        // Quadratic in x1 through three evaluations: vertex of the parabola.
        let (a, b, c) = (f([x0, lo[1]]), f([x0, lo[1] + step]), f([x0, lo[1] + 2.0 * step]));
        let curvature = a - 2.0 * b + c;
        let vertex = if curvature > 0.0 { 0.5 - (b - a) / curvature + 0.5 } else { 0.0 };
        let j0 = vertex.floor().clamp(0.0, n as f64) as usize;
        for j in [j0, (j0 + 1).min(n)] {
            let x = [x0, lo[1] + j as f64 * step];
            let v = f(x);
            if v < best.1 {
                best = (x, v);
            }
        }
    }
    best
}

/// Two-stage grid refinement over `[-0.5, 1.5]^2`: step 1e-3 over the box,
/// then step 1e-6 over the +-1e-3 window around the coarse winner.
pub fn ridge_grid_oracle(m: &[[f64; 2]; 2], m_hat: [f64; 2], prior: [f64; 2], lambda: f64) -> ([f64; 2], f64) {
    let f = |x: [f64; 2]| ridge_objective(m, m_hat, prior, lambda, x);
    let (coarse, _) = grid_min(&f, [-0.5, -0.5], 1e-3, 2000);
    grid_min(&f, [coarse[0] - 1e-3, coarse[1] - 1e-3], 1e-6, 2000)
}

/// Central finite difference of `f` with respect to every coordinate.
pub fn finite_difference(params: &[f64], h: f64, f: &mut dyn FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest `|a - b| / max(|a|, |b|, floor)` over matching entries.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor)).fold(0.0, f64::max)
}

pub fn random_features<R: Rng>(rng: &mut R, users: usize, cats: usize) -> Features {
    let mut noise = [0.0; NOISE_DIM];
    noise.iter_mut().for_each(|v| *v = rng.random_range(-1.5..1.5));
    Features { user_group: rng.random_range(0..users) as u16, category: rng.random_range(0..cats) as u16, noise }
}

pub fn random_batch(seed: u64, n: usize, users: usize, cats: usize) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| Example { features: random_features(&mut rng, users, cats), label: rng.random_bool(0.3) }).collect()
}

/// Default-architecture model with random parameters (biases included).
pub fn random_model(seed: u64, source: hdr_core::HiddenSource) -> CvrModel {
    let cfg = ModelConfig { init_seed: seed, hidden_source: source, ..ModelConfig::new(6, 9) };
    let mut m = CvrModel::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    m.params_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.05..0.05));
    m
}

/// Small calendar used by pipeline tests: two same-family promotions.
pub fn small_experiment() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.calendar = CalendarConfig {
        num_days: 40,
        pre_days: 3,
        post_days: 2,
        promotions: vec![
            PromotionWindow { start: 12, end: 16, family: 0 },
            PromotionWindow { start: 30, end: 34, family: 0 },
        ],
        require_shared_family: true,
    };
    cfg.generator.clicks_per_day = Some(2000);
    cfg.schedule.eval_start_day = 8;
    cfg.retrieval.categories = Some(vec![1, 3, 4, 5, 6, 7, 10]);
    cfg.model.hidden = vec![16, 8];
    cfg.finetune.hidden = vec![20];
    cfg
}

pub fn all_arms() -> Vec<Arm> {
    let mut arms: Vec<Arm> = Variant::ALL.iter().map(|&v| Arm::of(v)).collect();
    arms.push(Arm::with_eta2(Variant::Hdr, 0.0));
    arms
}

/// Random closed-form instance `(M, m_hat, prior, lambda)`: column-stochastic
/// `M` whose positive column puts more mass on "1" than the negative column,
/// `m_hat` near `M q` for a random label distribution `q`.
pub fn random_ridge_instance<R: Rng>(rng: &mut R) -> ([[f64; 2]; 2], [f64; 2], [f64; 2], f64) {
    let neg = rng.random_range(0.01..0.4);
    let pos = rng.random_range(neg + 0.05..0.99);
    let m = [[pos, neg], [1.0 - pos, 1.0 - neg]];
    let q: f64 = rng.random_range(0.02..0.6);
    let noise = rng.random_range(-0.02..0.02);
    let hat = (pos * q + neg * (1.0 - q) + noise).clamp(0.0, 1.0);
    let prior_pos = rng.random_range(0.02..0.6);
    let lambda = rng.random_range(0.01..3.0);
    (m, [hat, 1.0 - hat], [prior_pos, 1.0 - prior_pos], lambda)
}

/// Outcome of one label-shift recovery trial.
#[derive(Debug, Clone, Copy)]
pub struct BbseTrial {
    pub source_rate: f64,
    pub planted_rate: f64,
    pub estimated_rate: f64,
}

impl BbseTrial {
    pub fn relative_error(&self) -> f64 {
        (self.estimated_rate - self.planted_rate).abs() / self.planted_rate
    }
}

/// Trains a classifier on one ordinary day, then estimates the positive rate
/// of a second ordinary day whose rate was doubled, from `n` labeled source
/// and `n` unlabeled target clicks. All three days share `p(x | y)`.
/// `lambda = 0` gives the unregularized estimator.
pub fn bbse_trial(seed: u64, n: usize, lambda: f64) -> BbseTrial {
    use hdr_core::cvrmodel::{train, TrainConfig};
    use hdr_core::shiftcorr::{cond_pred_matrix, estimate, pred_dist, ShiftMode};
    use hdr_core::synthgen::{build_calendar, generate_day, DayType, GeneratorConfig, GroundTruth};

    let cal = build_calendar(&CalendarConfig::desk_default()).unwrap();
    let mut truth = GroundTruth::new(GeneratorConfig::desk_default(), &cal).unwrap();
    let (train_day, source, target) = (3, 5, 7);
    for d in [train_day, source, target] {
        assert_eq!(cal.day_type(d), DayType::Ordinary);
    }
    let source_rate = truth.positive_rate(source).unwrap();
    truth.set_positive_rate(target, 2.0 * source_rate).unwrap();

    let cfg = truth.config();
    let mut model =
        CvrModel::new(ModelConfig { init_seed: seed, ..ModelConfig::new(cfg.num_user_groups, cfg.num_categories) })
            .unwrap();
    let train_events = generate_day(&cal, train_day, &truth, n, seed).unwrap();
    let data: Vec<Example> =
        train_events.iter().map(|e| Example { features: e.features, label: e.converted }).collect();
    let tc = TrainConfig { batch_size: 250, seed, ..TrainConfig::default() };
    train(&mut model, &data, &tc).unwrap();

    let src = generate_day(&cal, source, &truth, n, seed).unwrap();
    let tgt = generate_day(&cal, target, &truth, n, seed).unwrap();
    let src_preds = model.predict_many(&src.iter().map(|e| e.features).collect::<Vec<_>>()).unwrap();
    let labels: Vec<bool> = src.iter().map(|e| e.converted).collect();
    let tgt_preds = model.predict_many(&tgt.iter().map(|e| e.features).collect::<Vec<_>>()).unwrap();
    let (m, prior) = cond_pred_matrix(&src_preds, &labels, ShiftMode::Soft, 1).unwrap();
    let hat = pred_dist(&tgt_preds, ShiftMode::Soft).unwrap();
    let est = estimate(&m, prior, &hat, lambda).unwrap();
    BbseTrial { source_rate, planted_rate: 2.0 * source_rate, estimated_rate: est.m_y[0] }
}
