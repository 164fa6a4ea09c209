//! Label-shift correction: estimate the target day's label distribution from
//! the model's predictions on early target traffic and on labeled history,
//! via the ridge-regularized closed form
//! `(M^T M + lambda I)^-1 (M^T m_hat + lambda m_prior)`, then turn it into
//! per-label importance weights.
//!
//! All two-component vectors are ordered `[positive, negative]`.

use serde::{Deserialize, Serialize};

use crate::cvrmodel::Example;
use crate::error::{Error, Result};
use crate::store::DayLog;
use crate::transblock::Predictor;

pub const CLIP_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ShiftMode {
    /// Columns hold expected predicted mass.
    #[default]
    Soft,
    /// Predictions thresholded at 0.5 first.
    Hard,
}

impl std::str::FromStr for ShiftMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(ShiftMode::Soft),
            "hard" => Ok(ShiftMode::Hard),
            other => Err(Error::Config(format!("unknown shift mode '{other}'"))),
        }
    }
}

/// Which slice of the historical days feeds the conditional matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    /// Same first-`h`-hours slice as the target.
    #[default]
    HourAligned,
    FullDay,
}

fn mass(p: f64, mode: ShiftMode) -> f64 {
    match mode {
        ShiftMode::Soft => p,
        ShiftMode::Hard => {
            if p >= 0.5 {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Distribution of predictions on the target, `[mass on 1, mass on 0]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredDist(pub [f64; 2]);

/// `m[row][col]`: rows are predicted mass on `{1, 0}`, columns the true label
/// `{1, 0}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CondPredMatrix(pub [[f64; 2]; 2]);

impl CondPredMatrix {
    pub fn identity() -> Self {
        CondPredMatrix([[1.0, 0.0], [0.0, 1.0]])
    }

    /// Ratio of the largest to the smallest singular value.
    pub fn condition_number(&self) -> f64 {
        let [[a, b], [c, d]] = self.0;
        let ata = [a * a + c * c, a * b + c * d, b * b + d * d];
        let tr = ata[0] + ata[2];
        let det = ata[0] * ata[2] - ata[1] * ata[1];
        let disc = (tr * tr - 4.0 * det).max(0.0).sqrt();
        let (hi, lo) = ((tr + disc) / 2.0, (tr - disc) / 2.0);
        if lo <= 0.0 {
            f64::INFINITY
        } else {
            (hi / lo).sqrt()
        }
    }
}

/// Builds the conditional matrix and the empirical label distribution from
/// predictions on labeled history.
pub fn cond_pred_matrix(
    preds: &[f64],
    labels: &[bool],
    mode: ShiftMode,
    min_count: usize,
) -> Result<(CondPredMatrix, [f64; 2])> {
    if preds.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: preds.len(), got: labels.len() });
    }
    let mut sums = [0.0; 2];
    let mut counts = [0usize; 2];
    for (&p, &y) in preds.iter().zip(labels) {
        let col = if y { 0 } else { 1 };
        sums[col] += mass(p, mode);
        counts[col] += 1;
    }
    let need = min_count.max(1);
    if counts[0] < need || counts[1] < need {
        return Err(Error::DegenerateConditional(format!(
            "{} positives and {} negatives, need at least {need} of each",
            counts[0], counts[1]
        )));
    }
    let pos = sums[0] / counts[0] as f64;
    let neg = sums[1] / counts[1] as f64;
    let n = preds.len() as f64;
    Ok((CondPredMatrix([[pos, neg], [1.0 - pos, 1.0 - neg]]), [counts[0] as f64 / n, counts[1] as f64 / n]))
}

pub fn historical_stats<P: Predictor + ?Sized>(
    model: &P,
    labeled: &[Example],
    mode: ShiftMode,
    min_count: usize,
) -> Result<(CondPredMatrix, [f64; 2])> {
    let inputs: Vec<_> = labeled.iter().map(|e| e.features).collect();
    let labels: Vec<bool> = labeled.iter().map(|e| e.label).collect();
    cond_pred_matrix(&model.predict_many(&inputs)?, &labels, mode, min_count)
}

pub fn pred_dist(preds: &[f64], mode: ShiftMode) -> Result<PredDist> {
    if preds.is_empty() {
        return Err(Error::InvalidInput("no target predictions".into()));
    }
    let m = preds.iter().map(|&p| mass(p, mode)).sum::<f64>() / preds.len() as f64;
    Ok(PredDist([m, 1.0 - m]))
}

pub fn target_pred_dist<P: Predictor + ?Sized>(
    model: &P,
    unlabeled: &[crate::synthgen::Features],
    mode: ShiftMode,
) -> Result<PredDist> {
    pred_dist(&model.predict_many(unlabeled)?, mode)
}

/// Unclipped closed-form minimizer of
/// `||M x - m_hat||^2 + lambda ||x - m_prior||^2`.
pub fn solve_label_dist(m: &CondPredMatrix, m_hat: &PredDist, m_prior: [f64; 2], lambda: f64) -> Result<[f64; 2]> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidInput(format!("lambda must be >= 0, got {lambda}")));
    }
    let [[a, b], [c, d]] = m.0;
    // A = M^T M + lambda I
    let a11 = a * a + c * c + lambda;
    let a12 = a * b + c * d;
    let a22 = b * b + d * d + lambda;
    let r1 = a * m_hat.0[0] + c * m_hat.0[1] + lambda * m_prior[0];
    let r2 = b * m_hat.0[0] + d * m_hat.0[1] + lambda * m_prior[1];
    let det = a11 * a22 - a12 * a12;
    let scale = a11 * a11 + 2.0 * a12 * a12 + a22 * a22;
    if !(det.abs() > 1e-14 * scale) {
        return Err(Error::SingularSystem(det));
    }
    Ok([(a22 * r1 - a12 * r2) / det, (a11 * r2 - a12 * r1) / det])
}

/// Clips to `[CLIP_EPS, 1]` and renormalizes; the flag reports whether the
/// raw solution left `[0, 1]`.
pub fn clip_distribution(raw: [f64; 2]) -> ([f64; 2], bool) {
    let clipped = raw.iter().any(|v| !(0.0..=1.0).contains(v));
    let c = raw.map(|v| v.clamp(CLIP_EPS, 1.0));
    let s = c[0] + c[1];
    ([c[0] / s, c[1] / s], clipped)
}

/// `(w_pos, w_neg)`: ratio of estimated to historical label probability.
pub fn importance_weights(m_y: [f64; 2], m_prior: [f64; 2]) -> Result<(f64, f64)> {
    if m_prior.iter().any(|&v| v < CLIP_EPS) {
        return Err(Error::InvalidInput(format!("historical label distribution {m_prior:?} has a near-zero class")));
    }
    Ok((m_y[0] / m_prior[0], m_y[1] / m_prior[1]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftEstimate {
    pub m_y: [f64; 2],
    pub m_y_prior: [f64; 2],
    pub m_hat: [f64; 2],
    pub matrix: [[f64; 2]; 2],
    pub raw: [f64; 2],
    pub w_pos: f64,
    pub w_neg: f64,
    pub lambda: f64,
    pub condition_number: f64,
    pub clipped: bool,
}

impl ShiftEstimate {
    pub fn weights(&self) -> (f64, f64) {
        (self.w_pos, self.w_neg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

pub fn estimate(m: &CondPredMatrix, m_prior: [f64; 2], m_hat: &PredDist, lambda: f64) -> Result<ShiftEstimate> {
    let raw = solve_label_dist(m, m_hat, m_prior, lambda)?;
    let (m_y, clipped) = clip_distribution(raw);
    let (w_pos, w_neg) = importance_weights(m_y, m_prior)?;
    Ok(ShiftEstimate {
        m_y,
        m_y_prior: m_prior,
        m_hat: m_hat.0,
        matrix: m.0,
        raw,
        w_pos,
        w_neg,
        lambda,
        condition_number: m.condition_number(),
        clipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftConfig {
    #[serde(default = "default_hour")]
    pub hour: u8,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub mode: ShiftMode,
    #[serde(default)]
    pub alignment: Alignment,
    /// Minimum positives and negatives in the history slice.
    #[serde(default = "default_min_count")]
    pub min_count: usize,
}

fn default_hour() -> u8 {
    10
}
fn default_lambda() -> f64 {
    1.0
}
fn default_min_count() -> usize {
    1
}

impl Default for ShiftConfig {
    fn default() -> Self {
        ShiftConfig {
            hour: default_hour(),
            lambda: default_lambda(),
            mode: ShiftMode::Soft,
            alignment: Alignment::HourAligned,
            min_count: default_min_count(),
        }
    }
}

/// Historical examples with final labels, restricted per `alignment`.
pub fn history_examples(history: &[&DayLog], hour: u8, alignment: Alignment) -> Vec<Example> {
    history
        .iter()
        .flat_map(|log| match alignment {
            Alignment::HourAligned => log.events_before(hour),
            Alignment::FullDay => &log.events[..],
        })
        .map(|e| Example { features: e.features, label: e.converted })
        .collect()
}

/// Full estimate from retrieved history days and the target's early traffic.
/// Reads only target events before `cfg.hour`, and never their labels.
pub fn estimate_for_target<P: Predictor + ?Sized>(
    model: &P,
    history: &[&DayLog],
    target: &DayLog,
    cfg: &ShiftConfig,
) -> Result<ShiftEstimate> {
    let hist = history_examples(history, cfg.hour, cfg.alignment);
    let (m, prior) = historical_stats(model, &hist, cfg.mode, cfg.min_count)?;
    let m_hat = target_pred_dist(model, &target.features_before(cfg.hour), cfg.mode)?;
    estimate(&m, prior, &m_hat, cfg.lambda)
}

/// Cumulative CVR ratio `CVR_a / CVR_b` over hours `< h` for `h = 1..=24`,
/// using final labels. `None` where either side has no clicks or `b` has no
/// conversions yet.
pub fn hour_ratio_profile(day_a: &DayLog, day_b: &DayLog) -> Vec<Option<f64>> {
    let cum = |log: &DayLog| {
        let mut clicks = [0usize; 24];
        let mut conv = [0usize; 24];
        for e in &log.events {
            let h = e.hour as usize;
            clicks[h] += 1;
            conv[h] += e.converted as usize;
        }
        let mut out = Vec::with_capacity(24);
        let (mut c, mut v) = (0usize, 0usize);
        for h in 0..24 {
            c += clicks[h];
            v += conv[h];
            out.push((c, v));
        }
        out
    };
    let (a, b) = (cum(day_a), cum(day_b));
    a.iter()
        .zip(&b)
        .map(
            |(&(ca, va), &(cb, vb))| {
                if ca == 0 || cb == 0 || vb == 0 {
                    None
                } else {
                    Some((va as f64 / ca as f64) / (vb as f64 / cb as f64))
                }
            },
        )
        .collect()
}

/// `max / min` over the defined entries of `profile[from-1..]`.
pub fn ratio_spread(profile: &[Option<f64>], from_hour: usize) -> Option<f64> {
    let vals: Vec<f64> = profile.iter().skip(from_hour.saturating_sub(1)).flatten().copied().collect();
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
    (!vals.is_empty() && min > 0.0).then(|| max / min)
}
