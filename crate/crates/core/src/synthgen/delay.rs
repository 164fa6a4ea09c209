//! Conversion delay model: a two-component mixture of exponentials truncated
//! at the attribution window. A single truncated exponential cannot match both
//! the one-day and two-day completion ratios seen in production logs, so a fast
//! component (same-session purchases) is mixed with a slow one.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayModel {
    pub fast_weight: f64,
    /// Rate per hour. Always positive.
    pub fast_rate: f64,
    /// Rate per hour. May be negative: a truncated density that grows over the
    /// window (purchases postponed to a later sale day).
    pub slow_rate: f64,
    pub window_hours: f64,
}

/// CDF of an exponential with `rate` truncated to `[0, window)`.
fn truncated_cdf(rate: f64, window: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= window {
        return 1.0;
    }
    if rate.abs() < 1e-12 {
        return t / window;
    }
    (-(-rate * t).exp_m1()) / (-(-rate * window).exp_m1())
}

fn truncated_inverse(rate: f64, window: f64, u: f64) -> f64 {
    if rate.abs() < 1e-12 {
        return u * window;
    }
    let total = -(-rate * window).exp_m1();
    let t = -(-u * total).ln_1p() / rate;
    t.clamp(0.0, window * (1.0 - 1e-12))
}

impl DelayModel {
    pub fn cdf(&self, t: f64) -> f64 {
        self.fast_weight * truncated_cdf(self.fast_rate, self.window_hours, t)
            + (1.0 - self.fast_weight) * truncated_cdf(self.slow_rate, self.window_hours, t)
    }

    /// Draws a delay in `[0, window_hours)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let pick: f64 = rng.random();
        let u: f64 = rng.random();
        let rate = if pick < self.fast_weight { self.fast_rate } else { self.slow_rate };
        truncated_inverse(rate, self.window_hours, u)
    }

    /// Share of eventual conversions observed after `hours` of waiting.
    pub fn completion_ratio(&self, hours: f64) -> f64 {
        self.cdf(hours)
    }

    /// Fits the mixture so that the conversions completed after one and two
    /// thirds of the window are `r1` and `r2` of the final count. The fast
    /// component has a fixed mean of `fast_mean_hours`.
    pub fn fit(r1: f64, r2: f64, fast_mean_hours: f64, window_hours: f64) -> Result<Self> {
        if !(0.0 < r1 && r1 < r2 && r2 < 1.0) {
            return Err(Error::Config(format!("delay ratios must satisfy 0 < r1 < r2 < 1, got ({r1}, {r2})")));
        }
        if fast_mean_hours <= 0.0 || window_hours <= 0.0 {
            return Err(Error::Config("delay scales must be positive".into()));
        }
        let third = window_hours / 3.0;
        let fast_rate = 1.0 / fast_mean_hours;
        let bins = |rate: f64| {
            let c1 = truncated_cdf(rate, window_hours, third);
            let c2 = truncated_cdf(rate, window_hours, 2.0 * third);
            [c1, c2 - c1, 1.0 - c2]
        };
        let target = [r1, r2 - r1, 1.0 - r2];
        let f = bins(fast_rate);
        // For a slow rate s the bin masses are proportional to 1, y, y^2 with
        // y = exp(-s * third); parameterize by log y.
        let slow_rate_of = |log_y: f64| -log_y / third;
        let mix_weight = |s: [f64; 3]| (target[1] - s[1]) / (f[1] - s[1]);
        let residual = |log_y: f64| {
            let s = bins(slow_rate_of(log_y));
            let a = mix_weight(s);
            a * f[2] + (1.0 - a) * s[2] - target[2]
        };

        // Scan for a sign change, then bisect.
        let grid: Vec<f64> = (0..=800).map(|i| -12.0 + i as f64 * 0.03).collect();
        let mut bracket = None;
        for w in grid.windows(2) {
            let (a, b) = (residual(w[0]), residual(w[1]));
            if a.is_finite() && b.is_finite() && a.signum() != b.signum() {
                let s = bins(slow_rate_of(0.5 * (w[0] + w[1])));
                let weight = mix_weight(s);
                if (0.0..=1.0).contains(&weight) {
                    bracket = Some((w[0], w[1]));
                    break;
                }
            }
        }
        let (mut lo, mut hi) =
            bracket.ok_or_else(|| Error::Config(format!("cannot fit delay mixture to ratios ({r1}, {r2})")))?;
        let r_lo = residual(lo);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if residual(mid).signum() == r_lo.signum() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let log_y = 0.5 * (lo + hi);
        let slow_rate = slow_rate_of(log_y);
        let fast_weight = mix_weight(bins(slow_rate));
        Ok(DelayModel { fast_weight, fast_rate, slow_rate, window_hours })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fit_hits_daily_ratios() {
        let m = DelayModel::fit(0.816, 0.935, 3.0, 72.0).unwrap();
        assert!((m.completion_ratio(24.0) - 0.816).abs() < 1e-9);
        assert!((m.completion_ratio(48.0) - 0.935).abs() < 1e-9);
        assert!((0.0..=1.0).contains(&m.fast_weight));
        assert_eq!(m.cdf(72.0), 1.0);
    }

    #[test]
    fn fit_handles_postponed_purchases() {
        // Pre-sale day where most purchases wait for the sale to start.
        let m = DelayModel::fit(0.283, 0.486, 3.0, 72.0).unwrap();
        assert!(m.slow_rate < 0.0);
        assert!((m.completion_ratio(24.0) - 0.283).abs() < 1e-9);
        assert!((m.completion_ratio(48.0) - 0.486).abs() < 1e-9);
    }

    #[test]
    fn fit_rejects_invalid_ratios() {
        assert!(DelayModel::fit(0.9, 0.8, 3.0, 72.0).is_err());
        assert!(DelayModel::fit(0.0, 0.5, 3.0, 72.0).is_err());
    }

    #[test]
    fn samples_stay_in_window_and_follow_cdf() {
        let m = DelayModel::fit(0.816, 0.935, 3.0, 72.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let mut within_day = 0usize;
        for _ in 0..n {
            let d = m.sample(&mut rng);
            assert!((0.0..72.0).contains(&d));
            if d <= 24.0 {
                within_day += 1;
            }
        }
        let frac = within_day as f64 / n as f64;
        let sigma = (0.816 * 0.184 / n as f64).sqrt();
        assert!((frac - 0.816).abs() < 4.0 * sigma, "frac {frac}");
    }
}
