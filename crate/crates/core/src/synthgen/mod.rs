//! Deterministic synthetic clickstream over a promotion calendar.

mod calendar;
mod delay;
pub mod io;
mod truth;

pub use calendar::{build_calendar, CalendarConfig, DayInfo, DayType, PromotionCalendar, PromotionWindow};
pub use delay::DelayModel;
pub use truth::{
    traffic_profile, Archetype, ArchetypeKey, DayTruth, DelayPreset, DelayRatios, FamilyConfig, GeneratorConfig,
    GroundTruth, HOURS,
};

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::store::{DayLog, MemoryStore};

pub const NOISE_DIM: usize = 4;

/// Model-visible inputs of one click.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Features {
    pub user_group: u16,
    pub category: u16,
    pub noise: [f64; NOISE_DIM],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClickEvent {
    pub day: u32,
    pub hour: u8,
    pub features: Features,
    /// Outcome at the end of the attribution window.
    pub converted: bool,
    /// Hours from click to conversion, present iff `converted`.
    pub delay_hours: Option<f64>,
}

impl ClickEvent {
    /// Conversion recorded by the end of the `days`-th natural day counted
    /// from the click's own day (1 = same day).
    pub fn converted_within_days(&self, days: u32) -> bool {
        match self.delay_hours {
            Some(d) if self.converted => (self.hour as f64 + d) < 24.0 * days as f64,
            _ => false,
        }
    }
}

/// Label as seen after waiting `waiting_window_hours`: positives whose
/// conversion has not happened yet are reported as negatives.
pub fn observed_label(event: &ClickEvent, waiting_window_hours: f64) -> bool {
    match event.delay_hours {
        Some(d) if event.converted => d <= waiting_window_hours,
        _ => false,
    }
}

const EVENT_STREAM: u64 = 0;
const IMPRESSION_STREAM: u64 = 1;

fn day_rng(seed: u64, day: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * day as u64 + stream);
    rng
}

fn check_day(calendar: &PromotionCalendar, truth: &GroundTruth, day: usize) -> Result<()> {
    if day >= calendar.num_days() || day >= truth.num_days() {
        return Err(Error::MissingDay(day));
    }
    Ok(())
}

fn weighted(weights: &[f64]) -> Option<WeightedIndex<f64>> {
    WeightedIndex::new(weights.iter().copied()).ok()
}

/// Draws `n_clicks` i.i.d. events for `day`, sorted by hour.
pub fn generate_day(
    calendar: &PromotionCalendar,
    day: usize,
    truth: &GroundTruth,
    n_clicks: usize,
    seed: u64,
) -> Result<Vec<ClickEvent>> {
    check_day(calendar, truth, day)?;
    if n_clicks == 0 {
        return Err(Error::InvalidInput("n_clicks must be at least 1".into()));
    }
    let arch = truth.archetype_of(day)?;
    let rate = truth.positive_rate(day)?;
    let n_cat = truth.config().num_categories;
    let cells = [weighted(&arch.cond_neg), weighted(&arch.cond_pos)];
    let hours = [weighted(&arch.hour_neg), weighted(&arch.hour_pos)];
    let mut rng = day_rng(seed, day, EVENT_STREAM);

    let mut events = Vec::with_capacity(n_clicks);
    for _ in 0..n_clicks {
        let converted = rng.random::<f64>() < rate;
        let y = converted as usize;
        let cell = cells[y]
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("degenerate cell distribution".into()))?
            .sample(&mut rng);
        let hour = hours[y]
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("degenerate hour distribution".into()))?
            .sample(&mut rng);
        let mut noise = [0.0; NOISE_DIM];
        for v in noise.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let delay_hours = converted.then(|| arch.delay.sample(&mut rng));
        events.push(ClickEvent {
            day: day as u32,
            hour: hour as u8,
            features: Features { user_group: (cell / n_cat) as u16, category: (cell % n_cat) as u16, noise },
            converted,
            delay_hours,
        });
    }
    events.sort_by_key(|e| e.hour);
    Ok(events)
}

/// Per-hour, per-category impression counts for `day`.
pub fn generate_impressions(
    calendar: &PromotionCalendar,
    day: usize,
    truth: &GroundTruth,
    seed: u64,
) -> Result<Vec<Vec<u32>>> {
    check_day(calendar, truth, day)?;
    let cfg = truth.config();
    let arch = truth.archetype_of(day)?;
    let mut rng = day_rng(seed, day, IMPRESSION_STREAM);
    let jitter = rand_distr::Normal::<f64>::new(0.0, cfg.category_share_jitter.max(0.0))
        .map_err(|e| Error::Config(format!("category_share_jitter: {e}")))?;
    let mut share: Vec<f64> = arch.impression_share.iter().map(|s| s * jitter.sample(&mut rng).exp()).collect();
    let total: f64 = share.iter().sum();
    share.iter_mut().for_each(|s| *s /= total);

    let daily = cfg.clicks_per_day as f64 * cfg.impressions_per_click;
    let traffic = traffic_profile();
    let mut out = Vec::with_capacity(HOURS);
    for t in traffic {
        // Sequential binomials give an exact multinomial split.
        let mut remaining = (daily * t).round() as u64;
        let mut mass_left = 1.0;
        let mut row = vec![0u32; share.len()];
        for (c, &s) in share.iter().enumerate() {
            if remaining == 0 {
                break;
            }
            let p = if c + 1 == share.len() { 1.0 } else { (s / mass_left).clamp(0.0, 1.0) };
            let k = Binomial::new(remaining, p)
                .map_err(|e| Error::InvalidInput(format!("binomial: {e}")))?
                .sample(&mut rng);
            row[c] = k as u32;
            remaining -= k;
            mass_left -= s;
        }
        out.push(row);
    }
    Ok(out)
}

pub fn generate_day_log(calendar: &PromotionCalendar, day: usize, truth: &GroundTruth, seed: u64) -> Result<DayLog> {
    Ok(DayLog {
        day,
        events: generate_day(calendar, day, truth, truth.config().clicks_per_day, seed)?,
        impressions: generate_impressions(calendar, day, truth, seed)?,
    })
}

/// Generates every day of the calendar. Days are seeded independently, so the
/// result does not depend on generation order.
pub fn generate_store(calendar: &PromotionCalendar, truth: &GroundTruth, seed: u64) -> Result<MemoryStore> {
    let days =
        (0..calendar.num_days()).map(|d| generate_day_log(calendar, d, truth, seed)).collect::<Result<Vec<_>>>()?;
    Ok(MemoryStore::from_days(days))
}

/// Store with impressions only (events left empty); enough for category
/// selection.
pub fn generate_impression_store(calendar: &PromotionCalendar, truth: &GroundTruth, seed: u64) -> Result<MemoryStore> {
    let days = (0..calendar.num_days())
        .map(|d| {
            Ok(DayLog { day: d, events: Vec::new(), impressions: generate_impressions(calendar, d, truth, seed)? })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MemoryStore::from_days(days))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (PromotionCalendar, GroundTruth) {
        let cal = build_calendar(&CalendarConfig::desk_default()).unwrap();
        let truth = GroundTruth::new(GeneratorConfig::desk_default(), &cal).unwrap();
        (cal, truth)
    }

    fn event(converted: bool, delay: Option<f64>, hour: u8) -> ClickEvent {
        ClickEvent {
            day: 0,
            hour,
            features: Features { user_group: 0, category: 0, noise: [0.0; NOISE_DIM] },
            converted,
            delay_hours: delay,
        }
    }

    #[test]
    fn observed_label_cases() {
        assert!(!observed_label(&event(true, Some(30.0), 3), 24.0));
        assert!(observed_label(&event(true, Some(10.0), 3), 24.0));
        assert!(!observed_label(&event(false, None, 3), 72.0));
        assert!(observed_label(&event(true, Some(71.0), 3), 72.0));
    }

    #[test]
    fn natural_day_conversion_uses_click_hour() {
        let e = event(true, Some(5.0), 20);
        assert!(!e.converted_within_days(1));
        assert!(e.converted_within_days(2));
    }

    #[test]
    fn extreme_rates() {
        let (cal, mut truth) = setup();
        truth.set_positive_rate(0, 1.0).unwrap();
        truth.set_positive_rate(1, 0.0).unwrap();
        let all = generate_day(&cal, 0, &truth, 2000, 1).unwrap();
        assert!(all.iter().all(|e| e.converted && e.delay_hours.is_some()));
        let none = generate_day(&cal, 1, &truth, 2000, 1).unwrap();
        assert!(none.iter().all(|e| !e.converted && e.delay_hours.is_none()));
    }

    #[test]
    fn events_respect_invariants() {
        let (cal, truth) = setup();
        let events = generate_day(&cal, 36, &truth, 5000, 9).unwrap();
        for e in &events {
            assert!(e.hour < 24);
            assert_eq!(e.converted, e.delay_hours.is_some());
            if let Some(d) = e.delay_hours {
                assert!((0.0..72.0).contains(&d));
            }
            assert!((e.features.user_group as usize) < 8);
            assert!((e.features.category as usize) < 12);
        }
        assert!(events.windows(2).all(|w| w[0].hour <= w[1].hour));
    }

    #[test]
    fn deterministic_per_seed_and_day() {
        let (cal, truth) = setup();
        let a = generate_day_log(&cal, 40, &truth, 5).unwrap();
        let b = generate_day_log(&cal, 40, &truth, 5).unwrap();
        let c = generate_day_log(&cal, 40, &truth, 6).unwrap();
        assert_eq!(a.events, b.events);
        assert_eq!(a.impressions, b.impressions);
        assert_ne!(a.events, c.events);
    }

    #[test]
    fn precondition_errors() {
        let (cal, truth) = setup();
        assert!(matches!(generate_day(&cal, 500, &truth, 10, 0), Err(Error::MissingDay(500))));
        assert!(generate_day(&cal, 0, &truth, 0, 0).is_err());
    }

    #[test]
    fn impressions_total_matches_volume() {
        let (cal, truth) = setup();
        let imp = generate_impressions(&cal, 3, &truth, 2).unwrap();
        assert_eq!(imp.len(), 24);
        let total: u64 = imp.iter().flatten().map(|&c| c as u64).sum();
        let expected: u64 = traffic_profile().iter().map(|t| (200_000.0 * t).round() as u64).sum();
        assert_eq!(total, expected);
    }

    #[test]
    fn observed_cvr_nondecreasing_in_window() {
        let (cal, truth) = setup();
        let events = generate_day(&cal, 10, &truth, 20_000, 4).unwrap();
        let cvr = |w: f64| events.iter().filter(|e| observed_label(e, w)).count();
        let mut last = 0;
        for w in [0.0, 1.0, 6.0, 12.0, 24.0, 36.0, 48.0, 60.0, 72.0] {
            let c = cvr(w);
            assert!(c >= last);
            last = c;
        }
        assert_eq!(last, events.iter().filter(|e| e.converted).count());
    }
}
