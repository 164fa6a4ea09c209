//! Shared fixtures for the criterion benchmarks, all drawn from the desk
//! generator so the inputs look like simulation traffic.

use hdr_core::synthgen::{build_calendar, generate_day, CalendarConfig, GeneratorConfig, GroundTruth};
use hdr_core::{ClickEvent, CvrModel, Example, MemoryStore, ModelConfig, PromotionCalendar};

pub struct World {
    pub calendar: PromotionCalendar,
    pub truth: GroundTruth,
}

pub fn world(clicks_per_day: usize) -> World {
    let calendar = build_calendar(&CalendarConfig::desk_default()).expect("desk calendar");
    let cfg = GeneratorConfig { clicks_per_day, ..GeneratorConfig::desk_default() };
    let truth = GroundTruth::new(cfg, &calendar).expect("desk truth");
    World { calendar, truth }
}

pub fn clicks(w: &World, day: usize, n: usize, seed: u64) -> Vec<ClickEvent> {
    generate_day(&w.calendar, day, &w.truth, n, seed).expect("generated day")
}

pub fn examples(events: &[ClickEvent]) -> Vec<Example> {
    events.iter().map(|e| Example { features: e.features, label: e.converted }).collect()
}

/// Default architecture with its seeded initialization.
pub fn model(w: &World) -> CvrModel {
    let g = w.truth.config();
    CvrModel::new(ModelConfig::new(g.num_user_groups, g.num_categories)).expect("model")
}

/// First `days` days of the desk calendar.
pub fn store(w: &World, days: usize, seed: u64) -> MemoryStore {
    let logs = (0..days)
        .map(|d| hdr_core::synthgen::generate_day_log(&w.calendar, d, &w.truth, seed).expect("day log"))
        .collect();
    MemoryStore::from_days(logs)
}

/// Predictions of an untrained model with final labels: a realistic mix of
/// ties-free scores and rare positives.
pub fn eval_set(w: &World, n: usize, seed: u64) -> (Vec<f64>, Vec<bool>) {
    let events = clicks(w, 20, n, seed);
    let m = model(w);
    let feats: Vec<_> = events.iter().map(|e| e.features).collect();
    (m.predict_many(&feats).expect("predictions"), events.iter().map(|e| e.converted).collect())
}
