//! Ground-truth parameters of the synthetic clickstream.
//!
//! Every day belongs to an archetype keyed by `(day_type, family)`. An archetype
//! fixes the class-conditional cell distributions `p(cell | y)` and the hour
//! profiles `p(hour | y)`; a day only adds its own positive rate `B(y = 1)`.
//! Events are drawn label-first, so two days sharing an archetype differ by a
//! pure label shift.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::calendar::{DayType, PromotionCalendar};
use super::delay::DelayModel;
use crate::error::{Error, Result};

pub const HOURS: usize = 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyConfig {
    /// Categories whose impressions and conversions surge during the sale.
    pub surge_categories: Vec<u16>,
    pub surge_factor: f64,
    /// Logit shift applied to every cell on peak days.
    pub conversion_uplift: f64,
    /// Extra logit shift for surge categories.
    pub category_uplift: f64,
    pub boosted_user_groups: Vec<u16>,
    pub user_uplift: f64,
    /// Hour at which the conversion propensity of this sale peaks.
    pub conversion_peak_hour: f64,
    pub hour_tilt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayRatios {
    /// Share of final conversions seen within 24 hours of the click.
    pub one_day: f64,
    /// Share seen within 48 hours.
    pub two_day: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayPreset {
    pub ordinary: DelayRatios,
    pub pre_promo: DelayRatios,
    pub promo_peak: DelayRatios,
    pub post_promo: DelayRatios,
    pub fast_mean_hours: f64,
}

impl DelayPreset {
    pub fn ratios(&self, day_type: DayType) -> DelayRatios {
        match day_type {
            DayType::Ordinary => self.ordinary,
            DayType::PrePromo => self.pre_promo,
            DayType::PromoPeak => self.promo_peak,
            DayType::PostPromo => self.post_promo,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub num_user_groups: usize,
    pub num_categories: usize,
    pub clicks_per_day: usize,
    pub impressions_per_click: f64,
    pub attribution_window_hours: f64,
    /// Seed for the fixed effects (not for event sampling).
    pub truth_seed: u64,
    pub base_logit: f64,
    pub user_effect_spread: f64,
    pub category_effect_spread: f64,
    pub interaction_scale: f64,
    pub ordinary_peak_hour: f64,
    pub ordinary_hour_tilt: f64,
    pub families: Vec<FamilyConfig>,
    pub pre_suppression: f64,
    pub pre_share_blend: f64,
    pub post_recovery: f64,
    pub post_share_blend: f64,
    /// Multiplier on the positive rate for each repeat of a family.
    pub promo_growth: f64,
    /// Positive-rate multiplier per peak day (last entry repeats).
    pub peak_profile: Vec<f64>,
    /// Log-normal day-to-day noise on category impression shares.
    pub category_share_jitter: f64,
    pub delays: DelayPreset,
}

impl GeneratorConfig {
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::desk_default()),
            "strong_suppression" => {
                let mut cfg = Self::desk_default();
                cfg.delays.pre_promo = DelayRatios { one_day: 0.283, two_day: 0.486 };
                Ok(cfg)
            }
            other => Err(Error::Config(format!("unknown generator preset '{other}'"))),
        }
    }

    pub fn desk_default() -> Self {
        GeneratorConfig {
            num_user_groups: 8,
            num_categories: 12,
            clicks_per_day: 10_000,
            impressions_per_click: 20.0,
            attribution_window_hours: 72.0,
            truth_seed: 7,
            base_logit: -3.7,
            user_effect_spread: 1.2,
            category_effect_spread: 1.2,
            interaction_scale: 0.3,
            ordinary_peak_hour: 21.0,
            ordinary_hour_tilt: 0.35,
            families: vec![
                FamilyConfig {
                    surge_categories: vec![0, 1, 2],
                    surge_factor: 4.0,
                    conversion_uplift: 0.9,
                    category_uplift: 0.7,
                    boosted_user_groups: vec![1, 4, 6],
                    user_uplift: 0.6,
                    conversion_peak_hour: 21.0,
                    hour_tilt: 0.35,
                },
                FamilyConfig {
                    surge_categories: vec![3, 4, 5],
                    surge_factor: 4.0,
                    conversion_uplift: 0.8,
                    category_uplift: 0.7,
                    boosted_user_groups: vec![0, 3, 7],
                    user_uplift: 0.6,
                    conversion_peak_hour: 9.0,
                    hour_tilt: 0.5,
                },
            ],
            pre_suppression: 0.6,
            pre_share_blend: 0.6,
            post_recovery: 0.15,
            post_share_blend: 0.3,
            promo_growth: 1.25,
            peak_profile: vec![1.0, 0.9, 0.8],
            category_share_jitter: 0.03,
            delays: DelayPreset {
                ordinary: DelayRatios { one_day: 0.816, two_day: 0.935 },
                pre_promo: DelayRatios { one_day: 0.6, two_day: 0.8 },
                promo_peak: DelayRatios { one_day: 0.892, two_day: 0.978 },
                post_promo: DelayRatios { one_day: 0.85, two_day: 0.95 },
                fast_mean_hours: 3.0,
            },
        }
    }

    pub fn num_cells(&self) -> usize {
        self.num_user_groups * self.num_categories
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_user_groups == 0 || self.num_user_groups > 16 {
            return Err(Error::Config("num_user_groups must be in 1..=16".into()));
        }
        if self.num_categories == 0 || self.num_categories > 16 {
            return Err(Error::Config("num_categories must be in 1..=16".into()));
        }
        if self.clicks_per_day == 0 {
            return Err(Error::Config("clicks_per_day must be positive".into()));
        }
        if !(self.attribution_window_hours > 0.0) {
            return Err(Error::Config("attribution window must be positive".into()));
        }
        if self.peak_profile.is_empty() || self.peak_profile.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::Config("peak_profile must be non-empty and positive".into()));
        }
        for (i, fam) in self.families.iter().enumerate() {
            if fam.surge_categories.iter().any(|&c| c as usize >= self.num_categories) {
                return Err(Error::Config(format!("family {i}: surge category out of range")));
            }
            if fam.boosted_user_groups.iter().any(|&u| u as usize >= self.num_user_groups) {
                return Err(Error::Config(format!("family {i}: boosted user group out of range")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ArchetypeKey {
    pub day_type: DayType,
    pub family: Option<u32>,
}

/// Distributions shared by every day of one `(day_type, family)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Archetype {
    pub impression_share: Vec<f64>,
    /// Click share per cell `u * num_categories + c` at the natural rate.
    pub cell_share: Vec<f64>,
    pub cell_cvr: Vec<f64>,
    pub natural_rate: f64,
    pub cond_pos: Vec<f64>,
    pub cond_neg: Vec<f64>,
    pub hour_pos: [f64; HOURS],
    pub hour_neg: [f64; HOURS],
    pub delay: DelayModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DayTruth {
    pub key: ArchetypeKey,
    pub positive_rate: f64,
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    config: GeneratorConfig,
    archetypes: BTreeMap<ArchetypeKey, Archetype>,
    days: Vec<DayTruth>,
}

/// Click volume by hour of day.
const TRAFFIC: [f64; HOURS] = [
    2.0, 1.2, 0.8, 0.5, 0.4, 0.5, 0.9, 1.6, 2.6, 3.4, 3.9, 4.2, //
    4.4, 4.3, 4.1, 4.2, 4.4, 4.7, 5.1, 5.6, 6.3, 6.8, 6.4, 4.0,
];

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
}

fn hour_profile(peak_hour: f64, tilt: f64) -> [f64; HOURS] {
    let mut out = [0.0; HOURS];
    for (h, slot) in out.iter_mut().enumerate() {
        let angle = 2.0 * std::f64::consts::PI * (h as f64 + 0.5 - peak_hour) / HOURS as f64;
        *slot = TRAFFIC[h] * (tilt * angle.cos()).exp();
    }
    normalize(&mut out);
    out
}

pub fn traffic_profile() -> [f64; HOURS] {
    let mut t = TRAFFIC;
    normalize(&mut t);
    t
}

fn linspace_shuffled(n: usize, spread: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v: Vec<f64> =
        if n == 1 { vec![0.0] } else { (0..n).map(|i| spread * (2.0 * i as f64 / (n - 1) as f64 - 1.0)).collect() };
    v.shuffle(rng);
    v
}

impl Archetype {
    fn from_cells(
        impression_share: Vec<f64>,
        user_share: &[f64],
        logits: &[f64],
        hour_pos: [f64; HOURS],
        delay: DelayModel,
    ) -> Self {
        let n_cat = impression_share.len();
        let mut cell_share = Vec::with_capacity(logits.len());
        for us in user_share {
            for cs in &impression_share {
                cell_share.push(us * cs);
            }
        }
        debug_assert_eq!(cell_share.len(), user_share.len() * n_cat);
        let cell_cvr: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
        let natural_rate: f64 = cell_share.iter().zip(&cell_cvr).map(|(s, p)| s * p).sum();
        let mut cond_pos: Vec<f64> = cell_share.iter().zip(&cell_cvr).map(|(s, p)| s * p).collect();
        let mut cond_neg: Vec<f64> = cell_share.iter().zip(&cell_cvr).map(|(s, p)| s * (1.0 - p)).collect();
        normalize(&mut cond_pos);
        normalize(&mut cond_neg);
        Archetype {
            impression_share,
            cell_share,
            cell_cvr,
            natural_rate,
            cond_pos,
            cond_neg,
            hour_pos,
            hour_neg: traffic_profile(),
            delay,
        }
    }
}

impl GroundTruth {
    pub fn new(config: GeneratorConfig, calendar: &PromotionCalendar) -> Result<Self> {
        config.validate()?;
        let n_u = config.num_user_groups;
        let n_c = config.num_categories;
        let mut rng = ChaCha8Rng::seed_from_u64(config.truth_seed);
        let share_noise = Normal::<f64>::new(0.0, 0.3).expect("valid normal");
        let mut user_share: Vec<f64> = (0..n_u).map(|_| share_noise.sample(&mut rng).exp()).collect();
        normalize(&mut user_share);
        let mut base_impr: Vec<f64> = (0..n_c).map(|_| share_noise.sample(&mut rng).exp()).collect();
        normalize(&mut base_impr);
        let user_fx = linspace_shuffled(n_u, config.user_effect_spread, &mut rng);
        let cat_fx = linspace_shuffled(n_c, config.category_effect_spread, &mut rng);
        let inter = Normal::new(0.0, config.interaction_scale.max(0.0))
            .map_err(|e| Error::Config(format!("interaction_scale: {e}")))?;
        let ordinary_logits: Vec<f64> = (0..n_u * n_c)
            .map(|cell| {
                let (u, c) = (cell / n_c, cell % n_c);
                config.base_logit + user_fx[u] + cat_fx[c] + inter.sample(&mut rng)
            })
            .collect();

        let window = config.attribution_window_hours;
        let fast = config.delays.fast_mean_hours;
        let delay_for = |t: DayType| {
            let r = config.delays.ratios(t);
            DelayModel::fit(r.one_day, r.two_day, fast, window)
        };

        let mut archetypes = BTreeMap::new();
        archetypes.insert(
            ArchetypeKey { day_type: DayType::Ordinary, family: None },
            Archetype::from_cells(
                base_impr.clone(),
                &user_share,
                &ordinary_logits,
                hour_profile(config.ordinary_peak_hour, config.ordinary_hour_tilt),
                delay_for(DayType::Ordinary)?,
            ),
        );

        let families: std::collections::BTreeSet<u32> = calendar.days().iter().filter_map(|d| d.family).collect();
        for family in families {
            let fam = config.families.get(family as usize).ok_or_else(|| {
                Error::Config(format!("calendar uses family {family} but only {} configured", config.families.len()))
            })?;
            let is_surge = |c: usize| fam.surge_categories.contains(&(c as u16));
            let is_boosted = |u: usize| fam.boosted_user_groups.contains(&(u as u16));
            let mut peak_impr: Vec<f64> = base_impr
                .iter()
                .enumerate()
                .map(|(c, s)| if is_surge(c) { s * fam.surge_factor } else { *s })
                .collect();
            normalize(&mut peak_impr);
            let blend =
                |w: f64| -> Vec<f64> { base_impr.iter().zip(&peak_impr).map(|(o, p)| (1.0 - w) * o + w * p).collect() };
            let peak_logits: Vec<f64> = ordinary_logits
                .iter()
                .enumerate()
                .map(|(cell, z)| {
                    let (u, c) = (cell / n_c, cell % n_c);
                    let mut z = z + fam.conversion_uplift;
                    if is_surge(c) {
                        z += fam.category_uplift;
                    }
                    if is_boosted(u) {
                        z += fam.user_uplift;
                    }
                    z
                })
                .collect();
            let shifted = |delta: f64| -> Vec<f64> { ordinary_logits.iter().map(|z| z + delta).collect() };
            let hours = hour_profile(fam.conversion_peak_hour, fam.hour_tilt);
            let phases = [
                (DayType::PrePromo, blend(config.pre_share_blend), shifted(-config.pre_suppression)),
                (DayType::PromoPeak, peak_impr.clone(), peak_logits),
                (DayType::PostPromo, blend(config.post_share_blend), shifted(config.post_recovery)),
            ];
            for (day_type, impr, logits) in phases {
                archetypes.insert(
                    ArchetypeKey { day_type, family: Some(family) },
                    Archetype::from_cells(impr, &user_share, &logits, hours, delay_for(day_type)?),
                );
            }
        }

        let days = calendar
            .days()
            .iter()
            .map(|info| {
                let key = ArchetypeKey { day_type: info.day_type, family: info.family };
                let natural = archetypes[&key].natural_rate;
                let growth = config.promo_growth.powi(info.family_occurrence.unwrap_or(0) as i32);
                let profile = if info.day_type == DayType::PromoPeak {
                    let i = info.phase_offset.min(config.peak_profile.len() - 1);
                    config.peak_profile[i]
                } else {
                    1.0
                };
                DayTruth { key, positive_rate: (natural * growth * profile).min(1.0) }
            })
            .collect();

        Ok(GroundTruth { config, archetypes, days })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn num_days(&self) -> usize {
        self.days.len()
    }

    pub fn day(&self, day: usize) -> Result<&DayTruth> {
        self.days.get(day).ok_or(Error::MissingDay(day))
    }

    pub fn days(&self) -> &[DayTruth] {
        &self.days
    }

    pub fn archetype(&self, key: &ArchetypeKey) -> Option<&Archetype> {
        self.archetypes.get(key)
    }

    pub fn archetype_of(&self, day: usize) -> Result<&Archetype> {
        let key = self.day(day)?.key;
        Ok(&self.archetypes[&key])
    }

    /// True label distribution `B(y = 1)` of a day.
    pub fn positive_rate(&self, day: usize) -> Result<f64> {
        Ok(self.day(day)?.positive_rate)
    }

    /// Label-shift knob: replaces a day's positive rate, leaving `p(x | y)` intact.
    pub fn set_positive_rate(&mut self, day: usize, rate: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::InvalidInput(format!("positive rate {rate} outside [0, 1]")));
        }
        let slot = self.days.get_mut(day).ok_or(Error::MissingDay(day))?;
        slot.positive_rate = rate;
        Ok(())
    }

    /// Scales the positive rate of every day of `day_type`.
    pub fn scale_positive_rate(&mut self, day_type: DayType, factor: f64) -> Result<()> {
        for day in 0..self.days.len() {
            if self.days[day].key.day_type == day_type {
                let rate = self.days[day].positive_rate * factor;
                self.set_positive_rate(day, rate)?;
            }
        }
        Ok(())
    }

    /// `p(y = 1 | user_group, category)` on `day`.
    pub fn conversion_prob(&self, day: usize, user_group: usize, category: usize) -> Result<f64> {
        let d = self.day(day)?;
        let a = &self.archetypes[&d.key];
        let cell = user_group * self.config.num_categories + category;
        let (pos, neg) = (d.positive_rate * a.cond_pos[cell], (1.0 - d.positive_rate) * a.cond_neg[cell]);
        if pos + neg == 0.0 {
            return Ok(0.0);
        }
        Ok(pos / (pos + neg))
    }

    pub fn delay_model(&self, day: usize) -> Result<&DelayModel> {
        Ok(&self.archetype_of(day)?.delay)
    }
}
