use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DayType {
    Ordinary,
    PrePromo,
    PromoPeak,
    PostPromo,
}

impl DayType {
    pub fn as_str(self) -> &'static str {
        match self {
            DayType::Ordinary => "ordinary",
            DayType::PrePromo => "pre_promo",
            DayType::PromoPeak => "promo_peak",
            DayType::PostPromo => "post_promo",
        }
    }

    pub fn is_promo(self) -> bool {
        self != DayType::Ordinary
    }
}

impl std::fmt::Display for DayType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DayType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ordinary" => Ok(DayType::Ordinary),
            "pre_promo" => Ok(DayType::PrePromo),
            "promo_peak" => Ok(DayType::PromoPeak),
            "post_promo" => Ok(DayType::PostPromo),
            other => Err(Error::InvalidInput(format!("unknown day type '{other}'"))),
        }
    }
}

/// One promotion. `start..=end` covers the surge and the recovery; the
/// suppression phase occupies the `pre_days` days before `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromotionWindow {
    pub start: usize,
    pub end: usize,
    pub family: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalendarConfig {
    pub num_days: usize,
    #[serde(default = "default_phase_days")]
    pub pre_days: usize,
    #[serde(default = "default_phase_days")]
    pub post_days: usize,
    #[serde(default)]
    pub promotions: Vec<PromotionWindow>,
    /// Demand that some family occurs at least twice (needed for retrieval).
    #[serde(default)]
    pub require_shared_family: bool,
}

fn default_phase_days() -> usize {
    2
}

impl CalendarConfig {
    /// 180 days, four promotions alternating between two families, each with a
    /// three-day pre-promotion phase.
    pub fn desk_default() -> Self {
        CalendarConfig {
            num_days: 180,
            pre_days: 3,
            post_days: 2,
            promotions: vec![
                PromotionWindow { start: 35, end: 39, family: 0 },
                PromotionWindow { start: 75, end: 79, family: 1 },
                PromotionWindow { start: 115, end: 119, family: 0 },
                PromotionWindow { start: 155, end: 159, family: 1 },
            ],
            require_shared_family: true,
        }
    }

    /// Shorter calendar with one promotion per family, used to pick the
    /// representative categories offline.
    pub fn calibration_default() -> Self {
        CalendarConfig {
            num_days: 90,
            pre_days: 2,
            post_days: 2,
            promotions: vec![
                PromotionWindow { start: 30, end: 34, family: 0 },
                PromotionWindow { start: 60, end: 64, family: 1 },
            ],
            require_shared_family: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayInfo {
    pub day_type: DayType,
    /// Promo family, `None` on ordinary days.
    pub family: Option<u32>,
    /// Index of the promotion in the calendar.
    pub promotion: Option<usize>,
    /// How many earlier promotions of the same family precede this one.
    pub family_occurrence: Option<usize>,
    /// Offset of the day inside its phase (0 for the first peak day, ...).
    pub phase_offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromotionCalendar {
    days: Vec<DayInfo>,
}

pub fn build_calendar(config: &CalendarConfig) -> Result<PromotionCalendar> {
    if config.num_days < 14 {
        return Err(Error::Config(format!("calendar needs at least 14 days, got {}", config.num_days)));
    }
    let ordinary = DayInfo {
        day_type: DayType::Ordinary,
        family: None,
        promotion: None,
        family_occurrence: None,
        phase_offset: 0,
    };
    let mut days = vec![ordinary; config.num_days];
    let mut taken = vec![None::<usize>; config.num_days];

    let mut order: Vec<usize> = (0..config.promotions.len()).collect();
    order.sort_by_key(|&i| config.promotions[i].start);
    let mut seen_per_family = std::collections::BTreeMap::<u32, usize>::new();

    for idx in order {
        let promo = config.promotions[idx];
        if promo.end < promo.start {
            return Err(Error::Config(format!("promotion {idx}: end {} before start {}", promo.end, promo.start)));
        }
        let len = promo.end - promo.start + 1;
        if len <= config.post_days {
            return Err(Error::Config(format!(
                "promotion {idx}: window of {len} days leaves no peak after {} post days",
                config.post_days
            )));
        }
        if promo.start < config.pre_days {
            return Err(Error::Config(format!("promotion {idx}: pre-promotion phase starts before day 0")));
        }
        if promo.end >= config.num_days {
            return Err(Error::Config(format!(
                "promotion {idx}: ends on day {} past calendar end {}",
                promo.end,
                config.num_days - 1
            )));
        }
        let occurrence = seen_per_family.entry(promo.family).or_insert(0);
        let first = promo.start - config.pre_days;
        let peak_end = promo.end - config.post_days;
        for day in first..=promo.end {
            if let Some(other) = taken[day] {
                return Err(Error::Config(format!("promotions {other} and {idx} overlap on day {day}")));
            }
            taken[day] = Some(idx);
            let (day_type, phase_offset) = if day < promo.start {
                (DayType::PrePromo, day - first)
            } else if day <= peak_end {
                (DayType::PromoPeak, day - promo.start)
            } else {
                (DayType::PostPromo, day - peak_end - 1)
            };
            days[day] = DayInfo {
                day_type,
                family: Some(promo.family),
                promotion: Some(idx),
                family_occurrence: Some(*occurrence),
                phase_offset,
            };
        }
        *occurrence += 1;
    }

    if config.require_shared_family && !seen_per_family.values().any(|&n| n >= 2) {
        return Err(Error::Config("retrieval requires at least two promotions sharing a family".into()));
    }
    Ok(PromotionCalendar { days })
}

impl PromotionCalendar {
    pub fn num_days(&self) -> usize {
        self.days.len()
    }

    pub fn info(&self, day: usize) -> Option<&DayInfo> {
        self.days.get(day)
    }

    pub fn day_type(&self, day: usize) -> DayType {
        self.days[day].day_type
    }

    pub fn family(&self, day: usize) -> Option<u32> {
        self.days[day].family
    }

    pub fn days(&self) -> &[DayInfo] {
        &self.days
    }

    pub fn day_types(&self) -> Vec<DayType> {
        self.days.iter().map(|d| d.day_type).collect()
    }

    /// Whether `day` is a peak day whose family already ran a full promotion
    /// that ended at least `lag` days earlier.
    pub fn has_family_history(&self, day: usize, lag: usize) -> bool {
        let info = &self.days[day];
        let (Some(family), Some(promo)) = (info.family, info.promotion) else {
            return false;
        };
        let end = (day + 1).saturating_sub(lag).min(day);
        self.days[..end]
            .iter()
            .filter(|d| d.family == Some(family) && d.day_type == DayType::PromoPeak && d.promotion != Some(promo))
            .count()
            >= 2
    }
}
