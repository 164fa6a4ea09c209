//! Day-level vectors and nearest-neighbour retrieval of similar history days.
//!
//! Layout of a vector for target day `T` with `K` representative categories:
//!
//! | slots        | content                                                       |
//! |--------------|---------------------------------------------------------------|
//! | `0`          | one-day CVR of `T-1`                                          |
//! | `1..3`       | one- and two-day CVR of `T-2`                                 |
//! | `3..6`       | one-, two- and three-day CVR of `T-3`                         |
//! | `6..6+3K`    | impression ratio per category on `T-3`, `T-2`, `T-1` (day-major) |
//! | `6+3K..6+4K` | impression ratio per category over hours `< h` of `T`          |
//!
//! An n-day CVR counts conversions that landed before the end of the n-th
//! natural day starting at the click's day, so every value is known at hour
//! `h` of day `T`. Day `T` contributes impressions only.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{DayLog, DayStore};
use crate::synthgen::{DayType, PromotionCalendar};

pub const CVR_FEATS: usize = 6;
pub const DEFAULT_HOUR: u8 = 10;
pub const DEFAULT_K: usize = 2;
pub const DEFAULT_NUM_CATEGORIES: usize = 7;
/// Days whose labels are fully resolved at day `T` are at most `T - 4`.
pub const DEFAULT_HISTORY_LAG: usize = 4;
pub const DAYVEC_TAG: &str = "#hdr-dayvec v1";

pub fn vector_len(num_categories: usize) -> usize {
    CVR_FEATS + 4 * num_categories
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayVector {
    pub day: usize,
    pub hour: u8,
    pub categories: Vec<u16>,
    pub values: Vec<f64>,
}

impl DayVector {
    pub fn cvr_feats(&self) -> &[f64] {
        &self.values[..CVR_FEATS]
    }

    /// Impression ratio of the `k`-th category on `T-3 + lag_index`.
    pub fn impr_feat(&self, lag_index: usize, k: usize) -> f64 {
        self.values[CVR_FEATS + lag_index * self.categories.len() + k]
    }

    pub fn early_feats(&self) -> &[f64] {
        &self.values[CVR_FEATS + 3 * self.categories.len()..]
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{DAYVEC_TAG}\nday_index {}\nhour {}\ncategories", self.day, self.hour);
        for c in &self.categories {
            let _ = write!(out, " {c}");
        }
        out.push_str("\nvalues");
        for v in &self.values {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
        out
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(DAYVEC_TAG) {
            return Err(Error::parse(path, 1, format!("expected schema tag '{DAYVEC_TAG}'")));
        }
        let mut take = |line: usize, key: &str| -> Result<Vec<String>> {
            let raw = lines.next().ok_or_else(|| Error::parse(path, line, "truncated record"))?;
            let mut parts = raw.split_whitespace();
            if parts.next() != Some(key) {
                return Err(Error::parse(path, line, format!("expected '{key}'")));
            }
            Ok(parts.map(str::to_owned).collect())
        };
        let day = parse_list::<usize>(path, 2, &take(2, "day_index")?)?;
        let hour = parse_list::<u8>(path, 3, &take(3, "hour")?)?;
        let categories = parse_list::<u16>(path, 4, &take(4, "categories")?)?;
        let values = parse_list::<f64>(path, 5, &take(5, "values")?)?;
        let (Some(&day), Some(&hour)) = (day.first(), hour.first()) else {
            return Err(Error::parse(path, 2, "missing day_index or hour"));
        };
        if values.len() != vector_len(categories.len()) {
            return Err(Error::DimensionMismatch { expected: vector_len(categories.len()), got: values.len() });
        }
        Ok(DayVector { day, hour, categories, values })
    }
}

fn parse_list<T: std::str::FromStr>(path: &Path, line: usize, items: &[String]) -> Result<Vec<T>> {
    items.iter().map(|s| s.parse::<T>().map_err(|_| Error::parse(path, line, format!("bad number '{s}'")))).collect()
}

/// Per-day quantities reused by every vector that looks back at the day.
#[derive(Debug, Clone, PartialEq)]
pub struct LaggedSummary {
    /// One-, two- and three-day CVR.
    pub cvr: [f64; 3],
    /// Full-day impression ratio per category (all categories).
    pub impr_ratio: Vec<f64>,
}

pub fn lagged_summary(log: &DayLog) -> Result<LaggedSummary> {
    if log.events.is_empty() {
        return Err(Error::EmptyDay(log.day));
    }
    let n = log.events.len() as f64;
    let mut cvr = [0.0; 3];
    for (k, slot) in cvr.iter_mut().enumerate() {
        let hits = log.events.iter().filter(|e| e.converted_within_days(k as u32 + 1)).count();
        *slot = hits as f64 / n;
    }
    let impr_ratio = impression_ratios(log, 24)?;
    Ok(LaggedSummary { cvr, impr_ratio })
}

/// Share of impressions per category over hours `< hour`.
pub fn impression_ratios(log: &DayLog, hour: u8) -> Result<Vec<f64>> {
    let rows = &log.impressions[..(hour as usize).min(log.impressions.len())];
    let n_cat = log.impressions.first().map_or(0, Vec::len);
    let mut counts = vec![0u64; n_cat];
    for row in rows {
        for (c, &v) in row.iter().enumerate() {
            counts[c] += v as u64;
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::EmptyDay(log.day));
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

fn pick(ratios: &[f64], categories: &[u16]) -> Result<Vec<f64>> {
    categories
        .iter()
        .map(|&c| {
            ratios.get(c as usize).copied().ok_or(Error::OutOfRange {
                what: "category",
                id: c as usize,
                size: ratios.len(),
            })
        })
        .collect()
}

/// Assembles a vector from the summaries of `T-3`, `T-2`, `T-1` (in that
/// order) and the early impression ratios of `T`.
pub fn assemble(
    day: usize,
    hour: u8,
    categories: &[u16],
    lagged: [&LaggedSummary; 3],
    early_ratio: &[f64],
) -> Result<DayVector> {
    let [t3, t2, t1] = lagged;
    let mut values = Vec::with_capacity(vector_len(categories.len()));
    values.extend([t1.cvr[0], t2.cvr[0], t2.cvr[1], t3.cvr[0], t3.cvr[1], t3.cvr[2]]);
    for s in [t3, t2, t1] {
        values.extend(pick(&s.impr_ratio, categories)?);
    }
    values.extend(pick(early_ratio, categories)?);
    Ok(DayVector { day, hour, categories: categories.to_vec(), values })
}

/// Builds the vector of `target_day` as known at hour `hour` of that day.
/// Reads days `T-3..T-1` in full and only the impressions of hours `< hour`
/// of day `T`.
pub fn build_day_vector<S: DayStore + ?Sized>(
    store: &S,
    target_day: usize,
    hour: u8,
    categories: &[u16],
) -> Result<DayVector> {
    if target_day < 3 {
        return Err(Error::MissingDay(target_day.saturating_sub(3)));
    }
    if hour == 0 || hour > 24 {
        return Err(Error::InvalidInput(format!("hour cutoff {hour} outside 1..=24")));
    }
    let t3 = lagged_summary(store.day(target_day - 3)?)?;
    let t2 = lagged_summary(store.day(target_day - 2)?)?;
    let t1 = lagged_summary(store.day(target_day - 1)?)?;
    let early = impression_ratios(store.day(target_day)?, hour)?;
    assemble(target_day, hour, categories, [&t3, &t2, &t1], &early)
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateVector("zero vector has no direction".into()));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub target_day: usize,
    pub k: usize,
    /// `(day, score)` by decreasing score.
    pub hits: Vec<(usize, f64)>,
    /// Fewer than `k` candidates were available.
    pub truncated: bool,
}

impl RetrievalResult {
    /// Retrieved days in chronological order.
    pub fn days_chronological(&self) -> Vec<usize> {
        let mut days: Vec<usize> = self.hits.iter().map(|h| h.0).collect();
        days.sort_unstable();
        days
    }
}

/// Exact scan; ties go to the more recent day.
pub fn retrieve_top_k(target: &DayVector, history: &[DayVector], k: usize) -> Result<RetrievalResult> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    if history.is_empty() {
        return Err(Error::InvalidInput("retrieval history is empty".into()));
    }
    if let Some(h) = history.iter().find(|h| h.day >= target.day) {
        return Err(Error::InvalidInput(format!("history day {} is not before target day {}", h.day, target.day)));
    }
    let mut scored = history
        .iter()
        .map(|h| Ok((h.day, cosine_similarity(&target.values, &h.values)?)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(b.0.cmp(&a.0)));
    let truncated = k > scored.len();
    scored.truncate(k);
    Ok(RetrievalResult { target_day: target.day, k, hits: scored, truncated })
}

/// Picks the `k` categories whose mean impression ratio differs most between
/// promotion and ordinary days; ties go to the lower id.
pub fn select_categories<S: DayStore + ?Sized>(store: &S, calendar: &PromotionCalendar, k: usize) -> Result<Vec<u16>> {
    let mut promo_sum: Vec<f64> = Vec::new();
    let mut ord_sum: Vec<f64> = Vec::new();
    let (mut n_promo, mut n_ord) = (0usize, 0usize);
    for day in 0..calendar.num_days().min(store.num_days()) {
        let Ok(log) = store.day(day) else { continue };
        let ratios = impression_ratios(log, 24)?;
        if promo_sum.is_empty() {
            promo_sum = vec![0.0; ratios.len()];
            ord_sum = vec![0.0; ratios.len()];
        }
        let (sum, n) = if calendar.day_type(day) == DayType::Ordinary {
            (&mut ord_sum, &mut n_ord)
        } else {
            (&mut promo_sum, &mut n_promo)
        };
        sum.iter_mut().zip(&ratios).for_each(|(s, r)| *s += r);
        *n += 1;
    }
    if n_promo == 0 || n_ord == 0 {
        return Err(Error::InvalidInput("category selection needs both promotion and ordinary days".into()));
    }
    if k > promo_sum.len() {
        return Err(Error::InvalidInput(format!("asked for {k} categories, only {} exist", promo_sum.len())));
    }
    let mut gaps: Vec<(u16, f64)> = promo_sum
        .iter()
        .zip(&ord_sum)
        .enumerate()
        .map(|(c, (p, o))| (c as u16, (p / n_promo as f64 - o / n_ord as f64).abs()))
        .collect();
    gaps.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut picked: Vec<u16> = gaps[..k].iter().map(|g| g.0).collect();
    picked.sort_unstable();
    Ok(picked)
}

/// Caches lagged summaries so that scanning many days stays linear.
#[derive(Debug, Default)]
pub struct VectorBuilder {
    pub hour: u8,
    pub categories: Vec<u16>,
    lagged: Vec<Option<LaggedSummary>>,
    early: Vec<Option<Vec<f64>>>,
}

impl VectorBuilder {
    pub fn new(hour: u8, categories: Vec<u16>) -> Self {
        VectorBuilder { hour, categories, lagged: Vec::new(), early: Vec::new() }
    }

    fn lagged_of<S: DayStore + ?Sized>(&mut self, store: &S, day: usize) -> Result<LaggedSummary> {
        if self.lagged.len() <= day {
            self.lagged.resize(day + 1, None);
        }
        if self.lagged[day].is_none() {
            self.lagged[day] = Some(lagged_summary(store.day(day)?)?);
        }
        Ok(self.lagged[day].clone().expect("filled above"))
    }

    fn early_of<S: DayStore + ?Sized>(&mut self, store: &S, day: usize) -> Result<Vec<f64>> {
        if self.early.len() <= day {
            self.early.resize(day + 1, None);
        }
        if self.early[day].is_none() {
            self.early[day] = Some(impression_ratios(store.day(day)?, self.hour)?);
        }
        Ok(self.early[day].clone().expect("filled above"))
    }

    /// Same result as [`build_day_vector`], memoized per day.
    pub fn build<S: DayStore + ?Sized>(&mut self, store: &S, day: usize) -> Result<DayVector> {
        if day < 3 {
            return Err(Error::MissingDay(day.saturating_sub(3)));
        }
        let t3 = self.lagged_of(store, day - 3)?;
        let t2 = self.lagged_of(store, day - 2)?;
        let t1 = self.lagged_of(store, day - 1)?;
        let early = self.early_of(store, day)?;
        assemble(day, self.hour, &self.categories, [&t3, &t2, &t1], &early)
    }

    /// Vectors of every candidate history day `3..=target - lag`.
    pub fn history<S: DayStore + ?Sized>(
        &mut self,
        store: &S,
        target_day: usize,
        lag: usize,
    ) -> Result<Vec<DayVector>> {
        let Some(last) = target_day.checked_sub(lag) else {
            return Ok(Vec::new());
        };
        (3..=last).map(|d| self.build(store, d)).collect()
    }

    /// Builds the target vector and ranks the history before it.
    pub fn retrieve<S: DayStore + ?Sized>(
        &mut self,
        store: &S,
        target_day: usize,
        k: usize,
        lag: usize,
    ) -> Result<RetrievalResult> {
        let target = self.build(store, target_day)?;
        let history = self.history(store, target_day, lag)?;
        retrieve_top_k(&target, &history, k)
    }
}
