//! Day-partitioned event storage.

use crate::error::{Error, Result};
use crate::synthgen::{ClickEvent, Features};

/// Everything logged for one calendar day.
#[derive(Debug, Clone, PartialEq)]
pub struct DayLog {
    pub day: usize,
    /// Clicks sorted by hour.
    pub events: Vec<ClickEvent>,
    /// `impressions[hour][category]`.
    pub impressions: Vec<Vec<u32>>,
}

impl DayLog {
    /// Clicks that happened before `hour`.
    pub fn events_before(&self, hour: u8) -> &[ClickEvent] {
        let end = self.events.partition_point(|e| e.hour < hour);
        &self.events[..end]
    }

    /// Clicks at or after `hour`.
    pub fn events_from(&self, hour: u8) -> &[ClickEvent] {
        let start = self.events.partition_point(|e| e.hour < hour);
        &self.events[start..]
    }

    /// Unlabeled inputs of clicks before `hour`.
    pub fn features_before(&self, hour: u8) -> Vec<Features> {
        self.events_before(hour).iter().map(|e| e.features).collect()
    }
}

pub trait DayStore {
    fn num_days(&self) -> usize;
    fn day(&self, day: usize) -> Result<&DayLog>;
}

#[derive(Debug, Clone, Default)]
pub struct MemoryStore {
    days: Vec<Option<DayLog>>,
}

impl MemoryStore {
    pub fn from_days(days: Vec<DayLog>) -> Self {
        let mut store = MemoryStore::default();
        for d in days {
            store.insert(d);
        }
        store
    }

    pub fn insert(&mut self, log: DayLog) {
        let idx = log.day;
        if self.days.len() <= idx {
            self.days.resize(idx + 1, None);
        }
        self.days[idx] = Some(log);
    }

    pub fn day_mut(&mut self, day: usize) -> Result<&mut DayLog> {
        self.days.get_mut(day).and_then(Option::as_mut).ok_or(Error::MissingDay(day))
    }

    pub fn available_days(&self) -> impl Iterator<Item = usize> + '_ {
        self.days.iter().enumerate().filter_map(|(i, d)| d.as_ref().map(|_| i))
    }
}

impl DayStore for MemoryStore {
    fn num_days(&self) -> usize {
        self.days.len()
    }

    fn day(&self, day: usize) -> Result<&DayLog> {
        self.days.get(day).and_then(Option::as_ref).ok_or(Error::MissingDay(day))
    }
}
