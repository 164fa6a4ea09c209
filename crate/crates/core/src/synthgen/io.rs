//! Plain-text persistence of generated days.
//!
//! A dataset directory holds `manifest.toml`, plus `day_NNNN.events` and
//! `day_NNNN.impressions` per day. Every file starts with a schema tag.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    build_calendar, CalendarConfig, ClickEvent, DayType, Features, GeneratorConfig, GroundTruth, PromotionCalendar,
    HOURS, NOISE_DIM,
};
use crate::error::{Error, Result};
use crate::store::{DayLog, MemoryStore};

pub const EVENTS_TAG: &str = "#hdr-events v1";
pub const IMPRESSIONS_TAG: &str = "#hdr-impressions v1";
pub const MANIFEST_SCHEMA: &str = "hdr-manifest/1";
pub const MANIFEST_FILE: &str = "manifest.toml";

const EVENTS_HEADER: &str = "day_index,hour,user_group,category,noise0,noise1,noise2,noise3,converted,delay_hours";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub seed: u64,
    pub calendar: CalendarConfig,
    pub generator: GeneratorConfig,
    /// True positive rate per day, including any label-shift overrides.
    pub positive_rates: Vec<f64>,
    /// Informational copy of the calendar tags.
    pub day_types: Vec<DayType>,
}

impl Manifest {
    pub fn new(calendar: &CalendarConfig, truth: &GroundTruth, seed: u64) -> Self {
        let positive_rates: Vec<f64> = truth.days().iter().map(|d| d.positive_rate).collect();
        let day_types = truth.days().iter().map(|d| d.key.day_type).collect();
        Manifest {
            schema: MANIFEST_SCHEMA.into(),
            seed,
            calendar: calendar.clone(),
            generator: truth.config().clone(),
            positive_rates,
            day_types,
        }
    }

    /// Rebuilds calendar and ground truth, restoring overridden rates.
    pub fn rebuild(&self) -> Result<(PromotionCalendar, GroundTruth)> {
        let calendar = build_calendar(&self.calendar)?;
        let mut truth = GroundTruth::new(self.generator.clone(), &calendar)?;
        if self.positive_rates.len() != truth.num_days() {
            return Err(Error::Config(format!(
                "manifest lists {} positive rates for {} days",
                self.positive_rates.len(),
                truth.num_days()
            )));
        }
        for (day, &rate) in self.positive_rates.iter().enumerate() {
            truth.set_positive_rate(day, rate)?;
        }
        Ok((calendar, truth))
    }
}

pub fn events_path(dir: &Path, day: usize) -> PathBuf {
    dir.join(format!("day_{day:04}.events"))
}

pub fn impressions_path(dir: &Path, day: usize) -> PathBuf {
    dir.join(format!("day_{day:04}.impressions"))
}

pub fn format_events(events: &[ClickEvent]) -> String {
    let mut out = String::with_capacity(events.len() * 96 + 128);
    out.push_str(EVENTS_TAG);
    out.push('\n');
    out.push_str(EVENTS_HEADER);
    out.push('\n');
    for e in events {
        let f = &e.features;
        let _ = write!(out, "{},{},{},{}", e.day, e.hour, f.user_group, f.category);
        for v in f.noise {
            let _ = write!(out, ",{v}");
        }
        let _ = write!(out, ",{}", e.converted as u8);
        match e.delay_hours {
            Some(d) => {
                let _ = writeln!(out, ",{d}");
            }
            None => out.push_str(",\n"),
        }
    }
    out
}

fn field<'a, T: std::str::FromStr>(path: &Path, line: usize, name: &str, raw: Option<&'a str>) -> Result<T> {
    let raw = raw.ok_or_else(|| Error::parse(path, line, format!("missing field {name}")))?;
    raw.trim().parse().map_err(|_| Error::parse(path, line, format!("bad {name} '{raw}'")))
}

pub fn parse_events(path: &Path, text: &str) -> Result<Vec<ClickEvent>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, tag)) if tag.trim() == EVENTS_TAG => {}
        _ => return Err(Error::parse(path, 1, format!("expected schema tag '{EVENTS_TAG}'"))),
    }
    match lines.next() {
        Some((_, h)) if h.trim() == EVENTS_HEADER => {}
        _ => return Err(Error::parse(path, 2, "unexpected column header")),
    }
    let mut events = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let day: u32 = field(path, n, "day_index", parts.next())?;
        let hour: u8 = field(path, n, "hour", parts.next())?;
        let user_group: u16 = field(path, n, "user_group", parts.next())?;
        let category: u16 = field(path, n, "category", parts.next())?;
        let mut noise = [0.0; NOISE_DIM];
        for v in noise.iter_mut() {
            *v = field(path, n, "noise", parts.next())?;
        }
        let converted = match parts.next().map(str::trim) {
            Some("1") => true,
            Some("0") => false,
            other => {
                return Err(Error::parse(path, n, format!("bad converted flag {other:?}")));
            }
        };
        let delay_hours = match parts.next().map(str::trim) {
            None | Some("") => None,
            Some(raw) => Some(raw.parse::<f64>().map_err(|_| Error::parse(path, n, format!("bad delay '{raw}'")))?),
        };
        if parts.next().is_some() {
            return Err(Error::parse(path, n, "too many fields"));
        }
        if hour as usize >= HOURS {
            return Err(Error::parse(path, n, format!("hour {hour} out of range")));
        }
        if converted != delay_hours.is_some() {
            return Err(Error::parse(path, n, "delay must be present iff converted"));
        }
        events.push(ClickEvent {
            day,
            hour,
            features: Features { user_group, category, noise },
            converted,
            delay_hours,
        });
    }
    Ok(events)
}

pub fn format_impressions(impressions: &[Vec<u32>]) -> String {
    let mut out = String::new();
    out.push_str(IMPRESSIONS_TAG);
    out.push_str("\nhour,category,count\n");
    for (h, row) in impressions.iter().enumerate() {
        for (c, &n) in row.iter().enumerate() {
            let _ = writeln!(out, "{h},{c},{n}");
        }
    }
    out
}

pub fn parse_impressions(path: &Path, text: &str, num_categories: usize) -> Result<Vec<Vec<u32>>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, tag)) if tag.trim() == IMPRESSIONS_TAG => {}
        _ => return Err(Error::parse(path, 1, format!("expected schema tag '{IMPRESSIONS_TAG}'"))),
    }
    lines.next();
    let mut out = vec![vec![0u32; num_categories]; HOURS];
    for (i, line) in lines {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let h: usize = field(path, n, "hour", parts.next())?;
        let c: usize = field(path, n, "category", parts.next())?;
        let count: u32 = field(path, n, "count", parts.next())?;
        if h >= HOURS || c >= num_categories {
            return Err(Error::parse(path, n, format!("cell ({h}, {c}) out of range")));
        }
        out[h][c] = count;
    }
    Ok(out)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_day(dir: &Path, log: &DayLog) -> Result<()> {
    write_file(&events_path(dir, log.day), &format_events(&log.events))?;
    write_file(&impressions_path(dir, log.day), &format_impressions(&log.impressions))
}

pub fn read_day(dir: &Path, day: usize, num_categories: usize) -> Result<DayLog> {
    let ep = events_path(dir, day);
    let events = parse_events(&ep, &read_file(&ep)?)?;
    if let Some(e) = events.iter().find(|e| e.day as usize != day) {
        return Err(Error::parse(&ep, 0, format!("event of day {} in file of day {day}", e.day)));
    }
    let ip = impressions_path(dir, day);
    let impressions = parse_impressions(&ip, &read_file(&ip)?, num_categories)?;
    Ok(DayLog { day, events, impressions })
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let body = toml::to_string(manifest)?;
    write_file(&dir.join(MANIFEST_FILE), &body)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let manifest: Manifest = toml::from_str(&read_file(&path)?)?;
    if manifest.schema != MANIFEST_SCHEMA {
        return Err(Error::Config(format!(
            "{}: unsupported schema '{}', expected '{MANIFEST_SCHEMA}'",
            path.display(),
            manifest.schema
        )));
    }
    Ok(manifest)
}

/// Writes manifest and every day of `store`.
pub fn write_dataset(dir: &Path, manifest: &Manifest, store: &MemoryStore) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_manifest(dir, manifest)?;
    for day in store.available_days() {
        use crate::store::DayStore;
        write_day(dir, store.day(day)?)?;
    }
    Ok(())
}

/// Loads the manifest and whichever day files are present.
pub fn read_dataset(dir: &Path) -> Result<(Manifest, MemoryStore)> {
    let manifest = read_manifest(dir)?;
    let n_cat = manifest.generator.num_categories;
    let mut store = MemoryStore::default();
    for day in 0..manifest.positive_rates.len() {
        if events_path(dir, day).exists() {
            store.insert(read_day(dir, day, n_cat)?);
        }
    }
    Ok((manifest, store))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::generate_day_log;

    #[test]
    fn events_round_trip_bit_exact() {
        let cal = build_calendar(&CalendarConfig::desk_default()).unwrap();
        let truth = GroundTruth::new(GeneratorConfig::desk_default(), &cal).unwrap();
        let log = generate_day_log(&cal, 36, &truth, 3).unwrap();
        let text = format_events(&log.events);
        let back = parse_events(Path::new("x"), &text).unwrap();
        assert_eq!(back, log.events);
        let imp = format_impressions(&log.impressions);
        assert_eq!(parse_impressions(Path::new("x"), &imp, 12).unwrap(), log.impressions);
    }

    #[test]
    fn rejects_wrong_tag_and_inconsistent_rows() {
        assert!(parse_events(Path::new("x"), "#other\n").is_err());
        let bad = format!("{EVENTS_TAG}\n{EVENTS_HEADER}\n0,3,0,0,0,0,0,0,1,\n");
        assert!(parse_events(Path::new("x"), &bad).is_err());
        let bad_hour = format!("{EVENTS_TAG}\n{EVENTS_HEADER}\n0,24,0,0,0,0,0,0,0,\n");
        assert!(parse_events(Path::new("x"), &bad_hour).is_err());
    }

    #[test]
    fn manifest_restores_overridden_rates() {
        let cfg = CalendarConfig::desk_default();
        let cal = build_calendar(&cfg).unwrap();
        let mut truth = GroundTruth::new(GeneratorConfig::desk_default(), &cal).unwrap();
        truth.set_positive_rate(5, 0.25).unwrap();
        let m = Manifest::new(&cfg, &truth, 11);
        let text = toml::to_string(&m).unwrap();
        assert!(text.starts_with("schema = \"hdr-manifest/1\""));
        let back: Manifest = toml::from_str(&text).unwrap();
        assert_eq!(back, m);
        let (_, t2) = back.rebuild().unwrap();
        assert_eq!(t2.positive_rate(5).unwrap(), 0.25);
    }
}
