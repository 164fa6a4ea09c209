//! Per-day rows, summaries and the on-disk run directory.
//!
//! A run directory holds `manifest.toml`, `daily.csv` and `summary.csv`, plus
//! `timings.csv` when [`write_timings`] is asked for it. Everything except the
//! timings is a pure function of the config and seeds, so reruns are
//! byte-identical.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{Arm, ExperimentConfig, Variant};
use crate::error::{Error, Result};
use crate::synthgen::DayType;

pub const DAILY_CSV: &str = "daily.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const TIMINGS_CSV: &str = "timings.csv";
pub const MANIFEST_TOML: &str = "manifest.toml";
pub const RUN_SCHEMA: &str = "hdr-run/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyRow {
    pub arm: String,
    pub variant: Variant,
    pub seed: u64,
    pub day: usize,
    pub day_type: DayType,
    pub family: Option<u32>,
    /// Before `eval_start_day`; excluded from summaries.
    pub warmup: bool,
    /// Peak day with a retrievable earlier promotion of the same family.
    pub eligible: bool,
    /// `base` or `finetuned`.
    pub served: String,
    pub fallback: String,
    /// Retrieved days by decreasing similarity, `;`-separated.
    pub retrieved: String,
    pub similarity: String,
    pub w_pos: f64,
    pub w_neg: f64,
    pub m_y_pos: Option<f64>,
    pub prior_pos: Option<f64>,
    pub clipped: bool,
    pub n: usize,
    pub positives: usize,
    pub sum_pred: f64,
    pub auc: Option<f64>,
    pub logloss: f64,
    pub pcoc: Option<f64>,
    pub ece: f64,
    pub main_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub arm: String,
    pub seed: u64,
    pub day: usize,
    pub serve_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub seed: u64,
    pub arms: Vec<Arm>,
    pub categories: Vec<u16>,
    pub rows: Vec<DailyRow>,
    pub timings: Vec<TimingRow>,
}

impl ExperimentReport {
    pub fn rows_for<'a>(&'a self, arm: &'a str) -> impl Iterator<Item = &'a DailyRow> + 'a {
        self.rows.iter().filter(move |r| r.arm == arm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    /// Eligible peak days only.
    Promo,
    PromoPeak,
    Ordinary,
    All,
}

impl Scope {
    pub const ALL: [Scope; 4] = [Scope::Promo, Scope::PromoPeak, Scope::Ordinary, Scope::All];

    pub fn contains(self, row: &DailyRow) -> bool {
        match self {
            Scope::Promo => row.eligible,
            Scope::PromoPeak => row.day_type == DayType::PromoPeak,
            Scope::Ordinary => row.day_type == DayType::Ordinary,
            Scope::All => true,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scope::Promo => "promo",
            Scope::PromoPeak => "promo_peak",
            Scope::Ordinary => "ordinary",
            Scope::All => "all",
        }
    }
}

/// Aggregate over a set of days. AUC is the mean of daily AUCs, PCOC pools
/// predictions and positives, log loss and ECE are click-weighted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub arm: String,
    /// Seed, or `mean` for the across-seed average.
    pub seed: String,
    pub scope: Scope,
    pub days: usize,
    pub n: usize,
    pub positives: usize,
    pub auc: Option<f64>,
    pub logloss: f64,
    pub pcoc: Option<f64>,
    pub ece: f64,
}

fn aggregate(arm: &str, seed: String, scope: Scope, rows: &[&DailyRow]) -> SummaryRow {
    let n: usize = rows.iter().map(|r| r.n).sum();
    let positives: usize = rows.iter().map(|r| r.positives).sum();
    let aucs: Vec<f64> = rows.iter().filter_map(|r| r.auc).collect();
    let sum_pred: f64 = rows.iter().map(|r| r.sum_pred).sum();
    let weighted = |f: fn(&DailyRow) -> f64| rows.iter().map(|r| r.n as f64 * f(r)).sum::<f64>() / n as f64;
    SummaryRow {
        arm: arm.to_string(),
        seed,
        scope,
        days: rows.len(),
        n,
        positives,
        auc: (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64),
        logloss: weighted(|r| r.logloss),
        pcoc: (positives > 0).then(|| sum_pred / positives as f64),
        ece: weighted(|r| r.ece),
    }
}

/// Summary per `(seed, arm, scope)` over non-warm-up rows, in
/// first-appearance order; scopes with no days are left out.
pub fn summarize(rows: &[DailyRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(u64, &str)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.seed, r.arm.as_str())) {
            keys.push((r.seed, r.arm.as_str()));
        }
    }
    let mut out = Vec::new();
    for (seed, arm) in keys {
        for scope in Scope::ALL {
            let picked: Vec<&DailyRow> =
                rows.iter().filter(|r| r.seed == seed && r.arm == arm && !r.warmup && scope.contains(r)).collect();
            if !picked.is_empty() {
                out.push(aggregate(arm, seed.to_string(), scope, &picked));
            }
        }
    }
    out
}

/// Unweighted mean over seeds of each per-seed summary metric.
pub fn mean_over_seeds(summary: &[SummaryRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(&str, Scope)> = Vec::new();
    for s in summary.iter().filter(|s| s.seed != "mean") {
        if !keys.contains(&(s.arm.as_str(), s.scope)) {
            keys.push((s.arm.as_str(), s.scope));
        }
    }
    keys.into_iter()
        .map(|(arm, scope)| {
            let group: Vec<&SummaryRow> =
                summary.iter().filter(|s| s.seed != "mean" && s.arm == arm && s.scope == scope).collect();
            let mean_opt = |f: fn(&SummaryRow) -> Option<f64>| {
                let v: Vec<f64> = group.iter().filter_map(|s| f(s)).collect();
                (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
            };
            let mean = |f: fn(&SummaryRow) -> f64| group.iter().map(|s| f(s)).sum::<f64>() / group.len() as f64;
            SummaryRow {
                arm: arm.to_string(),
                seed: "mean".into(),
                scope,
                days: group.iter().map(|s| s.days).sum(),
                n: group.iter().map(|s| s.n).sum(),
                positives: group.iter().map(|s| s.positives).sum(),
                auc: mean_opt(|s| s.auc),
                logloss: mean(|s| s.logloss),
                pcoc: mean_opt(|s| s.pcoc),
                ece: mean(|s| s.ece),
            }
        })
        .collect()
}

/// Fixed-width table of the summary rows for one scope.
pub fn format_table(summary: &[SummaryRow], scope: Scope) -> String {
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<28} {:>6} {:>5} {:>8} {:>8} {:>8} {:>8}",
        "arm", "seed", "days", "auc", "logloss", "pcoc", "ece"
    );
    for s in summary.iter().filter(|s| s.scope == scope) {
        let _ = writeln!(
            out,
            "{:<28} {:>6} {:>5} {:>8} {:>8.4} {:>8} {:>8.5}",
            s.arm,
            s.seed,
            s.days,
            fmt(s.auc),
            s.logloss,
            fmt(s.pcoc),
            s.ece
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub version: String,
    pub seeds: Vec<u64>,
    pub arms: Vec<Arm>,
    pub categories: Vec<u16>,
    pub config: ExperimentConfig,
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::parse(path, e.position().map_or(0, |p| p.line() as usize), e.to_string())
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

pub fn read_daily_csv(path: &Path) -> Result<Vec<DailyRow>> {
    read_csv(path)
}

/// Summary rows for a set of reports: per seed, plus means when there is
/// more than one seed.
pub fn summary_rows(rows: &[DailyRow]) -> Vec<SummaryRow> {
    let mut summary = summarize(rows);
    let seeds: std::collections::BTreeSet<u64> = rows.iter().map(|r| r.seed).collect();
    if seeds.len() > 1 {
        let means = mean_over_seeds(&summary);
        summary.extend(means);
    }
    summary
}

/// Writes the manifest, daily rows and summary of one or more seeds of the
/// same config. Everything written is a function of config and seeds.
pub fn write_report(dir: &Path, config: &ExperimentConfig, reports: &[ExperimentReport]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let first = reports.first().ok_or_else(|| Error::InvalidInput("no reports to write".into()))?;
    let manifest = RunManifest {
        schema: RUN_SCHEMA.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seeds: reports.iter().map(|r| r.seed).collect(),
        arms: first.arms.clone(),
        categories: first.categories.clone(),
        config: config.clone(),
    };
    let path = dir.join(MANIFEST_TOML);
    std::fs::write(&path, toml::to_string(&manifest)?).map_err(|e| Error::io(&path, e))?;
    let rows: Vec<DailyRow> = reports.iter().flat_map(|r| r.rows.iter().cloned()).collect();
    write_csv(&dir.join(DAILY_CSV), &rows)?;
    write_csv(&dir.join(SUMMARY_CSV), &summary_rows(&rows))
}

/// Wall-clock serving times; kept apart from [`write_report`] because they
/// differ between otherwise identical runs.
pub fn write_timings(dir: &Path, reports: &[ExperimentReport]) -> Result<()> {
    let timings: Vec<TimingRow> = reports.iter().flat_map(|r| r.timings.iter().cloned()).collect();
    write_csv(&dir.join(TIMINGS_CSV), &timings)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(arm: &str, seed: u64, day: usize, day_type: DayType, n: usize, pos: usize, sum_pred: f64) -> DailyRow {
        DailyRow {
            arm: arm.into(),
            variant: Variant::Base,
            seed,
            day,
            day_type,
            family: None,
            warmup: false,
            eligible: day_type == DayType::PromoPeak,
            served: "base".into(),
            fallback: String::new(),
            retrieved: String::new(),
            similarity: String::new(),
            w_pos: 1.0,
            w_neg: 1.0,
            m_y_pos: None,
            prior_pos: None,
            clipped: false,
            n,
            positives: pos,
            sum_pred,
            auc: Some(0.5 + day as f64 / 100.0),
            logloss: day as f64,
            pcoc: Some(sum_pred / pos as f64),
            ece: 0.01,
            main_hash: "0".into(),
        }
    }

    #[test]
    fn pooled_and_weighted_aggregates() {
        let rows =
            vec![row("a", 0, 1, DayType::Ordinary, 100, 10, 5.0), row("a", 0, 2, DayType::PromoPeak, 300, 30, 45.0)];
        let s = summarize(&rows);
        let all = s.iter().find(|s| s.scope == Scope::All).unwrap();
        assert_eq!(all.days, 2);
        assert!((all.pcoc.unwrap() - 50.0 / 40.0).abs() < 1e-12);
        assert!((all.logloss - (100.0 + 600.0) / 400.0).abs() < 1e-12);
        assert!((all.auc.unwrap() - 0.515).abs() < 1e-12);
        let promo = s.iter().find(|s| s.scope == Scope::Promo).unwrap();
        assert_eq!(promo.days, 1);
        assert!(!s.iter().any(|s| s.scope == Scope::Ordinary && s.days == 0));
    }

    #[test]
    fn seed_means() {
        let rows =
            vec![row("a", 0, 1, DayType::Ordinary, 100, 10, 5.0), row("a", 1, 1, DayType::Ordinary, 100, 10, 15.0)];
        let summary = summary_rows(&rows);
        let mean = summary.iter().find(|s| s.seed == "mean" && s.scope == Scope::All).unwrap();
        assert!((mean.pcoc.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(mean.days, 2);
    }

    #[test]
    fn daily_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("daily.csv");
        let mut rows = vec![row("hdr", 3, 7, DayType::PromoPeak, 10, 1, 0.1 + 0.2)];
        rows[0].auc = None;
        rows[0].family = Some(1);
        write_csv(&path, &rows).unwrap();
        assert_eq!(read_daily_csv(&path).unwrap(), rows);
    }
}
