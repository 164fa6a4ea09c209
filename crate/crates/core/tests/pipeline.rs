mod common;

use std::collections::BTreeSet;
use std::path::Path;

use common::{all_arms, small_experiment};
use hdr_core::pipeline::{
    read_csv, read_daily_csv, run_grid, summarize, write_report, Runner, Served, SummaryRow, DAILY_CSV, MANIFEST_TOML,
    SUMMARY_CSV,
};
use hdr_core::synthgen::DayType;
use hdr_core::{Arm, DayStore, MemoryStore, Simulation, Variant};

fn file_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    [MANIFEST_TOML, DAILY_CSV, SUMMARY_CSV]
        .iter()
        .map(|name| (name.to_string(), std::fs::read(dir.join(name)).unwrap()))
        .collect()
}

#[test]
fn same_seed_gives_identical_files() {
    let cfg = small_experiment();
    let arms = all_arms();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for dir in &dirs {
        let report = Simulation::generate(&cfg, 21).unwrap().run(&arms).unwrap();
        write_report(dir.path(), &cfg, &[report]).unwrap();
    }
    assert_eq!(file_bytes(dirs[0].path()), file_bytes(dirs[1].path()));
}

#[test]
fn different_seeds_differ() {
    let cfg = small_experiment();
    let arms = [Arm::of(Variant::Base)];
    let a = Simulation::generate(&cfg, 1).unwrap().run(&arms).unwrap();
    let b = Simulation::generate(&cfg, 2).unwrap().run(&arms).unwrap();
    assert_ne!(a.rows.last().unwrap().main_hash, b.rows.last().unwrap().main_hash);
}

#[test]
fn grid_results_do_not_depend_on_thread_count() {
    let cfg = small_experiment();
    let arms = [Arm::of(Variant::Base), Arm::of(Variant::Hdr)];
    let serial = run_grid(&cfg, &[4, 5, 6], &arms, 1).unwrap();
    let parallel = run_grid(&cfg, &[4, 5, 6], &arms, 3).unwrap();
    assert_eq!(serial.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![4, 5, 6]);
    for (a, b) in serial.iter().zip(&parallel) {
        assert_eq!(a.rows, b.rows);
    }
}

/// Copy of the store where everything a server at `hour` of `day` must not
/// see is altered: every label of `day`, its clicks and impressions from
/// `hour` on, and all later days.
fn poison(store: &MemoryStore, day: usize, hour: u8, num_days: usize) -> MemoryStore {
    let mut out = store.clone();
    let flip = |e: &mut hdr_core::ClickEvent| {
        e.converted = !e.converted;
        e.delay_hours = e.converted.then_some(0.5);
    };
    for d in day + 1..num_days {
        let log = out.day_mut(d).unwrap();
        for e in log.events.iter_mut() {
            flip(e);
            e.features.category = (e.features.category + 1) % 12;
        }
        log.impressions.iter_mut().flatten().for_each(|c| *c = *c * 3 + 11);
    }
    let log = out.day_mut(day).unwrap();
    for e in log.events.iter_mut() {
        flip(e);
        if e.hour >= hour {
            e.features.user_group = (e.features.user_group + 3) % 8;
            e.features.noise.iter_mut().for_each(|v| *v = -*v * 2.0);
        }
    }
    for row in log.impressions.iter_mut().skip(hour as usize) {
        row.iter_mut().for_each(|c| *c = *c * 5 + 7);
    }
    out
}

fn serve_through(sim: &Simulation, arms: &[Arm], day: usize) -> Vec<Served> {
    let mut runner = Runner::new(sim, arms).unwrap();
    for d in 0..day {
        runner.advance(d).unwrap();
    }
    runner.serve_day(day).unwrap()
}

#[test]
fn poisoned_future_never_changes_a_served_model() {
    let cfg = small_experiment();
    let arms = all_arms();
    let sim = Simulation::generate(&cfg, 8).unwrap();
    let hour = cfg.retrieval.hour;
    // A peak day with a retrievable earlier promotion, and an ordinary day.
    let days = [31, 22];
    assert!(sim.is_eligible_promo_day(days[0]));
    assert_eq!(sim.calendar.day_type(days[1]), DayType::Ordinary);
    for day in days {
        let store = poison(&sim.store, day, hour, sim.num_days());
        assert_ne!(store.day(day).unwrap(), sim.store.day(day).unwrap());
        let bad = Simulation::from_parts(
            &cfg,
            sim.seed,
            sim.calendar.clone(),
            sim.truth.clone(),
            store,
            sim.categories.clone(),
        )
        .unwrap();
        let clean = serve_through(&sim, &arms, day);
        let dirty = serve_through(&bad, &arms, day);
        for (c, d) in clean.iter().zip(&dirty) {
            assert_eq!(c.model, d.model, "{} on day {day}", arms[c.arm].label);
            assert_eq!(c.weights, d.weights);
            assert_eq!(c.retrieval, d.retrieval);
            assert_eq!(c.fallback, d.fallback);
        }
        if day == days[0] {
            assert!(clean.iter().any(|s| s.model.kind() == "finetuned"));
        }
    }
}

#[test]
fn adapting_arms_never_touch_the_main_model() {
    let cfg = small_experiment();
    let sim = Simulation::generate(&cfg, 13).unwrap();
    let base_only = sim.run(&[Arm::of(Variant::Base)]).unwrap();
    let adapting = sim
        .run(&[Arm::of(Variant::Hdr), Arm::of(Variant::BaseDirectRetrain), Arm::of(Variant::HdrNoTransblock)])
        .unwrap();
    let base_hashes: Vec<&str> = base_only.rows.iter().map(|r| r.main_hash.as_str()).collect();
    for arm in &adapting.arms {
        let hashes: Vec<&str> = adapting.rows_for(&arm.label).map(|r| r.main_hash.as_str()).collect();
        assert_eq!(hashes, base_hashes, "{}", arm.label);
    }
    // Same predictions as base on days where nothing was adapted.
    let untouched = adapting.rows.iter().filter(|r| r.retrieved.is_empty() && r.fallback.is_empty());
    assert!(untouched.clone().count() > adapting.rows.len() / 2);
    for r in untouched {
        let b = &base_only.rows[r.day];
        assert_eq!((r.sum_pred, r.logloss), (b.sum_pred, b.logloss), "{} day {}", r.arm, r.day);
    }
}

#[test]
fn report_is_complete_and_consistent() {
    let cfg = small_experiment();
    let arms = all_arms();
    let report = Simulation::generate(&cfg, 17).unwrap().run(&arms).unwrap();
    let days = cfg.calendar.num_days;
    assert_eq!(report.rows.len(), arms.len() * days);
    let keys: BTreeSet<(String, usize)> = report.rows.iter().map(|r| (r.arm.clone(), r.day)).collect();
    assert_eq!(keys.len(), report.rows.len());
    for r in &report.rows {
        assert_eq!(r.warmup, r.day < cfg.schedule.eval_start_day);
        assert!(r.n > 0 && r.positives <= r.n);
        if let (Some(p), true) = (r.pcoc, r.positives > 0) {
            assert!((p - r.sum_pred / r.positives as f64).abs() < 1e-9);
        }
        let adapting = r.variant != Variant::Base && r.variant != Variant::BaseNoDfm;
        if !adapting || r.day_type != DayType::PromoPeak {
            assert_eq!(r.served, "base");
            assert!(r.retrieved.is_empty());
        }
        if r.variant == Variant::HdrNoDsc {
            assert_eq!((r.w_pos, r.w_neg), (1.0, 1.0));
        }
    }

    let dir = tempfile::tempdir().unwrap();
    write_report(dir.path(), &cfg, std::slice::from_ref(&report)).unwrap();
    let rows = read_daily_csv(&dir.path().join(DAILY_CSV)).unwrap();
    assert_eq!(rows.len(), report.rows.len());
    for (a, b) in rows.iter().zip(&report.rows) {
        assert_eq!((a.arm.as_str(), a.day, a.n, a.positives), (b.arm.as_str(), b.day, b.n, b.positives));
        assert!((a.sum_pred - b.sum_pred).abs() <= 1e-12 * b.sum_pred.abs().max(1.0));
    }
    let written: Vec<SummaryRow> = read_csv(&dir.path().join(SUMMARY_CSV)).unwrap();
    let recomputed = summarize(&rows);
    assert_eq!(written.len(), recomputed.len());
    for (w, r) in written.iter().zip(&recomputed) {
        assert_eq!((w.arm.as_str(), w.scope, w.days, w.n), (r.arm.as_str(), r.scope, r.days, r.n));
        let close = |x: Option<f64>, y: Option<f64>| match (x, y) {
            (Some(x), Some(y)) => (x - y).abs() < 1e-12,
            (None, None) => true,
            _ => false,
        };
        assert!(close(w.auc, r.auc) && close(w.pcoc, r.pcoc));
    }
}

#[test]
fn shift_weights_are_recorded_on_adapted_days() {
    let cfg = small_experiment();
    let report = Simulation::generate(&cfg, 3).unwrap().run(&[Arm::of(Variant::Hdr)]).unwrap();
    let adapted: Vec<_> = report.rows.iter().filter(|r| r.served == "finetuned").collect();
    assert!(!adapted.is_empty());
    for r in adapted {
        assert_eq!(r.day_type, DayType::PromoPeak);
        let (m, prior) = (r.m_y_pos.unwrap(), r.prior_pos.unwrap());
        assert!((r.w_pos * prior - m).abs() < 1e-9);
        assert!(r.retrieved.split(';').count() == cfg.retrieval.k);
    }
}
