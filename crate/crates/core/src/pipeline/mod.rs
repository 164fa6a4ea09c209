//! Daily simulation: main-model updates, retrieval, shift correction,
//! fine-tuning, serving and evaluation for every variant.
//!
//! Each simulated day `T` runs in this order:
//!
//! 1. every main-model trajectory trains one pass over its label-lagged day
//!    (`T-1` with 24h observed labels, or `T-3` with 72h labels for
//!    `base_no_dfm`);
//! 2. each arm builds the model it serves for hours `>= h` of `T`, reading
//!    only the store up to `T-1` and the unlabeled traffic of `T` before `h`;
//! 3. the served models are scored on day `T`, hours `>= h`, against final
//!    labels.
//!
//! Arms never write back into a trajectory, so every variant on the same
//! trajectory sees bit-identical main-model parameters.

mod config;
mod report;

use std::collections::BTreeSet;
use std::time::Instant;

pub use config::{
    Arm, ExperimentConfig, FinetuneSection, GeneratorSection, GridConfig, ModelSection, RetrievalSection,
    ScheduleSection, ShiftSection, TrainSection, Variant, CONFIG_SCHEMA, GRID_SCHEMA,
};
pub use report::{
    format_table, mean_over_seeds, read_csv, read_daily_csv, summarize, summary_rows, write_csv, write_report,
    write_timings, DailyRow, ExperimentReport, RunManifest, Scope, SummaryRow, TimingRow, DAILY_CSV, MANIFEST_TOML,
    SUMMARY_CSV, TIMINGS_CSV,
};

use crate::checkpoint::Checkpoint;
use crate::cvrmodel::{CvrModel, Example, TrainConfig, Trainer};
use crate::dayvec::{select_categories, RetrievalResult, VectorBuilder};
use crate::error::{Error, Result};
use crate::metrics;
use crate::nn::OptimizerKind;
use crate::shiftcorr::{estimate_for_target, ShiftEstimate};
use crate::store::{DayLog, DayStore, MemoryStore};
use crate::synthgen::{
    build_calendar, generate_impression_store, generate_store, observed_label, CalendarConfig, GroundTruth,
    PromotionCalendar,
};
use crate::transblock::{finetune, FinetuneConfig, FinetunedModel, Predictor, TransBlock};

/// SplitMix64 finalizer; derives independent sub-seeds from one seed.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_MODEL_INIT: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_FINETUNE: u64 = 1 << 20;

/// FNV-1a over the bit patterns of `params`, as 16 hex digits.
pub fn param_hash(params: &[f64]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in params {
        for b in p.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}

/// Picks the day-vector categories, either from the config or on a
/// calibration calendar generated with the same generator settings.
pub fn resolve_categories(config: &ExperimentConfig) -> Result<Vec<u16>> {
    if let Some(c) = &config.retrieval.categories {
        let mut c = c.clone();
        c.sort_unstable();
        c.dedup();
        return Ok(c);
    }
    let generator = config.generator.resolve()?;
    let calendar = build_calendar(&CalendarConfig::calibration_default())?;
    let truth = GroundTruth::new(generator, &calendar)?;
    let store = generate_impression_store(&calendar, &truth, config.retrieval.calibration_seed)?;
    select_categories(&store, &calendar, config.retrieval.num_categories)
}

/// Generated world for one seed plus the experiment settings.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub calendar: PromotionCalendar,
    pub truth: GroundTruth,
    pub store: MemoryStore,
    pub categories: Vec<u16>,
}

impl Simulation {
    pub fn generate(config: &ExperimentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let calendar = build_calendar(&config.calendar)?;
        let truth = GroundTruth::new(config.generator.resolve()?, &calendar)?;
        let store = generate_store(&calendar, &truth, seed)?;
        let categories = resolve_categories(config)?;
        Ok(Simulation { config: config.clone(), seed, calendar, truth, store, categories })
    }

    /// Simulation over an existing store (for example one read from disk).
    pub fn from_parts(
        config: &ExperimentConfig,
        seed: u64,
        calendar: PromotionCalendar,
        truth: GroundTruth,
        store: MemoryStore,
        categories: Vec<u16>,
    ) -> Result<Self> {
        config.validate()?;
        if store.num_days() < calendar.num_days() {
            return Err(Error::Config(format!(
                "store holds {} days, calendar needs {}",
                store.num_days(),
                calendar.num_days()
            )));
        }
        Ok(Simulation { config: config.clone(), seed, calendar, truth, store, categories })
    }

    pub fn num_days(&self) -> usize {
        self.calendar.num_days()
    }

    /// Whether `day` counts toward the promotion summary: a peak day whose
    /// family already ran a promotion that can be retrieved.
    pub fn is_eligible_promo_day(&self, day: usize) -> bool {
        self.calendar.day_type(day) == crate::synthgen::DayType::PromoPeak
            && self.calendar.has_family_history(day, self.config.retrieval.history_lag)
    }

    /// Runs and scores every day. Rows before `eval_start_day` are marked
    /// as warm-up and left out of summaries.
    pub fn run(&self, arms: &[Arm]) -> Result<ExperimentReport> {
        let mut runner = Runner::new(self, arms)?;
        let mut report = ExperimentReport {
            seed: self.seed,
            arms: arms.to_vec(),
            categories: self.categories.clone(),
            rows: Vec::new(),
            timings: Vec::new(),
        };
        for day in 0..self.num_days() {
            let served = runner.serve_day(day)?;
            let target = self.store.day(day)?;
            let eval = target.events_from(self.config.retrieval.hour);
            let features: Vec<_> = eval.iter().map(|e| e.features).collect();
            let labels: Vec<bool> = eval.iter().map(|e| e.converted).collect();
            for s in served {
                let preds = s.model.predict_many(&features)?;
                report.rows.push(self.daily_row(&arms[s.arm], day, &s, &preds, &labels)?);
                report.timings.push(TimingRow {
                    arm: arms[s.arm].label.clone(),
                    seed: self.seed,
                    day,
                    serve_seconds: s.seconds,
                });
            }
        }
        Ok(report)
    }

    fn daily_row(&self, arm: &Arm, day: usize, s: &Served, preds: &[f64], labels: &[bool]) -> Result<DailyRow> {
        let m = day_metrics(preds, labels, self.config.schedule.ece_buckets)?;
        let (retrieved, similarity) = match &s.retrieval {
            Some(r) => (
                r.hits.iter().map(|h| h.0.to_string()).collect::<Vec<_>>().join(";"),
                r.hits.iter().map(|h| h.1.to_string()).collect::<Vec<_>>().join(";"),
            ),
            None => (String::new(), String::new()),
        };
        Ok(DailyRow {
            arm: arm.label.clone(),
            variant: arm.variant,
            seed: self.seed,
            day,
            day_type: self.calendar.day_type(day),
            family: self.calendar.family(day),
            warmup: day < self.config.schedule.eval_start_day,
            eligible: self.is_eligible_promo_day(day),
            served: s.model.kind().to_string(),
            fallback: s.fallback.clone().unwrap_or_default(),
            retrieved,
            similarity,
            w_pos: s.weights.0,
            w_neg: s.weights.1,
            m_y_pos: s.shift.as_ref().map(|e| e.m_y[0]),
            prior_pos: s.shift.as_ref().map(|e| e.m_y_prior[0]),
            clipped: s.shift.as_ref().is_some_and(|e| e.clipped),
            n: m.n,
            positives: m.positives,
            sum_pred: m.sum_pred,
            auc: m.auc,
            logloss: m.logloss,
            pcoc: m.pcoc,
            ece: m.ece,
            main_hash: s.main_hash.clone(),
        })
    }
}

/// Per-day metrics that tolerate one-class days (AUC and PCOC are `None`).
#[derive(Debug, Clone, PartialEq)]
pub struct DayMetrics {
    pub n: usize,
    pub positives: usize,
    pub sum_pred: f64,
    pub auc: Option<f64>,
    pub logloss: f64,
    pub pcoc: Option<f64>,
    pub ece: f64,
}

pub fn day_metrics(preds: &[f64], labels: &[bool], ece_buckets: usize) -> Result<DayMetrics> {
    let positives = labels.iter().filter(|&&y| y).count();
    let sum_pred: f64 = preds.iter().sum();
    Ok(DayMetrics {
        n: preds.len(),
        positives,
        sum_pred,
        auc: if positives > 0 && positives < labels.len() { Some(metrics::auc(preds, labels)?) } else { None },
        logloss: metrics::logloss(preds, labels)?,
        pcoc: if positives > 0 { Some(sum_pred / positives as f64) } else { None },
        ece: metrics::ece(preds, labels, ece_buckets.min(preds.len()).max(1))?,
    })
}

/// What one arm serves on one day.
#[derive(Debug, Clone)]
pub struct Served {
    /// Index into the arm list.
    pub arm: usize,
    pub model: Checkpoint,
    pub retrieval: Option<RetrievalResult>,
    pub shift: Option<ShiftEstimate>,
    pub weights: (f64, f64),
    /// Why the arm fell back to the main model, when it did.
    pub fallback: Option<String>,
    pub main_hash: String,
    pub seconds: f64,
}

struct Trajectory {
    window_hours: f64,
    lag_days: usize,
    model: CvrModel,
    trainer: Trainer,
}

impl Trajectory {
    fn update(&mut self, store: &MemoryStore, day: usize) -> Result<()> {
        let Some(source) = day.checked_sub(self.lag_days) else {
            return Ok(());
        };
        let log = store.day(source)?;
        if log.events.is_empty() {
            return Ok(());
        }
        let data: Vec<Example> = log
            .events
            .iter()
            .map(|e| Example { features: e.features, label: observed_label(e, self.window_hours) })
            .collect();
        self.trainer.train(&mut self.model, &data)?;
        Ok(())
    }
}

/// Retrieval outputs shared by every adapting arm of one trajectory.
struct DayPrep {
    retrieval: RetrievalResult,
    data: Vec<Example>,
    shift: std::result::Result<ShiftEstimate, String>,
}

/// Day-by-day driver; days must be visited in order.
pub struct Runner<'a> {
    sim: &'a Simulation,
    arms: Vec<Arm>,
    finetune: Vec<FinetuneConfig>,
    /// `[delayed-feedback trajectory, fully attributed trajectory]`.
    trajectories: [Option<Trajectory>; 2],
    builder: VectorBuilder,
    carry: Vec<Option<TransBlock>>,
    next_day: usize,
}

impl<'a> Runner<'a> {
    pub fn new(sim: &'a Simulation, arms: &[Arm]) -> Result<Self> {
        if arms.is_empty() {
            return Err(Error::Config("no variants to run".into()));
        }
        let cfg = &sim.config;
        let mut finetune = Vec::with_capacity(arms.len());
        for arm in arms {
            let mut f = cfg.finetune_config(0);
            if let Some(e) = arm.eta2 {
                f.eta2 = e;
            }
            if let Some(e) = arm.epochs {
                f.epochs = e;
            }
            f.validate()?;
            finetune.push(f);
        }
        let labels: BTreeSet<bool> = arms.iter().map(|a| a.variant == Variant::BaseNoDfm).collect();
        let generator = sim.truth.config();
        let model_cfg = crate::cvrmodel::ModelConfig {
            init_seed: mix_seed(sim.seed, STREAM_MODEL_INIT),
            ..cfg.model_config(generator)
        };
        let init = CvrModel::new(model_cfg)?;
        let make = |window: f64| -> Result<Trajectory> {
            let train = cfg.train_config(mix_seed(sim.seed, STREAM_TRAIN));
            Ok(Trajectory {
                window_hours: window,
                lag_days: (window / 24.0).ceil() as usize,
                trainer: Trainer::new(train, &init)?,
                model: init.clone(),
            })
        };
        let trajectories = [
            if labels.contains(&false) { Some(make(cfg.schedule.waiting_window_hours)?) } else { None },
            if labels.contains(&true) { Some(make(cfg.schedule.no_dfm_window_hours)?) } else { None },
        ];
        Ok(Runner {
            sim,
            arms: arms.to_vec(),
            finetune,
            trajectories,
            builder: VectorBuilder::new(cfg.retrieval.hour, sim.categories.clone()),
            carry: vec![None; arms.len()],
            next_day: 0,
        })
    }

    /// Main model of the delayed-feedback trajectory (or the other one when
    /// only `base_no_dfm` runs).
    pub fn main_model(&self) -> &CvrModel {
        let t = self.trajectories[0].as_ref().or(self.trajectories[1].as_ref());
        &t.expect("at least one trajectory").model
    }

    /// Trains the trajectories for the start of `day` without serving.
    pub fn advance(&mut self, day: usize) -> Result<()> {
        if day != self.next_day {
            return Err(Error::InvalidInput(format!("expected day {}, got {day}", self.next_day)));
        }
        for t in self.trajectories.iter_mut().flatten() {
            t.update(&self.sim.store, day)?;
        }
        self.next_day += 1;
        Ok(())
    }

    /// Advances to `day` and builds each arm's served model.
    pub fn serve_day(&mut self, day: usize) -> Result<Vec<Served>> {
        self.advance(day)?;
        let sim = self.sim;
        let cfg = &sim.config;
        let adapt_today = cfg.schedule.adapt_day_types.contains(&sim.calendar.day_type(day));
        let mut prep: Option<std::result::Result<DayPrep, String>> = None;
        let mut out = Vec::with_capacity(self.arms.len());
        for i in 0..self.arms.len() {
            let started = Instant::now();
            let arm = self.arms[i].clone();
            let traj_index = usize::from(arm.variant == Variant::BaseNoDfm);
            let main = self.trajectories[traj_index].as_ref().expect("trajectory exists for arm").model.clone();
            let main_hash = param_hash(main.params());
            let mut served = Served {
                arm: i,
                model: Checkpoint::Base(main.clone()),
                retrieval: None,
                shift: None,
                weights: (1.0, 1.0),
                fallback: None,
                main_hash,
                seconds: 0.0,
            };
            if arm.variant.uses_retrieval() && adapt_today {
                if prep.is_none() {
                    prep = Some(self.prepare(day, &main));
                }
                match prep.as_ref().expect("prepared above") {
                    Err(reason) => served.fallback = Some(reason.clone()),
                    Ok(p) => self.adapt(i, day, p, &mut served)?,
                }
            }
            served.seconds = started.elapsed().as_secs_f64();
            out.push(served);
        }
        Ok(out)
    }

    fn prepare(&mut self, day: usize, main: &CvrModel) -> std::result::Result<DayPrep, String> {
        let sim = self.sim;
        let r = &sim.config.retrieval;
        let retrieval =
            self.builder.retrieve(&sim.store, day, r.k, r.history_lag).map_err(|e| format!("retrieval: {e}"))?;
        let logs: Vec<&DayLog> = retrieval
            .days_chronological()
            .into_iter()
            .map(|d| sim.store.day(d))
            .collect::<Result<_>>()
            .map_err(|e| format!("retrieval: {e}"))?;
        let data: Vec<Example> = logs
            .iter()
            .flat_map(|l| l.events.iter())
            .map(|e| Example { features: e.features, label: e.converted })
            .collect();
        if data.is_empty() {
            return Err("retrieved days hold no clicks".into());
        }
        let target = sim.store.day(day).map_err(|e| e.to_string())?;
        let shift =
            estimate_for_target(main, &logs, target, &sim.config.shift_config()).map_err(|e| format!("shift: {e}"));
        Ok(DayPrep { retrieval, data, shift })
    }

    fn adapt(&mut self, i: usize, day: usize, prep: &DayPrep, served: &mut Served) -> Result<()> {
        let sim = self.sim;
        let variant = self.arms[i].variant;
        let ft = FinetuneConfig { seed: mix_seed(sim.seed, STREAM_FINETUNE + day as u64), ..self.finetune[i].clone() };
        served.retrieval = Some(prep.retrieval.clone());
        if variant.uses_shift_correction() {
            match &prep.shift {
                Ok(est) => {
                    served.weights = est.weights();
                    served.shift = Some(est.clone());
                }
                Err(reason) => {
                    served.fallback = Some(reason.clone());
                    return Ok(());
                }
            }
        }
        let main = served.model.base().clone();
        if variant.uses_transblock() {
            let head = match (&self.carry[i], sim.config.schedule.transblock_carry_over) {
                (Some(prev), true) => prev.clone(),
                _ => TransBlock::new(main.hidden_dim(), &ft.hidden, ft.seed)?,
            };
            let (tuned, head, _) = finetune(&main, &head, &prep.data, served.weights, &ft)?;
            self.carry[i] = Some(head.clone());
            served.model = Checkpoint::Finetuned(FinetunedModel::new(tuned, head)?);
        } else {
            let train = TrainConfig {
                learning_rate: ft.eta1,
                batch_size: ft.batch_size,
                epochs: ft.epochs,
                importance_weights: Some(served.weights),
                seed: ft.seed,
                optimizer: OptimizerKind::Adam,
            };
            let mut tuned = main;
            Trainer::new(train, &tuned)?.train(&mut tuned, &prep.data)?;
            served.model = Checkpoint::Base(tuned);
        }
        Ok(())
    }
}

/// Runs one simulation per seed, spread over up to `threads` worker
/// threads. Reports come back in seed order and do not depend on `threads`.
pub fn run_grid(
    config: &ExperimentConfig,
    seeds: &[u64],
    arms: &[Arm],
    threads: usize,
) -> Result<Vec<ExperimentReport>> {
    config.validate()?;
    let threads = threads.clamp(1, seeds.len().max(1));
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<Result<ExperimentReport>>> = (0..seeds.len()).map(|_| None).collect();
    let results = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                let Some(&seed) = seeds.get(i) else { break };
                let out = Simulation::generate(config, seed).and_then(|sim| sim.run(arms));
                results.lock().expect("worker panicked")[i] = Some(out);
            });
        }
    });
    slots.into_iter().map(|r| r.expect("every seed ran")).collect()
}

/// Worker count for [`run_grid`]: the available cores.
pub fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}
