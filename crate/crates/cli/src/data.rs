use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Subcommand};
use hdr_core::dayvec::{retrieve_top_k, VectorBuilder, DAYVEC_TAG, DEFAULT_HISTORY_LAG};
use hdr_core::metrics::{evaluate, DEFAULT_ECE_BUCKETS};
use hdr_core::pipeline::resolve_categories;
use hdr_core::synthgen::io::{write_dataset, Manifest};
use hdr_core::synthgen::{build_calendar, generate_day_log, GroundTruth};
use hdr_core::{DayVector, ExperimentConfig, MemoryStore};

use crate::util::{config_err, emit, load_dataset, Days};

#[derive(Args)]
pub struct GenerateArgs {
    /// Experiment config supplying calendar and generator settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Defaults to the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Subset of days to write, e.g. `0-20` or `3,5,7`.
    #[arg(long)]
    pub days: Option<Days>,
    #[arg(long)]
    pub clicks: Option<usize>,
    /// Override a day's true positive rate, `DAY=RATE`; repeatable.
    #[arg(long = "positive-rate", value_parser = parse_rate)]
    pub positive_rates: Vec<(usize, f64)>,
}

fn parse_rate(s: &str) -> Result<(usize, f64), String> {
    let (d, r) = s.split_once('=').ok_or_else(|| format!("expected DAY=RATE, got '{s}'"))?;
    let day = d.trim().parse().map_err(|_| format!("bad day '{d}'"))?;
    let rate = r.trim().parse().map_err(|_| format!("bad rate '{r}'"))?;
    Ok((day, rate))
}

pub fn load_config(path: Option<&Path>) -> anyhow::Result<ExperimentConfig> {
    match path {
        Some(p) => Ok(ExperimentConfig::load(p).with_context(|| format!("loading config {}", p.display()))?),
        None => Ok(ExperimentConfig::default()),
    }
}

pub fn generate(a: GenerateArgs) -> anyhow::Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(n) = a.clicks {
        cfg.generator.clicks_per_day = Some(n);
    }
    let seed = a.seed.unwrap_or(cfg.seed);
    let calendar = build_calendar(&cfg.calendar)?;
    let mut truth = GroundTruth::new(cfg.generator.resolve()?, &calendar)?;
    for &(day, rate) in &a.positive_rates {
        truth.set_positive_rate(day, rate)?;
    }
    let days: Vec<usize> = match a.days {
        Some(d) => d.0,
        None => (0..calendar.num_days()).collect(),
    };
    if let Some(&bad) = days.iter().find(|&&d| d >= calendar.num_days()) {
        bail!(config_err(format!("day {bad} is outside the {}-day calendar", calendar.num_days())));
    }
    let logs = days.iter().map(|&d| generate_day_log(&calendar, d, &truth, seed)).collect::<Result<Vec<_>, _>>()?;
    let clicks: usize = logs.iter().map(|l| l.events.len()).sum();
    let manifest = Manifest::new(&cfg.calendar, &truth, seed);
    write_dataset(&a.out, &manifest, &MemoryStore::from_days(logs))?;
    eprintln!("wrote {} days ({clicks} clicks) to {}", days.len(), a.out.display());
    Ok(())
}

#[derive(Subcommand)]
pub enum DayvecCommand {
    /// Day vector of a day as seen at the hour cutoff. With several days,
    /// `--out` is a directory receiving one `day_NNNN.dayvec` per day.
    Build {
        #[arg(long)]
        logs: PathBuf,
        #[arg(long)]
        day: Days,
        #[arg(long, default_value_t = 10)]
        hour: u8,
        /// Representative categories; selected on a calibration calendar otherwise.
        #[arg(long, value_delimiter = ',')]
        categories: Option<Vec<u16>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ranks the vectors in an index directory against a target vector.
    Retrieve {
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long, default_value_t = 2)]
        k: usize,
        /// Only days at least this far before the target are candidates.
        #[arg(long, default_value_t = DEFAULT_HISTORY_LAG)]
        lag: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn dayvec(c: DayvecCommand) -> anyhow::Result<()> {
    match c {
        DayvecCommand::Build { logs, day, hour, categories, out } => {
            let (manifest, store) = load_dataset(&logs)?;
            let categories = match categories {
                Some(c) => c,
                None => {
                    let mut cfg = ExperimentConfig::default();
                    cfg.generator.custom = Some(manifest.generator.clone());
                    resolve_categories(&cfg)?
                }
            };
            let mut builder = VectorBuilder::new(hour, categories);
            let days = day.0;
            match days.as_slice() {
                [d] => emit(out.as_deref(), &builder.build(&store, *d)?.to_text()),
                _ => {
                    let dir = out.ok_or_else(|| config_err("several days need --out DIR"))?;
                    for &d in &days {
                        emit(Some(&dir.join(format!("day_{d:04}.dayvec"))), &builder.build(&store, d)?.to_text())?;
                    }
                    Ok(())
                }
            }
        }
        DayvecCommand::Retrieve { target, index, k, lag, out } => {
            let target_vec = read_vector(&target)?;
            let mut history = Vec::new();
            let mut paths: Vec<PathBuf> = std::fs::read_dir(&index)
                .with_context(|| format!("listing {}", index.display()))?
                .map(|e| e.map(|e| e.path()))
                .collect::<Result<_, _>>()?;
            paths.sort();
            for p in paths.iter().filter(|p| p.is_file() && **p != target) {
                if !std::fs::read_to_string(p).is_ok_and(|t| t.starts_with(DAYVEC_TAG)) {
                    continue;
                }
                let v = read_vector(p)?;
                if v.categories != target_vec.categories || v.hour != target_vec.hour {
                    bail!(config_err(format!("{} was built with different categories or hour", p.display())));
                }
                if v.day + lag <= target_vec.day {
                    history.push(v);
                }
            }
            if history.is_empty() {
                bail!(config_err(format!("no candidate days at least {lag} before day {}", target_vec.day)));
            }
            let res = retrieve_top_k(&target_vec, &history, k)?;
            let mut text =
                format!("# target day {} ({} candidates)\nrank,day,similarity\n", target_vec.day, history.len());
            for (i, (d, s)) in res.hits.iter().enumerate() {
                text.push_str(&format!("{},{d},{s:.6}\n", i + 1));
            }
            if res.truncated {
                text.push_str(&format!("# only {} candidates for k = {k}\n", history.len()));
            }
            emit(out.as_deref(), &text)
        }
    }
}

fn read_vector(path: &Path) -> anyhow::Result<DayVector> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(DayVector::parse(path, &text)?)
}

#[derive(Subcommand)]
pub enum MetricsCommand {
    /// AUC, log loss, PCOC and ECE of a prediction file against a label file.
    Eval {
        /// One probability per line.
        #[arg(long)]
        preds: PathBuf,
        /// One 0/1 label per line.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ECE_BUCKETS)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-bucket table for plotting.
        #[arg(long)]
        buckets_csv: Option<PathBuf>,
    },
}

/// Non-empty lines that are not `#` comments, parsed one value each.
fn read_column<T>(path: &Path, parse: impl Fn(&str) -> Option<T>) -> anyhow::Result<Vec<T>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .map(|(i, l)| (i, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .map(|(i, l)| parse(l).ok_or_else(|| config_err(format!("{}:{}: bad value '{l}'", path.display(), i + 1))))
        .collect()
}

pub fn metrics(c: MetricsCommand) -> anyhow::Result<()> {
    let MetricsCommand::Eval { preds, labels, k, out, buckets_csv } = c;
    let p = read_column(&preds, |s| s.parse::<f64>().ok())?;
    let y = read_column(&labels, |s| match s {
        "0" | "false" => Some(false),
        "1" | "true" => Some(true),
        _ => None,
    })?;
    if p.len() != y.len() {
        bail!(config_err(format!("{} predictions but {} labels", p.len(), y.len())));
    }
    let report = evaluate(&p, &y, k)?;
    emit(out.as_deref(), &report.to_toml()?)?;
    if let Some(path) = buckets_csv {
        emit(Some(&path), &report.buckets_csv())?;
    }
    Ok(())
}
