use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Subcommand, ValueEnum};
use hdr_core::metrics::{evaluate, DEFAULT_ECE_BUCKETS};
use hdr_core::pipeline::param_hash;
use hdr_core::shiftcorr::{estimate_for_target, Alignment};
use hdr_core::synthgen::observed_label;
use hdr_core::transblock::finetune as finetune_head;
use hdr_core::{
    Checkpoint, CvrModel, DayLog, Example, FinetunedModel, MemoryStore, Predictor, ShiftConfig, ShiftMode, Trainer,
    TransBlock,
};

use crate::data::load_config;
use crate::util::{config_err, emit, load_dataset, select_days, Days};

#[derive(Subcommand)]
pub enum ModelCommand {
    /// Train a fresh model, or continue from `--init`, on dataset days.
    Train(TrainArgs),
    /// Metrics of a checkpoint on dataset days, against final labels.
    Eval(EvalArgs),
    /// Shapes, parameter counts and a parameter hash.
    Inspect {
        #[arg(long)]
        model: PathBuf,
    },
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Defaults to every day in the dataset.
    #[arg(long)]
    days: Option<Days>,
    /// Experiment config for architecture and optimizer settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue training this checkpoint instead of a fresh model.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Label clicks as observed this many hours after the click; final
    /// labels when omitted.
    #[arg(long)]
    label_window: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_parser = parse_weights)]
    weights: Option<(f64, f64)>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    days: Option<Days>,
    /// Score only clicks at or after this hour.
    #[arg(long, default_value_t = 0)]
    from_hour: u8,
    #[arg(long, default_value_t = DEFAULT_ECE_BUCKETS)]
    k: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_weights(s: &str) -> Result<(f64, f64), String> {
    let (p, n) = s.split_once(',').ok_or_else(|| format!("expected W_POS,W_NEG, got '{s}'"))?;
    let num = |v: &str| v.trim().parse::<f64>().map_err(|_| format!("bad weight '{v}'"));
    Ok((num(p)?, num(n)?))
}

fn examples(logs: &[&DayLog], window: Option<f64>) -> Vec<Example> {
    logs.iter()
        .flat_map(|l| &l.events)
        .map(|e| Example { features: e.features, label: window.map_or(e.converted, |w| observed_label(e, w)) })
        .collect()
}

fn load_checkpoint(path: &std::path::Path) -> anyhow::Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn check_shape(model: &CvrModel, store_groups: usize, store_cats: usize) -> anyhow::Result<()> {
    let c = model.config();
    if (c.num_user_groups, c.num_categories) != (store_groups, store_cats) {
        bail!(config_err(format!(
            "model expects {} user groups and {} categories, dataset has {store_groups} and {store_cats}",
            c.num_user_groups, c.num_categories
        )));
    }
    Ok(())
}

pub fn model(c: ModelCommand) -> anyhow::Result<()> {
    match c {
        ModelCommand::Train(a) => train(a),
        ModelCommand::Eval(a) => eval(a),
        ModelCommand::Inspect { model } => {
            let ckpt = load_checkpoint(&model)?;
            let base = ckpt.base();
            let cfg = base.config();
            let mut text = format!(
                "kind = \"{}\"\nuser_groups = {}\ncategories = {}\nembedding_dim = {}\nhidden = {:?}\nhidden_source = \"{}\"\n",
                ckpt.kind(),
                cfg.num_user_groups,
                cfg.num_categories,
                cfg.embedding_dim,
                cfg.hidden,
                cfg.hidden_source.as_str()
            );
            text.push_str(&format!(
                "base_params = {}\nbase_hash = \"{}\"\n",
                base.num_params(),
                param_hash(base.params())
            ));
            if let Checkpoint::Finetuned(ft) = &ckpt {
                text.push_str(&format!(
                    "transblock_hidden = {:?}\ntransblock_params = {}\ntransblock_hash = \"{}\"\n",
                    ft.head.hidden(),
                    ft.head.params().len(),
                    param_hash(ft.head.params())
                ));
            }
            text.push_str("\n[shapes]\n");
            for (name, rows, cols) in base.shapes() {
                text.push_str(&format!("\"{name}\" = [{rows}, {cols}]\n"));
            }
            emit(None, &text)
        }
    }
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let (manifest, store) = load_dataset(&a.data)?;
    let g = &manifest.generator;
    let mut model = match &a.init {
        Some(p) => match load_checkpoint(p)? {
            Checkpoint::Base(m) => m,
            Checkpoint::Finetuned(_) => bail!(config_err("--init must be a base checkpoint")),
        },
        None => {
            let mut mc = cfg.model_config(g);
            mc.init_seed = a.seed;
            CvrModel::new(mc)?
        }
    };
    check_shape(&model, g.num_user_groups, g.num_categories)?;
    let mut tc = cfg.train_config(a.seed);
    tc.batch_size = a.batch_size.unwrap_or(tc.batch_size);
    tc.learning_rate = a.lr.unwrap_or(tc.learning_rate);
    tc.epochs = a.epochs.unwrap_or(tc.epochs);
    tc.importance_weights = a.weights;
    let logs = select_days(&store, a.days.as_ref().map(|d| d.0.as_slice()))?;
    let data = examples(&logs, a.label_window);
    let report = Trainer::new(tc, &model)?.train(&mut model, &data)?;
    Checkpoint::Base(model).save(&a.out)?;
    let losses: Vec<String> = report.epoch_losses.iter().map(|l| format!("{l:.5}")).collect();
    eprintln!("trained on {} examples, {} steps, epoch losses [{}]", data.len(), report.steps, losses.join(", "));
    Ok(())
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let ckpt = load_checkpoint(&a.model)?;
    let (manifest, store) = load_dataset(&a.data)?;
    check_shape(ckpt.base(), manifest.generator.num_user_groups, manifest.generator.num_categories)?;
    let logs = select_days(&store, a.days.as_ref().map(|d| d.0.as_slice()))?;
    let events: Vec<_> = logs.iter().flat_map(|l| l.events_from(a.from_hour)).collect();
    if events.is_empty() {
        bail!(config_err("no clicks to evaluate"));
    }
    let inputs: Vec<_> = events.iter().map(|e| e.features).collect();
    let labels: Vec<bool> = events.iter().map(|e| e.converted).collect();
    let report = evaluate(&ckpt.predict_many(&inputs)?, &labels, a.k)?;
    emit(a.out.as_deref(), &report.to_toml()?)
}

#[derive(Args)]
pub struct FinetuneArgs {
    /// Base checkpoint; the backbone of a fine-tuned checkpoint is reused.
    #[arg(long)]
    base: PathBuf,
    /// Dataset holding the fine-tuning days (labels are final).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    days: Option<Days>,
    #[arg(long, value_parser = parse_weights, default_value = "1,1")]
    weights: (f64, f64),
    #[arg(long, default_value_t = 1e-3)]
    eta1: f64,
    #[arg(long, default_value_t = 1e-5)]
    eta2: f64,
    #[arg(long, default_value_t = 5000)]
    batch_size: usize,
    #[arg(long, default_value_t = 1)]
    epochs: usize,
    /// TransBlock hidden sizes.
    #[arg(long, value_delimiter = ',', default_value = "100")]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

pub fn finetune(a: FinetuneArgs) -> anyhow::Result<()> {
    let base = load_checkpoint(&a.base)?.base().clone();
    let (manifest, store) = load_dataset(&a.data)?;
    check_shape(&base, manifest.generator.num_user_groups, manifest.generator.num_categories)?;
    let logs = select_days(&store, a.days.as_ref().map(|d| d.0.as_slice()))?;
    let data = examples(&logs, None);
    let cfg = hdr_core::FinetuneConfig {
        eta1: a.eta1,
        eta2: a.eta2,
        batch_size: a.batch_size,
        epochs: a.epochs,
        seed: a.seed,
        hidden: a.hidden.clone(),
        ..hdr_core::FinetuneConfig::default()
    };
    cfg.validate()?;
    let head = TransBlock::new(base.hidden_dim(), &a.hidden, a.seed)?;
    let (tuned, head, report) = finetune_head(&base, &head, &data, a.weights, &cfg)?;
    Checkpoint::Finetuned(FinetunedModel::new(tuned, head)?).save(&a.out)?;
    eprintln!("fine-tuned on {} examples in {} steps", data.len(), report.steps);
    Ok(())
}

#[derive(Clone, Copy, ValueEnum)]
pub enum AlignArg {
    HourAligned,
    FullDay,
}

#[derive(Subcommand)]
pub enum ShiftcorrCommand {
    /// Estimate the target label distribution and importance weights.
    Estimate {
        #[arg(long)]
        model: PathBuf,
        /// Dataset with the historical (retrieved) days.
        #[arg(long)]
        history: PathBuf,
        #[arg(long)]
        history_days: Option<Days>,
        /// Dataset with the target day; only clicks before `--hour` are read.
        #[arg(long)]
        target: PathBuf,
        /// Required when the target dataset holds more than one day.
        #[arg(long)]
        target_day: Option<usize>,
        #[arg(long, default_value_t = 10)]
        hour: u8,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value = "soft")]
        mode: ShiftMode,
        #[arg(long, value_enum, default_value = "hour-aligned")]
        alignment: AlignArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn target_log(store: &MemoryStore, day: Option<usize>) -> anyhow::Result<&DayLog> {
    let days: Vec<usize> = store.available_days().collect();
    let day = match (day, days.as_slice()) {
        (Some(d), _) => d,
        (None, [only]) => *only,
        (None, _) => bail!(config_err(format!("target dataset holds {} days, pick one with --target-day", days.len()))),
    };
    Ok(hdr_core::DayStore::day(store, day)?)
}

pub fn shiftcorr(c: ShiftcorrCommand) -> anyhow::Result<()> {
    let ShiftcorrCommand::Estimate {
        model,
        history,
        history_days,
        target,
        target_day,
        hour,
        lambda,
        mode,
        alignment,
        out,
    } = c;
    let ckpt = load_checkpoint(&model)?;
    let (_, hist_store) = load_dataset(&history)?;
    let (_, target_store) = load_dataset(&target)?;
    let hist = select_days(&hist_store, history_days.as_ref().map(|d| d.0.as_slice()))?;
    let target = target_log(&target_store, target_day)?;
    if let Some(h) = hist.iter().find(|h| h.day >= target.day) {
        bail!(config_err(format!("history day {} is not before target day {}", h.day, target.day)));
    }
    let alignment = match alignment {
        AlignArg::HourAligned => Alignment::HourAligned,
        AlignArg::FullDay => Alignment::FullDay,
    };
    let cfg = ShiftConfig { hour, lambda, mode, alignment, ..ShiftConfig::default() };
    let est = estimate_for_target(&ckpt, &hist, target, &cfg)?;
    emit(out.as_deref(), &est.to_toml()?)
}
