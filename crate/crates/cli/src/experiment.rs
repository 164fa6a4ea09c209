use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use hdr_core::pipeline::{
    default_threads, format_table, read_daily_csv, run_grid, summary_rows, write_report, write_timings, GridConfig,
    Scope, SummaryRow, DAILY_CSV,
};
use hdr_core::{Arm, ExperimentConfig, Simulation, Variant};

use crate::data::load_config;
use crate::util::{config_err, emit};

#[derive(Args)]
pub struct RunArgs {
    /// Experiment config (schema `hdr-experiment/1`); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Variant to run; repeatable. Defaults to the config's `variants`.
    #[arg(long)]
    variant: Vec<Variant>,
    /// Extra `hdr` arm with this main-model learning rate; repeatable.
    #[arg(long)]
    eta2: Vec<f64>,
    /// Defaults to the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Defaults to the config's `output_dir`, then `runs/<name>-seed<N>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write wall-clock serving times to `timings.csv`.
    #[arg(long)]
    timings: bool,
}

#[derive(Args)]
pub struct AblateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Grid file (schema `hdr-grid/1`) with seeds, variants and eta2 values.
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    timings: bool,
}

#[derive(Args)]
pub struct ReportArgs {
    #[arg(long)]
    dir: PathBuf,
    /// Scopes to print; repeatable. Defaults to `promo` and `all`.
    #[arg(long, value_parser = parse_scope)]
    scope: Vec<Scope>,
}

fn parse_scope(s: &str) -> Result<Scope, String> {
    Scope::ALL.into_iter().find(|sc| sc.as_str() == s).ok_or_else(|| {
        let names: Vec<_> = Scope::ALL.iter().map(|s| s.as_str()).collect();
        format!("unknown scope '{s}', expected one of {}", names.join(", "))
    })
}

fn output_dir(cfg: &ExperimentConfig, out: Option<PathBuf>, suffix: &str) -> PathBuf {
    out.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| Path::new("runs").join(format!("{}-{suffix}", cfg.name)))
}

fn print_tables(summary: &[SummaryRow], scopes: &[Scope]) -> anyhow::Result<()> {
    let text: String =
        scopes.iter().map(|&scope| format!("[{}]\n{}\n", scope.as_str(), format_table(summary, scope))).collect();
    emit(None, &text)
}

pub fn run(a: RunArgs) -> anyhow::Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let seed = a.seed.unwrap_or(cfg.seed);
    let variants = if a.variant.is_empty() { cfg.variants.clone() } else { a.variant };
    let mut arms: Vec<Arm> = variants.into_iter().map(Arm::of).collect();
    arms.extend(a.eta2.iter().map(|&e| Arm::with_eta2(Variant::Hdr, e)));
    if arms.is_empty() {
        return Err(config_err("no variants to run"));
    }
    let dir = output_dir(&cfg, a.out, &format!("seed{seed}"));
    let report = Simulation::generate(&cfg, seed)?.run(&arms)?;
    let reports = [report];
    write_report(&dir, &cfg, &reports)?;
    if a.timings {
        write_timings(&dir, &reports)?;
    }
    print_tables(&summary_rows(&reports[0].rows), &[Scope::Promo, Scope::All])?;
    eprintln!("wrote {}", dir.display());
    Ok(())
}

pub fn ablate(a: AblateArgs) -> anyhow::Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let grid = GridConfig::load(&a.grid).with_context(|| format!("loading grid {}", a.grid.display()))?;
    let dir = output_dir(&cfg, a.out, "grid");
    let threads = a.threads.unwrap_or_else(default_threads);
    let reports = run_grid(&cfg, &grid.seeds, &grid.arms(), threads)?;
    write_report(&dir, &cfg, &reports)?;
    if a.timings {
        write_timings(&dir, &reports)?;
    }
    let rows: Vec<_> = reports.iter().flat_map(|r| r.rows.iter().cloned()).collect();
    let mut summary = summary_rows(&rows);
    if grid.seeds.len() > 1 {
        summary.retain(|s| s.seed == "mean");
    }
    print_tables(&summary, &[Scope::Promo, Scope::All])?;
    eprintln!("wrote {}", dir.display());
    Ok(())
}

pub fn report(a: ReportArgs) -> anyhow::Result<()> {
    let path = a.dir.join(DAILY_CSV);
    let rows = read_daily_csv(&path).with_context(|| format!("reading {}", path.display()))?;
    let scopes = if a.scope.is_empty() { vec![Scope::Promo, Scope::All] } else { a.scope };
    print_tables(&summary_rows(&rows), &scopes)
}
