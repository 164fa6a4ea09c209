use std::path::Path;

use anyhow::{bail, Context};
use hdr_core::synthgen::io::{read_dataset, Manifest};
use hdr_core::{DayLog, DayStore, Error, MemoryStore};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

/// Marks an error raised by the CLI itself as a configuration problem.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<ConfigError>() {
            return EXIT_CONFIG;
        }
        if let Some(core) = cause.downcast_ref::<Error>() {
            return if core.is_config() { EXIT_CONFIG } else { EXIT_RUNTIME };
        }
    }
    EXIT_RUNTIME
}

/// Parses day selections such as `12`, `3-7` or `3,5,9-11`.
pub fn parse_days(spec: &str) -> Result<Vec<usize>, String> {
    let mut days = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let num = |s: &str| s.trim().parse::<usize>().map_err(|_| format!("bad day '{s}' in '{spec}'"));
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b) = (num(a)?, num(b)?);
                if a > b {
                    return Err(format!("empty day range '{part}'"));
                }
                days.extend(a..=b);
            }
            None => days.push(num(part)?),
        }
    }
    if days.is_empty() {
        return Err(format!("no days in '{spec}'"));
    }
    days.sort_unstable();
    days.dedup();
    Ok(days)
}

/// Day selection argument; see [`parse_days`].
#[derive(Debug, Clone, PartialEq)]
pub struct Days(pub Vec<usize>);

impl std::str::FromStr for Days {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        parse_days(s).map(Days)
    }
}

pub fn load_dataset(dir: &Path) -> anyhow::Result<(Manifest, MemoryStore)> {
    read_dataset(dir).with_context(|| format!("reading dataset {}", dir.display()))
}

/// The requested days, or every day present in the store.
pub fn select_days<'a>(store: &'a MemoryStore, days: Option<&[usize]>) -> anyhow::Result<Vec<&'a DayLog>> {
    let days: Vec<usize> = match days {
        Some(d) => d.to_vec(),
        None => store.available_days().collect(),
    };
    if days.is_empty() {
        bail!(config_err("dataset holds no days"));
    }
    days.iter().map(|&d| Ok(store.day(d)?)).collect()
}

/// Writes `text` to `out`, or prints it when no path is given.
pub fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
            }
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            use std::io::Write;
            let mut stdout = std::io::stdout().lock();
            match stdout.write_all(text.as_bytes()).and_then(|()| stdout.flush()) {
                // A closed pipe (`hdr ... | head`) is not a failure.
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e).context("writing to stdout"),
                _ => Ok(()),
            }
        }
    }
}
