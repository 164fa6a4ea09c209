//! Text checkpoints for base and fine-tuned models.
//!
//! ```text
//! #hdr-checkpoint v1
//! kind base|finetuned
//! num_user_groups 8
//! num_categories 12
//! embedding_dim 8
//! hidden 64 32
//! hidden_source last_hidden
//! init_seed 0
//! block user_embedding 8 8
//! <8 rows of 8 values>
//! ...
//! transblock 32 100          (fine-tuned only)
//! block transblock.layer0.weight 100 32
//! ...
//! ```
//!
//! Values use the shortest representation that parses back to the same
//! `f64`, so a save/load round trip is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use crate::cvrmodel::{CvrModel, HiddenSource, ModelConfig};
use crate::error::{Error, Result};
use crate::synthgen::Features;
use crate::transblock::{FinetunedModel, Predictor, TransBlock};

pub const CHECKPOINT_TAG: &str = "#hdr-checkpoint v1";

#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Base(CvrModel),
    Finetuned(FinetunedModel),
}

impl Checkpoint {
    pub fn kind(&self) -> &'static str {
        match self {
            Checkpoint::Base(_) => "base",
            Checkpoint::Finetuned(_) => "finetuned",
        }
    }

    pub fn base(&self) -> &CvrModel {
        match self {
            Checkpoint::Base(m) => m,
            Checkpoint::Finetuned(f) => &f.base,
        }
    }

    pub fn to_text(&self) -> String {
        let model = self.base();
        let cfg = model.config();
        let mut out = String::new();
        let _ = writeln!(out, "{CHECKPOINT_TAG}");
        let _ = writeln!(out, "kind {}", self.kind());
        let _ = writeln!(out, "num_user_groups {}", cfg.num_user_groups);
        let _ = writeln!(out, "num_categories {}", cfg.num_categories);
        let _ = writeln!(out, "embedding_dim {}", cfg.embedding_dim);
        let _ = writeln!(out, "hidden {}", join(&cfg.hidden));
        let _ = writeln!(out, "hidden_source {}", cfg.hidden_source.as_str());
        let _ = writeln!(out, "init_seed {}", cfg.init_seed);
        write_blocks(&mut out, "", &model.shapes(), model.params());
        if let Checkpoint::Finetuned(ft) = self {
            let _ = writeln!(out, "transblock {} {}", ft.head.input_dim(), join(ft.head.hidden()));
            write_blocks(&mut out, "transblock.", &transblock_shapes(&ft.head), ft.head.params());
        }
        out
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut r = Reader { path, lines: text.lines().enumerate().peekable() };
        let (n, tag) = r.next_line()?;
        if tag.trim() != CHECKPOINT_TAG {
            return Err(Error::parse(path, n, format!("expected schema tag '{CHECKPOINT_TAG}'")));
        }
        let kind = r.key_values("kind")?;
        let num_user_groups = r.one("num_user_groups")?;
        let num_categories = r.one("num_categories")?;
        let embedding_dim = r.one("embedding_dim")?;
        let hidden = r.numbers::<usize>("hidden")?;
        let hidden_source: HiddenSource = r.key_values("hidden_source")?.parse()?;
        let init_seed = r.one("init_seed")?;
        let cfg = ModelConfig { num_user_groups, num_categories, embedding_dim, hidden, hidden_source, init_seed };
        let shapes = CvrModel::zeros(cfg.clone())?.shapes();
        let params = r.blocks("", &shapes)?;
        let model = CvrModel::from_params(cfg, params)?;
        match kind.as_str() {
            "base" => Ok(Checkpoint::Base(model)),
            "finetuned" => {
                let dims = r.numbers::<usize>("transblock")?;
                let (&input, hidden) =
                    dims.split_first().ok_or_else(|| Error::parse(path, 0, "transblock line needs an input size"))?;
                let shapes = transblock_shapes(&TransBlock::zeros(input, hidden)?);
                let params = r.blocks("transblock.", &shapes)?;
                let head = TransBlock::from_params(input, hidden, params)?;
                Ok(Checkpoint::Finetuned(FinetunedModel::new(model, head)?))
            }
            other => Err(Error::parse(path, 2, format!("unknown checkpoint kind '{other}'"))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path, &text)
    }
}

impl Predictor for Checkpoint {
    fn predict(&self, f: &Features) -> Result<f64> {
        match self {
            Checkpoint::Base(m) => Predictor::predict(m, f),
            Checkpoint::Finetuned(ft) => ft.predict(f),
        }
    }

    fn predict_many(&self, inputs: &[Features]) -> Result<Vec<f64>> {
        match self {
            Checkpoint::Base(m) => Predictor::predict_many(m, inputs),
            Checkpoint::Finetuned(ft) => ft.predict_many(inputs),
        }
    }
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

pub fn transblock_shapes(tb: &TransBlock) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    let mut n_in = tb.input_dim();
    for (i, &n_out) in tb.hidden().iter().chain(std::iter::once(&2)).enumerate() {
        out.push((format!("layer{i}.weight"), n_out, n_in));
        out.push((format!("layer{i}.bias"), n_out, 1));
        n_in = n_out;
    }
    out
}

fn write_blocks(out: &mut String, prefix: &str, shapes: &[(String, usize, usize)], params: &[f64]) {
    let mut offset = 0;
    for (name, rows, cols) in shapes {
        let _ = writeln!(out, "block {prefix}{name} {rows} {cols}");
        for r in 0..*rows {
            let row = &params[offset + r * cols..offset + (r + 1) * cols];
            let _ = writeln!(out, "{}", join(row));
        }
        offset += rows * cols;
    }
}

struct Reader<'a> {
    path: &'a Path,
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
}

impl<'a> Reader<'a> {
    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        self.lines
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| Error::parse(self.path, 0, "unexpected end of checkpoint"))
    }

    fn key_values(&mut self, key: &str) -> Result<String> {
        let (n, line) = self.next_line()?;
        match line.split_once(' ') {
            Some((k, rest)) if k == key => Ok(rest.trim().to_string()),
            _ if line.trim() == key => Ok(String::new()),
            _ => Err(Error::parse(self.path, n, format!("expected '{key}'"))),
        }
    }

    fn numbers<T: std::str::FromStr>(&mut self, key: &str) -> Result<Vec<T>> {
        let raw = self.key_values(key)?;
        raw.split_whitespace()
            .map(|s| s.parse().map_err(|_| Error::parse(self.path, 0, format!("bad value '{s}' for {key}"))))
            .collect()
    }

    fn one<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let mut v = self.numbers::<T>(key)?;
        if v.len() != 1 {
            return Err(Error::parse(self.path, 0, format!("'{key}' takes exactly one value")));
        }
        Ok(v.remove(0))
    }

    fn blocks(&mut self, prefix: &str, shapes: &[(String, usize, usize)]) -> Result<Vec<f64>> {
        let mut params = Vec::new();
        for (name, rows, cols) in shapes {
            let (n, header) = self.next_line()?;
            let expected = format!("block {prefix}{name} {rows} {cols}");
            if header.trim() != expected {
                return Err(Error::parse(self.path, n, format!("expected '{expected}', found '{header}'")));
            }
            for _ in 0..*rows {
                let (n, line) = self.next_line()?;
                let before = params.len();
                for s in line.split_whitespace() {
                    params.push(s.parse::<f64>().map_err(|_| Error::parse(self.path, n, format!("bad value '{s}'")))?);
                }
                if params.len() - before != *cols {
                    return Err(Error::parse(self.path, n, format!("expected {cols} values")));
                }
            }
        }
        Ok(params)
    }
}
