//! Text checkpoint format.
//!
//! ```text
//! gac-checkpoint 1
//! meta <key> <value>          (zero or more)
//! params <count>
//! <name> <rows> <cols>        (then `rows` lines of `cols` values)
//! ```
//!
//! Values are written with 17 significant digits, which round-trips every
//! `f64` exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::DenseMatrix;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "gac-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub entries: Vec<(String, DenseMatrix)>,
}

impl Checkpoint {
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn entry(&self, name: &str) -> Option<&DenseMatrix> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}");
        for (k, v) in &self.meta {
            let _ = writeln!(out, "meta {k} {v}");
        }
        let _ = writeln!(out, "params {}", self.entries.len());
        for (name, m) in &self.entries {
            let _ = writeln!(out, "{name} {} {}", m.rows(), m.cols());
            for r in 0..m.rows() {
                let line: Vec<String> = m.row(r).iter().map(|&v| fmt_f64(v)).collect();
                let _ = writeln!(out, "{}", line.join(" "));
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::format("checkpoint", msg);
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let mut head = header.split_whitespace();
        if head.next() != Some(CHECKPOINT_MAGIC) {
            return Err(bad(format!("expected '{CHECKPOINT_MAGIC}' header")));
        }
        let version: u32 = head
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("missing version".into()))?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }

        let mut meta = Vec::new();
        let count = loop {
            let (no, line) = lines
                .next()
                .ok_or_else(|| bad("missing params line".into()))?;
            let mut parts = line.splitn(3, ' ');
            match parts.next() {
                Some("meta") => {
                    let k = parts
                        .next()
                        .ok_or_else(|| bad(format!("line {}: meta key", no + 1)))?;
                    meta.push((k.to_string(), parts.next().unwrap_or("").to_string()));
                }
                Some("params") => {
                    break parts
                        .next()
                        .and_then(|c| c.trim().parse::<usize>().ok())
                        .ok_or_else(|| bad(format!("line {}: params count", no + 1)))?;
                }
                _ => return Err(bad(format!("line {}: unexpected '{line}'", no + 1))),
            }
        };

        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let (no, line) = lines
                .next()
                .ok_or_else(|| bad("truncated parameter list".into()))?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [name, rows, cols] = fields[..] else {
                return Err(bad(format!("line {}: expected 'name rows cols'", no + 1)));
            };
            let rows: usize = rows
                .parse()
                .map_err(|_| bad(format!("line {}: rows", no + 1)))?;
            let cols: usize = cols
                .parse()
                .map_err(|_| bad(format!("line {}: cols", no + 1)))?;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (no, line) = lines
                    .next()
                    .ok_or_else(|| bad(format!("{name}: truncated")))?;
                let before = data.len();
                for tok in line.split_whitespace() {
                    data.push(
                        tok.parse::<f64>()
                            .map_err(|_| bad(format!("line {}: bad value '{tok}'", no + 1)))?,
                    );
                }
                if data.len() - before != cols {
                    return Err(bad(format!("line {}: expected {cols} values", no + 1)));
                }
            }
            entries.push((name.to_string(), DenseMatrix::from_vec(rows, cols, data)?));
        }
        Ok(Self { meta, entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}
