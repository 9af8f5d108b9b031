use std::fmt::Write as _;

use super::config::ExperimentConfig;
use crate::dynamics::{RunTrace, Status};
use crate::error::{Error, Result};

/// One trace row.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub grad_norm: f64,
    pub energy: f64,
    pub eta: f64,
    pub stage: usize,
}

/// Plain-text trace: `#`-prefixed header with the config echo, one
/// comma-separated row per iteration, `#`-prefixed footer.
///
/// Wall time is kept out of the file so repeated runs produce identical bytes.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceFile {
    pub version: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub rows: Vec<TraceRow>,
    pub status: Status,
    pub morse_index: Option<usize>,
    pub rate: Option<f64>,
    pub switch_iteration: Option<usize>,
}

pub const COLUMNS: &str = "iter,grad_norm,energy,eta,stage";
const MAGIC: &str = "# phisd trace v1";

/// Scientific notation with 17 significant digits.
pub fn fmt_sci(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "none".to_string(), |v| v.to_string())
}

fn parse_opt<T: std::str::FromStr>(s: &str, what: &str) -> Result<Option<T>> {
    if s == "none" {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| Error::Trace(format!("bad {what}: '{s}'")))
}

impl TraceFile {
    pub fn from_run(config: &ExperimentConfig, run: &RunTrace) -> Self {
        TraceFile {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config: config.clone(),
            rows: run
                .records
                .iter()
                .map(|r| TraceRow { iter: r.iter, grad_norm: r.grad_norm, energy: r.energy, eta: r.eta, stage: r.stage })
                .collect(),
            status: run.status,
            morse_index: run.final_morse_index.as_ref().map(|m| m.index),
            rate: run.rate.as_ref().map(|r| r.q),
            switch_iteration: run.switch_iteration,
        }
    }

    pub fn write(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{MAGIC}").unwrap();
        writeln!(s, "# version: {}", self.version).unwrap();
        writeln!(s, "# seed: {}", self.seed).unwrap();
        for line in self.config.to_toml().lines() {
            writeln!(s, "# config: {line}").unwrap();
        }
        writeln!(s, "{COLUMNS}").unwrap();
        for r in &self.rows {
            writeln!(s, "{},{},{},{},{}", r.iter, fmt_sci(r.grad_norm), fmt_sci(r.energy), fmt_sci(r.eta), r.stage).unwrap();
        }
        writeln!(s, "# status: {}", self.status.as_str()).unwrap();
        writeln!(s, "# morse_index: {}", fmt_opt(self.morse_index)).unwrap();
        writeln!(s, "# rate: {}", fmt_opt(self.rate.map(fmt_sci))).unwrap();
        writeln!(s, "# switch_iteration: {}", fmt_opt(self.switch_iteration)).unwrap();
        s
    }

    pub fn read(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(MAGIC) {
            return Err(Error::Trace("missing trace header".into()));
        }
        let mut config_text = String::new();
        let mut fields = std::collections::HashMap::new();
        let mut rows = Vec::new();
        let mut seen_columns = false;
        for (no, line) in lines.enumerate() {
            if let Some(rest) = line.strip_prefix("# config: ") {
                config_text.push_str(rest);
                config_text.push('\n');
            } else if line == "# config:" {
                config_text.push('\n');
            } else if let Some(rest) = line.strip_prefix("# ") {
                let (key, value) =
                    rest.split_once(": ").ok_or_else(|| Error::Trace(format!("line {}: bad header", no + 2)))?;
                fields.insert(key.to_string(), value.to_string());
            } else if line == COLUMNS {
                seen_columns = true;
            } else {
                let parts: Vec<&str> = line.split(',').collect();
                let bad = || Error::Trace(format!("line {}: bad row '{line}'", no + 2));
                if !seen_columns || parts.len() != 5 {
                    return Err(bad());
                }
                rows.push(TraceRow {
                    iter: parts[0].parse().map_err(|_| bad())?,
                    grad_norm: parts[1].parse().map_err(|_| bad())?,
                    energy: parts[2].parse().map_err(|_| bad())?,
                    eta: parts[3].parse().map_err(|_| bad())?,
                    stage: parts[4].parse().map_err(|_| bad())?,
                });
            }
        }
        let field = |k: &str| fields.get(k).map(String::as_str).ok_or_else(|| Error::Trace(format!("missing '{k}'")));
        let config: ExperimentConfig =
            toml::from_str(&config_text).map_err(|e| Error::Trace(format!("config echo: {e}")))?;
        Ok(TraceFile {
            version: field("version")?.to_string(),
            seed: field("seed")?.parse().map_err(|_| Error::Trace("bad seed".into()))?,
            config,
            rows,
            status: Status::parse(field("status")?).ok_or_else(|| Error::Trace("bad status".into()))?,
            morse_index: parse_opt(field("morse_index")?, "morse_index")?,
            rate: parse_opt(field("rate")?, "rate")?,
            switch_iteration: parse_opt(field("switch_iteration")?, "switch_iteration")?,
        })
    }
}
