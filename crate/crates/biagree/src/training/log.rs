use std::fmt::{self, Display};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// One `key=value` event line.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRecord {
    pub event: String,
    pub fields: Vec<(String, String)>,
}

impl LogRecord {
    pub fn new(event: &str) -> Self {
        Self {
            event: event.to_string(),
            fields: Vec::new(),
        }
    }

    /// Appends a field. Floats use Rust's shortest round-trip formatting, so a
    /// written log parses back to the same bits.
    pub fn with(mut self, key: &str, value: impl Display) -> Self {
        self.fields.push((key.to_string(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key).and_then(|v| v.parse().ok())
    }

    pub fn parse(line: &str) -> Option<Self> {
        let mut parts = line.split(' ');
        let event = parts.next()?.strip_prefix("event=")?;
        let fields = parts
            .map(|p| p.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
            .collect::<Option<Vec<_>>>()?;
        Some(Self {
            event: event.to_string(),
            fields,
        })
    }
}

impl Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "event={}", self.event)?;
        for (k, v) in &self.fields {
            write!(f, " {k}={v}")?;
        }
        Ok(())
    }
}

/// Dev-set scores and agreement probes after one joint-training iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub l2r_bleu: f64,
    pub r2l_bleu: f64,
    pub kl_exact: Option<f64>,
    pub kl_sampled: Option<f64>,
}

impl IterationRecord {
    fn to_record(&self) -> LogRecord {
        let mut r = LogRecord::new("iteration")
            .with("iteration", self.iteration)
            .with("l2r_dev_bleu", self.l2r_bleu)
            .with("r2l_dev_bleu", self.r2l_bleu);
        if let Some(kl) = self.kl_exact {
            r = r.with("kl_exact", kl);
        }
        if let Some(kl) = self.kl_sampled {
            r = r.with("kl_sampled", kl);
        }
        r
    }

    fn from_record(r: &LogRecord) -> Option<Self> {
        Some(Self {
            iteration: r.get("iteration")?.parse().ok()?,
            l2r_bleu: r.get_f64("l2r_dev_bleu")?,
            r2l_bleu: r.get_f64("r2l_dev_bleu")?,
            kl_exact: r.get_f64("kl_exact"),
            kl_sampled: r.get_f64("kl_sampled"),
        })
    }
}

/// Append-only training record.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    records: Vec<LogRecord>,
}

impl TrainLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: LogRecord) {
        self.records.push(record);
    }

    pub fn push_iteration(&mut self, it: &IterationRecord) {
        self.push(it.to_record());
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn events<'a>(&'a self, event: &'a str) -> impl Iterator<Item = &'a LogRecord> + 'a {
        self.records.iter().filter(move |r| r.event == event)
    }

    pub fn iterations(&self) -> Vec<IterationRecord> {
        self.events("iteration").filter_map(IterationRecord::from_record).collect()
    }

    pub fn extend(&mut self, other: TrainLog) {
        self.records.extend(other.records);
    }

    pub fn to_text(&self) -> String {
        self.records.iter().map(|r| format!("{r}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                LogRecord::parse(l).ok_or_else(|| Error::Parse {
                    path: "<train log>".into(),
                    line: i + 1,
                    message: format!("malformed record {l:?}"),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_round_trip_bitwise() {
        let mut log = TrainLog::new();
        log.push(LogRecord::new("step").with("step", 3).with("ll", -0.1f64 / 3.0));
        log.push_iteration(&IterationRecord {
            iteration: 0,
            l2r_bleu: 0.123456789012345,
            r2l_bleu: 1.0 / 7.0,
            kl_exact: Some(1e-300),
            kl_sampled: None,
        });
        let back = TrainLog::from_text(&log.to_text()).unwrap();
        assert_eq!(back, log);
        assert_eq!(back.iterations()[0].r2l_bleu.to_bits(), (1.0f64 / 7.0).to_bits());
        assert!(TrainLog::from_text("garbage line").is_err());
    }
}
