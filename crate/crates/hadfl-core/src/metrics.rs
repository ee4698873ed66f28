//! Per-round metrics records: a self-describing line format with a header,
//! one record per sync round. Plot-ready and byte-reproducible: floats use
//! Rust's shortest round-trip formatting and composite fields keep a stable
//! order.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::DeviceId;

pub const METRICS_HEADER: &str =
    "sync_round,virtual_time,train_loss,test_accuracy,versions,selected,round_bytes,total_bytes";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub sync_round: u64,
    pub virtual_time: f64,
    pub train_loss: f64,
    pub test_accuracy: f64,
    /// Cumulative local epochs per device, in device order.
    pub versions: Vec<(DeviceId, u64)>,
    pub selected: Vec<DeviceId>,
    pub round_bytes: u64,
    pub total_bytes: u64,
}

impl MetricsRecord {
    fn to_line(&self) -> String {
        let versions = self
            .versions
            .iter()
            .map(|(id, v)| format!("{id}:{v}"))
            .collect::<Vec<_>>()
            .join("|");
        let selected = self
            .selected
            .iter()
            .map(|id| id.to_string())
            .collect::<Vec<_>>()
            .join("|");
        format!(
            "{},{},{},{},{},{},{},{}",
            self.sync_round,
            self.virtual_time,
            self.train_loss,
            self.test_accuracy,
            versions,
            selected,
            self.round_bytes,
            self.total_bytes
        )
    }

    fn from_line(line: &str) -> Result<Self> {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 8 {
            return Err(Error::config(
                "metrics",
                format!("expected 8 fields, got {}", parts.len()),
            ));
        }
        let num = |s: &str, what: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::config("metrics", format!("bad {what}: `{s}`")))
        };
        let versions = parts[4]
            .split('|')
            .filter(|s| !s.is_empty())
            .map(|pair| {
                let (id, v) = pair
                    .split_once(':')
                    .ok_or_else(|| Error::config("metrics", format!("bad version `{pair}`")))?;
                Ok((
                    id.parse()
                        .map_err(|_| Error::config("metrics", "bad device id"))?,
                    v.parse()
                        .map_err(|_| Error::config("metrics", "bad version count"))?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let selected = parts[5]
            .split('|')
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::config("metrics", "bad selected id"))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MetricsRecord {
            sync_round: num(parts[0], "sync_round")? as u64,
            virtual_time: num(parts[1], "virtual_time")?,
            train_loss: num(parts[2], "train_loss")?,
            test_accuracy: num(parts[3], "test_accuracy")?,
            versions,
            selected,
            round_bytes: num(parts[6], "round_bytes")? as u64,
            total_bytes: num(parts[7], "total_bytes")? as u64,
        })
    }
}

/// Renders a full metrics file.
pub fn render(records: &[MetricsRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    let _ = writeln!(out, "{METRICS_HEADER}");
    for r in records {
        let _ = writeln!(out, "{}", r.to_line());
    }
    out
}

pub fn write_file(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, render(records))?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path)?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == METRICS_HEADER => {}
        other => {
            return Err(Error::config(
                "metrics",
                format!("missing header line, got {other:?}"),
            ))
        }
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(MetricsRecord::from_line)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(round: u64) -> MetricsRecord {
        MetricsRecord {
            sync_round: round,
            virtual_time: 1.5 * round as f64 + 0.125,
            train_loss: 0.693_147_180_559_945_3 / (round + 1) as f64,
            test_accuracy: 0.5 + 0.01 * round as f64,
            versions: vec![(0, 4 * round), (1, 2 * round), (2, round)],
            selected: vec![0, 2],
            round_bytes: 4096 + round,
            total_bytes: 4096 * (round + 1),
        }
    }

    #[test]
    fn render_parse_roundtrip() {
        let records = vec![record(0), record(1), record(7)];
        let text = render(&records);
        let back = parse(&text).unwrap();
        assert_eq!(back, records);
        // identical records render byte-identically
        assert_eq!(render(&back), text);
    }

    #[test]
    fn header_required() {
        assert!(parse("1,2,3,4,,,5,6\n").is_err());
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let records = vec![record(3)];
        write_file(&path, &records).unwrap();
        assert_eq!(read_file(&path).unwrap(), records);
    }
}
