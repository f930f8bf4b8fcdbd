//! Burst generators and the trace file format.
//!
//! A generator yields `(burst size, next period)` pairs. Stochastic
//! generators never run dry; the trace generator replays a file once.
//!
//! Trace files are line oriented (LF or CRLF):
//!
//! ```text
//! # fps: 60
//! # target_rate_mbps: 50
//! 104211,16702
//! 98750,16630
//! ```
//!
//! `#` lines of the form `key: value` are metadata, other `#` lines are
//! comments, blank lines are skipped. Data rows are
//! `burst_size_bytes,next_period_us`, both unsigned integers, size >= 1 and
//! period >= 1 so that burst start times are strictly increasing.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::model::VrModel;
use crate::rv::{RngStream, Variate};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BurstDescriptor {
    pub burst_size: u64,
    pub next_period_ns: u64,
}

pub trait BurstGenerator {
    fn has_next_burst(&self) -> bool;

    fn generate_burst(&mut self) -> Result<BurstDescriptor>;
}

impl<G: BurstGenerator + ?Sized> BurstGenerator for Box<G> {
    fn has_next_burst(&self) -> bool {
        (**self).has_next_burst()
    }

    fn generate_burst(&mut self) -> Result<BurstDescriptor> {
        (**self).generate_burst()
    }
}

/// Sizes (bytes) and periods (seconds) drawn independently from arbitrary
/// variates, size first. Sizes are rounded and clamped to at least one byte,
/// periods clamped at zero.
#[derive(Clone, Debug)]
pub struct SimpleBurstGenerator {
    size: Variate,
    period: Variate,
    rng: RngStream,
}

impl SimpleBurstGenerator {
    pub fn new(size: Variate, period: Variate, rng: RngStream) -> Self {
        Self { size, period, rng }
    }
}

impl BurstGenerator for SimpleBurstGenerator {
    fn has_next_burst(&self) -> bool {
        true
    }

    fn generate_burst(&mut self) -> Result<BurstDescriptor> {
        let size = self.size.sample(&mut self.rng).round().max(1.0);
        let period = self.period.sample(&mut self.rng).max(0.0);
        Ok(BurstDescriptor {
            burst_size: size as u64,
            next_period_ns: (period * 1e9).round() as u64,
        })
    }
}

#[derive(Clone, Debug)]
pub struct VrBurstGenerator {
    model: VrModel,
    rng: RngStream,
}

impl VrBurstGenerator {
    pub fn new(model: VrModel, rng: RngStream) -> Self {
        Self { model, rng }
    }

    pub fn model(&self) -> &VrModel {
        &self.model
    }
}

impl BurstGenerator for VrBurstGenerator {
    fn has_next_burst(&self) -> bool {
        true
    }

    fn generate_burst(&mut self) -> Result<BurstDescriptor> {
        let burst_size = self.model.sample_frame(&mut self.rng)?;
        let next_period_ns = self.model.sample_ifi_ns(&mut self.rng);
        Ok(BurstDescriptor {
            burst_size,
            next_period_ns,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceFile {
    pub metadata: BTreeMap<String, String>,
    pub records: Vec<BurstDescriptor>,
}

/// Unit of the period column.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PeriodUnit {
    #[default]
    Microseconds,
    /// Fractional seconds, converted and rounded to whole microseconds.
    Seconds,
}

impl TraceFile {
    pub fn duration_ns(&self) -> u64 {
        self.records.iter().map(|r| r.next_period_ns).sum()
    }

    pub fn metadata_f64(&self, key: &str) -> Option<f64> {
        self.metadata.get(key).and_then(|v| v.trim().parse().ok())
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with_unit(text, PeriodUnit::Microseconds)
    }

    pub fn parse_with_unit(text: &str, unit: PeriodUnit) -> Result<Self> {
        let mut trace = TraceFile::default();
        for (idx, raw) in text.split('\n').enumerate() {
            let line_no = idx + 1;
            let line = raw.strip_suffix('\r').unwrap_or(raw).trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some((k, v)) = comment.split_once(':') {
                    let k = k.trim();
                    if !k.is_empty() && !k.contains(char::is_whitespace) {
                        trace.metadata.insert(k.to_owned(), v.trim().to_owned());
                    }
                }
                continue;
            }
            let err = |message: String| Error::Parse {
                line: line_no,
                message,
            };
            let mut fields = line.split(',');
            let (Some(size), Some(period), None) = (fields.next(), fields.next(), fields.next())
            else {
                return Err(err(format!(
                    "expected `burst_size_bytes,next_period_us`, got {line:?}"
                )));
            };
            let burst_size: u64 = size.trim().parse().map_err(|_| {
                err(format!(
                    "burst size {:?} is not an unsigned integer",
                    size.trim()
                ))
            })?;
            let period_us: u64 = match unit {
                PeriodUnit::Microseconds => period.trim().parse().map_err(|_| {
                    err(format!(
                        "period {:?} is not an unsigned integer",
                        period.trim()
                    ))
                })?,
                PeriodUnit::Seconds => {
                    let secs: f64 = period
                        .trim()
                        .parse()
                        .map_err(|_| err(format!("period {:?} is not a number", period.trim())))?;
                    if !(secs >= 0.0 && secs.is_finite()) {
                        return Err(err(format!("period {secs} must be non-negative")));
                    }
                    (secs * 1e6).round() as u64
                }
            };
            if burst_size == 0 {
                return Err(err("burst size must be at least 1 byte".into()));
            }
            if period_us == 0 {
                return Err(err("period must be at least 1 us".into()));
            }
            let next_period_ns = period_us
                .checked_mul(1000)
                .ok_or_else(|| err(format!("period {period_us} us overflows")))?;
            trace.records.push(BurstDescriptor {
                burst_size,
                next_period_ns,
            });
        }
        if trace.records.is_empty() {
            return Err(Error::EmptyTrace);
        }
        Ok(trace)
    }

    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        out.write_all(self.to_csv_string().as_bytes())?;
        Ok(())
    }

    /// Serializes in the trace grammar. Periods are rounded to whole
    /// microseconds and raised to at least 1 us.
    pub fn to_csv_string(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.metadata {
            let _ = writeln!(s, "# {k}: {v}");
        }
        for r in &self.records {
            let us = ((r.next_period_ns + 500) / 1000).max(1);
            let _ = writeln!(s, "{},{}", r.burst_size, us);
        }
        s
    }
}

pub fn load_trace(path: &Path) -> Result<TraceFile> {
    load_trace_with_unit(path, PeriodUnit::Microseconds)
}

pub fn load_trace_with_unit(path: &Path, unit: PeriodUnit) -> Result<TraceFile> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::File {
        path: path.to_owned(),
        source,
    })?;
    TraceFile::parse_with_unit(&text, unit)
}

/// Replays a trace once, from an optional start time.
#[derive(Clone, Debug)]
pub struct TraceFileBurstGenerator {
    trace: Arc<TraceFile>,
    cursor: usize,
}

impl TraceFileBurstGenerator {
    pub fn new(trace: Arc<TraceFile>) -> Self {
        Self { trace, cursor: 0 }
    }

    /// Skips whole records whose start time lies before `t0_s` seconds;
    /// generation resumes at the first record starting at or after it.
    pub fn seek_start_time(&mut self, t0_s: f64) {
        let t0 = (t0_s.max(0.0) * 1e9).round() as u64;
        let mut start = 0u64;
        self.cursor = 0;
        while self.cursor < self.trace.records.len() && start < t0 {
            start += self.trace.records[self.cursor].next_period_ns;
            self.cursor += 1;
        }
        if start < t0 {
            self.cursor = self.trace.records.len();
        }
    }

    pub fn remaining(&self) -> usize {
        self.trace.records.len() - self.cursor
    }
}

impl BurstGenerator for TraceFileBurstGenerator {
    fn has_next_burst(&self) -> bool {
        self.cursor < self.trace.records.len()
    }

    fn generate_burst(&mut self) -> Result<BurstDescriptor> {
        let rec = *self
            .trace
            .records
            .get(self.cursor)
            .ok_or(Error::Exhausted)?;
        self.cursor += 1;
        Ok(rec)
    }
}
