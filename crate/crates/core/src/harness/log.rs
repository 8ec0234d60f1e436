//! Event log: one record per line, `time|entity|event_kind|details`.
//!
//! `time` is integer microseconds of simulated time, `entity` names the
//! acting party (`node-00042`, `ltca`, `pca`, `ra`, `lbs`, `sim`), and
//! `details` is a comma-separated list of `key=value` pairs. Values never
//! contain `|`, `,` or `=`.

use std::fmt::{self, Write as _};

use crate::types::SimTime;

#[derive(Clone, Debug, Default)]
pub struct EventLog {
    text: String,
    lines: usize,
    /// Also record per-reception acceptances and drops.
    pub verbose: bool,
}

impl EventLog {
    pub fn new(verbose: bool) -> Self {
        EventLog {
            verbose,
            ..Default::default()
        }
    }

    pub fn record(
        &mut self,
        time: SimTime,
        entity: &dyn fmt::Display,
        kind: &str,
        details: fmt::Arguments<'_>,
    ) {
        let _ = writeln!(
            self.text,
            "{}|{}|{}|{}",
            time.as_micros(),
            entity,
            kind,
            details
        );
        self.lines += 1;
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn len(&self) -> usize {
        self.lines
    }

    pub fn is_empty(&self) -> bool {
        self.lines == 0
    }

    pub fn records(&self) -> impl Iterator<Item = LogRecord<'_>> {
        self.text.lines().filter_map(LogRecord::parse)
    }
}

/// A parsed log line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LogRecord<'a> {
    pub time: SimTime,
    pub entity: &'a str,
    pub kind: &'a str,
    pub details: &'a str,
}

impl<'a> LogRecord<'a> {
    pub fn parse(line: &'a str) -> Option<Self> {
        let mut it = line.splitn(4, '|');
        let time = SimTime(it.next()?.parse().ok()?);
        Some(LogRecord {
            time,
            entity: it.next()?,
            kind: it.next()?,
            details: it.next()?,
        })
    }

    pub fn get(&self, key: &str) -> Option<&'a str> {
        self.details
            .split(',')
            .filter_map(|kv| kv.split_once('='))
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v)
    }
}
