//! Authority ledgers and their tab-separated snapshot format.
//! Fields below are separated by single tabs.
//!
//! LTCA snapshot:
//!
//! ```text
//! # p2plbs ltca-ledger v1
//! ltc <node_id> <L-serial>
//! ticket <node_id> <T-serial> <from_us> <to_us>
//! revoked <node_id>
//! ```
//!
//! PCA snapshot:
//!
//! ```text
//! # p2plbs pca-ledger v1
//! pc <P-serial> <T-serial> <from_us> <to_us>
//! consumed <T-serial>
//! ```
//!
//! Serials carry a namespace prefix (`L-`, `T-`, `P-`) so that the two files
//! can be compared byte-wise without numeric collisions.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::{LtcSerial, PcSerial, TicketSerial};
use crate::types::{SimTime, Window};

pub const LTCA_HEADER: &str = "# p2plbs ltca-ledger v1";
pub const PCA_HEADER: &str = "# p2plbs pca-ledger v1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LedgerParseError {
    #[error("missing or wrong header")]
    Header,
    #[error("line {0}: unknown record kind")]
    UnknownRecord(usize),
    #[error("line {0}: wrong field count")]
    FieldCount(usize),
    #[error("bad field `{0}`")]
    BadField(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TicketEntry {
    pub serial: TicketSerial,
    pub window: Window,
}

/// What the LTCA records: identities, their certificates, and ticket windows.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LtcaLedger {
    pub(crate) certificates: BTreeMap<String, LtcSerial>,
    pub(crate) tickets: BTreeMap<String, Vec<TicketEntry>>,
    pub(crate) ticket_owner: BTreeMap<TicketSerial, String>,
    pub(crate) revoked: BTreeSet<String>,
}

impl LtcaLedger {
    pub fn tickets_of(&self, node_id: &str) -> &[TicketEntry] {
        self.tickets.get(node_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn owner_of(&self, ticket: TicketSerial) -> Option<&str> {
        self.ticket_owner.get(&ticket).map(String::as_str)
    }

    pub fn is_revoked(&self, node_id: &str) -> bool {
        self.revoked.contains(node_id)
    }

    pub fn node_ids(&self) -> impl Iterator<Item = &str> {
        self.certificates.keys().map(String::as_str)
    }

    pub(crate) fn record_ticket(&mut self, node_id: &str, entry: TicketEntry) {
        self.tickets
            .entry(node_id.to_string())
            .or_default()
            .push(entry);
        self.ticket_owner.insert(entry.serial, node_id.to_string());
    }

    pub fn to_snapshot(&self) -> String {
        let mut out = String::new();
        out.push_str(LTCA_HEADER);
        out.push('\n');
        for (id, serial) in &self.certificates {
            out.push_str(&format!("ltc\t{id}\t{serial}\n"));
        }
        for (id, entries) in &self.tickets {
            for e in entries {
                out.push_str(&format!(
                    "ticket\t{id}\t{}\t{}\t{}\n",
                    e.serial, e.window.from, e.window.to
                ));
            }
        }
        for id in &self.revoked {
            out.push_str(&format!("revoked\t{id}\n"));
        }
        out
    }

    pub fn from_snapshot(text: &str) -> Result<Self, LedgerParseError> {
        let mut lines = text.lines().enumerate();
        if lines.next().map(|(_, l)| l) != Some(LTCA_HEADER) {
            return Err(LedgerParseError::Header);
        }
        let mut ledger = LtcaLedger::default();
        for (n, line) in lines {
            let fields: Vec<&str> = line.split('\t').collect();
            match (fields[0], fields.len()) {
                ("ltc", 3) => {
                    ledger
                        .certificates
                        .insert(fields[1].to_string(), fields[2].parse()?);
                }
                ("ticket", 5) => {
                    let entry = TicketEntry {
                        serial: fields[2].parse()?,
                        window: Window::new(parse_time(fields[3])?, parse_time(fields[4])?),
                    };
                    ledger.record_ticket(fields[1], entry);
                }
                ("revoked", 2) => {
                    ledger.revoked.insert(fields[1].to_string());
                }
                ("ltc" | "ticket" | "revoked", _) => {
                    return Err(LedgerParseError::FieldCount(n + 1))
                }
                _ => return Err(LedgerParseError::UnknownRecord(n + 1)),
            }
        }
        Ok(ledger)
    }
}

/// What the PCA records: which ticket paid for which pseudonym.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PcaLedger {
    pub(crate) pseudonyms: BTreeMap<PcSerial, (TicketSerial, Window)>,
    pub(crate) consumed: BTreeSet<TicketSerial>,
}

impl PcaLedger {
    pub fn ticket_of(&self, pc: PcSerial) -> Option<TicketSerial> {
        self.pseudonyms.get(&pc).map(|(t, _)| *t)
    }

    pub fn window_of(&self, pc: PcSerial) -> Option<Window> {
        self.pseudonyms.get(&pc).map(|(_, w)| *w)
    }

    pub fn is_consumed(&self, ticket: TicketSerial) -> bool {
        self.consumed.contains(&ticket)
    }

    pub fn pseudonyms(&self) -> impl Iterator<Item = (PcSerial, TicketSerial)> + '_ {
        self.pseudonyms.iter().map(|(pc, (t, _))| (*pc, *t))
    }

    pub fn to_snapshot(&self) -> String {
        let mut out = String::new();
        out.push_str(PCA_HEADER);
        out.push('\n');
        for (pc, (ticket, w)) in &self.pseudonyms {
            out.push_str(&format!("pc\t{pc}\t{ticket}\t{}\t{}\n", w.from, w.to));
        }
        for t in &self.consumed {
            out.push_str(&format!("consumed\t{t}\n"));
        }
        out
    }

    pub fn from_snapshot(text: &str) -> Result<Self, LedgerParseError> {
        let mut lines = text.lines().enumerate();
        if lines.next().map(|(_, l)| l) != Some(PCA_HEADER) {
            return Err(LedgerParseError::Header);
        }
        let mut ledger = PcaLedger::default();
        for (n, line) in lines {
            let fields: Vec<&str> = line.split('\t').collect();
            match (fields[0], fields.len()) {
                ("pc", 5) => {
                    let w = Window::new(parse_time(fields[3])?, parse_time(fields[4])?);
                    ledger
                        .pseudonyms
                        .insert(fields[1].parse()?, (fields[2].parse()?, w));
                }
                ("consumed", 2) => {
                    ledger.consumed.insert(fields[1].parse()?);
                }
                ("pc" | "consumed", _) => return Err(LedgerParseError::FieldCount(n + 1)),
                _ => return Err(LedgerParseError::UnknownRecord(n + 1)),
            }
        }
        Ok(ledger)
    }
}

fn parse_time(s: &str) -> Result<SimTime, LedgerParseError> {
    s.parse::<u64>()
        .map(SimTime)
        .map_err(|_| LedgerParseError::BadField(s.to_string()))
}
