use std::collections::BTreeMap;

use super::{LtcaLedger, PcSerial, PcaLedger, TicketSerial};

/// Which authority (or coalition) is looking.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum AuthorityView {
    Ltca,
    Pca,
    Coalition,
}

impl AuthorityView {
    pub fn name(self) -> &'static str {
        match self {
            AuthorityView::Ltca => "ltca",
            AuthorityView::Pca => "pca",
            AuthorityView::Coalition => "ltca+pca",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Lookup<T> {
    Known(T),
    Unknown,
}

impl<T> Lookup<T> {
    pub fn known(self) -> Option<T> {
        match self {
            Lookup::Known(v) => Some(v),
            Lookup::Unknown => None,
        }
    }
}

/// The mappings an observer can compute from the ledgers it holds.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Knowledge {
    /// node_id -> ticket serials (LTCA records).
    node_tickets: Option<BTreeMap<String, Vec<TicketSerial>>>,
    /// pseudonym -> ticket (PCA records).
    pc_tickets: Option<BTreeMap<PcSerial, TicketSerial>>,
}

impl Knowledge {
    pub fn of(view: AuthorityView, ltca: &LtcaLedger, pca: &PcaLedger) -> Self {
        let node_tickets = || {
            ltca.tickets
                .iter()
                .map(|(id, es)| (id.clone(), es.iter().map(|e| e.serial).collect()))
                .collect()
        };
        let pc_tickets = || pca.pseudonyms().collect();
        match view {
            AuthorityView::Ltca => Knowledge {
                node_tickets: Some(node_tickets()),
                pc_tickets: None,
            },
            AuthorityView::Pca => Knowledge {
                node_tickets: None,
                pc_tickets: Some(pc_tickets()),
            },
            AuthorityView::Coalition => Knowledge {
                node_tickets: Some(node_tickets()),
                pc_tickets: Some(pc_tickets()),
            },
        }
    }

    pub fn tickets_of(&self, node_id: &str) -> Lookup<Vec<TicketSerial>> {
        match self.node_tickets.as_ref().and_then(|m| m.get(node_id)) {
            Some(t) => Lookup::Known(t.clone()),
            None => Lookup::Unknown,
        }
    }

    pub fn ticket_of_pc(&self, pc: PcSerial) -> Lookup<TicketSerial> {
        match self.pc_tickets.as_ref().and_then(|m| m.get(&pc)) {
            Some(t) => Lookup::Known(*t),
            None => Lookup::Unknown,
        }
    }

    /// Pseudonym -> long-term identity. Needs both halves.
    pub fn identity_of_pc(&self, pc: PcSerial) -> Lookup<String> {
        let (Some(nodes), Lookup::Known(ticket)) = (&self.node_tickets, self.ticket_of_pc(pc))
        else {
            return Lookup::Unknown;
        };
        nodes
            .iter()
            .find(|(_, ts)| ts.contains(&ticket))
            .map(|(id, _)| Lookup::Known(id.clone()))
            .unwrap_or(Lookup::Unknown)
    }

    /// Long-term identity -> pseudonyms. Needs both halves.
    pub fn pseudonyms_of(&self, node_id: &str) -> Lookup<Vec<PcSerial>> {
        let (Lookup::Known(tickets), Some(pcs)) = (self.tickets_of(node_id), &self.pc_tickets)
        else {
            return Lookup::Unknown;
        };
        Lookup::Known(
            pcs.iter()
                .filter(|(_, t)| tickets.contains(t))
                .map(|(pc, _)| *pc)
                .collect(),
        )
    }

    /// Full pseudonym -> identity table this observer can build.
    pub fn identity_table(&self) -> BTreeMap<PcSerial, String> {
        let (Some(nodes), Some(pcs)) = (&self.node_tickets, &self.pc_tickets) else {
            return BTreeMap::new();
        };
        let owner: BTreeMap<TicketSerial, &String> = nodes
            .iter()
            .flat_map(|(id, ts)| ts.iter().map(move |t| (*t, id)))
            .collect();
        pcs.iter()
            .filter_map(|(pc, t)| owner.get(t).map(|id| (*pc, (*id).clone())))
            .collect()
    }
}
