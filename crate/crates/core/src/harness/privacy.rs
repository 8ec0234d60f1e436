//! Linkability from each observer's point of view, computed from an event
//! log. Every observer sees only the fields it could collect itself: the
//! eavesdropper the identifiers on the air, the LBS the credential shown to
//! it, each authority its own issuance records. Node-side lines are used
//! only as ground truth for scoring.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use super::log::LogRecord;
use crate::types::SimTime;

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EavesdropperView {
    pub messages: usize,
    /// Groups of messages joined by a shared pseudonym, link address or IP.
    pub linkable_sets: usize,
    pub max_linkable_messages: usize,
    /// Longest time between the first and last message of one set.
    pub max_linkable_span_us: u64,
    /// Identifiers one node used under more than one installed pseudonym.
    pub spanning_rotation: Vec<String>,
    /// Identifiers two different nodes happened to draw.
    pub collisions: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LbsView {
    pub queries: usize,
    pub credentials: usize,
    /// Largest number of one node's queries sharing a credential.
    pub max_linkable: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuthorityLinkage {
    pub view: String,
    /// Pseudonyms seen on the air.
    pub pseudonyms_seen: usize,
    /// Of those, how many the view maps to a long-term identity.
    pub mapped: usize,
    pub correct: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PrivacyReport {
    pub eavesdropper: EavesdropperView,
    pub lbs: LbsView,
    pub authorities: Vec<AuthorityLinkage>,
}

impl PrivacyReport {
    /// True when no identifier outlives a rotation.
    pub fn rotation_unlinkable(&self) -> bool {
        self.eavesdropper.spanning_rotation.is_empty()
    }

    pub fn authority(&self, view: &str) -> Option<&AuthorityLinkage> {
        self.authorities.iter().find(|a| a.view == view)
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (a, b) = (self.find(a), self.find(b));
        if a != b {
            self.0[a.max(b)] = a.min(b);
        }
    }
}

struct AirMessage {
    at: SimTime,
    node: String,
    ids: [String; 3],
}

type Mapping<'a> = HashMap<&'a str, &'a str>;

pub fn privacy_report(log: &str) -> PrivacyReport {
    let mut air = Vec::new();
    let mut installs: BTreeMap<&str, Vec<(SimTime, &str)>> = BTreeMap::new();
    let mut lbs_groups: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    let mut lbs_creds = BTreeSet::new();
    let mut lbs_queries = 0;
    let mut ltca: HashMap<&str, &str> = HashMap::new();
    let mut pca: HashMap<&str, &str> = HashMap::new();
    for r in log.lines().filter_map(LogRecord::parse) {
        match (r.entity, r.kind) {
            (node, "pc_installed") => {
                if let Some(pc) = r.get("pc") {
                    installs.entry(node).or_default().push((r.time, pc));
                }
            }
            (node, "query_sent" | "response_sent") => {
                if let (Some(pc), Some(link), Some(ip)) = (r.get("pc"), r.get("link"), r.get("ip"))
                {
                    air.push(AirMessage {
                        at: r.time,
                        node: node.to_string(),
                        ids: [
                            format!("pc:{pc}"),
                            format!("link:{link}"),
                            format!("ip:{ip}"),
                        ],
                    });
                }
            }
            (node, "lbs_query") => {
                if let Some(cred) = r.get("cred") {
                    lbs_queries += 1;
                    lbs_creds.insert(cred);
                    *lbs_groups.entry((node, cred)).or_default() += 1;
                }
            }
            ("ltca", "ticket_issued") => {
                if let (Some(node), Some(t)) = (r.get("node"), r.get("ticket")) {
                    ltca.insert(t, node);
                }
            }
            ("pca", "pc_issued") => {
                if let (Some(pc), Some(t)) = (r.get("pc"), r.get("ticket")) {
                    pca.insert(pc, t);
                }
            }
            _ => {}
        }
    }

    let period = |node: &str, at: SimTime| -> usize {
        installs
            .get(node)
            .map_or(0, |v| v.partition_point(|(t, _)| *t <= at))
    };
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut uf = UnionFind((0..air.len()).collect());
    let mut users: BTreeMap<&str, BTreeSet<(&str, usize)>> = BTreeMap::new();
    for (i, m) in air.iter().enumerate() {
        for id in &m.ids {
            if let Some(&j) = index.get(id.as_str()) {
                uf.union(i, j);
            } else {
                index.insert(id, i);
            }
            users
                .entry(id)
                .or_default()
                .insert((m.node.as_str(), period(&m.node, m.at)));
        }
    }
    let mut sets: BTreeMap<usize, (usize, SimTime, SimTime)> = BTreeMap::new();
    for (i, m) in air.iter().enumerate() {
        let e = sets.entry(uf.find(i)).or_insert((0, m.at, m.at));
        e.0 += 1;
        e.1 = e.1.min(m.at);
        e.2 = e.2.max(m.at);
    }
    let mut spanning = Vec::new();
    let mut collisions = Vec::new();
    for (id, u) in &users {
        let nodes: BTreeSet<&str> = u.iter().map(|(n, _)| *n).collect();
        if nodes.len() > 1 {
            collisions.push(id.to_string());
        }
        if nodes.len() < u.len() {
            spanning.push(id.to_string());
        }
    }
    let eavesdropper = EavesdropperView {
        messages: air.len(),
        linkable_sets: sets.len(),
        max_linkable_messages: sets.values().map(|s| s.0).max().unwrap_or(0),
        max_linkable_span_us: sets
            .values()
            .map(|s| s.2.as_micros() - s.1.as_micros())
            .max()
            .unwrap_or(0),
        spanning_rotation: spanning,
        collisions,
    };

    let lbs = LbsView {
        queries: lbs_queries,
        credentials: lbs_creds.len(),
        max_linkable: lbs_groups.values().copied().max().unwrap_or(0),
    };

    let owner: HashMap<&str, &str> = installs
        .iter()
        .flat_map(|(node, v)| v.iter().map(move |(_, pc)| (*pc, *node)))
        .collect();
    let seen: BTreeSet<&str> = air
        .iter()
        .filter_map(|m| m.ids[0].strip_prefix("pc:"))
        .collect();
    let empty = HashMap::new();
    let views: [(&str, &Mapping, &Mapping); 3] = [
        ("ltca", &ltca, &empty),
        ("pca", &empty, &pca),
        ("ltca+pca", &ltca, &pca),
    ];
    let authorities = views
        .iter()
        .map(|(name, tickets_to_node, pc_to_ticket)| {
            let mut mapped = 0;
            let mut correct = 0;
            for pc in &seen {
                if let Some(node) = pc_to_ticket.get(pc).and_then(|t| tickets_to_node.get(t)) {
                    mapped += 1;
                    correct += usize::from(owner.get(pc) == Some(node));
                }
            }
            AuthorityLinkage {
                view: name.to_string(),
                pseudonyms_seen: seen.len(),
                mapped,
                correct,
            }
        })
        .collect();

    PrivacyReport {
        eavesdropper,
        lbs,
        authorities,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LOG: &str = "\
0|ltca|ticket_issued|node=node-00000,ticket=T-1,from=0,to=600000000
0|pca|pc_issued|pc=P-1,ticket=T-1,from=0,to=600000000
0|node-00000|pc_installed|pc=P-1,link=aa,ip=10.0.0.1,from=0,to=600000000
0|ltca|ticket_issued|node=node-00001,ticket=T-2,from=0,to=600000000
0|pca|pc_issued|pc=P-2,ticket=T-2,from=0,to=600000000
0|node-00001|pc_installed|pc=P-2,link=bb,ip=10.0.0.2,from=0,to=600000000
5|node-00000|query_sent|q=1,pc=P-1,link=aa,ip=10.0.0.1,type=1,attached=1
9|node-00000|lbs_query|cred=P-1,type=1,n=3
9|node-00000|lbs_query|cred=P-1,type=2,n=3
7|node-00001|response_sent|q=1,pc=P-2,link=bb,ip=10.0.0.2,dest=aa,n=1
600000000|ltca|ticket_issued|node=node-00000,ticket=T-3,from=600000000,to=1200000000
600000000|pca|pc_issued|pc=P-3,ticket=T-3,from=600000000,to=1200000000
600000000|node-00000|pc_installed|pc=P-3,link=cc,ip=10.0.0.3,from=600000000,to=1200000000
600000005|node-00000|query_sent|q=2,pc=P-3,link=cc,ip=10.0.0.3,type=1,attached=1
600000009|node-00000|query_sent|q=3,pc=P-3,link=cc,ip=10.0.0.3,type=1,attached=0
";

    #[test]
    fn clean_rotation_gives_three_sets() {
        let r = privacy_report(LOG);
        assert_eq!(r.eavesdropper.messages, 4);
        assert_eq!(r.eavesdropper.linkable_sets, 3);
        assert_eq!(r.eavesdropper.max_linkable_messages, 2);
        assert_eq!(r.eavesdropper.max_linkable_span_us, 4);
        assert!(r.rotation_unlinkable());
        assert!(r.eavesdropper.collisions.is_empty());
        assert_eq!(r.lbs.max_linkable, 2);
        assert_eq!(r.lbs.credentials, 1);
    }

    #[test]
    fn reused_link_after_rotation_is_flagged() {
        let bad = LOG.replace("pc=P-3,link=cc", "pc=P-3,link=aa");
        let r = privacy_report(&bad);
        assert_eq!(
            r.eavesdropper.spanning_rotation,
            vec!["link:aa".to_string()]
        );
        assert_eq!(r.eavesdropper.max_linkable_messages, 3);
    }

    #[test]
    fn only_the_coalition_maps_pseudonyms() {
        let r = privacy_report(LOG);
        for v in ["ltca", "pca"] {
            let a = r.authority(v).unwrap();
            assert_eq!((a.pseudonyms_seen, a.mapped), (3, 0), "{v}");
        }
        let c = r.authority("ltca+pca").unwrap();
        assert_eq!((c.mapped, c.correct), (3, 3));
    }

    #[test]
    fn shared_ip_between_nodes_is_a_collision_not_a_rotation_leak() {
        let r = privacy_report(&LOG.replace("10.0.0.2", "10.0.0.1"));
        assert_eq!(r.eavesdropper.collisions, vec!["ip:10.0.0.1".to_string()]);
        assert!(r.rotation_unlinkable());
    }
}
