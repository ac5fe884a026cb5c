use std::collections::BTreeSet;
use std::net::Ipv4Addr;
use std::path::Path;

use ipnet::Ipv4Net;
use serde::{Deserialize, Serialize};

use super::{AddrPair, TraceError};

/// Operator knowledge about the monitored enclosure.
///
/// JSON form:
/// ```json
/// {
///   "internal_addrs": ["10.0.0.0/24", "192.168.5.7"],
///   "known_relevant_nodes": ["10.0.0.5"],
///   "known_relevant_couples": [["10.0.0.5", "10.0.0.9"]]
/// }
/// ```
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnclosureProfile {
    internal_addrs: Vec<Ipv4Net>,
    known_relevant_nodes: BTreeSet<Ipv4Addr>,
    known_relevant_couples: BTreeSet<AddrPair>,
}

#[derive(Serialize, Deserialize)]
struct ProfileFile {
    internal_addrs: Vec<String>,
    #[serde(default)]
    known_relevant_nodes: Vec<Ipv4Addr>,
    #[serde(default)]
    known_relevant_couples: Vec<(Ipv4Addr, Ipv4Addr)>,
}

fn parse_net(s: &str) -> Result<Ipv4Net, TraceError> {
    let s = s.trim();
    if s.contains('/') {
        s.parse::<Ipv4Net>()
            .map(|n| n.trunc())
            .map_err(|e| TraceError::InvalidProfile(format!("{s:?}: {e}")))
    } else {
        s.parse::<Ipv4Addr>()
            .map(Ipv4Net::from)
            .map_err(|e| TraceError::InvalidProfile(format!("{s:?}: {e}")))
    }
}

impl EnclosureProfile {
    pub fn new(
        internal_addrs: Vec<Ipv4Net>,
        known_relevant_nodes: impl IntoIterator<Item = Ipv4Addr>,
        known_relevant_couples: impl IntoIterator<Item = (Ipv4Addr, Ipv4Addr)>,
    ) -> Result<Self, TraceError> {
        if internal_addrs.is_empty() {
            return Err(TraceError::InvalidProfile("internal_addrs is empty".into()));
        }
        let couples = known_relevant_couples
            .into_iter()
            .map(|(a, b)| {
                AddrPair::new(a, b).ok_or_else(|| {
                    TraceError::InvalidProfile(format!("couple {a}|{b} repeats the same address"))
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            internal_addrs,
            known_relevant_nodes: known_relevant_nodes.into_iter().collect(),
            known_relevant_couples: couples,
        })
    }

    /// Profile whose enclosure is exactly the given networks, nothing pinned.
    pub fn from_networks(nets: &[&str]) -> Result<Self, TraceError> {
        let nets = nets.iter().map(|s| parse_net(s)).collect::<Result<_, _>>()?;
        Self::new(nets, [], [])
    }

    pub fn from_json(text: &str) -> Result<Self, TraceError> {
        let file: ProfileFile = serde_json::from_str(text)?;
        let nets = file
            .internal_addrs
            .iter()
            .map(|s| parse_net(s))
            .collect::<Result<_, _>>()?;
        Self::new(nets, file.known_relevant_nodes, file.known_relevant_couples)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TraceError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        let file = ProfileFile {
            internal_addrs: self.internal_addrs.iter().map(|n| n.to_string()).collect(),
            known_relevant_nodes: self.known_relevant_nodes.iter().copied().collect(),
            known_relevant_couples: self
                .known_relevant_couples
                .iter()
                .map(|p| (p.lo(), p.hi()))
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("profile serializes")
    }

    pub fn is_internal(&self, addr: Ipv4Addr) -> bool {
        self.internal_addrs.iter().any(|n| n.contains(&addr))
    }

    pub fn internal_addrs(&self) -> &[Ipv4Net] {
        &self.internal_addrs
    }

    pub fn known_relevant_nodes(&self) -> &BTreeSet<Ipv4Addr> {
        &self.known_relevant_nodes
    }

    pub fn known_relevant_couples(&self) -> &BTreeSet<AddrPair> {
        &self.known_relevant_couples
    }
}
