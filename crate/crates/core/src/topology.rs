//! Communication graph of the enclosure and relevance ranking of its nodes and
//! couples.
//!
//! Relevance is one admissible scoring among many: a node scores the weighted
//! mean of its percentile ranks on degree (`fan_in + fan_out`) and on traffic
//! rate (`in_rate + out_rate`); a couple scores the percentile rank of its
//! message rate. Percentile rank of `v` is the fraction of values `<= v`, so
//! it is scale-free and the largest value always ranks 1.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::net::Ipv4Addr;

use crate::num::MICROS_PER_SEC;
use crate::trace_ingest::{AddrPair, EnclosureProfile, PacketRecord, Transport};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NodeStats {
    /// Distinct peers that sent to this node.
    pub fan_in: usize,
    /// Distinct peers this node sent to.
    pub fan_out: usize,
    pub in_msgs: u64,
    pub out_msgs: u64,
    pub in_rate_pps: f64,
    pub out_rate_pps: f64,
    pub protocols: BTreeSet<Transport>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EdgeStats {
    pub msgs: u64,
    pub bytes: u64,
    /// Messages from the lower to the higher address.
    pub lo_to_hi: u64,
    pub hi_to_lo: u64,
    pub rate_pps: f64,
    pub protocols: BTreeSet<Transport>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TopologyGraph {
    pub nodes: BTreeMap<Ipv4Addr, NodeStats>,
    pub edges: BTreeMap<AddrPair, EdgeStats>,
    /// Whole seconds spanned by the stream, first to last bucket inclusive.
    pub observation_span_s: f64,
}

/// Builds the graph in one pass. Packets addressed to their own source create
/// the node but no edge.
pub fn build_graph(stream: &[PacketRecord]) -> TopologyGraph {
    let mut g = TopologyGraph::default();
    let (Some(first), Some(last)) = (
        stream.iter().map(|r| r.ts_micros).min(),
        stream.iter().map(|r| r.ts_micros).max(),
    ) else {
        return g;
    };
    g.observation_span_s =
        (last.div_euclid(MICROS_PER_SEC) - first.div_euclid(MICROS_PER_SEC) + 1) as f64;

    let mut senders: BTreeMap<Ipv4Addr, BTreeSet<Ipv4Addr>> = BTreeMap::new();
    let mut receivers: BTreeMap<Ipv4Addr, BTreeSet<Ipv4Addr>> = BTreeMap::new();
    for r in stream {
        g.nodes.entry(r.src_addr).or_default().protocols.insert(r.transport);
        g.nodes.entry(r.dst_addr).or_default().protocols.insert(r.transport);
        let Some(pair) = AddrPair::new(r.src_addr, r.dst_addr) else {
            continue;
        };
        g.nodes.get_mut(&r.src_addr).unwrap().out_msgs += 1;
        g.nodes.get_mut(&r.dst_addr).unwrap().in_msgs += 1;
        receivers.entry(r.src_addr).or_default().insert(r.dst_addr);
        senders.entry(r.dst_addr).or_default().insert(r.src_addr);

        let e = g.edges.entry(pair).or_default();
        e.msgs += 1;
        e.bytes += r.wire_len as u64;
        if pair.lo() == r.src_addr {
            e.lo_to_hi += 1;
        } else {
            e.hi_to_lo += 1;
        }
        e.protocols.insert(r.transport);
    }

    let span = g.observation_span_s;
    for (addr, n) in g.nodes.iter_mut() {
        n.fan_in = senders.get(addr).map_or(0, BTreeSet::len);
        n.fan_out = receivers.get(addr).map_or(0, BTreeSet::len);
        n.in_rate_pps = n.in_msgs as f64 / span;
        n.out_rate_pps = n.out_msgs as f64 / span;
    }
    for e in g.edges.values_mut() {
        e.rate_pps = e.msgs as f64 / span;
    }
    g
}

/// Weights of the two node signals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelevanceWeights {
    pub degree: f64,
    pub rate: f64,
}

impl Default for RelevanceWeights {
    fn default() -> Self {
        Self { degree: 0.5, rate: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RelevanceReport {
    /// Top nodes plus pinned ones, score non-increasing, ties by address.
    pub ranked_nodes: Vec<(Ipv4Addr, f64)>,
    pub ranked_couples: Vec<(AddrPair, f64)>,
    /// Entries forced in by the enclosure profile; they always score 1.
    pub pinned_nodes: Vec<Ipv4Addr>,
    pub pinned_couples: Vec<AddrPair>,
}

fn percentile_ranks(values: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    values
        .iter()
        .map(|v| sorted.partition_point(|x| x <= v) as f64 / n)
        .collect()
}

fn rank<K: Ord + Copy>(scored: Vec<(K, f64)>, top_k: usize, pinned: &BTreeSet<K>) -> Vec<(K, f64)> {
    let mut scored: Vec<(K, f64)> = scored.into_iter().filter(|(k, _)| !pinned.contains(k)).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut out: Vec<(K, f64)> = pinned.iter().map(|&k| (k, 1.0)).collect();
    out.extend(scored.into_iter().take(top_k));
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out
}

/// Scores every node and couple and keeps the `top_k` of each, plus every
/// entry pinned by `profile` (even when absent from the graph).
pub fn score_relevance(
    graph: &TopologyGraph,
    profile: &EnclosureProfile,
    top_k: usize,
    weights: RelevanceWeights,
) -> RelevanceReport {
    let top_k = top_k.max(1);
    let addrs: Vec<Ipv4Addr> = graph.nodes.keys().copied().collect();
    let degree: Vec<f64> = graph.nodes.values().map(|n| (n.fan_in + n.fan_out) as f64).collect();
    let rate: Vec<f64> = graph.nodes.values().map(|n| n.in_rate_pps + n.out_rate_pps).collect();
    let (deg_rank, rate_rank) = (percentile_ranks(&degree), percentile_ranks(&rate));
    let wsum = weights.degree + weights.rate;
    let node_scores = addrs
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let s = if wsum > 0.0 {
                (weights.degree * deg_rank[i] + weights.rate * rate_rank[i]) / wsum
            } else {
                0.0
            };
            (a, s)
        })
        .collect();

    let pairs: Vec<AddrPair> = graph.edges.keys().copied().collect();
    let edge_rates: Vec<f64> = graph.edges.values().map(|e| e.rate_pps).collect();
    let couple_scores = pairs.into_iter().zip(percentile_ranks(&edge_rates)).collect();

    RelevanceReport {
        ranked_nodes: rank(node_scores, top_k, profile.known_relevant_nodes()),
        ranked_couples: rank(couple_scores, top_k, profile.known_relevant_couples()),
        pinned_nodes: profile.known_relevant_nodes().iter().copied().collect(),
        pinned_couples: profile.known_relevant_couples().iter().copied().collect(),
    }
}

fn protocols(set: &BTreeSet<Transport>) -> String {
    set.iter().map(|t| t.as_str()).collect::<Vec<_>>().join(";")
}

/// `addr,fan_in,fan_out,in_msgs,out_msgs,in_rate_pps,out_rate_pps,protocols`
pub fn write_nodes_csv<W: Write>(out: W, graph: &TopologyGraph) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["addr", "fan_in", "fan_out", "in_msgs", "out_msgs", "in_rate_pps", "out_rate_pps", "protocols"])?;
    for (a, n) in &graph.nodes {
        w.write_record([
            a.to_string(),
            n.fan_in.to_string(),
            n.fan_out.to_string(),
            n.in_msgs.to_string(),
            n.out_msgs.to_string(),
            format!("{:?}", n.in_rate_pps),
            format!("{:?}", n.out_rate_pps),
            protocols(&n.protocols),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `addr_a,addr_b,msgs,bytes,a_to_b,b_to_a,rate_pps,protocols`, lower address first.
pub fn write_edges_csv<W: Write>(out: W, graph: &TopologyGraph) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["addr_a", "addr_b", "msgs", "bytes", "a_to_b", "b_to_a", "rate_pps", "protocols"])?;
    for (p, e) in &graph.edges {
        w.write_record([
            p.lo().to_string(),
            p.hi().to_string(),
            e.msgs.to_string(),
            e.bytes.to_string(),
            e.lo_to_hi.to_string(),
            e.hi_to_lo.to_string(),
            format!("{:?}", e.rate_pps),
            protocols(&e.protocols),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Undirected DOT graph, edges labelled with their message rate.
pub fn write_dot<W: Write>(mut out: W, graph: &TopologyGraph, report: Option<&RelevanceReport>) -> std::io::Result<()> {
    let relevant: BTreeMap<Ipv4Addr, f64> = report
        .map(|r| r.ranked_nodes.iter().copied().collect())
        .unwrap_or_default();
    writeln!(out, "graph enclosure {{")?;
    for (a, n) in &graph.nodes {
        write!(out, "  \"{a}\" [label=\"{a}\\nin {} / out {}\"", n.fan_in, n.fan_out)?;
        if let Some(s) = relevant.get(a) {
            write!(out, ", relevance={s:.3}, style=bold")?;
        }
        writeln!(out, "];")?;
    }
    for (p, e) in &graph.edges {
        writeln!(out, "  \"{}\" -- \"{}\" [label=\"{:.2} pps\", weight={}];", p.lo(), p.hi(), e.rate_pps, e.msgs)?;
    }
    writeln!(out, "}}")
}

/// `kind,id,score,pinned`
pub fn write_relevance_csv<W: Write>(out: W, report: &RelevanceReport) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["kind", "id", "score", "pinned"])?;
    for (a, s) in &report.ranked_nodes {
        let pinned = report.pinned_nodes.contains(a);
        w.write_record(["node".to_string(), a.to_string(), format!("{s:?}"), pinned.to_string()])?;
    }
    for (p, s) in &report.ranked_couples {
        let pinned = report.pinned_couples.contains(p);
        w.write_record(["couple".to_string(), p.to_string(), format!("{s:?}"), pinned.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
