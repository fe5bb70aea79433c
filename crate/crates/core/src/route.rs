//! Lane-level road network and shortest-path routing.
//!
//! Network files are plain text with a `NODES` section (`id x y`) followed by an
//! `EDGES` section (`from to length speed_limit lane_change lane_id`). Blank
//! lines and `#` comments are ignored.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt::Write as _;

use thiserror::Error;

use crate::geom::Point2;

pub type NodeId = u64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RouteError {
    #[error("network file line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("unknown node {0}")]
    Topology(NodeId),
    #[error("no route")]
    NoRoute,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub to: NodeId,
    pub length: f64,
    pub speed_limit: f64,
    pub lane_change_allowed: bool,
    pub lane_id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Distance,
    TravelTime,
}

impl Metric {
    pub fn cost(&self, e: &Edge) -> f64 {
        match self {
            Metric::Distance => e.length,
            Metric::TravelTime => e.length / e.speed_limit,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoadNetwork {
    nodes: BTreeMap<NodeId, Point2>,
    /// Outgoing edges per node, sorted by target id.
    edges: BTreeMap<NodeId, Vec<Edge>>,
    blocked: BTreeSet<(NodeId, NodeId)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutePath {
    pub nodes: Vec<NodeId>,
    /// Speed limit of each segment; one shorter than `nodes`.
    pub speed_limits: Vec<f64>,
    pub total_cost: f64,
    pub length: f64,
}

impl RoutePath {
    pub fn polyline(&self, net: &RoadNetwork) -> Vec<Point2> {
        self.nodes.iter().map(|n| net.nodes[n]).collect()
    }
}

impl RoadNetwork {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, id: NodeId, p: Point2) {
        self.nodes.insert(id, p);
        self.edges.entry(id).or_default();
    }

    pub fn add_edge(&mut self, from: NodeId, edge: Edge) -> Result<(), RouteError> {
        for n in [from, edge.to] {
            if !self.nodes.contains_key(&n) {
                return Err(RouteError::Topology(n));
            }
        }
        let out = self.edges.get_mut(&from).unwrap();
        match out.binary_search_by_key(&edge.to, |e| e.to) {
            Ok(i) => out[i] = edge,
            Err(i) => out.insert(i, edge),
        }
        Ok(())
    }

    pub fn node(&self, id: NodeId) -> Option<Point2> {
        self.nodes.get(&id).copied()
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, Point2)> + '_ {
        self.nodes.iter().map(|(k, v)| (*k, *v))
    }

    pub fn edges_from(&self, id: NodeId) -> &[Edge] {
        self.edges.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn edge(&self, from: NodeId, to: NodeId) -> Option<&Edge> {
        self.edges_from(from).iter().find(|e| e.to == to)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Excludes an edge from routing, as if its cost were infinite.
    pub fn block_edge(&mut self, from: NodeId, to: NodeId) -> bool {
        self.edge(from, to).is_some() && self.blocked.insert((from, to))
    }

    pub fn unblock_all(&mut self) {
        self.blocked.clear();
    }

    pub fn is_blocked(&self, from: NodeId, to: NodeId) -> bool {
        self.blocked.contains(&(from, to))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("NODES\n");
        for (id, p) in &self.nodes {
            writeln!(s, "{id} {} {}", p.x, p.y).unwrap();
        }
        s.push_str("EDGES\n");
        for (from, out) in &self.edges {
            for e in out {
                writeln!(
                    s,
                    "{from} {} {} {} {} {}",
                    e.to, e.length, e.speed_limit, e.lane_change_allowed as u8, e.lane_id
                )
                .unwrap();
            }
        }
        s
    }
}

pub fn load_network(text: &str) -> Result<RoadNetwork, RouteError> {
    #[derive(PartialEq)]
    enum Section {
        None,
        Nodes,
        Edges,
    }
    let mut net = RoadNetwork::new();
    let mut section = Section::None;
    let mut pending = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |msg: &str| RouteError::Format {
            line,
            msg: msg.to_string(),
        };
        match content {
            "NODES" => {
                section = Section::Nodes;
                continue;
            }
            "EDGES" => {
                section = Section::Edges;
                continue;
            }
            _ => {}
        }
        let f: Vec<&str> = content.split_whitespace().collect();
        let num = |k: usize| -> Result<f64, RouteError> {
            f[k].parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(&format!("bad number {:?}", f[k])))
        };
        let id = |k: usize| -> Result<NodeId, RouteError> {
            f[k].parse::<NodeId>().map_err(|_| err(&format!("bad node id {:?}", f[k])))
        };
        match section {
            Section::None => return Err(err("expected NODES or EDGES header")),
            Section::Nodes => {
                if f.len() != 3 {
                    return Err(err("node lines are `id x y`"));
                }
                let n = id(0)?;
                if net.nodes.contains_key(&n) {
                    return Err(err(&format!("duplicate node {n}")));
                }
                net.add_node(n, Point2::new(num(1)?, num(2)?));
            }
            Section::Edges => {
                if f.len() != 6 {
                    return Err(err("edge lines are `from to length speed_limit lane_change lane_id`"));
                }
                let lane_change_allowed = match f[4] {
                    "0" => false,
                    "1" => true,
                    other => return Err(err(&format!("lane_change must be 0 or 1, found {other:?}"))),
                };
                let edge = Edge {
                    to: id(1)?,
                    length: num(2)?,
                    speed_limit: num(3)?,
                    lane_change_allowed,
                    lane_id: f[5].parse().map_err(|_| err("bad lane id"))?,
                };
                if !(edge.speed_limit > 0.0) {
                    return Err(err("speed limit must be positive"));
                }
                pending.push((line, id(0)?, edge));
            }
        }
    }
    let mut seen = BTreeSet::new();
    for (line, from, edge) in pending {
        for n in [from, edge.to] {
            if !net.nodes.contains_key(&n) {
                return Err(RouteError::Topology(n));
            }
        }
        if !seen.insert((from, edge.to)) {
            return Err(RouteError::Format {
                line,
                msg: format!("duplicate edge {from} -> {}", edge.to),
            });
        }
        let straight = net.nodes[&from].dist(&net.nodes[&edge.to]);
        if edge.length < straight - 1e-6 {
            return Err(RouteError::Format {
                line,
                msg: format!("edge length {} shorter than node distance {straight}", edge.length),
            });
        }
        net.add_edge(from, edge)?;
    }
    Ok(net)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct QueueItem {
    cost: f64,
    node: NodeId,
}

impl Eq for QueueItem {}

impl Ord for QueueItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.cost.total_cmp(&self.cost).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for QueueItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra over unblocked edges. Nodes are settled in `(cost, id)` order and
/// a node's predecessor only changes on a strict improvement.
pub fn shortest_path(net: &RoadNetwork, start: NodeId, goal: NodeId, metric: Metric) -> Result<RoutePath, RouteError> {
    for n in [start, goal] {
        if !net.nodes.contains_key(&n) {
            return Err(RouteError::Topology(n));
        }
    }
    let mut dist: BTreeMap<NodeId, f64> = BTreeMap::new();
    let mut prev: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    let mut done = BTreeSet::new();
    let mut heap = BinaryHeap::new();
    dist.insert(start, 0.0);
    heap.push(QueueItem { cost: 0.0, node: start });
    while let Some(QueueItem { cost, node }) = heap.pop() {
        if !done.insert(node) {
            continue;
        }
        if node == goal {
            break;
        }
        for e in net.edges_from(node) {
            if net.is_blocked(node, e.to) || done.contains(&e.to) {
                continue;
            }
            let c = cost + metric.cost(e);
            if dist.get(&e.to).is_none_or(|d| c < *d) {
                dist.insert(e.to, c);
                prev.insert(e.to, node);
                heap.push(QueueItem { cost: c, node: e.to });
            }
        }
    }
    if !done.contains(&goal) {
        return Err(RouteError::NoRoute);
    }
    let mut nodes = vec![goal];
    while let Some(p) = prev.get(nodes.last().unwrap()) {
        nodes.push(*p);
    }
    nodes.reverse();
    Ok(path_from_nodes(net, nodes, metric))
}

fn path_from_nodes(net: &RoadNetwork, nodes: Vec<NodeId>, metric: Metric) -> RoutePath {
    let mut total_cost = 0.0;
    let mut length = 0.0;
    let mut speed_limits = Vec::with_capacity(nodes.len().saturating_sub(1));
    for w in nodes.windows(2) {
        let e = net.edge(w[0], w[1]).expect("path follows edges");
        total_cost += metric.cost(e);
        length += e.length;
        speed_limits.push(e.speed_limit);
    }
    RoutePath {
        nodes,
        speed_limits,
        total_cost,
        length,
    }
}

/// Closest node by Euclidean distance; the smaller id wins ties.
pub fn nearest_node(net: &RoadNetwork, p: Point2) -> Result<NodeId, RouteError> {
    let mut best: Option<(f64, NodeId)> = None;
    for (id, q) in &net.nodes {
        let d = q.dist(&p);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, *id));
        }
    }
    best.map(|b| b.1).ok_or(RouteError::NoRoute)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRIANGLE: &str = "\
# A=1 B=2 C=3
NODES
1 0 0
2 100 0
3 100 100
EDGES
1 2 100 10 0 1
2 3 100 10 0 1
1 3 250 25 1 2
";

    #[test]
    fn load_basic_networks() {
        assert!(load_network("NODES\nEDGES\n").unwrap().is_empty());
        let net = load_network("NODES\n1 0 0\n2 10 0\nEDGES\n1 2 10 5 0 7\n").unwrap();
        assert_eq!(net.edge_count(), 1);
        assert_eq!(shortest_path(&net, 1, 2, Metric::Distance).unwrap().nodes, vec![1, 2]);
        assert_eq!(
            load_network("NODES\n1 0 0\nEDGES\n1 9 10 5 0 7\n").unwrap_err(),
            RouteError::Topology(9)
        );
        assert!(matches!(
            load_network("NODES\n1 0 0\n2 x 0\n"),
            Err(RouteError::Format { line: 3, .. })
        ));
        assert!(matches!(
            load_network("NODES\n1 0 0\n2 10 0\nEDGES\n1 2 5 5 0 7\n"),
            Err(RouteError::Format { line: 5, .. })
        ));
    }

    #[test]
    fn triangle_metrics() {
        let net = load_network(TRIANGLE).unwrap();
        let d = shortest_path(&net, 1, 3, Metric::Distance).unwrap();
        assert_eq!(d.nodes, vec![1, 2, 3]);
        assert_eq!(d.total_cost, 200.0);
        let t = shortest_path(&net, 1, 3, Metric::TravelTime).unwrap();
        assert_eq!(t.nodes, vec![1, 3]);
        assert_eq!(t.total_cost, 10.0);
        let same = shortest_path(&net, 2, 2, Metric::Distance).unwrap();
        assert_eq!((same.nodes, same.total_cost), (vec![2], 0.0));
        assert_eq!(shortest_path(&net, 3, 1, Metric::Distance).unwrap_err(), RouteError::NoRoute);
    }

    #[test]
    fn blocking_reroutes() {
        let mut net = load_network(TRIANGLE).unwrap();
        assert!(net.block_edge(2, 3));
        let d = shortest_path(&net, 1, 3, Metric::Distance).unwrap();
        assert_eq!(d.nodes, vec![1, 3]);
        assert!(!net.block_edge(3, 1));
    }

    #[test]
    fn nearest_node_ties() {
        let net = load_network("NODES\n5 0 0\n2 2 0\n9 1 5\nEDGES\n").unwrap();
        assert_eq!(nearest_node(&net, Point2::new(0.0, 0.0)).unwrap(), 5);
        assert_eq!(nearest_node(&net, Point2::new(1.0, 0.0)).unwrap(), 2);
        assert_eq!(nearest_node(&RoadNetwork::new(), Point2::new(0.0, 0.0)).unwrap_err(), RouteError::NoRoute);
    }

    #[test]
    fn text_round_trip() {
        let net = load_network(TRIANGLE).unwrap();
        assert_eq!(load_network(&net.to_text()).unwrap(), net);
    }
}
