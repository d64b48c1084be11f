//! Immutable graph representations and derived-graph constructions.
//!
//! Node and link ids are dense integers so every per-link quantity is a plain
//! vector. Physical links are ordered lexicographically by `(min endpoint,
//! max endpoint)`; virtual links follow, ordered by owner node id. All
//! derived graphs inherit that ordering, which makes vector indices stable
//! across modules and runs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

pub type NodeId = usize;
pub type LinkId = usize;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("node id {0} out of range")]
    NodeOutOfRange(NodeId),
    #[error("self-loop at node {0}")]
    SelfLoop(NodeId),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(NodeId, NodeId),
    #[error("graph is not connected")]
    Disconnected,
    #[error("no links")]
    NoLinks,
    #[error("role vector length {got} does not match node count {want}")]
    RoleCount { got: usize, want: usize },
    #[error("rate vector length {got} does not match expected {want}")]
    RateCount { got: usize, want: usize },
    #[error("service rate of node {0} must be positive")]
    NonpositiveServiceRate(NodeId),
    #[error("relay node {0} must have service rate 0")]
    RelayServiceRate(NodeId),
}

/// Role of a wireless device in the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeRole {
    /// Sensor with limited compute; may source a task.
    Edge,
    /// Pure relay; no compute capacity.
    Relay,
    /// Compute server.
    Server,
}

/// Undirected, connected, simple graph of devices and direct wireless links.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectivityGraph {
    node_count: usize,
    edges: Vec<(NodeId, NodeId)>,
    adjacency: Vec<Vec<(NodeId, LinkId)>>,
}

impl ConnectivityGraph {
    /// Builds a graph from an edge list, normalizing each edge to
    /// `(min, max)` and sorting into the canonical order. Rejects
    /// self-loops, duplicates, out-of-range ids, and disconnected graphs.
    pub fn new(node_count: usize, edges: &[(NodeId, NodeId)]) -> Result<Self, GraphError> {
        let mut canon: Vec<(NodeId, NodeId)> = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a >= node_count {
                return Err(GraphError::NodeOutOfRange(a));
            }
            if b >= node_count {
                return Err(GraphError::NodeOutOfRange(b));
            }
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            canon.push((a.min(b), a.max(b)));
        }
        canon.sort_unstable();
        if let Some(w) = canon.windows(2).find(|w| w[0] == w[1]) {
            return Err(GraphError::DuplicateEdge(w[0].0, w[0].1));
        }

        let mut adjacency = vec![Vec::new(); node_count];
        for (id, &(u, v)) in canon.iter().enumerate() {
            adjacency[u].push((v, id));
            adjacency[v].push((u, id));
        }

        let graph = Self {
            node_count,
            edges: canon,
            adjacency,
        };
        if !graph.is_connected() {
            return Err(GraphError::Disconnected);
        }
        Ok(graph)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Canonical edge list: sorted `(min, max)` pairs; the position of a
    /// pair is its link id.
    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    pub fn endpoints(&self, link: LinkId) -> (NodeId, NodeId) {
        self.edges[link]
    }

    /// Neighbors of `v` with the connecting link id.
    pub fn neighbors(&self, v: NodeId) -> &[(NodeId, LinkId)] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.adjacency[v].len()
    }

    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        self.edges.binary_search(&(u.min(v), u.max(v))).is_ok()
    }

    fn is_connected(&self) -> bool {
        self.connected_without(&[])
    }

    /// True when the graph stays connected after removing `removed` nodes.
    /// Removing everything (or all but one node) counts as connected.
    pub fn connected_without(&self, removed: &[NodeId]) -> bool {
        let mut blocked = vec![false; self.node_count];
        for &v in removed {
            blocked[v] = true;
        }
        let Some(start) = (0..self.node_count).find(|&v| !blocked[v]) else {
            return true;
        };
        let mut seen = vec![false; self.node_count];
        let mut stack = vec![start];
        seen[start] = true;
        let mut visited = 1;
        while let Some(v) = stack.pop() {
            for &(w, _) in &self.adjacency[v] {
                if !blocked[w] && !seen[w] {
                    seen[w] = true;
                    visited += 1;
                    stack.push(w);
                }
            }
        }
        visited == (0..self.node_count).filter(|&v| !blocked[v]).count()
    }
}

/// Line-graph structure shared by the conflict graph and the extended line
/// graph: one vertex per edge of the base graph, adjacency = shared endpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
struct LineGraphData {
    vertex_count: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
    degree: Vec<usize>,
}

fn line_graph_of(node_count: usize, edges: &[(NodeId, NodeId)]) -> Result<LineGraphData, GraphError> {
    if edges.is_empty() {
        return Err(GraphError::NoLinks);
    }
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); node_count];
    for (id, &(u, v)) in edges.iter().enumerate() {
        incident[u].push(id);
        incident[v].push(id);
    }
    let mut lg_edges = Vec::new();
    for ids in &incident {
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                lg_edges.push((a.min(b), a.max(b)));
            }
        }
    }
    // Two simple-graph edges share at most one endpoint, so no duplicates.
    lg_edges.sort_unstable();
    let mut adjacency = vec![Vec::new(); edges.len()];
    for &(a, b) in &lg_edges {
        adjacency[a].push(b);
        adjacency[b].push(a);
    }
    for list in &mut adjacency {
        list.sort_unstable();
    }
    let degree = adjacency.iter().map(Vec::len).collect();
    Ok(LineGraphData {
        vertex_count: edges.len(),
        edges: lg_edges,
        adjacency,
        degree,
    })
}

/// Conflict relation between physical links. In this artifact it is always
/// built as the line graph of the connectivity graph (interface conflicts),
/// but arbitrary conflict pairs are accepted through [`ConflictGraph::from_conflicts`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConflictGraph {
    vertex_count: usize,
    edges: Vec<(LinkId, LinkId)>,
    adjacency: Vec<Vec<LinkId>>,
    degree: Vec<usize>,
}

impl ConflictGraph {
    pub fn from_conflicts(
        vertex_count: usize,
        conflicts: &[(LinkId, LinkId)],
    ) -> Result<Self, GraphError> {
        let mut canon: Vec<(LinkId, LinkId)> = Vec::with_capacity(conflicts.len());
        for &(a, b) in conflicts {
            if a >= vertex_count {
                return Err(GraphError::NodeOutOfRange(a));
            }
            if b >= vertex_count {
                return Err(GraphError::NodeOutOfRange(b));
            }
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            canon.push((a.min(b), a.max(b)));
        }
        canon.sort_unstable();
        canon.dedup();
        let mut adjacency = vec![Vec::new(); vertex_count];
        for &(a, b) in &canon {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        let degree = adjacency.iter().map(Vec::len).collect();
        Ok(Self {
            vertex_count,
            edges: canon,
            adjacency,
            degree,
        })
    }

    /// Number of links (vertices of the conflict graph).
    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn edges(&self) -> &[(LinkId, LinkId)] {
        &self.edges
    }

    /// Links conflicting with `link`.
    pub fn conflicts_of(&self, link: LinkId) -> &[LinkId] {
        &self.adjacency[link]
    }

    /// Conflict degree of a link.
    pub fn degree(&self, link: LinkId) -> usize {
        self.degree[link]
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degree
    }
}

/// Line graph of a connectivity graph: vertex per link, adjacency = shared
/// endpoint. Vertex order equals the canonical link order of `g`.
pub fn line_graph(g: &ConnectivityGraph) -> Result<ConflictGraph, GraphError> {
    let data = line_graph_of(g.node_count(), g.edges())?;
    Ok(ConflictGraph {
        vertex_count: data.vertex_count,
        edges: data.edges,
        adjacency: data.adjacency,
        degree: data.degree,
    })
}

/// Connectivity graph extended with one virtual node and link per compute
/// node (edge or server). The virtual link rate equals the node's service
/// rate, so job execution is modeled as one more link traversal.
#[derive(Debug, Clone)]
pub struct ExtendedGraph<S: Scalar = f64> {
    base: ConnectivityGraph,
    roles: Vec<NodeRole>,
    /// Nodes owning a virtual link, ascending; owner `owners[k]` has virtual
    /// node id `base.node_count() + k` and virtual link id `base.edge_count() + k`.
    owners: Vec<NodeId>,
    /// Virtual link index per node, where applicable.
    virtual_index: Vec<Option<usize>>,
    /// Extended link rates: physical link rates then owner service rates.
    rates: Vec<S>,
    /// Adjacency over extended nodes (physical + virtual).
    adjacency: Vec<Vec<(NodeId, LinkId)>>,
}

impl<S: Scalar> ExtendedGraph<S> {
    /// `link_rates` follow the canonical physical link order; `service_rates`
    /// are per node. Edge/server nodes need a positive service rate, relays
    /// must have rate 0.
    pub fn new(
        base: ConnectivityGraph,
        roles: Vec<NodeRole>,
        link_rates: &[S],
        service_rates: &[S],
    ) -> Result<Self, GraphError> {
        let n = base.node_count();
        if roles.len() != n {
            return Err(GraphError::RoleCount {
                got: roles.len(),
                want: n,
            });
        }
        if link_rates.len() != base.edge_count() {
            return Err(GraphError::RateCount {
                got: link_rates.len(),
                want: base.edge_count(),
            });
        }
        if service_rates.len() != n {
            return Err(GraphError::RateCount {
                got: service_rates.len(),
                want: n,
            });
        }
        let mut owners = Vec::new();
        let mut virtual_index = vec![None; n];
        for v in 0..n {
            match roles[v] {
                NodeRole::Edge | NodeRole::Server => {
                    if service_rates[v] <= S::zero() {
                        return Err(GraphError::NonpositiveServiceRate(v));
                    }
                    virtual_index[v] = Some(owners.len());
                    owners.push(v);
                }
                NodeRole::Relay => {
                    if service_rates[v] != S::zero() {
                        return Err(GraphError::RelayServiceRate(v));
                    }
                }
            }
        }

        let mut rates: Vec<S> = link_rates.to_vec();
        rates.extend(owners.iter().map(|&v| service_rates[v]));

        let mut adjacency: Vec<Vec<(NodeId, LinkId)>> = base.adjacency.clone();
        adjacency.resize(n + owners.len(), Vec::new());
        for (k, &v) in owners.iter().enumerate() {
            let vnode = n + k;
            let vlink = base.edge_count() + k;
            adjacency[v].push((vnode, vlink));
            adjacency[vnode].push((v, vlink));
        }

        Ok(Self {
            base,
            roles,
            owners,
            virtual_index,
            rates,
            adjacency,
        })
    }

    pub fn base(&self) -> &ConnectivityGraph {
        &self.base
    }

    pub fn roles(&self) -> &[NodeRole] {
        &self.roles
    }

    pub fn role(&self, v: NodeId) -> NodeRole {
        self.roles[v]
    }

    /// Total extended nodes `|V^e|`.
    pub fn node_count(&self) -> usize {
        self.base.node_count() + self.owners.len()
    }

    /// Total extended links `|E^e|`.
    pub fn link_count(&self) -> usize {
        self.rates.len()
    }

    pub fn physical_link_count(&self) -> usize {
        self.base.edge_count()
    }

    pub fn is_virtual_link(&self, link: LinkId) -> bool {
        link >= self.base.edge_count()
    }

    /// Owner of a virtual link.
    pub fn owner_of(&self, link: LinkId) -> Option<NodeId> {
        link.checked_sub(self.base.edge_count())
            .and_then(|k| self.owners.get(k).copied())
    }

    pub fn virtual_node(&self, owner: NodeId) -> Option<NodeId> {
        self.virtual_index[owner].map(|k| self.base.node_count() + k)
    }

    pub fn virtual_link(&self, owner: NodeId) -> Option<LinkId> {
        self.virtual_index[owner].map(|k| self.base.edge_count() + k)
    }

    /// Extended link rates `r^l` in canonical order.
    pub fn rates(&self) -> &[S] {
        &self.rates
    }

    pub fn link_endpoints(&self, link: LinkId) -> (NodeId, NodeId) {
        if let Some(k) = link.checked_sub(self.base.edge_count()) {
            let owner = self.owners[k];
            (owner, self.base.node_count() + k)
        } else {
            self.base.endpoints(link)
        }
    }

    /// Neighbors of an extended node with the connecting extended link id.
    pub fn neighbors(&self, v: NodeId) -> &[(NodeId, LinkId)] {
        &self.adjacency[v]
    }

    /// Edge nodes that carry no task unless one is assigned.
    pub fn edge_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.roles
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == NodeRole::Edge)
            .map(|(v, _)| v)
    }

    pub fn servers(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.roles
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == NodeRole::Server)
            .map(|(v, _)| v)
    }

    /// Extended edge list in canonical link order, for line-graph building.
    fn extended_edges(&self) -> Vec<(NodeId, NodeId)> {
        let mut edges: Vec<(NodeId, NodeId)> = self.base.edges().to_vec();
        for (k, &v) in self.owners.iter().enumerate() {
            edges.push((v, self.base.node_count() + k));
        }
        edges
    }
}

/// Line graph of the extended graph: the domain of all per-link vectors seen
/// by the GCNN.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtendedLineGraph {
    vertex_count: usize,
    adjacency: Vec<Vec<usize>>,
    degree: Vec<usize>,
    is_virtual: Vec<bool>,
    is_server_virtual: Vec<bool>,
}

impl ExtendedLineGraph {
    pub fn from_extended<S: Scalar>(ext: &ExtendedGraph<S>) -> Self {
        let edges = ext.extended_edges();
        let data = line_graph_of(ext.node_count(), &edges)
            .expect("extended graph always has links");
        let physical = ext.physical_link_count();
        let is_virtual: Vec<bool> = (0..data.vertex_count).map(|i| i >= physical).collect();
        let is_server_virtual: Vec<bool> = (0..data.vertex_count)
            .map(|i| {
                ext.owner_of(i)
                    .map(|v| ext.role(v) == NodeRole::Server)
                    .unwrap_or(false)
            })
            .collect();
        Self {
            vertex_count: data.vertex_count,
            adjacency: data.adjacency,
            degree: data.degree,
            is_virtual,
            is_server_virtual,
        }
    }

    /// Assembles a line graph from raw parts; used by tests that permute or
    /// hand-build vertex orders.
    pub fn from_parts(
        adjacency: Vec<Vec<usize>>,
        is_virtual: Vec<bool>,
        is_server_virtual: Vec<bool>,
    ) -> Self {
        let vertex_count = adjacency.len();
        assert_eq!(is_virtual.len(), vertex_count);
        assert_eq!(is_server_virtual.len(), vertex_count);
        let degree = adjacency.iter().map(Vec::len).collect();
        Self {
            vertex_count,
            adjacency,
            degree,
            is_virtual,
            is_server_virtual,
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.degree[i]
    }

    pub fn is_virtual(&self, i: usize) -> bool {
        self.is_virtual[i]
    }

    pub fn is_server_virtual(&self, i: usize) -> bool {
        self.is_server_virtual[i]
    }
}

/// Derived graphs of one network instance, built once and shared by the
/// queueing estimator, the policies, and the GCNN.
#[derive(Debug, Clone)]
pub struct InstanceTopology<S: Scalar = f64> {
    pub ext: ExtendedGraph<S>,
    pub conflict: ConflictGraph,
    pub line: ExtendedLineGraph,
}

impl<S: Scalar> InstanceTopology<S> {
    pub fn new(ext: ExtendedGraph<S>, conflict: ConflictGraph) -> Self {
        let line = ExtendedLineGraph::from_extended(&ext);
        Self { ext, conflict, line }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> ConnectivityGraph {
        ConnectivityGraph::new(3, &[(0, 1), (1, 2)]).unwrap()
    }

    #[test]
    fn rejects_malformed_graphs() {
        assert_eq!(
            ConnectivityGraph::new(2, &[(0, 0)]).unwrap_err(),
            GraphError::SelfLoop(0)
        );
        assert_eq!(
            ConnectivityGraph::new(2, &[(0, 1), (1, 0)]).unwrap_err(),
            GraphError::DuplicateEdge(0, 1)
        );
        assert_eq!(
            ConnectivityGraph::new(4, &[(0, 1), (2, 3)]).unwrap_err(),
            GraphError::Disconnected
        );
        assert_eq!(
            ConnectivityGraph::new(2, &[(0, 2)]).unwrap_err(),
            GraphError::NodeOutOfRange(2)
        );
    }

    #[test]
    fn edges_are_canonically_ordered() {
        let g = ConnectivityGraph::new(4, &[(3, 2), (1, 0), (2, 1)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2), (2, 3)]);
    }

    #[test]
    fn line_graph_of_path() {
        // Two links sharing node 1 -> a single line-graph edge.
        let lg = line_graph(&path3()).unwrap();
        assert_eq!(lg.vertex_count(), 2);
        assert_eq!(lg.edges(), &[(0, 1)]);
    }

    #[test]
    fn line_graph_of_triangle_is_triangle() {
        let g = ConnectivityGraph::new(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let lg = line_graph(&g).unwrap();
        assert_eq!(lg.vertex_count(), 3);
        assert_eq!(lg.edges().len(), 3);
        assert!(lg.degrees().iter().all(|&d| d == 2));
    }

    #[test]
    fn line_graph_of_star_is_complete() {
        // Star with 4 leaves: every pair of the 4 links shares the hub.
        let g = ConnectivityGraph::new(5, &[(0, 1), (0, 2), (0, 3), (0, 4)]).unwrap();
        let lg = line_graph(&g).unwrap();
        assert_eq!(lg.vertex_count(), 4);
        assert_eq!(lg.edges().len(), 6);
    }

    #[test]
    fn line_graph_rejects_empty() {
        let err = line_graph_of(3, &[]).unwrap_err();
        assert_eq!(err, GraphError::NoLinks);
        assert_eq!(err.to_string(), "no links");
    }

    #[test]
    fn extend_three_node_path() {
        let roles = vec![NodeRole::Edge, NodeRole::Relay, NodeRole::Server];
        let ext = ExtendedGraph::new(path3(), roles, &[40.0, 50.0], &[8.0, 0.0, 100.0]).unwrap();
        assert_eq!(ext.link_count(), 4);
        assert_eq!(ext.node_count(), 5);
        assert_eq!(ext.rates(), &[40.0, 50.0, 8.0, 100.0]);
        assert_eq!(ext.virtual_node(0), Some(3));
        assert_eq!(ext.virtual_link(2), Some(3));
        assert_eq!(ext.virtual_link(1), None);
        assert_eq!(ext.link_endpoints(2), (0, 3));
        assert!(ext.is_virtual_link(3));
        assert!(!ext.is_virtual_link(1));
    }

    #[test]
    fn extend_without_servers() {
        let roles = vec![NodeRole::Edge, NodeRole::Relay, NodeRole::Edge];
        let ext = ExtendedGraph::new(path3(), roles, &[40.0, 50.0], &[8.0, 0.0, 9.0]).unwrap();
        assert_eq!(ext.link_count(), 4);
        assert_eq!(ext.servers().count(), 0);
    }

    #[test]
    fn extend_rejects_bad_service_rates() {
        let roles = vec![NodeRole::Edge, NodeRole::Relay, NodeRole::Server];
        let err =
            ExtendedGraph::new(path3(), roles.clone(), &[40.0, 50.0], &[0.0, 0.0, 100.0])
                .unwrap_err();
        assert_eq!(err, GraphError::NonpositiveServiceRate(0));
        let err =
            ExtendedGraph::new(path3(), roles, &[40.0, 50.0], &[8.0, 1.0, 100.0]).unwrap_err();
        assert_eq!(err, GraphError::RelayServiceRate(1));
    }

    #[test]
    fn extended_line_graph_flags() {
        let roles = vec![NodeRole::Edge, NodeRole::Relay, NodeRole::Server];
        let ext = ExtendedGraph::new(path3(), roles, &[40.0, 50.0], &[8.0, 0.0, 100.0]).unwrap();
        let lg = ExtendedLineGraph::from_extended(&ext);
        assert_eq!(lg.vertex_count(), 4);
        assert_eq!(
            (0..4).map(|i| lg.is_virtual(i)).collect::<Vec<_>>(),
            vec![false, false, true, true]
        );
        assert_eq!(
            (0..4).map(|i| lg.is_server_virtual(i)).collect::<Vec<_>>(),
            vec![false, false, false, true]
        );
        // Link (0,1) shares node 0 with the edge-node virtual link and node 1
        // with link (1,2).
        assert_eq!(lg.neighbors(0), &[1, 2]);
    }
}
