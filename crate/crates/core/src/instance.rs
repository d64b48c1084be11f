//! Randomized generation of network instances and task sets, with seedable
//! RNG streams and JSONL persistence.
//!
//! An instance is drawn in a fixed order: connectivity graph (preferential
//! attachment), relay set (minimum vertex cut), server pool (smaller side of
//! the global minimum edge cut), roles, then rates. Every draw comes from a
//! stream derived from `(master seed, split, index)`, so generation is
//! reproducible and embarrassingly parallel across instances. Files fix all
//! sampled values; nothing downstream ever re-samples.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{
    line_graph, ConflictGraph, ConnectivityGraph, ExtendedGraph, GraphError, InstanceTopology,
    NodeId, NodeRole,
};
use crate::rng;
use crate::scalar::Scalar;

pub const DEFAULT_ATTACHMENT: usize = 2;
pub const DEFAULT_UPLOAD_PACKETS: u32 = 100;
pub const DEFAULT_DOWNLOAD_PACKETS: u32 = 1;

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("preferential attachment needs n > nu >= 1, got n={n}, nu={nu}")]
    BaParams { n: usize, nu: usize },
    #[error("too many relays")]
    TooManyRelays,
    #[error("no edge nodes to draw task sources from")]
    NoEdgeNodes,
    #[error("graph needs at least 2 nodes for a cut")]
    TooSmallForCut,
    #[error("task source {0} is not an edge node")]
    TaskOnNonEdgeNode(NodeId),
    #[error("task at {0} must upload at least one packet")]
    NoUploadPackets(NodeId),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed instance file: {0}")]
    Json(#[from] serde_json::Error),
}

/// A recurring job stream sourced at an edge node.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub source: NodeId,
    /// Servers this task may offload to.
    pub servers: Vec<NodeId>,
    /// Jobs per time slot.
    pub job_rate: f64,
    pub upload_packets: u32,
    pub download_packets: u32,
}

impl Task {
    pub fn total_packets(&self) -> u32 {
        self.upload_packets + self.download_packets
    }

    /// Packets per time slot fed into the network by this task.
    pub fn packet_rate(&self) -> f64 {
        self.job_rate * f64::from(self.total_packets())
    }
}

pub type TaskSet = Vec<Task>;

/// One simulated network: topology, roles, and rates, all fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkInstance {
    pub seed: u64,
    pub graph: ConnectivityGraph,
    pub roles: Vec<NodeRole>,
    /// Per physical link, packets per slot.
    pub link_rates: Vec<f64>,
    /// Per node, packets per slot; zero on relays.
    pub service_rates: Vec<f64>,
}

impl NetworkInstance {
    /// Draws a full instance for `(master_seed, split, index)`.
    pub fn generate(
        size: usize,
        attachment: usize,
        master_seed: u64,
        split: &str,
        index: u64,
    ) -> Result<Self, InstanceError> {
        let seed = rng::derive_key(master_seed, split, index);
        let mut stream = rng::stream(master_seed, split, index);
        let graph = generate_ba(size, attachment, &mut stream)?;
        let relays = select_relays(&graph);
        let partition = partition_stoer_wagner(&graph)?;
        let roles = assign_roles(&graph, &relays, &partition, &mut stream)?;
        let (link_rates, service_rates) = sample_rates(&graph, &roles, &mut stream);
        Ok(Self {
            seed,
            graph,
            roles,
            link_rates,
            service_rates,
        })
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    pub fn servers(&self) -> Vec<NodeId> {
        self.nodes_with_role(NodeRole::Server)
    }

    pub fn edge_nodes(&self) -> Vec<NodeId> {
        self.nodes_with_role(NodeRole::Edge)
    }

    pub fn relays(&self) -> Vec<NodeId> {
        self.nodes_with_role(NodeRole::Relay)
    }

    fn nodes_with_role(&self, role: NodeRole) -> Vec<NodeId> {
        self.roles
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == role)
            .map(|(v, _)| v)
            .collect()
    }

    /// Conflict graph: the line graph of the connectivity graph.
    pub fn conflict_graph(&self) -> Result<ConflictGraph, GraphError> {
        line_graph(&self.graph)
    }

    pub fn extended<S: Scalar>(&self) -> Result<ExtendedGraph<S>, GraphError> {
        let link_rates: Vec<S> = self.link_rates.iter().map(|&r| S::from_f64_lossy(r)).collect();
        let service_rates: Vec<S> =
            self.service_rates.iter().map(|&r| S::from_f64_lossy(r)).collect();
        ExtendedGraph::new(
            self.graph.clone(),
            self.roles.clone(),
            &link_rates,
            &service_rates,
        )
    }

    /// Builds all derived graphs once.
    pub fn topology<S: Scalar>(&self) -> Result<InstanceTopology<S>, GraphError> {
        Ok(InstanceTopology::new(self.extended()?, self.conflict_graph()?))
    }

    /// Task draw `draw_index` for this instance, from its own stream.
    pub fn sample_tasks(&self, draw_index: u64) -> Result<TaskSet, InstanceError> {
        let mut stream = rng::stream(self.seed, "tasks", draw_index);
        sample_tasks(&self.roles, &mut stream)
    }
}

/// Barabási–Albert preferential attachment, seeded with the complete graph
/// on `attachment + 1` nodes; every later node attaches `attachment` edges
/// to distinct targets picked proportionally to current degree.
pub fn generate_ba(
    n: usize,
    attachment: usize,
    rng: &mut impl Rng,
) -> Result<ConnectivityGraph, InstanceError> {
    if attachment < 1 || n <= attachment {
        return Err(InstanceError::BaParams { n, nu: attachment });
    }
    let seed_nodes = attachment + 1;
    let mut edges: Vec<(NodeId, NodeId)> = Vec::new();
    for u in 0..seed_nodes {
        for v in (u + 1)..seed_nodes {
            edges.push((u, v));
        }
    }
    // One entry per unit of degree; uniform draws from it are
    // degree-proportional draws over nodes.
    let mut repeated: Vec<NodeId> = Vec::new();
    for v in 0..seed_nodes {
        repeated.extend(std::iter::repeat_n(v, attachment));
    }
    for new in seed_nodes..n {
        let mut targets: Vec<NodeId> = Vec::with_capacity(attachment);
        while targets.len() < attachment {
            let t = repeated[rng.gen_range(0..repeated.len())];
            if !targets.contains(&t) {
                targets.push(t);
            }
        }
        for &t in &targets {
            edges.push((t, new));
        }
        repeated.extend_from_slice(&targets);
        repeated.extend(std::iter::repeat_n(new, attachment));
    }
    Ok(ConnectivityGraph::new(n, &edges)?)
}

/// Minimum vertex cut of a connected graph: the smallest node set whose
/// removal disconnects it, computed by max-flow on the node-split transform
/// over all non-adjacent vertex pairs. Ties go to the lexicographically
/// smallest id set. Complete graphs have no cut; returns the empty set.
pub fn select_relays(g: &ConnectivityGraph) -> Vec<NodeId> {
    let n = g.node_count();
    let mut flow = SplitFlow::new(g);
    let mut best: Option<Vec<NodeId>> = None;
    for s in 0..n {
        for t in (s + 1)..n {
            if g.has_edge(s, t) {
                continue;
            }
            let cut = flow.min_vertex_cut(s, t);
            let better = match &best {
                None => true,
                Some(b) => cut.len() < b.len() || (cut.len() == b.len() && cut < *b),
            };
            if better {
                best = Some(cut);
            }
        }
    }
    match best {
        Some(cut) => cut,
        None => {
            warn!("complete graph has no vertex cut; returning no relays");
            Vec::new()
        }
    }
}

/// Node-split max-flow scratch space: node v becomes v_in = 2v, v_out = 2v+1
/// with a unit arc between them; each undirected edge becomes two
/// infinite-capacity arcs between the out/in sides.
struct SplitFlow {
    node_count: usize,
    // Arc lists per split vertex; arcs[i] indexes into cap/to/rev pairs.
    to: Vec<Vec<usize>>,
    cap_init: Vec<u32>,
    cap: Vec<u32>,
    heads: Vec<usize>,
    pairs: Vec<usize>,
}

const FLOW_INF: u32 = u32::MAX / 2;

impl SplitFlow {
    fn new(g: &ConnectivityGraph) -> Self {
        let n = g.node_count();
        let mut builder = SplitFlow {
            node_count: n,
            to: vec![Vec::new(); 2 * n],
            cap_init: Vec::new(),
            cap: Vec::new(),
            heads: Vec::new(),
            pairs: Vec::new(),
        };
        for v in 0..n {
            builder.add_arc(2 * v, 2 * v + 1, 1);
        }
        for &(u, v) in g.edges() {
            builder.add_arc(2 * u + 1, 2 * v, FLOW_INF);
            builder.add_arc(2 * v + 1, 2 * u, FLOW_INF);
        }
        builder
    }

    fn add_arc(&mut self, from: usize, to: usize, cap: u32) {
        let fwd = self.heads.len();
        self.to[from].push(fwd);
        self.heads.push(to);
        self.cap_init.push(cap);
        self.pairs.push(fwd + 1);
        let bwd = self.heads.len();
        self.to[to].push(bwd);
        self.heads.push(from);
        self.cap_init.push(0);
        self.pairs.push(fwd);
    }

    /// Unit arcs of s and t are irrelevant (flow starts at s_out, ends at
    /// t_in), so the max flow equals the number of internally disjoint
    /// s-t paths, i.e. the minimum vertex cut size for non-adjacent s, t.
    fn min_vertex_cut(&mut self, s: NodeId, t: NodeId) -> Vec<NodeId> {
        self.cap.clone_from(&self.cap_init);
        let source = 2 * s + 1;
        let sink = 2 * t;
        while self.augment(source, sink) {}
        // Residual reachability from the source: a split node whose in-side
        // is reachable but out-side is not sits on the cut.
        let reach = self.reachable(source);
        (0..self.node_count)
            .filter(|&v| v != s && v != t && reach[2 * v] && !reach[2 * v + 1])
            .collect()
    }

    fn augment(&mut self, source: usize, sink: usize) -> bool {
        let mut prev_arc = vec![usize::MAX; self.to.len()];
        let mut queue = std::collections::VecDeque::new();
        let mut seen = vec![false; self.to.len()];
        seen[source] = true;
        queue.push_back(source);
        'bfs: while let Some(v) = queue.pop_front() {
            for &arc in &self.to[v] {
                let w = self.heads[arc];
                if !seen[w] && self.cap[arc] > 0 {
                    seen[w] = true;
                    prev_arc[w] = arc;
                    if w == sink {
                        break 'bfs;
                    }
                    queue.push_back(w);
                }
            }
        }
        if !seen[sink] {
            return false;
        }
        // Unit bottlenecks: augment by 1 along the path.
        let mut v = sink;
        while v != source {
            let arc = prev_arc[v];
            self.cap[arc] -= 1;
            self.cap[self.pairs[arc]] += 1;
            v = self.heads[self.pairs[arc]];
        }
        true
    }

    fn reachable(&self, source: usize) -> Vec<bool> {
        let mut seen = vec![false; self.to.len()];
        let mut stack = vec![source];
        seen[source] = true;
        while let Some(v) = stack.pop() {
            for &arc in &self.to[v] {
                let w = self.heads[arc];
                if !seen[w] && self.cap[arc] > 0 {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen
    }
}

/// Global minimum edge cut with unit weights (Stoer–Wagner by maximum
/// adjacency search). Returns `(bigger side, smaller side)`, both sorted.
pub fn partition_stoer_wagner(
    g: &ConnectivityGraph,
) -> Result<(Vec<NodeId>, Vec<NodeId>), InstanceError> {
    let n = g.node_count();
    if n < 2 {
        return Err(InstanceError::TooSmallForCut);
    }
    // Dense merged-weight matrix; unit edge weights accumulate on merges.
    let mut w = vec![vec![0u64; n]; n];
    for &(u, v) in g.edges() {
        w[u][v] = 1;
        w[v][u] = 1;
    }
    let mut groups: Vec<Vec<NodeId>> = (0..n).map(|v| vec![v]).collect();
    let mut active: Vec<usize> = (0..n).collect();
    let mut best: Option<(u64, Vec<NodeId>)> = None;

    while active.len() > 1 {
        // Maximum adjacency order from the first active vertex; ties go to
        // the smaller id.
        let mut in_a = vec![false; n];
        let mut connect = vec![0u64; n];
        let start = active[0];
        in_a[start] = true;
        for &v in &active {
            connect[v] = w[start][v];
        }
        let mut order = vec![start];
        for _ in 1..active.len() {
            let mut pick = usize::MAX;
            for &v in &active {
                if !in_a[v] && (pick == usize::MAX || connect[v] > connect[pick]) {
                    pick = v;
                }
            }
            in_a[pick] = true;
            order.push(pick);
            for &v in &active {
                if !in_a[v] {
                    connect[v] += w[pick][v];
                }
            }
        }
        let t = *order.last().expect("phase order nonempty");
        let s = order[order.len() - 2];
        let cut_weight = connect[t];
        if best.as_ref().is_none_or(|(bw, _)| cut_weight < *bw) {
            let mut side = groups[t].clone();
            side.sort_unstable();
            best = Some((cut_weight, side));
        }
        // Merge t into s.
        for &v in &active {
            if v != s && v != t {
                w[s][v] += w[t][v];
                w[v][s] = w[s][v];
            }
        }
        w[s][t] = 0;
        w[t][s] = 0;
        let moved = std::mem::take(&mut groups[t]);
        groups[s].extend(moved);
        active.retain(|&v| v != t);
    }

    let (_, side) = best.expect("at least one phase");
    let mut other: Vec<NodeId> = (0..n).filter(|v| !side.contains(v)).collect();
    other.sort_unstable();
    if side.len() > other.len() {
        Ok((side, other))
    } else {
        Ok((other, side))
    }
}

fn round_half_even(x: f64) -> usize {
    x.round_ties_even().max(0.0) as usize
}

/// Assigns roles: the given relays, then servers drawn from the smaller cut
/// side first (overflowing into the bigger side), the rest edge nodes.
pub fn assign_roles(
    g: &ConnectivityGraph,
    relays: &[NodeId],
    partition: &(Vec<NodeId>, Vec<NodeId>),
    rng: &mut impl Rng,
) -> Result<Vec<NodeRole>, InstanceError> {
    let n = g.node_count();
    let share = rng.gen_range(0.1..0.25);
    let server_count = round_half_even(share * n as f64);
    let is_relay = {
        let mut mask = vec![false; n];
        for &v in relays {
            mask[v] = true;
        }
        mask
    };
    if n - relays.len() < server_count {
        return Err(InstanceError::TooManyRelays);
    }
    let (bigger, smaller) = partition;
    let mut pool_small: Vec<NodeId> = smaller.iter().copied().filter(|&v| !is_relay[v]).collect();
    let mut pool_big: Vec<NodeId> = bigger.iter().copied().filter(|&v| !is_relay[v]).collect();

    let mut servers: Vec<NodeId> = Vec::with_capacity(server_count);
    let from_small = server_count.min(pool_small.len());
    servers.extend(draw_without_replacement(&mut pool_small, from_small, rng));
    let overflow = server_count - from_small;
    if overflow > pool_big.len() {
        return Err(InstanceError::TooManyRelays);
    }
    servers.extend(draw_without_replacement(&mut pool_big, overflow, rng));

    let mut roles = vec![NodeRole::Edge; n];
    for &v in relays {
        roles[v] = NodeRole::Relay;
    }
    for &v in &servers {
        roles[v] = NodeRole::Server;
    }
    Ok(roles)
}

fn draw_without_replacement(
    pool: &mut [NodeId],
    count: usize,
    rng: &mut impl Rng,
) -> Vec<NodeId> {
    let (picked, _) = pool.partial_shuffle(rng, count);
    picked.to_vec()
}

/// Inverse-CDF Pareto draw: mode * (1 - u)^(-1/shape).
fn pareto(shape: f64, mode: f64, rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.gen();
    mode * (1.0 - u).powf(-1.0 / shape)
}

pub const PARETO_SHAPE: f64 = 2.0;
pub const SERVER_RATE_MODE: f64 = 100.0;
pub const EDGE_RATE_MODE: f64 = 8.0;

/// Link rates uniform in [30, 70); service rates Pareto(shape 2) with mode
/// 100 on servers and 8 on edge nodes, zero on relays.
pub fn sample_rates(
    g: &ConnectivityGraph,
    roles: &[NodeRole],
    rng: &mut impl Rng,
) -> (Vec<f64>, Vec<f64>) {
    let link_rates = (0..g.edge_count()).map(|_| rng.gen_range(30.0..70.0)).collect();
    let service_rates = roles
        .iter()
        .map(|role| match role {
            NodeRole::Server => pareto(PARETO_SHAPE, SERVER_RATE_MODE, rng),
            NodeRole::Edge => pareto(PARETO_SHAPE, EDGE_RATE_MODE, rng),
            NodeRole::Relay => 0.0,
        })
        .collect();
    (link_rates, service_rates)
}

/// Draws one task set: a uniform share of edge nodes become sources (without
/// replacement), each with the full server set, 100 upload packets, 1
/// download packet, and a uniform job rate.
pub fn sample_tasks(roles: &[NodeRole], rng: &mut impl Rng) -> Result<TaskSet, InstanceError> {
    let mut edge_nodes: Vec<NodeId> = roles
        .iter()
        .enumerate()
        .filter(|(_, r)| **r == NodeRole::Edge)
        .map(|(v, _)| v)
        .collect();
    if edge_nodes.is_empty() {
        return Err(InstanceError::NoEdgeNodes);
    }
    let servers: Vec<NodeId> = roles
        .iter()
        .enumerate()
        .filter(|(_, r)| **r == NodeRole::Server)
        .map(|(v, _)| v)
        .collect();

    let share = rng.gen_range(0.3..1.0);
    let count = round_half_even(share * edge_nodes.len() as f64);
    let mut sources = draw_without_replacement(&mut edge_nodes, count, rng);
    sources.sort_unstable();
    Ok(sources
        .into_iter()
        .map(|source| Task {
            source,
            servers: servers.clone(),
            job_rate: rng.gen_range(0.015..0.075),
            upload_packets: DEFAULT_UPLOAD_PACKETS,
            download_packets: DEFAULT_DOWNLOAD_PACKETS,
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: usize,
    pub role: NodeRole,
    pub service_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinkRecord {
    pub u: usize,
    pub v: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskRecord {
    pub source: usize,
    pub job_rate: f64,
    pub eta_u: u32,
    pub eta_d: u32,
}

/// One JSONL line: a network instance plus its frozen task draws.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub seed: u64,
    pub nodes: Vec<NodeRecord>,
    pub links: Vec<LinkRecord>,
    pub task_draws: Vec<Vec<TaskRecord>>,
}

impl InstanceRecord {
    /// Generates an instance and its task draws in one go.
    pub fn generate(
        size: usize,
        attachment: usize,
        master_seed: u64,
        split: &str,
        index: u64,
        task_draws: usize,
    ) -> Result<Self, InstanceError> {
        let instance = NetworkInstance::generate(size, attachment, master_seed, split, index)?;
        let draws = (0..task_draws as u64)
            .map(|d| instance.sample_tasks(d))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::from_instance(&instance, &draws))
    }

    pub fn from_instance(instance: &NetworkInstance, draws: &[TaskSet]) -> Self {
        let nodes = (0..instance.node_count())
            .map(|id| NodeRecord {
                id,
                role: instance.roles[id],
                service_rate: instance.service_rates[id],
            })
            .collect();
        let links = instance
            .graph
            .edges()
            .iter()
            .zip(&instance.link_rates)
            .map(|(&(u, v), &rate)| LinkRecord { u, v, rate })
            .collect();
        let task_draws = draws
            .iter()
            .map(|tasks| {
                tasks
                    .iter()
                    .map(|t| TaskRecord {
                        source: t.source,
                        job_rate: t.job_rate,
                        eta_u: t.upload_packets,
                        eta_d: t.download_packets,
                    })
                    .collect()
            })
            .collect();
        Self {
            seed: instance.seed,
            nodes,
            links,
            task_draws,
        }
    }

    /// Rebuilds the instance and task draws, validating the graph and the
    /// task sources.
    pub fn into_instance(self) -> Result<(NetworkInstance, Vec<TaskSet>), InstanceError> {
        let node_count = self.nodes.len();
        let mut roles = vec![NodeRole::Edge; node_count];
        let mut service_rates = vec![0.0; node_count];
        for node in &self.nodes {
            if node.id >= node_count {
                return Err(GraphError::NodeOutOfRange(node.id).into());
            }
            roles[node.id] = node.role;
            service_rates[node.id] = node.service_rate;
        }
        let edges: Vec<(NodeId, NodeId)> = self.links.iter().map(|l| (l.u, l.v)).collect();
        let graph = ConnectivityGraph::new(node_count, &edges)?;
        // Records are canonical, so link rates align with the sorted edges.
        let mut link_rates = vec![0.0; graph.edge_count()];
        for l in &self.links {
            let id = graph
                .edges()
                .binary_search(&(l.u.min(l.v), l.u.max(l.v)))
                .map_err(|_| GraphError::DuplicateEdge(l.u, l.v))?;
            link_rates[id] = l.rate;
        }
        let servers: Vec<NodeId> = roles
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == NodeRole::Server)
            .map(|(v, _)| v)
            .collect();
        let mut draws = Vec::with_capacity(self.task_draws.len());
        for draw in &self.task_draws {
            let mut tasks = Vec::with_capacity(draw.len());
            for record in draw {
                if record.source >= node_count || roles[record.source] != NodeRole::Edge {
                    return Err(InstanceError::TaskOnNonEdgeNode(record.source));
                }
                if record.eta_u == 0 {
                    return Err(InstanceError::NoUploadPackets(record.source));
                }
                tasks.push(Task {
                    source: record.source,
                    servers: servers.clone(),
                    job_rate: record.job_rate,
                    upload_packets: record.eta_u,
                    download_packets: record.eta_d,
                });
            }
            draws.push(tasks);
        }
        let instance = NetworkInstance {
            seed: self.seed,
            graph,
            roles,
            link_rates,
            service_rates,
        };
        Ok((instance, draws))
    }
}

/// Dataset manifest written next to the instance files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub sizes: Vec<usize>,
    pub train_count: usize,
    pub test_count: usize,
    pub task_draws: usize,
    pub master_seed: u64,
}

pub fn write_jsonl(path: &Path, records: &[InstanceRecord]) -> Result<(), InstanceError> {
    let mut out = BufWriter::new(File::create(path)?);
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<InstanceRecord>, InstanceError> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn ba_seed_graph_is_complete() {
        let mut rng = stream(1, "ba", 0);
        let g = generate_ba(3, 2, &mut rng).unwrap();
        assert_eq!(g.edge_count(), 3);
    }

    #[test]
    fn ba_edge_count_formula() {
        // nu*(n - nu - 1) + nu*(nu+1)/2
        let mut rng = stream(1, "ba", 1);
        let g = generate_ba(20, 2, &mut rng).unwrap();
        assert_eq!(g.edge_count(), 37);
        let g = generate_ba(110, 2, &mut rng).unwrap();
        assert_eq!(g.edge_count(), 217);
        assert!((0..110).map(|v| g.degree(v)).max().unwrap() > 8);
    }

    #[test]
    fn ba_rejects_bad_params() {
        let mut rng = stream(1, "ba", 2);
        assert!(matches!(
            generate_ba(2, 2, &mut rng),
            Err(InstanceError::BaParams { n: 2, nu: 2 })
        ));
        assert!(matches!(
            generate_ba(5, 0, &mut rng),
            Err(InstanceError::BaParams { .. })
        ));
    }

    #[test]
    fn relays_on_path_is_middle_node() {
        let g = ConnectivityGraph::new(3, &[(0, 1), (1, 2)]).unwrap();
        assert_eq!(select_relays(&g), vec![1]);
    }

    #[test]
    fn relays_on_two_triangles_is_articulation_point() {
        // Triangles {0,1,2} and {2,3,4} sharing node 2.
        let g = ConnectivityGraph::new(
            5,
            &[(0, 1), (1, 2), (0, 2), (2, 3), (3, 4), (2, 4)],
        )
        .unwrap();
        assert_eq!(select_relays(&g), vec![2]);
    }

    #[test]
    fn relays_of_complete_graph_empty() {
        let g = ConnectivityGraph::new(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])
            .unwrap();
        assert_eq!(select_relays(&g), Vec::<NodeId>::new());
    }

    #[test]
    fn relays_disconnect_ba_graphs() {
        for idx in 0..10 {
            let mut rng = stream(99, "ba-cut", idx);
            let g = generate_ba(20, 2, &mut rng).unwrap();
            let relays = select_relays(&g);
            assert!(!relays.is_empty());
            assert!(relays.len() <= 2, "BA(nu=2) vertex connectivity is at most 2");
            assert!(!g.connected_without(&relays));
        }
    }

    #[test]
    fn stoer_wagner_path_cut() {
        let g = ConnectivityGraph::new(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let (bigger, smaller) = partition_stoer_wagner(&g).unwrap();
        assert_eq!(bigger.len() + smaller.len(), 4);
        assert!(smaller == vec![0] || smaller == vec![3], "smaller = {smaller:?}");
        assert_eq!(crossing_edges(&g, &smaller), 1);
    }

    #[test]
    fn stoer_wagner_barbell() {
        // Two K4s joined by one edge (3,4).
        let mut edges = Vec::new();
        for u in 0..4 {
            for v in (u + 1)..4 {
                edges.push((u, v));
            }
        }
        for u in 4..8 {
            for v in (u + 1)..8 {
                edges.push((u, v));
            }
        }
        edges.push((3, 4));
        let g = ConnectivityGraph::new(8, &edges).unwrap();
        let (bigger, smaller) = partition_stoer_wagner(&g).unwrap();
        assert_eq!(crossing_edges(&g, &smaller), 1);
        assert!(smaller == vec![0, 1, 2, 3] || smaller == vec![4, 5, 6, 7]);
        assert_eq!(bigger.len(), 4);
    }

    #[test]
    fn stoer_wagner_triangle() {
        let g = ConnectivityGraph::new(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let (bigger, smaller) = partition_stoer_wagner(&g).unwrap();
        assert_eq!(smaller.len(), 1);
        assert_eq!(bigger.len(), 2);
        assert_eq!(crossing_edges(&g, &smaller), 2);
    }

    fn crossing_edges(g: &ConnectivityGraph, side: &[NodeId]) -> usize {
        g.edges()
            .iter()
            .filter(|&&(u, v)| side.contains(&u) != side.contains(&v))
            .count()
    }

    #[test]
    fn pareto_inverse_cdf_values() {
        // Mode is the minimum; the median of Pareto(2, q) is q * sqrt(2).
        assert_eq!(100.0 * (1.0f64 - 0.0).powf(-0.5), 100.0);
        let median = 100.0 * (1.0f64 - 0.5).powf(-1.0 / 2.0);
        assert!((median - 100.0 * std::f64::consts::SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn uniform_rate_mean() {
        let mut rng = stream(5, "uniform-mean", 0);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| rng.gen_range(30.0..70.0)).sum::<f64>() / n as f64;
        assert!((mean - 50.0).abs() < 0.2, "mean = {mean}");
    }

    #[test]
    fn sampled_rates_respect_role_bounds() {
        let mut rng = stream(5, "rates", 0);
        let g = generate_ba(20, 2, &mut rng).unwrap();
        let relays = select_relays(&g);
        let partition = partition_stoer_wagner(&g).unwrap();
        let roles = assign_roles(&g, &relays, &partition, &mut rng).unwrap();
        let (link_rates, service_rates) = sample_rates(&g, &roles, &mut rng);
        assert!(link_rates.iter().all(|&r| (30.0..70.0).contains(&r)));
        for (v, role) in roles.iter().enumerate() {
            match role {
                NodeRole::Server => assert!(service_rates[v] >= 100.0),
                NodeRole::Edge => assert!(service_rates[v] >= 8.0),
                NodeRole::Relay => assert_eq!(service_rates[v], 0.0),
            }
        }
    }

    #[test]
    fn server_count_rounding() {
        assert_eq!(round_half_even(0.1 * 20.0), 2);
        assert_eq!(round_half_even(0.25 * 110.0), 28);
        assert_eq!(round_half_even(0.3 * 10.0), 3);
        assert_eq!(round_half_even(2.5), 2);
        assert_eq!(round_half_even(3.5), 4);
    }

    #[test]
    fn assign_roles_prefers_smaller_side_then_overflows() {
        // Partition with one eligible node on the smaller side forces
        // overflow into the bigger side whenever more servers are needed.
        let g = ConnectivityGraph::new(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let partition = (vec![1, 2, 3], vec![0]);
        for idx in 0..20 {
            let mut rng = stream(7, "roles", idx);
            let roles = assign_roles(&g, &[], &partition, &mut rng).unwrap();
            let servers: Vec<NodeId> = (0..4).filter(|&v| roles[v] == NodeRole::Server).collect();
            if !servers.is_empty() {
                assert!(servers.contains(&0), "smaller side drawn first: {servers:?}");
            }
        }
    }

    #[test]
    fn assign_roles_errors_when_relays_crowd_out_servers() {
        let g = ConnectivityGraph::new(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let partition = (vec![1, 2, 3], vec![0]);
        let mut rng = stream(7, "roles-err", 0);
        // All nodes relayed: no room for any server.
        let err = assign_roles(&g, &[0, 1, 2, 3], &partition, &mut rng).unwrap_err();
        assert!(matches!(err, InstanceError::TooManyRelays));
        assert_eq!(err.to_string(), "too many relays");
    }

    #[test]
    fn task_draws_match_quoted_parameters() {
        let instance = NetworkInstance::generate(20, 2, 11, "train", 0).unwrap();
        let edge_count = instance.edge_nodes().len();
        for draw in 0..5 {
            let tasks = instance.sample_tasks(draw).unwrap();
            assert!(!tasks.is_empty());
            assert!(tasks.len() <= edge_count);
            let mut seen = std::collections::BTreeSet::new();
            for t in &tasks {
                assert_eq!(t.upload_packets, 100);
                assert_eq!(t.download_packets, 1);
                assert_eq!(t.total_packets(), 101);
                assert!((0.015..0.075).contains(&t.job_rate));
                assert_eq!(t.servers, instance.servers());
                assert!(instance.roles[t.source] == NodeRole::Edge);
                assert!(seen.insert(t.source), "one task per edge node");
            }
        }
    }

    #[test]
    fn task_count_share_bounds() {
        let roles = vec![NodeRole::Edge; 10];
        for idx in 0..50 {
            let mut rng = stream(13, "tasks", idx);
            let tasks = sample_tasks(&roles, &mut rng).unwrap();
            assert!((3..=10).contains(&tasks.len()), "|J| = {}", tasks.len());
        }
        let mut rng = stream(13, "tasks-empty", 0);
        assert!(matches!(
            sample_tasks(&[NodeRole::Relay], &mut rng),
            Err(InstanceError::NoEdgeNodes)
        ));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = NetworkInstance::generate(30, 2, 42, "train", 7).unwrap();
        let b = NetworkInstance::generate(30, 2, 42, "train", 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.sample_tasks(3).unwrap(), b.sample_tasks(3).unwrap());
        let c = NetworkInstance::generate(30, 2, 42, "test", 7).unwrap();
        assert_ne!(a, c, "train and test streams differ");
    }

    #[test]
    fn extended_link_count_identity() {
        let instance = NetworkInstance::generate(20, 2, 3, "train", 4).unwrap();
        let ext = instance.extended::<f64>().unwrap();
        let expected = instance.graph.edge_count()
            + instance.edge_nodes().len()
            + instance.servers().len();
        assert_eq!(ext.link_count(), expected);
    }

    #[test]
    fn record_roundtrip() {
        let record = InstanceRecord::generate(25, 2, 17, "test", 2, 3).unwrap();
        let json = serde_json::to_string(&record).unwrap();
        let parsed: InstanceRecord = serde_json::from_str(&json).unwrap();
        let (a, draws_a) = record.clone().into_instance().unwrap();
        let (b, draws_b) = parsed.into_instance().unwrap();
        assert_eq!(a, b);
        assert_eq!(draws_a, draws_b);
        assert_eq!(draws_a.len(), 3);
    }

    #[test]
    fn jsonl_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("instances.jsonl");
        let records: Vec<InstanceRecord> = (0..4)
            .map(|i| InstanceRecord::generate(20, 2, 23, "train", i, 2).unwrap())
            .collect();
        write_jsonl(&path, &records).unwrap();
        let back = read_jsonl(&path).unwrap();
        assert_eq!(records.len(), back.len());
        for (a, b) in records.iter().zip(&back) {
            assert_eq!(serde_json::to_string(a).unwrap(), serde_json::to_string(b).unwrap());
        }
    }
}
