//! Distributed greedy offloading decisions and their evaluation.
//!
//! Each task independently picks the execution node (its own, or a server)
//! whose round-trip cost over the weighted extended graph is smallest. The
//! realized routes induce per-link traffic; feeding that traffic back
//! through the contention estimator yields the empirical per-task latency.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::graph::{ExtendedGraph, InstanceTopology, LinkId, NodeId};
use crate::instance::Task;
use crate::queueing::{congestion_flags, estimate_delays, DelayVector, QueueingError};
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error("link {0} has zero rate")]
    ZeroRate(LinkId),
    #[error("weight vector length {got} does not match link count {want}")]
    DimensionMismatch { got: usize, want: usize },
    #[error("source {0} out of range")]
    SourceOutOfRange(NodeId),
    #[error("candidate {candidate} is not in the action space of the task at {task_source}")]
    CandidateOutsideActionSpace { task_source: NodeId, candidate: NodeId },
    #[error("node {0} has no virtual link")]
    NoVirtualLink(NodeId),
    #[error("node {0} unreachable from source")]
    Unreachable(NodeId),
    #[error("nonpositive weight on link {0}")]
    NonpositiveWeight(LinkId),
    #[error(transparent)]
    Queueing(#[from] QueueingError),
}

/// Contention-free weights: per-packet delay `1/r` on every extended link.
pub fn baseline_weights<S: Scalar>(ext: &ExtendedGraph<S>) -> Result<DelayVector<S>, PolicyError> {
    let mut values = Vec::with_capacity(ext.link_count());
    for (e, &r) in ext.rates().iter().enumerate() {
        if r <= S::zero() {
            return Err(PolicyError::ZeroRate(e));
        }
        values.push(S::one() / r);
    }
    Ok(DelayVector::new(values))
}

/// Single-source shortest paths over the extended graph.
#[derive(Debug, Clone)]
pub struct ShortestPathTree<S: Scalar = f64> {
    pub source: NodeId,
    /// Distance per extended node.
    pub dist: Vec<S>,
    /// Predecessor (node, link) per extended node; `None` at the source.
    pub parent: Vec<Option<(NodeId, LinkId)>>,
    /// Physical links on the chosen path per extended node.
    pub hops: Vec<u32>,
}

impl<S: Scalar> ShortestPathTree<S> {
    /// Ordered link ids of the chosen path from the source to `target`.
    pub fn path_links(&self, target: NodeId) -> Vec<LinkId> {
        let mut links = Vec::new();
        let mut v = target;
        while let Some((u, link)) = self.parent[v] {
            links.push(link);
            v = u;
        }
        links.reverse();
        links
    }
}

struct HeapEntry<S> {
    dist: S,
    node: NodeId,
}

impl<S: Scalar> PartialEq for HeapEntry<S> {
    fn eq(&self, other: &Self) -> bool {
        self.dist == other.dist && self.node == other.node
    }
}
impl<S: Scalar> Eq for HeapEntry<S> {}
impl<S: Scalar> Ord for HeapEntry<S> {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap, we want smallest (dist, node).
        other
            .dist
            .partial_cmp(&self.dist)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.node.cmp(&self.node))
    }
}
impl<S: Scalar> PartialOrd for HeapEntry<S> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Exact single-source shortest distances on the weighted extended graph.
///
/// All weights must be positive. Ties between equal-cost paths are broken
/// toward the lexicographically smaller parent node id, which pins the hop
/// counts along the chosen paths.
pub fn shortest_paths<S: Scalar>(
    ext: &ExtendedGraph<S>,
    weights: &DelayVector<S>,
    source: NodeId,
) -> Result<ShortestPathTree<S>, PolicyError> {
    if weights.len() != ext.link_count() {
        return Err(PolicyError::DimensionMismatch {
            got: weights.len(),
            want: ext.link_count(),
        });
    }
    if source >= ext.node_count() {
        return Err(PolicyError::SourceOutOfRange(source));
    }
    if let Some(e) = weights.values.iter().position(|&w| w <= S::zero()) {
        return Err(PolicyError::NonpositiveWeight(e));
    }

    let n = ext.node_count();
    let mut dist = vec![S::infinity(); n];
    let mut parent: Vec<Option<(NodeId, LinkId)>> = vec![None; n];
    let mut hops = vec![0u32; n];
    let mut settled = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[source] = S::zero();
    heap.push(HeapEntry {
        dist: S::zero(),
        node: source,
    });

    while let Some(HeapEntry { dist: d, node: u }) = heap.pop() {
        if settled[u] || d > dist[u] {
            continue;
        }
        settled[u] = true;
        for &(v, link) in ext.neighbors(u) {
            if settled[v] {
                continue;
            }
            let nd = dist[u] + weights.values[link];
            let hop = if ext.is_virtual_link(link) { 0 } else { 1 };
            if nd < dist[v] {
                dist[v] = nd;
                parent[v] = Some((u, link));
                hops[v] = hops[u] + hop;
                heap.push(HeapEntry { dist: nd, node: v });
            } else if nd == dist[v] {
                if let Some((p, _)) = parent[v] {
                    if u < p {
                        parent[v] = Some((u, link));
                        hops[v] = hops[u] + hop;
                    }
                }
            }
        }
    }

    if let Some(v) = (0..n).find(|&v| !settled[v]) {
        // Cannot happen on a connected extended graph.
        return Err(PolicyError::Unreachable(v));
    }
    Ok(ShortestPathTree {
        source,
        dist,
        parent,
        hops,
    })
}

/// Round-trip cost of executing `task` on `candidate`, given the shortest
/// path tree rooted at the task source: upload packets pay the way to the
/// candidate's virtual node, download packets the way back, and a job can
/// cross at most one physical link per slot.
pub fn offload_cost<S: Scalar>(
    task: &Task,
    candidate: NodeId,
    tree: &ShortestPathTree<S>,
    ext: &ExtendedGraph<S>,
) -> Result<S, PolicyError> {
    if candidate != task.source && !task.servers.contains(&candidate) {
        return Err(PolicyError::CandidateOutsideActionSpace {
            task_source: task.source,
            candidate,
        });
    }
    let vnode = ext
        .virtual_node(candidate)
        .ok_or(PolicyError::NoVirtualLink(candidate))?;
    let upload = S::from_count(task.upload_packets as usize) * tree.dist[vnode];
    let download = S::from_count(task.download_packets as usize) * tree.dist[candidate];
    let hop_bound = S::from_count(2 * tree.hops[candidate] as usize);
    Ok((upload + download).max(hop_bound))
}

/// Chosen execution node and upload route per task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OffloadDecision {
    /// Execution node per task (the source itself or a server).
    pub choices: Vec<NodeId>,
    /// Upload route per task: ordered extended links from the source to the
    /// virtual link of the chosen node (inclusive).
    pub routes: Vec<Vec<LinkId>>,
}

/// Greedy per-task decisions: the candidate of minimal cost, evaluating the
/// local node first and then servers in ascending id, keeping the earlier
/// candidate on ties.
pub fn decide<S: Scalar>(
    ext: &ExtendedGraph<S>,
    weights: &DelayVector<S>,
    tasks: &[Task],
) -> Result<OffloadDecision, PolicyError> {
    let mut choices = Vec::with_capacity(tasks.len());
    let mut routes = Vec::with_capacity(tasks.len());
    for task in tasks {
        let tree = shortest_paths(ext, weights, task.source)?;
        let mut servers = task.servers.clone();
        servers.sort_unstable();
        servers.dedup();
        let mut best_node = task.source;
        let mut best_cost = offload_cost(task, task.source, &tree, ext)?;
        for &s in &servers {
            let cost = offload_cost(task, s, &tree, ext)?;
            if cost < best_cost {
                best_cost = cost;
                best_node = s;
            }
        }
        let vnode = ext
            .virtual_node(best_node)
            .ok_or(PolicyError::NoVirtualLink(best_node))?;
        choices.push(best_node);
        routes.push(tree.path_links(vnode));
    }
    Ok(OffloadDecision { choices, routes })
}

/// The all-local decision: every task executes at its source.
pub fn local_decision<S: Scalar>(
    ext: &ExtendedGraph<S>,
    tasks: &[Task],
) -> Result<OffloadDecision, PolicyError> {
    let mut choices = Vec::with_capacity(tasks.len());
    let mut routes = Vec::with_capacity(tasks.len());
    for task in tasks {
        let link = ext
            .virtual_link(task.source)
            .ok_or(PolicyError::NoVirtualLink(task.source))?;
        choices.push(task.source);
        routes.push(vec![link]);
    }
    Ok(OffloadDecision { choices, routes })
}

/// Link-by-task route incidence. The upload matrix marks every extended link
/// on a task's route; the download matrix reuses the physical links only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouteMatrices {
    link_count: usize,
    physical_count: usize,
    routes: Vec<Vec<LinkId>>,
    physical_hops: Vec<u32>,
}

impl RouteMatrices {
    pub fn link_count(&self) -> usize {
        self.link_count
    }

    pub fn task_count(&self) -> usize {
        self.routes.len()
    }

    /// Upload incidence: link `e` on the route of task `j`.
    pub fn gamma(&self, e: LinkId, j: usize) -> bool {
        self.routes[j].contains(&e)
    }

    /// Download incidence: physical links of the route only.
    pub fn gamma_minus(&self, e: LinkId, j: usize) -> bool {
        e < self.physical_count && self.gamma(e, j)
    }

    /// Upload route of task `j` in path order.
    pub fn route(&self, j: usize) -> &[LinkId] {
        &self.routes[j]
    }

    /// Physical hop count per task (column sums of the download matrix).
    pub fn physical_hops(&self, j: usize) -> u32 {
        self.physical_hops[j]
    }

    /// Traffic intensity per extended link: routes weighted by the tasks'
    /// packet rates.
    pub fn traffic<S: Scalar>(&self, tasks: &[Task]) -> Vec<S> {
        let mut rho = vec![S::zero(); self.link_count];
        for (j, route) in self.routes.iter().enumerate() {
            let lambda = S::from_f64_lossy(tasks[j].packet_rate());
            for &e in route {
                rho[e] += lambda;
            }
        }
        rho
    }
}

/// Builds the route incidence matrices from per-task decisions.
pub fn build_route_matrices<S: Scalar>(
    decision: &OffloadDecision,
    ext: &ExtendedGraph<S>,
) -> RouteMatrices {
    let physical_count = ext.physical_link_count();
    let physical_hops = decision
        .routes
        .iter()
        .map(|route| route.iter().filter(|&&e| e < physical_count).count() as u32)
        .collect();
    RouteMatrices {
        link_count: ext.link_count(),
        physical_count,
        routes: decision.routes.clone(),
        physical_hops,
    }
}

/// Empirical execution latency per task from the per-link delays `tau`:
/// upload packets pay every route link, download packets the physical ones,
/// floored by two slots per physical hop.
pub fn empirical_latency<S: Scalar>(
    tau: &DelayVector<S>,
    matrices: &RouteMatrices,
    tasks: &[Task],
) -> Result<Vec<S>, PolicyError> {
    if tau.len() != matrices.link_count() {
        return Err(PolicyError::DimensionMismatch {
            got: tau.len(),
            want: matrices.link_count(),
        });
    }
    let mut out = Vec::with_capacity(tasks.len());
    for (j, task) in tasks.iter().enumerate() {
        let mut upload_sum = S::zero();
        let mut download_sum = S::zero();
        for &e in matrices.route(j) {
            upload_sum += tau.values[e];
            if e < matrices.physical_count {
                download_sum += tau.values[e];
            }
        }
        let transfer = S::from_count(task.upload_packets as usize) * upload_sum
            + S::from_count(task.download_packets as usize) * download_sum;
        let hop_bound = S::from_count(2 * matrices.physical_hops(j) as usize);
        out.push(transfer.max(hop_bound));
    }
    Ok(out)
}

/// Outcome of evaluating one decision vector on one task draw.
#[derive(Debug, Clone)]
pub struct PolicyEvaluation<S: Scalar = f64> {
    pub latencies: Vec<S>,
    /// Per task: some link on its route has an unstable queue.
    pub congested: Vec<bool>,
    /// Total latency over tasks.
    pub objective: S,
}

impl<S: Scalar> PolicyEvaluation<S> {
    pub fn congestion_ratio(&self) -> f64 {
        if self.congested.is_empty() {
            return 0.0;
        }
        self.congested.iter().filter(|&&c| c).count() as f64 / self.congested.len() as f64
    }
}

/// Evaluates fixed decisions: build routes, push the induced traffic through
/// the contention estimator, and price every task at the resulting delays.
pub fn evaluate_decision<S: Scalar>(
    topo: &InstanceTopology<S>,
    tasks: &[Task],
    decision: &OffloadDecision,
    horizon: u32,
    iters: u32,
) -> Result<PolicyEvaluation<S>, PolicyError> {
    let matrices = build_route_matrices(decision, &topo.ext);
    let rho = matrices.traffic::<S>(tasks);
    let (tau, svc) = estimate_delays(&topo.conflict, topo.ext.rates(), &rho, horizon, iters)?;
    let latencies = empirical_latency(&tau, &matrices, tasks)?;
    let unstable = congestion_flags(&svc, &rho);
    let congested: Vec<bool> = (0..tasks.len())
        .map(|j| matrices.route(j).iter().any(|&e| unstable[e]))
        .collect();
    let objective = latencies.iter().copied().sum();
    Ok(PolicyEvaluation {
        latencies,
        congested,
        objective,
    })
}

/// Decides under the given link weights and evaluates the outcome.
pub fn evaluate_policy<S: Scalar>(
    topo: &InstanceTopology<S>,
    tasks: &[Task],
    weights: &DelayVector<S>,
    horizon: u32,
    iters: u32,
) -> Result<(PolicyEvaluation<S>, OffloadDecision), PolicyError> {
    let decision = decide(&topo.ext, weights, tasks)?;
    let eval = evaluate_decision(topo, tasks, &decision, horizon, iters)?;
    Ok((eval, decision))
}
