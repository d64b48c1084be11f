//! Shortest-path oracle: exhaustive simple-path enumeration on small random
//! weighted graphs, checked against the label-setting search used by the
//! offloading policies.

use offloadnet::graph::{ConnectivityGraph, ExtendedGraph, NodeRole};
use offloadnet::policy::shortest_paths;
use offloadnet::queueing::DelayVector;
use rand::Rng;

/// All simple paths from `src`, minimized by total weight accumulated
/// left-to-right (the same summation order the tree search uses). Returns
/// per-target `(distance, physical_hops, unique_margin)`.
fn enumerate_best(
    ext: &ExtendedGraph<f64>,
    weights: &[f64],
    src: usize,
) -> Vec<Option<(f64, u32, bool)>> {
    let n = ext.node_count();
    let mut best: Vec<Option<(f64, u32)>> = vec![None; n];
    let mut second: Vec<f64> = vec![f64::INFINITY; n];
    let mut visited = vec![false; n];

    fn dfs(
        ext: &ExtendedGraph<f64>,
        weights: &[f64],
        v: usize,
        dist: f64,
        hops: u32,
        visited: &mut Vec<bool>,
        best: &mut Vec<Option<(f64, u32)>>,
        second: &mut Vec<f64>,
    ) {
        match best[v] {
            Some((d, _)) if dist < d => {
                second[v] = d;
                best[v] = Some((dist, hops));
            }
            Some((d, _)) => {
                if dist > d && dist < second[v] {
                    second[v] = dist;
                }
                if dist == d {
                    second[v] = d; // exact tie: margin collapses
                }
            }
            None => best[v] = Some((dist, hops)),
        }
        visited[v] = true;
        for &(w, link) in ext.neighbors(v) {
            if !visited[w] {
                let hop = if ext.is_virtual_link(link) { 0 } else { 1 };
                dfs(ext, weights, w, dist + weights[link], hops + hop, visited, best, second);
            }
        }
        visited[v] = false;
    }

    dfs(ext, weights, src, 0.0, 0, &mut visited, &mut best, &mut second);
    (0..n)
        .map(|v| best[v].map(|(d, h)| (d, h, second[v] - d > 1e-9)))
        .collect()
}

fn random_connected(n: usize, rng: &mut impl Rng) -> ConnectivityGraph {
    loop {
        let mut edges = Vec::new();
        // Random spanning tree, then extra edges.
        for v in 1..n {
            let u = rng.gen_range(0..v);
            edges.push((u, v));
        }
        for u in 0..n {
            for v in (u + 1)..n {
                if rng.gen_bool(0.25) {
                    edges.push((u, v));
                }
            }
        }
        edges.sort_unstable();
        edges.dedup();
        if let Ok(g) = ConnectivityGraph::new(n, &edges) {
            return g;
        }
    }
}

fn random_extended(rng: &mut impl Rng) -> ExtendedGraph<f64> {
    let n = rng.gen_range(2..=6);
    let g = random_connected(n, rng);
    let roles: Vec<NodeRole> = (0..n)
        .map(|_| match rng.gen_range(0..3) {
            0 => NodeRole::Edge,
            1 => NodeRole::Relay,
            _ => NodeRole::Server,
        })
        .collect();
    let link_rates: Vec<f64> = (0..g.edge_count()).map(|_| rng.gen_range(30.0..70.0)).collect();
    let service_rates: Vec<f64> = roles
        .iter()
        .map(|r| match r {
            NodeRole::Relay => 0.0,
            _ => rng.gen_range(5.0..120.0),
        })
        .collect();
    ExtendedGraph::new(g, roles, &link_rates, &service_rates).unwrap()
}

/// Acceptance criterion: 200 random weighted graphs, distances and hop
/// counts equal the enumeration oracle.
#[test]
fn matches_enumeration_on_random_graphs() {
    let mut rng = offloadnet::rng::stream(4242, "sp-oracle", 0);
    for case in 0..200 {
        let ext = random_extended(&mut rng);
        let weights: Vec<f64> = (0..ext.link_count())
            .map(|_| rng.gen_range(0.05..2.0))
            .collect();
        let dv = DelayVector::new(weights.clone());
        let src = rng.gen_range(0..ext.base().node_count());
        let tree = shortest_paths(&ext, &dv, src).unwrap();
        let oracle = enumerate_best(&ext, &weights, src);
        for v in 0..ext.node_count() {
            let (d, h, unique) = oracle[v].expect("extended graph is connected");
            assert!(
                (tree.dist[v] - d).abs() <= 1e-12 * d.max(1.0),
                "case {case}: dist to {v}: {} vs oracle {d}",
                tree.dist[v]
            );
            if unique {
                assert_eq!(
                    tree.hops[v], h,
                    "case {case}: hops to {v} on the unique optimal path"
                );
            }
        }
    }
}

/// Single physical link: distance is its weight and it counts one hop.
#[test]
fn single_link() {
    let g = ConnectivityGraph::new(2, &[(0, 1)]).unwrap();
    let ext = ExtendedGraph::new(
        g,
        vec![NodeRole::Edge, NodeRole::Server],
        &[50.0],
        &[8.0, 100.0],
    )
    .unwrap();
    let dv = DelayVector::new(vec![0.02, 0.125, 0.01]);
    let tree = shortest_paths(&ext, &dv, 0).unwrap();
    assert_eq!(tree.dist[1], 0.02);
    assert_eq!(tree.hops[1], 1);
}

/// Three-node path with one server: beta(m, s~) adds the virtual link but
/// zeta counts only the two physical hops.
#[test]
fn path_with_server_virtual_link() {
    let g = ConnectivityGraph::new(3, &[(0, 1), (1, 2)]).unwrap();
    let ext = ExtendedGraph::new(
        g,
        vec![NodeRole::Edge, NodeRole::Relay, NodeRole::Server],
        &[50.0, 50.0],
        &[8.0, 0.0, 100.0],
    )
    .unwrap();
    // links: 0=(0,1), 1=(1,2), 2=(0,virtual of 0), 3=(2,virtual of 2)
    let dv = DelayVector::new(vec![0.02, 0.02, 0.125, 0.01]);
    let tree = shortest_paths(&ext, &dv, 0).unwrap();
    let s_virtual = ext.virtual_node(2).unwrap();
    assert!((tree.dist[s_virtual] - 0.05f64).abs() < 1e-15);
    assert_eq!(tree.hops[2], 2);
    assert_eq!(tree.hops[s_virtual], 2);
    assert_eq!(tree.path_links(s_virtual), vec![0, 1, 3]);
}
