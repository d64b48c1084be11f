//! Oracle tests for the contention delay estimator.
//!
//! `reference` is a deliberately naive re-implementation of the iterative
//! service-rate estimate, written against the update rules directly (per-link
//! loops over an explicit neighbor map) before the vectorized estimator was
//! built. It stays independent of the library code so the two can check each
//! other.

use std::collections::BTreeMap;

use offloadnet::graph::ConflictGraph;
use offloadnet::queueing::{congestion_flags, estimate_delays};
use rand::Rng;

/// Naive per-link iteration: mu(0) = r/(1+d); for k in 1..=K:
/// b = min(x/mu, 1), p = sum of neighbor b, mu = r/(1+p). Physical links are
/// `0..conflicts.len()` entries of `rates`/`arrivals`; the rest are virtual
/// (mu_hat = rate, no contention). Delay: 1/(mu_hat - x) if mu_hat > x, else
/// horizon * x / mu_hat.
mod reference {
    use std::collections::BTreeMap;

    pub struct RefOutput {
        pub mu_hat: Vec<f64>,
        pub delays: Vec<f64>,
    }

    pub fn run(
        neighbor_map: &BTreeMap<usize, Vec<usize>>,
        physical: usize,
        rates: &[f64],
        arrivals: &[f64],
        horizon: f64,
        iters: usize,
    ) -> RefOutput {
        let mut mu: Vec<f64> = (0..physical)
            .map(|e| {
                let d = neighbor_map.get(&e).map(|v| v.len()).unwrap_or(0);
                rates[e] / (1.0 + d as f64)
            })
            .collect();
        for _ in 0..iters {
            let mut b = vec![0.0; physical];
            for e in 0..physical {
                let ratio = arrivals[e] / mu[e];
                b[e] = if ratio < 1.0 { ratio } else { 1.0 };
            }
            let mut next = vec![0.0; physical];
            for e in 0..physical {
                let mut p = 0.0;
                if let Some(ns) = neighbor_map.get(&e) {
                    for &o in ns {
                        p += b[o];
                    }
                }
                next[e] = rates[e] / (1.0 + p);
            }
            mu = next;
        }
        let mut mu_hat = mu;
        mu_hat.extend_from_slice(&rates[physical..]);
        let delays = mu_hat
            .iter()
            .zip(arrivals)
            .map(|(&m, &x)| if m > x { 1.0 / (m - x) } else { horizon * x / m })
            .collect();
        RefOutput { mu_hat, delays }
    }
}

fn neighbor_map_of(conflict: &ConflictGraph) -> BTreeMap<usize, Vec<usize>> {
    (0..conflict.vertex_count())
        .map(|e| (e, conflict.conflicts_of(e).to_vec()))
        .collect()
}

/// Acceptance criterion: on 100 random conflict graphs with at most 6 links,
/// the K=10 service estimates match the reference iteration to 1e-12.
#[test]
fn matches_reference_on_random_conflict_graphs() {
    let mut rng = offloadnet::rng::stream(2024, "queueing-oracle", 0);
    for case in 0..100 {
        let links = rng.gen_range(1..=6);
        let mut pairs = Vec::new();
        for a in 0..links {
            for b in (a + 1)..links {
                if rng.gen_bool(0.4) {
                    pairs.push((a, b));
                }
            }
        }
        let conflict = ConflictGraph::from_conflicts(links, &pairs).unwrap();
        let virtuals = rng.gen_range(0..=2);
        let total = links + virtuals;
        let rates: Vec<f64> = (0..total).map(|_| rng.gen_range(5.0..80.0)).collect();
        let arrivals: Vec<f64> = (0..total).map(|_| rng.gen_range(0.0..60.0)).collect();

        let expect = reference::run(&neighbor_map_of(&conflict), links, &rates, &arrivals, 1000.0, 10);
        let (delays, svc) = estimate_delays(&conflict, &rates, &arrivals, 1000, 10).unwrap();

        for e in 0..total {
            assert!(
                (svc.mu_hat[e] - expect.mu_hat[e]).abs() < 1e-12,
                "case {case} link {e}: mu {} vs reference {}",
                svc.mu_hat[e],
                expect.mu_hat[e]
            );
            assert!(
                (delays.values[e] - expect.delays[e]).abs() < 1e-12 * expect.delays[e].max(1.0),
                "case {case} link {e}: delay {} vs reference {}",
                delays.values[e],
                expect.delays[e]
            );
        }
    }
}

/// Two mutually conflicting links with equal rate and arrivals have the
/// closed-form fixed point mu = r - x (from mu = r / (1 + x/mu)).
#[test]
fn two_link_fixed_point() {
    let conflict = ConflictGraph::from_conflicts(2, &[(0, 1)]).unwrap();
    let (delays, svc) =
        estimate_delays::<f64>(&conflict, &[50.0, 50.0], &[10.0, 10.0], 1000, 10).unwrap();
    for e in 0..2 {
        assert!((svc.mu_hat[e] - 40.0).abs() < 0.1, "mu_hat = {}", svc.mu_hat[e]);
        assert!((delays.values[e] - 1.0 / 30.0).abs() < 1e-4);
        assert!(!svc.congested[e]);
    }
}

/// Closed-form fixed points mu = r - x across a sweep of symmetric two-link
/// loads, all stable (x < r/2).
#[test]
fn two_link_fixed_point_sweep() {
    let conflict = ConflictGraph::from_conflicts(2, &[(0, 1)]).unwrap();
    for &(r, x) in &[(50.0, 5.0), (60.0, 20.0), (34.0, 12.0), (80.0, 35.0)] {
        let (_, svc) = estimate_delays::<f64>(&conflict, &[r, r], &[x, x], 1000, 10).unwrap();
        assert!(
            (svc.mu_hat[0] - (r - x)).abs() < 0.1,
            "r={r} x={x} mu={}",
            svc.mu_hat[0]
        );
    }
}

/// Hand-iterated saturated case: b caps at 1, mu = r/2 = 25 < 30, so the
/// congested branch yields horizon * x / mu = 1000 * 30 / 25.
#[test]
fn two_link_saturation() {
    let conflict = ConflictGraph::from_conflicts(2, &[(0, 1)]).unwrap();
    let (delays, svc) =
        estimate_delays::<f64>(&conflict, &[50.0, 50.0], &[30.0, 30.0], 1000, 10).unwrap();
    for e in 0..2 {
        assert!((svc.mu_hat[e] - 25.0).abs() < 1e-12);
        assert!((delays.values[e] - 1200.0).abs() < 1e-9);
        assert!(svc.congested[e]);
    }
    assert_eq!(congestion_flags(&svc, &[30.0, 30.0]), vec![true, true]);
}

/// Isolated link: no contention, mu_hat = r, delay = response time 1/(r - x).
#[test]
fn isolated_link_response_time() {
    let conflict = ConflictGraph::from_conflicts(1, &[]).unwrap();
    for iters in [1, 3, 10] {
        let (delays, svc) = estimate_delays::<f64>(&conflict, &[50.0], &[10.0], 1000, iters).unwrap();
        assert_eq!(svc.mu_hat[0], 50.0);
        assert!((delays.values[0] - 0.025).abs() < 1e-15);
    }
}
