//! Iterative per-link delay estimation under contention.
//!
//! Conflicting links with non-empty queues share the channel, so the service
//! rate of a physical link is `r / (1 + p)` where `p` is the expected number
//! of contending neighbors. The estimator starts from the worst case
//! `r / (1 + d)` and iterates the contention fixed point a fixed number of
//! times; virtual links (compute) keep their nominal rate. Per-packet delay
//! is the queueing response time `1/(mu - x)` while stable, and the queue
//! depletion time `T * x / mu` once arrivals reach the service rate.
//!
//! The whole iteration is differentiable in the arrival vector; a recorded
//! trace replays it in reverse for vector-Jacobian products.

use thiserror::Error;

use crate::graph::ConflictGraph;
use crate::scalar::Scalar;

/// Guards the stable-branch denominator `mu - x` against underflow. Delays at
/// the guard take a zero subgradient.
const DENOM_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QueueingError {
    #[error("arrival rate of link {0} is negative")]
    NegativeArrival(usize),
    #[error("rate of link {0} must be positive")]
    NonpositiveRate(usize),
    #[error("vector length {got} does not match extended link count {want}")]
    DimensionMismatch { got: usize, want: usize },
    #[error("conflict graph has {conflict} vertices but only {links} extended links given")]
    ConflictTooLarge { conflict: usize, links: usize },
}

/// Per-extended-link delays in time slots.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayVector<S: Scalar = f64> {
    pub values: Vec<S>,
}

impl<S: Scalar> DelayVector<S> {
    pub fn new(values: Vec<S>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Estimated service rates with the delay branch taken per link.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceEstimate<S: Scalar = f64> {
    pub mu_hat: Vec<S>,
    /// True when the depletion branch was taken (`mu_hat <= arrival`).
    pub congested: Vec<bool>,
}

/// Recorded forward pass of [`estimate_delays_traced`], replayable in
/// reverse for the gradient with respect to arrivals.
#[derive(Debug, Clone)]
pub struct ContentionTrace<S: Scalar = f64> {
    physical: usize,
    horizon: S,
    /// mu iterates, `iters + 1` rows of `physical` entries each.
    mu: Vec<Vec<S>>,
    /// Per iteration, whether the `x/mu` arm of the min was active (ties
    /// included by convention).
    ratio_active: Vec<Vec<bool>>,
    arrivals: Vec<S>,
    mu_hat: Vec<S>,
    stable: Vec<bool>,
    /// Stable links whose guarded denominator clamped; zero subgradient.
    clamped: Vec<bool>,
}

fn validate<S: Scalar>(
    conflict: &ConflictGraph,
    rates: &[S],
    arrivals: &[S],
) -> Result<(), QueueingError> {
    if conflict.vertex_count() > rates.len() {
        return Err(QueueingError::ConflictTooLarge {
            conflict: conflict.vertex_count(),
            links: rates.len(),
        });
    }
    if arrivals.len() != rates.len() {
        return Err(QueueingError::DimensionMismatch {
            got: arrivals.len(),
            want: rates.len(),
        });
    }
    for (e, &r) in rates.iter().enumerate() {
        if r <= S::zero() {
            return Err(QueueingError::NonpositiveRate(e));
        }
    }
    for (e, &x) in arrivals.iter().enumerate() {
        if x < S::zero() {
            return Err(QueueingError::NegativeArrival(e));
        }
    }
    Ok(())
}

/// Estimates per-link service rates and delays.
///
/// `rates` and `arrivals` cover all extended links, physical first; the
/// conflict graph spans exactly the physical prefix. `horizon` is the
/// number of slots new jobs keep arriving (depletion horizon), `iters` the
/// number of contention iterations.
pub fn estimate_delays<S: Scalar>(
    conflict: &ConflictGraph,
    rates: &[S],
    arrivals: &[S],
    horizon: u32,
    iters: u32,
) -> Result<(DelayVector<S>, ServiceEstimate<S>), QueueingError> {
    let (delays, svc, _) = estimate_delays_traced(conflict, rates, arrivals, horizon, iters)?;
    Ok((delays, svc))
}

/// [`estimate_delays`] plus the trace needed for reverse-mode gradients.
pub fn estimate_delays_traced<S: Scalar>(
    conflict: &ConflictGraph,
    rates: &[S],
    arrivals: &[S],
    horizon: u32,
    iters: u32,
) -> Result<(DelayVector<S>, ServiceEstimate<S>, ContentionTrace<S>), QueueingError> {
    validate(conflict, rates, arrivals)?;
    let physical = conflict.vertex_count();
    let total = rates.len();
    let one = S::one();
    let horizon_s = S::from_count(horizon as usize);

    let mut mu_iters: Vec<Vec<S>> = Vec::with_capacity(iters as usize + 1);
    let mut ratio_active: Vec<Vec<bool>> = Vec::with_capacity(iters as usize);

    let mu0: Vec<S> = (0..physical)
        .map(|e| rates[e] / (one + S::from_count(conflict.degree(e))))
        .collect();
    mu_iters.push(mu0);

    for _ in 0..iters {
        let prev = mu_iters.last().expect("at least one iterate");
        let mut active = vec![false; physical];
        let b: Vec<S> = (0..physical)
            .map(|e| {
                let ratio = arrivals[e] / prev[e];
                if ratio <= one {
                    active[e] = true;
                    ratio
                } else {
                    one
                }
            })
            .collect();
        let next: Vec<S> = (0..physical)
            .map(|e| {
                let p: S = conflict.conflicts_of(e).iter().map(|&o| b[o]).sum();
                rates[e] / (one + p)
            })
            .collect();
        ratio_active.push(active);
        mu_iters.push(next);
    }

    let last = mu_iters.last().expect("at least one iterate");
    let mut mu_hat: Vec<S> = Vec::with_capacity(total);
    mu_hat.extend_from_slice(&last[..]);
    mu_hat.extend_from_slice(&rates[physical..]);

    let eps = S::from_f64_lossy(DENOM_EPS);
    let mut stable = vec![false; total];
    let mut clamped = vec![false; total];
    let values: Vec<S> = (0..total)
        .map(|e| {
            if mu_hat[e] > arrivals[e] {
                stable[e] = true;
                let denom = mu_hat[e] - arrivals[e];
                if denom < eps {
                    clamped[e] = true;
                    one / eps
                } else {
                    one / denom
                }
            } else {
                horizon_s * arrivals[e] / mu_hat[e]
            }
        })
        .collect();

    let congested = stable.iter().map(|&s| !s).collect();
    let trace = ContentionTrace {
        physical,
        horizon: horizon_s,
        mu: mu_iters,
        ratio_active,
        arrivals: arrivals.to_vec(),
        mu_hat: mu_hat.clone(),
        stable: stable.clone(),
        clamped,
    };
    Ok((
        DelayVector::new(values),
        ServiceEstimate { mu_hat, congested },
        trace,
    ))
}

impl<S: Scalar> ContentionTrace<S> {
    /// Smallest distance of the recorded pass to any branch boundary: the
    /// min cap (`|x/mu - 1|` per iteration) and the stable/congested split
    /// (`|mu_hat - x|`). Finite-difference checks require this to dominate
    /// the step size.
    pub fn branch_margin(&self) -> S {
        let one = S::one();
        let mut margin = S::infinity();
        for k in 1..self.mu.len() {
            for e in 0..self.physical {
                let ratio = self.arrivals[e] / self.mu[k - 1][e];
                margin = margin.min((ratio - one).abs());
            }
        }
        for e in 0..self.arrivals.len() {
            margin = margin.min((self.mu_hat[e] - self.arrivals[e]).abs());
        }
        margin
    }

    /// Gradient of `upstream . delays` with respect to the arrival vector,
    /// replaying the recorded iteration in reverse. Branches (the min cap
    /// and the stable/congested split) keep the arm taken in the forward
    /// pass.
    pub fn vjp(&self, conflict: &ConflictGraph, rates: &[S], upstream: &[S]) -> Vec<S> {
        let total = self.arrivals.len();
        assert_eq!(upstream.len(), total, "upstream gradient length");
        let one = S::one();
        let mut d_arrivals = vec![S::zero(); total];
        let mut d_mu = vec![S::zero(); self.physical];

        // Delay branch (line producing delta from mu_hat and x).
        for e in 0..total {
            let up = upstream[e];
            if up == S::zero() {
                continue;
            }
            let mu = self.mu_hat[e];
            let x = self.arrivals[e];
            if self.stable[e] {
                if self.clamped[e] {
                    continue;
                }
                let inv2 = one / ((mu - x) * (mu - x));
                d_arrivals[e] += up * inv2;
                if e < self.physical {
                    d_mu[e] -= up * inv2;
                }
            } else {
                d_arrivals[e] += up * self.horizon / mu;
                if e < self.physical {
                    d_mu[e] -= up * self.horizon * x / (mu * mu);
                }
            }
        }

        // Contention iterations in reverse: mu(k) = r / (1 + p(k)),
        // p(k) = A b(k), b(k) = min(x / mu(k-1), 1).
        for k in (1..self.mu.len()).rev() {
            let mu_k = &self.mu[k];
            let mu_prev = &self.mu[k - 1];
            let active = &self.ratio_active[k - 1];
            // d p = d mu * d(r/(1+p))/dp = -mu^2 / r * d mu
            let d_p: Vec<S> = (0..self.physical)
                .map(|e| -(mu_k[e] * mu_k[e]) / rates[e] * d_mu[e])
                .collect();
            // d b = A^T d p (A symmetric)
            let mut d_mu_prev = vec![S::zero(); self.physical];
            for e in 0..self.physical {
                if !active[e] {
                    continue;
                }
                let db: S = conflict.conflicts_of(e).iter().map(|&o| d_p[o]).sum();
                if db == S::zero() {
                    continue;
                }
                d_arrivals[e] += db / mu_prev[e];
                d_mu_prev[e] -= db * self.arrivals[e] / (mu_prev[e] * mu_prev[e]);
            }
            d_mu = d_mu_prev;
        }
        // mu(0) = r / (1 + d) is constant in x.
        d_arrivals
    }
}

/// Per-link instability flags: arrival rate at or above the estimated
/// service rate means the queue grows without bound.
pub fn congestion_flags<S: Scalar>(svc: &ServiceEstimate<S>, arrivals: &[S]) -> Vec<bool> {
    svc.mu_hat
        .iter()
        .zip(arrivals)
        .map(|(&mu, &x)| mu < x)
        .collect()
}
