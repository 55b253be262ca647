//! Receive-buffer proportional sharing.
//!
//! A receiver serving many connections over one bottleneck divides a buffer
//! budget `B` (bottleneck bandwidth times mean RTT) among them in proportion
//! to what each pays: `b_i = B k_i / sum_j k_j`. Since a connection's window
//! can never exceed its receive buffer, its throughput is bounded by
//! `b_i / RTT_i`, which makes buffer-limited throughputs proportional to
//! price.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type ConnectionId = u64;

#[derive(Debug, Error, PartialEq)]
pub enum AllocError {
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("no connections to allocate to")]
    Empty,
    #[error("unknown connection {0}")]
    UnknownConnection(ConnectionId),
    #[error("connection {0} already present")]
    DuplicateConnection(ConnectionId),
}

fn positive(name: &'static str, value: f64) -> Result<(), AllocError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(AllocError::NonPositive { name, value })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PricedConnection {
    pub id: ConnectionId,
    /// Charge units per unit time.
    pub price: f64,
    /// Round-trip time in seconds.
    pub rtt: f64,
}

impl PricedConnection {
    pub fn new(id: ConnectionId, price: f64, rtt: f64) -> Result<Self, AllocError> {
        positive("price", price)?;
        positive("rtt", rtt)?;
        Ok(PricedConnection { id, price, rtt })
    }
}

/// Total receive buffer to share, in bytes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferBudget {
    pub total: u64,
}

/// `B = bandwidth / 8 * mean RTT`, in bytes.
pub fn compute_budget(bottleneck_bps: f64, mean_rtt: f64) -> Result<BufferBudget, AllocError> {
    positive("bottleneck bandwidth", bottleneck_bps)?;
    positive("mean rtt", mean_rtt)?;
    Ok(BufferBudget {
        total: (bottleneck_bps / 8.0 * mean_rtt + 1e-6).floor() as u64,
    })
}

/// Price-weighted mean RTT of the connections.
pub fn weighted_mean_rtt(conns: &[PricedConnection]) -> Result<f64, AllocError> {
    if conns.is_empty() {
        return Err(AllocError::Empty);
    }
    let total: f64 = conns.iter().map(|c| c.price).sum();
    Ok(conns.iter().map(|c| c.price * c.rtt).sum::<f64>() / total)
}

/// Upper bound on throughput (bytes/s) imposed by a receive buffer.
pub fn throughput_bound(buffer_bytes: f64, rtt: f64) -> Result<f64, AllocError> {
    positive("buffer", buffer_bytes)?;
    positive("rtt", rtt)?;
    Ok(buffer_bytes / rtt)
}

/// Splits `budget` in proportion to price, in whole segments.
///
/// Each share is rounded down to a multiple of `segment`; the leftover
/// whole segments go one each to the highest-priced connections whose share
/// is still short of exact (ties by id). Every share stays strictly within
/// one segment of its exact proportion and
/// the total lies in `(B - segment, B]`.
pub fn allocate_buffers(
    conns: &[PricedConnection],
    budget: BufferBudget,
    segment: u64,
) -> Result<Vec<u64>, AllocError> {
    if conns.is_empty() {
        return Err(AllocError::Empty);
    }
    positive("segment size", segment as f64)?;
    for c in conns {
        positive("price", c.price)?;
    }
    let total_price: f64 = conns.iter().map(|c| c.price).sum();
    let b = budget.total;
    let exact: Vec<f64> = conns.iter().map(|c| b as f64 * c.price / total_price).collect();
    let mut shares: Vec<u64> = exact
        .iter()
        .map(|e| ((e / segment as f64).floor() as u64 * segment).min(b))
        .collect();
    let assigned: u64 = shares.iter().sum();
    let mut leftover = b.saturating_sub(assigned) / segment;

    // Only shares still short of their exact value take a leftover segment.
    let mut order: Vec<usize> = (0..conns.len()).filter(|&i| (shares[i] as f64) < exact[i]).collect();
    order.sort_by(|&i, &j| {
        conns[j]
            .price
            .total_cmp(&conns[i].price)
            .then(conns[i].id.cmp(&conns[j].id))
    });
    for i in order {
        if leftover == 0 {
            break;
        }
        shares[i] += segment;
        leftover -= 1;
    }
    Ok(shares)
}

/// How the budget is determined on each rebalance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BudgetPolicy {
    Fixed(BufferBudget),
    /// Bandwidth in bits/s times the price-weighted mean RTT.
    FromBandwidth { bottleneck_bps: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RebalanceEvent {
    Join(PricedConnection),
    Leave(ConnectionId),
    Reprice(ConnectionId, f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Change {
    pub id: ConnectionId,
    pub old: Option<u64>,
    pub new: Option<u64>,
}

impl Change {
    /// A shrinking window can only close as fast as packets arrive, so the
    /// new limit takes effect gradually.
    pub fn shrinks(&self) -> bool {
        matches!((self.old, self.new), (Some(o), Some(n)) if n < o)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rebalance {
    pub budget: Option<BufferBudget>,
    pub allocation: Vec<(ConnectionId, u64)>,
    pub changes: Vec<Change>,
}

/// Coordinator holding the current connection set and allocation.
#[derive(Clone, Debug)]
pub struct BufferAllocator {
    policy: BudgetPolicy,
    segment: u64,
    conns: BTreeMap<ConnectionId, PricedConnection>,
    current: BTreeMap<ConnectionId, u64>,
}

impl BufferAllocator {
    pub fn new(policy: BudgetPolicy, segment: u64) -> Self {
        BufferAllocator {
            policy,
            segment,
            conns: BTreeMap::new(),
            current: BTreeMap::new(),
        }
    }

    pub fn allocation(&self) -> Vec<(ConnectionId, u64)> {
        self.current.iter().map(|(&id, &b)| (id, b)).collect()
    }

    pub fn buffer(&self, id: ConnectionId) -> Option<u64> {
        self.current.get(&id).copied()
    }

    /// Applies one membership or price change and recomputes every share.
    pub fn apply(&mut self, event: RebalanceEvent) -> Result<Rebalance, AllocError> {
        match event {
            RebalanceEvent::Join(c) => {
                PricedConnection::new(c.id, c.price, c.rtt)?;
                if self.conns.contains_key(&c.id) {
                    return Err(AllocError::DuplicateConnection(c.id));
                }
                self.conns.insert(c.id, c);
            }
            RebalanceEvent::Leave(id) => {
                self.conns.remove(&id).ok_or(AllocError::UnknownConnection(id))?;
            }
            RebalanceEvent::Reprice(id, price) => {
                positive("price", price)?;
                self.conns
                    .get_mut(&id)
                    .ok_or(AllocError::UnknownConnection(id))?
                    .price = price;
            }
        }
        self.recompute()
    }

    fn recompute(&mut self) -> Result<Rebalance, AllocError> {
        let conns: Vec<PricedConnection> = self.conns.values().copied().collect();
        let (budget, next) = if conns.is_empty() {
            (None, BTreeMap::new())
        } else {
            let budget = match self.policy {
                BudgetPolicy::Fixed(b) => b,
                BudgetPolicy::FromBandwidth { bottleneck_bps } => {
                    compute_budget(bottleneck_bps, weighted_mean_rtt(&conns)?)?
                }
            };
            let shares = allocate_buffers(&conns, budget, self.segment)?;
            (Some(budget), conns.iter().map(|c| c.id).zip(shares).collect())
        };

        let mut changes = Vec::new();
        for id in self.current.keys().chain(next.keys()).copied().collect::<std::collections::BTreeSet<_>>() {
            let old = self.current.get(&id).copied();
            let new = next.get(&id).copied();
            if old != new {
                changes.push(Change { id, old, new });
            }
        }
        self.current = next;
        Ok(Rebalance {
            budget,
            allocation: self.allocation(),
            changes,
        })
    }
}
