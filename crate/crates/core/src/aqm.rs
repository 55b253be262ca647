//! Queue disciplines for link output buffers.
//!
//! [`RedQueue`] is classic packet-mode Random Early Detection with
//! count-based drop spreading and idle-time decay of the average.
//! [`DropTailQueue`] is a plain bounded FIFO used on access and return links.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Packet, SimTime};

#[derive(Debug, Error, PartialEq)]
pub enum AqmError {
    #[error("RED thresholds must satisfy 0 < thresh < maxthresh <= limit (got {thresh}, {maxthresh}, {limit})")]
    Thresholds {
        thresh: f64,
        maxthresh: f64,
        limit: usize,
    },
    #[error("{name} must lie in (0, 1], got {value}")]
    Probability { name: &'static str, value: f64 },
}

/// RED configuration. Thresholds and limit are in packets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RedParams {
    pub thresh: f64,
    pub maxthresh: f64,
    pub limit: usize,
    pub ewma_weight: f64,
    pub max_drop_prob: f64,
}

impl Default for RedParams {
    fn default() -> Self {
        RedParams {
            thresh: 5.0,
            maxthresh: 15.0,
            limit: 20,
            ewma_weight: 0.002,
            max_drop_prob: 0.1,
        }
    }
}

impl RedParams {
    pub fn validate(&self) -> Result<(), AqmError> {
        if !(self.thresh > 0.0
            && self.thresh < self.maxthresh
            && self.maxthresh <= self.limit as f64)
        {
            return Err(AqmError::Thresholds {
                thresh: self.thresh,
                maxthresh: self.maxthresh,
                limit: self.limit,
            });
        }
        for (name, value) in [
            ("ewma_weight", self.ewma_weight),
            ("max_drop_prob", self.max_drop_prob),
        ] {
            if !(value > 0.0 && value <= 1.0) {
                return Err(AqmError::Probability { name, value });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropReason {
    /// Probabilistic drop between the thresholds.
    Early,
    /// Average at or above `maxthresh`.
    Forced,
    /// Instantaneous queue at its hard limit.
    Overflow,
}

#[derive(Debug, PartialEq)]
pub enum Enqueue {
    Admitted,
    Dropped(Packet, DropReason),
}

impl Enqueue {
    pub fn is_admitted(&self) -> bool {
        matches!(self, Enqueue::Admitted)
    }
}

#[derive(Debug)]
pub struct RedQueue {
    params: RedParams,
    queue: VecDeque<Packet>,
    avg: f64,
    /// Packets since the last drop; -1 while the average is below `thresh`.
    count: i64,
    idle_start: Option<SimTime>,
    typical_tx: SimTime,
}

impl RedQueue {
    /// `typical_tx` is the transmission time of an average packet on the
    /// outgoing link, used to age the average across idle periods.
    pub fn new(params: RedParams, typical_tx: SimTime) -> Result<Self, AqmError> {
        params.validate()?;
        Ok(RedQueue {
            params,
            queue: VecDeque::with_capacity(params.limit),
            avg: 0.0,
            count: -1,
            idle_start: Some(SimTime::ZERO),
            typical_tx,
        })
    }

    pub fn params(&self) -> &RedParams {
        &self.params
    }

    pub fn avg(&self) -> f64 {
        self.avg
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn idle_start(&self) -> Option<SimTime> {
        self.idle_start
    }

    fn update_average(&mut self, now: SimTime) {
        let w = self.params.ewma_weight;
        match self.idle_start.take() {
            Some(since) if self.queue.is_empty() => {
                let idle = now.saturating_sub(since).as_nanos() as f64;
                let m = if self.typical_tx.as_nanos() == 0 {
                    0.0
                } else {
                    idle / self.typical_tx.as_nanos() as f64
                };
                self.avg *= (1.0 - w).powf(m);
            }
            _ => {
                self.avg = (1.0 - w) * self.avg + w * self.queue.len() as f64;
            }
        }
    }

    pub fn enqueue<R: Rng + ?Sized>(&mut self, packet: Packet, now: SimTime, rng: &mut R) -> Enqueue {
        self.update_average(now);
        let p = &self.params;

        if self.queue.len() >= p.limit {
            self.count = 0;
            return Enqueue::Dropped(packet, DropReason::Overflow);
        }
        if self.avg >= p.maxthresh {
            self.count = 0;
            return Enqueue::Dropped(packet, DropReason::Forced);
        }
        if self.avg >= p.thresh {
            self.count += 1;
            let pb = p.max_drop_prob * (self.avg - p.thresh) / (p.maxthresh - p.thresh);
            let spread = 1.0 - self.count as f64 * pb;
            let pa = if spread <= 0.0 { 1.0 } else { (pb / spread).min(1.0) };
            if rng.gen::<f64>() < pa {
                self.count = 0;
                return Enqueue::Dropped(packet, DropReason::Early);
            }
        } else {
            self.count = -1;
        }
        self.queue.push_back(packet);
        Enqueue::Admitted
    }

    /// Admits without running the drop test (used for acknowledgements).
    pub fn force_enqueue(&mut self, packet: Packet) {
        self.queue.push_back(packet);
    }

    pub fn dequeue(&mut self, now: SimTime) -> Option<Packet> {
        let packet = self.queue.pop_front()?;
        if self.queue.is_empty() {
            self.idle_start = Some(now);
        }
        Some(packet)
    }

    pub fn packets(&self) -> impl Iterator<Item = &Packet> {
        self.queue.iter()
    }
}

#[derive(Debug)]
pub struct DropTailQueue {
    limit: usize,
    queue: VecDeque<Packet>,
}

impl DropTailQueue {
    pub fn new(limit: usize) -> Self {
        DropTailQueue {
            limit,
            queue: VecDeque::new(),
        }
    }

    pub fn enqueue(&mut self, packet: Packet) -> Enqueue {
        if self.queue.len() >= self.limit {
            return Enqueue::Dropped(packet, DropReason::Overflow);
        }
        self.queue.push_back(packet);
        Enqueue::Admitted
    }

    pub fn force_enqueue(&mut self, packet: Packet) {
        self.queue.push_back(packet);
    }

    pub fn dequeue(&mut self) -> Option<Packet> {
        self.queue.pop_front()
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }
}

/// The buffer attached to a link's transmit side.
#[derive(Debug)]
pub enum QueueDiscipline {
    DropTail(DropTailQueue),
    Red(RedQueue),
}

impl QueueDiscipline {
    /// Offers a packet to the queue. Acknowledgements are always admitted.
    pub fn enqueue<R: Rng + ?Sized>(&mut self, packet: Packet, now: SimTime, rng: &mut R) -> Enqueue {
        if packet.is_ack() {
            match self {
                QueueDiscipline::DropTail(q) => q.force_enqueue(packet),
                QueueDiscipline::Red(q) => q.force_enqueue(packet),
            }
            return Enqueue::Admitted;
        }
        match self {
            QueueDiscipline::DropTail(q) => q.enqueue(packet),
            QueueDiscipline::Red(q) => q.enqueue(packet, now, rng),
        }
    }

    pub fn dequeue(&mut self, now: SimTime) -> Option<Packet> {
        match self {
            QueueDiscipline::DropTail(q) => q.dequeue(),
            QueueDiscipline::Red(q) => q.dequeue(now),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            QueueDiscipline::DropTail(q) => q.len(),
            QueueDiscipline::Red(q) => q.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn packets(&self) -> Box<dyn Iterator<Item = &Packet> + '_> {
        match self {
            QueueDiscipline::DropTail(q) => Box::new(q.queue.iter()),
            QueueDiscipline::Red(q) => Box::new(q.packets()),
        }
    }
}
