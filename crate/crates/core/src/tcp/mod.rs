//! Weighted congestion control.
//!
//! [`CongestionState`] holds the window variables and the pure MulTCP
//! transitions: slow start that opens the window three-for-one until it has
//! caught up with `N` virtual connections, additive increase of `N / cwnd`
//! per ack, and multiplicative decrease to `(N - 1/2) / N` of the window.
//! [`Sender`] layers the loss-recovery mechanics of the four classic
//! variants on top of it, and [`Receiver`] generates cumulative and
//! selective acknowledgements.

mod receiver;
mod rtt;
mod sender;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use receiver::Receiver;
pub use rtt::{RttEstimator, RTO_INITIAL, RTO_MAX, RTO_MIN};
pub use sender::{Sender, SenderConfig, SenderStats, Transmission};

/// Default initial slow-start threshold, in segments.
pub const DEFAULT_INITIAL_SSTHRESH: f64 = 64.0;

/// Duplicate acks that trigger fast retransmit.
pub const DUPACK_THRESHOLD: u32 = 3;

#[derive(Debug, Error, PartialEq)]
pub enum TcpError {
    #[error("weight N must be a finite value >= 1, got {0}")]
    InvalidWeight(f64),
    #[error("unknown TCP variant {0:?} (expected tahoe, reno, newreno or sack)")]
    UnknownVariant(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Tahoe,
    Reno,
    NewReno,
    Sack,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Tahoe, Variant::Reno, Variant::NewReno, Variant::Sack];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Tahoe => "tahoe",
            Variant::Reno => "reno",
            Variant::NewReno => "newreno",
            Variant::Sack => "sack",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = TcpError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tahoe" => Ok(Variant::Tahoe),
            "reno" => Ok(Variant::Reno),
            "newreno" | "new-reno" => Ok(Variant::NewReno),
            "sack" => Ok(Variant::Sack),
            _ => Err(TcpError::UnknownVariant(s.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    SlowStart,
    CongestionAvoidance,
    FastRecovery,
}

/// The MulTCP weight: how many standard connections one flow stands for.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Weight(f64);

impl Weight {
    pub const ONE: Weight = Weight(1.0);

    pub fn new(n: f64) -> Result<Self, TcpError> {
        if n.is_finite() && n >= 1.0 {
            Ok(Weight(n))
        } else {
            Err(TcpError::InvalidWeight(n))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// Fraction of the window kept after one loss: `(N - 1/2) / N`.
    pub fn decrease_ratio(self) -> f64 {
        (self.0 - 0.5) / self.0
    }
}

impl TryFrom<f64> for Weight {
    type Error = TcpError;

    fn try_from(n: f64) -> Result<Self, Self::Error> {
        Weight::new(n)
    }
}

impl From<Weight> for f64 {
    fn from(w: Weight) -> f64 {
        w.0
    }
}

impl fmt::Display for Weight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Window at which three-per-ack slow start has caught up with `N`
/// standard connections doing two-per-ack slow start: `3^k` with
/// `k = ln N / (ln 3 - ln 2)`.
pub fn slow_start_crossover(n: f64) -> Result<f64, TcpError> {
    let w = Weight::new(n)?;
    Ok(crossover(w))
}

fn crossover(n: Weight) -> f64 {
    let k = n.get().ln() / (3f64.ln() - 2f64.ln());
    3f64.powf(k)
}

/// Window and threshold variables of one weighted connection.
///
/// `cwnd` is a real-valued accumulator in segments; it is floored only when
/// gating transmissions.
#[derive(Clone, Debug, PartialEq)]
pub struct CongestionState {
    pub cwnd: f64,
    pub ssthresh: f64,
    n: Weight,
    crossover: f64,
    pub in_recovery: bool,
}

impl CongestionState {
    pub fn new(n: Weight, initial_ssthresh: f64) -> Self {
        CongestionState {
            cwnd: 1.0,
            ssthresh: initial_ssthresh.max(2.0),
            n,
            crossover: crossover(n),
            in_recovery: false,
        }
    }

    /// State with explicit window values, mostly for tests and tooling.
    pub fn with_window(n: Weight, cwnd: f64, ssthresh: f64) -> Self {
        CongestionState {
            cwnd: cwnd.max(1.0),
            ssthresh,
            n,
            crossover: crossover(n),
            in_recovery: false,
        }
    }

    pub fn weight(&self) -> Weight {
        self.n
    }

    pub fn crossover(&self) -> f64 {
        self.crossover
    }

    pub fn phase(&self) -> Phase {
        if self.in_recovery {
            Phase::FastRecovery
        } else if self.cwnd < self.ssthresh {
            Phase::SlowStart
        } else {
            Phase::CongestionAvoidance
        }
    }

    /// Window growth for one new ack outside recovery.
    pub fn on_ack(&mut self) {
        if self.cwnd < self.ssthresh {
            self.on_ack_slow_start();
        } else {
            self.on_ack_congestion_avoidance();
        }
    }

    pub fn on_ack_slow_start(&mut self) {
        if self.cwnd <= self.crossover {
            self.cwnd += 2.0;
        } else {
            self.cwnd += 1.0;
        }
    }

    pub fn on_ack_congestion_avoidance(&mut self) {
        self.cwnd += self.n.get() / self.cwnd;
    }

    /// Multiplicative decrease on a loss detected by duplicate acks.
    ///
    /// A loss during slow start halves the window; otherwise only one of the
    /// `N` virtual connections halves, leaving `(N - 1/2) / N` of it.
    pub fn on_congestion_signal(&mut self) {
        if self.cwnd < self.ssthresh {
            self.cwnd /= 2.0;
        } else {
            self.cwnd *= self.n.decrease_ratio();
        }
        self.cwnd = self.cwnd.max(1.0);
        self.ssthresh = self.cwnd.floor().max(2.0);
    }

    pub fn on_timeout(&mut self) {
        self.ssthresh = (self.cwnd * self.n.decrease_ratio()).floor().max(2.0);
        self.cwnd = 1.0;
        self.in_recovery = false;
    }

    /// Whether another segment may be put in flight given `in_flight`
    /// outstanding segments and an optional receiver-advertised window.
    pub fn window_allows_send(&self, in_flight: u64, advertised: Option<u64>) -> bool {
        let window = self.cwnd.floor() as u64;
        let limit = advertised.map_or(window, |a| window.min(a));
        in_flight < limit
    }
}
