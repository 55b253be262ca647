use crate::engine::SimTime;

pub const RTO_MIN: SimTime = SimTime::from_millis(200);
pub const RTO_MAX: SimTime = SimTime::from_secs(64);
pub const RTO_INITIAL: SimTime = SimTime::from_secs(1);
const GRANULARITY_NS: u64 = 1_000_000;

/// Smoothed RTT and variance with exponential timer backoff.
#[derive(Clone, Debug)]
pub struct RttEstimator {
    srtt: Option<f64>,
    rttvar: f64,
    base_rto: SimTime,
    backoff: u32,
}

impl Default for RttEstimator {
    fn default() -> Self {
        RttEstimator {
            srtt: None,
            rttvar: 0.0,
            base_rto: RTO_INITIAL,
            backoff: 0,
        }
    }
}

impl RttEstimator {
    pub fn srtt(&self) -> Option<SimTime> {
        self.srtt.map(SimTime::from_secs_f64)
    }

    pub fn sample(&mut self, rtt: SimTime) {
        let r = rtt.as_secs_f64();
        match self.srtt {
            None => {
                self.srtt = Some(r);
                self.rttvar = r / 2.0;
            }
            Some(srtt) => {
                self.rttvar = 0.75 * self.rttvar + 0.25 * (srtt - r).abs();
                self.srtt = Some(0.875 * srtt + 0.125 * r);
            }
        }
        let srtt = self.srtt.unwrap_or(r);
        let g = GRANULARITY_NS as f64 / 1e9;
        let raw = SimTime::from_secs_f64(srtt + (4.0 * self.rttvar).max(g));
        let ticks = raw.as_nanos().div_ceil(GRANULARITY_NS);
        self.base_rto = SimTime::from_nanos(ticks * GRANULARITY_NS).max(RTO_MIN);
        self.backoff = 0;
    }

    pub fn back_off(&mut self) {
        self.backoff = (self.backoff + 1).min(16);
    }

    pub fn rto(&self) -> SimTime {
        let scaled = self.base_rto.as_nanos().saturating_mul(1u64 << self.backoff);
        SimTime::from_nanos(scaled).min(RTO_MAX)
    }
}
