use std::collections::{BTreeMap, BTreeSet};

use crate::engine::{AckInfo, FlowId, SimTime};
use crate::policing::{TraceEvent, TraceRecord};

use super::{CongestionState, RttEstimator, Variant, Weight, DEFAULT_INITIAL_SSTHRESH, DUPACK_THRESHOLD};

#[derive(Clone, Debug, PartialEq)]
pub struct SenderConfig {
    pub variant: Variant,
    pub weight: Weight,
    pub initial_ssthresh: f64,
    /// Segments to transfer; `None` for an unbounded bulk transfer.
    pub segments: Option<u64>,
    /// Receiver-advertised window in segments, if the receiver caps it.
    pub advertised_window: Option<u64>,
}

impl SenderConfig {
    pub fn new(variant: Variant, weight: Weight) -> Self {
        SenderConfig {
            variant,
            weight,
            initial_ssthresh: DEFAULT_INITIAL_SSTHRESH,
            segments: None,
            advertised_window: None,
        }
    }
}

/// A segment the sender wants on the wire.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Transmission {
    pub seq: u64,
    pub retransmit: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SenderStats {
    pub segments_sent: u64,
    pub retransmissions: u64,
    pub fast_retransmits: u64,
    pub timeouts: u64,
}

/// Sender half of a weighted TCP connection.
///
/// All sequence numbers count segments. `max_sent` and `recover` are
/// exclusive upper bounds.
#[derive(Clone, Debug)]
pub struct Sender {
    flow: FlowId,
    config: SenderConfig,
    cc: CongestionState,
    snd_una: u64,
    snd_nxt: u64,
    max_sent: u64,
    recover: Option<u64>,
    dupacks: u32,
    partial_ack_seen: bool,
    sacked: BTreeSet<u64>,
    /// Retransmitted segment -> `max_sent` when it was resent.
    retransmitted: BTreeMap<u64, u64>,
    rtt: RttEstimator,
    timed: Option<(u64, SimTime)>,
    deadline: Option<SimTime>,
    stopped: bool,
    completed_at: Option<SimTime>,
    stats: SenderStats,
    trace: Option<Vec<TraceRecord>>,
}

impl Sender {
    pub fn new(flow: FlowId, config: SenderConfig) -> Self {
        Sender {
            flow,
            cc: CongestionState::new(config.weight, config.initial_ssthresh),
            config,
            snd_una: 0,
            snd_nxt: 0,
            max_sent: 0,
            recover: None,
            dupacks: 0,
            partial_ack_seen: false,
            sacked: BTreeSet::new(),
            retransmitted: BTreeMap::new(),
            rtt: RttEstimator::default(),
            timed: None,
            deadline: None,
            stopped: false,
            completed_at: None,
            stats: SenderStats::default(),
            trace: None,
        }
    }

    /// Starts recording a trace of this sender's events.
    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn take_trace(&mut self) -> Vec<TraceRecord> {
        self.trace.take().unwrap_or_default()
    }

    pub fn congestion(&self) -> &CongestionState {
        &self.cc
    }

    /// Overrides the window variables, e.g. to resume from a known state.
    pub fn congestion_mut(&mut self) -> &mut CongestionState {
        &mut self.cc
    }

    pub fn config(&self) -> &SenderConfig {
        &self.config
    }

    pub fn stats(&self) -> &SenderStats {
        &self.stats
    }

    pub fn snd_una(&self) -> u64 {
        self.snd_una
    }

    pub fn snd_nxt(&self) -> u64 {
        self.snd_nxt
    }

    pub fn dupacks(&self) -> u32 {
        self.dupacks
    }

    pub fn deadline(&self) -> Option<SimTime> {
        self.deadline
    }

    pub fn completed_at(&self) -> Option<SimTime> {
        self.completed_at
    }

    pub fn rtt(&self) -> &RttEstimator {
        &self.rtt
    }

    pub fn set_advertised_window(&mut self, window: Option<u64>, now: SimTime, out: &mut Vec<Transmission>) {
        self.config.advertised_window = window;
        self.send_available(now, out);
    }

    /// Opens the connection by sending the initial window.
    pub fn start(&mut self, now: SimTime, out: &mut Vec<Transmission>) {
        self.send_available(now, out);
    }

    /// Stops sending new data; outstanding data is still recovered.
    pub fn stop(&mut self) {
        self.stopped = true;
    }

    fn outstanding(&self) -> bool {
        self.max_sent > self.snd_una
    }

    fn may_send_new(&self) -> bool {
        !self.stopped && self.config.segments.is_none_or(|total| self.snd_nxt < total)
    }

    fn record(&mut self, now: SimTime, event: TraceEvent, before: f64, seq: Option<u64>, ack: Option<u64>) {
        if let Some(trace) = self.trace.as_mut() {
            trace.push(TraceRecord {
                time: now,
                flow: self.flow,
                event,
                cwnd_before: Some(before),
                cwnd_after: Some(self.cc.cwnd),
                seq,
                ack,
            });
        }
    }

    fn transmit(&mut self, seq: u64, now: SimTime, out: &mut Vec<Transmission>) {
        let retransmit = seq < self.max_sent;
        if retransmit {
            self.stats.retransmissions += 1;
            // Karn: never time a segment that has been sent twice.
            if matches!(self.timed, Some((s, _)) if s <= seq) {
                self.timed = None;
            }
        } else {
            self.max_sent = seq + 1;
            if self.timed.is_none() {
                self.timed = Some((seq, now));
            }
        }
        self.stats.segments_sent += 1;
        let cwnd = self.cc.cwnd;
        self.record(now, TraceEvent::DataSent, cwnd, Some(seq), None);
        out.push(Transmission { seq, retransmit });
    }

    /// Segments in flight as seen by the SACK scoreboard: unsacked segments
    /// not yet deemed lost, plus retransmissions.
    fn pipe_and_next_hole(&self) -> (u64, Option<u64>) {
        let mut pipe = 0;
        let mut hole = None;
        let mut sacked_above = 0u32;
        for seq in (self.snd_una..self.max_sent).rev() {
            if self.sacked.contains(&seq) {
                sacked_above += 1;
                continue;
            }
            let lost = sacked_above >= DUPACK_THRESHOLD;
            // A retransmission is presumed lost once enough segments sent
            // after it have been sacked.
            let resent = self
                .retransmitted
                .get(&seq)
                .is_some_and(|&mark| (self.sacked.range(mark..).count() as u32) < DUPACK_THRESHOLD);
            if !lost {
                pipe += 1;
            }
            if resent {
                pipe += 1;
            } else if lost {
                hole = Some(seq);
            }
        }
        (pipe, hole)
    }

    fn advertised_allows(&self) -> bool {
        self.config
            .advertised_window
            .is_none_or(|adv| self.snd_nxt - self.snd_una < adv)
    }

    fn send_available(&mut self, now: SimTime, out: &mut Vec<Transmission>) {
        if self.config.variant == Variant::Sack && self.cc.in_recovery {
            loop {
                let (pipe, hole) = self.pipe_and_next_hole();
                if !self.cc.window_allows_send(pipe, None) {
                    break;
                }
                if let Some(seq) = hole {
                    self.retransmitted.insert(seq, self.max_sent);
                    self.transmit(seq, now, out);
                } else if self.may_send_new() && self.advertised_allows() {
                    let seq = self.snd_nxt;
                    self.snd_nxt += 1;
                    self.transmit(seq, now, out);
                } else {
                    break;
                }
            }
        } else {
            // After a timeout the Sack scoreboard survives, so segments the
            // receiver already holds are skipped and not counted in flight.
            loop {
                while self.snd_nxt < self.max_sent && self.sacked.contains(&self.snd_nxt) {
                    self.snd_nxt += 1;
                }
                let flight = self.snd_nxt - self.snd_una - self.sacked.range(..self.snd_nxt).count() as u64;
                if !(self.may_send_new() && self.cc.window_allows_send(flight, self.config.advertised_window)) {
                    break;
                }
                let seq = self.snd_nxt;
                self.snd_nxt += 1;
                self.transmit(seq, now, out);
            }
        }
        if self.outstanding() && self.deadline.is_none() {
            self.deadline = Some(now + self.rtt.rto());
        }
    }

    fn restart_timer(&mut self, now: SimTime) {
        self.deadline = if self.outstanding() {
            Some(now + self.rtt.rto())
        } else {
            None
        };
    }

    fn update_scoreboard(&mut self, ack: &AckInfo) {
        let una = ack.cumulative.max(self.snd_una);
        for &(start, end) in &ack.sack_blocks {
            for seq in start.max(una)..end.min(self.max_sent) {
                self.sacked.insert(seq);
            }
        }
        self.sacked = self.sacked.split_off(&una);
        self.retransmitted = self.retransmitted.split_off(&una);
    }

    fn enter_recovery(&mut self, now: SimTime, out: &mut Vec<Transmission>) {
        let before = self.cc.cwnd;
        self.cc.on_congestion_signal();
        self.stats.fast_retransmits += 1;
        let una = self.snd_una;
        self.record(now, TraceEvent::LossDetected, before, Some(una), Some(una));
        self.recover = Some(self.max_sent);
        self.partial_ack_seen = false;
        match self.config.variant {
            Variant::Tahoe => {
                self.cc.cwnd = 1.0;
                self.snd_nxt = self.snd_una;
            }
            Variant::Reno | Variant::NewReno => {
                self.cc.in_recovery = true;
                self.cc.cwnd = self.cc.ssthresh + DUPACK_THRESHOLD as f64;
                self.transmit(una, now, out);
            }
            Variant::Sack => {
                self.cc.in_recovery = true;
                self.retransmitted.insert(una, self.max_sent);
                self.transmit(una, now, out);
            }
        }
        self.restart_timer(now);
    }

    fn exit_recovery(&mut self) {
        self.cc.in_recovery = false;
        self.cc.cwnd = self.cc.ssthresh;
        self.dupacks = 0;
        self.retransmitted.clear();
    }

    /// Processes an acknowledgement and queues whatever the window now allows.
    pub fn on_ack(&mut self, ack: &AckInfo, now: SimTime, out: &mut Vec<Transmission>) {
        let before = self.cc.cwnd;
        let cumulative = ack.cumulative.min(self.max_sent);
        if self.config.variant == Variant::Sack {
            self.update_scoreboard(ack);
        }

        if cumulative > self.snd_una {
            let newly_acked = cumulative - self.snd_una;
            if let Some((seq, sent)) = self.timed {
                if cumulative > seq {
                    self.rtt.sample(now - sent);
                    self.timed = None;
                }
            }
            self.snd_una = cumulative;
            self.snd_nxt = self.snd_nxt.max(self.snd_una);
            let mut restart = true;

            if self.cc.in_recovery {
                let full = self.recover.is_none_or(|r| cumulative >= r);
                if full {
                    self.exit_recovery();
                } else {
                    match self.config.variant {
                        Variant::Reno | Variant::Tahoe => self.exit_recovery(),
                        Variant::NewReno => {
                            let una = self.snd_una;
                            self.transmit(una, now, out);
                            self.cc.cwnd = (self.cc.cwnd - newly_acked as f64 + 1.0).max(1.0);
                            // Only the first partial ack resets the timer.
                            restart = !self.partial_ack_seen;
                            self.partial_ack_seen = true;
                        }
                        Variant::Sack => {
                            let una = self.snd_una;
                            if !self.retransmitted.contains_key(&una) {
                                self.retransmitted.insert(una, self.max_sent);
                                self.transmit(una, now, out);
                            }
                        }
                    }
                }
            } else {
                self.dupacks = 0;
                self.cc.on_ack();
            }

            if restart {
                self.restart_timer(now);
            }
            if self.config.segments.is_some_and(|total| self.snd_una >= total) && self.completed_at.is_none() {
                self.completed_at = Some(now);
                self.deadline = None;
            }
        } else if cumulative == self.snd_una && self.outstanding() {
            self.dupacks += 1;
            if self.cc.in_recovery {
                if matches!(self.config.variant, Variant::Reno | Variant::NewReno) {
                    self.cc.cwnd += 1.0;
                }
            } else {
                let past_recover = self.recover.is_none_or(|r| self.snd_una >= r);
                let sack_evidence =
                    self.config.variant == Variant::Sack && self.sacked.len() as u32 >= DUPACK_THRESHOLD;
                if past_recover && (self.dupacks >= DUPACK_THRESHOLD || sack_evidence) {
                    self.enter_recovery(now, out);
                }
            }
        }

        self.record(now, TraceEvent::AckReceived, before, None, Some(ack.cumulative));
        self.send_available(now, out);
    }

    /// Fires the retransmission timer if it is due. Returns whether a
    /// timeout happened.
    pub fn on_timer(&mut self, now: SimTime, out: &mut Vec<Transmission>) -> bool {
        match self.deadline {
            Some(d) if d <= now => {}
            _ => return false,
        }
        let before = self.cc.cwnd;
        self.cc.on_timeout();
        self.rtt.back_off();
        self.stats.timeouts += 1;
        self.recover = Some(self.max_sent);
        self.dupacks = 0;
        self.retransmitted.clear();
        self.timed = None;
        self.snd_nxt = self.snd_una;
        let una = self.snd_una;
        self.record(now, TraceEvent::Timeout, before, Some(una), Some(una));
        self.deadline = None;
        self.send_available(now, out);
        self.restart_timer(now);
        true
    }
}
