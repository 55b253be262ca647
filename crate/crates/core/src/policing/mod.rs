//! Billing and policing of weighted flows.
//!
//! A flow declares its weight `N` for an interval and is billed the time
//! integral of the declared weights. Policing checks from a packet trace
//! that the flow was not more aggressive than declared, using two
//! signatures of a weighted sender: the window at which slow start drops
//! from three to two packets per ack, and the fraction of the window kept
//! after each loss.

mod trace;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::engine::{FlowId, SimTime};
use crate::tcp::slow_start_crossover;

pub use trace::{read_trace, write_trace, TraceEvent, TraceRecord};

/// Loss events needed before the steady-state estimate is trusted.
pub const MIN_LOSS_EVENTS: usize = 5;

/// Default relative tolerance above the declared weight.
pub const DEFAULT_TOLERANCE: f64 = 0.10;

#[derive(Debug, Error, PartialEq)]
pub enum PolicingError {
    #[error("decrease ratio must lie in (0, 1), got {0}")]
    InvalidRatio(f64),
    #[error("trace is indeterminate: no slow-start crossover and only {loss_events} usable loss events")]
    Indeterminate { loss_events: usize },
    #[error("declaration for flow {flow}: {reason}")]
    InvalidDeclaration { flow: FlowId, reason: &'static str },
    #[error("flow {0} has overlapping declarations")]
    OverlappingDeclarations(FlowId),
    #[error("billing period must have start <= end")]
    InvalidPeriod,
    #[error("trace I/O: {0}")]
    Io(String),
}

/// Weight implied by a loss that kept `ratio` of the window: inverts
/// `ratio = (N - 1/2) / N`.
pub fn estimate_n_from_decrease(ratio: f64) -> Result<f64, PolicingError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(PolicingError::InvalidRatio(ratio));
    }
    Ok(0.5 / (1.0 - ratio))
}

/// Inverts the slow-start crossover `w = 3^(ln N / ln 1.5)`.
pub fn n_from_crossover(window: f64) -> f64 {
    window.max(1.0).powf(1.0 - 2f64.ln() / 3f64.ln())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlowStartEvidence {
    /// Largest window observed sending three packets per ack.
    pub last_triple: f64,
    /// First window observed sending two packets per ack.
    pub first_double: f64,
    pub estimate: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecreaseEvidence {
    pub samples: usize,
    pub median_ratio: f64,
    pub estimate: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EstimateSource {
    SteadyState,
    SlowStart,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub n: f64,
    pub source: EstimateSource,
    pub slow_start: Option<SlowStartEvidence>,
    pub steady_state: Option<DecreaseEvidence>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

fn evidence_from_bracket(last_triple: f64, first_double: f64) -> SlowStartEvidence {
    let estimate = (n_from_crossover(last_triple) * n_from_crossover(first_double)).sqrt();
    SlowStartEvidence {
        last_triple,
        first_double,
        estimate,
    }
}

fn has_windows(trace: &[TraceRecord]) -> bool {
    trace
        .iter()
        .any(|r| r.cwnd_before.is_some() && r.cwnd_after.is_some())
}

/// Slow-start crossover from exact window records. Slow start starts from a
/// window of one, so its windows are integers; growth of exactly two then
/// exactly one segment per ack marks the crossover.
fn slow_start_from_windows(trace: &[TraceRecord]) -> Option<SlowStartEvidence> {
    let mut last_triple: Option<f64> = None;
    for r in trace {
        match r.event {
            TraceEvent::Timeout => last_triple = None,
            TraceEvent::AckReceived => {
                let (Some(before), Some(after)) = (r.cwnd_before, r.cwnd_after) else {
                    continue;
                };
                if before.fract() != 0.0 {
                    continue;
                }
                let growth = after - before;
                if growth == 2.0 {
                    last_triple = Some(before);
                } else if growth == 1.0 {
                    if let Some(lt) = last_triple {
                        return Some(evidence_from_bracket(lt, before));
                    }
                }
            }
            _ => {}
        }
    }
    None
}

fn decrease_from_windows(trace: &[TraceRecord]) -> Vec<f64> {
    trace
        .iter()
        .filter(|r| r.event == TraceEvent::LossDetected)
        .filter_map(|r| Some(r.cwnd_after? / r.cwnd_before?))
        .filter(|ratio| *ratio > 0.0 && *ratio < 1.0)
        .collect()
}

/// Wire-only view: packets in flight and new-data sends between acks.
struct WireReplay {
    highest: Option<u64>,
    cum_ack: u64,
}

impl WireReplay {
    fn flight(&self) -> u64 {
        self.highest.map_or(0, |h| (h + 1).saturating_sub(self.cum_ack))
    }
}

fn slow_start_from_wire(trace: &[TraceRecord]) -> Option<SlowStartEvidence> {
    let mut replay = WireReplay { highest: None, cum_ack: 0 };
    let mut last_triple: Option<f64> = None;
    let mut pending: Option<(u64, u32)> = None; // (flight before ack, new sends since)
    let settle = |pending: &mut Option<(u64, u32)>, last_triple: &mut Option<f64>| -> Option<SlowStartEvidence> {
        let (flight, sends) = pending.take()?;
        match sends {
            3 => *last_triple = Some(flight as f64),
            2 => {
                if let Some(lt) = *last_triple {
                    return Some(evidence_from_bracket(lt, flight as f64));
                }
            }
            _ => {}
        }
        None
    };
    for r in trace {
        match r.event {
            TraceEvent::AckReceived => {
                if let Some(found) = settle(&mut pending, &mut last_triple) {
                    return Some(found);
                }
                let flight = replay.flight();
                if let Some(a) = r.ack {
                    replay.cum_ack = replay.cum_ack.max(a);
                }
                pending = Some((flight, 0));
            }
            TraceEvent::DataSent => {
                let Some(seq) = r.seq else { continue };
                if replay.highest.is_none_or(|h| seq > h) {
                    replay.highest = Some(seq);
                    if let Some((_, sends)) = pending.as_mut() {
                        *sends += 1;
                    }
                } else {
                    // Retransmission ends the slow-start signature.
                    pending = None;
                    last_triple = None;
                }
            }
            TraceEvent::Timeout | TraceEvent::LossDetected => {
                pending = None;
                last_triple = None;
            }
        }
    }
    settle(&mut pending, &mut last_triple)
}

/// Window ratios across each recovery, reconstructed from flight sizes:
/// the flight when the first retransmission goes out versus the flight once
/// everything outstanding at that moment has been acknowledged.
fn decrease_from_wire(trace: &[TraceRecord]) -> Vec<f64> {
    let mut replay = WireReplay { highest: None, cum_ack: 0 };
    let mut recovering: Option<(u64, u64)> = None; // (flight before, recovery point)
    let mut timed_out = false;
    let mut ratios = Vec::new();
    for r in trace {
        match r.event {
            TraceEvent::Timeout => {
                recovering = None;
                timed_out = true;
            }
            TraceEvent::DataSent => {
                let Some(seq) = r.seq else { continue };
                match replay.highest {
                    Some(h) if seq <= h => {
                        if recovering.is_none() && !timed_out {
                            recovering = Some((replay.flight(), h + 1));
                        }
                    }
                    _ => replay.highest = Some(seq),
                }
            }
            TraceEvent::AckReceived => {
                if let Some(a) = r.ack {
                    replay.cum_ack = replay.cum_ack.max(a);
                }
                if let Some((before, point)) = recovering {
                    if replay.cum_ack >= point {
                        if before > 0 {
                            ratios.push(replay.flight() as f64 / before as f64);
                        }
                        recovering = None;
                    }
                }
                if timed_out && replay.highest.is_some_and(|h| replay.cum_ack > h) {
                    timed_out = false;
                }
            }
            TraceEvent::LossDetected => {}
        }
    }
    ratios.retain(|r| *r > 0.0 && *r < 1.0);
    ratios
}

/// Estimates the effective weight of the flow that produced `trace`.
///
/// The steady-state estimate (median over window reductions) is preferred
/// when at least [`MIN_LOSS_EVENTS`] reductions are present; otherwise the
/// slow-start crossover is used.
pub fn analyze_trace(trace: &[TraceRecord]) -> Result<Estimate, PolicingError> {
    let (slow_start, mut ratios) = if has_windows(trace) {
        (slow_start_from_windows(trace), decrease_from_windows(trace))
    } else {
        (slow_start_from_wire(trace), decrease_from_wire(trace))
    };
    let steady_state = if ratios.is_empty() {
        None
    } else {
        let samples = ratios.len();
        let median_ratio = median(&mut ratios);
        Some(DecreaseEvidence {
            samples,
            median_ratio,
            estimate: estimate_n_from_decrease(median_ratio)?,
        })
    };
    match (steady_state, slow_start) {
        (Some(ss), _) if ss.samples >= MIN_LOSS_EVENTS => Ok(Estimate {
            n: ss.estimate,
            source: EstimateSource::SteadyState,
            slow_start,
            steady_state,
        }),
        (_, Some(sl)) => Ok(Estimate {
            n: sl.estimate,
            source: EstimateSource::SlowStart,
            slow_start,
            steady_state,
        }),
        (ss, None) => Err(PolicingError::Indeterminate {
            loss_events: ss.map_or(0, |s| s.samples),
        }),
    }
}

/// A flow's declared weight over `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Declaration {
    #[serde(rename = "flow_id")]
    pub flow: FlowId,
    pub declared_n: f64,
    #[serde(rename = "start_ns")]
    pub start: SimTime,
    #[serde(rename = "end_ns")]
    pub end: SimTime,
}

impl Declaration {
    pub fn validate(&self) -> Result<(), PolicingError> {
        if !(self.declared_n.is_finite() && self.declared_n >= 1.0) {
            return Err(PolicingError::InvalidDeclaration {
                flow: self.flow,
                reason: "declared N must be >= 1",
            });
        }
        if self.start >= self.end {
            return Err(PolicingError::InvalidDeclaration {
                flow: self.flow,
                reason: "interval start must precede end",
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Verdict {
    Compliant { observed: f64 },
    Violation { observed: f64 },
    /// The trace did not carry enough evidence; never a violation.
    Unverifiable,
}

/// Checks that the flow did not behave more aggressively than declared.
/// Using less than the declared weight is compliant.
pub fn verify_declaration(trace: &[TraceRecord], decl: &Declaration, tolerance: f64) -> Verdict {
    let relevant: Vec<TraceRecord> = trace
        .iter()
        .filter(|r| r.flow == decl.flow && r.time >= decl.start && r.time < decl.end)
        .cloned()
        .collect();
    match analyze_trace(&relevant) {
        Ok(est) if est.n > decl.declared_n * (1.0 + tolerance) => Verdict::Violation { observed: est.n },
        Ok(est) => Verdict::Compliant { observed: est.n },
        Err(_) => Verdict::Unverifiable,
    }
}

/// Charge for `period` in weight-seconds: the time integral of the sum of
/// declared weights active at each instant.
pub fn bill(declarations: &[Declaration], period: (SimTime, SimTime)) -> Result<f64, PolicingError> {
    let (from, to) = period;
    if from > to {
        return Err(PolicingError::InvalidPeriod);
    }
    let mut by_flow: BTreeMap<FlowId, Vec<&Declaration>> = BTreeMap::new();
    for d in declarations {
        d.validate()?;
        by_flow.entry(d.flow).or_default().push(d);
    }
    for (flow, decls) in by_flow.iter_mut() {
        decls.sort_by_key(|d| d.start);
        if decls.windows(2).any(|w| w[1].start < w[0].end) {
            return Err(PolicingError::OverlappingDeclarations(*flow));
        }
    }

    let mut cuts: Vec<SimTime> = declarations
        .iter()
        .flat_map(|d| [d.start, d.end])
        .chain([from, to])
        .map(|t| t.clamp(from, to))
        .collect();
    cuts.sort();
    cuts.dedup();

    let mut charge = 0.0;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let active: f64 = declarations
            .iter()
            .filter(|d| d.start <= a && d.end >= b)
            .map(|d| d.declared_n)
            .sum();
        charge += active * (b - a).as_secs_f64();
    }
    Ok(charge)
}

/// Window at which a weight-`n` sender leaves three-per-ack slow start.
pub fn expected_crossover(n: f64) -> Option<f64> {
    slow_start_crossover(n).ok()
}
