//! Steady-state throughput of a weighted AIMD sender.
//!
//! The window follows a saw-tooth: after a loss it drops to
//! `W (N - 1/2) / N` and then grows by `N` segments per round trip until it
//! reaches `W` again. With one loss per cycle this gives
//!
//! ```text
//! S  = W^2 / (2 N^2) * (N - 1/4) / N       segments per cycle
//! p  = 1 / S
//! T  = sqrt(2) * sqrt(N (N - 1/4)) * B / (R sqrt(p))
//! T1 = sqrt(3/2) * B / (R sqrt(p))         the N = 1 case
//! ```
//!
//! [`sawtooth_oracle`] simulates the idealised process round by round with
//! random per-packet losses and is used to validate the closed forms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("weight N must be >= 1, got {0}")]
    Weight(f64),
    #[error("loss probability must lie in (0, 1), got {0}")]
    LossRate(f64),
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("window {window} with N = {n} gives loss rate {p} >= 1, outside the model's range")]
    OutOfRange { window: f64, n: f64, p: f64 },
    #[error("oracle needs at least {min} cycles, got {got}")]
    TooFewCycles { min: u64, got: u64 },
}

/// Inputs of the throughput model: weight, loss rate, packet size in bytes
/// and round-trip time in seconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelParams {
    pub n: f64,
    pub p: f64,
    pub packet_bytes: f64,
    pub rtt: f64,
}

impl ModelParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        check_weight(self.n)?;
        check_loss(self.p)?;
        positive("packet size", self.packet_bytes)?;
        positive("round-trip time", self.rtt)?;
        Ok(())
    }
}

fn check_weight(n: f64) -> Result<(), ModelError> {
    if n.is_finite() && n >= 1.0 {
        Ok(())
    } else {
        Err(ModelError::Weight(n))
    }
}

fn check_loss(p: f64) -> Result<(), ModelError> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(ModelError::LossRate(p))
    }
}

fn positive(name: &'static str, value: f64) -> Result<(), ModelError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(ModelError::NonPositive { name, value })
    }
}

/// Segments sent during one saw-tooth cycle peaking at `window`.
pub fn cycle_data(window: f64, n: f64) -> f64 {
    window * window / (2.0 * n * n) * (n - 0.25) / n
}

/// Loss rate sustaining a saw-tooth that peaks at `window`.
pub fn loss_rate_for_window(window: f64, n: f64) -> Result<f64, ModelError> {
    check_weight(n)?;
    positive("window", window)?;
    let p = 2.0 * n * n / (window * window) * n / (n - 0.25);
    if p >= 1.0 {
        return Err(ModelError::OutOfRange { window, n, p });
    }
    Ok(p)
}

/// Peak window for loss rate `p`; inverse of [`loss_rate_for_window`].
pub fn window_for_loss_rate(p: f64, n: f64) -> Result<f64, ModelError> {
    check_weight(n)?;
    check_loss(p)?;
    Ok((2.0 * n * n * n / (p * (n - 0.25))).sqrt())
}

/// Mean window over a cycle, `W (N - 1/4) / N`.
pub fn mean_window(p: f64, n: f64) -> Result<f64, ModelError> {
    Ok(window_for_loss_rate(p, n)? * (n - 0.25) / n)
}

/// Throughput in bytes per second of a weight-`n` flow.
pub fn multcp_throughput(n: f64, p: f64, packet_bytes: f64, rtt: f64) -> Result<f64, ModelError> {
    ModelParams { n, p, packet_bytes, rtt }.validate()?;
    Ok(2f64.sqrt() * (n * (n - 0.25)).sqrt() * packet_bytes / (rtt * p.sqrt()))
}

/// Throughput of a standard connection, `sqrt(3/2) B / (R sqrt(p))`.
pub fn standard_throughput(p: f64, packet_bytes: f64, rtt: f64) -> Result<f64, ModelError> {
    ModelParams { n: 1.0, p, packet_bytes, rtt }.validate()?;
    Ok(1.5f64.sqrt() * packet_bytes / (rtt * p.sqrt()))
}

/// `T / T1 = (2 / sqrt 3) sqrt(N (N - 1/4))`.
pub fn gain_ratio(n: f64) -> Result<f64, ModelError> {
    check_weight(n)?;
    // (2 / sqrt 3) sqrt(N (N - 1/4)) written so that N = 1 gives exactly 1.
    Ok(((4.0 * n * n - n) / 3.0).sqrt())
}

pub const MIN_ORACLE_CYCLES: u64 = 100;

/// Measured throughput (bytes/s) of the idealised saw-tooth process.
///
/// Each round trip the flow sends its current window. Every packet is lost
/// independently with probability `p`; a round with at least one loss ends
/// with a single reduction to `(N - 1/2) / N` of the window, otherwise the
/// window grows by `N`. The run stops after `cycles` loss events; the first
/// one percent of cycles is discarded as warm-up.
pub fn sawtooth_oracle(params: ModelParams, cycles: u64, seed: u64) -> Result<f64, ModelError> {
    params.validate()?;
    if cycles < MIN_ORACLE_CYCLES {
        return Err(ModelError::TooFewCycles {
            min: MIN_ORACLE_CYCLES,
            got: cycles,
        });
    }
    let ModelParams { n, p, packet_bytes, rtt } = params;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = (n - 0.5) / n;
    let survive = (1.0 - p).ln();
    let warmup = cycles / 100;

    let mut window = mean_window(p, n)?.max(1.0);
    let mut losses = 0u64;
    let mut packets = 0.0;
    let mut rounds = 0u64;
    while losses < cycles + warmup {
        let p_round = 1.0 - (survive * window).exp();
        let lost = rng.gen::<f64>() < p_round;
        if losses >= warmup {
            packets += window;
            rounds += 1;
        }
        if lost {
            window = (window * keep).max(1.0);
            losses += 1;
        } else {
            window += n;
        }
    }
    Ok(packets * packet_bytes / (rounds as f64 * rtt))
}
