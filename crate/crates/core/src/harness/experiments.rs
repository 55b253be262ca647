use rayon::prelude::*;
use serde::Serialize;

use crate::tcp::Variant;

use super::scenario::{build_dumbbell, DumbbellParams, Scenario};
use super::HarnessError;

/// Shared settings for the dumbbell sweeps.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSettings {
    pub dumbbell: DumbbellParams,
    pub duration_s: f64,
    pub warmup_s: f64,
    pub start_jitter_s: f64,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            dumbbell: DumbbellParams::default(),
            duration_s: 70.0,
            warmup_s: 10.0,
            start_jitter_s: 1.0,
        }
    }
}

impl SweepSettings {
    fn scenario(&self, seed: u64) -> Result<Scenario, HarnessError> {
        let mut s = build_dumbbell(self.dumbbell.flows, &self.dumbbell)?;
        s.seed = seed;
        s.duration_s = self.duration_s;
        s.warmup_s = Some(self.warmup_s);
        s.start_jitter_s = self.start_jitter_s;
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GainRow {
    pub variant: Variant,
    pub n: f64,
    pub seed: u64,
    pub gain: f64,
    /// Measured throughput of every flow, bytes/s.
    pub throughputs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GainSummary {
    pub variant: Variant,
    pub n: f64,
    pub seeds: usize,
    pub mean_gain: f64,
    pub median_gain: f64,
    /// Sample standard deviation over seeds.
    pub std_gain: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct GainTable {
    pub rows: Vec<GainRow>,
    pub summary: Vec<GainSummary>,
}

impl GainTable {
    pub fn summary_for(&self, variant: Variant, n: f64) -> Option<&GainSummary> {
        self.summary.iter().find(|s| s.variant == variant && s.n == n)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DispersionRow {
    pub n: f64,
    pub seed: u64,
    pub std_over_mean: f64,
    pub throughputs: Vec<f64>,
    pub rtts: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DispersionSummary {
    pub n: f64,
    pub seeds: usize,
    pub mean_std_over_mean: f64,
    pub std_std_over_mean: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct DispersionTable {
    pub variant: Option<Variant>,
    pub rows: Vec<DispersionRow>,
    pub summary: Vec<DispersionSummary>,
}

impl DispersionTable {
    /// Spearman correlation between N and mean dispersion across the grid.
    pub fn trend(&self) -> f64 {
        let n: Vec<f64> = self.summary.iter().map(|s| s.n).collect();
        let d: Vec<f64> = self.summary.iter().map(|s| s.mean_std_over_mean).collect();
        spearman(&n, &d)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum ExperimentResult {
    Gain(GainTable),
    Dispersion(DispersionTable),
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 0 {
        (v[mid - 1] + v[mid]) / 2.0
    } else {
        v[mid]
    }
}

/// Population standard deviation over mean of throughput times RTT.
/// Zero for a single flow or when every flow got nothing.
pub fn normalized_dispersion(throughputs: &[f64], rtts: &[f64]) -> f64 {
    assert_eq!(throughputs.len(), rtts.len(), "one RTT per flow");
    let norm: Vec<f64> = throughputs.iter().zip(rtts).map(|(t, r)| t * r).collect();
    let m = mean(&norm);
    if norm.len() < 2 || m <= 0.0 {
        return 0.0;
    }
    let var = norm.iter().map(|x| (x - m).powi(2)).sum::<f64>() / norm.len() as f64;
    var.sqrt() / m
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties. Returns 0 when
/// either side has no variation.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, my) = (mean(&rx), mean(&ry));
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

fn check_grid(n_grid: &[f64], seeds: &[u64]) -> Result<(), HarnessError> {
    if n_grid.is_empty() || seeds.is_empty() {
        return Err(HarnessError::Scenario("N grid and seed list must be non-empty".into()));
    }
    Ok(())
}

/// Flow 0 runs with weight N, every other flow with weight 1. Gain is the
/// throughput of flow 0 over that of flow 1. Both sit at the midpoint of
/// the access delay range so that they share one RTT.
pub fn run_gain_experiment(
    variant: Variant,
    n_grid: &[f64],
    seeds: &[u64],
    settings: &SweepSettings,
) -> Result<GainTable, HarnessError> {
    check_grid(n_grid, seeds)?;
    let mut params = settings.clone();
    params.dumbbell.variant = variant;
    params.dumbbell.n = 1.0;
    let points: Vec<(f64, u64)> = n_grid
        .iter()
        .flat_map(|&n| seeds.iter().map(move |&s| (n, s)))
        .collect();
    let rows = points
        .par_iter()
        .map(|&(n, seed)| {
            let mut scenario = params.scenario(seed)?;
            scenario.flows[0].n = n;
            let d = &params.dumbbell;
            let mid = (d.access_delay_min_ms + d.access_delay_max_ms) / 2.0;
            for flow in 0..2 {
                let access = scenario.flows[flow].route[0].clone();
                if let Some(link) = scenario.links.iter_mut().find(|l| l.name == access) {
                    link.delay_ms = mid;
                }
            }
            let run = scenario.run()?;
            let t = run.throughputs();
            let gain = if t[1] > 0.0 { t[0] / t[1] } else { f64::INFINITY };
            Ok(GainRow { variant, n, seed, gain, throughputs: t })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let summary = n_grid
        .iter()
        .map(|&n| {
            let gains: Vec<f64> = rows.iter().filter(|r| r.n == n).map(|r| r.gain).collect();
            GainSummary {
                variant,
                n,
                seeds: gains.len(),
                mean_gain: mean(&gains),
                median_gain: median(&gains),
                std_gain: sample_std(&gains),
            }
        })
        .collect();
    Ok(GainTable { rows, summary })
}

/// Every flow runs with the same weight; reports the RTT-normalized
/// throughput dispersion per run.
pub fn run_fairness_experiment(
    variant: Variant,
    n_grid: &[f64],
    seeds: &[u64],
    settings: &SweepSettings,
) -> Result<DispersionTable, HarnessError> {
    check_grid(n_grid, seeds)?;
    let points: Vec<(f64, u64)> = n_grid
        .iter()
        .flat_map(|&n| seeds.iter().map(move |&s| (n, s)))
        .collect();
    let rows = points
        .par_iter()
        .map(|&(n, seed)| {
            let mut params = settings.clone();
            params.dumbbell.variant = variant;
            params.dumbbell.n = n;
            let run = params.scenario(seed)?.run()?;
            let t = run.throughputs();
            Ok(DispersionRow {
                n,
                seed,
                std_over_mean: normalized_dispersion(&t, &run.rtts),
                throughputs: t,
                rtts: run.rtts,
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let summary = n_grid
        .iter()
        .map(|&n| {
            let d: Vec<f64> = rows.iter().filter(|r| r.n == n).map(|r| r.std_over_mean).collect();
            DispersionSummary {
                n,
                seeds: d.len(),
                mean_std_over_mean: mean(&d),
                std_std_over_mean: sample_std(&d),
            }
        })
        .collect();
    Ok(DispersionTable { variant: Some(variant), rows, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dispersion_of_equal_normalized_rates_is_zero() {
        assert_eq!(normalized_dispersion(&[10.0, 5.0], &[0.1, 0.2]), 0.0);
        assert_eq!(normalized_dispersion(&[7.0], &[0.3]), 0.0);
        let d = normalized_dispersion(&[1.0, 3.0], &[1.0, 1.0]);
        assert!((d - 0.5).abs() < 1e-12);
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[0.1, 0.5, 0.9]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 2.0], &[5.0, 5.0]), 0.0);
        assert_eq!(ranks(&[2.0, 1.0, 2.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn stats_helpers() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!((sample_std(&[1.0, 3.0]) - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn empty_grid_is_rejected() {
        let s = SweepSettings::default();
        assert!(run_gain_experiment(Variant::Reno, &[], &[1], &s).is_err());
        assert!(run_fairness_experiment(Variant::Reno, &[1.0], &[], &s).is_err());
    }

    #[test]
    fn short_gain_run_orders_rows() {
        let s = SweepSettings {
            dumbbell: DumbbellParams { flows: 4, ..Default::default() },
            duration_s: 4.0,
            warmup_s: 1.0,
            start_jitter_s: 0.5,
        };
        let t = run_gain_experiment(Variant::Sack, &[1.0, 2.0], &[1, 2], &s).unwrap();
        let keys: Vec<(f64, u64)> = t.rows.iter().map(|r| (r.n, r.seed)).collect();
        assert_eq!(keys, vec![(1.0, 1), (1.0, 2), (2.0, 1), (2.0, 2)]);
        assert!(t.rows.iter().all(|r| r.gain.is_finite() && r.gain > 0.0));
        assert_eq!(t.summary.len(), 2);
    }
}
