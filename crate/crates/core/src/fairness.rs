//! Fairness criteria for rate vectors on a capacitated network, and the
//! allocators that produce fair vectors.
//!
//! A rate vector `x` is feasible when rates are non-negative and no link
//! carries more than its capacity. It is
//!
//! * max-min fair when no rate can grow without shrinking a rate that is
//!   already smaller or equal;
//! * proportionally fair per unit charge, for weights `w`, when every other
//!   feasible `y` has `sum_s w_s (y_s - x_s) / x_s <= 0`.
//!
//! The predicates are checked by sampling (weighted proportional fairness)
//! and by brute force over a grid (max-min). [`maxmin_allocate`] uses
//! progressive filling; [`wpf_allocate`] maximises `sum_s w_s ln x_s`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative tolerance on link capacities.
pub const CAPACITY_TOLERANCE: f64 = 1e-9;

/// Absolute tolerance on the aggregate proportional change.
pub const PF_EPSILON: f64 = 1e-9;

/// Target relative KKT residual of the log-utility solver.
pub const KKT_TOLERANCE: f64 = 1e-6;

/// Largest instance checked by brute force.
pub const BRUTE_FORCE_MAX_CONNECTIONS: usize = 4;
pub const BRUTE_FORCE_MAX_LINKS: usize = 3;

const SOLVER_MAX_SWEEPS: usize = 200_000;

#[derive(Debug, Error, PartialEq)]
pub enum FairnessError {
    #[error("expected {expected} entries, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("link {0} has non-positive capacity")]
    Capacity(usize),
    #[error("connection {0} has an empty route")]
    EmptyRoute(usize),
    #[error("connection {connection} uses unknown link {link}")]
    UnknownLink { connection: usize, link: usize },
    #[error("weight of connection {0} must be positive")]
    Weight(usize),
    #[error("connection {0} has zero rate; proportional change is undefined")]
    ZeroRate(usize),
    #[error("rate vector is not feasible")]
    Infeasible,
    #[error("solver did not converge: relative KKT residual {residual:e} after {sweeps} sweeps")]
    NoConvergence { residual: f64, sweeps: usize },
}

/// Links with capacities and connections given by the links they cross.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacitatedNetwork {
    capacities: Vec<f64>,
    routes: Vec<Vec<usize>>,
}

impl CapacitatedNetwork {
    pub fn new(capacities: Vec<f64>, routes: Vec<Vec<usize>>) -> Result<Self, FairnessError> {
        if let Some(l) = capacities.iter().position(|c| !(*c > 0.0 && c.is_finite())) {
            return Err(FairnessError::Capacity(l));
        }
        for (s, route) in routes.iter().enumerate() {
            if route.is_empty() {
                return Err(FairnessError::EmptyRoute(s));
            }
            if let Some(&link) = route.iter().find(|&&l| l >= capacities.len()) {
                return Err(FairnessError::UnknownLink { connection: s, link });
            }
        }
        Ok(CapacitatedNetwork { capacities, routes })
    }

    /// `n` connections sharing one link.
    pub fn single_link(capacity: f64, n: usize) -> Result<Self, FairnessError> {
        Self::new(vec![capacity], vec![vec![0]; n])
    }

    pub fn capacities(&self) -> &[f64] {
        &self.capacities
    }

    pub fn routes(&self) -> &[Vec<usize>] {
        &self.routes
    }

    pub fn connections(&self) -> usize {
        self.routes.len()
    }

    pub fn links(&self) -> usize {
        self.capacities.len()
    }

    pub fn loads(&self, rates: &[f64]) -> Vec<f64> {
        let mut loads = vec![0.0; self.capacities.len()];
        for (route, rate) in self.routes.iter().zip(rates) {
            for &l in route {
                loads[l] += rate;
            }
        }
        loads
    }

    fn bottleneck_capacity(&self, connection: usize) -> f64 {
        self.routes[connection]
            .iter()
            .map(|&l| self.capacities[l])
            .fold(f64::INFINITY, f64::min)
    }

    fn check_len(&self, got: usize) -> Result<(), FairnessError> {
        if got != self.connections() {
            return Err(FairnessError::DimensionMismatch {
                expected: self.connections(),
                got,
            });
        }
        Ok(())
    }

    fn fits(&self, rates: &[f64]) -> bool {
        rates.iter().all(|r| *r >= 0.0)
            && self
                .loads(rates)
                .iter()
                .zip(&self.capacities)
                .all(|(load, cap)| *load <= cap * (1.0 + CAPACITY_TOLERANCE))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateVector(pub Vec<f64>);

impl RateVector {
    pub fn rates(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self, FairnessError> {
        if let Some(s) = weights.iter().position(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(FairnessError::Weight(s));
        }
        Ok(WeightVector(weights))
    }

    pub fn uniform(n: usize) -> Self {
        WeightVector(vec![1.0; n])
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }
}

pub fn is_feasible(x: &RateVector, net: &CapacitatedNetwork) -> Result<bool, FairnessError> {
    net.check_len(x.0.len())?;
    Ok(net.fits(&x.0))
}

/// `sum_s w_s (y_s - x_s) / x_s`.
pub fn weighted_proportional_change(x: &[f64], y: &[f64], w: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .zip(w)
        .map(|((x, y), w)| w * (y - x) / x)
        .sum()
}

/// Draws a feasible vector: uniform rates up to each connection's smallest
/// link capacity, scaled down by the overload of the most loaded link.
pub fn sample_feasible<R: Rng + ?Sized>(net: &CapacitatedNetwork, rng: &mut R) -> Vec<f64> {
    let mut y: Vec<f64> = (0..net.connections())
        .map(|s| rng.gen::<f64>() * net.bottleneck_capacity(s))
        .collect();
    let overload = net
        .loads(&y)
        .iter()
        .zip(net.capacities())
        .map(|(load, cap)| load / cap)
        .fold(0.0, f64::max);
    if overload > 1.0 {
        for r in &mut y {
            *r /= overload;
        }
    }
    y
}

#[derive(Clone, Debug, PartialEq)]
pub struct PfVerdict {
    pub pass: bool,
    pub trials: usize,
    /// Largest aggregate weighted change found and the vector producing it.
    pub worst_value: f64,
    pub worst_y: Vec<f64>,
    /// Unweighted criterion, evaluated when all weights are equal.
    pub unweighted_pass: Option<bool>,
}

/// Samples `trials` feasible alternatives and checks that none has a
/// positive aggregate weighted proportional change.
pub fn check_weighted_pf(
    x: &RateVector,
    w: &WeightVector,
    net: &CapacitatedNetwork,
    trials: usize,
    seed: u64,
) -> Result<PfVerdict, FairnessError> {
    net.check_len(x.0.len())?;
    net.check_len(w.0.len())?;
    if !net.fits(&x.0) {
        return Err(FairnessError::Infeasible);
    }
    if let Some(s) = x.0.iter().position(|r| *r == 0.0) {
        return Err(FairnessError::ZeroRate(s));
    }
    let equal_weights = w.0.windows(2).all(|p| p[0] == p[1]);
    let ones = vec![1.0; x.0.len()];

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_value = 0.0;
    let mut worst_y = x.0.clone();
    let mut worst_unweighted = 0.0f64;
    for _ in 0..trials {
        let y = sample_feasible(net, &mut rng);
        let value = weighted_proportional_change(&x.0, &y, &w.0);
        if equal_weights {
            worst_unweighted = worst_unweighted.max(weighted_proportional_change(&x.0, &y, &ones));
        }
        if value > worst_value {
            worst_value = value;
            worst_y = y;
        }
    }
    Ok(PfVerdict {
        pass: worst_value <= PF_EPSILON,
        trials,
        worst_value,
        worst_y,
        unweighted_pass: equal_weights.then_some(worst_unweighted <= PF_EPSILON),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaxMinMethod {
    BruteForce,
    BottleneckCriterion,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaxMinVerdict {
    pub pass: bool,
    pub method: MaxMinMethod,
    /// Every connection crosses a saturated link on which it has a maximal rate.
    pub bottleneck_pass: bool,
    /// Brute-force result with `y_s < x_s <= x_r` (standard form).
    pub brute_force_pass: Option<bool>,
    /// Brute-force result with `y_s < x_s < x_r`; differs only on ties.
    pub strict_form_pass: Option<bool>,
    pub counterexample: Option<Vec<f64>>,
}

fn bottleneck_condition(x: &[f64], net: &CapacitatedNetwork) -> bool {
    let loads = net.loads(x);
    let tol = |c: f64| c * 1e-9;
    (0..net.connections()).all(|r| {
        net.routes[r].iter().any(|&l| {
            let saturated = loads[l] >= net.capacities[l] - tol(net.capacities[l]);
            let maximal = net
                .routes
                .iter()
                .enumerate()
                .filter(|(_, route)| route.contains(&l))
                .all(|(s, _)| x[s] <= x[r] + tol(net.capacities[l]));
            saturated && maximal
        })
    })
}

/// Whether `y` breaks the max-min property of `x`: some rate grows while
/// no rate that is smaller (or, with `strict`, strictly smaller) than it shrinks.
fn violates(x: &[f64], y: &[f64], strict: bool, tol: f64) -> bool {
    (0..x.len()).any(|r| {
        y[r] > x[r] + tol
            && !(0..x.len()).any(|s| {
                let below = if strict { x[s] < x[r] - tol } else { x[s] <= x[r] + tol };
                y[s] < x[s] - tol && below
            })
    })
}

const GRID_LEVELS: usize = 24;

fn candidate_levels(x: f64, cap: f64) -> Vec<f64> {
    let delta = cap * 1e-3;
    let mut levels: Vec<f64> = (0..=GRID_LEVELS)
        .map(|k| cap * k as f64 / GRID_LEVELS as f64)
        .chain([x, x - delta, x + delta])
        .filter(|v| *v >= 0.0 && *v <= cap)
        .collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    levels
}

/// Enumerates the grid of alternatives; returns the first counterexample
/// for the standard form and whether the strict form holds.
fn brute_force(x: &[f64], net: &CapacitatedNetwork) -> (Option<Vec<f64>>, bool) {
    let levels: Vec<Vec<f64>> = (0..x.len())
        .map(|s| candidate_levels(x[s], net.bottleneck_capacity(s)))
        .collect();
    let tol = net.capacities.iter().fold(0.0f64, |a, c| a.max(*c)) * 1e-9;
    let mut index = vec![0usize; x.len()];
    let mut y = vec![0.0; x.len()];
    let mut counterexample = None;
    let mut strict_ok = true;
    loop {
        for (s, &i) in index.iter().enumerate() {
            y[s] = levels[s][i];
        }
        if net.fits(&y) {
            if counterexample.is_none() && violates(x, &y, false, tol) {
                counterexample = Some(y.clone());
            }
            if strict_ok && violates(x, &y, true, tol) {
                strict_ok = false;
            }
            if counterexample.is_some() && !strict_ok {
                break;
            }
        }
        // odometer increment
        let mut s = 0;
        loop {
            if s == index.len() {
                return (counterexample, strict_ok);
            }
            index[s] += 1;
            if index[s] < levels[s].len() {
                break;
            }
            index[s] = 0;
            s += 1;
        }
    }
    (counterexample, strict_ok)
}

/// Checks max-min fairness. Small instances are checked by brute force over
/// a grid of feasible alternatives; larger ones by the bottleneck criterion.
pub fn check_maxmin(x: &RateVector, net: &CapacitatedNetwork) -> Result<MaxMinVerdict, FairnessError> {
    net.check_len(x.0.len())?;
    if !net.fits(&x.0) {
        return Err(FairnessError::Infeasible);
    }
    let bottleneck_pass = bottleneck_condition(&x.0, net);
    if net.connections() <= BRUTE_FORCE_MAX_CONNECTIONS && net.links() <= BRUTE_FORCE_MAX_LINKS {
        let (counterexample, strict) = brute_force(&x.0, net);
        Ok(MaxMinVerdict {
            pass: counterexample.is_none(),
            method: MaxMinMethod::BruteForce,
            bottleneck_pass,
            brute_force_pass: Some(counterexample.is_none()),
            strict_form_pass: Some(strict),
            counterexample,
        })
    } else {
        Ok(MaxMinVerdict {
            pass: bottleneck_pass,
            method: MaxMinMethod::BottleneckCriterion,
            bottleneck_pass,
            brute_force_pass: None,
            strict_form_pass: None,
            counterexample: None,
        })
    }
}

/// Max-min fair rates by progressive filling: raise all unfrozen rates
/// together until a link saturates, freeze the connections crossing it,
/// repeat.
pub fn maxmin_allocate(net: &CapacitatedNetwork) -> RateVector {
    let n = net.connections();
    let mut rates = vec![0.0; n];
    let mut frozen = vec![false; n];
    let mut saturated = vec![false; net.links()];
    while frozen.iter().any(|f| !f) {
        let loads = net.loads(&rates);
        let mut step = f64::INFINITY;
        let mut active = vec![0usize; net.links()];
        for (s, route) in net.routes.iter().enumerate() {
            if !frozen[s] {
                for &l in route {
                    active[l] += 1;
                }
            }
        }
        for l in 0..net.links() {
            if active[l] > 0 {
                step = step.min((net.capacities[l] - loads[l]) / active[l] as f64);
            }
        }
        let step = step.max(0.0);
        for s in 0..n {
            if !frozen[s] {
                rates[s] += step;
            }
        }
        let loads = net.loads(&rates);
        for l in 0..net.links() {
            if active[l] > 0 && loads[l] >= net.capacities[l] * (1.0 - 1e-12) {
                saturated[l] = true;
            }
        }
        for (s, route) in net.routes.iter().enumerate() {
            if route.iter().any(|&l| saturated[l]) {
                frozen[s] = true;
            }
        }
    }
    RateVector(rates)
}

/// Maximiser of `sum_s w_s ln x_s` over the feasible region.
///
/// One-link networks use the closed form `C w_s / sum w`. Otherwise the
/// dual is minimised by exact coordinate descent over link prices; rates
/// are `w_s / (sum of prices on the route)`.
pub fn wpf_allocate(net: &CapacitatedNetwork, w: &WeightVector) -> Result<RateVector, FairnessError> {
    net.check_len(w.0.len())?;
    if net.links() == 1 {
        let total: f64 = w.0.iter().sum();
        let c = net.capacities[0];
        return Ok(RateVector(w.0.iter().map(|wi| c * wi / total).collect()));
    }

    let members: Vec<Vec<usize>> = (0..net.links())
        .map(|l| (0..net.connections()).filter(|&s| net.routes[s].contains(&l)).collect())
        .collect();
    let mut price: Vec<f64> = (0..net.links())
        .map(|l| members[l].iter().map(|&s| w.0[s]).sum::<f64>() / net.capacities[l])
        .collect();
    let route_price = |price: &[f64], s: usize| net.routes[s].iter().map(|&l| price[l]).sum::<f64>();

    let mut residual = f64::INFINITY;
    for sweep in 0..SOLVER_MAX_SWEEPS {
        for l in 0..net.links() {
            if members[l].is_empty() {
                price[l] = 0.0;
                continue;
            }
            let others: Vec<f64> = members[l]
                .iter()
                .map(|&s| route_price(&price, s) - price[l])
                .map(|p| p.max(0.0))
                .collect();
            let demand = |lambda: f64| -> f64 {
                members[l]
                    .iter()
                    .zip(&others)
                    .map(|(&s, q)| w.0[s] / (q + lambda))
                    .sum()
            };
            let cap = net.capacities[l];
            if others.iter().all(|q| *q > 0.0) && demand(0.0) <= cap {
                price[l] = 0.0;
                continue;
            }
            let (mut lo, mut hi) = (0.0, members[l].iter().map(|&s| w.0[s]).sum::<f64>() / cap);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if demand(mid) > cap {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= hi * 1e-15 {
                    break;
                }
            }
            price[l] = hi;
        }

        let rates: Vec<f64> = (0..net.connections()).map(|s| w.0[s] / route_price(&price, s)).collect();
        let loads = net.loads(&rates);
        residual = (0..net.links())
            .map(|l| {
                let c = net.capacities[l];
                let over = (loads[l] - c).max(0.0) / c;
                let slack = if price[l] > 0.0 { (c - loads[l]).abs() / c } else { 0.0 };
                over.max(slack)
            })
            .fold(0.0, f64::max);
        if residual <= KKT_TOLERANCE * 1e-4 || (sweep + 1 == SOLVER_MAX_SWEEPS && residual <= KKT_TOLERANCE) {
            // Trim rounding overshoot so the result is strictly feasible.
            let overload = loads
                .iter()
                .zip(&net.capacities)
                .map(|(load, c)| load / c)
                .fold(1.0, f64::max);
            return Ok(RateVector(rates.into_iter().map(|r| r / overload).collect()));
        }
    }
    Err(FairnessError::NoConvergence {
        residual,
        sweeps: SOLVER_MAX_SWEEPS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_flow(c1: f64, c2: f64) -> CapacitatedNetwork {
        CapacitatedNetwork::new(vec![c1, c2], vec![vec![0, 1], vec![0], vec![1]]).unwrap()
    }

    fn rv(v: &[f64]) -> RateVector {
        RateVector(v.to_vec())
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn feasibility_examples() {
        let net = CapacitatedNetwork::single_link(1.0, 2).unwrap();
        assert!(is_feasible(&rv(&[0.5, 0.5]), &net).unwrap());
        assert!(!is_feasible(&rv(&[0.6, 0.5]), &net).unwrap());
        assert!(!is_feasible(&rv(&[-0.1, 0.5]), &net).unwrap());
        assert_eq!(
            is_feasible(&rv(&[0.5]), &net),
            Err(FairnessError::DimensionMismatch { expected: 2, got: 1 })
        );
    }

    #[test]
    fn network_validation() {
        assert_eq!(CapacitatedNetwork::new(vec![0.0], vec![]), Err(FairnessError::Capacity(0)));
        assert_eq!(CapacitatedNetwork::new(vec![1.0], vec![vec![]]), Err(FairnessError::EmptyRoute(0)));
        assert_eq!(
            CapacitatedNetwork::new(vec![1.0], vec![vec![2]]),
            Err(FairnessError::UnknownLink { connection: 0, link: 2 })
        );
        assert_eq!(WeightVector::new(vec![1.0, 0.0]), Err(FairnessError::Weight(1)));
    }

    #[test]
    fn weighted_pf_examples() {
        let net = CapacitatedNetwork::single_link(1.0, 2).unwrap();
        let w = WeightVector::new(vec![2.0, 1.0]).unwrap();
        let x = rv(&[2.0 / 3.0, 1.0 / 3.0]);
        let v = check_weighted_pf(&x, &w, &net, 10_000, 3).unwrap();
        assert!(v.pass, "{v:?}");
        // Aggregate change is 3 (y1 + y2) - 3 for this x.
        let y = [0.2, 0.7];
        let direct = weighted_proportional_change(&x.0, &y, w.weights());
        assert!((direct - (3.0 * 0.9 - 3.0)).abs() < 1e-12);

        let x_bad = [0.5, 0.5];
        let change = weighted_proportional_change(&x_bad, &[2.0 / 3.0, 1.0 / 3.0], w.weights());
        assert!((change - 1.0 / 3.0).abs() < 1e-12);
        let v = check_weighted_pf(&rv(&x_bad), &w, &net, 1_000, 3).unwrap();
        assert!(!v.pass);
        assert!(v.worst_value > 0.0);
    }

    #[test]
    fn equal_weights_symmetric_boundary() {
        let net = CapacitatedNetwork::single_link(1.0, 2).unwrap();
        let x = [0.5, 0.5];
        assert_eq!(weighted_proportional_change(&x, &x, &[1.0, 1.0]), 0.0);
        let v = check_weighted_pf(&rv(&x), &WeightVector::uniform(2), &net, 2_000, 1).unwrap();
        assert!(v.pass);
        assert_eq!(v.unweighted_pass, Some(true));
    }

    #[test]
    fn zero_rate_is_reported() {
        let net = CapacitatedNetwork::single_link(1.0, 2).unwrap();
        assert_eq!(
            check_weighted_pf(&rv(&[0.0, 0.5]), &WeightVector::uniform(2), &net, 10, 1),
            Err(FairnessError::ZeroRate(0))
        );
    }

    #[test]
    fn maxmin_check_examples() {
        let net = three_flow(1.0, 1.0);
        let good = check_maxmin(&rv(&[0.5, 0.5, 0.5]), &net).unwrap();
        assert!(good.pass && good.bottleneck_pass);
        assert_eq!(good.method, MaxMinMethod::BruteForce);
        // All rates tie, so the strict printed form cannot be satisfied.
        assert_eq!(good.strict_form_pass, Some(false));

        let bad = check_maxmin(&rv(&[0.4, 0.6, 0.6]), &net).unwrap();
        assert!(!bad.pass && !bad.bottleneck_pass);
        assert!(bad.counterexample.is_some());

        let single = CapacitatedNetwork::single_link(1.0, 3).unwrap();
        assert!(check_maxmin(&rv(&[1.0 / 3.0; 3]), &single).unwrap().pass);
    }

    #[test]
    fn large_instances_use_bottleneck_criterion() {
        let net = CapacitatedNetwork::single_link(1.0, 5).unwrap();
        let v = check_maxmin(&rv(&[0.2; 5]), &net).unwrap();
        assert_eq!(v.method, MaxMinMethod::BottleneckCriterion);
        assert!(v.pass);
    }

    #[test]
    fn progressive_filling_examples() {
        let single = CapacitatedNetwork::single_link(1.0, 4).unwrap();
        assert_eq!(maxmin_allocate(&single).0, vec![0.25; 4]);
        assert!(close(&maxmin_allocate(&three_flow(1.0, 1.0)).0, &[0.5, 0.5, 0.5], 1e-12));
        assert!(close(&maxmin_allocate(&three_flow(1.0, 2.0)).0, &[0.5, 0.5, 1.5], 1e-12));
    }

    #[test]
    fn wpf_single_link_closed_form() {
        let net = CapacitatedNetwork::single_link(1.0, 2).unwrap();
        let x = wpf_allocate(&net, &WeightVector::new(vec![2.0, 1.0]).unwrap()).unwrap();
        assert!(close(&x.0, &[2.0 / 3.0, 1.0 / 3.0], 1e-15));
    }

    #[test]
    fn wpf_multi_link_matches_analytic_optimum() {
        // Equal weights: maximise ln x1 + 2 ln(1 - x1), so x1 = 1/3.
        let net = three_flow(1.0, 1.0);
        let x = wpf_allocate(&net, &WeightVector::uniform(3)).unwrap();
        assert!(close(&x.0, &[1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0], 1e-6), "{x:?}");
        assert!(check_weighted_pf(&x, &WeightVector::uniform(3), &net, 10_000, 9).unwrap().pass);
    }

    #[test]
    fn wpf_handles_slack_links() {
        // The second link never binds.
        let net = CapacitatedNetwork::new(vec![1.0, 10.0], vec![vec![0, 1], vec![0]]).unwrap();
        let w = WeightVector::new(vec![1.0, 3.0]).unwrap();
        let x = wpf_allocate(&net, &w).unwrap();
        assert!(close(&x.0, &[0.25, 0.75], 1e-6), "{x:?}");
    }
}
