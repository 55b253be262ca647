//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use multcp::allocator::{allocate_buffers, BufferBudget, PricedConnection};
use multcp::fairness::{
    check_maxmin, check_weighted_pf, maxmin_allocate, wpf_allocate, CapacitatedNetwork, MaxMinMethod, WeightVector,
};
use multcp::harness::{
    build_dumbbell, run_fairness_experiment, run_gain_experiment, write_dispersion_table, write_flow_stats,
    write_gain_table, DumbbellParams, FlowSpec, LinkSpec, QueueKind, Scenario, SweepSettings,
};
use multcp::model::{gain_ratio, multcp_throughput, sawtooth_oracle, standard_throughput, ModelParams};
use multcp::policing::{analyze_trace, bill, Declaration, TraceEvent};
use multcp::{SimTime, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

fn seeds() -> Vec<u64> {
    (1..=10).collect()
}

fn model_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let p = 10f64.powf(rng.gen_range(-6.0..-0.5));
        let b = rng.gen_range(40.0..9000.0);
        let r = rng.gen_range(0.001..2.0);
        let t = multcp_throughput(1.0, p, b, r).unwrap();
        let reference = 1.5f64.sqrt() * b / (r * p.sqrt());
        worst = worst.max((t - reference).abs() / reference);
        let t1 = standard_throughput(p, b, r).unwrap();
        worst = worst.max((t1 - reference).abs() / reference);
    }
    Outcome::new(worst <= 1e-12, format!("max relative error {worst:.2e} over 100 triples"))
}

fn oracle_agreement() -> Outcome {
    let mut worst = 0.0f64;
    let mut at = (0.0, 0.0);
    for n in [1.0, 2.0, 4.0, 8.0] {
        for p in [1e-4, 1e-3] {
            let params = ModelParams { n, p, packet_bytes: 1000.0, rtt: 0.1 };
            let sim = sawtooth_oracle(params, 10_000, 17).unwrap();
            let formula = multcp_throughput(n, p, 1000.0, 0.1).unwrap();
            let err = (sim - formula).abs() / formula;
            if err > worst {
                worst = err;
                at = (n, p);
            }
        }
    }
    Outcome::new(worst <= 0.10, format!("worst deviation {:.1}% at N={}, p={}", worst * 100.0, at.0, at.1))
}

fn gain_bounds() -> Outcome {
    let exact_one = gain_ratio(1.0).unwrap() == 1.0;
    let mut worst = 0.0f64;
    for i in 0..=900 {
        let n = 1.0 + i as f64 * 0.01;
        let g = gain_ratio(n).unwrap();
        worst = worst.max((g - n).abs() / n);
    }
    Outcome::new(
        exact_one && worst <= 0.15,
        format!("gain_ratio(1) exact: {exact_one}; max |g(N)-N|/N on [1,10] = {worst:.4}"),
    )
}

fn gain_reproduction() -> Outcome {
    let settings = SweepSettings::default();
    let mut pass = true;
    let mut notes = Vec::new();
    for variant in Variant::ALL {
        let mut grid = vec![1.0, 1.5, 2.0];
        match variant {
            Variant::Sack => grid.extend([4.0, 8.0]),
            _ => grid.push(8.0),
        }
        let table = run_gain_experiment(variant, &grid, &seeds(), &settings).unwrap();
        for s in &table.summary {
            let (ok, band) = if s.n <= 2.0 {
                ((s.mean_gain - s.n).abs() <= 0.35 * s.n, "+-35%")
            } else if variant == Variant::Sack {
                ((s.mean_gain - s.n).abs() <= 0.30 * s.n, "+-30%")
            } else {
                (s.mean_gain <= 3.0, "<=3.0")
            };
            pass &= ok;
            if !ok || s.n >= 4.0 {
                notes.push(format!(
                    "{} N={} gain {:.2}+-{:.2} ({band}){}",
                    variant,
                    s.n,
                    s.mean_gain,
                    s.std_gain,
                    if ok { "" } else { " OUT" }
                ));
            }
        }
    }
    Outcome::new(pass, notes.join("; "))
}

fn dispersion_reproduction() -> Outcome {
    let table = run_fairness_experiment(Variant::Reno, &[1.0, 2.0, 4.0, 8.0], &seeds(), &SweepSettings::default())
        .unwrap();
    let at_one = table.summary[0].mean_std_over_mean;
    let trend = table.trend();
    let series: Vec<String> = table
        .summary
        .iter()
        .map(|s| format!("{}:{:.3}", s.n, s.mean_std_over_mean))
        .collect();
    Outcome::new(
        (0.03..=0.15).contains(&at_one) && trend > 0.0,
        format!("std/mean by N [{}], rank correlation {trend:.2}", series.join(" ")),
    )
}

fn random_network(rng: &mut ChaCha8Rng) -> CapacitatedNetwork {
    let links = rng.gen_range(1..=3);
    let conns = rng.gen_range(1..=4);
    let capacities = (0..links).map(|_| rng.gen_range(0.5..10.0)).collect();
    let routes = (0..conns)
        .map(|_| {
            let mut r: Vec<usize> = (0..links).filter(|_| rng.gen_bool(0.5)).collect();
            if r.is_empty() {
                r.push(rng.gen_range(0..links));
            }
            r
        })
        .collect();
    CapacitatedNetwork::new(capacities, routes).unwrap()
}

fn fairness_library() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_closed_form = 0.0f64;
    let mut pf_failures = 0;
    for _ in 0..50 {
        let n = rng.gen_range(1..=8);
        let c = rng.gen_range(0.1..1000.0);
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..10.0)).collect();
        let sum: f64 = w.iter().sum();
        let net = CapacitatedNetwork::single_link(c, n).unwrap();
        let weights = WeightVector::new(w.clone()).unwrap();
        let x = wpf_allocate(&net, &weights).unwrap();
        for (xs, ws) in x.0.iter().zip(&w) {
            worst_closed_form = worst_closed_form.max((xs - c * ws / sum).abs());
        }
        if !check_weighted_pf(&x, &weights, &net, 10_000, rng.gen()).unwrap().pass {
            pf_failures += 1;
        }
    }
    let mut maxmin_failures = 0;
    for _ in 0..100 {
        let net = random_network(&mut rng);
        let v = check_maxmin(&maxmin_allocate(&net), &net).unwrap();
        if !(v.pass && v.method == MaxMinMethod::BruteForce) {
            maxmin_failures += 1;
        }
    }
    Outcome::new(
        worst_closed_form <= 1e-9 && pf_failures == 0 && maxmin_failures == 0,
        format!(
            "closed-form error {worst_closed_form:.1e}; pf failures {pf_failures}/50; max-min failures {maxmin_failures}/100"
        ),
    )
}

fn capped_throughputs(windows: &[u64], delay_ms: f64, bandwidth_bps: f64) -> Vec<f64> {
    let mut scenario = Scenario {
        seed: 3,
        duration_s: 30.0,
        warmup_s: Some(5.0),
        packet_bytes: 1000,
        start_jitter_s: 0.1,
        red: Default::default(),
        dumbbell: None,
        links: vec![LinkSpec {
            name: "path".into(),
            bandwidth_bps,
            delay_ms,
            queue: QueueKind::DropTail,
            limit: 10_000,
        }],
        flows: Vec::new(),
    };
    for &w in windows {
        let mut f = FlowSpec::bulk(Variant::Reno, 1.0, vec!["path".into()]);
        f.advertised_window = Some(w);
        scenario.flows.push(f);
    }
    scenario.run().unwrap().throughputs()
}

fn allocator_criterion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut violations = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=10);
        let prices: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..100.0)).collect();
        let conns: Vec<_> = prices
            .iter()
            .enumerate()
            .map(|(i, &p)| PricedConnection::new(i as u64, p, 0.05).unwrap())
            .collect();
        let total = rng.gen_range(10_000..10_000_000);
        let segment = 1000;
        let shares = allocate_buffers(&conns, BufferBudget { total }, segment).unwrap();
        let k: f64 = prices.iter().sum();
        let sum: u64 = shares.iter().sum();
        let proportional = shares
            .iter()
            .zip(&prices)
            .all(|(b, p)| (*b as f64 - total as f64 * p / k).abs() < segment as f64);
        if !(proportional && sum <= total && sum + segment > total) {
            violations += 1;
        }
    }

    let conns = [
        PricedConnection::new(1, 1.0, 0.1).unwrap(),
        PricedConnection::new(2, 2.0, 0.1).unwrap(),
    ];
    let shares = allocate_buffers(&conns, BufferBudget { total: 30_000 }, 1000).unwrap();
    let t = capped_throughputs(&[shares[0] / 1000, shares[1] / 1000], 50.0, 100e6);
    let ratio = t[1] / t[0];

    // linear region then flat at the 10 Mb/s ceiling
    let curve: Vec<f64> = [5u64, 10, 20, 100, 150]
        .iter()
        .map(|&w| capped_throughputs(&[w], 20.0, 10e6)[0])
        .collect();
    let linear = (curve[1] / curve[0] - 2.0).abs() < 0.1 && (curve[2] / curve[1] - 2.0).abs() < 0.1;
    let flat = (curve[4] / curve[3] - 1.0).abs() < 0.02 && curve[4] > 0.9 * 10e6 / 8.0;

    Outcome::new(
        violations == 0 && (ratio - 2.0).abs() <= 0.2 && linear && flat,
        format!(
            "invariant violations {violations}/1000; price ratio 2 gives throughput ratio {ratio:.3}; curve linear {linear}, flat {flat}"
        ),
    )
}

fn policing_criterion() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    for n in [1.0, 2.0, 4.0, 8.0] {
        let params = DumbbellParams { flows: 8, variant: Variant::Sack, ..Default::default() };
        let mut s = build_dumbbell(8, &params).unwrap();
        s.duration_s = 40.0;
        s.seed = 21;
        s.flows[0].n = n;
        s.flows[0].trace = true;
        let trace = s.run().unwrap().traces.swap_remove(0);
        let losses = trace.iter().filter(|r| r.event == TraceEvent::LossDetected).count();
        let est = analyze_trace(&trace).map(|e| e.n).unwrap_or(f64::NAN);
        let ok = losses >= 20 && (est - n).abs() <= 0.1 * n;
        pass &= ok;
        notes.push(format!("N={n}: {est:.3} from {losses} losses"));
    }
    let d = |flow, n, a, b| Declaration {
        flow,
        declared_n: n,
        start: SimTime::from_secs(a),
        end: SimTime::from_secs(b),
    };
    let period = (SimTime::ZERO, SimTime::from_secs(100));
    let bills = [
        bill(&[d(0, 2.0, 0, 100), d(1, 3.0, 0, 100)], period).unwrap(),
        bill(&[d(0, 2.0, 0, 50), d(0, 4.0, 50, 100)], period).unwrap(),
        bill(&[d(0, 2.0, 0, 50)], (SimTime::from_secs(10), SimTime::from_secs(10))).unwrap(),
    ];
    let bills_ok = bills == [500.0, 300.0, 0.0];
    notes.push(format!("bills {bills:?}"));
    Outcome::new(pass && bills_ok, notes.join("; "))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut scenario = build_dumbbell(22, &DumbbellParams::default()).unwrap();
    scenario.duration_s = 20.0;
    let mut outputs = Vec::new();
    for round in 0..2 {
        let run = scenario.run().unwrap();
        let mut buf = Vec::new();
        write_flow_stats(&run.stats, &run.rtts, &mut buf).unwrap();
        let settings = SweepSettings { duration_s: 15.0, warmup_s: 5.0, ..Default::default() };
        let sub = dir.path().join(round.to_string());
        let gain = run_gain_experiment(Variant::NewReno, &[2.0], &[1, 2], &settings).unwrap();
        let fair = run_fairness_experiment(Variant::Sack, &[1.0], &[3], &settings).unwrap();
        for path in write_gain_table(&gain, &sub).unwrap().into_iter().chain(write_dispersion_table(&fair, &sub).unwrap()) {
            buf.extend(std::fs::read(path).unwrap());
        }
        outputs.push(buf);
    }
    Outcome::new(outputs[0] == outputs[1], format!("{} bytes of CSV compared", outputs[0].len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("analytic model identity", model_identity),
        ("saw-tooth oracle agreement", oracle_agreement),
        ("gain-ratio bounds", gain_bounds),
        ("gain vs N on the dumbbell", gain_reproduction),
        ("RTT-normalized fairness vs N", dispersion_reproduction),
        ("fairness library", fairness_library),
        ("buffer allocator", allocator_criterion),
        ("policing round trip and billing", policing_criterion),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        if !outcome.pass {
            failed += 1;
        }
        println!(
            "criterion {}: {} {name} ({:.1}s): {}",
            i + 1,
            if outcome.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            outcome.detail
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
