use multcp::harness::{build_dumbbell, DumbbellParams, Scenario};
use multcp::policing::{
    analyze_trace, bill, read_trace, verify_declaration, write_trace, Declaration, EstimateSource, TraceEvent,
    TraceRecord, Verdict, DEFAULT_TOLERANCE,
};
use multcp::tcp::Variant;
use multcp::SimTime;
use proptest::prelude::*;

/// Traced Sack flow of weight `n` sharing the default bottleneck with
/// seven standard flows.
fn traced_run(n: f64, seed: u64) -> Vec<TraceRecord> {
    let params = DumbbellParams { flows: 8, variant: Variant::Sack, ..Default::default() };
    let mut scenario: Scenario = build_dumbbell(8, &params).unwrap();
    scenario.seed = seed;
    scenario.duration_s = 40.0;
    scenario.flows[0].n = n;
    scenario.flows[0].trace = true;
    scenario.run().unwrap().traces.swap_remove(0)
}

#[test]
fn simulated_traces_reveal_their_weight() {
    for n in [1.0, 2.0, 4.0, 8.0] {
        let trace = traced_run(n, 11);
        let losses = trace.iter().filter(|r| r.event == TraceEvent::LossDetected).count();
        assert!(losses >= 20, "N={n}: only {losses} losses");
        let est = analyze_trace(&trace).unwrap();
        assert_eq!(est.source, EstimateSource::SteadyState);
        assert!((est.n - n).abs() <= 0.1 * n, "N={n}: estimated {}", est.n);

        let honest = Declaration { flow: 0, declared_n: n, start: SimTime::ZERO, end: SimTime::from_secs(40) };
        assert!(matches!(verify_declaration(&trace, &honest, DEFAULT_TOLERANCE), Verdict::Compliant { .. }));
        if n >= 2.0 {
            let understated = Declaration { declared_n: n / 2.0, ..honest };
            assert!(matches!(
                verify_declaration(&trace, &understated, DEFAULT_TOLERANCE),
                Verdict::Violation { .. }
            ));
        }
    }
}

#[test]
fn trace_survives_csv_round_trip() {
    let trace = traced_run(2.0, 3);
    let mut buf = Vec::new();
    write_trace(&mut buf, &trace).unwrap();
    let back = read_trace(buf.as_slice()).unwrap();
    assert_eq!(back, trace);
}

#[test]
fn wire_only_trace_still_yields_an_estimate() {
    let mut trace = traced_run(4.0, 7);
    for r in &mut trace {
        r.cwnd_before = None;
        r.cwnd_after = None;
    }
    let est = analyze_trace(&trace).unwrap();
    assert!(est.n >= 1.0 && est.n.is_finite());
}

fn decl(flow: usize, n: f64, start: u64, end: u64) -> Declaration {
    Declaration { flow, declared_n: n, start: SimTime::from_secs(start), end: SimTime::from_secs(end) }
}

#[test]
fn bill_examples() {
    let both = [decl(0, 2.0, 0, 100), decl(1, 3.0, 0, 100)];
    assert_eq!(bill(&both, (SimTime::ZERO, SimTime::from_secs(100))).unwrap(), 500.0);
    let stepped = [decl(0, 2.0, 0, 50), decl(0, 4.0, 50, 100)];
    assert_eq!(bill(&stepped, (SimTime::ZERO, SimTime::from_secs(100))).unwrap(), 300.0);
    assert_eq!(bill(&stepped, (SimTime::from_secs(7), SimTime::from_secs(7))).unwrap(), 0.0);
    assert!(bill(&[decl(0, 2.0, 0, 60), decl(0, 1.0, 50, 100)], (SimTime::ZERO, SimTime::from_secs(100))).is_err());
}

fn declarations() -> impl Strategy<Value = Vec<Declaration>> {
    // per flow, consecutive non-overlapping intervals
    proptest::collection::vec(proptest::collection::vec((1u64..20, 0u64..5, 1u32..9), 1..5), 1..4).prop_map(|flows| {
        let mut out = Vec::new();
        for (flow, pieces) in flows.into_iter().enumerate() {
            let mut t = 0;
            for (len, gap, n) in pieces {
                t += gap;
                out.push(decl(flow, n as f64, t, t + len));
                t += len;
            }
        }
        out
    })
}

proptest! {
    #[test]
    fn bill_is_additive_over_periods(d in declarations(), cut in 0u64..120) {
        let (a, m, b) = (SimTime::ZERO, SimTime::from_secs(cut), SimTime::from_secs(120));
        let whole = bill(&d, (a, b)).unwrap();
        let parts = bill(&d, (a, m)).unwrap() + bill(&d, (m, b)).unwrap();
        prop_assert!((whole - parts).abs() < 1e-9 * whole.max(1.0));
    }

    #[test]
    fn bill_ignores_how_declarations_are_split(d in declarations(), at in 1u64..19) {
        let whole = bill(&d, (SimTime::ZERO, SimTime::from_secs(200))).unwrap();
        let mut split = Vec::new();
        for x in &d {
            let mid = x.start + SimTime::from_secs(at);
            if mid < x.end {
                split.push(Declaration { end: mid, ..*x });
                split.push(Declaration { start: mid, ..*x });
            } else {
                split.push(*x);
            }
        }
        let parts = bill(&split, (SimTime::ZERO, SimTime::from_secs(200))).unwrap();
        prop_assert!((whole - parts).abs() < 1e-9 * whole.max(1.0));
        let expected: f64 = d.iter().map(|x| x.declared_n * (x.end - x.start).as_secs_f64()).sum();
        prop_assert!((whole - expected).abs() < 1e-9 * expected.max(1.0));
    }
}
