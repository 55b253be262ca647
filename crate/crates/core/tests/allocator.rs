use multcp::allocator::{
    allocate_buffers, throughput_bound, BudgetPolicy, BufferAllocator, BufferBudget, PricedConnection, RebalanceEvent,
};
use multcp::harness::{FlowSpec, LinkSpec, QueueKind, Scenario};
use multcp::tcp::Variant;
use proptest::prelude::*;

const SEGMENT: u64 = 1000;

/// One bottleneck-free path per flow; each flow's window is capped by the
/// advertised buffer in segments.
fn capped_run(windows: &[u64], bandwidth_bps: f64, delay_ms: f64) -> Vec<f64> {
    let mut scenario = Scenario {
        seed: 5,
        duration_s: 30.0,
        warmup_s: Some(5.0),
        packet_bytes: SEGMENT as u32,
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

#[test]
fn priced_buffers_give_priced_throughput() {
    for (prices, expected) in [([1.0, 2.0], 2.0), ([3.0, 3.0], 1.0)] {
        let conns: Vec<_> = prices
            .iter()
            .enumerate()
            .map(|(i, &p)| PricedConnection::new(i as u64, p, 0.1).unwrap())
            .collect();
        let shares = allocate_buffers(&conns, BufferBudget { total: 30_000 }, SEGMENT).unwrap();
        let windows: Vec<u64> = shares.iter().map(|b| b / SEGMENT).collect();
        // 100 Mb/s is far above what 30 kB per 100 ms can use
        let t = capped_run(&windows, 100e6, 50.0);
        let ratio = t[1] / t[0];
        assert!((ratio - expected).abs() <= 0.1 * expected, "prices {prices:?}: ratio {ratio}");
        for (b, got) in shares.iter().zip(&t) {
            let bound = throughput_bound(*b as f64, 0.1).unwrap();
            assert!(*got <= bound * 1.01 && *got >= 0.9 * bound, "{got} vs {bound}");
        }
    }
}

#[test]
fn throughput_is_linear_in_buffer_then_flat() {
    // 10 Mb/s, ~40 ms round trip: about 50 segments fill the path
    let capacity = 10e6 / 8.0;
    let windows = [2u64, 5, 10, 20, 30, 60, 100, 150];
    let mut last = 0.0;
    for &w in &windows {
        let t = capped_run(&[w], 10e6, 20.0)[0];
        assert!(t >= last * 0.99, "throughput fell at window {w}");
        last = t;
        let linear = w as f64 * SEGMENT as f64 / 0.0408;
        if linear < 0.8 * capacity {
            assert!((t - linear).abs() <= 0.1 * linear, "window {w}: {t} vs {linear}");
        } else if linear > 1.2 * capacity {
            assert!(t >= 0.9 * capacity && t <= capacity, "window {w}: {t}");
        }
    }
}

fn price_vector() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.1f64..100.0, 1..12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn shares_are_proportional_and_conserve_budget(prices in price_vector(), total in 10_000u64..10_000_000, segment in prop::sample::select(vec![1u64, 512, 1000, 1460])) {
        let conns: Vec<_> = prices
            .iter()
            .enumerate()
            .map(|(i, &p)| PricedConnection::new(i as u64, p, 0.05).unwrap())
            .collect();
        let shares = allocate_buffers(&conns, BufferBudget { total }, segment).unwrap();
        let sum: u64 = shares.iter().sum();
        prop_assert!(sum <= total && sum + segment > total, "sum {} of {}", sum, total);
        let k: f64 = prices.iter().sum();
        for (b, p) in shares.iter().zip(&prices) {
            let exact = total as f64 * p / k;
            prop_assert!((*b as f64 - exact).abs() < segment as f64 + 1e-6, "{} vs {}", b, exact);
            prop_assert_eq!(b % segment, 0);
        }
    }

    #[test]
    fn rebalancing_matches_fresh_allocation(prices in price_vector(), reprice in 0.1f64..100.0) {
        let budget = BufferBudget { total: 1_000_000 };
        let mut alloc = BufferAllocator::new(BudgetPolicy::Fixed(budget), SEGMENT);
        let mut conns = Vec::new();
        for (i, &p) in prices.iter().enumerate() {
            let c = PricedConnection::new(i as u64, p, 0.05).unwrap();
            conns.push(c);
            alloc.apply(RebalanceEvent::Join(c)).unwrap();
        }
        conns[0].price = reprice;
        alloc.apply(RebalanceEvent::Reprice(0, reprice)).unwrap();
        let fresh = allocate_buffers(&conns, budget, SEGMENT).unwrap();
        let current: Vec<u64> = alloc.allocation().into_iter().map(|(_, b)| b).collect();
        prop_assert_eq!(current, fresh);
        let again = alloc.apply(RebalanceEvent::Reprice(0, reprice)).unwrap();
        prop_assert!(again.changes.is_empty());
    }
}
