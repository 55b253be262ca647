use multcp::fairness::{
    check_maxmin, check_weighted_pf, is_feasible, maxmin_allocate, wpf_allocate, CapacitatedNetwork, RateVector,
    WeightVector,
};
use proptest::prelude::*;

fn network() -> impl Strategy<Value = CapacitatedNetwork> {
    (1usize..4, 1usize..5).prop_flat_map(|(links, conns)| {
        (
            proptest::collection::vec(0.5f64..10.0, links),
            proptest::collection::vec(proptest::collection::btree_set(0..links, 1..=links), conns),
        )
            .prop_map(|(caps, routes)| {
                CapacitatedNetwork::new(caps, routes.into_iter().map(|r| r.into_iter().collect()).collect()).unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn maxmin_is_feasible_and_passes_check(net in network()) {
        let x = maxmin_allocate(&net);
        prop_assert!(is_feasible(&x, &net).unwrap());
        let v = check_maxmin(&x, &net).unwrap();
        prop_assert!(v.pass, "{:?}", v);
        prop_assert!(v.bottleneck_pass);
    }

    #[test]
    fn wpf_is_feasible_and_proportionally_fair(net in network(), seed in any::<u64>()) {
        let n = net.connections();
        let w = WeightVector::new((0..n).map(|i| 1.0 + (seed.wrapping_add(i as u64) % 5) as f64).collect()).unwrap();
        let x = wpf_allocate(&net, &w).unwrap();
        prop_assert!(is_feasible(&x, &net).unwrap());
        let v = check_weighted_pf(&x, &w, &net, 500, seed).unwrap();
        prop_assert!(v.pass, "worst {}", v.worst_value);
    }

    #[test]
    fn split_weight_gets_same_aggregate(c in 1.0f64..100.0, k in 1.0f64..5.0, others in proptest::collection::vec(1.0f64..5.0, 1..4)) {
        // one connection of weight 2k versus two of weight k
        let mut w1 = vec![2.0 * k];
        w1.extend(&others);
        let mut w2 = vec![k, k];
        w2.extend(&others);
        let x1 = wpf_allocate(&CapacitatedNetwork::single_link(c, w1.len()).unwrap(), &WeightVector::new(w1).unwrap()).unwrap();
        let x2 = wpf_allocate(&CapacitatedNetwork::single_link(c, w2.len()).unwrap(), &WeightVector::new(w2).unwrap()).unwrap();
        prop_assert!((x1.0[0] - (x2.0[0] + x2.0[1])).abs() < 1e-9 * c);
    }
}

#[test]
fn uniform_single_link_is_equal_split() {
    let net = CapacitatedNetwork::single_link(12.0, 4).unwrap();
    let x = wpf_allocate(&net, &WeightVector::uniform(4)).unwrap();
    assert!(x.0.iter().all(|r| (r - 3.0).abs() < 1e-12));
    assert_eq!(maxmin_allocate(&net), RateVector(vec![3.0; 4]));
}
