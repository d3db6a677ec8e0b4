use drlfwd::cltrain::{balanced_sample, interleave_batches, sample_size};
use drlfwd::features::*;
use drlfwd::geom::Point;
use drlfwd::qnet::{Hyper, QNetwork};
use drlfwd::sim::build_neighbors;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #[test]
    fn normalizations_stay_in_unit_interval(x in 0.0f64..1e6, scale in 1.0f64..5000.0) {
        for v in [
            norm_ttl(x, scale),
            norm_queue(x, scale),
            norm_density(x, scale),
            norm_degree(x, scale),
            norm_dynconn(x, scale),
            norm_length(x, scale),
            shifted_sigmoid(x, 0.01, 200.0),
        ] {
            prop_assert!((0.0..=1.0).contains(&v), "{v}");
        }
    }

    #[test]
    fn sigmoid_is_monotone(a in 0.0f64..2000.0, b in 0.0f64..2000.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(shifted_sigmoid(lo, 0.01, 200.0) <= shifted_sigmoid(hi, 0.01, 200.0));
    }

    #[test]
    fn sample_size_bounds(sizes in prop::collection::vec(0usize..5000, 1..6), alpha in 0.01f64..1.0) {
        let current = *sizes.last().unwrap();
        match sample_size(&sizes, alpha) {
            None => prop_assert_eq!(current, 0),
            Some(n) => {
                prop_assert!(n >= 1 && n <= current);
                for &s in &sizes {
                    prop_assert!(n as f64 >= (alpha * s as f64).min(current as f64) - 1e-6);
                }
            }
        }
    }

    #[test]
    fn balanced_sample_is_balanced(sizes in prop::collection::vec(1usize..400, 1..5), alpha in 0.05f64..1.0, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picks = balanced_sample(&sizes, alpha, &mut rng).unwrap();
        let n = picks[0].len();
        for (p, &len) in picks.iter().zip(&sizes) {
            prop_assert_eq!(p.len(), n);
            prop_assert!(p.iter().all(|&i| i < len));
        }
    }

    #[test]
    fn interleave_keeps_every_item(lens in prop::collection::vec(0usize..200, 1..5), b in 1usize..50, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<Vec<(usize, usize)>> = lens.iter().enumerate().map(|(d, &n)| (0..n).map(|i| (d, i)).collect()).collect();
        let batches = interleave_batches(samples, b, &mut rng);
        let mut items: Vec<(usize, usize)> = Vec::new();
        for (d, batch) in &batches {
            prop_assert!(!batch.is_empty() && batch.len() <= b);
            prop_assert!(batch.iter().all(|(bd, _)| bd == d));
            items.extend(batch.iter().copied());
        }
        items.sort_unstable();
        let mut want: Vec<(usize, usize)> = lens.iter().enumerate().flat_map(|(d, &n)| (0..n).map(move |i| (d, i))).collect();
        want.sort_unstable();
        prop_assert_eq!(items, want);
    }

    #[test]
    fn neighbor_sets_are_symmetric(coords in prop::collection::vec((0.0f64..200.0, 0.0f64..200.0), 2..30), r in 1.0f64..100.0) {
        let pos: Vec<Point> = coords.iter().map(|&(x, y)| Point::new(x, y)).collect();
        let nbrs = build_neighbors(&pos, r);
        for (v, ns) in nbrs.iter().enumerate() {
            prop_assert!(ns.windows(2).all(|w| w[0] < w[1]));
            for &u in ns {
                prop_assert!(u != v);
                prop_assert!(nbrs[u].contains(&v));
                prop_assert!(pos[u].dist(&pos[v]) <= r);
            }
        }
    }

    #[test]
    fn model_text_round_trip_is_exact(seed in 0u64..500, hidden in 1usize..20) {
        let net = QNetwork::new(&[5, hidden, 3, 1], "h", Hyper::default(), seed);
        let mut buf = Vec::new();
        net.write_to(&mut buf).unwrap();
        let back = QNetwork::read_from(buf.as_slice()).unwrap();
        prop_assert_eq!(back.layers, net.layers);
    }

    #[test]
    fn isolated_node_timers_age_linearly(steps in 1u64..300) {
        let p = FeatureParams::default();
        let mut n = NodeState::new(0, 4, Point::new(0.0, 0.0), &p);
        for t in 1..=steps {
            n.tick(t, Point::new(0.0, 0.0), &p);
        }
        for w in 1..4 {
            prop_assert_eq!(n.peers.aoi[w], p.timer_init as u64 + steps);
            prop_assert_eq!(n.peers.timer[w], p.timer_init + steps as f64);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn packets_are_conserved_and_queues_bounded(seed in 0u64..10_000, r in 15.0f64..90.0, cap in 1usize..6) {
        use drlfwd::baselines::RandomPolicy;
        use drlfwd::config::presets;
        use drlfwd::sim::{RunOptions, World};
        let mut sc = presets::small("rwp-mix2", r).unwrap().with_duration(600, 300).with_seed(seed);
        sc.sim.flow_arrival_rate = 0.05;
        sc.sim.packet_rate = 0.2;
        sc.sim.buffer_cap = cap;
        sc.sim.initial_ttl = 250;
        let mut w = World::new(&sc, RunOptions::default()).unwrap();
        let mut pol = RandomPolicy::new(seed);
        while !w.finished() {
            w.step(&mut pol).unwrap();
            let c = w.counters;
            prop_assert_eq!(c.generated, c.delivered + c.dropped_ttl + c.dropped_buffer + w.in_flight());
            let queued: usize = w.queues.iter().map(|q| q.len()).sum();
            prop_assert_eq!(queued, w.in_flight());
            for (v, q) in w.queues.iter().enumerate() {
                prop_assert!(q.len() <= cap);
                for &pi in q {
                    prop_assert_eq!(w.packets[pi].holder, v);
                }
            }
        }
        prop_assert_eq!(w.in_flight(), 0);
    }
}
