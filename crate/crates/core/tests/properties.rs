mod common;

use hdqr::agent::{decode_state, encode_state, EpsilonSchedule, LinkObservation, Observation, StateLayout};
use hdqr::netstate::{FlowRequest, NetState};
use hdqr::replay::{linear_scan_find, BetaSchedule, ReplayConfig, ReplayMemory, SumTree, Transition};
use hdqr::routing::{route_request, Choice, LinkRequest, RouteError};
use hdqr::topology::{parse_network, GroupId, Network, NodeId, QosFilter};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const THREE_LINK: &str = include_str!("../../../topologies/three_link.toml");

fn tr() -> Transition {
    Transition { state: vec![], action: 0, reward: 0.0, next_state: vec![], next_live: 1, terminal: false }
}

proptest! {
    #[test]
    fn sum_tree_total_tracks_updates(
        size in 1usize..300,
        writes in prop::collection::vec((0usize..300, 0.0f64..100.0), 1..200),
    ) {
        let mut tree = SumTree::new(size);
        let mut values = vec![0.0; size];
        for (i, v) in writes {
            let i = i % size;
            tree.set(i, v);
            values[i] = v;
        }
        let naive: f64 = values.iter().sum();
        prop_assert!((tree.total() - naive).abs() <= 1e-9 * naive.max(1.0));
        if naive > 0.0 {
            for k in 0..10 {
                let u = k as f64 / 10.0;
                prop_assert_eq!(tree.find(u * tree.total()), linear_scan_find(&values, u * naive));
            }
        }
    }

    #[test]
    fn replay_probabilities_and_weights(
        capacity in 1usize..64,
        stores in 1usize..200,
        tds in prop::collection::vec(-5.0f64..5.0, 0..100),
        beta in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let mut mem = ReplayMemory::new(ReplayConfig { capacity, ..ReplayConfig::default() }).unwrap();
        for _ in 0..stores {
            mem.store(tr());
        }
        prop_assert_eq!(mem.len(), stores.min(capacity));
        let live: Vec<u64> = mem.live_indices().collect();
        for (k, td) in tds.iter().enumerate() {
            mem.update_priority(live[k % live.len()], *td);
        }
        let sum: f64 = live.iter().map(|&i| mem.probability(i).unwrap()).sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
        prop_assert!((mem.total() - mem.naive_total()).abs() < 1e-9 * mem.naive_total().max(1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = mem.sample(mem.len().min(8), beta, &mut rng).unwrap();
        for s in &batch.samples {
            prop_assert!(mem.is_live(s.index));
            prop_assert!(s.weight > 0.0 && s.weight <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn netstate_conserves_flows(
        ops in prop::collection::vec((any::<bool>(), 0usize..3, 1u64..12), 1..120),
    ) {
        let net = parse_network(THREE_LINK).unwrap();
        let mut state = NetState::new(&net);
        let mut next_id = 0;
        let choose = |req: &LinkRequest<'_>, pick: usize| Choice { index: pick % req.candidates.len(), stamp: 0 };
        for (advance, pick, duration) in ops {
            if advance {
                state.advance();
                continue;
            }
            let mut chooser = |req: &LinkRequest<'_>| -> Result<Choice, RouteError> { Ok(choose(req, pick)) };
            let (src, dst) = (NodeId(1), NodeId(16));
            let path = route_request(&net, &mut chooser, next_id, src, dst, &QosFilter::default()).unwrap();
            let req = FlowRequest { id: next_id, source: src, destination: dst, duration };
            next_id += 1;
            state.admit_flow(&net, &req, path.edges).unwrap();
        }
        let now = state.clock().t;
        let mut expected = std::collections::BTreeMap::new();
        for f in state.live_flows() {
            prop_assert!(f.expires_at() > now);
            for e in &f.path {
                *expected.entry(*e).or_insert(0u64) += 1;
            }
        }
        let occupied: u64 = expected.values().sum();
        prop_assert_eq!(state.total_active(), occupied);
        for e in net.edges() {
            let link = state.link_state(e.id).unwrap();
            prop_assert_eq!(link.active_flows, expected.get(&e.id).copied().unwrap_or(0));
            prop_assert_eq!(link.utilization, link.active_flows as f64 / link.capacity);
        }
        for _ in 0..12 {
            state.advance();
        }
        prop_assert_eq!(state.total_active(), 0);
    }

    #[test]
    fn routes_are_valid_simple_paths(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let doc = common::random_hierarchy(&mut rng);
        let net = Network::from_document(doc.clone()).unwrap();
        let n = net.node_count() as u32;
        let src = NodeId(rng.random_range(1..=n));
        let dst = NodeId(rng.random_range(1..=n));
        let mut chooser = |req: &LinkRequest<'_>| -> Result<Choice, RouteError> {
            Ok(Choice { index: rng.random_range(0..req.candidates.len()), stamp: 0 })
        };
        let path = route_request(&net, &mut chooser, 0, src, dst, &QosFilter::default()).unwrap();
        prop_assert!(common::is_connected_walk(&doc, src, dst, &path.edges));
        prop_assert!(common::enumerate_simple_paths(&doc, src, dst).contains(&path.edges));
        // Every chosen link lies on the path.
        prop_assert!(path.decisions.iter().all(|d| path.edges.contains(&d.edge)));
    }

    #[test]
    fn epsilon_stays_in_range_and_decreases(t in 0u64..100_000) {
        let eps = EpsilonSchedule::default();
        let (a, b) = (eps.value(t), eps.value(t + 1));
        prop_assert!((0.01..=1.0).contains(&a));
        prop_assert!(b <= a);
        let beta = BetaSchedule::default();
        prop_assert!(beta.value(t) <= beta.value(t + 1));
        prop_assert!((0.4..=1.0).contains(&beta.value(t)));
    }

    #[test]
    fn state_encoding_round_trips(
        utils in prop::collection::vec((0.0f64..2.0, 0.0f64..1.0), 1..8),
        q in 0.0f64..5.0,
    ) {
        let layout = StateLayout::new(2, 1, 8, 40);
        let obs = Observation {
            from_groups: vec![GroupId(20), GroupId(30)],
            to_groups: vec![GroupId(23), GroupId(31)],
            queuing_delay: q,
            links: utils.iter().map(|&(u, d)| LinkObservation { utilization: u, delay: d }).collect(),
        };
        let v = encode_state(&obs, &layout).unwrap();
        prop_assert_eq!(v.len(), layout.width());
        prop_assert_eq!(decode_state(&v, &layout), obs);
    }
}
