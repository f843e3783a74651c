// SPDX-License-Identifier: Apache-2.0

//! The unicast oracle against a fixpoint reference, and the trees built on
//! top of it.

mod support;

use hpim_core::{IfId, TreeRef, TreeState};
use hpim_netsim::oracle::{compute_routes, NetState};
use hpim_netsim::random::random_case;
use hpim_netsim::sim::{SimOptions, Simulator};
use hpim_netsim::topology::Topology;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::net::Ipv4Addr;
use support::{apply_line, scenario_path, sim_with};

/// Cheapest upstream cost per router by repeated relaxation, with the root
/// interface chosen afterwards (lowest id on ties).
fn reference(topo: &Topology, net: &NetState, src_link: usize) -> Vec<Option<(u64, IfId)>> {
    let n = topo.routers.len();
    let live = |r: usize, i: usize| net.live(topo, r, i);
    let offer = |dist: &[Option<u64>], r: usize, i: usize| -> Option<u64> {
        if !live(r, i) {
            return None;
        }
        let link = topo.routers[r].ifaces[i].link;
        let c = u64::from(net.costs[r][i]);
        if link == src_link {
            return Some(c);
        }
        let mut best = None;
        for (q, def) in topo.routers.iter().enumerate() {
            for (k, iface) in def.ifaces.iter().enumerate() {
                if q != r && iface.link == link && live(q, k) {
                    if let Some(d) = dist[q] {
                        best = Some(best.map_or(d + c, |b: u64| b.min(d + c)));
                    }
                }
            }
        }
        best
    };
    let mut dist: Vec<Option<u64>> = vec![None; n];
    loop {
        let next: Vec<Option<u64>> =
            (0..n).map(|r| (0..topo.routers[r].ifaces.len()).filter_map(|i| offer(&dist, r, i)).min()).collect();
        if next == dist {
            break;
        }
        dist = next;
    }
    (0..n).map(|r| (0..topo.routers[r].ifaces.len()).filter_map(|i| offer(&dist, r, i).map(|v| (v, i))).min()).collect()
}

#[test]
fn oracle_matches_fixpoint_reference_on_random_networks() {
    let mut compared = 0;
    for seed in 0..50 {
        let case = random_case(1000 + seed, 8);
        let topo = case.topology;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = NetState::new(&topo);
        for costs in &mut net.costs {
            for c in costs.iter_mut() {
                *c = rng.gen_range(1..=40);
            }
        }
        for round in 0..3 {
            if round > 0 {
                let r = rng.gen_range(0..topo.routers.len());
                net.router_up[r] = !net.router_up[r];
                let l = rng.gen_range(0..topo.links.len());
                net.link_up[l] = rng.gen_bool(0.7);
            }
            let routes = compute_routes(&topo, &net);
            for s in &topo.sources {
                let want = reference(&topo, &net, s.link);
                for (r, table) in routes.iter().enumerate() {
                    let got = &table[&s.ip];
                    let got = got.root.zip(got.metric).map(|(i, m)| (u64::from(m.rpc), i));
                    let want = want[r].filter(|_| net.router_up[r]);
                    assert_eq!(got, want, "seed {seed} round {round} router {}", topo.routers[r].name);
                    compared += 1;
                }
            }
        }
    }
    assert!(compared > 300);
}

fn tree(src: &str) -> TreeRef {
    TreeRef::new(src.parse().unwrap(), Ipv4Addr::new(232, 1, 1, 1))
}

#[test]
fn six_router_example_routes_and_tree() {
    let topo = Topology::load(&scenario_path("paper/topologies/fig1.topo")).unwrap();
    let routes = compute_routes(&topo, &NetState::new(&topo));
    let src: Ipv4Addr = "10.7.0.100".parse().unwrap();
    let at = |name: &str| {
        let r = topo.router_index(name).unwrap();
        let info = &routes[r][&src];
        (topo.routers[r].ifaces[info.root.unwrap()].name.clone(), info.metric.unwrap().rpc)
    };
    assert_eq!(at("R2"), ("i1".into(), 30));
    assert_eq!(at("R4"), ("i0".into(), 20));
    assert_eq!(at("R3"), ("i0".into(), 10));
    assert_eq!(at("R1"), ("i0".into(), 40));

    let mut sim = sim_with(
        "paper/topologies/fig1.topo",
        "at 1s start_source H1\nat 1s host_join H3 232.1.1.1",
        &SimOptions::default(),
    );
    sim.run_until(2_000_000);
    assert!(sim.run_until_settled(120_000_000));
    assert!(sim.evaluate().is_empty(), "{:?}", sim.evaluate());
    let lan = sim.topo.link_index("lan").unwrap();
    assert_eq!(sim.assert_winners(lan, tree("10.7.0.100")), vec!["R4".to_string()]);
    for line in [
        "assert_state R3 H1 232.1.1.1 state=ACTIVE originator=yes",
        "assert_state R2 H1 232.1.1.1 parent=R3 root=i1 rpc=30 aw.i2=R4",
        "assert_state R1 H1 232.1.1.1 parent=R2",
        "assert_state R4 H1 232.1.1.1 parent=R3 aw.i1=self fwd.i1=yes",
        "assert_state R5 H1 232.1.1.1 parent=R4 interested=yes",
        "assert_state R6 H1 232.1.1.1 parent=R4 interested=no",
        "assert_state R1 H1 232.1.1.1 fwd.i2=no",
        "assert_state R3 H1 232.1.1.1 fwd.i1=no",
    ] {
        apply_line(&mut sim, line).unwrap();
    }
    assert!(sim.asserts.iter().all(|a| a.ok), "{:?}", sim.asserts.iter().filter(|a| !a.ok).collect::<Vec<_>>());
}

#[test]
fn lone_originator_roots_on_the_source_subnet() {
    let text = "link src shared\nlink out p2p\nrouter R1\niface R1 e0 10.8.0.1 src cost 7\n\
        iface R1 e1 10.8.1.1 out cost 3\nsource S 10.8.0.100 src group 232.1.1.1\n";
    let topo = Topology::parse(text).unwrap();
    let routes = compute_routes(&topo, &NetState::new(&topo));
    let info = &routes[0][&"10.8.0.100".parse().unwrap()];
    assert_eq!(info.root, Some(0));
    assert_eq!(info.source_ifaces, vec![0]);
    let mut sim = Simulator::new(topo, &SimOptions::default()).unwrap();
    apply_line(&mut sim, "start_source S").unwrap();
    sim.run_until(5_000_000);
    assert!(sim.routers[0].as_ref().unwrap().view(tree("10.8.0.100")).originator);
}

/// Parent implied by the oracle: the best peer on the root link that would
/// announce itself there with a strictly lower metric.
fn expected_parent(sim: &Simulator, r: usize, t: TreeRef) -> Option<String> {
    let routes = compute_routes(&sim.topo, &sim.net);
    let mine = &routes[r][&t.source];
    let root = mine.root?;
    if mine.source_ifaces.contains(&root) {
        return None;
    }
    sim.live_peers(r, root)
        .filter(|&(q, k)| {
            let theirs = &routes[q][&t.source];
            theirs.root.is_some() && theirs.root != Some(k) && theirs.metric < mine.metric
        })
        .map(|(q, k)| (routes[q][&t.source].metric, std::cmp::Reverse(sim.topo.routers[q].ifaces[k].ip), q))
        .min()
        .map(|(_, _, q)| sim.topo.routers[q].name.clone())
}

#[test]
fn random_cost_walks_end_on_the_shortest_path_tree() {
    let ifaces = [("R1", "i2"), ("R1", "i3"), ("R2", "i1"), ("R2", "i2"), ("R3", "i1"), ("R3", "i2"), ("R4", "i1")];
    let t = tree("10.0.0.100");
    let mut shapes = std::collections::BTreeSet::new();
    for walk in 0..8u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(walk);
        let mut sim = sim_with(
            "paper/topologies/fig17.topo",
            "at 1s start_source S",
            &SimOptions { seed: walk, ..SimOptions::default() },
        );
        sim.run_until(2_000_000);
        assert!(sim.run_until_settled(120_000_000));
        for step in 0..6 {
            let (r, i) = ifaces[rng.gen_range(0..ifaces.len())];
            let cost = rng.gen_range(1..=40);
            apply_line(&mut sim, &format!("set_cost {r} {i} {cost}")).unwrap();
            let interval = sim.topo.params.data_interval;
            sim.run_until(sim.now() + interval);
            assert!(sim.run_until_settled(sim.now() + 300_000_000), "walk {walk} step {step}");
            for q in 0..sim.routers.len() {
                let view = sim.routers[q].as_ref().unwrap().view(t);
                assert_eq!(view.state, TreeState::Active, "walk {walk} step {step}");
                let got = view.parent.map(|(ip, _)| sim.name_of(ip));
                assert_eq!(got, expected_parent(&sim, q, t), "walk {walk} step {step} {}", sim.topo.routers[q].name);
                shapes.insert((q, got));
            }
            assert!(sim.evaluate().is_empty(), "walk {walk} step {step}: {:?}", sim.evaluate());
        }
    }
    // R3 and R4 each took more than one parent over the walks.
    assert!(shapes.len() >= 6, "{shapes:?}");
}

#[test]
fn partitioned_routers_are_exempt_from_spanning() {
    let mut sim = sim_with(
        "paper/topologies/fig17.topo",
        "at 1s start_source S\nat 30s fail_link lk1\nat 30s fail_link lk2",
        &SimOptions::default(),
    );
    sim.run_until(31_000_000);
    assert!(sim.run_until_settled(400_000_000));
    assert!(sim.evaluate().is_empty(), "{:?}", sim.evaluate());
    let t = tree("10.0.0.100");
    let state = |n: &str| sim.routers[sim.topo.router_index(n).unwrap()].as_ref().unwrap().view(t).state;
    assert_eq!(state("R1"), TreeState::Active);
    for n in ["R2", "R3", "R4"] {
        assert_eq!(state(n), TreeState::Inactive, "{n}");
    }
}
