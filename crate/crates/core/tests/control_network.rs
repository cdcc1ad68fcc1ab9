#[path = "common/benes.rs"]
mod benes;

use benes::{permutations, random_multicast};
use mrnt_core::netctl::{build, route, transfer_latency, RouteRequest};
use mrnt_core::ArchConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn every_permutation_of_eight_routes() {
    let net = build(8).unwrap();
    let perms = permutations(8);
    assert_eq!(perms.len(), 40_320);
    for p in &perms {
        benes::check(&net, &RouteRequest::permutation(p)).unwrap();
    }
}

#[test]
fn full_reversal_routes() {
    let net = build(8).unwrap();
    benes::check(&net, &RouteRequest::permutation(&[7, 6, 5, 4, 3, 2, 1, 0])).unwrap();
}

#[test]
fn every_stage_input_reaches_every_output() {
    // reachability through some setting of each element
    for n in [4, 8, 16, 32] {
        let net = build(n).unwrap();
        for src in 0..n {
            let mut req = RouteRequest::new();
            req.add(src, 0..n);
            benes::check(&net, &req).unwrap();
        }
    }
}

#[test]
fn random_multicasts_on_thirty_two_ports() {
    let net = build(32).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10_000 {
        let req = random_multicast(&mut rng, 32);
        benes::check(&net, &req).unwrap();
    }
}

#[test]
fn routing_is_deterministic() {
    let net = build(32).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let req = random_multicast(&mut rng, 32);
        assert_eq!(route(&net, &req).unwrap(), route(&net, &req).unwrap());
    }
}

#[test]
fn oversubscription_is_rejected() {
    let net = build(4).unwrap();
    let mut req = RouteRequest::new();
    req.add(0, [0, 1, 2]).add(1, [3]).add(2, [3]);
    assert!(route(&net, &req).is_err());
}

#[test]
fn transfer_latency_is_a_parameter() {
    let a = ArchConfig::default();
    assert_eq!(transfer_latency(&build(8).unwrap(), &a), 1);
    assert_eq!(
        transfer_latency(&build(32).unwrap(), &a),
        transfer_latency(&build(8).unwrap(), &a)
    );
    let b = ArchConfig {
        control_net_latency: 2,
        ..ArchConfig::default()
    };
    assert_eq!(transfer_latency(&build(8).unwrap(), &b), 2);
}
