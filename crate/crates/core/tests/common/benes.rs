//! Propagation oracle for the control network, written against the public wiring tables only.
#![allow(dead_code)]

use std::collections::BTreeSet;

use mrnt_core::netctl::{route, BenesState, CsBenesNetwork, CsState, RouteRequest, SwitchSettings};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Each line carries the set of sources whose payload is on it.
pub fn oracle(net: &CsBenesNetwork, s: &SwitchSettings, sources: &[usize]) -> Vec<BTreeSet<usize>> {
    let n = net.port_count;
    let mut lines: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for &p in sources {
        lines[p].insert(p);
    }
    let step = |lines: &Vec<BTreeSet<usize>>, f: &dyn Fn(usize) -> (bool, bool, bool, bool)| {
        // (a->up, a->down, b->up, b->down)
        let mut out = vec![BTreeSet::new(); n];
        for e in 0..n / 2 {
            let (au, ad, bu, bd) = f(e);
            let (a, b) = (&lines[2 * e], &lines[2 * e + 1]);
            if au {
                out[2 * e].extend(a.iter().copied());
            }
            if ad {
                out[2 * e + 1].extend(a.iter().copied());
            }
            if bu {
                out[2 * e].extend(b.iter().copied());
            }
            if bd {
                out[2 * e + 1].extend(b.iter().copied());
            }
        }
        out
    };
    let link = |lines: Vec<BTreeSet<usize>>, l: &[usize]| {
        let mut out = vec![BTreeSet::new(); n];
        for (i, v) in lines.into_iter().enumerate() {
            out[l[i]] = v;
        }
        out
    };
    for (c, col) in s.cs.iter().enumerate() {
        lines = step(&lines, &|e| match col[e] {
            CsState::Straight => (true, false, false, true),
            CsState::Cross => (false, true, true, false),
            CsState::UpperBroadcast => (true, true, false, false),
            CsState::LowerBroadcast => (false, false, true, true),
        });
        lines = link(lines, &net.cs_links[c]);
    }
    for (c, col) in s.benes.iter().enumerate() {
        lines = step(&lines, &|e| match col[e] {
            BenesState::Straight => (true, false, false, true),
            BenesState::Cross => (false, true, true, false),
        });
        if c + 1 < s.benes.len() {
            lines = link(lines, &net.benes_links[c]);
        }
    }
    lines
}

/// Routes `req` and checks every output against the oracle.
pub fn check(net: &CsBenesNetwork, req: &RouteRequest) -> Result<(), String> {
    let s = route(net, req).map_err(|e| format!("{req:?}: {e}"))?;
    let sources: Vec<usize> = req.map.keys().copied().collect();
    let out = oracle(net, &s, &sources);
    for (o, got) in out.iter().enumerate() {
        let want: BTreeSet<usize> = req
            .map
            .iter()
            .filter(|(_, outs)| outs.contains(&o))
            .map(|(&i, _)| i)
            .collect();
        if got != &want {
            return Err(format!("output {o} got {got:?}, want {want:?} for {req:?}"));
        }
    }
    Ok(())
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    // Heap's algorithm
    let mut a: Vec<usize> = (0..n).collect();
    let mut c = vec![0; n];
    let mut out = vec![a.clone()];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            out.push(a.clone());
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    out
}

pub fn random_multicast(rng: &mut ChaCha8Rng, n: usize) -> RouteRequest {
    let mut outs: Vec<usize> = (0..n).collect();
    outs.shuffle(rng);
    let used = rng.gen_range(1..=n);
    outs.truncate(used);
    let mut inputs: Vec<usize> = (0..n).collect();
    inputs.shuffle(rng);
    let k = rng.gen_range(1..=used);
    let mut req = RouteRequest::new();
    // every chosen input gets at least one output
    for (j, &o) in outs.iter().enumerate() {
        let i = if j < k {
            inputs[j]
        } else {
            inputs[rng.gen_range(0..k)]
        };
        req.add(i, [o]);
    }
    req
}
