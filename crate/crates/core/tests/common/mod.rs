#![allow(dead_code)]

use std::collections::BTreeSet;
use std::fmt::Write as _;

use poa_core::net::{build_network, DemandVector, LinkSpec, Network};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random strongly connected network: a two-way ring plus random chords,
/// with random OD pairs and demands.
pub fn random_instance(seed: u64) -> (Network<f64>, DemandVector<f64>) {
    let mut r = rng(seed);
    let nodes = r.gen_range(4..=10usize);
    let mut arcs = BTreeSet::new();
    for i in 1..=nodes {
        let j = i % nodes + 1;
        arcs.insert((i, j));
        arcs.insert((j, i));
    }
    let target = r
        .gen_range(arcs.len()..=30.max(arcs.len()))
        .min(nodes * (nodes - 1));
    while arcs.len() < target {
        let (a, b) = (r.gen_range(1..=nodes), r.gen_range(1..=nodes));
        if a != b {
            arcs.insert((a, b));
        }
    }
    let links: Vec<LinkSpec<f64>> = arcs
        .iter()
        .map(|&(a, b)| LinkSpec::new(a, b, r.gen_range(1.0..5.0), r.gen_range(2.0..10.0)))
        .collect();
    let mut ods = BTreeSet::new();
    let want = r.gen_range(3..=15usize).min(nodes * (nodes - 1));
    while ods.len() < want {
        let (o, d) = (r.gen_range(1..=nodes), r.gen_range(1..=nodes));
        if o != d {
            ods.insert((o, d));
        }
    }
    let ods: Vec<(usize, usize)> = ods.into_iter().collect();
    let demand = ods.iter().map(|_| r.gen_range(1.0..8.0)).collect();
    let net = build_network(&links, &ods, None).unwrap();
    (net, DemandVector::new(demand).unwrap())
}

/// `rows × cols` grid with links both ways between neighbours.
pub fn grid(rows: usize, cols: usize, seed: u64) -> Vec<LinkSpec<f64>> {
    let mut r = rng(seed);
    let id = |i: usize, j: usize| i * cols + j + 1;
    let mut links = Vec::new();
    for i in 0..rows {
        for j in 0..cols {
            let mut add = |a: usize, b: usize| {
                links.push(LinkSpec::new(a, b, r.gen_range(1.0..3.0), r.gen_range(8.0..15.0)));
            };
            if j + 1 < cols {
                add(id(i, j), id(i, j + 1));
                add(id(i, j + 1), id(i, j));
            }
            if i + 1 < rows {
                add(id(i, j), id(i + 1, j));
                add(id(i + 1, j), id(i, j));
            }
        }
    }
    links
}

/// TNTP network text for `links` with the given zone count.
pub fn tntp_text(links: &[LinkSpec<f64>], zones: usize, first_thru: usize) -> String {
    let nodes: BTreeSet<usize> = links.iter().flat_map(|l| [l.tail, l.head]).collect();
    let mut s = String::new();
    let _ = writeln!(s, "<NUMBER OF ZONES> {zones}");
    let _ = writeln!(s, "<NUMBER OF NODES> {}", nodes.len());
    let _ = writeln!(s, "<FIRST THRU NODE> {first_thru}");
    let _ = writeln!(s, "<NUMBER OF LINKS> {}", links.len());
    s.push_str("<END OF METADATA>\n\n~\tinit\tterm\tcap\tlen\tfft\tB\tpow\tspeed\ttoll\ttype\t;\n");
    for l in links {
        let _ = writeln!(
            s,
            "\t{}\t{}\t{}\t1\t{}\t0.15\t4\t0\t0\t1\t;",
            l.tail, l.head, l.capacity, l.free_flow_time
        );
    }
    s
}

/// TNTP trip table text.
pub fn trips_text(zones: usize, entries: &[((usize, usize), f64)]) -> String {
    let mut s = format!("<NUMBER OF ZONES> {zones}\n<TOTAL OD FLOW> 0\n<END OF METADATA>\n\n");
    for o in 1..=zones {
        let row: Vec<String> = entries
            .iter()
            .filter(|((a, _), _)| *a == o)
            .map(|((_, d), v)| format!("{d} : {v};"))
            .collect();
        if !row.is_empty() {
            let _ = writeln!(s, "Origin {o}\n    {}\n", row.join("  "));
        }
    }
    s
}

/// Network with the Anaheim benchmark's dimensions: 38 centroid zones
/// (nodes 1..=38) each joined to a through node by a connector pair, and
/// 378 through nodes on a two-way ring with chords, 914 links in all.
/// Returns the network file and the trip table.
pub fn anaheim_surrogate() -> (String, String) {
    let mut r = rng(416);
    let zones = 38;
    let through = 378;
    let first = zones + 1;
    let node = |k: usize| first + k % through;
    let mut arcs: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut links = Vec::new();
    for k in 0..through {
        for (a, b) in [(node(k), node(k + 1)), (node(k + 1), node(k))] {
            arcs.insert((a, b));
            links.push(LinkSpec::new(a, b, r.gen_range(0.2..1.0), r.gen_range(1500.0..3000.0)));
        }
    }
    while links.len() < 914 - 2 * zones {
        let a = node(r.gen_range(0..through));
        let b = node(r.gen_range(0..through));
        if a != b && arcs.insert((a, b)) {
            links.push(LinkSpec::new(a, b, r.gen_range(0.5..3.0), r.gen_range(1000.0..2500.0)));
        }
    }
    for z in 1..=zones {
        let attach = node(z * through / zones);
        links.push(LinkSpec::new(z, attach, 0.1, 50000.0));
        links.push(LinkSpec::new(attach, z, 0.1, 50000.0));
    }
    let mut entries = Vec::new();
    for o in 1..=zones {
        for d in 1..=zones {
            if o != d && r.gen_bool(0.7) {
                entries.push(((o, d), (r.gen_range(20.0..180.0f64)).round()));
            }
        }
    }
    (tntp_text(&links, zones, first), trips_text(zones, &entries))
}

/// Sup of `|f(z) − g(z)|` on a uniform grid over `[0, hi]`.
pub fn sup_error(f: impl Fn(f64) -> f64, g: impl Fn(f64) -> f64, hi: f64) -> f64 {
    (0..=1200)
        .map(|i| hi * i as f64 / 1200.0)
        .map(|z| (f(z) - g(z)).abs())
        .fold(0.0, f64::max)
}
