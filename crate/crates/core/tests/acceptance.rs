//! End-to-end acceptance checks A1–A10. Prints one PASS/FAIL/NOT RUN line
//! per criterion; the test fails if any criterion that ran did not pass.

mod common;

use std::io::Write as _;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use poa_core::equilibrium::{
    link_costs, relative_gap, solve_so, solve_ue, solve_ue_with_routes, total_latency, wardrop_epsilon,
    SolverSettings, StepRule, UserCost,
};
use poa_core::inverse_vi::{estimate_cost, KernelParams, ObservationSet};
use poa_core::io::{self, report};
use poa_core::net::{build_network, DemandVector, LinkSpec, Network, RouteSettings};
use poa_core::od_adjust::{adjust_demand, AdjustSettings};
use poa_core::od_estimate::{initial_demand, OdEstimateSettings};
use poa_core::sensitivity::{self, Perturbations};
use poa_core::latency::LatencyFunction;
use rand::Rng;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Status {
    Pass,
    Fail,
    NotRun,
}

struct Outcome {
    status: Status,
    detail: String,
    /// Emitted reports, compared byte for byte by A10.
    reports: Vec<String>,
}

impl Outcome {
    fn new(ok: bool, detail: String, reports: Vec<String>) -> Self {
        Self {
            status: if ok { Status::Pass } else { Status::Fail },
            detail,
            reports,
        }
    }
}

fn line(text: &str) {
    // bypasses the harness's output capture so the summary always shows
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{text}");
    let _ = out.flush();
}

fn timed(limit: Duration, f: impl FnOnce() -> Outcome) -> (Outcome, Duration) {
    let start = Instant::now();
    let mut o = f();
    let took = start.elapsed();
    if took > limit && o.status == Status::Pass {
        o.status = Status::Fail;
        o.detail.push_str(" (over time budget)");
    }
    (o, took)
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-300);
    num / den
}

fn pigou() -> Network<f64> {
    build_network(
        &[
            LinkSpec::new(1, 2, 1.0, 1.0),
            LinkSpec::new(1, 2, 2.0, 1e9),
            LinkSpec::new(2, 1, 1.0, 1.0),
        ],
        &[(1, 2)],
        None,
    )
    .unwrap()
}

fn poa_report(net: &Network<f64>, demand: &DemandVector<f64>, f: &LatencyFunction<f64>) -> (report::PoaReport, String) {
    let s = SolverSettings::new(20000, 1e-10, StepRule::GradientProjection);
    let ue = solve_ue(net, demand, f, &s).unwrap();
    let so = solve_so(net, demand, f, &s).unwrap();
    let lu = total_latency(net, ue.flows.as_slice(), f).unwrap();
    let ls = total_latency(net, so.flows.as_slice(), f).unwrap();
    let r = report::PoaReport::new(lu, ls, ue.flows.as_slice(), so.flows.as_slice());
    let text = r.render(io::Format::Json).unwrap();
    (r, text)
}

fn a1() -> Outcome {
    let f = LatencyFunction::linear(1.0);
    let (r, text) = poa_report(&pigou(), &DemandVector::new(vec![1.0]).unwrap(), &f);
    let ok = (r.poa - 8.0 / 7.0).abs() <= 1e-3 && (r.l_user - 2.0).abs() <= 1e-3 && (r.l_social - 1.75).abs() <= 1e-3;
    Outcome::new(
        ok,
        format!("PoA {:.9} vs 8/7, L_UE {:.9}, L_SO {:.9}", r.poa, r.l_user, r.l_social),
        vec![text],
    )
}

fn a2() -> Outcome {
    let net = build_network(
        &[
            LinkSpec::new(1, 2, 1.0, 1.0),
            LinkSpec::new(1, 2, 1.0, 1.0),
            LinkSpec::new(2, 1, 1.0, 1.0),
        ],
        &[(1, 2)],
        None,
    )
    .unwrap();
    let (r, text) = poa_report(&net, &DemandVector::new(vec![2.0]).unwrap(), &LatencyFunction::bpr());
    Outcome::new((r.poa - 1.0).abs() <= 1e-6, format!("PoA {:.12}", r.poa), vec![text])
}

const RANDOM_INSTANCES: u64 = 20;

fn a3() -> Outcome {
    let f = LatencyFunction::bpr();
    let marginal = f.marginal_factor();
    let s = SolverSettings::new(20000, 1e-10, StepRule::GradientProjection);
    let (mut worst_flow, mut worst_obj) = (0.0f64, 0.0f64);
    let mut reports = Vec::new();
    for seed in 0..RANDOM_INSTANCES {
        let (net, demand) = common::random_instance(seed);
        let so = solve_so(&net, &demand, &f, &s).unwrap();
        let ue = solve_ue(&net, &demand, &marginal, &s).unwrap();
        let l_so = total_latency(&net, so.flows.as_slice(), &f).unwrap();
        let l_ue = total_latency(&net, ue.flows.as_slice(), &f).unwrap();
        worst_flow = worst_flow.max(rel_l2(ue.flows.as_slice(), so.flows.as_slice()));
        worst_obj = worst_obj.max((l_ue - l_so).abs() / l_so);
        reports.push(report::flows_csv(so.flows.as_slice()));
    }
    Outcome::new(
        worst_flow <= 1e-4 && worst_obj <= 1e-5,
        format!(
            "{RANDOM_INSTANCES} instances, worst flow rel l2 {worst_flow:.3e} (<= 1e-4), worst objective rel {worst_obj:.3e} (<= 1e-5)"
        ),
        reports,
    )
}

/// Share of an OD pair's flow below which a route does not count as used.
const USED_ROUTE_SHARE: f64 = 1e-3;

fn a8() -> Outcome {
    let f = LatencyFunction::bpr();
    let tol = 1e-4;
    let s = SolverSettings::new(5000, tol, StepRule::GradientProjection);
    let (mut gap_max, mut eps_max, mut spread_max) = (0.0f64, 0.0f64, 0.0f64);
    let mut reports = Vec::new();
    for seed in 0..RANDOM_INSTANCES {
        let (net, demand) = common::random_instance(seed);
        let (ue, routes) = solve_ue_with_routes(&net, &demand, &f, &s).unwrap();
        let x = ue.flows.as_slice();
        let gap = relative_gap(&net, x, &demand, &f).unwrap();
        let eps = wardrop_epsilon(&net, x, &demand, &f).unwrap();
        let l = total_latency(&net, x, &f).unwrap();
        let costs = link_costs(&net, &UserCost(&f), x);
        let spreads = routes.cost_spread(&costs, USED_ROUTE_SHARE);
        for (w, sp) in spreads.iter().enumerate() {
            let used: Vec<f64> = routes.per_od[w]
                .iter()
                .filter(|(_, v)| *v >= USED_ROUTE_SHARE * demand[w])
                .map(|(r, _)| r.weight(&costs))
                .collect();
            if used.is_empty() {
                continue;
            }
            let mean = used.iter().sum::<f64>() / used.len() as f64;
            spread_max = spread_max.max(sp / (tol * mean));
        }
        gap_max = gap_max.max(gap);
        eps_max = eps_max.max(eps / l);
        reports.push(io::to_json(&ue).unwrap());
    }
    Outcome::new(
        gap_max <= 1e-4 && eps_max <= 1e-3 && spread_max <= 10.0,
        format!(
            "worst rel gap {gap_max:.3e} (<= 1e-4), worst eps/L {eps_max:.3e} (<= 1e-3), worst used-route spread {spread_max:.3} x tol x mean (<= 10; routes carrying >= {USED_ROUTE_SHARE} of OD demand)"
        ),
        reports,
    )
}

/// 3×3 two-way grid, six OD pairs, observations at demand levels chosen so
/// that the largest congestion ratio sweeps up to 1.3.
fn a4_observations() -> (ObservationSet<f64>, f64, f64) {
    let links = common::grid(3, 3, 4);
    let ods = [(1, 9), (9, 1), (3, 7), (7, 3), (2, 8), (4, 6)];
    let net = Arc::new(build_network(&links, &ods, None).unwrap());
    let truth = LatencyFunction::bpr();
    let s = SolverSettings::new(50000, 1e-12, StepRule::GradientProjection);
    let base = DemandVector::new(vec![10.0, 8.0, 9.0, 7.0, 6.0, 5.0]).unwrap();
    let max_ratio = |d: &DemandVector<f64>| {
        let x = solve_ue(&net, d, &truth, &s).unwrap();
        net.links()
            .iter()
            .zip(x.flows.iter())
            .map(|(l, &v)| v / l.capacity)
            .fold(0.0, f64::max)
    };
    let unit = 1.3 / max_ratio(&base);
    let mut pairs = Vec::new();
    for k in 0..8 {
        let scale = unit * (0.2 + 1.1 * k as f64 / 7.0) / 1.3;
        let d = DemandVector::new(base.iter().map(|v| v * scale).collect()).unwrap();
        let x = solve_ue(&net, &d, &truth, &s).unwrap().flows;
        pairs.push((x, d));
    }
    let obs = ObservationSet::on_network(net, pairs).unwrap();
    let ratios = obs.distinct_ratios();
    let lo = ratios.iter().copied().filter(|&r| r > 0.0).fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().copied().fold(0.0, f64::max);
    (obs, lo, hi)
}

fn a4() -> Outcome {
    let (obs, lo, hi) = a4_observations();
    let truth = |z: f64| 1.0 + 0.15 * z.powi(4);
    let mut errors = Vec::new();
    let mut reports = Vec::new();
    for n in [3, 4, 5, 6] {
        let (sol, f) = estimate_cost(&obs, &KernelParams::new(n, 1.5, 0.01)).unwrap();
        errors.push(common::sup_error(|z| f.value(z), truth, 1.2));
        reports.push(io::to_json(&sol).unwrap());
    }
    let n5 = errors[2];
    let n3_worse = errors[1..].iter().all(|&e| errors[0] > e);
    Outcome::new(
        n5 <= 0.1
            && n3_worse
            && obs.get(0).network.link_count() >= 15
            && obs.get(0).network.od_count() >= 5
            && lo <= 0.2
            && hi >= 1.3,
        format!(
            "{} links, {} ODs, K={}, ratios span [{lo:.3}, {hi:.3}]; sup error n=3 {:.3e}, n=4 {:.3e}, n=5 {:.3e} (<= 0.1), n=6 {:.3e}",
            obs.get(0).network.link_count(),
            obs.get(0).network.od_count(),
            obs.len(),
            errors[0],
            errors[1],
            errors[2],
            errors[3]
        ),
        reports,
    )
}

fn a5() -> Outcome {
    let links = common::grid(5, 5, 5);
    let mut r = common::rng(55);
    let mut ods = std::collections::BTreeSet::new();
    while ods.len() < 20 {
        let (o, d) = (r.gen_range(1..=25usize), r.gen_range(1..=25usize));
        if o != d {
            ods.insert((o, d));
        }
    }
    let ods: Vec<(usize, usize)> = ods.into_iter().collect();
    let net = build_network(&links, &ods, None).unwrap();
    let truth: Vec<f64> = ods.iter().map(|_| r.gen_range(5.0..15.0)).collect();
    let g0: Vec<f64> = truth.iter().map(|v| v * r.gen_range(0.8..1.2)).collect();
    let f = LatencyFunction::bpr();
    let settings = AdjustSettings::default();
    let x_obs = solve_ue(&net, &DemandVector::new(truth.clone()).unwrap(), &f, &settings.inner)
        .unwrap()
        .flows
        .into_vec();
    let (_, trace) = adjust_demand(&net, &f, &x_obs, &DemandVector::new(g0).unwrap(), &settings).unwrap();
    let fs: Vec<f64> = trace.rows.iter().map(|r| r.objective).collect();
    let monotone = fs.windows(2).all(|w| w[1] <= w[0]);
    let ratio = fs.last().unwrap() / fs[0];
    let dist = trace.distances_to(&truth);
    Outcome::new(
        monotone && ratio <= 0.5 && trace.rows.len() <= 11,
        format!(
            "{} nodes, {} links, {} ODs; F ratio {ratio:.3e} (<= 0.5) after {} iterations, non-increasing {monotone}; |g-g*| {:.3} -> {:.3}",
            net.node_count(),
            net.link_count(),
            net.od_count(),
            trace.rows.len() - 1,
            dist[0],
            dist.last().unwrap()
        ),
        vec![report::adjust_trace_csv(&trace)],
    )
}

fn a6() -> Outcome {
    // star around node 1: every OD pair has exactly one route and no route
    // is a union of others
    let links = [
        LinkSpec::new(1, 2, 1.0, 10.0),
        LinkSpec::new(2, 1, 1.0, 10.0),
        LinkSpec::new(1, 3, 1.5, 10.0),
        LinkSpec::new(3, 1, 1.5, 10.0),
        LinkSpec::new(1, 4, 2.0, 10.0),
        LinkSpec::new(4, 1, 2.0, 10.0),
        LinkSpec::new(1, 5, 2.5, 10.0),
        LinkSpec::new(5, 1, 2.5, 10.0),
    ];
    let ods = [(1, 2), (1, 3), (1, 4), (1, 5), (2, 1), (3, 1)];
    let net = build_network(&links, &ods, None).unwrap();
    let truth = [3.0, 5.0, 2.0, 4.0, 1.5, 2.5];
    let mut x = vec![0.0; net.link_count()];
    let routes = poa_core::net::fastest_routes(&net, &net.free_flow_times()).unwrap();
    for (r, g) in routes.iter().zip(truth) {
        for &a in &r.links {
            x[a] += g;
        }
    }
    let samples = vec![x.clone(); 5];
    let est = initial_demand(
        &net,
        &samples,
        &OdEstimateSettings {
            routes: RouteSettings::default(),
            single_route: false,
        },
    )
    .unwrap();
    let err = rel_l2(est.demand.as_slice(), &truth);
    Outcome::new(
        err <= 1e-4,
        format!(
            "{} routes, incidence rank {}, relative error {err:.3e} (<= 1e-4)",
            est.routes.route_count(),
            est.incidence_rank
        ),
        vec![io::write_demand(&net, &est.demand)],
    )
}

fn a7() -> Outcome {
    let net = build_network(
        &[LinkSpec::new(1, 2, 1.0, 1.0), LinkSpec::new(2, 1, 1.0, 1.0)],
        &[(1, 2)],
        None,
    )
    .unwrap();
    let d = DemandVector::new(vec![1.0]).unwrap();
    let f = LatencyFunction::linear(1.0);
    let s = SolverSettings::new(1000, 1e-10, StepRule::GradientProjection);
    let dv_t: f64 = sensitivity::delta_v_freeflow(&net, &d, &f, 0, -0.2, &s).unwrap();
    let dv_m: f64 = sensitivity::delta_v_capacity(&net, &d, &f, 0, 0.2, &s).unwrap();
    // 0.2·∫₀¹(1+s)ds and ∫₀¹(1+s)ds − ∫₀¹(1+s/1.2)ds
    let err_t = (dv_t - 0.3).abs();
    let err_m = (dv_m - (1.5 - (1.0 + 1.0 / 2.4))).abs();

    let f = LatencyFunction::bpr();
    let s = SolverSettings::new(20000, 1e-9, StepRule::GradientProjection);
    let mut worst = f64::INFINITY;
    let mut violations = 0;
    let mut reports = Vec::new();
    for seed in 0..RANDOM_INSTANCES {
        let (net, demand) = common::random_instance(100 + seed);
        let p = Perturbations::from_fraction(&net, 0.2).unwrap();
        let rep = sensitivity::sensitivity_report(&net, &demand, &f, p, &s).unwrap();
        let base = solve_ue(&net, &demand, &f, &s).unwrap();
        for (row, &x) in rep.rows.iter().zip(base.flows.iter()) {
            if x <= 1e-9 {
                continue;
            }
            let lo = row.delta_v_t0.min(row.delta_v_m);
            worst = worst.min(lo);
            if row.delta_v_t0 < -row.tolerance_t0 || row.delta_v_m < -row.tolerance_m {
                violations += 1;
            }
        }
        reports.push(report::sensitivity_report_text(&rep, io::Format::Csv).unwrap());
    }
    Outcome::new(
        err_t <= 1e-6 && err_m <= 1e-6 && violations == 0,
        format!(
            "free-flow error {err_t:.2e}, capacity error {err_m:.2e} (<= 1e-6); {RANDOM_INSTANCES} instances, {violations} sign violations beyond solver gap, smallest dV {worst:.3e}"
        ),
        reports,
    )
}

fn a9_check(net_text: &str, trips_text: &str, dir: &std::path::Path) -> (bool, String, Vec<String>) {
    let np = dir.join("net.tntp");
    let tp = dir.join("trips.tntp");
    std::fs::write(&np, net_text).unwrap();
    std::fs::write(&tp, trips_text).unwrap();
    a9_files(&np, &tp)
}

fn a9_files(np: &std::path::Path, tp: &std::path::Path) -> (bool, String, Vec<String>) {
    let parsed: io::TntpNetwork<f64> = io::parse_tntp_network(np).unwrap();
    let (net, demand) = io::tntp::load::<f64>(np, Some(tp), None).unwrap();
    let zones = parsed.zone_count();
    let s = SolverSettings::new(5000, 1e-4, StepRule::GradientProjection);
    let ue = solve_ue(&net, &demand, &LatencyFunction::bpr(), &s);
    let counts = zones == 38 && net.node_count() == 416 && net.link_count() == 914 && net.od_count() == 1406;
    let (ok, solve) = match &ue {
        Ok(r) => {
            let peak = net
                .links()
                .iter()
                .zip(r.flows.iter())
                .map(|(l, &x)| x / l.capacity)
                .fold(0.0, f64::max);
            (
                r.final_rel_gap <= 1e-4,
                format!(
                    "rel gap {:.3e} in {} iterations, peak x/m {peak:.2}",
                    r.final_rel_gap, r.iterations
                ),
            )
        }
        Err(e) => (false, format!("solve failed: {e}")),
    };
    (
        counts && ok,
        format!(
            "{zones} zones, {} nodes, {} links, {} OD pairs; {solve}",
            net.node_count(),
            net.link_count(),
            net.od_count()
        ),
        ue.ok().map(|r| report::flows_csv(r.flows.as_slice())).into_iter().collect(),
    )
}

fn a9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (net_text, trips_text) = common::anaheim_surrogate();
    let (sur_ok, sur_detail, reports) = a9_check(&net_text, &trips_text, dir.path());
    let real = std::env::var_os("ANAHEIM_DIR").map(PathBuf::from);
    match real {
        Some(d) => {
            let (ok, detail, mut rep) = a9_files(&d.join("Anaheim_net.tntp"), &d.join("Anaheim_trips.tntp"));
            rep.extend(reports);
            Outcome::new(ok && sur_ok, format!("Anaheim: {detail}; surrogate: {sur_detail}"), rep)
        }
        None => Outcome {
            status: if sur_ok { Status::NotRun } else { Status::Fail },
            detail: format!(
                "public Anaheim files not available (set ANAHEIM_DIR); same-size surrogate: {sur_detail}"
            ),
            reports,
        },
    }
}

type Criterion = (&'static str, u64, fn() -> Outcome);

const CRITERIA: [Criterion; 9] = [
    ("A1", 1, a1),
    ("A2", 1, a2),
    ("A3", 30, a3),
    ("A4", 120, a4),
    ("A5", 300, a5),
    ("A6", 10, a6),
    ("A7", 30, a7),
    ("A8", 60, a8),
    ("A9", 120, a9),
];

#[test]
fn acceptance() {
    let mut failures = Vec::new();
    let mut first_reports = Vec::new();
    let only = std::env::var("ACCEPTANCE_ONLY").ok();
    let selected: Vec<Criterion> = CRITERIA
        .into_iter()
        .filter(|(name, _, _)| only.as_deref().is_none_or(|o| o.split(',').any(|x| x == *name)))
        .collect();
    for &(name, secs, f) in &selected {
        let (o, took) = timed(Duration::from_secs(secs), f);
        let tag = match o.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::NotRun => "NOT RUN",
        };
        line(&format!("{name} {tag}: {} [{:.2}s, budget {secs}s]", o.detail, took.as_secs_f64()));
        if o.status == Status::Fail {
            failures.push(name);
        }
        first_reports.push(o.reports);
    }
    let start = Instant::now();
    let mut differing = Vec::new();
    for ((name, _, f), before) in selected.iter().zip(&first_reports) {
        if f().reports != *before {
            differing.push(*name);
        }
    }
    let total: usize = first_reports.iter().map(Vec::len).sum();
    if differing.is_empty() {
        line(&format!(
            "A10 PASS: {total} reports from A1-A9 byte-identical on re-run [{:.2}s]",
            start.elapsed().as_secs_f64()
        ));
    } else {
        line(&format!("A10 FAIL: reports differ for {}", differing.join(", ")));
        failures.push("A10");
    }
    assert!(failures.is_empty(), "failed: {failures:?}");
}
