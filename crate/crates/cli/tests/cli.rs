use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const NET: &str = "<NUMBER OF ZONES> 2
<NUMBER OF NODES> 4
<FIRST THRU NODE> 3
<NUMBER OF LINKS> 6
<END OF METADATA>

~ init term cap len fft B pow speed toll type ;
1 3 10 1 1 0.15 4 0 0 1 ;
3 2 10 1 1 0.15 4 0 0 1 ;
1 4 10 1 1.5 0.15 4 0 0 1 ;
4 2 10 1 1.5 0.15 4 0 0 1 ;
2 3 10 1 1 0.15 4 0 0 1 ;
3 1 10 1 1 0.15 4 0 0 1 ;
";

const TRIPS: &str = "<NUMBER OF ZONES> 2
<END OF METADATA>

Origin 1
    2 : 20.0;
";

fn poa() -> Command {
    Command::new(env!("CARGO_BIN_EXE_poa"))
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("net.tntp"), NET).unwrap();
        std::fs::write(dir.path().join("trips.tntp"), TRIPS).unwrap();
        std::fs::write(dir.path().join("bpr.json"), r#"{"coefficients": [1, 0, 0, 0, 0.15]}"#).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, text).unwrap();
        p
    }
}

fn run(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    let mut c = poa();
    for a in args {
        c.arg(a);
    }
    c.output().unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn solve_ue_and_so() {
    let fx = Fixture::new();
    let (net, trips) = (fx.path("net.tntp"), fx.path("trips.tntp"));
    let ue = stdout(&run(&[&"solve-ue", &"--net", &net, &"--trips", &trips, &"--tol", &"1e-8", &"--step-rule", &"gp"]));
    let v: serde_json::Value = serde_json::from_str(&ue).unwrap();
    let flows: Vec<f64> = serde_json::from_value(v["flows"].clone()).unwrap();
    assert_eq!(flows.len(), 6);
    assert!((flows[0] + flows[2] - 20.0).abs() < 1e-6);
    assert!(v["rel_gap"].as_f64().unwrap() <= 1e-8);
    let so = stdout(&run(&[&"solve-so", &"--net", &net, &"--trips", &trips, &"--format", &"csv"]));
    assert!(so.starts_with("link_id,flow\n1,"));
    assert_eq!(so.lines().count(), 7);
}

#[test]
fn poa_json_schema() {
    let fx = Fixture::new();
    let out = fx.path("poa.json");
    let o = run(&[
        &"poa",
        &"--net",
        &fx.path("net.tntp"),
        &"--trips",
        &fx.path("trips.tntp"),
        &"--f-coeffs",
        &fx.path("bpr.json"),
        &"--out",
        &out,
    ]);
    stdout(&o);
    let text = read(&out);
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let poa = v["poa"].as_f64().unwrap();
    assert!(poa >= 1.0 - 1e-9);
    let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
    assert_eq!(keys, ["poa", "L_user", "L_social", "per_link_flows"]);
}

#[test]
fn reports_are_byte_identical() {
    let fx = Fixture::new();
    let args = |out: &Path| {
        run(&[
            &"sensitivity",
            &"--net",
            &fx.path("net.tntp"),
            &"--trips",
            &fx.path("trips.tntp"),
            &"--f-coeffs",
            &fx.path("bpr.json"),
            &"--out",
            &out.to_path_buf(),
        ])
    };
    stdout(&args(&fx.path("a.csv")));
    stdout(&args(&fx.path("b.csv")));
    let a = read(&fx.path("a.csv"));
    assert_eq!(a, read(&fx.path("b.csv")));
    assert!(a.starts_with("link_id,dV_dt0,dV_dm,deltaV_t0,deltaV_m\n"));
}

#[test]
fn meta_with_zones() {
    let fx = Fixture::new();
    let flows = fx.write("x.csv", "link_id,flow\n1,10\n2,10\n3,10\n4,10\n5,0\n6,0\n");
    let zones = fx.write("z.csv", "node,zone\n1,west\n2,east\n3,west\n4,east\n");
    let out = stdout(&run(&[
        &"meta",
        &"--net",
        &fx.path("net.tntp"),
        &"--flows",
        &flows,
        &"--f-coeffs",
        &fx.path("bpr.json"),
        &"--zones",
        &zones,
    ]));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["flow_max_link"], 1);
    assert_eq!(v["flow_min_link"], 5);
    assert!(v["zone_costs"]["east"].as_f64().unwrap() > 0.0);
    assert_eq!(v["links"][4]["congestion_metric"], 1.0);
}

#[test]
fn estimate_od_then_adjust() {
    let fx = Fixture::new();
    let x = fx.write("x.csv", "link_id,obs_1,obs_2\n1,12,11\n2,12,11\n3,8,9\n4,8,9\n5,0,0\n6,0,0\n");
    let demand = stdout(&run(&[&"estimate-od", &"--net", &fx.path("net.tntp"), &"--obs", &x]));
    assert!(demand.starts_with("origin,destination,demand\n1,2,"), "{demand}");
    let g0 = fx.write("g0.csv", &demand);
    let trace = stdout(&run(&[
        &"adjust-od",
        &"--net",
        &fx.path("net.tntp"),
        &"--obs",
        &x,
        &"--g0",
        &g0,
        &"--f-coeffs",
        &fx.path("bpr.json"),
        &"--T",
        &"4",
        &"--demand-out",
        &fx.path("g.csv"),
    ]));
    assert!(trace.starts_with("iteration,F,theta,demand_shift\n0,"));
    assert!(read(&fx.path("g.csv")).starts_with("origin,destination,demand\n"));
}

#[test]
fn estimate_cost_single_point() {
    let fx = Fixture::new();
    let ue = stdout(&run(&[
        &"solve-ue",
        &"--net",
        &fx.path("net.tntp"),
        &"--trips",
        &fx.path("trips.tntp"),
        &"--tol",
        &"1e-10",
        &"--step-rule",
        &"gp",
        &"--format",
        &"csv",
    ]));
    let x = fx.write("x.csv", &ue);
    let out = stdout(&run(&[
        &"estimate-cost",
        &"--net",
        &fx.path("net.tntp"),
        &"--obs",
        &x,
        &"--trips",
        &fx.path("trips.tntp"),
        &"--n-grid",
        &"4",
        &"--c-grid",
        &"1",
        &"--gamma-grid",
        &"0.1",
        &"--folds",
        &"1",
    ]));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["n"], 4);
    assert_eq!(v["beta"].as_array().unwrap().len(), 5);
    assert_eq!(v["beta"][0], 1.0);
}

#[test]
fn config_file_fills_flags() {
    let fx = Fixture::new();
    let cfg = fx.write(
        "run.cfg",
        &format!(
            "# shared inputs\nnet = {}\ntrips = {}\nformat = csv\ntol = 1e-6\n",
            fx.path("net.tntp").display(),
            fx.path("trips.tntp").display()
        ),
    );
    let out = stdout(&run(&[&"solve-ue", &"--config", &cfg]));
    assert!(out.starts_with("link_id,flow\n"));
    // command line wins over the file
    let out = stdout(&run(&[&"solve-ue", &"--config", &cfg, &"--format", &"json"]));
    assert!(out.starts_with('{'));
}

#[test]
fn ingest_speeds_writes_observations() {
    let fx = Fixture::new();
    let mut csv = String::from("link_id,timestamp,average_speed,free_flow_speed\n");
    for link in 1..=6 {
        for (ts, v) in [("2024-03-05 07:30:00", 45.0), ("2024-03-05 17:30:00", 20.0), ("2024-03-06 07:30:00", 50.0)] {
            csv.push_str(&format!("{link},{ts},{v},60\n"));
        }
    }
    let speeds = fx.write("speeds.csv", &csv);
    let out = fx.path("obs.csv");
    let o = run(&[
        &"ingest-speeds",
        &"--csv",
        &speeds,
        &"--net",
        &fx.path("net.tntp"),
        &"--windows",
        &"AM=07:00-09:00,PM=16:00-18:00",
        &"--out",
        &out,
    ]);
    let err = String::from_utf8_lossy(&o.stderr).to_string();
    stdout(&o);
    assert!(err.contains("obs_1 = AM:2024-03-05"), "{err}");
    assert!(err.contains("congested branch"), "{err}");
    let text = read(&out);
    assert!(text.starts_with("link_id,obs_1,obs_2,obs_3\n1,7.5,"), "{text}");
}

#[test]
fn exit_codes() {
    let fx = Fixture::new();
    let bad = fx.write("bad.tntp", "<NUMBER OF ZONES> 1\n<END OF METADATA>\n1 2 0 1 1 ;\n");
    let o = run(&[&"solve-ue", &"--net", &bad, &"--trips", &fx.path("trips.tntp")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));

    let o = run(&[
        &"solve-ue",
        &"--net",
        &fx.path("net.tntp"),
        &"--trips",
        &fx.path("trips.tntp"),
        &"--max-iter",
        &"2",
        &"--tol",
        &"1e-12",
        &"--step-rule",
        &"msa",
    ]);
    assert_eq!(o.status.code(), Some(3));

    let o = run(&[&"solve-ue", &"--net"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(run(&[&"--help"]).status.code(), Some(0));
}
