use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{ArgAction, Args, CommandFactory, Parser, Subcommand};

use poa_core::equilibrium::{self, SolverSettings, StepRule};
use poa_core::inverse_vi::{self, HyperGrid, KernelParams, ObservationSet};
use poa_core::io::{self, report, Format, RunConfig};
use poa_core::net::RouteSettings;
use poa_core::od_adjust::{self, AdjustSettings};
use poa_core::od_estimate::{self, OdEstimateSettings};
use poa_core::sensitivity::{self, Perturbations, RankBy};
use poa_core::{DemandVector, ErrorClass, LatencyFunction, Network};

#[derive(Parser)]
#[command(name = "poa", version, about = "Price-of-anarchy estimation for road networks")]
struct Cli {
    /// Flat key = value file; keys are long flag names and fill in flags
    /// not given on the command line.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Log level (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    log: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SolverArgs {
    /// Relative gap tolerance.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 5000)]
    max_iter: usize,
    /// msa, fw (exact line search), cfw (conjugate) or gp (gradient
    /// projection). fw, cfw and gp reach tight gaps much sooner than msa.
    #[arg(long, default_value = "msa")]
    step_rule: StepRule,
}

impl SolverArgs {
    fn settings(&self) -> anyhow::Result<SolverSettings> {
        let s = SolverSettings::new(self.max_iter, self.tol, self.step_rule);
        s.validate()?;
        Ok(s)
    }
}

#[derive(Args, Clone)]
struct OutArgs {
    /// Output file; stdout when omitted or `-`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// json or csv.
    #[arg(long)]
    format: Option<Format>,
}

impl OutArgs {
    fn format(&self, default: Format) -> Format {
        self.format.unwrap_or(default)
    }

    fn emit(&self, text: &str) -> anyhow::Result<()> {
        io::emit_report(text, self.out.as_deref())?;
        Ok(())
    }
}

#[derive(Args, Clone)]
struct EquilibriumArgs {
    /// TNTP network file.
    #[arg(long)]
    net: PathBuf,
    /// TNTP trip table or origin,destination,demand CSV.
    #[arg(long)]
    trips: PathBuf,
    /// Latency coefficients JSON; BPR when omitted.
    #[arg(long)]
    f_coeffs: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Subcommand)]
enum Command {
    /// User equilibrium flows.
    SolveUe(EquilibriumArgs),
    /// System optimum flows.
    SolveSo(EquilibriumArgs),
    /// Price of anarchy L(user)/L(social).
    Poa {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        trips: PathBuf,
        #[arg(long)]
        f_coeffs: PathBuf,
        /// Observed user flows (link_id,flow); the user equilibrium is solved
        /// when omitted.
        #[arg(long)]
        user_flows: Option<PathBuf>,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Recover the latency function from observed equilibrium flows.
    EstimateCost {
        #[arg(long)]
        net: PathBuf,
        /// Flow files; each column is one observation.
        #[arg(long, required = true, num_args = 1..)]
        obs: Vec<PathBuf>,
        /// Demand per observation: one file shared by all, or one per column.
        #[arg(long, required = true, num_args = 1..)]
        trips: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "3,4,5,6")]
        n_grid: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0.5,1,1.5")]
        c_grid: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.01,0.1,1,10,100")]
        gamma_grid: Vec<f64>,
        /// Cross-validation folds; below 2 fits a single grid point directly.
        #[arg(long, default_value_t = 3)]
        folds: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Initial OD demand from link flow samples.
    EstimateOd {
        #[arg(long)]
        net: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        obs: Vec<PathBuf>,
        /// Only the free-flow fastest route per OD pair.
        #[arg(long)]
        single_route: bool,
        /// Routes per OD pair otherwise.
        #[arg(long, default_value_t = 3)]
        k_routes: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Bilevel OD demand adjustment against observed flows.
    AdjustOd {
        #[arg(long)]
        net: PathBuf,
        /// Observed flows; several columns are averaged.
        #[arg(long, required = true, num_args = 1..)]
        obs: Vec<PathBuf>,
        #[arg(long)]
        g0: PathBuf,
        #[arg(long)]
        f_coeffs: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        gamma1: f64,
        #[arg(long, default_value_t = 1.0)]
        gamma2: f64,
        #[arg(long, default_value_t = 2)]
        rho: u32,
        /// Step halvings tried per iteration.
        #[arg(long = "T", default_value_t = 10)]
        t: u32,
        #[arg(long, default_value_t = 0.0)]
        eps1: f64,
        #[arg(long, default_value = "1e-20")]
        eps2: f64,
        #[arg(long, default_value_t = 10)]
        max_outer: usize,
        /// Where to write the adjusted demand CSV.
        #[arg(long)]
        demand_out: Option<PathBuf>,
        #[arg(long, default_value = "1e-5")]
        tol: f64,
        #[arg(long, default_value_t = 5000)]
        max_iter: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Per-link objective sensitivities and rankings.
    Sensitivity {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        trips: PathBuf,
        #[arg(long)]
        f_coeffs: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        delta_frac: f64,
        #[arg(long, default_value_t = 4)]
        top_k: usize,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Congestion metric, flow extremes and zone costs.
    Meta {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        flows: PathBuf,
        #[arg(long)]
        f_coeffs: PathBuf,
        /// node,zone CSV.
        #[arg(long)]
        zones: Option<PathBuf>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Convert link speed records to flow observations.
    IngestSpeeds {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        net: PathBuf,
        /// e.g. AM=07:00-09:00,MD=11:00-13:00,PM=16:00-18:00,NT=22:00-05:00,WD=weekend
        #[arg(long)]
        windows: String,
        /// day or month.
        #[arg(long, default_value = "day")]
        group_by: io::GroupBy,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_network(path: &Path, zones: Option<&Path>) -> anyhow::Result<Network> {
    let labels = zones.map(io::read_zones).transpose()?;
    let (net, _) = io::tntp::load::<f64>(path, None, labels.as_ref())
        .with_context(|| format!("loading network {}", path.display()))?;
    Ok(net)
}

fn load_latency(path: Option<&Path>) -> anyhow::Result<LatencyFunction> {
    match path {
        Some(p) => io::read_latency(p).with_context(|| format!("reading {}", p.display())),
        None => Ok(LatencyFunction::bpr()),
    }
}

fn load_demand(path: &Path, net: &Network) -> anyhow::Result<DemandVector> {
    io::read_demand(path, net).with_context(|| format!("reading demand {}", path.display()))
}

fn load_flows(paths: &[PathBuf], net: &Network) -> anyhow::Result<io::FlowTable<f64>> {
    let t = io::read_flow_files(paths, net.link_count()).context("reading flows")?;
    if t.flows.is_empty() {
        bail!("no flow columns found");
    }
    Ok(t)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::SolveUe(a) => solve(a, false),
        Command::SolveSo(a) => solve(a, true),
        Command::Poa {
            net,
            trips,
            f_coeffs,
            user_flows,
            solver,
            out,
        } => {
            let network = load_network(&net, None)?;
            let demand = load_demand(&trips, &network)?;
            let f = load_latency(Some(&f_coeffs))?;
            let settings = solver.settings()?;
            let user = match user_flows {
                Some(p) => load_flows(&[p], &network)?.flows.swap_remove(0).into_vec(),
                None => equilibrium::solve_ue(&network, &demand, &f, &settings)?.flows.into_vec(),
            };
            let social = equilibrium::solve_so(&network, &demand, &f, &settings)?.flows.into_vec();
            let lu = equilibrium::total_latency(&network, &user, &f)?;
            let ls = equilibrium::total_latency(&network, &social, &f)?;
            if ls.is_nan() || ls <= 0.0 {
                return Err(poa_core::Error::ZeroSocialCost.into());
            }
            let r = report::PoaReport::new(lu, ls, &user, &social);
            out.emit(&r.render(out.format(Format::Json))?)
        }
        Command::EstimateCost {
            net,
            obs,
            trips,
            n_grid,
            c_grid,
            gamma_grid,
            folds,
            out,
        } => {
            let network = Arc::new(load_network(&net, None)?);
            let table = load_flows(&obs, &network)?;
            let k = table.flows.len();
            if trips.len() != 1 && trips.len() != k {
                bail!("--trips takes one file or one per observation ({k}), got {}", trips.len());
            }
            let demands: Vec<DemandVector> =
                trips.iter().map(|p| load_demand(p, &network)).collect::<anyhow::Result<_>>()?;
            let pairs = table
                .flows
                .into_iter()
                .enumerate()
                .map(|(i, x)| (x, demands[if demands.len() == 1 { 0 } else { i }].clone()))
                .collect();
            let observations = ObservationSet::on_network(network, pairs)?;
            let grid = HyperGrid {
                n: n_grid,
                c: c_grid,
                gamma: gamma_grid,
            };
            let points = grid.points();
            let sol = if folds < 2 {
                if points.len() != 1 {
                    bail!("without cross-validation the grid must hold exactly one point");
                }
                inverse_vi::estimate_cost(&observations, &points[0])?.0
            } else {
                let (sol, _, cv) = inverse_vi::estimate_with_cv(&observations, &grid, folds)?;
                let KernelParams { n, c, gamma } = cv.best;
                log::info!("selected n = {n}, c = {c}, gamma = {gamma}");
                sol
            };
            out.emit(&io::to_json(&sol)?)
        }
        Command::EstimateOd {
            net,
            obs,
            single_route,
            k_routes,
            out,
        } => {
            let network = load_network(&net, None)?;
            let table = load_flows(&obs, &network)?;
            let samples: Vec<Vec<f64>> = table.flows.into_iter().map(|f| f.into_vec()).collect();
            let settings = OdEstimateSettings {
                routes: RouteSettings {
                    k_max: k_routes,
                    ..RouteSettings::default()
                },
                single_route,
            };
            let est = od_estimate::initial_demand(&network, &samples, &settings)?;
            log::info!(
                "{} routes, incidence rank {}",
                est.routes.route_count(),
                est.incidence_rank
            );
            out.emit(&io::write_demand(&network, &est.demand))
        }
        Command::AdjustOd {
            net,
            obs,
            g0,
            f_coeffs,
            gamma1,
            gamma2,
            rho,
            t,
            eps1,
            eps2,
            max_outer,
            demand_out,
            tol,
            max_iter,
            out,
        } => {
            let network = load_network(&net, None)?;
            let table = load_flows(&obs, &network)?;
            let k = table.flows.len() as f64;
            let x_obs: Vec<f64> = (0..network.link_count())
                .map(|a| table.flows.iter().map(|f| f.as_slice()[a]).sum::<f64>() / k)
                .collect();
            let g0 = load_demand(&g0, &network)?;
            let f = load_latency(Some(&f_coeffs))?;
            let settings = AdjustSettings {
                gamma1,
                gamma2,
                rho,
                t,
                eps1,
                eps2,
                max_outer_iterations: max_outer,
                inner: SolverSettings::new(max_iter, tol, StepRule::Conjugate),
            };
            let (g, trace) = od_adjust::adjust_demand(&network, &f, &x_obs, &g0, &settings)?;
            if let Some(p) = demand_out {
                io::emit_report(&io::write_demand(&network, &g), Some(&p))?;
            }
            match out.format(Format::Csv) {
                Format::Csv => out.emit(&report::adjust_trace_csv(&trace)),
                Format::Json => out.emit(&io::to_json(&trace.rows)?),
            }
        }
        Command::Sensitivity {
            net,
            trips,
            f_coeffs,
            delta_frac,
            top_k,
            solver,
            out,
        } => {
            let network = load_network(&net, None)?;
            let demand = load_demand(&trips, &network)?;
            let f = load_latency(Some(&f_coeffs))?;
            let pert = Perturbations::from_fraction(&network, delta_frac)?;
            let rep = sensitivity::sensitivity_report(&network, &demand, &f, pert, &solver.settings()?)?;
            for by in [RankBy::FreeFlow, RankBy::Capacity] {
                let ids: Vec<String> = sensitivity::rank_links(&rep, by, top_k).iter().map(|i| i.to_string()).collect();
                let name = if by == RankBy::FreeFlow { "freeflow" } else { "capacity" };
                eprintln!("top {top_k} by {name}: {}", ids.join(","));
            }
            out.emit(&report::sensitivity_report_text(&rep, out.format(Format::Csv))?)
        }
        Command::Meta {
            net,
            flows,
            f_coeffs,
            zones,
            out,
        } => {
            let network = load_network(&net, zones.as_deref())?;
            let x = load_flows(&[flows], &network)?.flows.swap_remove(0).into_vec();
            let f = load_latency(Some(&f_coeffs))?;
            let cm = sensitivity::congestion_metric(&network, &x, &f)?;
            let ext = sensitivity::flow_extremes(&x)?;
            let zc = if zones.is_some() {
                Some(sensitivity::zone_costs(&network, &x, &f)?)
            } else {
                None
            };
            let r = report::MetaReport::new(&x, &cm, &ext, zc.as_ref());
            out.emit(&r.render(out.format(Format::Json))?)
        }
        Command::IngestSpeeds {
            csv,
            net,
            windows,
            group_by,
            out,
        } => {
            let network = load_network(&net, None)?;
            let spec: io::WindowSpec = windows.parse()?;
            let records = io::read_speed_records(&csv).with_context(|| format!("reading {}", csv.display()))?;
            let obs = io::aggregate_observations(&network, &records, &spec, group_by)?;
            for (k, (label, congested)) in obs.labels.iter().zip(&obs.congested).enumerate() {
                let col = if obs.len() == 1 { "flow".to_string() } else { format!("obs_{}", k + 1) };
                if congested.is_empty() {
                    eprintln!("{col} = {label}");
                } else {
                    let ids: Vec<String> = congested.iter().map(|i| i.to_string()).collect();
                    eprintln!("{col} = {label} (congested branch on links {})", ids.join(","));
                }
            }
            io::emit_report(&io::write_flow_table(&obs.flows), Some(&out))?;
            Ok(())
        }
    }
}

fn solve(a: EquilibriumArgs, social: bool) -> anyhow::Result<()> {
    let network = load_network(&a.net, None)?;
    let demand = load_demand(&a.trips, &network)?;
    let f = load_latency(a.f_coeffs.as_deref())?;
    let settings = a.solver.settings()?;
    let r = if social {
        equilibrium::solve_so(&network, &demand, &f, &settings)?
    } else {
        equilibrium::solve_ue(&network, &demand, &f, &settings)?
    };
    log::info!("{} iterations, relative gap {:e}", r.iterations, r.final_rel_gap);
    a.out.emit(&report::equilibrium_report(&r, a.out.format(Format::Json))?)
}

/// Value of `--config` if present, and the index of the subcommand name.
fn scan_args(args: &[String], subcommands: &[String]) -> (Option<PathBuf>, Option<usize>) {
    let mut config = None;
    let mut sub = None;
    let mut i = 1;
    while i < args.len() {
        let a = &args[i];
        if let Some(v) = a.strip_prefix("--config=") {
            config = Some(PathBuf::from(v));
        } else if a == "--config" {
            config = args.get(i + 1).map(PathBuf::from);
            i += 1;
        } else if sub.is_none() && subcommands.iter().any(|s| s == a) {
            sub = Some(i);
        }
        i += 1;
    }
    (config, sub)
}

/// Inserts `--key value` for config entries the subcommand accepts and the
/// command line does not already set.
fn apply_config(mut args: Vec<String>) -> anyhow::Result<Vec<String>> {
    let mut cmd = Cli::command();
    cmd.build();
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    let (config, sub) = scan_args(&args, &names);
    let (Some(path), Some(sub)) = (config, sub) else {
        return Ok(args);
    };
    let cfg = RunConfig::load(&path).with_context(|| format!("reading config {}", path.display()))?;
    let subcmd = cmd.find_subcommand(&args[sub]).expect("known subcommand");
    let mut extra = Vec::new();
    for (key, value) in cfg.iter() {
        let Some(arg) = subcmd.get_arguments().find(|a| a.get_long() == Some(key)) else {
            log::warn!("config key '{key}' not used by {}", args[sub]);
            continue;
        };
        let flag = format!("--{key}");
        let given = args.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}=")));
        if given || key == "config" {
            continue;
        }
        match arg.get_action() {
            ArgAction::SetTrue => {
                let on: bool = value.parse().map_err(|_| poa_core::Error::Config {
                    key: key.to_string(),
                    message: format!("expected true or false, got '{value}'"),
                })?;
                if on {
                    extra.push(flag);
                }
            }
            _ => {
                extra.push(flag);
                if arg.get_num_args().is_some_and(|n| n.max_values() > 1) {
                    extra.extend(value.split_whitespace().map(str::to_string));
                } else {
                    extra.push(value.to_string());
                }
            }
        }
    }
    let tail = args.split_off(sub + 1);
    args.extend(extra);
    args.extend(tail);
    Ok(args)
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<poa_core::Error>()) {
        Some(err) => match err.class() {
            ErrorClass::Input => 2,
            ErrorClass::NonConvergence => 3,
            ErrorClass::Infeasibility => 4,
        },
        None => 2,
    }
}

fn main() -> ExitCode {
    let raw: Vec<String> = std::env::args().collect();
    let level = raw
        .iter()
        .position(|a| a == "--log")
        .and_then(|i| raw.get(i + 1).cloned())
        .or_else(|| raw.iter().find_map(|a| a.strip_prefix("--log=").map(str::to_string)))
        .unwrap_or_else(|| "warn".into());
    env_logger::Builder::new().parse_filters(&level).parse_default_env().init();

    let args = match apply_config(raw) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(exit_code(&e));
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
