//! Report emission. Every float is rounded to 12 significant digits and
//! fields keep their declaration order, so identical results produce
//! identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;
use serde_json::Value;

use crate::equilibrium::EquilibriumResult;
use crate::error::{Error, Result};
use crate::od_adjust::AdjustTrace;
use crate::scalar::Scalar;
use crate::sensitivity::{FlowExtremes, SensitivityReport};

pub const SIGNIFICANT_DIGITS: usize = 12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

impl FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            _ => Err(Error::Config {
                key: "format".into(),
                message: format!("expected json or csv, got '{s}'"),
            }),
        }
    }
}

/// `v` rounded to 12 significant digits.
pub fn round_sig(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, v).parse().unwrap_or(v)
}

/// Shortest decimal text of `round_sig(v)`; `-0` prints as `0`.
pub fn fmt_sig(v: f64) -> String {
    let r = round_sig(v);
    if r == 0.0 {
        return "0".into();
    }
    format!("{r}")
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = round_sig(n.as_f64().unwrap_or(0.0));
            *v = serde_json::Number::from_f64(if x == 0.0 { 0.0 } else { x }).map_or(Value::Null, Value::Number);
        }
        Value::Array(a) => a.iter_mut().for_each(round_value),
        Value::Object(o) => o.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Pretty JSON with rounded floats and a trailing newline. Non-finite
/// values become `null`.
pub fn to_json<S: Serialize + ?Sized>(value: &S) -> Result<String> {
    let mut v = serde_json::to_value(value)?;
    round_value(&mut v);
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

/// Writes `text` to `path`, or to stdout when `path` is `None` or `-`.
pub fn emit_report(text: &str, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) if p.as_os_str() != "-" => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(p, text)?;
        }
        _ => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
        }
    }
    Ok(())
}

/// `link_id,flow`
pub fn flows_csv<T: Scalar>(flows: &[T]) -> String {
    let mut out = String::from("link_id,flow\n");
    for (a, &x) in flows.iter().enumerate() {
        let _ = writeln!(out, "{},{}", a + 1, fmt_sig(x.as_f64()));
    }
    out
}

pub fn equilibrium_report<T: Scalar>(result: &EquilibriumResult<T>, format: Format) -> Result<String> {
    match format {
        Format::Json => to_json(result),
        Format::Csv => Ok(flows_csv(result.flows.as_slice())),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinkFlowPair {
    pub link_id: usize,
    pub user: f64,
    pub social: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PoaReport {
    pub poa: f64,
    #[serde(rename = "L_user")]
    pub l_user: f64,
    #[serde(rename = "L_social")]
    pub l_social: f64,
    pub per_link_flows: Vec<LinkFlowPair>,
}

impl PoaReport {
    pub fn new<T: Scalar>(l_user: T, l_social: T, user: &[T], social: &[T]) -> Self {
        Self {
            poa: (l_user / l_social).as_f64(),
            l_user: l_user.as_f64(),
            l_social: l_social.as_f64(),
            per_link_flows: user
                .iter()
                .zip(social)
                .enumerate()
                .map(|(a, (&u, &s))| LinkFlowPair {
                    link_id: a + 1,
                    user: u.as_f64(),
                    social: s.as_f64(),
                })
                .collect(),
        }
    }

    pub fn render(&self, format: Format) -> Result<String> {
        match format {
            Format::Json => to_json(self),
            Format::Csv => {
                let mut out = String::from("link_id,user,social\n");
                for r in &self.per_link_flows {
                    let _ = writeln!(out, "{},{},{}", r.link_id, fmt_sig(r.user), fmt_sig(r.social));
                }
                Ok(out)
            }
        }
    }
}

/// `link_id,dV_dt0,dV_dm,deltaV_t0,deltaV_m`, or JSON with the
/// perturbation magnitudes and the same rows.
pub fn sensitivity_report_text<T: Scalar>(report: &SensitivityReport<T>, format: Format) -> Result<String> {
    match format {
        Format::Csv => {
            let mut out = String::from("link_id,dV_dt0,dV_dm,deltaV_t0,deltaV_m\n");
            for r in &report.rows {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    r.link_id,
                    fmt_sig(r.dv_dt0.as_f64()),
                    fmt_sig(r.dv_dm.as_f64()),
                    fmt_sig(r.delta_v_t0.as_f64()),
                    fmt_sig(r.delta_v_m.as_f64())
                );
            }
            Ok(out)
        }
        Format::Json => {
            #[derive(Serialize)]
            struct Doc<'a, T> {
                delta_t0: f64,
                delta_m: f64,
                base_value: f64,
                links: &'a [crate::sensitivity::SensitivityRow<T>],
            }
            to_json(&Doc {
                delta_t0: report.delta_t0.as_f64(),
                delta_m: report.delta_m.as_f64(),
                base_value: report.base_value.as_f64(),
                links: &report.rows,
            })
        }
    }
}

/// `iteration,F,theta,demand_shift`
pub fn adjust_trace_csv<T: Scalar>(trace: &AdjustTrace<T>) -> String {
    let mut out = String::from("iteration,F,theta,demand_shift\n");
    for r in &trace.rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.iteration,
            fmt_sig(r.objective),
            fmt_sig(r.theta),
            fmt_sig(r.demand_shift)
        );
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetaLink {
    pub link_id: usize,
    pub flow: f64,
    pub congestion_metric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetaReport {
    pub flow_max: f64,
    pub flow_max_link: usize,
    pub flow_min: f64,
    pub flow_min_link: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zone_costs: Option<BTreeMap<String, f64>>,
    pub links: Vec<MetaLink>,
}

impl MetaReport {
    pub fn new<T: Scalar>(
        flows: &[T],
        cm: &[T],
        extremes: &FlowExtremes<T>,
        zone_costs: Option<&BTreeMap<String, T>>,
    ) -> Self {
        Self {
            flow_max: extremes.max.as_f64(),
            flow_max_link: extremes.argmax,
            flow_min: extremes.min.as_f64(),
            flow_min_link: extremes.argmin,
            zone_costs: zone_costs.map(|z| z.iter().map(|(k, v)| (k.clone(), v.as_f64())).collect()),
            links: flows
                .iter()
                .zip(cm)
                .enumerate()
                .map(|(a, (&x, &c))| MetaLink {
                    link_id: a + 1,
                    flow: x.as_f64(),
                    congestion_metric: c.as_f64(),
                })
                .collect(),
        }
    }

    pub fn render(&self, format: Format) -> Result<String> {
        match format {
            Format::Json => to_json(self),
            Format::Csv => {
                let mut out = String::from("link_id,flow,congestion_metric\n");
                for l in &self.links {
                    let _ = writeln!(out, "{},{},{}", l.link_id, fmt_sig(l.flow), fmt_sig(l.congestion_metric));
                }
                Ok(out)
            }
        }
    }
}
