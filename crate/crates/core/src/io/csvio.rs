//! Flow, demand, zone and latency files.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::latency::LatencyFunction;
use crate::net::{DemandVector, FlowVector, Network};
use crate::scalar::Scalar;

use super::report::fmt_sig;
use super::tntp;

/// Flow observations read from one file: a label and a vector per column.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowTable<T> {
    pub labels: Vec<String>,
    pub flows: Vec<FlowVector<T>>,
}

fn parse_number(tok: &str, line: usize, column: usize, what: &str) -> Result<f64> {
    let v: f64 = tok.trim().parse().map_err(|_| Error::BadRow {
        line,
        column,
        message: format!("{what} '{}' is not a number", tok.trim()),
    })?;
    if !v.is_finite() {
        return Err(Error::BadRow {
            line,
            column,
            message: format!("{what} is not finite"),
        });
    }
    Ok(v)
}

/// Reads `link_id,flow` or `link_id,<obs>,<obs>,...` with 1-based link ids.
/// Every link of the network must appear exactly once.
pub fn read_flow_table<T: Scalar>(path: &Path, link_count: usize) -> Result<FlowTable<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 || !headers[0].eq_ignore_ascii_case("link_id") {
        return Err(Error::MalformedHeader {
            path: path.to_path_buf(),
            message: "expected header 'link_id,flow' or 'link_id,obs_1,...'".into(),
        });
    }
    let labels: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut cols = vec![vec![f64::NAN; link_count]; labels.len()];
    let mut seen = vec![false; link_count];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(i + 2, |p| p.line() as usize);
        if rec.len() != headers.len() {
            return Err(Error::BadRow {
                line,
                column: rec.len().min(headers.len()) + 1,
                message: format!("expected {} fields, found {}", headers.len(), rec.len()),
            });
        }
        let id: usize = rec[0].parse().map_err(|_| Error::BadRow {
            line,
            column: 1,
            message: format!("link id '{}' is not an integer", &rec[0]),
        })?;
        if id == 0 || id > link_count {
            return Err(Error::BadRow {
                line,
                column: 1,
                message: format!("link id {id} outside 1..={link_count}"),
            });
        }
        if std::mem::replace(&mut seen[id - 1], true) {
            return Err(Error::BadRow {
                line,
                column: 1,
                message: format!("link {id} listed twice"),
            });
        }
        for (j, col) in cols.iter_mut().enumerate() {
            let v = parse_number(&rec[j + 1], line, j + 2, "flow")?;
            if v < 0.0 {
                return Err(Error::BadRow {
                    line,
                    column: j + 2,
                    message: format!("negative flow {v}"),
                });
            }
            col[id - 1] = v;
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::MalformedHeader {
            path: path.to_path_buf(),
            message: format!("no row for link {}", missing + 1),
        });
    }
    let flows = cols
        .into_iter()
        .map(|c| FlowVector::new(c.into_iter().map(T::lit).collect()))
        .collect::<Result<Vec<_>>>()?;
    Ok(FlowTable { labels, flows })
}

/// Concatenates the columns of several flow files.
pub fn read_flow_files<T: Scalar>(paths: &[impl AsRef<Path>], link_count: usize) -> Result<FlowTable<T>> {
    let mut out = FlowTable {
        labels: Vec::new(),
        flows: Vec::new(),
    };
    for p in paths {
        let t = read_flow_table(p.as_ref(), link_count)?;
        out.labels.extend(t.labels);
        out.flows.extend(t.flows);
    }
    Ok(out)
}

/// Wide CSV with columns `obs_1..obs_K` (or `flow` for a single vector).
pub fn write_flow_table<T: Scalar>(flows: &[FlowVector<T>]) -> String {
    let mut out = String::from("link_id");
    if flows.len() == 1 {
        out.push_str(",flow");
    } else {
        for k in 1..=flows.len() {
            out.push_str(&format!(",obs_{k}"));
        }
    }
    out.push('\n');
    let n = flows.first().map_or(0, |f| f.len());
    for a in 0..n {
        out.push_str(&(a + 1).to_string());
        for f in flows {
            out.push(',');
            out.push_str(&fmt_sig(f.as_slice()[a].as_f64()));
        }
        out.push('\n');
    }
    out
}

fn looks_like_tntp_trips(text: &str) -> bool {
    text.lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('~'))
        .is_none_or(|l| l.starts_with('<') || l.starts_with("Origin") || l.starts_with("ORIGIN"))
}

/// Demand for the network's OD pairs from either a TNTP trip table or a CSV
/// with `origin,destination,demand` rows (node labels). Pairs not listed
/// get zero; listed pairs the network does not know are an error.
pub fn read_demand<T: Scalar>(path: &Path, network: &Network<T>) -> Result<DemandVector<T>> {
    let text = std::fs::read_to_string(path)?;
    let mut values = vec![T::zero(); network.od_count()];
    let mut assign = |o: usize, d: usize, v: T, line: usize| -> Result<()> {
        if o == d {
            if v != T::zero() {
                log::warn!("ignoring intrazonal demand {v} at zone {o}");
            }
            return Ok(());
        }
        let idx = network.od_index(o, d).ok_or(Error::UnknownZone {
            line,
            zone: if network.node_index(o).is_none() { o } else { d },
        })?;
        values[idx] += v;
        Ok(())
    };
    if looks_like_tntp_trips(&text) {
        let table: tntp::TripTable<T> = tntp::parse_tntp_trips_str(&text, path)?;
        for (&(o, d), &v) in &table.entries {
            assign(o, d, v, 0)?;
        }
    } else {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        #[derive(Deserialize)]
        struct Row {
            origin: usize,
            destination: usize,
            demand: f64,
        }
        for (i, row) in rdr.deserialize::<Row>().enumerate() {
            let row = row?;
            if !(row.demand >= 0.0 && row.demand.is_finite()) {
                return Err(Error::BadRow {
                    line: i + 2,
                    column: 3,
                    message: format!("demand must be finite and nonnegative, got {}", row.demand),
                });
            }
            assign(row.origin, row.destination, T::lit(row.demand), i + 2)?;
        }
    }
    DemandVector::new(values)
}

/// `origin,destination,demand` over every OD pair of the network.
pub fn write_demand<T: Scalar>(network: &Network<T>, demand: &DemandVector<T>) -> String {
    let mut out = String::from("origin,destination,demand\n");
    for (i, &v) in demand.as_slice().iter().enumerate() {
        let (o, d) = network.od_labels(i);
        out.push_str(&format!("{o},{d},{}\n", fmt_sig(v.as_f64())));
    }
    out
}

/// `node,zone` rows.
pub fn read_zones(path: &Path) -> Result<BTreeMap<usize, String>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)?;
    #[derive(Deserialize)]
    struct Row {
        node: usize,
        zone: String,
    }
    let mut out = BTreeMap::new();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let row = row?;
        if out.insert(row.node, row.zone).is_some() {
            return Err(Error::BadRow {
                line: i + 2,
                column: 1,
                message: format!("node {} listed twice", row.node),
            });
        }
    }
    Ok(out)
}

/// Latency function from JSON: the full `{degree, offset_c, coefficients}`
/// form, a bare `{coefficients: [...]}` or `{beta: [...]}` object (as
/// written by cost estimation), or a plain array.
pub fn read_latency<T: Scalar>(path: &Path) -> Result<LatencyFunction<T>> {
    let text = std::fs::read_to_string(path)?;
    parse_latency(&text)
}

pub fn parse_latency<T: Scalar>(text: &str) -> Result<LatencyFunction<T>> {
    let v: serde_json::Value = serde_json::from_str(text)?;
    if v.get("degree").is_some() {
        return Ok(serde_json::from_value(v)?);
    }
    let coeffs = v
        .get("coefficients")
        .or_else(|| v.get("beta"))
        .unwrap_or(&v);
    let coeffs: Vec<f64> = serde_json::from_value(coeffs.clone())?;
    let c = v.get("offset_c").or_else(|| v.get("c")).and_then(|c| c.as_f64()).unwrap_or(0.0);
    LatencyFunction::with_offset(coeffs.into_iter().map(T::lit).collect(), T::lit(c))
}
