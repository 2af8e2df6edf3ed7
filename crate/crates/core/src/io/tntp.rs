//! TNTP network and trip-table files.
//!
//! Network files start with `<KEY> value` metadata lines closed by
//! `<END OF METADATA>`, followed by one link per line: init node, term
//! node, capacity, length, free-flow time, B, power, speed limit, toll,
//! link type, each row ending in `;`. Lines starting with `~` are comments.
//! Trip tables list `Origin o` blocks of `d : demand;` entries.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::{build_network, DemandVector, LinkSpec, Network};
use crate::scalar::Scalar;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TntpMetadata {
    pub zones: Option<usize>,
    pub nodes: Option<usize>,
    pub links: Option<usize>,
    pub first_thru_node: Option<usize>,
    /// Every `<KEY> value` pair in file order, including the above.
    pub entries: Vec<(String, String)>,
}

/// One link row. Only capacity and free-flow time feed the model; the other
/// columns are kept for round-tripping.
#[derive(Clone, Debug, PartialEq)]
pub struct TntpLink<T> {
    pub init_node: usize,
    pub term_node: usize,
    pub capacity: T,
    pub length: T,
    pub free_flow_time: T,
    pub b: T,
    pub power: T,
    pub speed_limit: T,
    pub toll: T,
    pub link_type: i64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TntpNetwork<T> {
    pub metadata: TntpMetadata,
    pub links: Vec<TntpLink<T>>,
}

impl<T: Scalar> TntpNetwork<T> {
    pub fn link_specs(&self) -> Vec<LinkSpec<T>> {
        self.links
            .iter()
            .map(|l| LinkSpec::new(l.init_node, l.term_node, l.free_flow_time, l.capacity))
            .collect()
    }

    pub fn node_count(&self) -> usize {
        let mut nodes: Vec<usize> = self.links.iter().flat_map(|l| [l.init_node, l.term_node]).collect();
        nodes.sort_unstable();
        nodes.dedup();
        nodes.len()
    }

    pub fn zone_count(&self) -> usize {
        self.metadata.zones.unwrap_or(0)
    }
}

/// Splits metadata from the body; returns the metadata and the index of the
/// first body line.
fn parse_metadata(lines: &[&str], path: &Path) -> Result<(TntpMetadata, usize)> {
    let mut meta = TntpMetadata::default();
    for (i, raw) in lines.iter().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('~') {
            continue;
        }
        if !line.starts_with('<') {
            return Err(Error::MalformedHeader {
                path: path.to_path_buf(),
                message: format!("line {}: expected <KEY> value, found '{line}'", i + 1),
            });
        }
        let Some(close) = line.find('>') else {
            return Err(Error::MalformedHeader {
                path: path.to_path_buf(),
                message: format!("line {}: unterminated tag", i + 1),
            });
        };
        let key = line[1..close].trim().to_ascii_uppercase();
        let value = line[close + 1..].trim().to_string();
        if key == "END OF METADATA" {
            return Ok((meta, i + 1));
        }
        let count = |v: &str| -> Result<usize> {
            v.parse().map_err(|_| Error::MalformedHeader {
                path: path.to_path_buf(),
                message: format!("line {}: <{key}> expects an integer, got '{v}'", i + 1),
            })
        };
        match key.as_str() {
            "NUMBER OF ZONES" => meta.zones = Some(count(&value)?),
            "NUMBER OF NODES" => meta.nodes = Some(count(&value)?),
            "NUMBER OF LINKS" => meta.links = Some(count(&value)?),
            "FIRST THRU NODE" => meta.first_thru_node = Some(count(&value)?),
            _ => {}
        }
        meta.entries.push((key, value));
    }
    Err(Error::MalformedHeader {
        path: path.to_path_buf(),
        message: "missing <END OF METADATA>".into(),
    })
}

fn field<T: Scalar>(tokens: &[&str], col: usize, line: usize, name: &str) -> Result<T> {
    let tok = tokens.get(col).ok_or_else(|| Error::BadRow {
        line,
        column: col + 1,
        message: format!("missing {name}"),
    })?;
    let v: f64 = tok.parse().map_err(|_| Error::BadRow {
        line,
        column: col + 1,
        message: format!("{name} '{tok}' is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::BadRow {
            line,
            column: col + 1,
            message: format!("{name} is not finite"),
        });
    }
    Ok(T::lit(v))
}

fn node_field(tokens: &[&str], col: usize, line: usize, name: &str) -> Result<usize> {
    let tok = tokens.get(col).ok_or_else(|| Error::BadRow {
        line,
        column: col + 1,
        message: format!("missing {name}"),
    })?;
    tok.parse().map_err(|_| Error::BadRow {
        line,
        column: col + 1,
        message: format!("{name} '{tok}' is not a node number"),
    })
}

pub fn parse_tntp_network_str<T: Scalar>(text: &str, path: &Path) -> Result<TntpNetwork<T>> {
    let lines: Vec<&str> = text.lines().collect();
    let (metadata, body) = parse_metadata(&lines, path)?;
    let mut links = Vec::new();
    for (i, raw) in lines.iter().enumerate().skip(body) {
        let line_no = i + 1;
        let content = raw.split('~').next().unwrap_or("").trim();
        let content = content.trim_end_matches(';').trim();
        if content.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = content.split_whitespace().filter(|t| *t != ";").collect();
        if tokens.len() < 5 {
            return Err(Error::BadRow {
                line: line_no,
                column: tokens.len() + 1,
                message: "expected at least init node, term node, capacity, length and free-flow time".into(),
            });
        }
        let opt = |col: usize, name: &str| -> Result<T> {
            if col < tokens.len() {
                field(&tokens, col, line_no, name)
            } else {
                Ok(T::zero())
            }
        };
        let link = TntpLink {
            init_node: node_field(&tokens, 0, line_no, "init node")?,
            term_node: node_field(&tokens, 1, line_no, "term node")?,
            capacity: field(&tokens, 2, line_no, "capacity")?,
            length: field(&tokens, 3, line_no, "length")?,
            free_flow_time: field(&tokens, 4, line_no, "free-flow time")?,
            b: opt(5, "B")?,
            power: opt(6, "power")?,
            speed_limit: opt(7, "speed limit")?,
            toll: opt(8, "toll")?,
            link_type: if tokens.len() > 9 {
                tokens[9].parse().map_err(|_| Error::BadRow {
                    line: line_no,
                    column: 10,
                    message: format!("link type '{}' is not an integer", tokens[9]),
                })?
            } else {
                0
            },
        };
        if !(link.capacity > T::zero()) {
            return Err(Error::BadRow {
                line: line_no,
                column: 3,
                message: format!("capacity must be positive, got {}", link.capacity),
            });
        }
        if !(link.free_flow_time > T::zero()) {
            return Err(Error::BadRow {
                line: line_no,
                column: 5,
                message: format!("free-flow time must be positive, got {}", link.free_flow_time),
            });
        }
        links.push(link);
    }
    if let Some(n) = metadata.links {
        if n != links.len() {
            return Err(Error::MalformedHeader {
                path: path.to_path_buf(),
                message: format!("header declares {n} links, file has {}", links.len()),
            });
        }
    }
    let net = TntpNetwork { metadata, links };
    if let Some(n) = net.metadata.nodes {
        if n != net.node_count() {
            log::warn!("{}: header declares {n} nodes, links touch {}", path.display(), net.node_count());
        }
    }
    Ok(net)
}

pub fn parse_tntp_network<T: Scalar>(path: &Path) -> Result<TntpNetwork<T>> {
    let text = std::fs::read_to_string(path)?;
    parse_tntp_network_str(&text, path)
}

/// Writes a network in the same layout; numbers use the shortest exact
/// representation so parsing the output reproduces every value.
pub fn write_tntp_network<T: Scalar>(net: &TntpNetwork<T>) -> String {
    let mut out = String::new();
    let mut seen = Vec::new();
    let mut put = |out: &mut String, key: &str, v: Option<usize>| {
        if let Some(v) = v {
            let _ = writeln!(out, "<{key}> {v}");
            seen.push(key.to_string());
        }
    };
    put(&mut out, "NUMBER OF ZONES", net.metadata.zones);
    put(&mut out, "NUMBER OF NODES", net.metadata.nodes.or(Some(net.node_count())));
    put(&mut out, "FIRST THRU NODE", net.metadata.first_thru_node);
    put(&mut out, "NUMBER OF LINKS", Some(net.links.len()));
    for (k, v) in &net.metadata.entries {
        if !seen.contains(k) {
            let _ = writeln!(out, "<{k}> {v}");
        }
    }
    out.push_str("<END OF METADATA>\n\n\n");
    out.push_str("~\tinit_node\tterm_node\tcapacity\tlength\tfree_flow_time\tb\tpower\tspeed\ttoll\tlink_type\t;\n");
    for l in &net.links {
        let _ = writeln!(
            out,
            "\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t;",
            l.init_node,
            l.term_node,
            l.capacity,
            l.length,
            l.free_flow_time,
            l.b,
            l.power,
            l.speed_limit,
            l.toll,
            l.link_type
        );
    }
    out
}

/// Trip table keyed by `(origin zone, destination zone)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TripTable<T> {
    pub zones: Option<usize>,
    pub entries: BTreeMap<(usize, usize), T>,
}

pub fn parse_tntp_trips_str<T: Scalar>(text: &str, path: &Path) -> Result<TripTable<T>> {
    let lines: Vec<&str> = text.lines().collect();
    let has_meta = lines.iter().any(|l| l.trim().to_ascii_uppercase().starts_with("<END OF METADATA>"));
    let (zones, body) = if has_meta {
        let (meta, body) = parse_metadata(&lines, path)?;
        (meta.zones, body)
    } else {
        (None, 0)
    };
    let mut table = TripTable {
        zones,
        entries: BTreeMap::new(),
    };
    let check_zone = |z: usize, line: usize| -> Result<()> {
        if z == 0 || zones.is_some_and(|n| z > n) {
            return Err(Error::UnknownZone { line, zone: z });
        }
        Ok(())
    };
    let mut origin: Option<usize> = None;
    for (i, raw) in lines.iter().enumerate().skip(body) {
        let line_no = i + 1;
        let content = raw.split('~').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix("Origin").or_else(|| content.strip_prefix("ORIGIN")) {
            let o: usize = rest.trim().parse().map_err(|_| Error::MalformedBlock {
                line: line_no,
                message: format!("bad origin '{}'", rest.trim()),
            })?;
            check_zone(o, line_no)?;
            origin = Some(o);
            continue;
        }
        let Some(o) = origin else {
            return Err(Error::MalformedBlock {
                line: line_no,
                message: "destination entries before any Origin line".into(),
            });
        };
        for entry in content.split(';').map(str::trim).filter(|e| !e.is_empty()) {
            let (d, v) = entry.split_once(':').ok_or_else(|| Error::MalformedBlock {
                line: line_no,
                message: format!("expected 'destination : demand', found '{entry}'"),
            })?;
            let d: usize = d.trim().parse().map_err(|_| Error::MalformedBlock {
                line: line_no,
                message: format!("bad destination '{}'", d.trim()),
            })?;
            let v: f64 = v.trim().parse().map_err(|_| Error::MalformedBlock {
                line: line_no,
                message: format!("bad demand '{}'", v.trim()),
            })?;
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::MalformedBlock {
                    line: line_no,
                    message: format!("demand must be finite and nonnegative, got {v}"),
                });
            }
            check_zone(d, line_no)?;
            *table.entries.entry((o, d)).or_insert_with(T::zero) += T::lit(v);
        }
    }
    Ok(table)
}

pub fn parse_tntp_trips<T: Scalar>(path: &Path) -> Result<TripTable<T>> {
    let text = std::fs::read_to_string(path)?;
    parse_tntp_trips_str(&text, path)
}

/// Builds the network with every ordered pair of distinct zones as an OD
/// pair and the matching demand (zero where the table has no entry).
/// Zones are the nodes `1..=zones`; `zone_labels` overrides the default
/// one-zone-per-centroid labelling used by zone cost reports.
pub fn assemble<T: Scalar>(
    net: &TntpNetwork<T>,
    trips: &TripTable<T>,
    zone_labels: Option<&BTreeMap<usize, String>>,
) -> Result<(Network<T>, DemandVector<T>)> {
    let zones = net
        .metadata
        .zones
        .or(trips.zones)
        .ok_or_else(|| Error::InvalidArgument("number of zones unknown".into()))?;
    if let Some(tz) = trips.zones {
        if tz != zones {
            return Err(Error::InvalidArgument(format!(
                "network has {zones} zones, trip table {tz}"
            )));
        }
    }
    let mut ods = Vec::with_capacity(zones * zones.saturating_sub(1));
    for o in 1..=zones {
        for d in 1..=zones {
            if o != d {
                ods.push((o, d));
            }
        }
    }
    for (&(o, d), &v) in &trips.entries {
        if o == d && v != T::zero() {
            log::warn!("ignoring intrazonal demand {v} at zone {o}");
        }
    }
    let default_labels: BTreeMap<usize, String> = (1..=zones).map(|z| (z, z.to_string())).collect();
    let labels = zone_labels.unwrap_or(&default_labels);
    let mut network = build_network(&net.link_specs(), &ods, Some(labels))?;
    if let Some(ft) = net.metadata.first_thru_node {
        network = network.with_first_through_node(ft);
    }
    let demand = ods
        .iter()
        .map(|od| trips.entries.get(od).copied().unwrap_or_else(T::zero))
        .collect();
    Ok((network, DemandVector::new(demand)?))
}

/// Network (and OD pairs) from a TNTP file plus an optional trip table.
pub fn load<T: Scalar>(
    net_path: &Path,
    trips_path: Option<&Path>,
    zone_labels: Option<&BTreeMap<usize, String>>,
) -> Result<(Network<T>, DemandVector<T>)> {
    let net = parse_tntp_network(net_path)?;
    let trips = match trips_path {
        Some(p) => parse_tntp_trips(p)?,
        None => TripTable {
            zones: net.metadata.zones,
            entries: BTreeMap::new(),
        },
    };
    assemble(&net, &trips, zone_labels)
}
