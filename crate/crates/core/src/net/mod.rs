//! Road network model: links, OD pairs, demand and flow vectors.
//!
//! Nodes carry arbitrary integer labels (TNTP files number them from 1);
//! internally they are re-indexed densely in ascending label order. Link
//! order is fixed at construction and indexes every per-link vector in the
//! crate.

mod assign;
mod paths;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use assign::{assign_all_or_nothing, fastest_routes, node_imbalance};
pub use paths::{enumerate_routes, fastest_route, route_set, RouteSettings, ShortestPathTree};

/// Directed road segment. `tail` and `head` are dense node indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Link<T> {
    pub id: usize,
    pub tail: usize,
    pub head: usize,
    /// Free-flow travel time, hours.
    pub free_flow_time: T,
    /// Flow capacity, vehicles/hour. Soft: flows may exceed it.
    pub capacity: T,
}

/// Link description in terms of node labels, as read from input files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec<T> {
    pub tail: usize,
    pub head: usize,
    pub free_flow_time: T,
    pub capacity: T,
}

impl<T> LinkSpec<T> {
    pub fn new(tail: usize, head: usize, free_flow_time: T, capacity: T) -> Self {
        Self {
            tail,
            head,
            free_flow_time,
            capacity,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OdPair {
    pub origin: usize,
    pub destination: usize,
}

#[derive(Clone, Debug)]
pub struct Network<T> {
    node_labels: Vec<usize>,
    node_index: BTreeMap<usize, usize>,
    links: Vec<Link<T>>,
    od_pairs: Vec<OdPair>,
    zone_of: Option<Vec<Option<String>>>,
    through: Vec<bool>,
    out_links: Vec<Vec<usize>>,
    in_links: Vec<Vec<usize>>,
    /// OD indices grouped by origin, origins ascending.
    by_origin: Vec<(usize, Vec<usize>)>,
}

/// Validates the input and builds an immutable network.
///
/// `od_pairs` and `zone_map` refer to node labels.
pub fn build_network<T: Scalar>(
    links: &[LinkSpec<T>],
    od_pairs: &[(usize, usize)],
    zone_map: Option<&BTreeMap<usize, String>>,
) -> Result<Network<T>> {
    let mut labels = BTreeSet::new();
    for (id, l) in links.iter().enumerate() {
        if !(l.free_flow_time > T::zero()) || !l.free_flow_time.is_finite() {
            return Err(Error::InvalidLink {
                link: id,
                reason: format!("free-flow time must be positive, got {}", l.free_flow_time),
            });
        }
        if !(l.capacity > T::zero()) || l.capacity.is_nan() {
            return Err(Error::InvalidLink {
                link: id,
                reason: format!("capacity must be positive, got {}", l.capacity),
            });
        }
        if l.tail == l.head {
            return Err(Error::InvalidLink {
                link: id,
                reason: format!("self-loop at node {}", l.tail),
            });
        }
        labels.insert(l.tail);
        labels.insert(l.head);
    }
    let node_labels: Vec<usize> = labels.into_iter().collect();
    let node_index: BTreeMap<usize, usize> =
        node_labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let n = node_labels.len();

    let links: Vec<Link<T>> = links
        .iter()
        .enumerate()
        .map(|(id, l)| Link {
            id,
            tail: node_index[&l.tail],
            head: node_index[&l.head],
            free_flow_time: l.free_flow_time,
            capacity: l.capacity,
        })
        .collect();

    let mut od = Vec::with_capacity(od_pairs.len());
    for &(o, d) in od_pairs {
        let origin = *node_index.get(&o).ok_or(Error::UnknownNode { node: o })?;
        let destination = *node_index.get(&d).ok_or(Error::UnknownNode { node: d })?;
        if origin == destination {
            return Err(Error::InvalidArgument(format!(
                "OD pair ({o}, {d}) has identical endpoints"
            )));
        }
        od.push(OdPair {
            origin,
            destination,
        });
    }

    let mut out_links = vec![Vec::new(); n];
    let mut in_links = vec![Vec::new(); n];
    for l in &links {
        out_links[l.tail].push(l.id);
        in_links[l.head].push(l.id);
    }

    let zone_of = zone_map.map(|zm| {
        node_labels
            .iter()
            .map(|label| zm.get(label).cloned())
            .collect()
    });

    let mut grouped: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, p) in od.iter().enumerate() {
        grouped.entry(p.origin).or_default().push(i);
    }

    let net = Network {
        node_labels,
        node_index,
        links,
        od_pairs: od,
        zone_of,
        through: vec![true; n],
        out_links,
        in_links,
        by_origin: grouped.into_iter().collect(),
    };
    net.check_strongly_connected()?;
    Ok(net)
}

impl<T: Scalar> Network<T> {
    /// Marks nodes with labels below `first_through` as zone centroids that
    /// paths may start or end at but never pass through (TNTP convention).
    pub fn with_first_through_node(mut self, first_through: usize) -> Self {
        for (i, &label) in self.node_labels.iter().enumerate() {
            self.through[i] = label >= first_through;
        }
        self
    }

    /// Same topology with per-link parameters replaced.
    pub fn with_link_parameters(&self, free_flow_time: &[T], capacity: &[T]) -> Result<Self> {
        self.check_len("free-flow times", free_flow_time.len())?;
        self.check_len("capacities", capacity.len())?;
        let mut net = self.clone();
        for (l, (&t0, &m)) in net.links.iter_mut().zip(free_flow_time.iter().zip(capacity)) {
            if !(t0 > T::zero()) {
                return Err(Error::InvalidLink {
                    link: l.id,
                    reason: format!("free-flow time must be positive, got {t0}"),
                });
            }
            if !(m > T::zero()) {
                return Err(Error::InvalidLink {
                    link: l.id,
                    reason: format!("capacity must be positive, got {m}"),
                });
            }
            l.free_flow_time = t0;
            l.capacity = m;
        }
        Ok(net)
    }

    /// Same network with a different OD pair list (node labels).
    pub fn with_od_pairs(&self, od_pairs: &[(usize, usize)]) -> Result<Self> {
        let specs = self.link_specs();
        let zones = self.zone_map();
        let through = self.through.clone();
        let mut net = build_network(&specs, od_pairs, zones.as_ref())?;
        net.through = through;
        Ok(net)
    }

    fn check_strongly_connected(&self) -> Result<()> {
        let n = self.node_count();
        if n == 0 {
            return Ok(());
        }
        let reach = |adj: &Vec<Vec<usize>>, forward: bool| {
            let mut seen = vec![false; n];
            let mut queue = VecDeque::from([0usize]);
            seen[0] = true;
            while let Some(v) = queue.pop_front() {
                for &a in &adj[v] {
                    let w = if forward { self.links[a].head } else { self.links[a].tail };
                    if !seen[w] {
                        seen[w] = true;
                        queue.push_back(w);
                    }
                }
            }
            seen
        };
        if let Some(v) = reach(&self.out_links, true).iter().position(|s| !s) {
            return Err(Error::NotStronglyConnected {
                from: self.node_labels[0],
                to: self.node_labels[v],
            });
        }
        if let Some(v) = reach(&self.in_links, false).iter().position(|s| !s) {
            return Err(Error::NotStronglyConnected {
                from: self.node_labels[v],
                to: self.node_labels[0],
            });
        }
        Ok(())
    }

    pub(crate) fn check_len(&self, what: &'static str, found: usize) -> Result<()> {
        if found != self.link_count() {
            return Err(Error::DimensionMismatch {
                what,
                expected: self.link_count(),
                found,
            });
        }
        Ok(())
    }

    pub(crate) fn check_od_len(&self, what: &'static str, found: usize) -> Result<()> {
        if found != self.od_count() {
            return Err(Error::DimensionMismatch {
                what,
                expected: self.od_count(),
                found,
            });
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.node_labels.len()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn od_count(&self) -> usize {
        self.od_pairs.len()
    }

    pub fn links(&self) -> &[Link<T>] {
        &self.links
    }

    pub fn link(&self, id: usize) -> &Link<T> {
        &self.links[id]
    }

    pub fn od_pairs(&self) -> &[OdPair] {
        &self.od_pairs
    }

    pub fn od_pair(&self, i: usize) -> OdPair {
        self.od_pairs[i]
    }

    /// OD pair expressed in node labels.
    pub fn od_labels(&self, i: usize) -> (usize, usize) {
        let p = self.od_pairs[i];
        (self.node_labels[p.origin], self.node_labels[p.destination])
    }

    pub fn od_index(&self, origin_label: usize, destination_label: usize) -> Option<usize> {
        let o = *self.node_index.get(&origin_label)?;
        let d = *self.node_index.get(&destination_label)?;
        self.od_pairs
            .iter()
            .position(|p| p.origin == o && p.destination == d)
    }

    pub fn node_label(&self, index: usize) -> usize {
        self.node_labels[index]
    }

    pub fn node_labels(&self) -> &[usize] {
        &self.node_labels
    }

    pub fn node_index(&self, label: usize) -> Option<usize> {
        self.node_index.get(&label).copied()
    }

    pub fn out_links(&self, node: usize) -> &[usize] {
        &self.out_links[node]
    }

    pub fn in_links(&self, node: usize) -> &[usize] {
        &self.in_links[node]
    }

    /// Whether paths may traverse `node` as an intermediate node.
    pub fn is_through(&self, node: usize) -> bool {
        self.through[node]
    }

    pub(crate) fn ods_by_origin(&self) -> &[(usize, Vec<usize>)] {
        &self.by_origin
    }

    pub fn zone_of(&self, node: usize) -> Option<&str> {
        self.zone_of.as_ref()?.get(node)?.as_deref()
    }

    pub fn has_zones(&self) -> bool {
        self.zone_of.is_some()
    }

    /// Zone labels keyed by node label.
    pub fn zone_map(&self) -> Option<BTreeMap<usize, String>> {
        let zones = self.zone_of.as_ref()?;
        Some(
            zones
                .iter()
                .enumerate()
                .filter_map(|(i, z)| z.clone().map(|z| (self.node_labels[i], z)))
                .collect(),
        )
    }

    pub fn link_specs(&self) -> Vec<LinkSpec<T>> {
        self.links
            .iter()
            .map(|l| {
                LinkSpec::new(
                    self.node_labels[l.tail],
                    self.node_labels[l.head],
                    l.free_flow_time,
                    l.capacity,
                )
            })
            .collect()
    }

    pub fn free_flow_times(&self) -> Vec<T> {
        self.links.iter().map(|l| l.free_flow_time).collect()
    }

    pub fn capacities(&self) -> Vec<T> {
        self.links.iter().map(|l| l.capacity).collect()
    }
}

macro_rules! nonneg_vector {
    ($(#[$meta:meta])* $name:ident, $what:literal) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name<T>(Vec<T>);

        impl<T: Scalar> $name<T> {
            /// Fails on negative or non-finite entries.
            pub fn new(values: Vec<T>) -> Result<Self> {
                if let Some((i, v)) = values
                    .iter()
                    .enumerate()
                    .find(|(_, v)| !(**v >= T::zero()) || !v.is_finite())
                {
                    return Err(Error::InvalidArgument(format!(
                        concat!($what, " entry {} is {} (must be finite and nonnegative)"),
                        i, v
                    )));
                }
                Ok(Self(values))
            }

            pub fn zeros(n: usize) -> Self {
                Self(vec![T::zero(); n])
            }

            /// Clamps tiny negative round-off to zero.
            #[allow(dead_code)]
            pub(crate) fn from_vec_clamped(mut values: Vec<T>) -> Self {
                values.iter_mut().for_each(|v| *v = v.max(T::zero()));
                Self(values)
            }

            pub fn as_slice(&self) -> &[T] {
                &self.0
            }

            pub fn into_vec(self) -> Vec<T> {
                self.0
            }

            pub fn total(&self) -> T {
                self.0.iter().copied().sum()
            }
        }

        impl<T> Deref for $name<T> {
            type Target = [T];
            fn deref(&self) -> &[T] {
                &self.0
            }
        }
    };
}

nonneg_vector!(
    /// Per-OD demand, vehicles/hour, indexed like [`Network::od_pairs`].
    DemandVector,
    "demand"
);
nonneg_vector!(
    /// Per-link flow, vehicles/hour, indexed like [`Network::links`].
    FlowVector,
    "flow"
);

/// Simple path serving one OD pair.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Route {
    pub od_index: usize,
    pub links: Vec<usize>,
}

impl Route {
    pub fn weight<T: Scalar>(&self, weights: &[T]) -> T {
        self.links.iter().map(|&a| weights[a]).sum()
    }

    pub fn uses(&self, link: usize) -> bool {
        self.links.contains(&link)
    }

    /// Checks contiguity, simplicity and endpoints against `network`.
    pub fn is_valid<T: Scalar>(&self, network: &Network<T>) -> bool {
        let od = network.od_pair(self.od_index);
        let Some(&first) = self.links.first() else {
            return false;
        };
        if network.link(first).tail != od.origin {
            return false;
        }
        let mut visited = BTreeSet::from([od.origin]);
        let mut at = od.origin;
        for &a in &self.links {
            let l = network.link(a);
            if l.tail != at || !visited.insert(l.head) {
                return false;
            }
            at = l.head;
        }
        at == od.destination
    }
}

/// Routes grouped per OD pair; column order of the incidence matrix is
/// OD-major, then route rank.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouteSet {
    pub per_od: Vec<Vec<Route>>,
}

impl RouteSet {
    pub fn route_count(&self) -> usize {
        self.per_od.iter().map(Vec::len).sum()
    }

    pub fn routes(&self) -> impl Iterator<Item = &Route> {
        self.per_od.iter().flatten()
    }

    /// Column index range of each OD's routes.
    pub fn od_columns(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.per_od
            .iter()
            .map(|r| {
                let range = start..start + r.len();
                start += r.len();
                range
            })
            .collect()
    }
}

/// 0/1 link-route incidence matrix, rows = links, columns = routes.
pub fn link_route_incidence<T: Scalar>(
    link_count: usize,
    routes: &RouteSet,
) -> Result<crate::linalg::DenseMatrix<T>> {
    if routes.route_count() == 0 {
        return Err(Error::InvalidArgument("route set is empty".into()));
    }
    let mut a = crate::linalg::DenseMatrix::zeros(link_count, routes.route_count());
    for (col, r) in routes.routes().enumerate() {
        for &l in &r.links {
            a[(l, col)] = T::one();
        }
    }
    Ok(a)
}
