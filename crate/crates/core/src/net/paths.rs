//! Shortest paths with a total tie-break order, and k-shortest simple routes.
//!
//! Among equal-weight shortest paths the one with the lexicographically
//! smallest link-id sequence wins. Equal weight means equal within a relative
//! tolerance of `64·ε`, so that rounding in path sums does not decide ties.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::{Network, Route, RouteSet};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouteSettings {
    pub k_max: usize,
    /// Routes heavier than `length_ratio × shortest` are dropped.
    pub length_ratio: f64,
}

impl Default for RouteSettings {
    fn default() -> Self {
        Self {
            k_max: 3,
            length_ratio: 1.5,
        }
    }
}

fn tie_tol<T: Scalar>() -> T {
    T::lit(64.0) * T::EPS
}

fn approx_eq<T: Scalar>(a: T, b: T) -> bool {
    (a - b).abs() <= tie_tol::<T>() * a.abs().max(b.abs())
}

/// Orders `(weight, links)` pairs by weight, ties by link sequence.
fn cmp_weighted<T: Scalar>(a: (T, &[usize]), b: (T, &[usize])) -> Ordering {
    if approx_eq(a.0, b.0) {
        a.1.cmp(b.1)
    } else {
        a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal)
    }
}

struct HeapEntry<T> {
    dist: T,
    node: usize,
}

impl<T: Scalar> PartialEq for HeapEntry<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<T: Scalar> Eq for HeapEntry<T> {}
impl<T: Scalar> PartialOrd for HeapEntry<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: Scalar> Ord for HeapEntry<T> {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .partial_cmp(&self.dist)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.node.cmp(&self.node))
    }
}

/// Single-origin shortest path tree under fixed link weights.
#[derive(Clone, Debug)]
pub struct ShortestPathTree<T> {
    origin: usize,
    dist: Vec<T>,
    parent: Vec<Option<usize>>,
}

impl<T: Scalar> ShortestPathTree<T> {
    pub fn compute(network: &Network<T>, weights: &[T], origin: usize) -> Self {
        Self::compute_restricted(network, weights, origin, None, None)
    }

    pub(crate) fn compute_restricted(
        network: &Network<T>,
        weights: &[T],
        origin: usize,
        banned_links: Option<&[bool]>,
        banned_nodes: Option<&[bool]>,
    ) -> Self {
        let n = network.node_count();
        let link_ok = |a: usize| banned_links.is_none_or(|b| !b[a]);
        let node_ok = |v: usize| banned_nodes.is_none_or(|b| !b[v]);
        let passable = |v: usize| v == origin || network.is_through(v);

        let mut dist = vec![T::infinity(); n];
        let mut settled = vec![false; n];
        let mut order = Vec::with_capacity(n);
        let mut heap = BinaryHeap::new();
        dist[origin] = T::zero();
        heap.push(HeapEntry {
            dist: T::zero(),
            node: origin,
        });
        while let Some(HeapEntry { dist: d, node: v }) = heap.pop() {
            if settled[v] || d > dist[v] {
                continue;
            }
            settled[v] = true;
            order.push(v);
            if !passable(v) {
                continue;
            }
            for &a in network.out_links(v) {
                if !link_ok(a) {
                    continue;
                }
                let w = network.link(a).head;
                if settled[w] || !node_ok(w) {
                    continue;
                }
                let nd = d + weights[a];
                if nd < dist[w] {
                    dist[w] = nd;
                    heap.push(HeapEntry { dist: nd, node: w });
                }
            }
        }

        // Parents chosen in settle order so every candidate tail is final.
        let mut parent: Vec<Option<usize>> = vec![None; n];
        let tol = tie_tol::<T>();
        let mut candidates = Vec::new();
        for &v in order.iter().skip(1) {
            candidates.clear();
            for &a in network.in_links(v) {
                if !link_ok(a) {
                    continue;
                }
                let u = network.link(a).tail;
                if !settled[u] || !passable(u) || !(dist[u] < dist[v]) {
                    continue;
                }
                if dist[u] + weights[a] <= dist[v] + tol * dist[v] {
                    candidates.push(a);
                }
            }
            parent[v] = match candidates.len() {
                0 => None,
                1 => Some(candidates[0]),
                _ => {
                    let tree = Self {
                        origin,
                        dist: Vec::new(),
                        parent: parent.clone(),
                    };
                    candidates
                        .iter()
                        .map(|&a| {
                            let mut p = tree.links_to(network, network.link(a).tail);
                            p.push(a);
                            p
                        })
                        .min()
                        .and_then(|p| p.last().copied())
                }
            };
        }
        Self {
            origin,
            dist,
            parent,
        }
    }

    pub fn origin(&self) -> usize {
        self.origin
    }

    pub fn distance(&self, node: usize) -> Option<T> {
        let d = self.dist[node];
        d.is_finite().then_some(d)
    }

    pub fn parent_link(&self, node: usize) -> Option<usize> {
        self.parent[node]
    }

    fn links_to(&self, network: &Network<T>, node: usize) -> Vec<usize> {
        let mut links = Vec::new();
        let mut at = node;
        while at != self.origin {
            match self.parent[at] {
                Some(a) => {
                    links.push(a);
                    at = network.link(a).tail;
                }
                None => break,
            }
        }
        links.reverse();
        links
    }

    /// Link ids of the tree path from the origin to `node`.
    pub fn path_to(&self, network: &Network<T>, node: usize) -> Option<Vec<usize>> {
        if node == self.origin {
            return Some(Vec::new());
        }
        self.parent[node]?;
        Some(self.links_to(network, node))
    }
}

pub(crate) fn check_weights<T: Scalar>(network: &Network<T>, weights: &[T]) -> Result<()> {
    network.check_len("link weights", weights.len())?;
    if let Some((a, w)) = weights
        .iter()
        .enumerate()
        .find(|(_, w)| !(**w > T::zero()) || !w.is_finite())
    {
        return Err(Error::InvalidLink {
            link: a,
            reason: format!("link weight must be positive and finite, got {w}"),
        });
    }
    Ok(())
}

/// Minimum-weight simple path for OD pair `od`, ties broken by the
/// lexicographically smallest link sequence.
pub fn fastest_route<T: Scalar>(network: &Network<T>, weights: &[T], od: usize) -> Result<Route> {
    check_weights(network, weights)?;
    let pair = network.od_pair(od);
    let tree = ShortestPathTree::compute(network, weights, pair.origin);
    let links = tree
        .path_to(network, pair.destination)
        .ok_or(Error::InfeasibleDemand { od })?;
    Ok(Route { od_index: od, links })
}

/// Up to `k_max` shortest simple routes, ascending by weight (ties by link
/// sequence), without routes heavier than `length_ratio ×` the shortest.
pub fn enumerate_routes<T: Scalar>(
    network: &Network<T>,
    weights: &[T],
    od: usize,
    settings: RouteSettings,
) -> Result<Vec<Route>> {
    if settings.k_max == 0 {
        return Err(Error::InvalidArgument("k_max must be at least 1".into()));
    }
    if !(settings.length_ratio >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "length ratio must be at least 1, got {}",
            settings.length_ratio
        )));
    }
    let shortest = fastest_route(network, weights, od)?;
    let pair = network.od_pair(od);
    let n = network.node_count();

    let mut found: Vec<(T, Vec<usize>)> = vec![(shortest.weight(weights), shortest.links)];
    let mut pool: Vec<(T, Vec<usize>)> = Vec::new();
    let mut banned_links = vec![false; network.link_count()];
    let mut banned_nodes = vec![false; n];

    while found.len() < settings.k_max {
        let prev = found.last().expect("nonempty").1.clone();
        for i in 0..prev.len() {
            let root = &prev[..i];
            let spur_node = network.link(prev[i]).tail;
            banned_links.iter_mut().for_each(|b| *b = false);
            banned_nodes.iter_mut().for_each(|b| *b = false);
            for (_, p) in &found {
                if p.len() > i && p[..i] == *root {
                    banned_links[p[i]] = true;
                }
            }
            for &a in root {
                banned_nodes[network.link(a).tail] = true;
            }
            let tree = ShortestPathTree::compute_restricted(
                network,
                weights,
                spur_node,
                Some(&banned_links),
                Some(&banned_nodes),
            );
            let Some(spur) = tree.path_to(network, pair.destination) else {
                continue;
            };
            let mut full = root.to_vec();
            full.extend(spur);
            if found.iter().chain(pool.iter()).any(|(_, p)| *p == full) {
                continue;
            }
            let w: T = full.iter().map(|&a| weights[a]).sum();
            pool.push((w, full));
        }
        let Some(best) = (0..pool.len()).min_by(|&a, &b| {
            cmp_weighted((pool[a].0, &pool[a].1), (pool[b].0, &pool[b].1))
        }) else {
            break;
        };
        found.push(pool.swap_remove(best));
    }

    let limit = found[0].0 * T::lit(settings.length_ratio);
    Ok(found
        .into_iter()
        .filter(|(w, _)| *w <= limit || approx_eq(*w, limit))
        .map(|(_, links)| Route { od_index: od, links })
        .collect())
}

/// Enumerated routes for every OD pair.
pub fn route_set<T: Scalar>(
    network: &Network<T>,
    weights: &[T],
    settings: RouteSettings,
) -> Result<RouteSet> {
    let per_od = (0..network.od_count())
        .map(|od| enumerate_routes(network, weights, od, settings))
        .collect::<Result<Vec<_>>>()?;
    Ok(RouteSet { per_od })
}
