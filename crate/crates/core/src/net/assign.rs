use rayon::prelude::*;

use super::paths::{check_weights, ShortestPathTree};
use super::{DemandVector, FlowVector, Network, Route};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Fastest route of every OD pair under `weights`, one tree per origin.
pub fn fastest_routes<T: Scalar>(network: &Network<T>, weights: &[T]) -> Result<Vec<Route>> {
    check_weights(network, weights)?;
    let per_origin: Vec<Result<Vec<(usize, Route)>>> = network
        .ods_by_origin()
        .par_iter()
        .map(|(origin, ods)| {
            let tree = ShortestPathTree::compute(network, weights, *origin);
            ods.iter()
                .map(|&od| {
                    let dest = network.od_pair(od).destination;
                    let links = tree
                        .path_to(network, dest)
                        .ok_or(Error::InfeasibleDemand { od })?;
                    Ok((od, Route { od_index: od, links }))
                })
                .collect()
        })
        .collect();
    let mut routes: Vec<Option<Route>> = vec![None; network.od_count()];
    for group in per_origin {
        for (od, r) in group? {
            routes[od] = Some(r);
        }
    }
    Ok(routes.into_iter().map(|r| r.expect("every OD routed")).collect())
}

/// Loads each OD's whole demand on its fastest route and sums per link.
/// Zero-demand OD pairs are skipped.
pub fn assign_all_or_nothing<T: Scalar>(
    network: &Network<T>,
    demand: &DemandVector<T>,
    weights: &[T],
) -> Result<FlowVector<T>> {
    check_weights(network, weights)?;
    network.check_od_len("demand", demand.len())?;
    let partial: Vec<Result<Vec<T>>> = network
        .ods_by_origin()
        .par_iter()
        .map(|(origin, ods)| {
            let mut x = vec![T::zero(); network.link_count()];
            if ods.iter().all(|&od| demand[od] == T::zero()) {
                return Ok(x);
            }
            let tree = ShortestPathTree::compute(network, weights, *origin);
            for &od in ods {
                let d = demand[od];
                if d == T::zero() {
                    continue;
                }
                let mut at = network.od_pair(od).destination;
                while at != *origin {
                    let a = tree.parent_link(at).ok_or(Error::InfeasibleDemand { od })?;
                    x[a] += d;
                    at = network.link(a).tail;
                }
            }
            Ok(x)
        })
        .collect();
    let mut flows = vec![T::zero(); network.link_count()];
    for x in partial {
        for (f, v) in flows.iter_mut().zip(x?) {
            *f += v;
        }
    }
    Ok(FlowVector::from_vec_clamped(flows))
}

/// Per-node conservation residual: (inflow − outflow) minus the net demand
/// terminating at the node. Zero for any feasible aggregate flow.
pub fn node_imbalance<T: Scalar>(
    network: &Network<T>,
    flows: &[T],
    demand: &DemandVector<T>,
) -> Vec<T> {
    let mut r = vec![T::zero(); network.node_count()];
    for (l, &x) in network.links().iter().zip(flows) {
        r[l.head] += x;
        r[l.tail] -= x;
    }
    for (od, &d) in network.od_pairs().iter().zip(demand.iter()) {
        r[od.destination] -= d;
        r[od.origin] += d;
    }
    r
}
