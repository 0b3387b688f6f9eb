//! Branch outage application with islanding detection.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::network::{BranchRef, BusId, Network};

/// Takes a branch out of service and prunes everything the outage islands.
///
/// Returns the modified copy together with the set of non-slack bus ids that
/// are disconnected from the slack in the resulting network. Islanded buses
/// and all elements attached to them (generators, loads, shunts, further
/// branches) are marked out of service. Applying the same outage to the
/// result again is a no-op and reports the same islanded set.
///
/// Errors with [`Error::DegenerateTopology`] when no in-service non-slack
/// bus remains, and with a data error for an unknown element id.
pub fn apply_outage(net: &Network, element: BranchRef) -> Result<(Network, BTreeSet<BusId>)> {
    let mut out = net.clone();
    match element {
        BranchRef::Line(id) => {
            let line = out
                .lines
                .iter_mut()
                .find(|l| l.id == id)
                .ok_or_else(|| Error::data(format!("unknown outage element {element}")))?;
            line.in_service = false;
        }
        BranchRef::Transformer(id) => {
            let t = out
                .transformers
                .iter_mut()
                .find(|t| t.id == id)
                .ok_or_else(|| Error::data(format!("unknown outage element {element}")))?;
            t.in_service = false;
        }
    }

    let reachable = reachable_from_slack(&out);
    let islanded: BTreeSet<BusId> = out
        .buses
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != out.slack_idx() && !reachable[*i])
        .map(|(_, b)| b.id)
        .collect();

    if islanded.len() + 1 == out.buses.len() {
        return Err(Error::DegenerateTopology(format!(
            "outage of {element} disconnects every non-slack bus"
        )));
    }

    let dead = |id: BusId| net.bus_idx(id).map(|i| !reachable[i]).unwrap_or(true);
    for (i, bus) in out.buses.iter_mut().enumerate() {
        if !reachable[i] {
            bus.in_service = false;
        }
    }
    for l in out.lines.iter_mut() {
        if dead(l.from_bus) || dead(l.to_bus) {
            l.in_service = false;
        }
    }
    for t in out.transformers.iter_mut() {
        if dead(t.hv_bus) || dead(t.lv_bus) {
            t.in_service = false;
        }
    }
    for s in out.shunts.iter_mut() {
        if dead(s.bus) {
            s.in_service = false;
        }
    }
    for g in out.generators.iter_mut() {
        if dead(g.bus) {
            g.in_service = false;
        }
    }
    for l in out.loads.iter_mut() {
        if dead(l.bus) {
            l.in_service = false;
        }
    }

    Ok((out, islanded))
}

/// Reachability over in-service branches, ignoring bus service flags so the
/// islanded set is stable under repeated application.
fn reachable_from_slack(net: &Network) -> Vec<bool> {
    let n = net.buses.len();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for l in net.lines.iter().filter(|l| l.in_service) {
        if let (Some(i), Some(j)) = (net.bus_idx(l.from_bus), net.bus_idx(l.to_bus)) {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for t in net.transformers.iter().filter(|t| t.in_service) {
        if let (Some(i), Some(j)) = (net.bus_idx(t.hv_bus), net.bus_idx(t.lv_bus)) {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    let mut seen = vec![false; n];
    let mut stack = vec![net.slack_idx()];
    seen[net.slack_idx()] = true;
    while let Some(i) = stack.pop() {
        for &j in &adj[i] {
            if !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen
}
