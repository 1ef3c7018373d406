//! Exhaustive interleaving checks for barrier-batched switch commits.

use std::collections::BTreeMap;

use qkdsim::switch::{AckStatus, FlowMod, FlowModCommand, SwitchState};
use qkdsim::topology::CrossConnectTable;
use qkdsim::{resolve_active_path, SwitchId, Topology};

#[derive(Debug, Clone)]
pub enum Msg {
    Fm(FlowMod),
    Barrier(u64),
}

fn fm(xid: u64, switch: &str, command: FlowModCommand, in_port: u32, out_port: u32) -> FlowMod {
    FlowMod {
        xid,
        switch: switch.into(),
        command,
        in_port,
        out_port,
    }
}

fn deliver(state: &mut SwitchState, ports: u32, msg: &Msg) -> Result<(), String> {
    match msg {
        Msg::Fm(f) => match state.handle_flow_mod(ports, f.clone()).status {
            AckStatus::Staged => Ok(()),
            other => Err(format!("flow-mod {} refused: {other:?}", f.xid)),
        },
        Msg::Barrier(xid) => {
            state.handle_barrier(*xid);
            Ok(())
        }
    }
}

/// Every 2-entry batch shape on one switch, in both orders, with a snapshot
/// taken after every message. Returns the number of snapshots checked.
pub fn single_switch_batches() -> Result<usize, String> {
    use FlowModCommand::{Add, Delete};
    // (initial table, batch)
    type Batch = [(FlowModCommand, u32, u32); 2];
    let cases: Vec<(Vec<(u32, u32)>, Batch)> = vec![
        (vec![], [(Add, 1, 2), (Add, 3, 4)]),
        (vec![(1, 2), (3, 4)], [(Delete, 1, 2), (Delete, 3, 4)]),
        (vec![(1, 2)], [(Delete, 1, 2), (Add, 1, 3)]),
        (vec![(1, 2)], [(Delete, 1, 2), (Add, 3, 2)]),
        (vec![(1, 2)], [(Add, 3, 4), (Delete, 1, 2)]),
    ];
    let mut checked = 0;
    for (initial, batch) in cases {
        for order in [[0usize, 1], [1, 0]] {
            // A batch that depends on its own order is only valid one way.
            let mut state = SwitchState::default();
            for (i, &(a, b)) in initial.iter().enumerate() {
                deliver(&mut state, 8, &Msg::Fm(fm(100 + i as u64, "s", Add, a, b)))?;
            }
            deliver(&mut state, 8, &Msg::Barrier(99))?;
            let before = state.query_table();
            let msgs: Vec<Msg> = order
                .iter()
                .enumerate()
                .map(|(k, &i)| {
                    let (c, a, b) = batch[i];
                    Msg::Fm(fm(k as u64 + 1, "s", c, a, b))
                })
                .chain(std::iter::once(Msg::Barrier(3)))
                .collect();
            let mut expected_after = before.clone();
            for m in &msgs {
                if let Msg::Fm(f) = m {
                    match f.command {
                        Add => {
                            expected_after.insert(f.in_port, f.out_port);
                        }
                        Delete => {
                            expected_after.remove(&f.in_port);
                        }
                    }
                }
            }
            let mut probe = state.clone();
            let mut refused = false;
            let mut snapshots = vec![probe.query_table()];
            for m in &msgs {
                if deliver(&mut probe, 8, m).is_err() {
                    refused = true;
                    break;
                }
                snapshots.push(probe.query_table());
            }
            if refused {
                // The order is invalid on its own terms; nothing staged
                // may have leaked into the table.
                if snapshots.iter().any(|s| s != &before) {
                    return Err(format!("refused batch changed the table: {snapshots:?}"));
                }
                checked += snapshots.len();
                continue;
            }
            let last = snapshots.len() - 1;
            for (i, snap) in snapshots.iter().enumerate() {
                checked += 1;
                let want = if i == last { &expected_after } else { &before };
                if snap != want {
                    return Err(format!(
                        "partial batch visible after message {i}: {snap:?} (before {before:?}, after {expected_after:?})"
                    ));
                }
            }
        }
    }
    Ok(checked)
}

/// All interleavings of `a` and `b` that keep each list in order.
pub fn interleavings<T: Clone>(a: &[T], b: &[T]) -> Vec<Vec<T>> {
    if a.is_empty() {
        return vec![b.to_vec()];
    }
    if b.is_empty() {
        return vec![a.to_vec()];
    }
    let mut out = Vec::new();
    for mut rest in interleavings(&a[1..], b) {
        rest.insert(0, a[0].clone());
        out.push(rest);
    }
    for mut rest in interleavings(a, &b[1..]) {
        rest.insert(0, b[0].clone());
        out.push(rest);
    }
    out
}

fn label(switch: &SwitchId, msg: &Msg) -> String {
    match msg {
        Msg::Fm(f) => format!("{switch}:{:?}#{}", f.command, f.xid),
        Msg::Barrier(x) => format!("{switch}:BARRIER#{x}"),
    }
}

fn tables(states: &BTreeMap<SwitchId, SwitchState>) -> BTreeMap<SwitchId, CrossConnectTable> {
    states.iter().map(|(k, v)| (k.clone(), v.query_table())).collect()
}

/// Every interleaving of the per-switch messages of a two-switch path
/// change, with the active path resolved after each message. Only the old
/// path, nothing, or, once every barrier is in, the new path may resolve.
pub fn two_switch_path_change(topology: &Topology, old: Option<&str>, new: &str) -> Result<usize, String> {
    let mut states: BTreeMap<SwitchId, SwitchState> = topology
        .switches
        .iter()
        .map(|s| (s.id.clone(), SwitchState::default()))
        .collect();
    let ports: BTreeMap<SwitchId, u32> = topology.switches.iter().map(|s| (s.id.clone(), s.ports)).collect();
    let mut xid = 1000;
    if let Some(old) = old {
        let path = topology.path(old).ok_or("unknown old path")?;
        for xc in &path.cross_connects {
            xid += 1;
            let s = states.get_mut(&xc.switch).unwrap();
            deliver(s, ports[&xc.switch], &Msg::Fm(fm(xid, xc.switch.as_str(), FlowModCommand::Add, xc.in_port, xc.out_port)))?;
            deliver(s, ports[&xc.switch], &Msg::Barrier(xid + 500))?;
        }
    }
    if resolve_active_path(topology, &tables(&states)).as_deref() != old {
        return Err("old path does not resolve".into());
    }

    let new_path = topology.path(new).ok_or("unknown new path")?;
    let mut per_switch: BTreeMap<SwitchId, Vec<(SwitchId, Msg)>> = BTreeMap::new();
    let mut next = 1;
    if let Some(old) = old {
        for xc in &topology.path(old).unwrap().cross_connects {
            per_switch.entry(xc.switch.clone()).or_default().push((
                xc.switch.clone(),
                Msg::Fm(fm(next, xc.switch.as_str(), FlowModCommand::Delete, xc.in_port, xc.out_port)),
            ));
            next += 1;
        }
    }
    for xc in &new_path.cross_connects {
        per_switch.entry(xc.switch.clone()).or_default().push((
            xc.switch.clone(),
            Msg::Fm(fm(next, xc.switch.as_str(), FlowModCommand::Add, xc.in_port, xc.out_port)),
        ));
        next += 1;
    }
    for (sw, list) in per_switch.iter_mut() {
        list.push((sw.clone(), Msg::Barrier(next)));
        next += 1;
    }
    let lists: Vec<_> = per_switch.values().cloned().collect();
    if lists.len() != 2 {
        return Err(format!("expected a two-switch change, got {}", lists.len()));
    }

    let mut checked = 0;
    for order in interleavings(&lists[0], &lists[1]) {
        let mut s = states.clone();
        let mut barriers_done = 0;
        for (sw, msg) in &order {
            deliver(s.get_mut(sw).unwrap(), ports[sw], msg)?;
            if matches!(msg, Msg::Barrier(_)) {
                barriers_done += 1;
            }
            let resolved = resolve_active_path(topology, &tables(&s));
            checked += 1;
            let ok = match barriers_done {
                0 => resolved.as_deref() == old,
                1 => resolved.is_none(),
                _ => resolved.as_deref() == Some(new),
            };
            if !ok {
                let trace: Vec<String> = order.iter().map(|(s, m)| label(s, m)).collect();
                return Err(format!("after {barriers_done} barrier(s) in order {trace:?}, resolved {resolved:?}"));
            }
        }
    }
    Ok(checked)
}
