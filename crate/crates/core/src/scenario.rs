//! Line-oriented scenario documents.
//!
//! Grammar (UTF-8, `#` starts a comment):
//!
//! ```text
//! node <id> [<x_m> <y_m>]
//! edge <id> <from> <to> <length_m> <speed_mps> <lanes>
//! tls <node_id> plan=<plan_id> incoming=<edge,...>
//! plan <plan_id> phase=<green_s>:<movement_mask>[+allred] ...
//! veh <id> <depart_s> <origin> <dest>
//! close <edge_id> <start_s> <end_s>
//! ```
//!
//! The movement mask is one `0`/`1` per incoming edge of the intersection
//! using the plan, in the order declared on the `tls` line. Yellow (3 s) is
//! implicit after every green; `+allred` appends the 5-second all-red.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::network::{
    shortest_path, ClosureEvent, DemandEntry, NodeIdx, RoadNetwork, SegmentIdx,
};
use crate::signals::{Phase, SignalPlan};

/// A fully validated scenario: network, demand, closures, and signal plans.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub network: RoadNetwork,
    /// Sorted by (depart, vehicle_id).
    pub demand: Vec<DemandEntry>,
    pub closures: Vec<ClosureEvent>,
    pub plans: BTreeMap<String, SignalPlan>,
}

impl Scenario {
    /// The static plan of one signalized intersection.
    pub fn plan_of(&self, j: crate::network::IntersectionIdx) -> &SignalPlan {
        &self.plans[&self.network.intersection(j).plan_id]
    }

    /// Earliest closure start, if any closure exists.
    pub fn first_closure_start(&self) -> Option<u32> {
        self.closures.iter().map(|c| c.start).min()
    }

    /// A copy with every closure removed.
    pub fn without_closures(&self) -> Scenario {
        let mut s = self.clone();
        s.closures.clear();
        s
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn num<T: std::str::FromStr>(line: usize, field: &str, raw: &str) -> Result<T> {
    raw.parse::<T>()
        .map_err(|_| parse_err(line, format!("invalid {field} '{raw}'")))
}

/// Parses and validates a scenario document.
pub fn load_scenario(text: &str) -> Result<Scenario> {
    let mut nodes: Vec<(String, (f64, f64))> = Vec::new();
    let mut edges: Vec<(String, String, String, f64, f64, u32)> = Vec::new();
    let mut tls: Vec<(String, String, Vec<String>)> = Vec::new();
    let mut plan_lines: Vec<(usize, String, Vec<(u32, String, bool)>)> = Vec::new();
    let mut veh: Vec<(usize, String, u32, String, String)> = Vec::new();
    let mut close: Vec<(usize, String, u32, u32)> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let kind = it.next().unwrap();
        let rest: Vec<&str> = it.collect();
        match kind {
            "node" => match rest.len() {
                1 => nodes.push((rest[0].to_string(), (0.0, 0.0))),
                3 => nodes.push((
                    rest[0].to_string(),
                    (num(lineno, "x", rest[1])?, num(lineno, "y", rest[2])?),
                )),
                n => return Err(parse_err(lineno, format!("node takes 1 or 3 fields, got {n}"))),
            },
            "edge" => {
                if rest.len() != 6 {
                    return Err(parse_err(lineno, "edge takes 6 fields: id from to length speed lanes"));
                }
                edges.push((
                    rest[0].to_string(),
                    rest[1].to_string(),
                    rest[2].to_string(),
                    num(lineno, "length", rest[3])?,
                    num(lineno, "speed", rest[4])?,
                    num(lineno, "lanes", rest[5])?,
                ));
            }
            "tls" => {
                if rest.len() != 3 {
                    return Err(parse_err(lineno, "tls takes: <node> plan=<id> incoming=<edge,...>"));
                }
                let plan_id = rest[1]
                    .strip_prefix("plan=")
                    .ok_or_else(|| parse_err(lineno, "tls second field must be plan=<id>"))?;
                let incoming = rest[2]
                    .strip_prefix("incoming=")
                    .ok_or_else(|| parse_err(lineno, "tls third field must be incoming=<edge,...>"))?;
                tls.push((
                    rest[0].to_string(),
                    plan_id.to_string(),
                    incoming.split(',').map(str::to_string).collect(),
                ));
            }
            "plan" => {
                if rest.len() < 2 {
                    return Err(parse_err(lineno, "plan takes: <id> phase=<green>:<mask>[+allred] ..."));
                }
                let id = rest[0].to_string();
                let mut phases = Vec::new();
                for spec in &rest[1..] {
                    let body = spec
                        .strip_prefix("phase=")
                        .ok_or_else(|| parse_err(lineno, format!("expected phase=..., got '{spec}'")))?;
                    let (body, allred) = match body.strip_suffix("+allred") {
                        Some(b) => (b, true),
                        None => (body, false),
                    };
                    let (green_s, mask) = body
                        .split_once(':')
                        .ok_or_else(|| parse_err(lineno, format!("phase '{body}' missing ':'")))?;
                    let green: u32 = num(lineno, "green duration", green_s)?;
                    if !mask.chars().all(|c| c == '0' || c == '1') {
                        return Err(parse_err(lineno, format!("mask '{mask}' must be 0/1 digits")));
                    }
                    phases.push((green, mask.to_string(), allred));
                }
                plan_lines.push((lineno, id, phases));
            }
            "veh" => {
                if rest.len() != 4 {
                    return Err(parse_err(lineno, "veh takes: <id> <depart_s> <origin> <dest>"));
                }
                veh.push((
                    lineno,
                    rest[0].to_string(),
                    num(lineno, "depart", rest[1])?,
                    rest[2].to_string(),
                    rest[3].to_string(),
                ));
            }
            "close" => {
                if rest.len() != 3 {
                    return Err(parse_err(lineno, "close takes: <edge_id> <start_s> <end_s>"));
                }
                close.push((
                    lineno,
                    rest[0].to_string(),
                    num(lineno, "start", rest[1])?,
                    num(lineno, "end", rest[2])?,
                ));
            }
            other => return Err(parse_err(lineno, format!("unknown record '{other}'"))),
        }
    }

    let network = RoadNetwork::new(nodes, edges, tls)?;

    let mut plans = BTreeMap::new();
    for (lineno, id, phase_specs) in plan_lines {
        if plans.contains_key(&id) {
            return Err(parse_err(lineno, format!("duplicate plan id '{id}'")));
        }
        let phases = phase_specs
            .into_iter()
            .map(|(green, mask, allred_after)| Phase {
                green,
                mask: mask.chars().map(|c| c == '1').collect(),
                allred_after,
            })
            .collect();
        plans.insert(id.clone(), SignalPlan { id, phases });
    }

    for t in network.intersections() {
        let plan = plans
            .get(&t.plan_id)
            .ok_or_else(|| Error::UnknownPlan(t.plan_id.clone()))?;
        plan.validate(t.incoming.len())?;
    }

    let mut demand = Vec::with_capacity(veh.len());
    let mut seen = std::collections::HashSet::new();
    for (lineno, vehicle_id, depart, origin, dest) in veh {
        if !seen.insert(vehicle_id.clone()) {
            return Err(parse_err(lineno, format!("duplicate vehicle id '{vehicle_id}'")));
        }
        let origin: NodeIdx = network.node(&origin)?;
        let destination: NodeIdx = network.node(&dest)?;
        if origin == destination {
            return Err(parse_err(lineno, format!("vehicle '{vehicle_id}' has origin == destination")));
        }
        // Reachability in the un-closed network.
        shortest_path(&network, origin, destination, &[])?;
        demand.push(DemandEntry {
            vehicle_id,
            depart,
            origin,
            destination,
        });
    }
    demand.sort_by(|a, b| a.depart.cmp(&b.depart).then_with(|| a.vehicle_id.cmp(&b.vehicle_id)));

    let mut closures = Vec::with_capacity(close.len());
    for (lineno, edge_id, start, end) in close {
        if start >= end {
            return Err(parse_err(lineno, format!("closure of '{edge_id}' has start >= end")));
        }
        let segment: SegmentIdx = network.segment_by_id(&edge_id)?;
        closures.push(ClosureEvent { segment, start, end });
    }
    closures.sort_by_key(|c| (c.segment, c.start));

    Ok(Scenario {
        network,
        demand,
        closures,
        plans,
    })
}

/// Canonical textual form; loading it back yields an equal [`Scenario`].
pub fn serialize_scenario(s: &Scenario) -> String {
    let mut out = String::new();
    for i in 0..s.network.node_count() {
        let n = NodeIdx(i);
        let (x, y) = s.network.node_position(n);
        writeln!(out, "node {} {} {}", s.network.node_id(n), x, y).unwrap();
    }
    for seg in s.network.segments() {
        writeln!(
            out,
            "edge {} {} {} {} {} {}",
            seg.id,
            s.network.node_id(seg.from),
            s.network.node_id(seg.to),
            seg.length,
            seg.speed_limit,
            seg.lanes
        )
        .unwrap();
    }
    for plan in s.plans.values() {
        write!(out, "plan {}", plan.id).unwrap();
        for p in &plan.phases {
            let mask: String = p.mask.iter().map(|&m| if m { '1' } else { '0' }).collect();
            write!(out, " phase={}:{}{}", p.green, mask, if p.allred_after { "+allred" } else { "" }).unwrap();
        }
        out.push('\n');
    }
    for t in s.network.intersections() {
        let incoming: Vec<&str> = t.incoming.iter().map(|&e| s.network.segment(e).id.as_str()).collect();
        writeln!(
            out,
            "tls {} plan={} incoming={}",
            s.network.node_id(t.node),
            t.plan_id,
            incoming.join(",")
        )
        .unwrap();
    }
    for v in &s.demand {
        writeln!(
            out,
            "veh {} {} {} {}",
            v.vehicle_id,
            v.depart,
            s.network.node_id(v.origin),
            s.network.node_id(v.destination)
        )
        .unwrap();
    }
    for c in &s.closures {
        writeln!(out, "close {} {} {}", s.network.segment(c.segment).id, c.start, c.end).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
# smallest valid document
node A
node B
edge ab A B 100 10 1
veh v1 0 A B
";

    #[test]
    fn minimal_scenario_loads() {
        let s = load_scenario(MINIMAL).unwrap();
        assert_eq!(s.network.segments().len(), 1);
        assert!(s.closures.is_empty());
        assert_eq!(s.demand.len(), 1);
    }

    #[test]
    fn dangling_node_reference_is_reported() {
        let doc = "node A\nedge ax A X 100 10 1\n";
        match load_scenario(doc) {
            Err(Error::UnknownNode(n)) => assert_eq!(n, "X"),
            other => panic!("expected dangling-reference error, got {other:?}"),
        }
    }

    #[test]
    fn non_positive_length_is_rejected() {
        let doc = "node A\nnode B\nedge ab A B 0 10 1\n";
        assert!(matches!(load_scenario(doc), Err(Error::Validation(_))));
    }

    #[test]
    fn unreachable_od_pair_is_rejected() {
        let doc = "node A\nnode B\nedge ab A B 100 10 1\nveh v1 0 B A\n";
        assert!(matches!(load_scenario(doc), Err(Error::NoPath { .. })));
    }

    #[test]
    fn parse_error_carries_line_number() {
        let doc = "node A\nnode B\nedge ab A B ten 10 1\n";
        match load_scenario(doc) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn tls_with_plan_round_trips() {
        let doc = "\
node A 0 0
node B 150 0
node C 300 0
node D 150 150
edge ab A B 150 15 1
edge cb C B 150 15 1
edge bd B D 150 15 1
tls B plan=P1 incoming=ab,cb
plan P1 phase=37:10+allred phase=37:01+allred
veh v1 5 A D
close ab 600 2400
";
        let s = load_scenario(doc).unwrap();
        assert_eq!(s.network.intersections().len(), 1);
        assert_eq!(s.plans["P1"].cycle_length(), 90);
        let text = serialize_scenario(&s);
        let s2 = load_scenario(&text).unwrap();
        assert_eq!(s, s2);
        // Canonical form is a fixpoint.
        assert_eq!(text, serialize_scenario(&s2));
    }

    #[test]
    fn plan_must_serve_every_approach() {
        let doc = "\
node A
node B
node C
node D
edge ab A B 150 15 1
edge cb C B 150 15 1
edge bd B D 150 15 1
tls B plan=P1 incoming=ab,cb
plan P1 phase=37:10 phase=37:10
veh v1 5 A D
";
        assert!(matches!(load_scenario(doc), Err(Error::Validation(_))));
    }
}
