//! Road-network graph, demand, closure events, and free-flow rerouting.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index into [`RoadNetwork::nodes`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeIdx(pub usize);

/// Index into [`RoadNetwork::segments`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SegmentIdx(pub usize);

/// Index into [`RoadNetwork::intersections`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct IntersectionIdx(pub usize);

/// One directed road segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadSegment {
    pub id: String,
    pub from: NodeIdx,
    pub to: NodeIdx,
    /// Meters, > 0.
    pub length: f64,
    /// Meters per second, > 0.
    pub speed_limit: f64,
    pub lanes: u32,
}

impl RoadSegment {
    /// Unimpeded traversal time in seconds.
    pub fn free_flow_time(&self) -> f64 {
        self.length / self.speed_limit
    }

    /// Total vehicle length the segment can store across its lanes.
    pub fn storage_capacity(&self) -> f64 {
        self.lanes as f64 * self.length
    }
}

/// A signalized node together with its ordered incoming approaches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalizedIntersection {
    pub node: NodeIdx,
    pub plan_id: String,
    /// Declared approach order; observation slots follow this order.
    pub incoming: Vec<SegmentIdx>,
}

/// Directed road graph with signalized-intersection annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadNetwork {
    node_ids: Vec<String>,
    node_pos: Vec<(f64, f64)>,
    segments: Vec<RoadSegment>,
    intersections: Vec<SignalizedIntersection>,
    #[serde(skip)]
    node_index: HashMap<String, NodeIdx>,
    #[serde(skip)]
    segment_index: HashMap<String, SegmentIdx>,
    #[serde(skip)]
    outgoing: Vec<Vec<SegmentIdx>>,
    #[serde(skip)]
    intersection_at: Vec<Option<IntersectionIdx>>,
}

impl RoadNetwork {
    /// Assembles and validates a network. Nodes and segments are sorted by id
    /// so indices are stable for any declaration order.
    pub fn new(
        mut nodes: Vec<(String, (f64, f64))>,
        segments: Vec<(String, String, String, f64, f64, u32)>,
        intersections: Vec<(String, String, Vec<String>)>,
    ) -> Result<Self> {
        nodes.sort_by(|a, b| a.0.cmp(&b.0));
        nodes.dedup_by(|a, b| a.0 == b.0);
        let node_index: HashMap<String, NodeIdx> = nodes
            .iter()
            .enumerate()
            .map(|(i, (id, _))| (id.clone(), NodeIdx(i)))
            .collect();

        let mut segs: Vec<RoadSegment> = Vec::with_capacity(segments.len());
        for (id, from, to, length, speed, lanes) in segments {
            let from = *node_index
                .get(&from)
                .ok_or_else(|| Error::UnknownNode(from.clone()))?;
            let to = *node_index
                .get(&to)
                .ok_or_else(|| Error::UnknownNode(to.clone()))?;
            if length <= 0.0 || !length.is_finite() {
                return Err(Error::Validation(format!(
                    "segment '{id}' has non-positive length {length}"
                )));
            }
            if speed <= 0.0 || !speed.is_finite() {
                return Err(Error::Validation(format!(
                    "segment '{id}' has non-positive speed limit {speed}"
                )));
            }
            if lanes == 0 {
                return Err(Error::Validation(format!("segment '{id}' has zero lanes")));
            }
            segs.push(RoadSegment {
                id,
                from,
                to,
                length,
                speed_limit: speed,
                lanes,
            });
        }
        segs.sort_by(|a, b| a.id.cmp(&b.id));
        for pair in segs.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(Error::Validation(format!(
                    "duplicate segment id '{}'",
                    pair[0].id
                )));
            }
        }
        let segment_index: HashMap<String, SegmentIdx> = segs
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.clone(), SegmentIdx(i)))
            .collect();

        let mut outgoing = vec![Vec::new(); nodes.len()];
        for (i, s) in segs.iter().enumerate() {
            outgoing[s.from.0].push(SegmentIdx(i));
        }

        let mut tls: Vec<SignalizedIntersection> = Vec::with_capacity(intersections.len());
        for (node_id, plan_id, incoming_ids) in intersections {
            let node = *node_index
                .get(&node_id)
                .ok_or_else(|| Error::UnknownNode(node_id.clone()))?;
            let mut incoming = Vec::with_capacity(incoming_ids.len());
            for sid in &incoming_ids {
                let idx = *segment_index
                    .get(sid)
                    .ok_or_else(|| Error::UnknownSegment(sid.clone()))?;
                if segs[idx.0].to != node {
                    return Err(Error::Validation(format!(
                        "segment '{sid}' does not end at signalized node '{node_id}'"
                    )));
                }
                incoming.push(idx);
            }
            if incoming.len() < 2 {
                return Err(Error::Validation(format!(
                    "signalized node '{node_id}' has fewer than 2 incoming segments"
                )));
            }
            tls.push(SignalizedIntersection {
                node,
                plan_id,
                incoming,
            });
        }
        tls.sort_by_key(|t| t.node);
        for pair in tls.windows(2) {
            if pair[0].node == pair[1].node {
                return Err(Error::Validation(format!(
                    "node '{}' declared signalized twice",
                    nodes[pair[0].node.0].0
                )));
            }
        }
        let mut intersection_at = vec![None; nodes.len()];
        for (i, t) in tls.iter().enumerate() {
            intersection_at[t.node.0] = Some(IntersectionIdx(i));
        }

        let (node_ids, node_pos) = nodes.into_iter().unzip();
        Ok(Self {
            node_ids,
            node_pos,
            segments: segs,
            intersections: tls,
            node_index,
            segment_index,
            outgoing,
            intersection_at,
        })
    }

    /// Rebuilds the derived lookup tables after deserialization.
    pub fn reindex(&mut self) {
        self.node_index = self
            .node_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), NodeIdx(i)))
            .collect();
        self.segment_index = self
            .segments
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.clone(), SegmentIdx(i)))
            .collect();
        self.outgoing = vec![Vec::new(); self.node_ids.len()];
        for (i, s) in self.segments.iter().enumerate() {
            self.outgoing[s.from.0].push(SegmentIdx(i));
        }
        self.intersection_at = vec![None; self.node_ids.len()];
        for (i, t) in self.intersections.iter().enumerate() {
            self.intersection_at[t.node.0] = Some(IntersectionIdx(i));
        }
    }

    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    pub fn node_id(&self, n: NodeIdx) -> &str {
        &self.node_ids[n.0]
    }

    pub fn node_position(&self, n: NodeIdx) -> (f64, f64) {
        self.node_pos[n.0]
    }

    pub fn node(&self, id: &str) -> Result<NodeIdx> {
        self.node_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownNode(id.to_string()))
    }

    pub fn segments(&self) -> &[RoadSegment] {
        &self.segments
    }

    pub fn segment(&self, s: SegmentIdx) -> &RoadSegment {
        &self.segments[s.0]
    }

    pub fn segment_by_id(&self, id: &str) -> Result<SegmentIdx> {
        self.segment_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownSegment(id.to_string()))
    }

    /// Outgoing segments of a node, ordered by segment id.
    pub fn outgoing(&self, n: NodeIdx) -> &[SegmentIdx] {
        &self.outgoing[n.0]
    }

    pub fn intersections(&self) -> &[SignalizedIntersection] {
        &self.intersections
    }

    pub fn intersection(&self, j: IntersectionIdx) -> &SignalizedIntersection {
        &self.intersections[j.0]
    }

    pub fn intersection_at(&self, n: NodeIdx) -> Option<IntersectionIdx> {
        self.intersection_at[n.0]
    }

    /// Centroid of all node positions; stands in for the control-centre location.
    pub fn centroid(&self) -> (f64, f64) {
        let n = self.node_pos.len().max(1) as f64;
        let (sx, sy) = self
            .node_pos
            .iter()
            .fold((0.0, 0.0), |(ax, ay), (x, y)| (ax + x, ay + y));
        (sx / n, sy / n)
    }
}

/// One vehicle's scheduled trip request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandEntry {
    pub vehicle_id: String,
    /// Seconds from episode start.
    pub depart: u32,
    pub origin: NodeIdx,
    pub destination: NodeIdx,
}

/// A segment unavailable during `[start, end)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosureEvent {
    pub segment: SegmentIdx,
    pub start: u32,
    pub end: u32,
}

/// Segments whose closure interval contains `t` (half-open `[start, end)`).
pub fn active_closures(events: &[ClosureEvent], t: u32) -> Vec<SegmentIdx> {
    let mut out: Vec<SegmentIdx> = events
        .iter()
        .filter(|c| c.start <= t && t < c.end)
        .map(|c| c.segment)
        .collect();
    out.sort();
    out.dedup();
    out
}

#[derive(Clone, PartialEq)]
struct Frontier {
    cost: f64,
    node: NodeIdx,
    path: Vec<SegmentIdx>,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on cost; equal costs prefer the lexicographically
        // smaller id sequence for deterministic routing.
        other
            .cost
            .partial_cmp(&self.cost)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.path.cmp(&self.path))
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Minimum free-flow-travel-time path from `origin` to `destination`,
/// avoiding `closed` segments. Ties break on the lexicographically smallest
/// segment-id sequence. Comparing interned indices is equivalent because
/// segments are stored sorted by id.
pub fn shortest_path(
    net: &RoadNetwork,
    origin: NodeIdx,
    destination: NodeIdx,
    closed: &[SegmentIdx],
) -> Result<Vec<SegmentIdx>> {
    if origin == destination {
        return Ok(Vec::new());
    }

    let mut settled = vec![false; net.node_count()];
    let mut heap = BinaryHeap::new();
    heap.push(Frontier {
        cost: 0.0,
        node: origin,
        path: Vec::new(),
    });

    while let Some(Frontier { cost, node, path }) = heap.pop() {
        if node == destination {
            return Ok(path);
        }
        if settled[node.0] {
            continue;
        }
        settled[node.0] = true;

        for &seg_idx in net.outgoing(node) {
            if closed.contains(&seg_idx) {
                continue;
            }
            let seg = net.segment(seg_idx);
            if settled[seg.to.0] {
                continue;
            }
            let mut next_path = path.clone();
            next_path.push(seg_idx);
            heap.push(Frontier {
                cost: cost + seg.free_flow_time(),
                node: seg.to,
                path: next_path,
            });
        }
    }

    Err(Error::NoPath {
        origin: net.node_id(origin).to_string(),
        destination: net.node_id(destination).to_string(),
    })
}

/// Total free-flow travel time along a path.
pub fn path_cost(net: &RoadNetwork, path: &[SegmentIdx]) -> f64 {
    path.iter().map(|&s| net.segment(s).free_flow_time()).sum()
}
