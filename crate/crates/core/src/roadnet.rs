//! Road network in dual form: road segments are nodes, shared endpoints are
//! edges.
//!
//! Input roads are first split into equal pieces no longer than 25 m, then
//! converted to the dual graph. Connectivity is decided by exact endpoint
//! equality, so splitting reuses the same computed points for neighbouring
//! pieces.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::GraphError;
use crate::geo::{point_segment_distance, EnuPoint, Segment};

/// Maximum segment length after splitting, in meters.
pub const MAX_SEGMENT_LENGTH: f64 = 25.0;
/// Default candidate cap for [`RoadGraph::field_of_view`].
pub const FOV_CAP: usize = 128;
/// Default field-of-view radius in meters.
pub const FOV_RADIUS: f64 = 50.0;

/// OpenStreetMap `highway` categories that get their own one-hot slot; every
/// other tag maps to [`RoadType::Other`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RoadType {
    Motorway,
    MotorwayLink,
    Trunk,
    TrunkLink,
    Primary,
    PrimaryLink,
    Secondary,
    SecondaryLink,
    Tertiary,
    TertiaryLink,
    Unclassified,
    Residential,
    LivingStreet,
    Service,
    Other,
}

impl RoadType {
    pub const COUNT: usize = 15;

    const TAGS: [(&'static str, RoadType); 14] = [
        ("motorway", RoadType::Motorway),
        ("motorway_link", RoadType::MotorwayLink),
        ("trunk", RoadType::Trunk),
        ("trunk_link", RoadType::TrunkLink),
        ("primary", RoadType::Primary),
        ("primary_link", RoadType::PrimaryLink),
        ("secondary", RoadType::Secondary),
        ("secondary_link", RoadType::SecondaryLink),
        ("tertiary", RoadType::Tertiary),
        ("tertiary_link", RoadType::TertiaryLink),
        ("unclassified", RoadType::Unclassified),
        ("residential", RoadType::Residential),
        ("living_street", RoadType::LivingStreet),
        ("service", RoadType::Service),
    ];

    pub fn from_tag(tag: &str) -> Self {
        Self::TAGS
            .iter()
            .find(|(t, _)| *t == tag)
            .map(|(_, r)| *r)
            .unwrap_or(RoadType::Other)
    }

    pub fn tag(self) -> &'static str {
        Self::TAGS
            .iter()
            .find(|(_, r)| *r == self)
            .map(|(t, _)| *t)
            .unwrap_or("other")
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn one_hot(self) -> [f64; Self::COUNT] {
        let mut v = [0.0; Self::COUNT];
        v[self.index()] = 1.0;
        v
    }
}

/// Values substituted for missing optional road attributes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoadDefaults {
    pub lanes: u32,
    /// m/s
    pub max_speed: f64,
    pub oneway: bool,
}

impl Default for RoadDefaults {
    fn default() -> Self {
        Self {
            lanes: 1,
            max_speed: 13.9,
            oneway: false,
        }
    }
}

/// One primal road edge. When `oneway` is `Some(true)` travel is only legal
/// from `a` to `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRoad {
    pub a: EnuPoint,
    pub b: EnuPoint,
    pub lanes: Option<u32>,
    pub max_speed: Option<f64>,
    pub road_type: String,
    pub oneway: Option<bool>,
    /// Index of the primal edge this road (or piece) came from.
    pub source: usize,
}

impl RawRoad {
    pub fn length(&self) -> f64 {
        self.a.distance_2d(&self.b)
    }
}

/// Edge of a primal road network between two node indices. When oneway,
/// travel is only legal from `from` to `to`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalEdge {
    pub from: usize,
    pub to: usize,
    pub lanes: Option<u32>,
    pub max_speed: Option<f64>,
    pub road_type: String,
    pub oneway: Option<bool>,
}

/// Intersections and curvature points joined by straight roads, as stored in
/// network files.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrimalNetwork {
    /// Geodetic origin of the local frame (latitude °, longitude °, height m);
    /// informational only.
    pub origin: [f64; 3],
    pub nodes: Vec<EnuPoint>,
    pub edges: Vec<PrimalEdge>,
}

impl PrimalNetwork {
    /// One [`RawRoad`] per edge, with `source` set to the edge index.
    pub fn raw_roads(&self) -> Vec<RawRoad> {
        self.edges
            .iter()
            .enumerate()
            .map(|(i, e)| RawRoad {
                a: self.nodes[e.from],
                b: self.nodes[e.to],
                lanes: e.lanes,
                max_speed: e.max_speed,
                road_type: e.road_type.clone(),
                oneway: e.oneway,
                source: i,
            })
            .collect()
    }

    /// Split and dual-convert into a [`RoadGraph`].
    pub fn build_graph(&self, defaults: &RoadDefaults) -> Result<RoadGraph, GraphError> {
        RoadGraph::build(&self.raw_roads(), defaults)
    }
}

/// A dual-graph node: one road piece of at most 25 m.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadSegment {
    pub id: usize,
    pub geometry: Segment,
    pub lanes: f64,
    pub max_speed: f64,
    pub road_type: RoadType,
    pub oneway: bool,
    pub source: usize,
}

impl RoadSegment {
    pub fn heading_sincos(&self) -> (f64, f64) {
        self.geometry.heading.sin_cos()
    }
}

/// Splits every road longer than `max_len` into `ceil(L / max_len)` equal
/// pieces. Interior break points are computed once and shared by the two
/// adjacent pieces so the pieces stay connected in the dual graph.
pub fn split_segments(roads: &[RawRoad], max_len: f64) -> Vec<RawRoad> {
    assert!(max_len > 0.0, "max_len must be positive");
    let mut out = Vec::with_capacity(roads.len());
    for road in roads {
        let len = road.length();
        let pieces = ((len / max_len).ceil() as usize).max(1);
        if pieces == 1 {
            out.push(road.clone());
            continue;
        }
        let points: Vec<EnuPoint> = (0..=pieces)
            .map(|i| match i {
                0 => road.a,
                i if i == pieces => road.b,
                i => road.a.lerp(&road.b, i as f64 / pieces as f64),
            })
            .collect();
        for w in points.windows(2) {
            out.push(RawRoad {
                a: w[0],
                b: w[1],
                ..road.clone()
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum End {
    Start,
    Finish,
}

fn point_key(p: &EnuPoint) -> (u64, u64) {
    // +0.0 folds -0.0 onto 0.0
    ((p.east + 0.0).to_bits(), (p.north + 0.0).to_bits())
}

/// Uniform bucket grid over segment bounding boxes.
#[derive(Debug, Clone)]
struct SpatialIndex {
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<usize>>,
}

impl SpatialIndex {
    fn build(segments: &[RoadSegment], cell: f64) -> Self {
        let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for s in segments {
            let g = &s.geometry;
            let (x0, x1) = (g.a.east.min(g.b.east), g.a.east.max(g.b.east));
            let (y0, y1) = (g.a.north.min(g.b.north), g.a.north.max(g.b.north));
            for cx in (x0 / cell).floor() as i64..=(x1 / cell).floor() as i64 {
                for cy in (y0 / cell).floor() as i64..=(y1 / cell).floor() as i64 {
                    buckets.entry((cx, cy)).or_default().push(s.id);
                }
            }
        }
        Self { cell, buckets }
    }

    fn query(&self, pos: &EnuPoint, radius: f64) -> Vec<usize> {
        let c = self.cell;
        let xs = ((pos.east - radius) / c).floor() as i64..=((pos.east + radius) / c).floor() as i64;
        let ys = ((pos.north - radius) / c).floor() as i64..=((pos.north + radius) / c).floor() as i64;
        let cells = (xs.end() - xs.start() + 1) as f64 * (ys.end() - ys.start() + 1) as f64;
        let mut ids = Vec::new();
        if cells > self.buckets.len() as f64 {
            // huge radius: cheaper to walk the occupied buckets
            for ((cx, cy), b) in &self.buckets {
                if xs.contains(cx) && ys.contains(cy) {
                    ids.extend_from_slice(b);
                }
            }
        } else {
            for cx in xs {
                for cy in ys.clone() {
                    if let Some(b) = self.buckets.get(&(cx, cy)) {
                        ids.extend_from_slice(b);
                    }
                }
            }
        }
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// Dual-form road network `G = (R, A)`.
///
/// Adjacency is stored as sorted neighbour lists; `adjacent(i, j)` is the
/// binary matrix entry `A[i][j]`.
#[derive(Debug, Clone)]
pub struct RoadGraph {
    segments: Vec<RoadSegment>,
    neighbors: Vec<Vec<usize>>,
    successors: Vec<Vec<usize>>,
    index: SpatialIndex,
}

impl RoadGraph {
    /// Splits `roads` to at most 25 m and converts the result to dual form.
    pub fn build(roads: &[RawRoad], defaults: &RoadDefaults) -> Result<Self, GraphError> {
        Self::to_dual_graph(&split_segments(roads, MAX_SEGMENT_LENGTH), defaults)
    }

    /// One node per road; undirected edge iff two roads share an endpoint;
    /// directed edge `i → j` iff a vehicle leaving `i` at the shared point
    /// may legally enter `j` there.
    pub fn to_dual_graph(roads: &[RawRoad], defaults: &RoadDefaults) -> Result<Self, GraphError> {
        if roads.is_empty() {
            return Err(GraphError::Empty);
        }
        let segments = roads
            .iter()
            .enumerate()
            .map(|(id, r)| {
                Ok(RoadSegment {
                    id,
                    geometry: Segment::new(r.a, r.b)?,
                    lanes: f64::from(r.lanes.unwrap_or(defaults.lanes)),
                    max_speed: r.max_speed.unwrap_or(defaults.max_speed),
                    road_type: RoadType::from_tag(&r.road_type),
                    oneway: r.oneway.unwrap_or(defaults.oneway),
                    source: r.source,
                })
            })
            .collect::<Result<Vec<_>, GraphError>>()?;

        let mut at_point: HashMap<(u64, u64), Vec<(usize, End)>> = HashMap::new();
        for s in &segments {
            at_point
                .entry(point_key(&s.geometry.a))
                .or_default()
                .push((s.id, End::Start));
            at_point
                .entry(point_key(&s.geometry.b))
                .or_default()
                .push((s.id, End::Finish));
        }

        let n = segments.len();
        let mut neighbors = vec![Vec::new(); n];
        let mut successors = vec![Vec::new(); n];
        for ends in at_point.values() {
            for &(i, end_i) in ends {
                for &(j, end_j) in ends {
                    if i == j {
                        continue;
                    }
                    neighbors[i].push(j);
                    let may_exit = !segments[i].oneway || end_i == End::Finish;
                    let may_enter = !segments[j].oneway || end_j == End::Start;
                    if may_exit && may_enter {
                        successors[i].push(j);
                    }
                }
            }
        }
        for list in neighbors.iter_mut().chain(successors.iter_mut()) {
            list.sort_unstable();
            list.dedup();
        }
        let index = SpatialIndex::build(&segments, FOV_RADIUS);
        Ok(Self {
            segments,
            neighbors,
            successors,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn segments(&self) -> &[RoadSegment] {
        &self.segments
    }

    pub fn segment(&self, id: usize) -> Result<&RoadSegment, GraphError> {
        self.segments.get(id).ok_or(GraphError::UnknownSegment(id))
    }

    /// Undirected neighbours of `id` (sorted).
    pub fn neighbors(&self, id: usize) -> &[usize] {
        &self.neighbors[id]
    }

    /// Segments legally reachable from `id` in one hop (sorted).
    pub fn successors(&self, id: usize) -> &[usize] {
        &self.successors[id]
    }

    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    pub fn directed_adjacent(&self, i: usize, j: usize) -> bool {
        self.successors[i].binary_search(&j).is_ok()
    }

    /// Undirected adjacency restricted to `ids`, as local neighbour lists
    /// (indices into `ids`).
    pub fn subgraph_neighbors(&self, ids: &[usize]) -> Vec<Vec<usize>> {
        let local: HashMap<usize, usize> = ids.iter().enumerate().map(|(k, &id)| (id, k)).collect();
        ids.iter()
            .map(|&id| {
                let mut v: Vec<usize> = self.neighbors[id]
                    .iter()
                    .filter_map(|n| local.get(n).copied())
                    .collect();
                v.sort_unstable();
                v
            })
            .collect()
    }

    /// Segments reachable from `r` in at most `k` directed hops, including
    /// `r` itself. Sorted by id.
    pub fn k_hop(&self, r: usize, k: usize) -> Result<Vec<usize>, GraphError> {
        if r >= self.len() {
            return Err(GraphError::UnknownSegment(r));
        }
        let mut depth = vec![usize::MAX; self.len()];
        let mut out = vec![r];
        let mut queue = VecDeque::from([r]);
        depth[r] = 0;
        while let Some(u) = queue.pop_front() {
            if depth[u] == k {
                continue;
            }
            for &v in &self.successors[u] {
                if depth[v] == usize::MAX {
                    depth[v] = depth[u] + 1;
                    out.push(v);
                    queue.push_back(v);
                }
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    /// Precomputed `k_hop(r, k)` for every segment.
    pub fn k_hop_table(&self, k: usize) -> KHopTable {
        KHopTable {
            k,
            reach: (0..self.len())
                .map(|r| self.k_hop(r, k).expect("id in range"))
                .collect(),
        }
    }

    /// Ids of segments within `radius` of `pos`, sorted by id, capped at
    /// [`FOV_CAP`] nearest.
    pub fn field_of_view(&self, pos: &EnuPoint, radius: f64) -> Vec<usize> {
        self.field_of_view_capped(pos, radius, FOV_CAP)
    }

    pub fn field_of_view_capped(&self, pos: &EnuPoint, radius: f64, cap: usize) -> Vec<usize> {
        assert!(radius > 0.0, "radius must be positive");
        let mut hits: Vec<(f64, usize)> = self
            .index
            .query(pos, radius)
            .into_iter()
            .filter_map(|id| {
                let d = point_segment_distance(pos, &self.segments[id].geometry);
                (d <= radius).then_some((d, id))
            })
            .collect();
        if hits.len() > cap {
            hits.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            hits.truncate(cap);
        }
        let mut ids: Vec<usize> = hits.into_iter().map(|(_, id)| id).collect();
        ids.sort_unstable();
        ids
    }
}

/// `k_hop` sets for every segment of a graph.
#[derive(Debug, Clone)]
pub struct KHopTable {
    k: usize,
    reach: Vec<Vec<usize>>,
}

impl KHopTable {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn reachable(&self, from: usize) -> &[usize] {
        &self.reach[from]
    }

    pub fn allows(&self, from: usize, to: usize) -> bool {
        self.reach[from].binary_search(&to).is_ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{seq::SliceRandom, Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn road(ax: f64, ay: f64, bx: f64, by: f64) -> RawRoad {
        RawRoad {
            a: EnuPoint::horizontal(ax, ay),
            b: EnuPoint::horizontal(bx, by),
            lanes: None,
            max_speed: None,
            road_type: "residential".into(),
            oneway: None,
            source: 0,
        }
    }

    fn dual(roads: &[RawRoad]) -> RoadGraph {
        RoadGraph::to_dual_graph(roads, &RoadDefaults::default()).unwrap()
    }

    #[test]
    fn split_examples() {
        let pieces = split_segments(&[road(0.0, 0.0, 60.0, 0.0)], 25.0);
        assert_eq!(pieces.len(), 3);
        for p in &pieces {
            assert!((p.length() - 20.0).abs() < 1e-12);
        }
        assert_eq!(pieces[0].b, pieces[1].a);
        assert_eq!(pieces[1].b, pieces[2].a);

        assert_eq!(split_segments(&[road(0.0, 0.0, 0.0, 25.0)], 25.0).len(), 1);

        let pieces = split_segments(&[road(0.0, 0.0, 501.0, 0.0)], 25.0);
        assert_eq!(pieces.len(), 21);
        let total: f64 = pieces.iter().map(RawRoad::length).sum();
        assert!((total - 501.0).abs() < 1e-9);
        for p in &pieces {
            assert!((p.length() - 501.0 / 21.0).abs() < 1e-9);
        }
    }

    #[test]
    fn dual_two_segments() {
        let g = dual(&[road(0.0, 0.0, 10.0, 0.0), road(10.0, 0.0, 10.0, 10.0)]);
        assert!(g.adjacent(0, 1) && g.adjacent(1, 0));
        assert!(!g.adjacent(0, 0) && !g.adjacent(1, 1));
    }

    #[test]
    fn dual_parallel_roads_scenario() {
        // r0 and r1 parallel, r2 continues r1
        let g = dual(&[
            road(0.0, 10.0, 50.0, 10.0),
            road(0.0, 0.0, 50.0, 0.0),
            road(50.0, 0.0, 80.0, -30.0),
        ]);
        assert!(g.adjacent(1, 2));
        assert!(!g.adjacent(0, 1));
        assert!(!g.adjacent(0, 2));
    }

    #[test]
    fn oneway_directed_edges() {
        let mut r0 = road(0.0, 0.0, 10.0, 0.0);
        r0.oneway = Some(true);
        let r1 = road(10.0, 0.0, 20.0, 0.0);
        let mut r2 = road(10.0, 10.0, 10.0, 0.0);
        r2.oneway = Some(true);
        let g = dual(&[r0, r1, r2]);
        // leave r0 at its end, enter r1 (two-way)
        assert!(g.directed_adjacent(0, 1));
        // cannot enter r0 at its end
        assert!(!g.directed_adjacent(1, 0));
        // r2 ends at the junction: may exit into r1 but nothing may enter it there
        assert!(g.directed_adjacent(2, 1));
        assert!(!g.directed_adjacent(1, 2));
        assert!(!g.directed_adjacent(0, 2));
        assert!(!g.directed_adjacent(2, 0));
        for i in 0..3 {
            for &j in g.successors(i) {
                assert!(g.adjacent(i, j));
            }
        }
    }

    fn random_primal(rng: &mut ChaCha8Rng, edges: usize) -> Vec<RawRoad> {
        let nodes: Vec<EnuPoint> = (0..20)
            .map(|_| EnuPoint::horizontal(rng.gen_range(0..10) as f64 * 20.0, rng.gen_range(0..10) as f64 * 20.0))
            .collect();
        let mut roads = Vec::new();
        while roads.len() < edges {
            let a = nodes[rng.gen_range(0..nodes.len())];
            let b = nodes[rng.gen_range(0..nodes.len())];
            if a == b {
                continue;
            }
            let mut r = road(a.east, a.north, b.east, b.north);
            r.oneway = Some(rng.gen_bool(0.3));
            r.source = roads.len();
            roads.push(r);
        }
        roads
    }

    #[test]
    fn dual_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let roads = random_primal(&mut rng, 50);
            let g = dual(&roads);
            for i in 0..roads.len() {
                for j in 0..roads.len() {
                    let shared = i != j
                        && [roads[i].a, roads[i].b]
                            .iter()
                            .any(|p| *p == roads[j].a || *p == roads[j].b);
                    assert_eq!(g.adjacent(i, j), shared, "({i},{j})");
                    let legal = i != j
                        && [(roads[i].b, true), (roads[i].a, false)].iter().any(|(p, at_end)| {
                            let exit_ok = !roads[i].oneway.unwrap() || *at_end;
                            exit_ok
                                && ((*p == roads[j].a)
                                    || (*p == roads[j].b && !roads[j].oneway.unwrap()))
                        });
                    assert_eq!(g.directed_adjacent(i, j), legal, "directed ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn k_hop_examples() {
        let g = dual(&[
            road(0.0, 0.0, 10.0, 0.0),
            road(10.0, 0.0, 20.0, 0.0),
            road(20.0, 0.0, 30.0, 0.0),
            road(30.0, 0.0, 40.0, 0.0),
        ]);
        assert_eq!(g.k_hop(1, 0).unwrap(), vec![1]);
        assert_eq!(g.k_hop(0, 2).unwrap(), vec![0, 1, 2]);
        assert_eq!(g.k_hop(9, 1), Err(GraphError::UnknownSegment(9)));
    }

    fn bfs_oracle(g: &RoadGraph, r: usize, k: usize) -> BTreeSet<usize> {
        let mut frontier = BTreeSet::from([r]);
        let mut seen = frontier.clone();
        for _ in 0..k {
            let next: BTreeSet<usize> = frontier
                .iter()
                .flat_map(|&u| g.successors(u).iter().copied())
                .filter(|v| !seen.contains(v))
                .collect();
            seen.extend(next.iter().copied());
            frontier = next;
        }
        seen
    }

    #[test]
    fn k_hop_matches_bfs_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let roads = random_primal(&mut rng, 40);
        let g = dual(&roads);
        for r in 0..g.len() {
            for k in 0..=3 {
                let got: BTreeSet<usize> = g.k_hop(r, k).unwrap().into_iter().collect();
                assert_eq!(got, bfs_oracle(&g, r, k));
            }
        }
    }

    #[test]
    fn field_of_view_examples() {
        let g = dual(&[road(0.0, 0.0, 20.0, 0.0), road(0.0, 200.0, 20.0, 200.0), road(300.0, 0.0, 300.0, 20.0)]);
        assert_eq!(g.field_of_view(&EnuPoint::horizontal(10.0, 3.0), 50.0), vec![0]);
        assert!(g.field_of_view(&EnuPoint::horizontal(150.0, 100.0), 20.0).is_empty());
    }

    #[test]
    fn field_of_view_matches_linear_scan() {
        let mut roads = Vec::new();
        for i in 0..8 {
            let x = i as f64 * 60.0;
            roads.push(road(x, 0.0, x, 420.0));
            roads.push(road(0.0, x, 420.0, x));
        }
        let g = RoadGraph::build(&roads, &RoadDefaults::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..300 {
            let p = EnuPoint::horizontal(rng.gen_range(-60.0..480.0), rng.gen_range(-60.0..480.0));
            let radius = rng.gen_range(1.0..120.0);
            let scan: Vec<usize> = g
                .segments()
                .iter()
                .filter(|s| point_segment_distance(&p, &s.geometry) <= radius)
                .map(|s| s.id)
                .collect();
            assert_eq!(g.field_of_view_capped(&p, radius, usize::MAX), scan);
        }
    }

    #[test]
    fn field_of_view_cap_keeps_nearest() {
        let roads: Vec<RawRoad> = (0..10).map(|i| road(0.0, i as f64 * 3.0, 20.0, i as f64 * 3.0)).collect();
        let g = dual(&roads);
        let ids = g.field_of_view_capped(&EnuPoint::horizontal(10.0, 0.0), 100.0, 3);
        assert_eq!(ids, vec![0, 1, 2]);
    }

    #[test]
    fn split_pieces_consecutively_adjacent() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let roads = random_primal(&mut rng, 30);
        let split = split_segments(&roads, MAX_SEGMENT_LENGTH);
        let g = dual(&split);
        for w in (0..split.len()).collect::<Vec<_>>().windows(2) {
            if split[w[0]].source == split[w[1]].source {
                assert!(g.adjacent(w[0], w[1]));
            }
        }
        assert!(g.segments().iter().all(|s| s.geometry.length <= MAX_SEGMENT_LENGTH + 1e-9));
    }

    #[test]
    fn adjacency_invariant_to_input_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let roads = random_primal(&mut rng, 40);
        let g = dual(&roads);
        let mut perm: Vec<usize> = (0..roads.len()).collect();
        perm.shuffle(&mut rng);
        let shuffled: Vec<RawRoad> = perm.iter().map(|&i| roads[i].clone()).collect();
        let h = dual(&shuffled);
        for i in 0..roads.len() {
            for j in 0..roads.len() {
                assert_eq!(h.adjacent(i, j), g.adjacent(perm[i], perm[j]));
                assert_eq!(h.directed_adjacent(i, j), g.directed_adjacent(perm[i], perm[j]));
            }
        }
    }

    #[test]
    fn defaults_and_one_hot() {
        let g = dual(&[road(0.0, 0.0, 10.0, 0.0)]);
        let s = &g.segments()[0];
        assert_eq!(s.lanes, 1.0);
        assert_eq!(s.max_speed, 13.9);
        assert!(!s.oneway);
        assert_eq!(RoadType::from_tag("via_ferrata"), RoadType::Other);
        assert_eq!(RoadType::from_tag("living_street").tag(), "living_street");
        for t in ["motorway", "service", "cycleway"] {
            let oh = RoadType::from_tag(t).one_hot();
            assert_eq!(oh.iter().sum::<f64>(), 1.0);
        }
    }

    proptest! {
        #[test]
        fn k_hop_monotone_and_graph_symmetric(seed in 0u64..500, k in 0usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = dual(&random_primal(&mut rng, 25));
            for r in 0..g.len() {
                let small = g.k_hop(r, k).unwrap();
                let big = g.k_hop(r, k + 1).unwrap();
                prop_assert!(small.iter().all(|x| big.binary_search(x).is_ok()));
                for &n in g.neighbors(r) {
                    prop_assert!(g.adjacent(n, r));
                    prop_assert!(n != r);
                }
            }
        }
    }
}
