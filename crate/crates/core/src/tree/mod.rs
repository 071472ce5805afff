//! True broken flow trees: vertex matching, minimal representatives and
//! combinatorial types.

mod audit;
pub mod document;
mod limit;

use std::fmt::Write as _;
use std::sync::Arc;

use serde::Serialize;

use crate::broken::{assemble, BrokenFlow, Family};
use crate::error::{Error, Result};
use crate::flow::{EndEvent, MaximalFlow};
use crate::scenario::{Scenario, SheetId};
use crate::Point;

pub use audit::{
    audit_convergence_structure, fg_open_check, AuditFamily, AuditReport, AxiomResult, DoubleSequence, LimitOracle,
    OpenCheckReport, SfgOracle, TreeSequence, Verdict,
};
pub use limit::{is_sfg_limit, stratum_limit, LimitOptions, StratumLimit};

/// A finite tree with a cyclic order of the incident edges at every vertex.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SourceTree {
    /// `(from, to)` per edge.
    pub edges: Vec<(usize, usize)>,
    /// Incident edges of each vertex, in cyclic order.
    pub orders: Vec<Vec<usize>>,
}

impl SourceTree {
    pub fn new(vertex_count: usize, edges: Vec<(usize, usize)>, orders: Vec<Vec<usize>>) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidTree(m));
        if vertex_count == 0 || edges.len() + 1 != vertex_count {
            return bad(format!("{} edges cannot form a tree on {vertex_count} vertices", edges.len()));
        }
        if orders.len() != vertex_count {
            return bad("one cyclic order per vertex required".into());
        }
        for (e, &(a, b)) in edges.iter().enumerate() {
            if a >= vertex_count || b >= vertex_count || a == b {
                return bad(format!("edge {e} has invalid endpoints ({a}, {b})"));
            }
        }
        for (v, order) in orders.iter().enumerate() {
            let mut want: Vec<usize> = (0..edges.len())
                .filter(|&e| edges[e].0 == v || edges[e].1 == v)
                .collect();
            let mut got = order.clone();
            got.sort_unstable();
            want.sort_unstable();
            if got != want {
                return bad(format!("cyclic order at vertex {v} is not a permutation of its edges"));
            }
        }
        // Connectivity; with |E| = |V| - 1 this also rules out cycles.
        let mut seen = vec![false; vertex_count];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &e in &orders[v] {
                let w = other_end(edges[e], v);
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return bad("source tree is disconnected".into());
        }
        Ok(SourceTree { edges, orders })
    }

    pub fn vertex_count(&self) -> usize {
        self.orders.len()
    }

    pub fn valence(&self, v: usize) -> usize {
        self.orders[v].len()
    }
}

fn other_end(e: (usize, usize), v: usize) -> usize {
    if e.0 == v {
        e.1
    } else {
        e.0
    }
}

/// What an edge maps to: a constant point, or the part of a broken flow
/// between two levels of its difference function.
#[derive(Debug, Clone)]
pub enum EdgeImage {
    Ghost { point: Point },
    Real { flow: BrokenFlow, f_start: f64, f_end: f64 },
}

#[derive(Debug, Clone)]
pub struct TreeEdge {
    /// `(upper, lower)` sheets of the difference function.
    pub pair: (SheetId, SheetId),
    pub image: EdgeImage,
}

impl TreeEdge {
    pub fn is_ghost(&self) -> bool {
        matches!(self.image, EdgeImage::Ghost { .. })
    }

    /// Image of the start (`at_end = false`) or end of the edge.
    pub fn endpoint(&self, at_end: bool) -> Option<Point> {
        match &self.image {
            EdgeImage::Ghost { point } => Some(*point),
            EdgeImage::Real { flow, f_start, f_end } => {
                flow.point_at_level(if at_end { *f_end } else { *f_start })
            }
        }
    }

    pub fn flow(&self) -> Option<&BrokenFlow> {
        match &self.image {
            EdgeImage::Real { flow, .. } => Some(flow),
            EdgeImage::Ghost { .. } => None,
        }
    }
}

/// A map of a source tree whose edges are parts of broken flows or constant.
#[derive(Debug, Clone)]
pub struct BrokenFlowTree {
    pub scenario: Arc<Scenario>,
    pub source: SourceTree,
    pub edges: Vec<TreeEdge>,
    pub vertices: Vec<Point>,
}

impl PartialEq for BrokenFlowTree {
    fn eq(&self, other: &Self) -> bool {
        self.source == other.source
            && self.vertices == other.vertices
            && self.edges.len() == other.edges.len()
            && self.edges.iter().zip(&other.edges).all(|(a, b)| edges_identical(a, b))
    }
}

fn flows_identical(a: &MaximalFlow, b: &MaximalFlow) -> bool {
    a.field().upper == b.field().upper
        && a.field().lower == b.field().lower
        && a.start == b.start
        && a.end == b.end
        && a.nodes.len() == b.nodes.len()
        && a.nodes.iter().zip(&b.nodes).all(|(p, q)| p.t == q.t && p.x == q.x && p.f == q.f)
}

fn broken_identical(a: &BrokenFlow, b: &BrokenFlow) -> bool {
    a.family == b.family
        && a.chain == b.chain
        && a.segments.len() == b.segments.len()
        && a.segments.iter().zip(&b.segments).all(|(x, y)| flows_identical(x, y))
}

fn edges_identical(a: &TreeEdge, b: &TreeEdge) -> bool {
    a.pair == b.pair
        && match (&a.image, &b.image) {
            (EdgeImage::Ghost { point: p }, EdgeImage::Ghost { point: q }) => p == q,
            (
                EdgeImage::Real { flow: f, f_start: s, f_end: e },
                EdgeImage::Real { flow: g, f_start: s2, f_end: e2 },
            ) => s == s2 && e == e2 && broken_identical(f, g),
            _ => false,
        }
}

/// Family of the broken flow formed by these segments, read off its ends.
pub(crate) fn family_of_segments(segs: &[MaximalFlow]) -> Option<Family> {
    let start = match segs.first()?.start {
        EndEvent::Critical { id, .. } => Some(id),
        EndEvent::FoldHit { .. } => None,
        _ => return None,
    };
    let end = match segs.last()?.end {
        EndEvent::Critical { id, .. } => Some(id),
        EndEvent::FoldHit { .. } => None,
        _ => return None,
    };
    Some(match (start, end) {
        (Some(from), Some(to)) => Family::Morse { from, to },
        (None, Some(to)) => Family::FoldEmanating { to },
        (Some(from), None) => Family::FoldTerminating { from },
        (None, None) => Family::Singular,
    })
}

/// Residuals of the matching condition for one consecutive pair of edges.
#[derive(Debug, Clone, Serialize)]
pub struct PairResidual {
    pub edges: (usize, usize),
    /// Largest distance from an edge endpoint to the vertex image.
    pub position_gap: f64,
    /// Distance between the arriving and leaving cotangent points.
    pub cotangent_gap: f64,
    /// False when the strands only match with both toward or both away.
    pub orientation_ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VertexDiagnostics {
    pub vertex: usize,
    pub point: Point,
    pub pairs: Vec<PairResidual>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub vertices: Vec<VertexDiagnostics>,
    pub loop_closed: bool,
    pub max_residual: f64,
    pub valid: bool,
}

impl BrokenFlowTree {
    pub fn new(scenario: Arc<Scenario>, source: SourceTree, edges: Vec<TreeEdge>, vertices: Vec<Point>) -> Result<Self> {
        if edges.len() != source.edges.len() || vertices.len() != source.vertex_count() {
            return Err(Error::InvalidTree("edge or vertex data does not match the source tree".into()));
        }
        for (k, e) in edges.iter().enumerate() {
            if let EdgeImage::Real { flow, f_start, f_end } = &e.image {
                let (hi, lo) = flow.f_range();
                let tol = 1e-9 * (1.0 + hi.abs().max(lo.abs()));
                if (flow.field().upper, flow.field().lower) != e.pair {
                    return Err(Error::InvalidTree(format!("edge {k}: flow field does not match its pair")));
                }
                if !(f_start > f_end && *f_start <= hi + tol && *f_end >= lo - tol) {
                    return Err(Error::InvalidTree(format!(
                        "edge {k}: levels [{f_end}, {f_start}] are not a part of the flow's range [{lo}, {hi}]"
                    )));
                }
            }
        }
        Ok(BrokenFlowTree {
            scenario,
            source,
            edges,
            vertices,
        })
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Sheet of the strand of edge `e` arriving at (`toward`) or leaving `v`.
    /// The upper lift runs along the flow and the lower lift against it.
    fn strand_sheet(&self, e: usize, v: usize, toward: bool) -> SheetId {
        let flow_ends_here = self.source.edges[e].1 == v;
        let (upper, lower) = self.edges[e].pair;
        if flow_ends_here == toward {
            upper
        } else {
            lower
        }
    }

    fn covector(&self, sheet: SheetId, x: &Point) -> Option<Point> {
        let s = self.scenario.sheet(sheet).ok()?;
        s.eval(x, self.scenario.dim()).ok().map(|(_, g)| g)
    }

    /// Matching residuals at every vertex and the loop-closure verdict.
    pub fn validate(&self, tol: f64) -> Diagnostics {
        let dim = self.scenario.dim();
        let gap = |a: Option<Point>, b: Option<Point>| match (a, b) {
            (Some(a), Some(b)) => (0..dim).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt(),
            _ => f64::INFINITY,
        };
        let chart = &self.scenario.chart;
        let mut vertices = Vec::new();
        let mut max_residual: f64 = 0.0;
        let mut all_ok = true;
        for (v, order) in self.source.orders.iter().enumerate() {
            let x = self.vertices[v];
            let k = order.len();
            let mut pairs = Vec::new();
            for j in 0..k {
                let (e1, e2) = (order[j], order[(j + 1) % k]);
                let pos = |e: usize| {
                    let at_end = self.source.edges[e].1 == v;
                    self.edges[e].endpoint(at_end).map_or(f64::INFINITY, |p| chart.dist(&p, &x))
                };
                let position_gap = pos(e1).max(pos(e2));
                let cov = |e: usize, toward: bool| self.covector(self.strand_sheet(e, v, toward), &x);
                let cotangent_gap = gap(cov(e1, true), cov(e2, false));
                let flipped = gap(cov(e1, true), cov(e2, true)).min(gap(cov(e1, false), cov(e2, false)));
                let orientation_ok = cotangent_gap <= tol || flipped > tol;
                max_residual = max_residual.max(position_gap).max(cotangent_gap);
                all_ok &= position_gap <= tol && cotangent_gap <= tol && orientation_ok;
                pairs.push(PairResidual {
                    edges: (e1, e2),
                    position_gap,
                    cotangent_gap,
                    orientation_ok,
                });
            }
            vertices.push(VertexDiagnostics { vertex: v, point: x, pairs });
        }
        let loop_closed = self.loop_closes();
        Diagnostics {
            vertices,
            loop_closed,
            max_residual,
            valid: all_ok && loop_closed,
        }
    }

    /// Walk the cotangent strands: arriving at `v` along edge `e_j`, leave
    /// along `e_{j+1}`. The lifts form one oriented loop iff every strand is
    /// visited before returning.
    fn loop_closes(&self) -> bool {
        let n = self.edges.len();
        if n == 0 {
            return false;
        }
        // A strand is (edge, upper); the upper strand runs from -> to.
        let mut seen = vec![[false; 2]; n];
        let (mut e, mut upper) = (0usize, true);
        for _ in 0..2 * n {
            if seen[e][upper as usize] {
                return false;
            }
            seen[e][upper as usize] = true;
            let (a, b) = self.source.edges[e];
            let v = if upper { b } else { a };
            let order = &self.source.orders[v];
            let j = order.iter().position(|&x| x == e).expect("incident");
            let next = order[(j + 1) % order.len()];
            upper = self.source.edges[next].0 == v;
            e = next;
        }
        e == 0 && upper && seen.iter().all(|s| s[0] && s[1])
    }

    /// Minimal representative in canonical numbering.
    pub fn minimal_representative(&self) -> BrokenFlowTree {
        let mut t = self.clone();
        loop {
            if let Some(e) = t.edges.iter().position(TreeEdge::is_ghost) {
                if t.edges.len() > 1 {
                    t = t.contract(e);
                    continue;
                }
            }
            if let Some(next) = (0..t.vertices.len()).find_map(|v| t.splice(v)) {
                t = next;
                continue;
            }
            break;
        }
        t.canonical()
    }

    /// Remove ghost edge `e`, merging its far endpoint into its near one.
    fn contract(&self, e: usize) -> BrokenFlowTree {
        let (a, b) = self.source.edges[e];
        let mut orders = self.source.orders.clone();
        let ob = &self.source.orders[b];
        let jb = ob.iter().position(|&x| x == e).expect("incident");
        let tail: Vec<usize> = (1..ob.len()).map(|i| ob[(jb + i) % ob.len()]).collect();
        let ja = orders[a].iter().position(|&x| x == e).expect("incident");
        orders[a].splice(ja..=ja, tail);
        let mut edges = self.source.edges.clone();
        for ed in edges.iter_mut() {
            if ed.0 == b {
                ed.0 = a;
            }
            if ed.1 == b {
                ed.1 = a;
            }
        }
        self.rebuild(edges, orders, &[e], &[b], Vec::new())
    }

    /// Remove a removable 2-valent vertex, splicing its two edges.
    fn splice(&self, v: usize) -> Option<BrokenFlowTree> {
        let order = &self.source.orders[v];
        if order.len() != 2 {
            return None;
        }
        let (mut e1, mut e2) = (order[0], order[1]);
        if self.source.edges[e1].1 != v {
            std::mem::swap(&mut e1, &mut e2);
        }
        if self.source.edges[e1].1 != v || self.source.edges[e2].0 != v {
            return None;
        }
        let (a, b) = (&self.edges[e1], &self.edges[e2]);
        if a.pair != b.pair {
            return None;
        }
        let (
            EdgeImage::Real { flow: f1, f_start: s1, f_end: t1 },
            EdgeImage::Real { flow: f2, f_start: s2, f_end: t2 },
        ) = (&a.image, &b.image)
        else {
            return None;
        };
        let scale = 1.0 + s1.abs().max(t2.abs());
        if (t1 - s2).abs() > 1e-9 * scale {
            return None;
        }
        let merged = if broken_identical(f1, f2) || f1.same_as(f2, 1e-6) {
            f1.clone()
        } else {
            // Breaking at a critical point shared by the two flows.
            let ends_at = matches!(f1.segments.last()?.end, EndEvent::Critical { .. });
            let starts_at = matches!(f2.segments.first()?.start, EndEvent::Critical { .. });
            if !(ends_at && starts_at) || (f1.f_range().1 - t1).abs() > 1e-9 * scale {
                return None;
            }
            let segs: Vec<MaximalFlow> = f1.segments.iter().chain(&f2.segments).cloned().collect();
            assemble(family_of_segments(&segs)?, segs).ok()?
        };
        let new_edge = TreeEdge {
            pair: a.pair,
            image: EdgeImage::Real {
                flow: merged,
                f_start: *s1,
                f_end: *t2,
            },
        };
        let from = self.source.edges[e1].0;
        let to = self.source.edges[e2].1;
        let mut orders = self.source.orders.clone();
        let mut edges = self.source.edges.clone();
        edges[e1] = (from, to);
        for x in orders[to].iter_mut() {
            if *x == e2 {
                *x = e1;
            }
        }
        orders[v].clear();
        Some(self.rebuild(edges, orders, &[e2], &[v], vec![(e1, new_edge)]))
    }

    /// Drop edges and vertices, replace edge images, and renumber compactly.
    fn rebuild(
        &self,
        edges: Vec<(usize, usize)>,
        orders: Vec<Vec<usize>>,
        drop_edges: &[usize],
        drop_vertices: &[usize],
        replace: Vec<(usize, TreeEdge)>,
    ) -> BrokenFlowTree {
        let mut data = self.edges.clone();
        for (e, d) in replace {
            data[e] = d;
        }
        let emap: Vec<Option<usize>> = {
            let mut k = 0;
            (0..edges.len())
                .map(|e| {
                    (!drop_edges.contains(&e)).then(|| {
                        k += 1;
                        k - 1
                    })
                })
                .collect()
        };
        let vmap: Vec<Option<usize>> = {
            let mut k = 0;
            (0..orders.len())
                .map(|v| {
                    (!drop_vertices.contains(&v)).then(|| {
                        k += 1;
                        k - 1
                    })
                })
                .collect()
        };
        let new_edges: Vec<(usize, usize)> = (0..edges.len())
            .filter(|&e| emap[e].is_some())
            .map(|e| (vmap[edges[e].0].expect("kept"), vmap[edges[e].1].expect("kept")))
            .collect();
        let new_orders: Vec<Vec<usize>> = (0..orders.len())
            .filter(|&v| vmap[v].is_some())
            .map(|v| orders[v].iter().filter_map(|&e| emap[e]).collect())
            .collect();
        let new_data: Vec<TreeEdge> = (0..edges.len()).filter(|&e| emap[e].is_some()).map(|e| data[e].clone()).collect();
        let new_vertices: Vec<Point> = (0..orders.len())
            .filter(|&v| vmap[v].is_some())
            .map(|v| self.vertices[v])
            .collect();
        BrokenFlowTree {
            scenario: self.scenario.clone(),
            source: SourceTree {
                edges: new_edges,
                orders: new_orders,
            },
            edges: new_data,
            vertices: new_vertices,
        }
    }

    /// Depth-first walk from `root`, starting at position `start` of its
    /// cyclic order; children are entered just after their parent edge.
    fn walk(&self, root: usize, start: usize) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
        let mut vorder = vec![];
        let mut eorder = vec![];
        let mut rot = vec![0; self.vertices.len()];
        let mut stack = vec![(root, usize::MAX, start)];
        while let Some((v, parent, s)) = stack.pop() {
            vorder.push(v);
            rot[v] = s;
            let order = &self.source.orders[v];
            let k = order.len();
            let mut kids = Vec::new();
            for i in 0..k {
                let e = order[(s + i) % k];
                if e == parent {
                    continue;
                }
                eorder.push(e);
                let w = other_end(self.source.edges[e], v);
                let pos = self.source.orders[w].iter().position(|&x| x == e).expect("incident");
                kids.push((w, e, pos));
            }
            // Depth first, in cyclic order.
            for kid in kids.into_iter().rev() {
                stack.push(kid);
            }
        }
        (vorder, eorder, rot)
    }

    fn edge_gamma_token(&self, e: usize) -> String {
        let d = &self.edges[e];
        match &d.image {
            EdgeImage::Ghost { .. } => format!("F{}{}:ghost", d.pair.0, d.pair.1),
            EdgeImage::Real { flow, .. } => {
                let fold = |f: Option<crate::flow::FoldPoint>| f.map_or(String::new(), |f| format!("@fold{}", f.component));
                format!(
                    "F{}{}:{}{}{}",
                    d.pair.0,
                    d.pair.1,
                    flow.family.name(),
                    fold(flow.start_fold()),
                    fold(flow.end_fold())
                )
            }
        }
    }

    /// Non-geometric encoding of the walk (the combinatorial type's key).
    fn gamma_key(&self, root: usize, start: usize) -> (String, Vec<usize>, Vec<usize>, Vec<usize>) {
        let (vorder, eorder, rot) = self.walk(root, start);
        let mut vpos = vec![0; self.vertices.len()];
        for (i, &v) in vorder.iter().enumerate() {
            vpos[v] = i;
        }
        let mut s = String::new();
        for &v in &vorder {
            let _ = write!(s, "v{};", self.source.valence(v));
        }
        for &e in &eorder {
            let (a, b) = self.source.edges[e];
            let _ = write!(s, "e{}>{}:{};", vpos[a], vpos[b], self.edge_gamma_token(e));
        }
        (s, vorder, eorder, rot)
    }

    fn geometry_key(&self, vorder: &[usize], eorder: &[usize]) -> Vec<u64> {
        let mut key = Vec::new();
        for &v in vorder {
            key.extend(self.vertices[v].iter().map(|x| x.to_bits()));
        }
        for &e in eorder {
            match &self.edges[e].image {
                EdgeImage::Ghost { point } => key.extend(point.iter().map(|x| x.to_bits())),
                EdgeImage::Real { flow, f_start, f_end } => {
                    key.push(f_start.to_bits());
                    key.push(f_end.to_bits());
                    for s in &flow.segments {
                        if let Some(n) = s.nodes.get(s.nodes.len() / 2) {
                            key.extend(n.x.iter().map(|x| x.to_bits()));
                        }
                    }
                }
            }
        }
        key
    }

    fn walks(&self) -> Vec<(usize, usize)> {
        (0..self.vertices.len())
            .flat_map(|v| (0..self.source.valence(v).max(1)).map(move |s| (v, s)))
            .collect()
    }

    /// Renumber vertices and edges by the least walk (type first, geometry
    /// second). Cyclic orders start at the parent edge.
    pub fn canonical(&self) -> BrokenFlowTree {
        let (_, vorder, eorder, rot) = self
            .walks()
            .into_iter()
            .map(|(r, s)| {
                let (g, vo, eo, rot) = self.gamma_key(r, s);
                let geo = self.geometry_key(&vo, &eo);
                (g, geo, vo, eo, rot)
            })
            .min_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)))
            .map(|(g, _, vo, eo, rot)| (g, vo, eo, rot))
            .expect("nonempty tree");
        let mut vnew = vec![0; vorder.len()];
        for (i, &v) in vorder.iter().enumerate() {
            vnew[v] = i;
        }
        let mut enew = vec![0; eorder.len()];
        for (i, &e) in eorder.iter().enumerate() {
            enew[e] = i;
        }
        let orders = vorder
            .iter()
            .map(|&v| {
                let o = &self.source.orders[v];
                (0..o.len()).map(|i| enew[o[(rot[v] + i) % o.len()]]).collect()
            })
            .collect();
        let edges = eorder
            .iter()
            .map(|&e| {
                let (a, b) = self.source.edges[e];
                (vnew[a], vnew[b])
            })
            .collect();
        BrokenFlowTree {
            scenario: self.scenario.clone(),
            source: SourceTree { edges, orders },
            edges: eorder.iter().map(|&e| self.edges[e].clone()).collect(),
            vertices: vorder.iter().map(|&v| self.vertices[v]).collect(),
        }
    }

    /// Shape of the tree with its edge data, ignoring geometry.
    pub fn shape(&self) -> CombinatorialType {
        let key = self
            .walks()
            .into_iter()
            .map(|(r, s)| self.gamma_key(r, s).0)
            .min()
            .expect("nonempty tree");
        CombinatorialType { key }
    }

    /// The combinatorial type of the minimal representative.
    pub fn combinatorial_type(&self) -> CombinatorialType {
        self.minimal_representative().shape()
    }

    /// Edges of the minimal representative.
    pub fn minimal_edge_count(&self) -> usize {
        self.minimal_representative().edge_count()
    }
}

/// Canonical encoding of a tree's isomorphism class with per-edge field and
/// moduli-family data.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct CombinatorialType {
    pub key: String,
}

impl std::fmt::Display for CombinatorialType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.key)
    }
}

/// Helpers for building trees out of flows.
impl BrokenFlowTree {
    /// One edge carrying the whole broken flow, vertices at its ends.
    pub fn single_edge(scenario: Arc<Scenario>, flow: BrokenFlow) -> Result<BrokenFlowTree> {
        let (hi, lo) = flow.f_range();
        let pair = (flow.field().upper, flow.field().lower);
        let a = flow.segments[0].start_point();
        let b = flow.segments[flow.segments.len() - 1].end_point();
        BrokenFlowTree::new(
            scenario,
            SourceTree::new(2, vec![(0, 1)], vec![vec![0], vec![0]])?,
            vec![TreeEdge {
                pair,
                image: EdgeImage::Real {
                    flow,
                    f_start: hi,
                    f_end: lo,
                },
            }],
            vec![a, b],
        )
    }

    /// Split edge `e` at level `f` by a new 2-valent vertex.
    pub fn split_edge(&self, e: usize, f: f64) -> Result<BrokenFlowTree> {
        let EdgeImage::Real { flow, f_start, f_end } = &self.edges[e].image else {
            return Err(Error::InvalidTree(format!("edge {e} is a ghost")));
        };
        if !(f < *f_start && f > *f_end) {
            return Err(Error::InvalidTree(format!("level {f} is not interior to edge {e}")));
        }
        let p = flow
            .point_at_level(f)
            .ok_or_else(|| Error::InvalidTree(format!("edge {e} does not reach level {f}")))?;
        let (a, b) = self.source.edges[e];
        let v = self.vertices.len();
        let ne = self.edges.len();
        let mut edges = self.source.edges.clone();
        edges[e] = (a, v);
        edges.push((v, b));
        let mut orders = self.source.orders.clone();
        for x in orders[b].iter_mut() {
            if *x == e {
                *x = ne;
            }
        }
        orders.push(vec![e, ne]);
        let mut data = self.edges.clone();
        data[e].image = EdgeImage::Real {
            flow: flow.clone(),
            f_start: *f_start,
            f_end: f,
        };
        data.push(TreeEdge {
            pair: self.edges[e].pair,
            image: EdgeImage::Real {
                flow: flow.clone(),
                f_start: f,
                f_end: *f_end,
            },
        });
        let mut vertices = self.vertices.clone();
        vertices.push(p);
        BrokenFlowTree::new(
            self.scenario.clone(),
            SourceTree::new(v + 1, edges, orders)?,
            data,
            vertices,
        )
    }

    /// Insert a ghost edge at vertex `v`; a new vertex at the same point takes
    /// the `take` edges starting at position `pos` of the cyclic order. The
    /// ghost's sheets continue the strands it interrupts.
    pub fn insert_ghost(&self, v: usize, pos: usize, take: usize) -> Result<BrokenFlowTree> {
        let order = &self.source.orders[v];
        let k = order.len();
        if take == 0 || take > k {
            return Err(Error::InvalidTree("a ghost insertion moves between 1 and all edges".into()));
        }
        let moved: Vec<usize> = (0..take).map(|i| order[(pos + i) % k]).collect();
        let pair = (
            self.strand_sheet(moved[0], v, false),
            self.strand_sheet(moved[take - 1], v, true),
        );
        let stay: Vec<usize> = (take..k).map(|i| order[(pos + i) % k]).collect();
        let w = self.vertices.len();
        let g = self.edges.len();
        let mut edges = self.source.edges.clone();
        for &e in &moved {
            if edges[e].0 == v {
                edges[e].0 = w;
            }
            if edges[e].1 == v {
                edges[e].1 = w;
            }
        }
        edges.push((v, w));
        let mut orders = self.source.orders.clone();
        let mut ov = vec![g];
        ov.extend(stay);
        orders[v] = ov;
        let mut ow = moved;
        ow.push(g);
        orders.push(ow);
        let mut data = self.edges.clone();
        data.push(TreeEdge {
            pair,
            image: EdgeImage::Ghost { point: self.vertices[v] },
        });
        let mut vertices = self.vertices.clone();
        vertices.push(self.vertices[v]);
        BrokenFlowTree::new(self.scenario.clone(), SourceTree::new(w + 1, edges, orders)?, data, vertices)
    }
}

#[cfg(test)]
mod tests;
