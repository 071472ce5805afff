//! Broken gradient flows, their basis neighborhoods `W(λ, U⁻, U⁺)`, and
//! extraction of broken limits from sequences of flows.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{integrate_maximal, trace, Direction, EndEvent, FlowClass, FlowOptions, FoldPoint, HalfEnd, MaximalFlow};
use crate::morse::{default_neighborhoods, CriticalPoint, MorseNeighborhood, SphereKind};
use crate::scenario::{DifferenceField, SheetId};
use crate::Point;

/// The moduli family of a broken flow, with its fixed endpoint data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Family {
    Morse { from: usize, to: usize },
    FoldEmanating { to: usize },
    FoldTerminating { from: usize },
    Singular,
}

impl Family {
    /// Family of the unbroken flow with this class, if it has one.
    pub fn of_class(class: &FlowClass) -> Option<Family> {
        Some(match class {
            FlowClass::Morse { from, to } => Family::Morse { from: *from, to: *to },
            FlowClass::FoldEmanating { to, .. } => Family::FoldEmanating { to: *to },
            FlowClass::FoldTerminating { from, .. } => Family::FoldTerminating { from: *from },
            FlowClass::Singular { .. } => Family::Singular,
            FlowClass::ChartTruncated => return None,
        })
    }

    pub fn name(&self) -> String {
        match self {
            Family::Morse { from, to } => format!("morse({from},{to})"),
            Family::FoldEmanating { to } => format!("fold-emanating({to})"),
            Family::FoldTerminating { from } => format!("fold-terminating({from})"),
            Family::Singular => "singular".into(),
        }
    }
}

/// Start, breaking points and end of a broken flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ChainNode {
    Critical { id: usize },
    Fold(FoldPoint),
}

/// A concatenation of `q + 1` unparameterized flows meeting at critical points.
#[derive(Debug, Clone)]
pub struct BrokenFlow {
    pub family: Family,
    pub segments: Vec<MaximalFlow>,
    /// Interior critical points `c_1 … c_q`.
    pub chain: Vec<usize>,
}

fn end_node(e: &EndEvent) -> Option<ChainNode> {
    match e {
        EndEvent::Critical { id, .. } => Some(ChainNode::Critical { id: *id }),
        EndEvent::FoldHit { component, point, .. } => Some(ChainNode::Fold(FoldPoint {
            component: *component,
            point: *point,
        })),
        _ => None,
    }
}

fn reject(msg: impl Into<String>) -> Error {
    Error::InvalidBrokenFlow(msg.into())
}

/// Validate and assemble a broken flow.
pub fn assemble(family: Family, segments: Vec<MaximalFlow>) -> Result<BrokenFlow> {
    let Some(first) = segments.first() else {
        return Err(reject("no segments"));
    };
    let field = first.field().clone();
    if segments
        .iter()
        .any(|s| s.field().upper != field.upper || s.field().lower != field.lower)
    {
        return Err(reject("segments belong to different difference fields"));
    }
    if segments.iter().any(|s| s.constant) {
        return Err(reject("constant segment"));
    }
    let crit = field.critical_points()?;
    let n = segments.len();
    if n > crit.len().max(1) {
        return Err(reject(format!(
            "{n} segments exceed the {} critical points of the field",
            crit.len()
        )));
    }
    // Morse indices of every critical endpoint, in flow order.
    let mut seq: Vec<usize> = Vec::new();
    for s in &segments {
        for e in [&s.start, &s.end] {
            if let EndEvent::Critical { id, .. } = e {
                if seq.last() != Some(id) {
                    seq.push(*id);
                }
            }
        }
    }
    for w in seq.windows(2) {
        let (a, b) = (&crit[w[0]], &crit[w[1]]);
        if a.index <= b.index {
            return Err(reject(format!(
                "Morse index does not decrease from critical point {} (index {}) to {} (index {})",
                a.id, a.index, b.id, b.index
            )));
        }
    }
    let mut chain = Vec::new();
    for k in 0..n - 1 {
        match (&segments[k].end, &segments[k + 1].start) {
            (EndEvent::Critical { id: a, .. }, EndEvent::Critical { id: b, .. }) if a == b => chain.push(*a),
            _ => {
                return Err(reject(format!(
                    "segment {k} does not end at the critical point where segment {} starts",
                    k + 1
                )))
            }
        }
    }
    let class_ok = |k: usize, want: &str| segments[k].class.name() == want;
    let pattern: Vec<&str> = match family {
        Family::Morse { .. } => vec!["morse"; n],
        Family::FoldEmanating { .. } => (0..n).map(|k| if k == 0 { "fold-emanating" } else { "morse" }).collect(),
        Family::FoldTerminating { .. } => (0..n)
            .map(|k| if k == n - 1 { "fold-terminating" } else { "morse" })
            .collect(),
        Family::Singular if n == 1 => vec!["singular"],
        Family::Singular => (0..n)
            .map(|k| match k {
                0 => "fold-emanating",
                k if k == n - 1 => "fold-terminating",
                _ => "morse",
            })
            .collect(),
    };
    for (k, want) in pattern.iter().enumerate() {
        if !class_ok(k, want) {
            return Err(reject(format!(
                "segment {k} is {} but the {} family needs {want}",
                segments[k].class.name(),
                family.name()
            )));
        }
    }
    let start_id = match &segments[0].start {
        EndEvent::Critical { id, .. } => Some(*id),
        _ => None,
    };
    let end_id = match &segments[n - 1].end {
        EndEvent::Critical { id, .. } => Some(*id),
        _ => None,
    };
    let ends_ok = match family {
        Family::Morse { from, to } => start_id == Some(from) && end_id == Some(to),
        Family::FoldEmanating { to } => end_id == Some(to),
        Family::FoldTerminating { from } => start_id == Some(from),
        Family::Singular => true,
    };
    if !ends_ok {
        return Err(reject(format!("endpoints do not match the {} family", family.name())));
    }
    Ok(BrokenFlow {
        family,
        segments,
        chain,
    })
}

impl BrokenFlow {
    /// The 0-times broken flow of a single classified flow.
    pub fn unbroken(flow: MaximalFlow) -> Result<BrokenFlow> {
        let family = Family::of_class(&flow.class)
            .ok_or_else(|| reject("chart-truncated flows belong to no family"))?;
        assemble(family, vec![flow])
    }

    pub fn field(&self) -> &DifferenceField {
        self.segments[0].field()
    }

    /// Number of breakings `q`.
    pub fn q(&self) -> usize {
        self.chain.len()
    }

    pub fn nodes(&self) -> Vec<ChainNode> {
        let mut out = vec![end_node(&self.segments[0].start).expect("validated start")];
        out.extend(self.chain.iter().map(|&id| ChainNode::Critical { id }));
        out.push(end_node(&self.segments[self.segments.len() - 1].end).expect("validated end"));
        out
    }

    pub fn signature(&self) -> (usize, Vec<usize>) {
        (self.segments.len(), self.chain.clone())
    }

    pub fn start_fold(&self) -> Option<FoldPoint> {
        match self.nodes()[0] {
            ChainNode::Fold(f) => Some(f),
            _ => None,
        }
    }

    pub fn end_fold(&self) -> Option<FoldPoint> {
        match *self.nodes().last().expect("nonempty") {
            ChainNode::Fold(f) => Some(f),
            _ => None,
        }
    }

    /// `(F at start, F at end)`.
    pub fn f_range(&self) -> (f64, f64) {
        (self.segments[0].f_range().0, self.segments[self.segments.len() - 1].f_range().1)
    }

    /// The point of the broken flow on the level `F = f`.
    pub fn point_at_level(&self, f: f64) -> Option<Point> {
        self.segments.iter().find_map(|s| s.point_at_level(f))
    }

    /// Segment containing level `f` (the later one at a breaking point).
    pub fn segment_at_level(&self, f: f64) -> Option<usize> {
        self.segments.iter().rposition(|s| {
            let (a, b) = s.f_range();
            f <= a && f >= b
        })
    }

    /// Equality as unparameterized broken flows.
    pub fn same_as(&self, other: &BrokenFlow, tol: f64) -> bool {
        self.family == other.family
            && self.chain == other.chain
            && self
                .segments
                .iter()
                .zip(&other.segments)
                .all(|(a, b)| a.same_flow(b, tol))
    }

    /// Sheets over the fold endpoints: the 1-jet lift endpoints lie on the
    /// cusp edge of the fold's pair.
    pub fn fold_end_sheets(&self) -> [SheetId; 2] {
        [self.field().upper, self.field().lower]
    }
}

/// A ball inside a level set, measured in normalized Morse coordinates
/// of the adjacent critical point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Window {
    pub center: Point,
    pub radius: f64,
}

/// A ball on a fold component for the lifted endpoints over it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FoldWindow {
    pub component: usize,
    pub center: Point,
    pub radius: f64,
    pub sheets: [SheetId; 2],
}

/// Data of a basis neighborhood `W(λ, U⁻, U⁺)`.
#[derive(Debug, Clone)]
pub struct NeighborhoodSpec {
    pub base: BrokenFlow,
    /// `ε` of the Morse neighborhood of each chain node (0 for fold nodes).
    pub epsilons: Vec<f64>,
    /// Exit windows on `F = F(c) - ε`, one per chain node except the last.
    pub exits: Vec<Option<Window>>,
    /// Entry windows on `F = F(c) + ε`, one per chain node except the first.
    pub entries: Vec<Option<Window>>,
    pub start_fold: Option<FoldWindow>,
    pub end_fold: Option<FoldWindow>,
    frames: Vec<Option<MorseNeighborhood>>,
}

impl NeighborhoodSpec {
    fn window_dist(&self, k: usize, a: &Point, b: &Point) -> f64 {
        let v = self.frames[k].as_ref().expect("critical node");
        let (ya, yb) = (v.sphere_coords(a), v.sphere_coords(b));
        ((ya[0] - yb[0]).powi(2) + (ya[1] - yb[1]).powi(2)).sqrt()
    }

    /// Windows of radius `radius` centred at the base flow's own crossings.
    pub fn around(base: &BrokenFlow, radius: f64) -> Result<NeighborhoodSpec> {
        let field = base.field();
        let crit = field.critical_points()?;
        let nbhd = default_neighborhoods(field)?;
        let nodes = base.nodes();
        let m = nodes.len();
        let mut epsilons = vec![0.0; m];
        let mut frames = vec![None; m];
        let mut exits = vec![None; m];
        let mut entries = vec![None; m];
        let (mut start_fold, mut end_fold) = (None, None);
        for (k, node) in nodes.iter().enumerate() {
            match node {
                ChainNode::Critical { id } => {
                    let eps = nbhd[*id].epsilon;
                    epsilons[k] = eps;
                    frames[k] = Some(nbhd[*id].clone());
                    let fc = crit[*id].value;
                    if k + 1 < m {
                        let p = base.segments[k].point_at_level(fc - eps).ok_or_else(|| {
                            reject(format!("segment {k} never reaches the exit level of critical point {id}"))
                        })?;
                        exits[k] = Some(Window { center: p, radius });
                    }
                    if k > 0 {
                        let p = base.segments[k - 1].point_at_level(fc + eps).ok_or_else(|| {
                            reject(format!("segment {} never reaches the entry level of critical point {id}", k - 1))
                        })?;
                        entries[k] = Some(Window { center: p, radius });
                    }
                }
                ChainNode::Fold(f) => {
                    let w = FoldWindow {
                        component: f.component,
                        center: f.point,
                        radius,
                        sheets: base.fold_end_sheets(),
                    };
                    if k == 0 {
                        start_fold = Some(w);
                    } else {
                        end_fold = Some(w);
                    }
                }
            }
        }
        Ok(NeighborhoodSpec {
            base: base.clone(),
            epsilons,
            exits,
            entries,
            start_fold,
            end_fold,
            frames,
        })
    }

    /// Window-wise intersection of two neighborhoods of the same base.
    pub fn refine(&self, other: &NeighborhoodSpec) -> NeighborhoodSpec {
        let min_w = |a: &Option<Window>, b: &Option<Window>| match (a, b) {
            (Some(a), Some(b)) => Some(Window {
                center: a.center,
                radius: a.radius.min(b.radius),
            }),
            (a, _) => *a,
        };
        let min_f = |a: &Option<FoldWindow>, b: &Option<FoldWindow>| match (a, b) {
            (Some(a), Some(b)) => Some(FoldWindow {
                radius: a.radius.min(b.radius),
                ..*a
            }),
            (a, _) => *a,
        };
        NeighborhoodSpec {
            base: self.base.clone(),
            epsilons: self.epsilons.clone(),
            exits: self.exits.iter().zip(&other.exits).map(|(a, b)| min_w(a, b)).collect(),
            entries: self.entries.iter().zip(&other.entries).map(|(a, b)| min_w(a, b)).collect(),
            start_fold: min_f(&self.start_fold, &other.start_fold),
            end_fold: min_f(&self.end_fold, &other.end_fold),
            frames: self.frames.clone(),
        }
    }

    /// Membership of `mu` in `W`.
    pub fn contains(&self, mu: &BrokenFlow) -> bool {
        let base = &self.base;
        let field = base.field();
        if mu.field().upper != field.upper || mu.field().lower != field.lower || mu.family != base.family {
            return false;
        }
        let Ok(crit) = field.critical_points() else {
            return false;
        };
        let chart = field.chart();
        let m = base.chain.len() + 2;
        // Positions of mu's chain inside the base chain: a subsequence.
        let mut ks = vec![0usize];
        for c in &mu.chain {
            match base.chain.iter().position(|b| b == c) {
                Some(p) if p + 1 > *ks.last().expect("nonempty") => ks.push(p + 1),
                _ => return false,
            }
        }
        ks.push(m - 1);
        let base_nodes = base.nodes();
        let in_window = |k: usize, w: &Option<Window>, p: Option<Point>| match (w, p) {
            (Some(w), Some(p)) => self.window_dist(k, &w.center, &p) <= w.radius,
            _ => false,
        };
        let in_fold = |w: &Option<FoldWindow>, e: &EndEvent| match (w, e) {
            (Some(w), EndEvent::FoldHit { component, point, .. }) => {
                *component == w.component && chart.dist(&w.center, point) <= w.radius
            }
            _ => false,
        };
        for (s, seg) in mu.segments.iter().enumerate() {
            let (a, b) = (ks[s], ks[s + 1]);
            let start_ok = match base_nodes[a] {
                ChainNode::Critical { id } => {
                    in_window(a, &self.exits[a], seg.point_at_level(crit[id].value - self.epsilons[a]))
                }
                ChainNode::Fold(_) => in_fold(&self.start_fold, &seg.start),
            };
            let end_ok = match base_nodes[b] {
                ChainNode::Critical { id } => {
                    in_window(b, &self.entries[b], seg.point_at_level(crit[id].value + self.epsilons[b]))
                }
                ChainNode::Fold(_) => in_fold(&self.end_fold, &seg.end),
            };
            if !(start_ok && end_ok) {
                return false;
            }
        }
        true
    }

    /// All window radii, in node order.
    pub fn radii(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend(self.start_fold.map(|w| w.radius));
        for w in self.exits.iter().chain(&self.entries).flatten() {
            out.push(w.radius);
        }
        out.extend(self.end_fold.map(|w| w.radius));
        out
    }
}

#[derive(Debug, Clone)]
pub struct ExtractOptions {
    pub cluster_radius: f64,
    pub min_run: usize,
    pub ladder_r0: f64,
    pub ladder_depth: usize,
    /// Smallest certified tail per ladder rung.
    pub min_tail: usize,
    pub flow: FlowOptions,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions {
            cluster_radius: 1e-3,
            min_run: 8,
            ladder_r0: 0.1,
            ladder_depth: 4,
            min_tail: 2,
            flow: FlowOptions::default(),
        }
    }
}

impl ExtractOptions {
    pub fn ladder(&self) -> Vec<f64> {
        (1..=self.ladder_depth)
            .map(|m| self.ladder_r0 * 0.5f64.powi(m as i32))
            .collect()
    }
}

/// Ladder certificate: for each radius, the certified tail of the subsequence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub radii: Vec<f64>,
    pub tails: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct Extraction {
    pub limit: BrokenFlow,
    /// Indices into the input sequence of the convergent subsequence.
    pub indices: Vec<usize>,
    pub certificate: Certificate,
}

/// Points within `radius` of the best centre (largest count, ties to the
/// later index). Returns member positions in increasing order.
pub fn cluster(points: &[Point], radius: f64, chart: &crate::scenario::Chart) -> Vec<usize> {
    let mut best: Vec<usize> = Vec::new();
    for i in 0..points.len() {
        let members: Vec<usize> = (0..points.len())
            .filter(|&j| chart.dist(&points[i], &points[j]) <= radius)
            .collect();
        if members.len() >= best.len() {
            best = members;
        }
    }
    best
}

/// [`cluster`] at `radius`, doubled until the cluster has `min_run` members
/// or the radius would pass `max_radius`.
pub fn tail_cluster(points: &[Point], radius: f64, max_radius: f64, min_run: usize, chart: &crate::scenario::Chart) -> Vec<usize> {
    let mut r = radius;
    let mut best = cluster(points, r, chart);
    while best.len() < min_run && 2.0 * r <= max_radius {
        r *= 2.0;
        best = cluster(points, r, chart);
    }
    best
}

struct Extractor<'a> {
    field: &'a DifferenceField,
    crit: &'a [CriticalPoint],
    nbhd: Vec<MorseNeighborhood>,
    opts: &'a ExtractOptions,
}

/// How the start of the current limit segment may be moved to hit a stable
/// manifold: along the exit circle of a maximum, or along a fold.
#[derive(Clone, Copy)]
enum Shooter {
    Arc { center: usize, theta: f64 },
    Fold { component: usize, point: Point },
    Fixed,
}

impl Extractor<'_> {
    fn inconclusive(&self, msg: String) -> Error {
        Error::Inconclusive(msg)
    }

    fn flow(&self, x: Point) -> Result<MaximalFlow> {
        integrate_maximal(self.field, x, &self.opts.flow)
    }

    fn passes_near(&self, flow: &MaximalFlow, c: &CriticalPoint) -> bool {
        let r = self.nbhd[c.id].radius_bound();
        flow.point_at_level(c.value)
            .is_some_and(|p| self.field.chart().dist(&p, &c.location) <= r)
    }

    /// The run breaks at `c` when its last flows pass near it and the passing
    /// distances shrink toward zero.
    fn breaks_at(&self, run: &[usize], c: &CriticalPoint, comp: &dyn Fn(usize) -> MaximalFlow) -> bool {
        let tail = &run[run.len().saturating_sub(3)..];
        if !tail.iter().all(|&n| self.passes_near(&comp(n), c)) {
            return false;
        }
        let chart = self.field.chart();
        let d: Vec<f64> = run
            .iter()
            .filter_map(|&n| comp(n).point_at_level(c.value).map(|p| chart.dist(&p, &c.location)))
            .collect();
        let m = d.len();
        if m < 3 || d[m - 1] > 0.5 * d[0] {
            return false;
        }
        let (a, b, e) = (d[m - 3], d[m - 2], d[m - 1]);
        let denom = (e - b) - (b - a);
        let limit = if denom.abs() > f64::EPSILON * e { e - (e - b).powi(2) / denom } else { e };
        limit <= 0.25 * e
    }

    fn shooter_point(&self, s: Shooter, param: f64) -> Option<Point> {
        match s {
            Shooter::Arc { center, .. } => {
                let v = &self.nbhd[center];
                v.ray_to_level(&[param.cos(), param.sin()], -v.epsilon)
            }
            Shooter::Fold { component, point } => {
                let fold = &self.field.scenario().folds[component];
                let mut p = point;
                p[1 - fold.axis] = param;
                let chart = self.field.chart();
                (chart.contains(&p)).then_some(p)
            }
            Shooter::Fixed => None,
        }
    }

    fn shooter_param(&self, s: Shooter) -> f64 {
        match s {
            Shooter::Arc { theta, .. } => theta,
            Shooter::Fold { component, point } => {
                point[1 - self.field.scenario().folds[component].axis]
            }
            Shooter::Fixed => 0.0,
        }
    }

    /// Side of the stable manifold of `c` on which the flow from `p` passes:
    /// 0 when it converges to `c`.
    fn side(&self, p: &Point, c: &CriticalPoint) -> Result<i32> {
        let eps = self.nbhd[c.id].epsilon;
        let mut stop = |x: &Point| self.field.value_extended(x) < c.value - 0.5 * eps;
        let half = trace(self.field, *p, Direction::Descending, &self.opts.flow, Some(&mut stop), false)?;
        let end = match half.end {
            HalfEnd::Critical { id, .. } if id == c.id => return Ok(0),
            HalfEnd::Critical { point, .. }
            | HalfEnd::Fold { point, .. }
            | HalfEnd::Wall { point }
            | HalfEnd::Stopped { point } => point,
        };
        let u = c.eigenvectors[0];
        let d = self.field.chart().delta(&c.location, &end);
        Ok(if d[0] * u[0] + d[1] * u[1] >= 0.0 { 1 } else { -1 })
    }

    /// Move the shooter parameter until the flow converges to `c`.
    fn shoot(&self, s: Shooter, c: &CriticalPoint) -> Result<MaximalFlow> {
        let p0 = self.shooter_param(s);
        let at = |param: f64| -> Result<Option<(Point, i32)>> {
            match self.shooter_point(s, param) {
                Some(p) => Ok(Some((p, self.side(&p, c)?))),
                None => Ok(None),
            }
        };
        let Some((x0, s0)) = at(p0)? else {
            return Err(self.inconclusive("shooting start point unavailable".into()));
        };
        if s0 == 0 {
            return self.flow(x0);
        }
        let mut bracket = None;
        let mut d = 1e-7;
        'search: while d < 4.0 {
            for sign in [1.0, -1.0] {
                let q = p0 + sign * d;
                if let Some((x, sq)) = at(q)? {
                    if sq == 0 {
                        return self.flow(x);
                    }
                    if sq != s0 {
                        bracket = Some((p0, q));
                        break 'search;
                    }
                }
            }
            d *= 2.0;
        }
        let Some((mut lo, mut hi)) = bracket else {
            return Err(self.inconclusive(format!(
                "no start point found whose flow reaches critical point {}",
                c.id
            )));
        };
        for _ in 0..400 {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi {
                break;
            }
            let Some((x, sm)) = at(mid)? else { break };
            if sm == 0 {
                return self.flow(x);
            }
            if sm == s0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Err(self.inconclusive(format!(
            "shooting onto the stable manifold of critical point {} did not converge",
            c.id
        )))
    }

    /// Narrow `run` to the flows whose exit points from `c` converge, and
    /// return the limiting flow out of `c`.
    fn cluster(&self, pts: &[Point]) -> Vec<usize> {
        let max = self.opts.ladder().first().copied().unwrap_or(self.opts.cluster_radius);
        tail_cluster(pts, self.opts.cluster_radius, max, self.opts.min_run, self.field.chart())
    }

    fn leave(&self, c: usize, run: &mut Vec<usize>, comp: &dyn Fn(usize) -> MaximalFlow) -> Result<(MaximalFlow, Shooter)> {
        let cp = &self.crit[c];
        let v = &self.nbhd[c];
        let level = cp.value - v.epsilon;
        let chart = self.field.chart();
        let mut pts = Vec::with_capacity(run.len());
        for &n in run.iter() {
            let p = comp(n)
                .point_at_level(level)
                .ok_or_else(|| self.inconclusive(format!("flow {n} does not leave critical point {c}")))?;
            pts.push(p);
        }
        let sphere_dim = cp.index as i64 - 1;
        match sphere_dim {
            0 => {
                let samples = v.sphere_samples(SphereKind::Unstable, 2)?;
                if samples.is_empty() {
                    return Err(self.inconclusive(format!("no unstable sphere at critical point {c}")));
                }
                let nearest = |p: &Point| {
                    (0..samples.len())
                        .min_by(|&a, &b| chart.dist(p, &samples[a]).total_cmp(&chart.dist(p, &samples[b])))
                        .expect("nonempty")
                };
                let sides: Vec<usize> = pts.iter().map(nearest).collect();
                let count = |s: usize| sides.iter().filter(|&&x| x == s).count();
                let last = *sides.last().expect("nonempty run");
                let pick = if count(1 - last) > count(last) { 1 - last } else { last };
                let keep: Vec<usize> = (0..run.len()).filter(|&i| sides[i] == pick).collect();
                if keep.len() < self.opts.min_run {
                    return Err(self.inconclusive(format!(
                        "only {} flows leave critical point {c} on a common side (need {})",
                        keep.len(),
                        self.opts.min_run
                    )));
                }
                *run = keep.iter().map(|&i| run[i]).collect();
                Ok((self.flow(samples[pick])?, Shooter::Fixed))
            }
            1 => {
                let members = self.cluster(&pts);
                if members.len() < self.opts.min_run {
                    return Err(self.inconclusive(format!(
                        "exit points from critical point {c}: largest cluster has {} members (need {})",
                        members.len(),
                        self.opts.min_run
                    )));
                }
                let rep = pts[*members.last().expect("nonempty")];
                *run = members.iter().map(|&i| run[i]).collect();
                let d = chart.delta(&cp.location, &rep);
                Ok((
                    self.flow(rep)?,
                    Shooter::Arc {
                        center: c,
                        theta: d[1].atan2(d[0]),
                    },
                ))
            }
            _ => Err(self.inconclusive(format!(
                "critical point {c} of index {} has no unstable sphere to leave along",
                cp.index
            ))),
        }
    }

    fn start_on_fold(&self, run: &mut Vec<usize>, comp: &dyn Fn(usize) -> MaximalFlow) -> Result<(MaximalFlow, Shooter)> {
        let mut pts = Vec::new();
        let mut component = None;
        for &n in run.iter() {
            match comp(n).start {
                EndEvent::FoldHit { component: k, point, .. } => {
                    if component.is_some_and(|c| c != k) {
                        return Err(self.inconclusive("fold starts on different components".into()));
                    }
                    component = Some(k);
                    pts.push(point);
                }
                _ => return Err(self.inconclusive(format!("flow {n} does not start on the fold"))),
            }
        }
        let component = component.expect("nonempty run");
        let members = self.cluster(&pts);
        if members.len() < self.opts.min_run {
            return Err(self.inconclusive(format!(
                "fold start points: largest cluster has {} members (need {})",
                members.len(),
                self.opts.min_run
            )));
        }
        let rep = pts[*members.last().expect("nonempty")];
        *run = members.iter().map(|&i| run[i]).collect();
        let shooter = if self.field.dim() == 2 {
            Shooter::Fold { component, point: rep }
        } else {
            Shooter::Fixed
        };
        Ok((self.flow(rep)?, shooter))
    }

    /// Limit of one component sequence, possibly broken further.
    fn component(
        &self,
        run: &mut Vec<usize>,
        start: ChainNode,
        end: ChainNode,
        comp: &dyn Fn(usize) -> MaximalFlow,
    ) -> Result<Vec<MaximalFlow>> {
        let (mut flow, mut shooter) = match start {
            ChainNode::Critical { id } => self.leave(id, run, comp)?,
            ChainNode::Fold(_) => self.start_on_fold(run, comp)?,
        };
        let f_end = match end {
            ChainNode::Critical { id } => self.crit[id].value,
            ChainNode::Fold(_) => f64::NEG_INFINITY,
        };
        let mut out = Vec::new();
        loop {
            let f_top = flow.f_range().0;
            let start_id = match flow.start {
                EndEvent::Critical { id, .. } => Some(id),
                _ => None,
            };
            let mut candidates: Vec<&CriticalPoint> = self
                .crit
                .iter()
                .filter(|c| {
                    c.value < f_top
                        && c.value > f_end
                        && Some(c.id) != start_id
                        && !matches!(end, ChainNode::Critical { id } if id == c.id)
                })
                .collect();
            candidates.sort_by(|a, b| b.value.total_cmp(&a.value));
            let breaking = candidates.into_iter().find(|c| self.breaks_at(run, c, comp));
            if let Some(c) = breaking {
                let seg = match flow.end {
                    EndEvent::Critical { id, .. } if id == c.id => flow,
                    _ => self.shoot(shooter, c)?,
                };
                if !matches!(seg.end, EndEvent::Critical { id, .. } if id == c.id) {
                    return Err(self.inconclusive(format!("limit segment misses critical point {}", c.id)));
                }
                out.push(seg);
                (flow, shooter) = self.leave(c.id, run, comp)?;
                continue;
            }
            let ends_ok = match (end, &flow.end) {
                (ChainNode::Critical { id }, EndEvent::Critical { id: e, .. }) => id == *e,
                (ChainNode::Fold(f), EndEvent::FoldHit { component, .. }) => f.component == *component,
                _ => false,
            };
            if !ends_ok {
                return Err(self.inconclusive(format!(
                    "limit flow ends at {:?}, expected {:?}",
                    flow.end, end
                )));
            }
            out.push(flow);
            return Ok(out);
        }
    }
}

/// Extract a convergent subsequence and its broken limit.
pub fn extract_limit(seq: &[BrokenFlow], opts: &ExtractOptions) -> Result<Extraction> {
    let Some(first) = seq.first() else {
        return Err(Error::Inconclusive("empty sequence".into()));
    };
    let field = first.field();
    if seq.iter().any(|b| {
        b.field().upper != field.upper || b.field().lower != field.lower
    }) {
        return Err(reject("sequence mixes difference fields"));
    }
    // (a) constant family, component count and chain.
    let mut groups: Vec<((Family, usize, Vec<usize>), Vec<usize>)> = Vec::new();
    for (n, b) in seq.iter().enumerate() {
        let (q, chain) = b.signature();
        let sig = (b.family, q, chain);
        match groups.iter_mut().find(|g| g.0 == sig) {
            Some(g) => g.1.push(n),
            None => groups.push((sig, vec![n])),
        }
    }
    let (_, mut run) = groups
        .into_iter()
        .max_by(|a, b| a.1.len().cmp(&b.1.len()).then(a.1.last().cmp(&b.1.last())))
        .expect("nonempty");
    if run.len() < opts.min_run {
        return Err(Error::Inconclusive(format!(
            "largest run with a common family and chain has {} members (need {})",
            run.len(),
            opts.min_run
        )));
    }
    let ex = Extractor {
        field,
        crit: field.critical_points()?,
        nbhd: default_neighborhoods(field)?,
        opts,
    };
    let nodes = seq[run[0]].nodes();
    let mut pieces = Vec::new();
    for k in 0..nodes.len() - 1 {
        let comp = |n: usize| seq[n].segments[k].clone();
        pieces.extend(ex.component(&mut run, nodes[k], nodes[k + 1], &comp)?);
    }
    let limit = assemble(seq[run[0]].family, pieces)?;
    let certificate = certify(&limit, seq, &run, opts)?;
    Ok(Extraction {
        limit,
        indices: run,
        certificate,
    })
}

/// Check the ladder `W_m = W(limit, r0 2^{-m})` against the subsequence.
pub fn certify(limit: &BrokenFlow, seq: &[BrokenFlow], run: &[usize], opts: &ExtractOptions) -> Result<Certificate> {
    let radii = opts.ladder();
    let mut tails = Vec::new();
    for &r in &radii {
        let w = NeighborhoodSpec::around(limit, r)?;
        let inside: Vec<bool> = run.iter().map(|&n| w.contains(&seq[n])).collect();
        let cut = inside.iter().rposition(|ok| !ok).map_or(0, |i| i + 1);
        let tail: Vec<usize> = run[cut..].to_vec();
        if tail.len() < opts.min_tail {
            return Err(Error::Inconclusive(format!(
                "ladder radius {r}: certified tail has {} members (need {})",
                tail.len(),
                opts.min_tail
            )));
        }
        tails.push(tail);
    }
    Ok(Certificate { radii, tails })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::load_scenario;
    use std::sync::Arc;

    fn field(fixture: &str, i: u32, j: u32) -> DifferenceField {
        let text = std::fs::read_to_string(format!(
            "{}/fixtures/{fixture}.toml",
            env!("CARGO_MANIFEST_DIR")
        ))
        .unwrap();
        Arc::new(load_scenario(&text).unwrap()).difference(i, j).unwrap()
    }

    fn unbroken(f: &DifferenceField, x: Point) -> BrokenFlow {
        BrokenFlow::unbroken(integrate_maximal(f, x, &FlowOptions::default()).unwrap()).unwrap()
    }

    #[test]
    fn torus_broken_assembly() {
        let f = field("torus-2d", 1, 2);
        let o = FlowOptions::default();
        let a = integrate_maximal(&f, [0.25, 0.0], &o).unwrap();
        let b = integrate_maximal(&f, [0.5, 0.25], &o).unwrap();
        let bf = assemble(Family::Morse { from: 0, to: 3 }, vec![a.clone(), b.clone()]).unwrap();
        assert_eq!(bf.chain, vec![2]);
        let c = integrate_maximal(&f, [0.0, 0.25], &o).unwrap();
        let err = assemble(Family::Morse { from: 0, to: 3 }, vec![c, b]).unwrap_err();
        assert!(err.to_string().contains("index"), "{err}");
        assert!(assemble(Family::Morse { from: 0, to: 2 }, vec![a]).is_ok());
    }

    #[test]
    fn torus_contains_examples() {
        let f = field("torus-2d", 1, 2);
        let o = FlowOptions::default();
        let a = integrate_maximal(&f, [0.25, 0.0], &o).unwrap();
        let b = integrate_maximal(&f, [0.5, 0.25], &o).unwrap();
        let lambda = assemble(Family::Morse { from: 0, to: 3 }, vec![a, b]).unwrap();
        let w = NeighborhoodSpec::around(&lambda, 0.05).unwrap();
        assert!(w.contains(&lambda));
        assert!(w.contains(&unbroken(&f, [0.25, 1e-4])));
        assert!(!w.contains(&unbroken(&f, [0.25, 0.3])));
        let half = NeighborhoodSpec::around(&lambda, 0.025).unwrap();
        let r = w.refine(&half);
        assert!(r.radii().iter().all(|&x| x == 0.025));
    }

    #[test]
    fn torus_breaking_limit() {
        let f = field("torus-2d", 1, 2);
        let seq: Vec<BrokenFlow> = (1..=12)
            .map(|n| unbroken(&f, [0.25, 0.5f64.powi(n + 4)]))
            .collect();
        let ex = extract_limit(&seq, &ExtractOptions::default()).unwrap();
        assert_eq!(ex.limit.chain, vec![2]);
        let p = ex.limit.segments[0].end_point();
        assert!(f.chart().dist(&p, &[0.5, 0.0]) < 1e-3);
        assert_eq!(ex.certificate.tails.len(), 4);
    }

    #[test]
    fn constant_sequence_limit() {
        let f = field("double-well-1d", 1, 2);
        let b = unbroken(&f, [0.0, 0.0]);
        let seq = vec![b.clone(); 8];
        let ex = extract_limit(&seq, &ExtractOptions::default()).unwrap();
        assert_eq!(ex.indices, (0..8).collect::<Vec<_>>());
        assert!(ex.limit.same_as(&b, 1e-5));
    }

    #[test]
    fn fold_emanating_limit() {
        let f = field("fold-well-2d", 3, 1);
        let seq: Vec<BrokenFlow> = (1..=12)
            .map(|n| unbroken(&f, [0.0, 0.5f64.powi(n + 6)]))
            .collect();
        assert!(matches!(seq[0].family, Family::FoldEmanating { .. }));
        let ex = extract_limit(&seq, &ExtractOptions::default()).unwrap();
        let start = ex.limit.start_fold().unwrap();
        assert!(start.point[1].abs() < 1e-3);
    }
}
