//! Maximal descending gradient flows of difference fields, their endpoint
//! classification, contact orders at the fold, and 1-jet lifts.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scenario::{norm, DifferenceField, SheetId};
use crate::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Along `-grad F`.
    Descending,
    /// Along `+grad F`.
    Ascending,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Descending => -1.0,
            Direction::Ascending => 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlowOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_max: f64,
    /// Largest chart displacement per accepted step.
    pub max_disp: f64,
    pub max_steps: usize,
    /// Distance at which a converging flow is snapped onto its critical point.
    pub snap_radius: f64,
    pub contact_noise: f64,
    /// Arclength spacing of the samples used for contact-order fits.
    pub contact_spacing: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            rtol: 1e-10,
            atol: 1e-13,
            h_init: 1e-3,
            h_max: 0.05,
            max_disp: 0.01,
            max_steps: 400_000,
            snap_radius: 1e-8,
            contact_noise: 1e-7,
            contact_spacing: 1e-4,
        }
    }
}

const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// One Dormand-Prince 5(4) step; returns the new point and the error vector.
pub(crate) fn dp_step(field: &DifferenceField, dir: Direction, x: &Point, h: f64) -> (Point, Point) {
    let s = dir.sign();
    let rhs = |p: &Point| {
        let g = field.eval_extended(p).1;
        [s * g[0], s * g[1]]
    };
    let mut k = [[0.0; 2]; 7];
    k[0] = rhs(x);
    for i in 0..6 {
        let mut p = *x;
        for (j, kj) in k.iter().enumerate().take(i + 1) {
            p[0] += h * A[i][j] * kj[0];
            p[1] += h * A[i][j] * kj[1];
        }
        k[i + 1] = rhs(&p);
    }
    let mut out = *x;
    let mut err = [0.0; 2];
    for (j, kj) in k.iter().enumerate() {
        let b5 = if j < 6 { A[5][j] } else { 0.0 };
        out[0] += h * b5 * kj[0];
        out[1] += h * b5 * kj[1];
        err[0] += h * (b5 - B4[j]) * kj[0];
        err[1] += h * (b5 - B4[j]) * kj[1];
    }
    (out, err)
}

/// How one direction of integration ended. Times are measured from the
/// start point in the direction of integration.
#[derive(Debug, Clone)]
pub(crate) enum HalfEnd {
    Critical { id: usize, point: Point },
    Fold { component: usize, point: Point, others: Vec<usize> },
    Wall { point: Point },
    Stopped { point: Point },
}

pub(crate) struct Half {
    /// `(time, point)` for every accepted step, starting at the start point.
    pub nodes: Vec<(f64, Point)>,
    pub end: HalfEnd,
}

/// Integrate in one direction until a critical point, the fold, the chart
/// wall, or the optional stop predicate.
pub(crate) fn trace(
    field: &DifferenceField,
    x0: Point,
    dir: Direction,
    opts: &FlowOptions,
    mut stop: Option<&mut dyn FnMut(&Point) -> bool>,
    record: bool,
) -> Result<Half> {
    let chart = field.chart().clone();
    let crit = field.critical_points()?;
    let dim = field.dim();
    let folds: Vec<_> = field.bounding_folds().cloned().collect();
    let event_g = |x: &Point| -> f64 {
        let mut g = chart.wall_margin(x);
        for f in &folds {
            g = g.min(f.signed_offset(x));
        }
        g
    };
    let snap = |x: &Point| crit.iter().find(|c| chart.dist(&c.location, x) <= opts.snap_radius);

    let mut nodes = vec![(0.0, x0)];
    if let Some(c) = snap(&x0) {
        return Ok(Half {
            nodes,
            end: HalfEnd::Critical { id: c.id, point: c.location },
        });
    }
    let mut x = x0;
    let mut t = 0.0f64;
    let mut h = opts.h_init;
    let mut steps = 0usize;
    // Once a step has overshot an event, steps only shrink: the event is
    // approached from inside so stages never sample the far side.
    let mut cap = f64::INFINITY;
    loop {
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::Stiff {
                point: x,
                reason: format!("no event after {} steps (t = {t:.3})", opts.max_steps),
            });
        }
        let speed = norm(&field.eval_extended(&x).1).max(1e-300);
        h = h.min(opts.h_max).min(opts.max_disp / speed).min(cap);
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(Error::Stiff {
                point: x,
                reason: "step size underflow".into(),
            });
        }
        let (xn, err) = dp_step(field, dir, &x, h);
        let mut e: f64 = 0.0;
        for k in 0..dim {
            let sc = opts.atol + opts.rtol * x[k].abs().max(xn[k].abs());
            e = e.max(err[k].abs() / sc);
        }
        if !e.is_finite() {
            h *= 0.1;
            continue;
        }
        if e > 1.0 {
            h *= (0.9 * e.powf(-0.2)).max(0.1);
            continue;
        }
        let h_used = h;
        h *= if e == 0.0 { 5.0 } else { (0.9 * e.powf(-0.2)).clamp(0.2, 5.0) };

        if event_g(&xn) < 0.0 {
            if h_used > 1e-13 * t.abs().max(1.0) {
                h = 0.25 * h_used;
                cap = h;
                continue;
            }
            return Ok(locate_event(field, &chart, &folds, x, xn, t, nodes, record));
        }
        t += h_used;
        x = chart.wrap(xn);
        if record {
            nodes.push((t, x));
        }
        if let Some(c) = snap(&x) {
            if !record {
                nodes.push((t, c.location));
            } else {
                nodes.last_mut().expect("nonempty").1 = c.location;
            }
            return Ok(Half {
                nodes,
                end: HalfEnd::Critical { id: c.id, point: c.location },
            });
        }
        if let Some(stop) = stop.as_mut() {
            if stop(&x) {
                if !record {
                    nodes.push((t, x));
                }
                return Ok(Half {
                    nodes,
                    end: HalfEnd::Stopped { point: x },
                });
            }
        }
    }
}

/// Resolve an event between the last accepted point `x_lo` (inside) and a
/// step end `x_hi` (outside) a fraction of `1e-13` later.
fn locate_event(
    field: &DifferenceField,
    chart: &crate::scenario::Chart,
    folds: &[crate::scenario::FoldComponent],
    x_lo: Point,
    x_hi: Point,
    t: f64,
    mut nodes: Vec<(f64, Point)>,
    record: bool,
) -> Half {
    // Constraints active at the crossing, nearest first.
    let mut active: Vec<(f64, Option<usize>)> = Vec::new();
    for f in folds {
        let v = f.signed_offset(&x_hi).min(f.signed_offset(&x_lo));
        if v < 1e-9 {
            active.push((f.signed_offset(&x_lo), Some(f.id)));
        }
    }
    let wall = chart.wall_margin(&x_hi);
    if wall < 1e-9 {
        active.push((chart.wall_margin(&x_lo), None));
    }
    active.sort_by(|a, b| a.0.total_cmp(&b.0));
    let fold_ids: Vec<usize> = active.iter().filter_map(|a| a.1).collect();
    let end = match active.first() {
        Some((_, Some(_))) => {
            let first = &field.scenario().folds[fold_ids[0]];
            let mut p = first.project(&x_lo);
            for id in &fold_ids[1..] {
                p = field.scenario().folds[*id].project(&p);
            }
            HalfEnd::Fold {
                component: fold_ids[0],
                point: chart.wrap(p),
                others: fold_ids[1..].to_vec(),
            }
        }
        _ => {
            let mut p = x_lo;
            for axis in 0..chart.dim {
                if !chart.periodic[axis] {
                    p[axis] = p[axis].clamp(chart.bounds[axis][0], chart.bounds[axis][1]);
                }
            }
            HalfEnd::Wall { point: chart.wrap(p) }
        }
    };
    let point = match &end {
        HalfEnd::Fold { point, .. } | HalfEnd::Wall { point, .. } => *point,
        _ => unreachable!(),
    };
    if record || nodes.len() == 1 {
        nodes.push((t, point));
    }
    Half { nodes, end }
}

/// A fold component together with a point on it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FoldPoint {
    pub component: usize,
    pub point: Point,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EndEvent {
    Critical { id: usize, point: Point },
    FoldHit { component: usize, point: Point, contact_order: usize },
    ChartExit { point: Point },
    /// The flow reaches a point where several fold components meet.
    MultipleFold { components: Vec<usize>, point: Point },
}

impl EndEvent {
    pub fn point(&self) -> Point {
        match self {
            EndEvent::Critical { point, .. }
            | EndEvent::FoldHit { point, .. }
            | EndEvent::ChartExit { point }
            | EndEvent::MultipleFold { point, .. } => *point,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FlowClass {
    Morse { from: usize, to: usize },
    FoldEmanating { fold: FoldPoint, to: usize },
    FoldTerminating { from: usize, fold: FoldPoint },
    Singular { from: FoldPoint, to: FoldPoint },
    ChartTruncated,
}

impl FlowClass {
    pub fn name(&self) -> &'static str {
        match self {
            FlowClass::Morse { .. } => "morse",
            FlowClass::FoldEmanating { .. } => "fold-emanating",
            FlowClass::FoldTerminating { .. } => "fold-terminating",
            FlowClass::Singular { .. } => "singular",
            FlowClass::ChartTruncated => "chart-truncated",
        }
    }
}

/// Classification table for a pair of resolved end events.
pub fn classify(start: &EndEvent, end: &EndEvent) -> FlowClass {
    let fold = |e: &EndEvent| match e {
        EndEvent::FoldHit { component, point, .. } => Some(FoldPoint {
            component: *component,
            point: *point,
        }),
        _ => None,
    };
    match (start, end) {
        (EndEvent::Critical { id: a, .. }, EndEvent::Critical { id: b, .. }) => FlowClass::Morse { from: *a, to: *b },
        (EndEvent::FoldHit { .. }, EndEvent::Critical { id, .. }) => FlowClass::FoldEmanating {
            fold: fold(start).expect("fold start"),
            to: *id,
        },
        (EndEvent::Critical { id, .. }, EndEvent::FoldHit { .. }) => FlowClass::FoldTerminating {
            from: *id,
            fold: fold(end).expect("fold end"),
        },
        (EndEvent::FoldHit { .. }, EndEvent::FoldHit { .. }) => FlowClass::Singular {
            from: fold(start).expect("fold start"),
            to: fold(end).expect("fold end"),
        },
        _ => FlowClass::ChartTruncated,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathNode {
    /// Flow time, zero at the start point.
    pub t: f64,
    pub x: Point,
    pub f: f64,
}

/// A maximally extended trajectory of `-grad F`.
#[derive(Debug, Clone)]
pub struct MaximalFlow {
    field: DifferenceField,
    /// Nodes in flow order (`t` increasing, `f` decreasing).
    pub nodes: Vec<PathNode>,
    pub start: EndEvent,
    pub end: EndEvent,
    pub class: FlowClass,
    /// True for the constant flow sitting at a critical point.
    pub constant: bool,
}

/// Integrate the maximal flow through `x0` in both time directions.
pub fn integrate_maximal(field: &DifferenceField, x0: Point, opts: &FlowOptions) -> Result<MaximalFlow> {
    let chart = field.chart();
    let x0 = chart.wrap(x0);
    if !field.in_domain(&x0) || !chart.contains(&x0) {
        return Err(Error::OutsideDomain {
            sheet: field.upper,
            point: x0,
        });
    }
    let fwd = trace(field, x0, Direction::Descending, opts, None, true)?;
    if let HalfEnd::Critical { id, point } = &fwd.end {
        if fwd.nodes.len() == 1 {
            let ev = EndEvent::Critical { id: *id, point: *point };
            let f = field.value_extended(point);
            return Ok(MaximalFlow {
                field: field.clone(),
                nodes: vec![PathNode { t: 0.0, x: *point, f }],
                class: classify(&ev, &ev),
                start: ev.clone(),
                end: ev,
                constant: true,
            });
        }
    }
    let bwd = trace(field, x0, Direction::Ascending, opts, None, true)?;
    let crit = field.critical_points()?;
    let node = |t: f64, x: Point| PathNode {
        t,
        x,
        f: crit
            .iter()
            .find(|c| c.location == x)
            .map(|c| c.value)
            .unwrap_or_else(|| field.value_extended(&x)),
    };
    let mut nodes: Vec<PathNode> = bwd.nodes.iter().rev().map(|(t, x)| node(-t, *x)).collect();
    nodes.extend(fwd.nodes.iter().skip(1).map(|(t, x)| node(*t, *x)));
    let mut flow = MaximalFlow {
        field: field.clone(),
        nodes,
        start: EndEvent::ChartExit { point: x0 },
        end: EndEvent::ChartExit { point: x0 },
        class: FlowClass::ChartTruncated,
        constant: false,
    };
    flow.start = flow.resolve(&bwd.end, false, opts)?;
    flow.end = flow.resolve(&fwd.end, true, opts)?;
    flow.class = classify(&flow.start, &flow.end);
    Ok(flow)
}

impl MaximalFlow {
    pub fn field(&self) -> &DifferenceField {
        &self.field
    }

    fn resolve(&self, end: &HalfEnd, at_end: bool, opts: &FlowOptions) -> Result<EndEvent> {
        Ok(match end {
            HalfEnd::Critical { id, point, .. } => EndEvent::Critical { id: *id, point: *point },
            HalfEnd::Wall { point, .. } | HalfEnd::Stopped { point, .. } => EndEvent::ChartExit { point: *point },
            HalfEnd::Fold { component, point, others, .. } => {
                if !others.is_empty() {
                    let mut components = vec![*component];
                    components.extend(others);
                    EndEvent::MultipleFold {
                        components,
                        point: *point,
                    }
                } else {
                    let order = self.contact_order_at(*component, at_end, opts)?;
                    EndEvent::FoldHit {
                        component: *component,
                        point: *point,
                        contact_order: order,
                    }
                }
            }
        })
    }

    /// Contact order of the path with fold `component` at its start or end.
    fn contact_order_at(&self, component: usize, at_end: bool, opts: &FlowOptions) -> Result<usize> {
        let fold = &self.field.scenario().folds[component];
        let n = self.nodes.len();
        let dim = self.field.dim();
        let (hit, dir) = if at_end {
            (self.nodes[n - 1], Direction::Descending)
        } else {
            (self.nodes[0], Direction::Ascending)
        };
        // Walk away from the hit to a base node far enough for 8 samples.
        let order: Vec<usize> = if at_end { (0..n - 1).rev().collect() } else { (1..n).collect() };
        let mut base = None;
        for &i in &order {
            let node = self.nodes[i];
            let speed = norm(&self.field.eval_extended(&node.x).1).max(1e-300);
            let dt = (hit.t - node.t).abs();
            base = Some((node, speed));
            if dt * speed >= 8.0 * opts.contact_spacing {
                break;
            }
        }
        let Some((base, speed)) = base else {
            return Err(Error::TransversalityViolation { order: dim + 1, dim });
        };
        let span = (hit.t - base.t).abs();
        let dt = (opts.contact_spacing / speed).min(span / 8.0);
        // March from the base node toward the hit, never stepping within a
        // quarter of the remaining time so stages stay on the near side.
        let mut samples = vec![hit.x];
        let mut p = base.x;
        let mut s = 0.0;
        let mut taken = Vec::new();
        for k in (1..=8).rev() {
            let target = span - k as f64 * dt;
            while s < target {
                let h = (1e-3f64).min(0.25 * (span - s)).min(target - s);
                p = dp_step(&self.field, dir, &p, h).0;
                s += h;
            }
            taken.push(p);
        }
        samples.extend(taken.into_iter().rev());
        let mut sigma = vec![0.0];
        for k in 1..samples.len() {
            let d = self.field.chart().dist(&samples[k - 1], &samples[k]);
            sigma.push(sigma[k - 1] + d);
        }
        let offsets: Vec<f64> = samples.iter().map(|p| fold.signed_offset(p)).collect();
        contact_order(&sigma, &offsets, dim, opts.contact_noise)
    }

    pub fn start_point(&self) -> Point {
        self.nodes[0].x
    }

    pub fn end_point(&self) -> Point {
        self.nodes[self.nodes.len() - 1].x
    }

    /// `(F at start, F at end)`.
    pub fn f_range(&self) -> (f64, f64) {
        (self.nodes[0].f, self.nodes[self.nodes.len() - 1].f)
    }

    pub fn fold_hits(&self) -> impl Iterator<Item = &EndEvent> {
        [&self.start, &self.end]
            .into_iter()
            .filter(|e| matches!(e, EndEvent::FoldHit { .. }))
    }

    /// Point of the flow on the level set `F = f`, if the flow reaches it.
    pub fn point_at_level(&self, f: f64) -> Option<Point> {
        let (fa, fb) = self.f_range();
        if !(f <= fa && f >= fb) {
            return None;
        }
        if self.nodes.len() == 1 {
            return Some(self.nodes[0].x);
        }
        let i = self.nodes.partition_point(|n| n.f > f);
        if i == 0 {
            return Some(self.nodes[0].x);
        }
        if i >= self.nodes.len() {
            return Some(self.end_point());
        }
        let (a, b) = (self.nodes[i - 1], self.nodes[i]);
        if b.f == f {
            return Some(b.x);
        }
        let dt = b.t - a.t;
        let (mut lo, mut hi) = (0.0, dt);
        let chart = self.field.chart();
        let mut best = a.x;
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let p = dp_step(&self.field, Direction::Descending, &a.x, mid).0;
            best = p;
            let fp = self.field.value_extended(&p);
            if fp > f {
                lo = mid;
            } else {
                hi = mid;
            }
            if (fp - f).abs() <= 1e-14 * f.abs().max(1.0) {
                break;
            }
        }
        Some(chart.wrap(best))
    }

    /// Points at `count` equispaced F-values strictly inside `[f_lo, f_hi]`.
    pub fn level_samples(&self, f_hi: f64, f_lo: f64, count: usize) -> Vec<Option<Point>> {
        (0..count)
            .map(|k| {
                let f = f_hi - (k as f64 + 0.5) / count as f64 * (f_hi - f_lo);
                self.point_at_level(f)
            })
            .collect()
    }

    /// Equality of unparameterized flows in the F-parameterization.
    pub fn same_flow(&self, other: &MaximalFlow, tol: f64) -> bool {
        if self.field.upper != other.field.upper || self.field.lower != other.field.lower {
            return false;
        }
        let (a0, a1) = self.f_range();
        let (b0, b1) = other.f_range();
        if self.constant || other.constant {
            return self.constant
                && other.constant
                && self.field.chart().dist(&self.start_point(), &other.start_point()) <= tol;
        }
        let (hi, lo) = (a0.min(b0), a1.max(b1));
        if !(hi > lo) {
            return false;
        }
        let chart = self.field.chart();
        self.level_samples(hi, lo, 64)
            .into_iter()
            .zip(other.level_samples(hi, lo, 64))
            .all(|(p, q)| matches!((p, q), (Some(p), Some(q)) if chart.dist(&p, &q) <= tol))
    }

    /// Smallest distance from the path polyline nodes to `p`.
    pub fn min_distance_to(&self, p: &Point) -> f64 {
        let chart = self.field.chart();
        self.nodes
            .iter()
            .map(|n| chart.dist(&n.x, p))
            .fold(f64::INFINITY, f64::min)
    }

    /// One-sided Hausdorff distance from this path's nodes to the other's polyline.
    pub fn directed_hausdorff(&self, other: &MaximalFlow) -> f64 {
        let chart = self.field.chart();
        let seg_dist = |p: &Point, a: &Point, b: &Point| {
            let ab = chart.delta(a, b);
            let ap = chart.delta(a, p);
            let len2 = ab[0] * ab[0] + ab[1] * ab[1];
            let s = if len2 > 0.0 {
                ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            norm(&[ap[0] - s * ab[0], ap[1] - s * ab[1]])
        };
        self.nodes
            .iter()
            .map(|n| {
                if other.nodes.len() == 1 {
                    return chart.dist(&n.x, &other.nodes[0].x);
                }
                other
                    .nodes
                    .windows(2)
                    .map(|w| seg_dist(&n.x, &w[0].x, &w[1].x))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    }

    pub fn hausdorff(&self, other: &MaximalFlow) -> f64 {
        self.directed_hausdorff(other).max(other.directed_hausdorff(self))
    }

    /// The 1-jet lift of this flow.
    pub fn jet_lift(&self) -> JetLift {
        jet_lift_chain(std::slice::from_ref(self))
    }
}

/// Smallest `k >= 1` whose fitted `k`-th derivative of `offset(σ)` exceeds
/// `noise`, from a least-squares polynomial of degree `dim + 1`.
pub fn contact_order(sigma: &[f64], offset: &[f64], dim: usize, noise: f64) -> Result<usize> {
    let deg = dim + 1;
    let scale = sigma.iter().fold(0.0f64, |m, s| m.max(s.abs())).max(1e-300);
    let m = deg + 1;
    let mut ata = vec![vec![0.0; m]; m];
    let mut atb = vec![0.0; m];
    for (s, y) in sigma.iter().zip(offset) {
        let u = s / scale;
        let pows: Vec<f64> = (0..m).map(|k| u.powi(k as i32)).collect();
        for i in 0..m {
            atb[i] += pows[i] * y;
            for j in 0..m {
                ata[i][j] += pows[i] * pows[j];
            }
        }
    }
    let coef = solve_dense(ata, atb).ok_or(Error::TransversalityViolation { order: deg + 1, dim })?;
    let mut factorial = 1.0;
    for (k, c) in coef.iter().enumerate().skip(1) {
        factorial *= k as f64;
        let deriv = factorial * c / scale.powi(k as i32);
        if deriv.abs() > noise {
            if k > dim {
                return Err(Error::TransversalityViolation { order: k, dim });
            }
            return Ok(k);
        }
    }
    Err(Error::TransversalityViolation { order: deg + 1, dim })
}

fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// One constant-label stretch of a lift track, over a flow-time interval.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftPiece {
    pub t0: f64,
    pub t1: f64,
    pub sheet: SheetId,
}

/// The pair of continuous lifts of a flow (or of a chain of flows joined at
/// fold points) to the Legendrian.
#[derive(Debug, Clone, PartialEq)]
pub struct JetLift {
    pub tracks: [Vec<LiftPiece>; 2],
    /// Parameters where both tracks sit at the same point of the cusp edge.
    pub meetings: Vec<f64>,
    /// Parameters where a track passes through the cusp edge to the partner sheet.
    pub swaps: Vec<f64>,
}

/// Lift a chain of flows, each starting where the previous one ends. Flow
/// times are shifted so the chain has one continuous parameter.
pub fn jet_lift_chain(chain: &[MaximalFlow]) -> JetLift {
    let mut tracks: [Vec<LiftPiece>; 2] = [Vec::new(), Vec::new()];
    let mut meetings = Vec::new();
    let mut swaps = Vec::new();
    let mut offset = 0.0;
    for (k, flow) in chain.iter().enumerate() {
        let field = flow.field();
        let scen = field.scenario();
        let t0 = flow.nodes[0].t + offset;
        let t1 = flow.nodes[flow.nodes.len() - 1].t + offset;
        let labels = [field.upper, field.lower];
        let same_pair = |component: usize| {
            let f = &scen.folds[component];
            f.partner(field.upper) == Some(field.lower)
        };
        if k == 0 {
            if let EndEvent::FoldHit { component, .. } = flow.start {
                if same_pair(component) {
                    meetings.push(t0);
                }
            }
        }
        for (track, label) in tracks.iter_mut().zip(labels) {
            if let Some(last) = track.last() {
                if last.sheet != label {
                    swaps.push(t0);
                }
            }
            track.push(LiftPiece { t0, t1, sheet: label });
        }
        if let EndEvent::FoldHit { component, .. } = flow.end {
            if same_pair(component) {
                meetings.push(t1);
            }
        }
        if let Some(next) = chain.get(k + 1) {
            offset = t1 - next.nodes[0].t;
        }
    }
    swaps.dedup();
    JetLift {
        tracks,
        meetings,
        swaps,
    }
}

/// Lift of a tangent vector `w` at `x` to the 1-jet graph of `sheet`:
/// `(w, Hess f · w, df · w)`.
pub fn lift_vector(field: &DifferenceField, sheet: SheetId, x: &Point, w: &Point) -> Result<(Point, Point, f64)> {
    let scen = field.scenario();
    let s = scen.sheet(sheet)?;
    let dim = scen.dim();
    let (_, g) = s.eval(x, dim)?;
    let h = s.hessian(x, dim);
    let hw = [h[0][0] * w[0] + h[0][1] * w[1], h[1][0] * w[0] + h[1][1] * w[1]];
    Ok((*w, hw, g[0] * w[0] + g[1] * w[1]))
}

/// The 1-jet `(x, df(x), f(x))` of a sheet.
pub fn jet(field: &DifferenceField, sheet: SheetId, x: &Point) -> Result<(Point, Point, f64)> {
    let scen = field.scenario();
    let (v, g) = scen.sheet(sheet)?.eval(x, scen.dim())?;
    Ok((*x, g, v))
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

    #[test]
    fn double_well_matches_tanh() {
        let f = field("double-well-1d", 1, 2);
        let flow = integrate_maximal(&f, [0.0, 0.0], &FlowOptions::default()).unwrap();
        assert_eq!(flow.class, FlowClass::Morse { from: 0, to: 1 });
        let sup = flow
            .nodes
            .iter()
            .filter(|n| n.t.abs() < 15.0)
            .map(|n| (n.x[0] - n.t.tanh()).abs())
            .fold(0.0, f64::max);
        assert!(sup < 1e-6, "sup {sup}");
    }

    #[test]
    fn cusp_hit_time() {
        let f = field("cusp-2d", 1, 2);
        for x0 in [0.125, 0.5, 0.845] {
            let flow = integrate_maximal(&f, [x0, 0.0], &FlowOptions::default()).unwrap();
            let hit = flow.nodes.last().unwrap();
            // sqrt(2 x1(t)) = sqrt(2 x0) - 2t.
            assert!((hit.t - (2.0 * x0).sqrt() / 2.0).abs() < 1e-4, "{}", hit.t);
            assert!(matches!(flow.end, EndEvent::FoldHit { component: 0, contact_order: 1, .. }));
            assert_eq!(flow.class, FlowClass::ChartTruncated);
        }
    }

    #[test]
    fn classification_examples() {
        let o = FlowOptions::default();
        let fm = integrate_maximal(&field("fold-morse-1d", 1, 3), [0.25, 0.0], &o).unwrap();
        assert!(matches!(fm.class, FlowClass::FoldTerminating { from: 0, .. }));
        let sw = integrate_maximal(&field("fold-morse-1d", 3, 1), [0.25, 0.0], &o).unwrap();
        assert!(matches!(sw.class, FlowClass::FoldEmanating { to: 0, .. }));
        let lip = integrate_maximal(&field("lip-1d", 2, 4), [0.5, 0.0], &o).unwrap();
        match lip.class {
            FlowClass::Singular { from, to } => {
                assert!((from.point[0] - 1.0).abs() < 1e-9 && to.point[0].abs() < 1e-9);
                assert_eq!((from.component, to.component), (1, 0));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn tangent_contact_is_quadratic() {
        let f = field("tangent-2d", 1, 3);
        let flow = integrate_maximal(&f, [0.3, -0.5], &FlowOptions::default()).unwrap();
        assert!(
            matches!(flow.end, EndEvent::FoldHit { contact_order: 2, .. }),
            "{:?}",
            flow.end
        );
    }

    #[test]
    fn manufactured_contact_orders() {
        let sigma: Vec<f64> = (0..9).map(|k| k as f64 * 1e-3).collect();
        let lin: Vec<f64> = sigma.iter().map(|s| 0.7 * s).collect();
        let quad: Vec<f64> = sigma.iter().map(|s| 0.5 * s * s).collect();
        let cubic: Vec<f64> = sigma.iter().map(|s| 2.0 * s * s * s).collect();
        assert_eq!(contact_order(&sigma, &lin, 2, 1e-7).unwrap(), 1);
        assert_eq!(contact_order(&sigma, &quad, 2, 1e-7).unwrap(), 2);
        assert!(matches!(
            contact_order(&sigma, &quad, 1, 1e-7),
            Err(Error::TransversalityViolation { order: 2, dim: 1 })
        ));
        assert!(matches!(
            contact_order(&sigma, &cubic, 2, 1e-7),
            Err(Error::TransversalityViolation { order: 3, dim: 2 })
        ));
    }

    #[test]
    fn classify_table() {
        let c = |id| EndEvent::Critical { id, point: [0.0; 2] };
        let h = EndEvent::FoldHit { component: 0, point: [0.0; 2], contact_order: 1 };
        let x = EndEvent::ChartExit { point: [0.0; 2] };
        assert_eq!(classify(&c(0), &c(1)), FlowClass::Morse { from: 0, to: 1 });
        assert!(matches!(classify(&h, &h), FlowClass::Singular { .. }));
        assert_eq!(classify(&c(0), &x), FlowClass::ChartTruncated);
    }
}
