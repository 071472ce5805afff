#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use flowtree::broken::{BrokenFlow, Family};
use flowtree::flow::{integrate_maximal, EndEvent, FlowOptions, MaximalFlow};
use flowtree::scenario::{load_scenario, load_scenario_file, DifferenceField, Scenario, SheetId};
use flowtree::tree::{BrokenFlowTree, EdgeImage, SourceTree, TreeEdge};
use rand::Rng;

pub fn scenario(name: &str) -> Arc<Scenario> {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(format!("{name}.toml"));
    Arc::new(load_scenario_file(&p).unwrap())
}

pub const THREE_SHEETS: &str = r#"
[chart]
dim = 1
bounds = [[0.0, 1.0]]
periodic = [true]
[[sheets]]
id = 1
kind = "smooth"
expr = "2*cos(2*pi*x1)"
[[sheets]]
id = 2
kind = "smooth"
expr = "cos(2*pi*x1)"
[[sheets]]
id = 3
kind = "smooth"
expr = "0"
"#;

pub fn three_sheets() -> Arc<Scenario> {
    Arc::new(load_scenario(THREE_SHEETS).unwrap())
}

pub fn flow(field: &DifferenceField, x: [f64; 2]) -> MaximalFlow {
    integrate_maximal(field, x, &FlowOptions::default()).unwrap()
}

/// Maximal flows through a grid of starts, plus constant flows at critical points.
pub fn flow_pool(field: &DifferenceField, per_axis: usize) -> Vec<MaximalFlow> {
    let chart = field.chart();
    let dom = field.domain_box();
    let dim = field.dim();
    let coord = |axis: usize, i: usize| {
        let lo = dom[axis][0].max(chart.bounds[axis][0]);
        let hi = dom[axis][1].min(chart.bounds[axis][1]);
        lo + (hi - lo) * (i as f64 + 0.5) / per_axis as f64
    };
    let mut starts = Vec::new();
    for i in 0..per_axis {
        if dim == 1 {
            starts.push([coord(0, i), 0.0]);
        } else {
            for j in 0..per_axis {
                starts.push([coord(0, i), coord(1, j)]);
            }
        }
    }
    let opts = FlowOptions::default();
    let mut pool: Vec<MaximalFlow> = starts.iter().filter_map(|x| integrate_maximal(field, *x, &opts).ok()).collect();
    for c in field.critical_points().unwrap() {
        pool.extend(integrate_maximal(field, c.location, &opts).ok());
    }
    pool
}

fn crit_id(e: &EndEvent) -> Option<usize> {
    match e {
        EndEvent::Critical { id, .. } => Some(*id),
        _ => None,
    }
}

fn on_fold(e: &EndEvent) -> bool {
    matches!(e, EndEvent::FoldHit { .. })
}

/// Broken-flow validity straight from the definition: consecutive pieces
/// meet at critical points, Morse indices strictly decrease along all
/// critical nodes, and the ends carry the family's endpoint data.
pub fn oracle_valid(field: &DifferenceField, family: Family, segs: &[MaximalFlow]) -> bool {
    if segs.is_empty() || segs.iter().any(|s| s.constant) {
        return false;
    }
    let index = |id: usize| field.critical_points().unwrap()[id].index;
    let mut nodes = Vec::new();
    nodes.extend(crit_id(&segs[0].start));
    for w in segs.windows(2) {
        match (crit_id(&w[0].end), crit_id(&w[1].start)) {
            (Some(a), Some(b)) if a == b => nodes.push(a),
            _ => return false,
        }
    }
    nodes.extend(crit_id(&segs[segs.len() - 1].end));
    if nodes.windows(2).any(|w| index(w[0]) <= index(w[1])) {
        return false;
    }
    let (start, end) = (&segs[0].start, &segs[segs.len() - 1].end);
    match family {
        Family::Morse { from, to } => crit_id(start) == Some(from) && crit_id(end) == Some(to),
        Family::FoldEmanating { to } => on_fold(start) && crit_id(end) == Some(to),
        Family::FoldTerminating { from } => crit_id(start) == Some(from) && on_fold(end),
        Family::Singular => on_fold(start) && on_fold(end),
    }
}

/// One to three pieces, usually chained end to start, with the family read
/// off the ends or occasionally drawn at random.
pub fn random_candidate(rng: &mut impl Rng, pool: &[MaximalFlow], ncrit: usize) -> (Family, Vec<MaximalFlow>) {
    let len = rng.gen_range(1..=3);
    let mut segs = vec![pool[rng.gen_range(0..pool.len())].clone()];
    while segs.len() < len {
        let last = segs.last().unwrap();
        let next: Vec<&MaximalFlow> = pool
            .iter()
            .filter(|s| crit_id(&s.start).is_some() && crit_id(&s.start) == crit_id(&last.end))
            .collect();
        if !next.is_empty() && rng.gen_bool(0.8) {
            segs.push(next[rng.gen_range(0..next.len())].clone());
        } else {
            segs.push(pool[rng.gen_range(0..pool.len())].clone());
        }
    }
    let n = ncrit.max(1);
    let family = if rng.gen_bool(0.15) {
        match rng.gen_range(0..4) {
            0 => Family::Morse {
                from: rng.gen_range(0..n),
                to: rng.gen_range(0..n),
            },
            1 => Family::FoldEmanating { to: rng.gen_range(0..n) },
            2 => Family::FoldTerminating { from: rng.gen_range(0..n) },
            _ => Family::Singular,
        }
    } else {
        let (s, e) = (&segs[0].start, &segs[segs.len() - 1].end);
        match (crit_id(s), crit_id(e)) {
            (Some(a), Some(b)) => Family::Morse { from: a, to: b },
            (None, Some(b)) => Family::FoldEmanating { to: b },
            (Some(a), None) => Family::FoldTerminating { from: a },
            (None, None) => Family::Singular,
        }
    };
    (family, segs)
}

pub fn edge_tree(s: &Arc<Scenario>, pair: (SheetId, SheetId), x: [f64; 2]) -> BrokenFlowTree {
    let f = s.difference(pair.0, pair.1).unwrap();
    let fl = flow(&f, x);
    let b = BrokenFlow::unbroken(fl).unwrap_or_else(|e| panic!("flow through {x:?}: {e}"));
    BrokenFlowTree::single_edge(s.clone(), b).unwrap()
}

fn part(s: &Arc<Scenario>, pair: (SheetId, SheetId), a: f64, b: f64) -> TreeEdge {
    let f = s.difference(pair.0, pair.1).unwrap();
    TreeEdge {
        pair,
        image: EdgeImage::Real {
            flow: BrokenFlow::unbroken(flow(&f, [0.5 * (a + b), 0.0])).unwrap(),
            f_start: f.value(&[a, 0.0]).unwrap(),
            f_end: f.value(&[b, 0.0]).unwrap(),
        },
    }
}

/// A trivalent tree on three periodic sheets.
pub fn y_tree() -> BrokenFlowTree {
    let s = three_sheets();
    let src = SourceTree::new(4, vec![(1, 0), (0, 2), (0, 3)], vec![vec![0, 1, 2], vec![0], vec![1], vec![2]]).unwrap();
    BrokenFlowTree::new(
        s.clone(),
        src,
        vec![part(&s, (1, 3), 0.2, 0.3), part(&s, (1, 2), 0.3, 0.4), part(&s, (2, 3), 0.3, 0.45)],
        vec![[0.3, 0.0], [0.2, 0.0], [0.4, 0.0], [0.45, 0.0]],
    )
    .unwrap()
}

/// Trees the edit generators start from.
pub fn base_trees() -> Vec<BrokenFlowTree> {
    let torus = scenario("torus-2d");
    let dw = scenario("double-well-1d");
    let fm = scenario("fold-morse-1d");
    vec![
        edge_tree(&torus, (1, 2), [0.25, 0.1]),
        edge_tree(&torus, (1, 2), [0.1, 0.3]),
        edge_tree(&dw, (1, 2), [0.0, 0.0]),
        edge_tree(&fm, (1, 3), [0.25, 0.0]),
        y_tree(),
    ]
}

/// A random splitting or ghost insertion; `None` when the draw is not applicable.
pub fn random_edit(rng: &mut impl Rng, t: &BrokenFlowTree) -> Option<BrokenFlowTree> {
    if rng.gen_bool(0.5) {
        let real: Vec<usize> = (0..t.edges.len()).filter(|&e| !t.edges[e].is_ghost()).collect();
        if real.is_empty() {
            return None;
        }
        let e = real[rng.gen_range(0..real.len())];
        let EdgeImage::Real { f_start, f_end, .. } = &t.edges[e].image else {
            unreachable!()
        };
        let u: f64 = rng.gen_range(0.05..0.95);
        t.split_edge(e, f_end + u * (f_start - f_end)).ok()
    } else {
        let v = rng.gen_range(0..t.vertices.len());
        let k = t.source.orders[v].len();
        let pos = rng.gen_range(0..k);
        let take = rng.gen_range(1..=k);
        t.insert_ghost(v, pos, take).ok()
    }
}

/// One generated sequence for the stratum-limit sweep.
pub struct SweepCase {
    pub label: String,
    pub trees: Vec<BrokenFlowTree>,
}

fn shifted(s: &Arc<Scenario>, pair: (SheetId, SheetId), base: [f64; 2], dir: [f64; 2], scale: f64, len: usize) -> Vec<BrokenFlowTree> {
    (1..=len)
        .map(|n| {
            let w = scale * 0.5f64.powi(n as i32);
            edge_tree(s, pair, [base[0] + w * dir[0], base[1] + w * dir[1]])
        })
        .collect()
}

fn levels(t: &BrokenFlowTree, e: usize) -> (f64, f64) {
    match &t.edges[e].image {
        EdgeImage::Real { f_start, f_end, .. } => (*f_start, *f_end),
        EdgeImage::Ghost { .. } => unreachable!("real edge"),
    }
}

/// Sequences of trees with at most three edges drawn from eight templates:
/// breaking and unbroken torus flows, moving and collapsing split vertices,
/// ghost-decorated edges and fold flows in one and two dimensions.
pub fn sweep_cases(rng: &mut impl Rng, count: usize) -> Vec<SweepCase> {
    let torus = scenario("torus-2d");
    let dw = scenario("double-well-1d");
    let fm = scenario("fold-morse-1d");
    let fw = scenario("fold-well-2d");
    let len = 12;
    let sign = |rng: &mut dyn rand::RngCore| if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let (label, trees) = match i % 8 {
            0 => {
                let x0 = rng.gen_range(0.1..0.4);
                let s = sign(rng);
                (format!("torus breaking at (1/2,0) from x1={x0:.3}"), shifted(&torus, (1, 2), [x0, 0.0], [0.0, s], 1.0, len))
            }
            1 => {
                let y0 = rng.gen_range(0.1..0.4);
                let s = sign(rng);
                (format!("torus breaking at (0,1/2) from x2={y0:.3}"), shifted(&torus, (1, 2), [0.0, y0], [s, 0.0], 1.0, len))
            }
            2 => {
                let b = [rng.gen_range(0.08..0.42), rng.gen_range(0.08..0.42)];
                let th: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                (
                    format!("torus unbroken near ({:.3},{:.3})", b[0], b[1]),
                    shifted(&torus, (1, 2), b, [th.cos(), th.sin()], 0.05, len),
                )
            }
            3 => {
                let base = edge_tree(&dw, (1, 2), [0.0, 0.0]);
                let (hi, lo) = levels(&base, 0);
                let f = lo + rng.gen_range(0.3..0.7) * (hi - lo);
                let trees = (1..=len)
                    .map(|n| base.split_edge(0, f + 0.1 * 0.5f64.powi(n as i32)).unwrap())
                    .collect();
                (format!("double well split converging to level {f:.3}"), trees)
            }
            4 => {
                let base = edge_tree(&dw, (1, 2), [0.0, 0.0]);
                let a = rng.gen_range(-0.3..0.3);
                let trees = (1..=len)
                    .map(|n| {
                        let t = base.split_edge(0, a).unwrap();
                        t.split_edge(1, a - 0.2 * 0.5f64.powi(n as i32)).unwrap()
                    })
                    .collect();
                (format!("double well edge collapsing at level {a:.3}"), trees)
            }
            5 => {
                let b = [rng.gen_range(0.08..0.42), rng.gen_range(0.08..0.42)];
                let v = rng.gen_range(0..2);
                let trees = shifted(&torus, (1, 2), b, [1.0, 0.0], 0.05, len)
                    .into_iter()
                    .map(|t| t.insert_ghost(v, 0, 1).unwrap())
                    .collect();
                (format!("torus edge with a ghost at vertex {v}"), trees)
            }
            6 => {
                let base = edge_tree(&fm, (1, 3), [0.25, 0.0]);
                let (hi, lo) = levels(&base, 0);
                let f = lo + rng.gen_range(0.3..0.7) * (hi - lo);
                let d = 0.2 * (hi - lo);
                let trees = (1..=len)
                    .map(|n| base.split_edge(0, f - d * 0.5f64.powi(n as i32)).unwrap())
                    .collect();
                (format!("fold-terminating split converging to level {f:.3}"), trees)
            }
            _ => {
                let y0 = rng.gen_range(-0.2..0.2);
                let s = sign(rng);
                (format!("fold-emanating flows near x2={y0:.3}"), shifted(&fw, (3, 1), [1.0, y0], [0.0, s], 0.1, len))
            }
        };
        out.push(SweepCase { label, trees });
    }
    out
}
