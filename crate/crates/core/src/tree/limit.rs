use serde::Serialize;

use super::{BrokenFlowTree, Diagnostics, EdgeImage, TreeEdge};
use crate::broken::{extract_limit, tail_cluster, BrokenFlow, Certificate, ExtractOptions, NeighborhoodSpec};
use crate::error::{Error, Result};
use crate::Point;

#[derive(Debug, Clone)]
pub struct LimitOptions {
    pub extract: ExtractOptions,
    /// Cluster radius for vertex images; also the ghost-edge threshold.
    pub vertex_radius: f64,
    /// Cotangent matching tolerance for validation.
    pub match_tol: f64,
    /// Bound `N` on minimal edge counts; larger trees are rejected.
    pub max_edges: Option<usize>,
}

impl Default for LimitOptions {
    fn default() -> Self {
        LimitOptions {
            extract: ExtractOptions::default(),
            vertex_radius: 1e-3,
            match_tol: 1e-6,
            max_edges: None,
        }
    }
}

/// A stratum limit with the joint subsequence that converges to it.
#[derive(Debug, Clone)]
pub struct StratumLimit {
    /// Limit in the sequence's numbering, ghost edges included.
    pub tree: BrokenFlowTree,
    pub minimal: BrokenFlowTree,
    pub indices: Vec<usize>,
    /// Edges of `tree` that degenerated to ghosts.
    pub ghosts: Vec<usize>,
    /// Per-edge ladder certificates (`None` for ghost edges).
    pub certificates: Vec<Option<Certificate>>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Serialize)]
pub struct TreeCertificate {
    pub radii: Vec<f64>,
    /// Start of the certified suffix per ladder radius.
    pub tail_starts: Vec<usize>,
}

/// Sequence trees renumbered so that edge `k` corresponds across members.
fn aligned(seq: &[BrokenFlowTree]) -> Result<Vec<BrokenFlowTree>> {
    let gamma = seq[0].combinatorial_type();
    for (n, t) in seq.iter().enumerate().skip(1) {
        if t.combinatorial_type() != gamma {
            return Err(Error::GammaMismatch(format!("tree {n} differs from tree 0")));
        }
    }
    let canon: Vec<BrokenFlowTree> = seq.iter().map(BrokenFlowTree::canonical).collect();
    let shape = canon[0].shape();
    if canon.iter().all(|t| t.shape() == shape) {
        return Ok(canon);
    }
    Ok(seq.iter().map(BrokenFlowTree::minimal_representative).collect())
}

/// Extract a convergent subsequence and its stratum limit. The subsequence
/// is drawn from the most frequent combinatorial type.
pub fn stratum_limit(seq: &[BrokenFlowTree], opts: &LimitOptions) -> Result<StratumLimit> {
    let min_run = opts.extract.min_run;
    if let Some(n) = opts.max_edges {
        if let Some(k) = seq.iter().position(|t| t.minimal_edge_count() > n) {
            return Err(Error::InvalidTree(format!(
                "tree {k} has {} edges in minimal form, above the bound {n}",
                seq[k].minimal_edge_count()
            )));
        }
    }
    let mut groups: Vec<(super::CombinatorialType, Vec<usize>)> = Vec::new();
    for (n, t) in seq.iter().enumerate() {
        let g = t.combinatorial_type();
        match groups.iter_mut().find(|x| x.0 == g) {
            Some(x) => x.1.push(n),
            None => groups.push((g, vec![n])),
        }
    }
    let picked = groups
        .into_iter()
        .max_by(|a, b| a.1.len().cmp(&b.1.len()).then(a.1.last().cmp(&b.1.last())))
        .map(|g| g.1)
        .unwrap_or_default();
    if picked.len() < min_run {
        return Err(Error::Inconclusive(format!(
            "largest combinatorial type class has {} of {} trees (need {min_run})",
            picked.len(),
            seq.len()
        )));
    }
    let sub: Vec<BrokenFlowTree> = picked.iter().map(|&n| seq[n].clone()).collect();
    let mut lim = typed_limit(&sub, opts)?;
    lim.indices = lim.indices.iter().map(|&i| picked[i]).collect();
    Ok(lim)
}

fn typed_limit(seq: &[BrokenFlowTree], opts: &LimitOptions) -> Result<StratumLimit> {
    let min_run = opts.extract.min_run;
    let trees = aligned(seq)?;
    let base = &trees[0];
    let ne = base.edges.len();
    let mut run: Vec<usize> = (0..trees.len()).collect();
    let mut limits: Vec<Option<BrokenFlow>> = vec![None; ne];
    for (k, slot) in limits.iter_mut().enumerate() {
        if base.edges[k].is_ghost() {
            continue;
        }
        let flows: Vec<BrokenFlow> = run
            .iter()
            .map(|&n| trees[n].edges[k].flow().cloned().expect("aligned real edge"))
            .collect();
        let ex = extract_limit(&flows, &opts.extract).map_err(|e| match e {
            Error::Inconclusive(m) => Error::Inconclusive(format!("edge {k}: {m}")),
            other => other,
        })?;
        run = ex.indices.iter().map(|&i| run[i]).collect();
        *slot = Some(ex.limit);
    }
    let chart = &base.scenario.chart;
    let nv = base.vertices.len();
    let mut points: Vec<Point> = Vec::with_capacity(nv);
    for v in 0..nv {
        let pts: Vec<Point> = run.iter().map(|&n| trees[n].vertices[v]).collect();
        let max = opts.extract.ladder().first().copied().unwrap_or(opts.vertex_radius);
        let members = tail_cluster(&pts, opts.vertex_radius, max, min_run, chart);
        if members.len() < min_run {
            return Err(Error::Inconclusive(format!(
                "vertex {v}: largest image cluster has {} members (need {min_run})",
                members.len()
            )));
        }
        let rep = pts[*members.last().expect("nonempty")];
        run = members.iter().map(|&i| run[i]).collect();
        points.push(rep);
    }
    // Edges whose ends come together become ghosts; identify their vertices.
    let mut root: Vec<usize> = (0..nv).collect();
    fn find(root: &mut [usize], v: usize) -> usize {
        let mut r = v;
        while root[r] != r {
            r = root[r];
        }
        root[v] = r;
        r
    }
    let mut ghost = vec![false; ne];
    for k in 0..ne {
        let (a, b) = base.source.edges[k];
        if base.edges[k].is_ghost() || chart.dist(&points[a], &points[b]) <= opts.vertex_radius {
            ghost[k] = true;
            let (ra, rb) = (find(&mut root, a), find(&mut root, b));
            if ra != rb {
                root[rb] = ra;
            }
        }
    }
    let points: Vec<Point> = (0..nv).map(|v| points[find(&mut root, v)]).collect();
    let mut edges = Vec::with_capacity(ne);
    for k in 0..ne {
        let (a, b) = base.source.edges[k];
        let pair = base.edges[k].pair;
        if ghost[k] {
            edges.push(TreeEdge {
                pair,
                image: EdgeImage::Ghost { point: points[a] },
            });
            continue;
        }
        let psi = limits[k].clone().expect("real edge limit");
        let field = psi.field().clone();
        let (hi, lo) = psi.f_range();
        let level = |p: &Point| field.value(p).map(|f| f.clamp(lo, hi));
        let (fa, fb) = (level(&points[a])?, level(&points[b])?);
        if fa <= fb {
            return Err(Error::Inconclusive(format!("edge {k}: limit vertex levels out of order")));
        }
        edges.push(TreeEdge {
            pair,
            image: EdgeImage::Real {
                flow: psi,
                f_start: fa,
                f_end: fb,
            },
        });
    }
    let tree = BrokenFlowTree::new(base.scenario.clone(), base.source.clone(), edges, points)?;
    let sub: Vec<BrokenFlowTree> = run.iter().map(|&n| trees[n].clone()).collect();
    let mut certificates = Vec::with_capacity(ne);
    for k in 0..ne {
        certificates.push(match tree.edges[k].flow() {
            Some(psi) => {
                let flows: Vec<BrokenFlow> = sub.iter().map(|t| t.edges[k].flow().cloned().expect("real")).collect();
                let idx: Vec<usize> = (0..flows.len()).collect();
                Some(crate::broken::certify(psi, &flows, &idx, &opts.extract)?)
            }
            None => None,
        });
    }
    certify_tree(&sub, &tree, opts).map_err(Error::Inconclusive)?;
    let diagnostics = tree.validate(opts.match_tol.max(opts.vertex_radius));
    Ok(StratumLimit {
        minimal: tree.minimal_representative(),
        ghosts: (0..ne).filter(|&k| ghost[k]).collect(),
        tree,
        indices: run,
        certificates,
        diagnostics,
    })
}

/// Whether every real edge of `t` lies in the radius-`r` neighborhood of the
/// candidate's edge and every vertex image lies within `r`.
pub(crate) fn tree_within(cand: &BrokenFlowTree, specs: &[Option<NeighborhoodSpec>], t: &BrokenFlowTree, r: f64) -> bool {
    let chart = &cand.scenario.chart;
    if t.vertices.len() != cand.vertices.len() || t.edges.len() != cand.edges.len() {
        return false;
    }
    let vertices_ok = cand
        .vertices
        .iter()
        .zip(&t.vertices)
        .all(|(a, b)| chart.dist(a, b) <= r);
    vertices_ok
        && specs.iter().zip(&t.edges).all(|(w, e)| match (w, e.flow()) {
            (Some(w), Some(f)) => w.contains(f),
            (None, _) => true,
            (Some(_), None) => false,
        })
}

pub(crate) fn edge_specs(cand: &BrokenFlowTree, r: f64) -> Result<Vec<Option<NeighborhoodSpec>>> {
    cand.edges
        .iter()
        .map(|e| e.flow().map(|f| NeighborhoodSpec::around(f, r)).transpose())
        .collect()
}

/// Ladder check of `seq -> cand`, with a reason on failure.
pub(crate) fn certify_tree(seq: &[BrokenFlowTree], cand: &BrokenFlowTree, opts: &LimitOptions) -> std::result::Result<TreeCertificate, String> {
    let Some(last) = seq.last() else {
        return Err("empty sequence".into());
    };
    // Members of another combinatorial type lie outside every neighborhood.
    let gamma = last.combinatorial_type();
    let keep: Vec<usize> = (0..seq.len()).filter(|&n| seq[n].combinatorial_type() == gamma).collect();
    let sub: Vec<BrokenFlowTree> = keep.iter().map(|&n| seq[n].clone()).collect();
    let trees = aligned(&sub).map_err(|e| e.to_string())?;
    let cand = if cand.source == trees[0].source {
        cand.clone()
    } else {
        let c = cand.canonical();
        if c.source != trees[0].source {
            return Err("candidate is not isomorphic to the sequence trees".into());
        }
        c
    };
    for (k, e) in cand.edges.iter().enumerate() {
        if let (Some(psi), Some(lam)) = (e.flow(), trees[0].edges[k].flow()) {
            if psi.family != lam.family {
                return Err(format!(
                    "edge {k}: candidate family {} differs from {}",
                    psi.family.name(),
                    lam.family.name()
                ));
            }
        }
    }
    let radii = opts.extract.ladder();
    let mut tail_starts = Vec::new();
    for &r in &radii {
        let specs = edge_specs(&cand, r).map_err(|e| e.to_string())?;
        let mut inside = vec![false; seq.len()];
        for (t, &n) in trees.iter().zip(&keep) {
            inside[n] = tree_within(&cand, &specs, t, r);
        }
        let cut = inside.iter().rposition(|&ok| !ok).map_or(0, |i| i + 1);
        if seq.len() - cut < opts.extract.min_tail {
            return Err(format!(
                "radius {r}: certified tail has {} members (need {})",
                seq.len() - cut,
                opts.extract.min_tail
            ));
        }
        tail_starts.push(cut);
    }
    Ok(TreeCertificate { radii, tail_starts })
}

/// Whether the sequence stratum-converges to `candidate`.
pub fn is_sfg_limit(seq: &[BrokenFlowTree], candidate: &BrokenFlowTree, opts: &LimitOptions) -> bool {
    certify_tree(seq, candidate, opts).is_ok()
}

/// Equivalence of two trees up to numerical tolerance: equal minimal shapes
/// with nearby vertices and matching edge flows.
pub(crate) fn equivalent(a: &BrokenFlowTree, b: &BrokenFlowTree, tol: f64) -> bool {
    let (a, b) = (a.minimal_representative(), b.minimal_representative());
    if a.shape() != b.shape() || a.source != b.source {
        return false;
    }
    let chart = &a.scenario.chart;
    a.vertices.iter().zip(&b.vertices).all(|(p, q)| chart.dist(p, q) <= tol)
        && a.edges.iter().zip(&b.edges).all(|(x, y)| match (&x.image, &y.image) {
            (EdgeImage::Ghost { point: p }, EdgeImage::Ghost { point: q }) => chart.dist(p, q) <= tol,
            (EdgeImage::Real { flow: f, .. }, EdgeImage::Real { flow: g, .. }) => f.same_as(g, tol),
            _ => false,
        })
}
