use std::sync::Arc;

use super::*;
use crate::flow::{integrate_maximal, FlowOptions};
use crate::scenario::load_scenario;

fn scenario(fixture: &str) -> Arc<Scenario> {
    let text = std::fs::read_to_string(format!("{}/fixtures/{fixture}.toml", env!("CARGO_MANIFEST_DIR"))).unwrap();
    Arc::new(load_scenario(&text).unwrap())
}

fn edge_tree(s: &Arc<Scenario>, pair: (u32, u32), x: Point) -> BrokenFlowTree {
    let f = s.difference(pair.0, pair.1).unwrap();
    let flow = integrate_maximal(&f, x, &FlowOptions::default()).unwrap();
    BrokenFlowTree::single_edge(s.clone(), BrokenFlow::unbroken(flow).unwrap()).unwrap()
}

const THREE_SHEETS: &str = r#"
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

/// Edge of `F_pair` restricted between the points `a` and `b`.
fn part(s: &Arc<Scenario>, pair: (u32, u32), a: f64, b: f64) -> TreeEdge {
    let f = s.difference(pair.0, pair.1).unwrap();
    let flow = integrate_maximal(&f, [0.5 * (a + b), 0.0], &FlowOptions::default()).unwrap();
    TreeEdge {
        pair,
        image: EdgeImage::Real {
            flow: BrokenFlow::unbroken(flow).unwrap(),
            f_start: f.value(&[a, 0.0]).unwrap(),
            f_end: f.value(&[b, 0.0]).unwrap(),
        },
    }
}

#[test]
fn double_well_edge_matches_at_critical_points() {
    let s = scenario("double-well-1d");
    let t = edge_tree(&s, (1, 2), [0.0, 0.0]);
    let d = t.validate(1e-6);
    assert!(d.valid, "{d:?}");
    assert!(d.loop_closed);
    let mut moved = t.clone();
    let f = s.difference(1, 2).unwrap();
    moved.vertices[0] = [-0.9, 0.0];
    if let EdgeImage::Real { f_start, .. } = &mut moved.edges[0].image {
        *f_start = f.value(&[-0.9, 0.0]).unwrap();
    }
    let d = moved.validate(1e-6);
    assert!(!d.valid);
    assert!(d.vertices[0].pairs[0].cotangent_gap > 1e-3);
}

#[test]
fn y_vertex_orientation() {
    let s = Arc::new(load_scenario(THREE_SHEETS).unwrap());
    let src = SourceTree::new(4, vec![(1, 0), (0, 2), (0, 3)], vec![vec![0, 1, 2], vec![0], vec![1], vec![2]]).unwrap();
    let good = BrokenFlowTree::new(
        s.clone(),
        src,
        vec![part(&s, (1, 3), 0.2, 0.3), part(&s, (1, 2), 0.3, 0.4), part(&s, (2, 3), 0.3, 0.45)],
        vec![[0.3, 0.0], [0.2, 0.0], [0.4, 0.0], [0.45, 0.0]],
    )
    .unwrap();
    let d = good.validate(1e-6);
    assert!(d.vertices[0].pairs.iter().all(|p| p.cotangent_gap < 1e-9 && p.orientation_ok), "{d:?}");
    assert!(d.loop_closed);

    let src = SourceTree::new(4, vec![(1, 0), (2, 0), (0, 3)], vec![vec![0, 1, 2], vec![0], vec![1], vec![2]]).unwrap();
    let bad = BrokenFlowTree::new(
        s.clone(),
        src,
        vec![part(&s, (1, 3), 0.2, 0.3), part(&s, (1, 2), 0.25, 0.3), part(&s, (2, 3), 0.3, 0.45)],
        vec![[0.3, 0.0], [0.2, 0.0], [0.25, 0.0], [0.45, 0.0]],
    )
    .unwrap();
    let d = bad.validate(1e-6);
    assert!(!d.valid);
    assert!(d.vertices[0].pairs.iter().any(|p| !p.orientation_ok), "{d:?}");
}

#[test]
fn reductions() {
    let s = scenario("torus-2d");
    let t = edge_tree(&s, (1, 2), [0.25, 0.1]);
    let min = t.minimal_representative();
    assert_eq!(min, min.minimal_representative());
    let split = t.split_edge(0, 0.3).unwrap();
    assert_eq!(split.edge_count(), 2);
    assert_eq!(split.minimal_representative(), min);
    assert_eq!(split.minimal_edge_count(), 1);
    let ghosted = split.insert_ghost(2, 1, 1).unwrap();
    assert_eq!(ghosted.edge_count(), 3);
    assert!(ghosted.validate(1e-6).valid, "{:?}", ghosted.validate(1e-6));
    assert_eq!(ghosted.minimal_representative(), min);

    let y = Arc::new(load_scenario(THREE_SHEETS).unwrap());
    let src = SourceTree::new(3, vec![(1, 0), (0, 2)], vec![vec![0, 1], vec![0], vec![1]]).unwrap();
    let two = BrokenFlowTree::new(
        y.clone(),
        src,
        vec![part(&y, (1, 3), 0.2, 0.3), part(&y, (1, 2), 0.3, 0.4)],
        vec![[0.3, 0.0], [0.2, 0.0], [0.4, 0.0]],
    )
    .unwrap();
    assert_eq!(two.insert_ghost(0, 1, 1).unwrap().minimal_edge_count(), 2);
    assert_eq!(two.minimal_edge_count(), 2);
}

#[test]
fn combinatorial_types() {
    let s = scenario("torus-2d");
    let a = edge_tree(&s, (1, 2), [0.25, 0.1]);
    let b = edge_tree(&s, (1, 2), [0.25, 0.2]);
    assert_eq!(a.combinatorial_type(), b.combinatorial_type());
    assert_eq!(a.combinatorial_type(), a.split_edge(0, 0.5).unwrap().combinatorial_type());

    let y = Arc::new(load_scenario(THREE_SHEETS).unwrap());
    let f12 = edge_tree(&y, (1, 2), [0.3, 0.0]);
    let f13 = edge_tree(&y, (1, 3), [0.3, 0.0]);
    assert_ne!(f12.combinatorial_type(), f13.combinatorial_type());

    let fm = scenario("fold-morse-1d");
    let morse = edge_tree(&scenario("double-well-1d"), (1, 2), [0.0, 0.0]);
    let term = edge_tree(&fm, (1, 3), [0.25, 0.0]);
    assert_ne!(morse.combinatorial_type().key, term.combinatorial_type().key);
    assert!(term.combinatorial_type().key.contains("fold-terminating"));
}

#[test]
fn torus_stratum_limit() {
    let s = scenario("torus-2d");
    let seq: Vec<BrokenFlowTree> = (1..=12).map(|n| edge_tree(&s, (1, 2), [0.25, 0.5f64.powi(n + 4)])).collect();
    let opts = LimitOptions::default();
    let lim = stratum_limit(&seq, &opts).unwrap();
    let psi = lim.tree.edges[0].flow().unwrap();
    assert_eq!(psi.chain, vec![2]);
    assert!(is_sfg_limit(&seq, &lim.tree, &opts));
    let unbroken = edge_tree(&s, (1, 2), [0.25, 0.25]);
    assert!(!is_sfg_limit(&seq, &unbroken, &opts));

    let constant = vec![unbroken.clone(); 8];
    let c = stratum_limit(&constant, &opts).unwrap();
    assert!(limit::equivalent(&c.tree, &unbroken, 1e-6));

    let bounded = LimitOptions { max_edges: Some(0), ..LimitOptions::default() };
    assert!(matches!(stratum_limit(&constant, &bounded), Err(crate::Error::InvalidTree(_))));
    let bounded = LimitOptions { max_edges: Some(1), ..LimitOptions::default() };
    assert!(stratum_limit(&constant, &bounded).is_ok());
}

#[test]
fn shrinking_edge_becomes_ghost() {
    let s = scenario("double-well-1d");
    let base = edge_tree(&s, (1, 2), [0.0, 0.0]);
    let seq: Vec<BrokenFlowTree> = (1..=16)
        .map(|n| {
            let lo = 0.1 - 0.2 * 0.5f64.powi(n);
            base.split_edge(0, 0.1).unwrap().split_edge(1, lo).unwrap()
        })
        .collect();
    let lim = stratum_limit(&seq, &LimitOptions::default()).unwrap();
    assert_eq!(lim.ghosts.len(), 1);
    assert_eq!(lim.tree.edge_count(), 3);
    assert_eq!(lim.minimal.edge_count(), 1);
}

#[test]
fn documents_load_and_reduce() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/trees");
    let one = document::load_tree(&dir.join("double-well-edge.toml")).unwrap();
    let two = document::load_tree(&dir.join("double-well-split.toml")).unwrap();
    assert!(one.validate(1e-6).valid);
    assert!(two.validate(1e-6).valid);
    assert_eq!(two.minimal_edge_count(), 1);
    assert_eq!(one.combinatorial_type(), two.combinatorial_type());
    let text = toml::to_string(&two.to_document("../double-well-1d.toml")).unwrap();
    let again = document::TreeDoc::parse(&text).unwrap();
    assert_eq!(again.edges.len(), 2);
}

#[test]
fn torus_family_audit_passes() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/torus-trees");
    let family = document::load_family(&dir).unwrap();
    let report = audit_convergence_structure(&family, &SfgOracle::default());
    for a in &report.axioms {
        eprintln!("{} {:?} {:?}", a.axiom, a.verdict, a.witnesses.iter().take(3).collect::<Vec<_>>());
    }
    assert!(report.passed());
}
