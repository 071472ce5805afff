mod common;

use std::path::Path;

use flowtree::tree::document::load_family;
use flowtree::tree::{
    audit_convergence_structure, fg_open_check, stratum_limit, BrokenFlowTree, LimitOptions, LimitOracle, SfgOracle,
    StratumLimit, Verdict,
};

fn torus_family() -> flowtree::tree::AuditFamily {
    load_family(&Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/torus-trees")).unwrap()
}

/// Accepts any candidate of the sequence's combinatorial type.
struct CoarseOracle(SfgOracle);

impl LimitOracle for CoarseOracle {
    fn is_limit(&self, seq: &[BrokenFlowTree], candidate: &BrokenFlowTree) -> bool {
        seq.last().is_some_and(|t| t.combinatorial_type() == candidate.combinatorial_type())
    }
    fn extract(&self, seq: &[BrokenFlowTree]) -> flowtree::Result<StratumLimit> {
        self.0.extract(seq)
    }
}

#[test]
fn coarse_oracle_breaks_uniqueness() {
    let report = audit_convergence_structure(&torus_family(), &CoarseOracle(SfgOracle::default()));
    let u = report.axioms.iter().find(|a| a.axiom == "uniqueness").unwrap();
    assert_eq!(u.verdict, Verdict::Fail, "{:?}", u.witnesses);
    assert!(!report.passed());
}

#[test]
fn audit_is_seed_reproducible() {
    let a = audit_convergence_structure(&torus_family(), &SfgOracle::default());
    let b = audit_convergence_structure(&torus_family(), &SfgOracle::default());
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

fn torus_breaking() -> (Vec<BrokenFlowTree>, BrokenFlowTree) {
    let s = common::scenario("torus-2d");
    let seq: Vec<BrokenFlowTree> = (1..=12)
        .map(|n| common::edge_tree(&s, (1, 2), [0.25, 0.5f64.powi(n)]))
        .collect();
    let lim = stratum_limit(&seq, &LimitOptions::default()).unwrap();
    (seq, lim.tree)
}

#[test]
fn open_check_on_neighborhoods_and_closed_sets() {
    let (seq, lim) = torus_breaking();
    let near_saddle = |t: &BrokenFlowTree| {
        t.edges[0]
            .flow()
            .is_some_and(|f| f.segments.iter().any(|s| s.min_distance_to(&[0.5, 0.0]) < 0.05))
    };
    let r = fg_open_check(&near_saddle, &[(seq.clone(), lim.clone())], 2);
    assert!(r.passed && r.checked == 1, "{r:?}");

    // The broken stratum alone is closed, not open: no unbroken member enters it.
    let broken_only = |t: &BrokenFlowTree| t.edges[0].flow().is_some_and(|f| !f.chain.is_empty());
    let r = fg_open_check(&broken_only, &[(seq, lim)], 2);
    assert!(!r.passed);
    assert_eq!(r.first_violation, Some(0));
}

#[test]
fn sweep_sample_has_certified_limits() {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for case in common::sweep_cases(&mut rng, 8) {
        let lim = stratum_limit(&case.trees, &LimitOptions::default());
        assert!(lim.is_ok(), "{}: {:?}", case.label, lim.err());
        let lim = lim.unwrap();
        if case.trees.iter().all(|t| t.validate(1e-6).valid) {
            assert!(lim.diagnostics.valid, "{}: {:?}", case.label, lim.diagnostics);
        }
        assert!(flowtree::tree::is_sfg_limit(&case.trees, &lim.tree, &LimitOptions::default()), "{}", case.label);
    }
}
