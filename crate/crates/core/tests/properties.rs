mod common;

use std::sync::OnceLock;

use flowtree::broken::{assemble, cluster};
use flowtree::flow::MaximalFlow;
use flowtree::scenario::{Chart, DifferenceField};
use flowtree::tree::BrokenFlowTree;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bases() -> &'static [BrokenFlowTree] {
    static B: OnceLock<Vec<BrokenFlowTree>> = OnceLock::new();
    B.get_or_init(common::base_trees)
}

fn pools() -> &'static [(DifferenceField, Vec<MaximalFlow>)] {
    static P: OnceLock<Vec<(DifferenceField, Vec<MaximalFlow>)>> = OnceLock::new();
    P.get_or_init(|| {
        [
            ("torus-2d", (1, 2), 6),
            ("double-well-1d", (1, 2), 12),
            ("fold-morse-1d", (1, 3), 12),
            ("fold-morse-1d", (3, 1), 12),
            ("lip-1d", (1, 2), 12),
            ("fold-well-2d", (1, 2), 5),
        ]
        .into_iter()
        .map(|(name, pair, n)| {
            let f = common::scenario(name).difference(pair.0, pair.1).unwrap();
            let pool = common::flow_pool(&f, n);
            (f, pool)
        })
        .collect()
    })
}

fn edited(seed: u64, base: usize, edits: usize) -> (BrokenFlowTree, BrokenFlowTree) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = bases()[base % bases().len()].clone();
    let mut t = b.clone();
    for _ in 0..edits {
        if let Some(n) = common::random_edit(&mut rng, &t) {
            t = n;
        }
    }
    (b, t)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn minimal_representative_is_idempotent_and_edit_invariant(seed in any::<u64>(), base in 0usize..5, edits in 1usize..5) {
        let (b, t) = edited(seed, base, edits);
        let m = t.minimal_representative();
        prop_assert_eq!(&m, &m.minimal_representative());
        prop_assert_eq!(&m, &b.minimal_representative());
        prop_assert_eq!(t.combinatorial_type(), b.combinatorial_type());
    }

    #[test]
    fn edits_preserve_vertex_matching(seed in any::<u64>(), base in 0usize..5, edits in 1usize..4) {
        let (b, t) = edited(seed, base, edits);
        prop_assume!(b.validate(1e-6).valid);
        let d = t.validate(1e-6);
        prop_assert!(d.valid, "{:?}", d);
    }

    #[test]
    fn assemble_agrees_with_definition(seed in any::<u64>(), which in 0usize..6) {
        let (field, pool) = &pools()[which];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ncrit = field.critical_points().unwrap().len();
        let (family, segs) = common::random_candidate(&mut rng, pool, ncrit);
        let want = common::oracle_valid(field, family, &segs);
        let got = assemble(family, segs);
        prop_assert_eq!(got.is_ok(), want, "{:?}", got.err());
        if let Ok(b) = got {
            let crit = field.critical_points().unwrap();
            prop_assert!(b.chain.windows(2).all(|w| crit[w[0]].index > crit[w[1]].index));
        }
    }

    #[test]
    fn cluster_is_maximal_and_tight(pts in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..30), r in 0.01f64..0.5) {
        let chart = Chart::new(2, &[[-1.0, 1.0], [-1.0, 1.0]], &[false, false]).unwrap();
        let pts: Vec<[f64; 2]> = pts.into_iter().map(|(a, b)| [a, b]).collect();
        let best = cluster(&pts, r, &chart);
        prop_assert!(!best.is_empty());
        for &i in &best {
            for &j in &best {
                prop_assert!(chart.dist(&pts[i], &pts[j]) <= 2.0 * r + 1e-12);
            }
        }
        for p in &pts {
            let n = pts.iter().filter(|q| chart.dist(p, q) <= r).count();
            prop_assert!(n <= best.len());
        }
    }

    #[test]
    fn periodic_distance_is_a_wrapped_metric(a in (-3.0f64..3.0, -3.0f64..3.0), b in (-3.0f64..3.0, -3.0f64..3.0)) {
        let chart = Chart::new(2, &[[-0.25, 0.75], [-0.25, 0.75]], &[true, true]).unwrap();
        let (a, b) = ([a.0, a.1], [b.0, b.1]);
        let d = chart.dist(&a, &b);
        prop_assert!((d - chart.dist(&b, &a)).abs() < 1e-12);
        prop_assert!(d <= 0.5f64.hypot(0.5) + 1e-12);
        prop_assert!((chart.dist(&chart.wrap(a), &b) - d).abs() < 1e-12);
    }
}
