use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::limit::{certify_tree, edge_specs, equivalent, tree_within};
use super::{BrokenFlowTree, LimitOptions, StratumLimit};
use crate::error::Result;

/// A sequence of trees indexed from 1, extendable on demand.
pub trait TreeSequence: Send + Sync {
    fn name(&self) -> String;
    fn tree(&self, n: usize) -> Result<BrokenFlowTree>;
}

/// A doubly indexed family `T_{k,n}`, `k, n ≥ 1`.
pub trait DoubleSequence: Send + Sync {
    fn name(&self) -> String;
    fn tree(&self, k: usize, n: usize) -> Result<BrokenFlowTree>;
}

/// Membership oracle for the convergence relation.
pub trait LimitOracle: Sync {
    fn is_limit(&self, seq: &[BrokenFlowTree], candidate: &BrokenFlowTree) -> bool;
    fn extract(&self, seq: &[BrokenFlowTree]) -> Result<StratumLimit>;
}

/// The stratum Floer-Gromov relation, checked by neighborhood ladders.
#[derive(Debug, Clone, Default)]
pub struct SfgOracle {
    pub opts: LimitOptions,
}

impl LimitOracle for SfgOracle {
    fn is_limit(&self, seq: &[BrokenFlowTree], candidate: &BrokenFlowTree) -> bool {
        super::is_sfg_limit(seq, candidate, &self.opts)
    }

    fn extract(&self, seq: &[BrokenFlowTree]) -> Result<StratumLimit> {
        super::stratum_limit(seq, &self.opts)
    }
}

pub struct AuditFamily {
    pub sequences: Vec<Box<dyn TreeSequence>>,
    pub doubles: Vec<Box<dyn DoubleSequence>>,
    /// Prefix length `L`.
    pub prefix: usize,
    pub seed: u64,
    /// Random reindexings per sequence.
    pub trials: usize,
    /// Geometric tolerance for comparing independently extracted limits.
    pub equivalence_tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct AxiomResult {
    pub axiom: &'static str,
    pub verdict: Verdict,
    pub witnesses: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub axioms: Vec<AxiomResult>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.axioms.iter().all(|a| a.verdict == Verdict::Pass)
    }

    pub fn inconclusive(&self) -> bool {
        self.axioms.iter().any(|a| a.verdict == Verdict::Inconclusive)
    }
}

struct Axiom {
    name: &'static str,
    verdict: Verdict,
    witnesses: Vec<String>,
}

impl Axiom {
    fn new(name: &'static str) -> Self {
        Axiom {
            name,
            verdict: Verdict::Pass,
            witnesses: Vec::new(),
        }
    }

    fn fail(&mut self, w: String) {
        self.verdict = Verdict::Fail;
        self.witnesses.push(w);
    }

    fn inconclusive(&mut self, w: String) {
        if self.verdict == Verdict::Pass {
            self.verdict = Verdict::Inconclusive;
        }
        self.witnesses.push(w);
    }

    fn done(self) -> AxiomResult {
        AxiomResult {
            axiom: self.name,
            verdict: self.verdict,
            witnesses: self.witnesses,
        }
    }
}

fn prefix(s: &dyn TreeSequence, idx: &[usize]) -> Result<Vec<BrokenFlowTree>> {
    idx.iter().map(|&n| s.tree(n)).collect()
}

/// Strictly increasing indices `1 ≤ n_1 < … < n_len ≤ bound`.
fn reindexing(rng: &mut ChaCha8Rng, len: usize, bound: usize) -> Vec<usize> {
    let mut v: Vec<usize> = sample(rng, bound, len).into_iter().map(|i| i + 1).collect();
    v.sort_unstable();
    v
}

/// Check Constant, Subsequence, Subsubsequence, Diagonal and Uniqueness.
pub fn audit_convergence_structure(family: &AuditFamily, oracle: &dyn LimitOracle) -> AuditReport {
    let l = family.prefix;
    let mut rng = ChaCha8Rng::seed_from_u64(family.seed);
    let mut constant = Axiom::new("constant");
    let mut subsequence = Axiom::new("subsequence");
    let mut subsub = Axiom::new("subsubsequence");
    let mut diagonal = Axiom::new("diagonal");
    let mut uniqueness = Axiom::new("uniqueness");

    let base: Vec<usize> = (1..=l).collect();
    let mut limits: Vec<Option<(Vec<BrokenFlowTree>, StratumLimit)>> = Vec::new();
    for s in &family.sequences {
        let name = s.name();
        let got = prefix(s.as_ref(), &base).and_then(|seq| oracle.extract(&seq).map(|lim| (seq, lim)));
        match got {
            Ok(x) => limits.push(Some(x)),
            Err(e) => {
                for ax in [&mut constant, &mut subsequence, &mut subsub, &mut uniqueness] {
                    ax.inconclusive(format!("{name}: {e}"));
                }
                limits.push(None);
            }
        }
    }

    for (s, entry) in family.sequences.iter().zip(&limits) {
        let Some((seq, lim)) = entry else { continue };
        let name = s.name();
        let t = &lim.tree;

        let constant_seq = vec![t.clone(); l];
        if oracle.is_limit(&constant_seq, t) {
            constant.witnesses.push(format!("{name}: constant sequence of its limit converges"));
        } else {
            constant.fail(format!("{name}: constant sequence does not converge to its own term"));
        }

        let converges = oracle.is_limit(seq, t);
        if !converges {
            subsequence.witnesses.push(format!("{name}: prefix not convergent as a whole; vacuous"));
        }
        let mut agree = 0;
        for trial in 0..family.trials {
            let idx = reindexing(&mut rng, l, 2 * l);
            let sub = match prefix(s.as_ref(), &idx) {
                Ok(x) => x,
                Err(e) => {
                    subsequence.inconclusive(format!("{name}: generator failed: {e}"));
                    continue;
                }
            };
            if converges {
                if oracle.is_limit(&sub, t) {
                    subsequence.witnesses.push(format!("{name} trial {trial}: indices {idx:?} converge"));
                } else {
                    subsequence.fail(format!("{name} trial {trial}: subsequence {idx:?} does not converge to the limit"));
                }
            }
            match oracle.extract(&sub) {
                Ok(inner) => {
                    let picked: Vec<usize> = inner.indices.iter().map(|&i| idx[i]).collect();
                    let subsub_trees: Vec<BrokenFlowTree> = inner.indices.iter().map(|&i| sub[i].clone()).collect();
                    if oracle.is_limit(&subsub_trees, t) {
                        agree += 1;
                        subsub.witnesses.push(format!("{name} trial {trial}: sub-subsequence {picked:?} converges to the limit"));
                    } else {
                        subsub.witnesses.push(format!("{name} trial {trial}: sub-subsequence {picked:?} has another limit; vacuous"));
                    }
                }
                Err(e) => subsub.inconclusive(format!("{name} trial {trial}: {e}")),
            }
        }
        if !converges && family.trials > 0 && agree == family.trials {
            subsub.fail(format!("{name}: every sampled subsequence has a convergent sub-subsequence but the sequence is not certified"));
        }
    }

    for d in &family.doubles {
        match check_diagonal(d.as_ref(), l, oracle) {
            Ok(Ok(w)) => diagonal.witnesses.push(w),
            Ok(Err(w)) => diagonal.fail(w),
            Err(e) => diagonal.inconclusive(format!("{}: {e}", d.name())),
        }
    }
    if family.doubles.is_empty() {
        diagonal.inconclusive("no doubly indexed family supplied".into());
    }

    // Candidate pool: every extracted limit, plus limits of even and odd runs.
    let mut pool: Vec<(String, BrokenFlowTree)> = Vec::new();
    for (s, entry) in family.sequences.iter().zip(&limits) {
        let Some((seq, lim)) = entry else { continue };
        pool.push((format!("{} limit", s.name()), lim.tree.clone()));
        for parity in 0..2 {
            let half: Vec<BrokenFlowTree> = seq.iter().skip(parity).step_by(2).cloned().collect();
            if let Ok(h) = oracle.extract(&half) {
                pool.push((format!("{} parity-{parity} limit", s.name()), h.tree));
            }
        }
    }
    for (s, entry) in family.sequences.iter().zip(&limits) {
        let Some((seq, _)) = entry else { continue };
        let certified: Vec<&(String, BrokenFlowTree)> = pool.iter().filter(|(_, c)| oracle.is_limit(seq, c)).collect();
        let mut clash = None;
        'outer: for i in 0..certified.len() {
            for j in i + 1..certified.len() {
                if !equivalent(&certified[i].1, &certified[j].1, family.equivalence_tol) {
                    clash = Some((i, j));
                    break 'outer;
                }
            }
        }
        match clash {
            Some((i, j)) => uniqueness.fail(format!(
                "{}: certified non-equivalent limits [{}] and [{}]",
                s.name(),
                certified[i].0,
                certified[j].0
            )),
            None => uniqueness.witnesses.push(format!(
                "{}: {} certified candidates, all equivalent",
                s.name(),
                certified.len()
            )),
        }
    }

    AuditReport {
        axioms: vec![constant.done(), subsequence.done(), subsub.done(), diagonal.done(), uniqueness.done()],
    }
}

/// Diagonal construction: `T_{k,n} → T_k`, `T_k → T`, and `n_k` the largest
/// of the edge and vertex thresholds at ladder radius `r_k`.
fn check_diagonal(d: &dyn DoubleSequence, l: usize, oracle: &dyn LimitOracle) -> Result<std::result::Result<String, String>> {
    let name = d.name();
    let mut rows = Vec::with_capacity(l);
    let mut inner = Vec::with_capacity(l);
    for k in 1..=l {
        let row: Vec<BrokenFlowTree> = (1..=l).map(|n| d.tree(k, n)).collect::<Result<_>>()?;
        let lim = oracle.extract(&row)?;
        if !oracle.is_limit(&row, &lim.tree) {
            return Ok(Err(format!("{name}: row {k} does not converge to its extracted limit")));
        }
        inner.push(lim.tree);
        rows.push(row);
    }
    let outer = oracle.extract(&inner)?;
    let t = outer.tree;
    if !oracle.is_limit(&inner, &t) {
        return Ok(Err(format!("{name}: the row limits do not converge")));
    }
    let opts = LimitOptions::default();
    let ladder = opts.extract.ladder();
    let mut picks = Vec::with_capacity(l);
    let mut diag = Vec::with_capacity(l);
    for (k, (row, tk)) in rows.iter().zip(&inner).enumerate() {
        let r = ladder[k.min(ladder.len() - 1)];
        let specs = edge_specs(tk, r)?;
        let aligned: Vec<BrokenFlowTree> = row.iter().map(BrokenFlowTree::canonical).collect();
        // Thresholds for the edges and for each vertex; the pick is their max.
        let edge_threshold = aligned
            .iter()
            .rposition(|t| !tree_within(tk, &specs, t, f64::INFINITY))
            .map_or(0, |i| i + 1);
        let vertex_threshold = aligned
            .iter()
            .rposition(|t| {
                t.vertices.len() != tk.vertices.len()
                    || t.vertices.iter().zip(&tk.vertices).any(|(a, b)| tk.scenario.chart.dist(a, b) > r)
            })
            .map_or(0, |i| i + 1);
        let n = edge_threshold.max(vertex_threshold);
        if n >= row.len() {
            return Ok(Err(format!("{name}: row {} never enters the radius-{r} neighborhood", k + 1)));
        }
        picks.push((k + 1, n + 1));
        diag.push(row[n].clone());
    }
    match certify_tree(&diag, &t, &opts) {
        Ok(c) => Ok(Ok(format!(
            "{name}: diagonal indices {picks:?} converge (tail starts {:?})",
            c.tail_starts
        ))),
        Err(e) => Ok(Err(format!("{name}: diagonal {picks:?} fails: {e}"))),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OpenCheckReport {
    pub passed: bool,
    pub checked: usize,
    pub vacuous: usize,
    pub first_violation: Option<usize>,
}

/// For each probe `(sequence, limit)` whose limit lies in `open`, check that
/// a tail of the sequence lies in `open` and in the sequence's stratum.
pub fn fg_open_check(
    open: &dyn Fn(&BrokenFlowTree) -> bool,
    probes: &[(Vec<BrokenFlowTree>, BrokenFlowTree)],
    min_tail: usize,
) -> OpenCheckReport {
    let mut report = OpenCheckReport {
        passed: true,
        checked: 0,
        vacuous: 0,
        first_violation: None,
    };
    for (i, (seq, lim)) in probes.iter().enumerate() {
        if !open(lim) {
            report.vacuous += 1;
            continue;
        }
        report.checked += 1;
        let gamma = seq.last().map(BrokenFlowTree::combinatorial_type);
        let cut = seq
            .iter()
            .rposition(|t| !open(t) || Some(t.combinatorial_type()) != gamma)
            .map_or(0, |j| j + 1);
        if seq.len() - cut < min_tail {
            report.passed = false;
            report.first_violation.get_or_insert(i);
        }
    }
    report
}
