//! TOML documents for trees and for sequence families used by audits.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{AuditFamily, BrokenFlowTree, DoubleSequence, EdgeImage, SourceTree, TreeEdge, TreeSequence};
use crate::broken::{assemble, BrokenFlow};
use crate::error::{Error, Result};
use crate::flow::{integrate_maximal, FlowOptions, MaximalFlow};
use crate::scenario::{load_scenario_file, DifferenceField, Scenario, SheetId};
use crate::Point;

/// Environment variable naming the default fixture directory.
pub const FIXTURES_ENV: &str = "FLOWTREE_FIXTURES";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeDoc {
    /// Scenario file, relative to the document.
    pub scenario: String,
    pub vertices: Vec<VertexDoc>,
    pub edges: Vec<EdgeDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VertexDoc {
    pub point: Vec<f64>,
    /// Incident edges in cyclic order.
    pub order: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeDoc {
    pub from: usize,
    pub to: usize,
    /// `[upper, lower]` sheets.
    pub pair: [SheetId; 2],
    #[serde(default)]
    pub ghost: bool,
    /// One point on each segment of the edge's broken flow.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub anchors: Vec<Vec<f64>>,
}

/// Find `name` next to `base`, or in the fixture directory.
pub fn resolve(base: &Path, name: &str) -> PathBuf {
    let direct = base.join(name);
    if direct.exists() {
        return direct;
    }
    for candidate in [name.to_string(), format!("{name}.toml")] {
        if let Ok(dir) = std::env::var(FIXTURES_ENV) {
            let p = Path::new(&dir).join(&candidate);
            if p.exists() {
                return p;
            }
        }
        let p = base.join(&candidate);
        if p.exists() {
            return p;
        }
    }
    direct
}

fn point(v: &[f64], dim: usize, what: &str) -> Result<Point> {
    if v.len() != dim {
        return Err(Error::parse(what, format!("expected {dim} coordinates, got {}", v.len())));
    }
    let mut p = [0.0; 2];
    p[..dim].copy_from_slice(v);
    Ok(p)
}

/// Difference fields shared per sheet pair so critical points are found once.
#[derive(Default)]
pub struct FieldCache {
    fields: Mutex<HashMap<(SheetId, SheetId), DifferenceField>>,
}

impl FieldCache {
    pub fn get(&self, scenario: &Arc<Scenario>, pair: (SheetId, SheetId)) -> Result<DifferenceField> {
        let mut map = self.fields.lock().expect("field cache poisoned");
        if let Some(f) = map.get(&pair) {
            return Ok(f.clone());
        }
        let f = scenario.difference(pair.0, pair.1)?;
        map.insert(pair, f.clone());
        Ok(f)
    }
}

impl TreeDoc {
    pub fn parse(text: &str) -> Result<TreeDoc> {
        toml::from_str(text).map_err(|e| Error::parse("tree document", e))
    }

    pub fn build(&self, scenario: Arc<Scenario>, cache: &FieldCache, opts: &FlowOptions) -> Result<BrokenFlowTree> {
        let dim = scenario.dim();
        let vertices: Vec<Point> = self
            .vertices
            .iter()
            .enumerate()
            .map(|(i, v)| point(&v.point, dim, &format!("vertex {i}")))
            .collect::<Result<_>>()?;
        let source = SourceTree::new(
            vertices.len(),
            self.edges.iter().map(|e| (e.from, e.to)).collect(),
            self.vertices.iter().map(|v| v.order.clone()).collect(),
        )?;
        let mut edges = Vec::with_capacity(self.edges.len());
        for (k, e) in self.edges.iter().enumerate() {
            let pair = (e.pair[0], e.pair[1]);
            if e.ghost {
                edges.push(TreeEdge {
                    pair,
                    image: EdgeImage::Ghost { point: vertices[e.from] },
                });
                continue;
            }
            if e.anchors.is_empty() {
                return Err(Error::InvalidTree(format!("real edge {k} has no anchors")));
            }
            let field = cache.get(&scenario, pair)?;
            let segs: Vec<MaximalFlow> = e
                .anchors
                .iter()
                .map(|a| integrate_maximal(&field, point(a, dim, &format!("edge {k} anchor"))?, opts))
                .collect::<Result<_>>()?;
            let flow = match super::family_of_segments(&segs) {
                Some(fam) => assemble(fam, segs)?,
                None => BrokenFlow::unbroken(segs.into_iter().next().expect("anchor"))?,
            };
            let (hi, lo) = flow.f_range();
            let snap = |f: f64| {
                let tol = 1e-7 * (1.0 + f.abs());
                if f > hi && f <= hi + tol {
                    hi
                } else if f < lo && f >= lo - tol {
                    lo
                } else {
                    f
                }
            };
            let f_start = snap(field.value(&vertices[e.from])?);
            let f_end = snap(field.value(&vertices[e.to])?);
            edges.push(TreeEdge {
                pair,
                image: EdgeImage::Real { flow, f_start, f_end },
            });
        }
        BrokenFlowTree::new(scenario, source, edges, vertices)
    }
}

/// Parse a tree document and its scenario.
pub fn load_tree(path: &Path) -> Result<BrokenFlowTree> {
    let text = std::fs::read_to_string(path)?;
    let doc = TreeDoc::parse(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let scenario = Arc::new(load_scenario_file(&resolve(base, &doc.scenario))?);
    doc.build(scenario, &FieldCache::default(), &FlowOptions::default())
}

impl BrokenFlowTree {
    /// Document form; anchors are the middle node of each segment.
    pub fn to_document(&self, scenario: &str) -> TreeDoc {
        let dim = self.scenario.dim();
        TreeDoc {
            scenario: scenario.to_string(),
            vertices: self
                .vertices
                .iter()
                .zip(&self.source.orders)
                .map(|(p, o)| VertexDoc {
                    point: p[..dim].to_vec(),
                    order: o.clone(),
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .zip(&self.source.edges)
                .map(|(e, &(from, to))| EdgeDoc {
                    from,
                    to,
                    pair: [e.pair.0, e.pair.1],
                    ghost: e.is_ghost(),
                    anchors: e
                        .flow()
                        .map(|f| {
                            f.segments
                                .iter()
                                .map(|s| s.nodes[s.nodes.len() / 2].x[..dim].to_vec())
                                .collect()
                        })
                        .unwrap_or_default(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyDoc {
    pub scenario: String,
    pub pair: [SheetId; 2],
    #[serde(default = "default_prefix")]
    pub prefix: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_equivalence")]
    pub equivalence_tol: f64,
    #[serde(default, rename = "sequence")]
    pub sequences: Vec<SequenceDoc>,
    #[serde(default, rename = "double")]
    pub doubles: Vec<SequenceDoc>,
}

fn default_prefix() -> usize {
    16
}
fn default_trials() -> usize {
    3
}
fn default_equivalence() -> f64 {
    1e-4
}

/// Starts `base + scale (2^-n) direction` for single sequences and
/// `base + scale (2^-k + 2^-(n+k)) direction` for double ones; `scale = 0`
/// gives a constant sequence.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceDoc {
    pub name: String,
    pub base: Vec<f64>,
    #[serde(default)]
    pub direction: Vec<f64>,
    #[serde(default)]
    pub scale: f64,
}

/// Single-edge trees on the maximal flows through a family of start points.
pub struct StartSequence {
    name: String,
    field: DifferenceField,
    start: Box<dyn Fn(usize, usize) -> Point + Send + Sync>,
    cache: Mutex<HashMap<(usize, usize), BrokenFlowTree>>,
}

impl StartSequence {
    pub fn new(name: &str, field: DifferenceField, start: impl Fn(usize, usize) -> Point + Send + Sync + 'static) -> Self {
        StartSequence {
            name: name.to_string(),
            field,
            start: Box::new(start),
            cache: Mutex::new(HashMap::new()),
        }
    }

    fn get(&self, k: usize, n: usize) -> Result<BrokenFlowTree> {
        if let Some(t) = self.cache.lock().expect("poisoned").get(&(k, n)) {
            return Ok(t.clone());
        }
        let x = (self.start)(k, n);
        let flow = integrate_maximal(&self.field, x, &FlowOptions::default())?;
        let t = BrokenFlowTree::single_edge(self.field.scenario().clone(), BrokenFlow::unbroken(flow)?)?;
        self.cache.lock().expect("poisoned").insert((k, n), t.clone());
        Ok(t)
    }
}

impl TreeSequence for StartSequence {
    fn name(&self) -> String {
        self.name.clone()
    }
    fn tree(&self, n: usize) -> Result<BrokenFlowTree> {
        self.get(0, n)
    }
}

impl DoubleSequence for StartSequence {
    fn name(&self) -> String {
        self.name.clone()
    }
    fn tree(&self, k: usize, n: usize) -> Result<BrokenFlowTree> {
        self.get(k, n)
    }
}

impl FamilyDoc {
    pub fn parse(text: &str) -> Result<FamilyDoc> {
        toml::from_str(text).map_err(|e| Error::parse("family document", e))
    }

    pub fn build(&self, scenario: Arc<Scenario>) -> Result<AuditFamily> {
        let dim = scenario.dim();
        let field = scenario.difference(self.pair[0], self.pair[1])?;
        let vec_of = |s: &SequenceDoc| -> Result<(Point, Point)> {
            let base = point(&s.base, dim, &s.name)?;
            let dir = if s.direction.is_empty() {
                [0.0; 2]
            } else {
                point(&s.direction, dim, &s.name)?
            };
            Ok((base, dir))
        };
        let mut sequences: Vec<Box<dyn TreeSequence>> = Vec::new();
        for s in &self.sequences {
            let (b, d) = vec_of(s)?;
            let scale = s.scale;
            sequences.push(Box::new(StartSequence::new(&s.name, field.clone(), move |_, n| {
                let w = scale * 0.5f64.powi(n as i32);
                [b[0] + w * d[0], b[1] + w * d[1]]
            })));
        }
        let mut doubles: Vec<Box<dyn DoubleSequence>> = Vec::new();
        for s in &self.doubles {
            let (b, d) = vec_of(s)?;
            let scale = s.scale;
            doubles.push(Box::new(StartSequence::new(&s.name, field.clone(), move |k, n| {
                let w = scale * (0.5f64.powi(k as i32) + 0.5f64.powi((n + k) as i32));
                [b[0] + w * d[0], b[1] + w * d[1]]
            })));
        }
        Ok(AuditFamily {
            sequences,
            doubles,
            prefix: self.prefix,
            seed: self.seed,
            trials: self.trials,
            equivalence_tol: self.equivalence_tol,
        })
    }
}

/// Load `family.toml` from a directory (or a family file directly).
pub fn load_family(path: &Path) -> Result<AuditFamily> {
    let file = if path.is_dir() { path.join("family.toml") } else { path.to_path_buf() };
    let text = std::fs::read_to_string(&file)?;
    let doc = FamilyDoc::parse(&text)?;
    let base = file.parent().unwrap_or(Path::new("."));
    let scenario = Arc::new(load_scenario_file(&resolve(base, &doc.scenario))?);
    doc.build(scenario)
}
