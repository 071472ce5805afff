//! Command-line front end. `run` is pure apart from reading inputs; the binary
//! writes the returned artifacts once at the end.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::broken::{extract_limit, BrokenFlow, Certificate, ExtractOptions};
use crate::error::{Error, Result};
use crate::flow::{integrate_maximal, FlowOptions};
use crate::scenario::{load_scenario_file, Scenario, SheetId};
use crate::svg::Plot;
use crate::tree::document::{self, FamilyDoc, FieldCache, TreeDoc, FIXTURES_ENV};
use crate::tree::{audit_convergence_structure, stratum_limit, BrokenFlowTree, LimitOptions, SfgOracle, Verdict};
use crate::Point;

#[derive(Debug, Clone, Parser)]
#[command(name = "flowtree", version, about = "Gradient flows, broken-flow limits and flow trees of multi-sheeted fronts")]
pub struct RunConfig {
    #[command(subcommand)]
    pub command: Command,
    /// Directory for artifacts; without it the primary artifact goes to stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for randomized suites (overrides the family file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub tol: Tolerances,
}

#[derive(Debug, Clone, Args)]
pub struct Tolerances {
    /// Relative integration tolerance.
    #[arg(long = "tol-rtol", global = true, default_value_t = 1e-10)]
    pub rtol: f64,
    /// Absolute integration tolerance.
    #[arg(long = "tol-atol", global = true, default_value_t = 1e-13)]
    pub atol: f64,
    /// Cotangent matching tolerance at tree vertices.
    #[arg(long = "tol-match", global = true, default_value_t = 1e-6)]
    pub matching: f64,
    /// Cluster radius for limit extraction.
    #[arg(long = "tol-cluster", global = true, default_value_t = 1e-3)]
    pub cluster: f64,
    /// Largest neighborhood radius of the certification ladder.
    #[arg(long = "tol-ladder", global = true, default_value_t = 0.1)]
    pub ladder: f64,
    /// Edge bound for minimal representatives in tree limits.
    #[arg(long = "max-edges", global = true)]
    pub max_edges: Option<usize>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Print a scenario's sheets and fold components.
    Scenario { scenario: String },
    /// Critical points of a difference field as CSV.
    CriticalPoints {
        scenario: String,
        /// Sheets `upper,lower` of the difference field.
        #[arg(long, value_parser = parse_pair)]
        pair: (SheetId, SheetId),
    },
    /// The maximal flow through a start point as CSV, optionally with SVG.
    Flow {
        scenario: String,
        /// Sheets `upper,lower` of the difference field.
        #[arg(long, value_parser = parse_pair)]
        pair: (SheetId, SheetId),
        /// Start point `x1[,x2]`.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        start: Vec<f64>,
        /// Also write an SVG plot.
        #[arg(long)]
        svg: bool,
    },
    /// Broken limit of the flows through the points of a CSV file.
    Limit {
        scenario: String,
        /// Sheets `upper,lower` of the difference field.
        #[arg(long, value_parser = parse_pair)]
        pair: (SheetId, SheetId),
        /// Required moduli family of the limit.
        #[arg(long)]
        family: Option<FamilyKind>,
        /// CSV of start points with header `x1[,x2]`, one flow per row.
        #[arg(long)]
        starts: PathBuf,
        /// Also write an SVG plot.
        #[arg(long)]
        svg: bool,
    },
    /// Flow tree documents: validation, reduction, limits and audits.
    #[command(subcommand)]
    Tree(TreeCommand),
}

#[derive(Debug, Clone, Subcommand)]
pub enum TreeCommand {
    /// Check vertex matching and loop closure.
    Validate { doc: PathBuf },
    /// Minimal representative as a tree document.
    Reduce { doc: PathBuf },
    /// Combinatorial type.
    Gamma { doc: PathBuf },
    /// Stratum limit of a sequence of tree documents or of a family sequence.
    Limit {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Sequence name when the input is a family directory.
        #[arg(long)]
        sequence: Option<String>,
        /// Also write an SVG plot.
        #[arg(long)]
        svg: bool,
    },
    /// Convergence-structure audit of a family directory.
    Audit { dir: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyKind {
    Morse,
    FoldEmanating,
    FoldTerminating,
    Singular,
}

fn parse_pair(s: &str) -> std::result::Result<(SheetId, SheetId), String> {
    let (a, b) = s.split_once(',').ok_or("expected i,j")?;
    let p = |t: &str| t.trim().parse::<SheetId>().map_err(|e| format!("{t}: {e}"));
    Ok((p(a)?, p(b)?))
}

/// A named output file.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub content: String,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub code: i32,
    /// Short human-readable summary.
    pub summary: String,
    pub artifacts: Vec<Artifact>,
}

impl Outcome {
    fn ok(summary: String, artifacts: Vec<Artifact>) -> Outcome {
        Outcome { code: 0, summary, artifacts }
    }

    fn from_error(e: &Error) -> Outcome {
        Outcome {
            code: if matches!(e, Error::Inconclusive(_)) { 2 } else { 1 },
            summary: format!("error: {e}"),
            artifacts: Vec::new(),
        }
    }
}

fn artifact(name: &str, content: String) -> Artifact {
    Artifact { name: name.into(), content }
}

impl Tolerances {
    fn check(&self) -> Result<()> {
        for (name, v) in [
            ("tol-rtol", self.rtol),
            ("tol-atol", self.atol),
            ("tol-match", self.matching),
            ("tol-cluster", self.cluster),
            ("tol-ladder", self.ladder),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::parse(name, format!("tolerance must be positive, got {v}")));
            }
        }
        Ok(())
    }

    fn flow(&self) -> FlowOptions {
        FlowOptions {
            rtol: self.rtol,
            atol: self.atol,
            ..FlowOptions::default()
        }
    }

    fn extract(&self) -> ExtractOptions {
        ExtractOptions {
            cluster_radius: self.cluster,
            ladder_r0: self.ladder,
            flow: self.flow(),
            ..ExtractOptions::default()
        }
    }

    fn limit(&self) -> LimitOptions {
        LimitOptions {
            extract: self.extract(),
            vertex_radius: self.cluster,
            match_tol: self.matching,
            max_edges: self.max_edges,
        }
    }
}

/// Find a scenario or document by name: as given, with `.toml`, or by file
/// name inside the fixture directory.
pub fn locate(name: &str) -> PathBuf {
    let p = document::resolve(Path::new("."), name);
    if p.exists() {
        return p;
    }
    if let (Ok(dir), Some(file)) = (std::env::var(FIXTURES_ENV), Path::new(name).file_name()) {
        let file = file.to_string_lossy();
        for candidate in [file.to_string(), format!("{file}.toml")] {
            let q = Path::new(&dir).join(candidate);
            if q.exists() {
                return q;
            }
        }
    }
    p
}

fn load(name: &str) -> Result<(Arc<Scenario>, PathBuf)> {
    let path = locate(name);
    if !path.exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("scenario {name} not found"),
        )));
    }
    Ok((Arc::new(load_scenario_file(&path)?), path))
}

fn absolute(p: &Path) -> String {
    std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf()).display().to_string()
}

fn point_of(v: &[f64], dim: usize) -> Result<Point> {
    if v.len() != dim {
        return Err(Error::parse("start point", format!("expected {dim} coordinates, got {}", v.len())));
    }
    let mut p = [0.0; 2];
    p[..dim].copy_from_slice(v);
    Ok(p)
}

fn csv_text(header: &[String], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

fn coord_header(dim: usize) -> Vec<String> {
    (1..=dim).map(|i| format!("x{i}")).collect()
}

fn coords(p: &Point, dim: usize) -> Vec<String> {
    p[..dim].iter().map(|v| v.to_string()).collect()
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn toml_text<T: Serialize>(v: &T) -> String {
    toml::to_string(v).expect("serializable")
}

/// Execute one command.
pub fn run(cfg: &RunConfig) -> Outcome {
    match dispatch(cfg) {
        Ok(o) => o,
        Err(e) => Outcome::from_error(&e),
    }
}

fn dispatch(cfg: &RunConfig) -> Result<Outcome> {
    cfg.tol.check()?;
    match &cfg.command {
        Command::Scenario { scenario } => scenario_cmd(scenario),
        Command::CriticalPoints { scenario, pair } => critical_points(scenario, *pair),
        Command::Flow { scenario, pair, start, svg } => flow_cmd(cfg, scenario, *pair, start, *svg),
        Command::Limit {
            scenario,
            pair,
            family,
            starts,
            svg,
        } => limit_cmd(cfg, scenario, *pair, *family, starts, *svg),
        Command::Tree(t) => tree_cmd(cfg, t),
    }
}

fn scenario_cmd(name: &str) -> Result<Outcome> {
    let (s, _) = load(name)?;
    let mut text = format!("dim {}\nbounds {:?}\nperiodic {:?}\n", s.dim(), &s.chart.bounds[..s.dim()], &s.chart.periodic[..s.dim()]);
    for sh in &s.sheets {
        text.push_str(&format!("sheet {} {:?}\n", sh.id, sh.kind));
    }
    for f in &s.folds {
        text.push_str(&format!("fold {} axis {} offset {} sheets {},{}\n", f.id, f.axis, f.offset, f.upper, f.lower));
    }
    Ok(Outcome::ok(format!("{} sheets, {} fold components", s.sheets.len(), s.folds.len()), vec![artifact("scenario.txt", text)]))
}

fn critical_points(name: &str, pair: (SheetId, SheetId)) -> Result<Outcome> {
    let (s, _) = load(name)?;
    let field = s.difference(pair.0, pair.1)?;
    let crit = field.critical_points()?;
    let dim = s.dim();
    let mut header = coord_header(dim);
    header.extend(["index", "value", "min_abs_eigenvalue"].map(String::from));
    let rows: Vec<Vec<String>> = crit
        .iter()
        .map(|c| {
            let mut r = coords(&c.location, dim);
            r.push(c.index.to_string());
            r.push(c.value.to_string());
            r.push(c.min_abs_eigenvalue().to_string());
            r
        })
        .collect();
    Ok(Outcome::ok(
        format!("{} critical points of F{}{}", crit.len(), pair.0, pair.1),
        vec![artifact("critical-points.csv", csv_text(&header, &rows)?)],
    ))
}

fn plot_base(s: &Scenario, field: &crate::scenario::DifferenceField) -> Result<Plot> {
    let mut plot = Plot::new(s);
    for c in field.critical_points()? {
        let at = if s.dim() == 1 { [c.location[0], c.value] } else { c.location };
        plot.critical_point(at, c);
    }
    Ok(plot)
}

fn polyline(flow: &crate::flow::MaximalFlow, dim: usize) -> Vec<Point> {
    flow.nodes
        .iter()
        .map(|n| if dim == 1 { [n.x[0], n.f] } else { n.x })
        .collect()
}

fn flow_cmd(cfg: &RunConfig, name: &str, pair: (SheetId, SheetId), start: &[f64], svg: bool) -> Result<Outcome> {
    let (s, _) = load(name)?;
    let dim = s.dim();
    let field = s.difference(pair.0, pair.1)?;
    let flow = integrate_maximal(&field, point_of(start, dim)?, &cfg.tol.flow())?;
    let mut header = vec!["t".to_string()];
    header.extend(coord_header(dim));
    header.push("F".into());
    let rows: Vec<Vec<String>> = flow
        .nodes
        .iter()
        .map(|n| {
            let mut r = vec![n.t.to_string()];
            r.extend(coords(&n.x, dim));
            r.push(n.f.to_string());
            r
        })
        .collect();
    let mut arts = vec![artifact("flow.csv", csv_text(&header, &rows)?)];
    if svg {
        let mut plot = plot_base(&s, &field)?;
        plot.path(polyline(&flow, dim));
        arts.push(artifact("flow.svg", plot.render()));
    }
    Ok(Outcome::ok(
        format!("{} flow, {} nodes", flow.class.name(), flow.nodes.len()),
        arts,
    ))
}

fn read_starts(path: &Path, dim: usize) -> Result<Vec<Point>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::parse(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(path.display().to_string(), e))?;
        let vals: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match vals {
            Ok(v) => out.push(point_of(&v, dim)?),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(Error::parse(format!("{} row {}", path.display(), i + 1), e)),
        }
    }
    Ok(out)
}

fn family_matches(kind: FamilyKind, f: &crate::broken::Family) -> bool {
    use crate::broken::Family as F;
    matches!(
        (kind, f),
        (FamilyKind::Morse, F::Morse { .. })
            | (FamilyKind::FoldEmanating, F::FoldEmanating { .. })
            | (FamilyKind::FoldTerminating, F::FoldTerminating { .. })
            | (FamilyKind::Singular, F::Singular)
    )
}

#[derive(Serialize)]
struct LimitCertificate<'a> {
    family: String,
    chain: &'a [usize],
    breaks: Vec<Point>,
    indices: &'a [usize],
    ladder: &'a Certificate,
    /// Largest distance from the limit image to each subsequence member.
    residuals: Vec<f64>,
}

fn image_residual(limit: &BrokenFlow, member: &BrokenFlow) -> f64 {
    limit
        .segments
        .iter()
        .map(|s| {
            s.nodes
                .iter()
                .map(|n| {
                    member
                        .segments
                        .iter()
                        .map(|m| m.min_distance_to(&n.x))
                        .fold(f64::INFINITY, f64::min)
                })
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

fn limit_cmd(
    cfg: &RunConfig,
    name: &str,
    pair: (SheetId, SheetId),
    kind: Option<FamilyKind>,
    starts: &Path,
    svg: bool,
) -> Result<Outcome> {
    let (s, _) = load(name)?;
    let dim = s.dim();
    let field = s.difference(pair.0, pair.1)?;
    let opts = cfg.tol.extract();
    let flows: Vec<BrokenFlow> = read_starts(starts, dim)?
        .into_iter()
        .map(|x| BrokenFlow::unbroken(integrate_maximal(&field, x, &opts.flow)?))
        .collect::<Result<_>>()?;
    if let Some(kind) = kind {
        if let Some(bad) = flows.iter().position(|f| !family_matches(kind, &f.family)) {
            return Err(Error::InvalidBrokenFlow(format!(
                "start {bad} lies on a {} flow",
                flows[bad].family.name()
            )));
        }
    }
    let ex = extract_limit(&flows, &opts)?;
    let crit = field.critical_points()?;
    let mut header = vec!["segment".to_string(), "t".into()];
    header.extend(coord_header(dim));
    header.push("F".into());
    let mut rows = Vec::new();
    for (k, seg) in ex.limit.segments.iter().enumerate() {
        for n in &seg.nodes {
            let mut r = vec![k.to_string(), n.t.to_string()];
            r.extend(coords(&n.x, dim));
            r.push(n.f.to_string());
            rows.push(r);
        }
    }
    let cert = LimitCertificate {
        family: ex.limit.family.name(),
        chain: &ex.limit.chain,
        breaks: ex.limit.chain.iter().map(|&c| crit[c].location).collect(),
        indices: &ex.indices,
        ladder: &ex.certificate,
        residuals: ex.indices.iter().map(|&i| image_residual(&ex.limit, &flows[i])).collect(),
    };
    let mut arts = vec![
        artifact("limit.csv", csv_text(&header, &rows)?),
        artifact("certificate.json", json(&cert)),
    ];
    if svg {
        let mut plot = plot_base(&s, &field)?;
        for seg in &ex.limit.segments {
            plot.path(polyline(seg, dim));
        }
        arts.push(artifact("limit.svg", plot.render()));
    }
    Ok(Outcome::ok(
        format!(
            "{} limit broken at {:?} from {} of {} flows",
            cert.family,
            ex.limit.chain,
            ex.indices.len(),
            flows.len()
        ),
        arts,
    ))
}

/// A tree document with its scenario and the scenario's absolute path.
fn load_doc(path: &Path, cache: &FieldCache, flow: &FlowOptions) -> Result<(BrokenFlowTree, String)> {
    let text = std::fs::read_to_string(path)?;
    let doc = TreeDoc::parse(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let spath = document::resolve(base, &doc.scenario);
    let scenario = Arc::new(load_scenario_file(&spath)?);
    Ok((doc.build(scenario, cache, flow)?, absolute(&spath)))
}

fn tree_svg(t: &BrokenFlowTree) -> Result<String> {
    let s = &t.scenario;
    let mut plot = Plot::new(s);
    let mut seen = std::collections::BTreeSet::new();
    for e in &t.edges {
        if let Some(f) = e.flow() {
            if seen.insert(e.pair) {
                let field = f.field();
                for c in field.critical_points()? {
                    let at = if s.dim() == 1 { [c.location[0], c.value] } else { c.location };
                    plot.critical_point(at, c);
                }
            }
            for seg in &f.segments {
                plot.path(polyline(seg, s.dim()));
            }
        }
    }
    Ok(plot.render())
}

fn tree_cmd(cfg: &RunConfig, cmd: &TreeCommand) -> Result<Outcome> {
    let flow = cfg.tol.flow();
    let cache = FieldCache::default();
    match cmd {
        TreeCommand::Validate { doc } => {
            let (t, _) = load_doc(doc, &cache, &flow)?;
            let d = t.validate(cfg.tol.matching);
            let summary = format!(
                "{} (max residual {:e}, loop {})",
                if d.valid { "valid" } else { "invalid" },
                d.max_residual,
                if d.loop_closed { "closed" } else { "open" }
            );
            Ok(Outcome {
                code: if d.valid { 0 } else { 1 },
                summary,
                artifacts: vec![artifact("diagnostics.json", json(&d))],
            })
        }
        TreeCommand::Reduce { doc } => {
            let (t, spath) = load_doc(doc, &cache, &flow)?;
            let m = t.minimal_representative();
            Ok(Outcome::ok(
                format!("{} edges reduced to {}", t.edge_count(), m.edge_count()),
                vec![artifact("minimal.toml", toml_text(&m.to_document(&spath)))],
            ))
        }
        TreeCommand::Gamma { doc } => {
            let (t, _) = load_doc(doc, &cache, &flow)?;
            let g = t.combinatorial_type();
            Ok(Outcome::ok(
                format!("{} edges, {} minimal", t.edge_count(), t.minimal_edge_count()),
                vec![artifact("gamma.txt", format!("{g}\n"))],
            ))
        }
        TreeCommand::Limit { inputs, sequence, svg } => tree_limit(cfg, inputs, sequence.as_deref(), *svg, &cache),
        TreeCommand::Audit { dir } => {
            let mut family = document::load_family(dir)?;
            if let Some(seed) = cfg.seed {
                family.seed = seed;
            }
            let oracle = SfgOracle { opts: cfg.tol.limit() };
            let report = audit_convergence_structure(&family, &oracle);
            let lines: Vec<String> = report
                .axioms
                .iter()
                .map(|a| format!("{}: {:?}", a.axiom, a.verdict).to_lowercase())
                .collect();
            let code = if report.passed() {
                0
            } else if report.axioms.iter().any(|a| a.verdict == Verdict::Fail) {
                1
            } else {
                2
            };
            Ok(Outcome {
                code,
                summary: lines.join("\n"),
                artifacts: vec![artifact("audit.json", json(&report))],
            })
        }
    }
}

#[derive(Serialize)]
struct TreeLimitCertificate {
    gamma: String,
    minimal_gamma: String,
    indices: Vec<usize>,
    ghosts: Vec<usize>,
    edges: Vec<Option<Certificate>>,
    max_residual: f64,
    valid: bool,
}

fn tree_limit(cfg: &RunConfig, inputs: &[PathBuf], sequence: Option<&str>, svg: bool, cache: &FieldCache) -> Result<Outcome> {
    let (seq, spath) = if inputs.len() == 1 && (inputs[0].is_dir() || sequence.is_some()) {
        let dir = &inputs[0];
        let file = if dir.is_dir() { dir.join("family.toml") } else { dir.clone() };
        let doc = FamilyDoc::parse(&std::fs::read_to_string(&file)?)?;
        let spath = document::resolve(file.parent().unwrap_or(Path::new(".")), &doc.scenario);
        let family = document::load_family(&file)?;
        let named = family
            .sequences
            .iter()
            .find(|s| sequence.is_none_or(|n| s.name() == n))
            .ok_or_else(|| Error::parse("family", format!("no sequence named {}", sequence.unwrap_or("?"))))?;
        let seq: Vec<BrokenFlowTree> = (1..=family.prefix).map(|n| named.tree(n)).collect::<Result<_>>()?;
        (seq, absolute(&spath))
    } else {
        let mut seq = Vec::new();
        let mut spath = String::new();
        for p in inputs {
            let (t, s) = load_doc(p, cache, &cfg.tol.flow())?;
            seq.push(t);
            spath = s;
        }
        (seq, spath)
    };
    let lim = stratum_limit(&seq, &cfg.tol.limit())?;
    let cert = TreeLimitCertificate {
        gamma: lim.tree.combinatorial_type().key,
        minimal_gamma: lim.minimal.combinatorial_type().key,
        indices: lim.indices.clone(),
        ghosts: lim.ghosts.clone(),
        edges: lim.certificates.clone(),
        max_residual: lim.diagnostics.max_residual,
        valid: lim.diagnostics.valid,
    };
    let mut arts = vec![
        artifact("limit.toml", toml_text(&lim.tree.to_document(&spath))),
        artifact("certificate.json", json(&cert)),
        artifact("minimal.toml", toml_text(&lim.minimal.to_document(&spath))),
    ];
    if svg {
        arts.push(artifact("limit.svg", tree_svg(&lim.tree)?));
    }
    Ok(Outcome::ok(
        format!(
            "limit with {} edges ({} ghosts) from {} of {} trees",
            lim.tree.edge_count(),
            lim.ghosts.len(),
            lim.indices.len(),
            seq.len()
        ),
        arts,
    ))
}

/// Write artifacts into `out`, or print the primary one to stdout.
pub fn emit(outcome: &Outcome, out: Option<&Path>) -> std::io::Result<()> {
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            for a in &outcome.artifacts {
                std::fs::write(dir.join(&a.name), &a.content)?;
            }
            println!("{}", outcome.summary);
        }
        None => {
            if let Some(a) = outcome.artifacts.first() {
                print!("{}", a.content);
            }
            eprintln!("{}", outcome.summary);
            if outcome.artifacts.len() > 1 {
                eprintln!("(use --out DIR to keep {} more artifacts)", outcome.artifacts.len() - 1);
            }
        }
    }
    Ok(())
}
