//! Multi-sheeted front scenarios over a rectangular chart.
//!
//! A scenario lists local sheets (closed-form smooth functions or halves of
//! the standard cusp pair) over a chart of dimension one or two. The fold
//! locus is derived from the cusp pairs. Differences of sheets drive the
//! gradient flows in [`crate::flow`].

mod document;
pub mod expr;

use std::sync::{Arc, OnceLock};

pub use document::{ScenarioDoc, SheetDoc};
use expr::Expr;

use crate::error::{Error, Result};
use crate::morse::CriticalPoint;
use crate::Point;

pub type SheetId = u32;

/// Rectangular base chart with a Euclidean metric.
#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub dim: usize,
    pub bounds: [[f64; 2]; 2],
    pub periodic: [bool; 2],
}

impl Chart {
    pub fn new(dim: usize, bounds: &[[f64; 2]], periodic: &[bool]) -> Result<Chart> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidScenario(format!(
                "chart dimension must be 1 or 2, got {dim}"
            )));
        }
        if bounds.len() != dim {
            return Err(Error::InvalidScenario(format!(
                "expected {dim} axis intervals, got {}",
                bounds.len()
            )));
        }
        let mut b = [[0.0; 2]; 2];
        let mut p = [false; 2];
        for axis in 0..dim {
            let [lo, hi] = bounds[axis];
            if !(hi - lo > 0.0) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidScenario(format!(
                    "axis {} interval [{lo}, {hi}] has no positive length",
                    axis + 1
                )));
            }
            b[axis] = [lo, hi];
            p[axis] = periodic.get(axis).copied().unwrap_or(false);
        }
        Ok(Chart {
            dim,
            bounds: b,
            periodic: p,
        })
    }

    pub fn period(&self, axis: usize) -> f64 {
        self.bounds[axis][1] - self.bounds[axis][0]
    }

    /// Map periodic coordinates back into the fundamental domain.
    pub fn wrap(&self, x: Point) -> Point {
        let mut out = x;
        for axis in 0..self.dim {
            if self.periodic[axis] {
                let [lo, _] = self.bounds[axis];
                let period = self.period(axis);
                out[axis] = lo + (x[axis] - lo).rem_euclid(period);
            }
        }
        out
    }

    /// Displacement `b - a`, using the minimal image on periodic axes.
    pub fn delta(&self, a: &Point, b: &Point) -> Point {
        let mut d = [0.0; 2];
        for axis in 0..self.dim {
            let mut v = b[axis] - a[axis];
            if self.periodic[axis] {
                let period = self.period(axis);
                v -= period * (v / period).round();
            }
            d[axis] = v;
        }
        d
    }

    pub fn dist(&self, a: &Point, b: &Point) -> f64 {
        norm(&self.delta(a, b))
    }

    /// True when every non-periodic coordinate lies in its closed interval.
    pub fn contains(&self, x: &Point) -> bool {
        (0..self.dim).all(|axis| {
            self.periodic[axis]
                || (x[axis] >= self.bounds[axis][0] && x[axis] <= self.bounds[axis][1])
        })
    }

    /// Signed distance to the nearest non-periodic chart wall (positive inside).
    pub fn wall_margin(&self, x: &Point) -> f64 {
        let mut m = f64::INFINITY;
        for axis in 0..self.dim {
            if !self.periodic[axis] {
                m = m
                    .min(x[axis] - self.bounds[axis][0])
                    .min(self.bounds[axis][1] - x[axis]);
            }
        }
        m
    }
}

pub(crate) fn norm(v: &Point) -> f64 {
    (v[0] * v[0] + v[1] * v[1]).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CuspBranch {
    Upper,
    Lower,
}

impl CuspBranch {
    fn sign(self) -> f64 {
        match self {
            CuspBranch::Upper => 1.0,
            CuspBranch::Lower => -1.0,
        }
    }
}

/// Parameters of one half of the standard cusp pair, in chart coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct CuspParams {
    pub b: f64,
    /// Linear coefficients on the axes other than the fold axis.
    pub a: Vec<f64>,
    /// Fold axis, zero based.
    pub axis: usize,
    pub offset: f64,
    pub sign: f64,
    pub pair: String,
}

impl CuspParams {
    /// Local coordinate normal to the fold; the sheet lives on `s >= 0`.
    pub fn normal_coord(&self, x: &Point) -> f64 {
        self.sign * (x[self.axis] - self.offset)
    }

    fn linear_part(&self, x: &Point, dim: usize) -> f64 {
        let s = self.normal_coord(x);
        let mut v = self.b * s;
        let mut k = 0;
        for axis in 0..dim {
            if axis != self.axis {
                v += self.a[k] * x[axis];
                k += 1;
            }
        }
        v
    }

    fn linear_grad(&self, dim: usize) -> Point {
        let mut g = [0.0; 2];
        g[self.axis] = self.sign * self.b;
        let mut k = 0;
        for axis in 0..dim {
            if axis != self.axis {
                g[axis] = self.a[k];
                k += 1;
            }
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SheetKind {
    Smooth {
        expr: Expr,
        grad: [Expr; 2],
        hess: [[Expr; 2]; 2],
    },
    Cusp {
        branch: CuspBranch,
        params: CuspParams,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sheet {
    pub id: SheetId,
    pub kind: SheetKind,
}

impl Sheet {
    pub fn smooth(id: SheetId, src: &str, dim: usize) -> Result<Sheet> {
        let expr = Expr::parse(src, dim)?;
        let grad = [expr.derivative(0), expr.derivative(1)];
        let hess = [
            [grad[0].derivative(0), grad[0].derivative(1)],
            [grad[1].derivative(0), grad[1].derivative(1)],
        ];
        Ok(Sheet {
            id,
            kind: SheetKind::Smooth { expr, grad, hess },
        })
    }

    pub fn cusp_params(&self) -> Option<(CuspBranch, &CuspParams)> {
        match &self.kind {
            SheetKind::Cusp { branch, params } => Some((*branch, params)),
            SheetKind::Smooth { .. } => None,
        }
    }

    pub fn in_domain(&self, x: &Point) -> bool {
        match &self.kind {
            SheetKind::Smooth { .. } => true,
            SheetKind::Cusp { params, .. } => params.normal_coord(x) >= 0.0,
        }
    }

    /// Value and gradient; errors outside the sheet's half-chart.
    pub fn eval(&self, x: &Point, dim: usize) -> Result<(f64, Point)> {
        if !self.in_domain(x) {
            return Err(Error::OutsideDomain {
                sheet: self.id,
                point: *x,
            });
        }
        Ok(self.eval_extended(x, dim))
    }

    /// Value and gradient with cusp sheets continued across the fold by the
    /// odd extension `s -> sign(s) |2s|^{3/2} / 3`. Agrees with [`Sheet::eval`]
    /// on the domain; used only inside the integrator.
    pub fn eval_extended(&self, x: &Point, dim: usize) -> (f64, Point) {
        match &self.kind {
            SheetKind::Smooth { expr, grad, .. } => {
                let g = if dim == 2 {
                    [grad[0].eval(x), grad[1].eval(x)]
                } else {
                    [grad[0].eval(x), 0.0]
                };
                (expr.eval(x), g)
            }
            SheetKind::Cusp { branch, params } => {
                let s = params.normal_coord(x);
                let root = (2.0 * s.abs()).sqrt();
                let cubic = s.signum() * root * root * root / 3.0;
                let value = branch.sign() * cubic + params.linear_part(x, dim);
                let mut g = params.linear_grad(dim);
                g[params.axis] += params.sign * branch.sign() * root;
                (value, g)
            }
        }
    }

    /// Analytic Hessian (cusp sheets: interior of the half-chart only).
    pub fn hessian(&self, x: &Point, dim: usize) -> [[f64; 2]; 2] {
        match &self.kind {
            SheetKind::Smooth { hess, .. } => {
                let mut h = [[0.0; 2]; 2];
                for i in 0..dim {
                    for j in 0..dim {
                        h[i][j] = hess[i][j].eval(x);
                    }
                }
                h
            }
            SheetKind::Cusp { branch, params } => {
                let s = params.normal_coord(x).max(f64::MIN_POSITIVE);
                let mut h = [[0.0; 2]; 2];
                h[params.axis][params.axis] = branch.sign() / (2.0 * s).sqrt();
                h
            }
        }
    }
}

/// One affine piece of the fold locus, shared boundary of a cusp pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldComponent {
    pub id: usize,
    pub axis: usize,
    pub offset: f64,
    pub sign: f64,
    pub pair: String,
    pub upper: SheetId,
    pub lower: SheetId,
}

impl FoldComponent {
    /// Signed offset of `x` from the fold, positive on the cusp pair's side.
    pub fn signed_offset(&self, x: &Point) -> f64 {
        self.sign * (x[self.axis] - self.offset)
    }

    pub fn project(&self, x: &Point) -> Point {
        let mut p = *x;
        p[self.axis] = self.offset;
        p
    }

    /// Sheet on the other branch of the same cusp pair.
    pub fn partner(&self, sheet: SheetId) -> Option<SheetId> {
        if sheet == self.upper {
            Some(self.lower)
        } else if sheet == self.lower {
            Some(self.upper)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub chart: Chart,
    pub sheets: Vec<Sheet>,
    pub folds: Vec<FoldComponent>,
}

impl Scenario {
    pub fn dim(&self) -> usize {
        self.chart.dim
    }

    pub fn sheet(&self, id: SheetId) -> Result<&Sheet> {
        self.sheets
            .iter()
            .find(|s| s.id == id)
            .ok_or(Error::UnknownSheet(id))
    }

    pub fn eval_sheet(&self, id: SheetId, x: &Point) -> Result<(f64, Point)> {
        self.sheet(id)?.eval(x, self.dim())
    }

    /// Distance to the nearest fold component and its id.
    pub fn fold_distance(&self, x: &Point) -> (f64, Option<usize>) {
        let mut best = (f64::INFINITY, None);
        for fold in &self.folds {
            let d = (x[fold.axis] - fold.offset).abs();
            if d < best.0 {
                best = (d, Some(fold.id));
            }
        }
        best
    }

    /// Fold component bounding the domain of `sheet`, if it is a cusp sheet.
    pub fn fold_of_sheet(&self, sheet: SheetId) -> Option<&FoldComponent> {
        self.folds
            .iter()
            .find(|f| f.upper == sheet || f.lower == sheet)
    }

    pub fn difference(self: &Arc<Self>, upper: SheetId, lower: SheetId) -> Result<DifferenceField> {
        DifferenceField::new(self.clone(), upper, lower)
    }

    /// Assemble a scenario from already-built sheets, deriving the fold locus.
    pub fn from_sheets(name: &str, chart: Chart, sheets: Vec<Sheet>) -> Result<Scenario> {
        let mut seen = std::collections::BTreeSet::new();
        for s in &sheets {
            if !seen.insert(s.id) {
                return Err(Error::InvalidScenario(format!("duplicate sheet id {}", s.id)));
            }
        }
        let mut folds: Vec<FoldComponent> = Vec::new();
        let mut pending: Vec<(String, CuspBranch, &Sheet)> = Vec::new();
        for sheet in &sheets {
            if let SheetKind::Cusp { branch, params } = &sheet.kind {
                if params.axis >= chart.dim {
                    return Err(Error::InvalidScenario(format!(
                        "sheet {}: fold axis {} outside chart",
                        sheet.id,
                        params.axis + 1
                    )));
                }
                if chart.periodic[params.axis] {
                    return Err(Error::InvalidScenario(format!(
                        "sheet {}: fold on a periodic axis",
                        sheet.id
                    )));
                }
                if params.a.len() + 1 != chart.dim {
                    return Err(Error::InvalidScenario(format!(
                        "sheet {}: expected {} linear coefficients, got {}",
                        sheet.id,
                        chart.dim - 1,
                        params.a.len()
                    )));
                }
                if params.sign != 1.0 && params.sign != -1.0 {
                    return Err(Error::InvalidScenario(format!(
                        "sheet {}: orientation sign must be +1 or -1",
                        sheet.id
                    )));
                }
                pending.push((params.pair.clone(), *branch, sheet));
            }
        }
        let mut pair_names: Vec<String> = Vec::new();
        for (name, _, _) in &pending {
            if !pair_names.contains(name) {
                pair_names.push(name.clone());
            }
        }
        for name in pair_names {
            let members: Vec<_> = pending.iter().filter(|p| p.0 == name).collect();
            let upper: Vec<_> = members.iter().filter(|m| m.1 == CuspBranch::Upper).collect();
            let lower: Vec<_> = members.iter().filter(|m| m.1 == CuspBranch::Lower).collect();
            if upper.len() != 1 || lower.len() != 1 {
                return Err(Error::InvalidScenario(format!(
                    "cusp pair '{name}' needs exactly one upper and one lower sheet"
                )));
            }
            let (u, l) = (upper[0].2, lower[0].2);
            let (_, pu) = u.cusp_params().expect("cusp");
            let (_, pl) = l.cusp_params().expect("cusp");
            if pu.b != pl.b || pu.a != pl.a {
                return Err(Error::InvalidScenario(format!(
                    "cusp pair '{name}': mismatched (b, a) parameters between sheets {} and {}",
                    u.id, l.id
                )));
            }
            if pu.axis != pl.axis || pu.offset != pl.offset || pu.sign != pl.sign {
                return Err(Error::InvalidScenario(format!(
                    "cusp pair '{name}': sheets {} and {} disagree on the fold hyperplane",
                    u.id, l.id
                )));
            }
            for other in &folds {
                if other.axis == pu.axis && other.offset == pu.offset {
                    return Err(Error::InvalidScenario(format!(
                        "fold components '{}' and '{name}' coincide (not transverse)",
                        other.pair
                    )));
                }
            }
            folds.push(FoldComponent {
                id: folds.len(),
                axis: pu.axis,
                offset: pu.offset,
                sign: pu.sign,
                pair: name.clone(),
                upper: u.id,
                lower: l.id,
            });
        }
        Ok(Scenario {
            name: name.to_string(),
            chart,
            sheets,
            folds,
        })
    }
}

/// Parse and validate a scenario document (TOML).
pub fn load_scenario(text: &str) -> Result<Scenario> {
    let doc: ScenarioDoc = toml::from_str(text).map_err(|e| Error::parse("scenario", e))?;
    doc.build()
}

pub fn load_scenario_file(path: &std::path::Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    load_scenario(&text)
}

/// `F = f_upper - f_lower` over the intersection of the two sheet domains.
#[derive(Debug, Clone)]
pub struct DifferenceField {
    scenario: Arc<Scenario>,
    pub upper: SheetId,
    pub lower: SheetId,
    bounding: Vec<usize>,
    domain: [[f64; 2]; 2],
    pub(crate) crit_cache: Arc<OnceLock<CritCache>>,
}

/// Critical points with default search options, or the degenerate point found.
pub(crate) type CritCache = std::result::Result<Vec<CriticalPoint>, (Point, f64)>;

impl DifferenceField {
    pub fn new(scenario: Arc<Scenario>, upper: SheetId, lower: SheetId) -> Result<Self> {
        if upper == lower {
            return Err(Error::BadPair(upper, lower, "a sheet minus itself is identically zero".into()));
        }
        let su = scenario.sheet(upper)?;
        let sl = scenario.sheet(lower)?;
        let chart = &scenario.chart;
        let mut domain = chart.bounds;
        let mut bounding = Vec::new();
        for sheet in [su, sl] {
            if let Some((_, p)) = sheet.cusp_params() {
                let fold = scenario.fold_of_sheet(sheet.id).expect("cusp sheet has a fold");
                if !bounding.contains(&fold.id) {
                    bounding.push(fold.id);
                }
                let [lo, hi] = &mut domain[p.axis];
                if p.sign > 0.0 {
                    *lo = lo.max(p.offset);
                } else {
                    *hi = hi.min(p.offset);
                }
            }
        }
        for axis in 0..chart.dim {
            if !(domain[axis][1] > domain[axis][0]) {
                return Err(Error::BadPair(upper, lower, "sheet domains do not overlap".into()));
            }
        }
        Ok(DifferenceField {
            scenario,
            upper,
            lower,
            bounding,
            domain,
            crit_cache: Arc::default(),
        })
    }

    pub fn scenario(&self) -> &Arc<Scenario> {
        &self.scenario
    }

    pub fn chart(&self) -> &Chart {
        &self.scenario.chart
    }

    pub fn dim(&self) -> usize {
        self.scenario.chart.dim
    }

    /// The field with sheets exchanged, `-F`.
    pub fn reversed(&self) -> DifferenceField {
        DifferenceField {
            scenario: self.scenario.clone(),
            upper: self.lower,
            lower: self.upper,
            bounding: self.bounding.clone(),
            domain: self.domain,
            crit_cache: Arc::default(),
        }
    }

    /// Domain box (chart bounds cut down by the bounding folds).
    pub fn domain_box(&self) -> [[f64; 2]; 2] {
        self.domain
    }

    /// Fold components that bound the domain of this field.
    pub fn bounding_folds(&self) -> impl Iterator<Item = &FoldComponent> {
        self.bounding.iter().map(|&id| &self.scenario.folds[id])
    }

    pub fn in_domain(&self, x: &Point) -> bool {
        self.bounding_folds().all(|f| f.signed_offset(x) >= 0.0)
    }

    pub fn value(&self, x: &Point) -> Result<f64> {
        Ok(self.eval(x)?.0)
    }

    pub fn grad(&self, x: &Point) -> Result<Point> {
        Ok(self.eval(x)?.1)
    }

    pub fn eval(&self, x: &Point) -> Result<(f64, Point)> {
        let dim = self.dim();
        let (vu, gu) = self.scenario.sheet(self.upper)?.eval(x, dim)?;
        let (vl, gl) = self.scenario.sheet(self.lower)?.eval(x, dim)?;
        Ok((vu - vl, [gu[0] - gl[0], gu[1] - gl[1]]))
    }

    /// Odd-extended evaluation used by the integrator; never fails.
    pub fn eval_extended(&self, x: &Point) -> (f64, Point) {
        let dim = self.dim();
        let su = self.scenario.sheet(self.upper).expect("validated sheet");
        let sl = self.scenario.sheet(self.lower).expect("validated sheet");
        let (vu, gu) = su.eval_extended(x, dim);
        let (vl, gl) = sl.eval_extended(x, dim);
        (vu - vl, [gu[0] - gl[0], gu[1] - gl[1]])
    }

    pub fn value_extended(&self, x: &Point) -> f64 {
        self.eval_extended(x).0
    }

    /// Hessian from central differences of the analytic gradient.
    pub fn hessian_fd(&self, x: &Point) -> [[f64; 2]; 2] {
        let dim = self.dim();
        let h = 1e-6;
        let mut out = [[0.0; 2]; 2];
        for j in 0..dim {
            let mut xp = *x;
            let mut xm = *x;
            xp[j] += h;
            xm[j] -= h;
            let gp = self.eval_extended(&xp).1;
            let gm = self.eval_extended(&xm).1;
            for i in 0..dim {
                out[i][j] = (gp[i] - gm[i]) / (2.0 * h);
            }
        }
        if dim == 2 {
            let sym = 0.5 * (out[0][1] + out[1][0]);
            out[0][1] = sym;
            out[1][0] = sym;
        }
        out
    }

    pub fn label(&self) -> String {
        format!("F{}{}", self.upper, self.lower)
    }
}
