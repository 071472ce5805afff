//! Critical points of difference fields, Morse neighborhoods `V(ε, η)` and
//! samples of the stable/unstable spheres on their boundaries.

use crate::error::{Error, Result};
use crate::flow::{trace, Direction, FlowOptions, HalfEnd};
use crate::scenario::{norm, DifferenceField};
use crate::Point;

/// A nondegenerate critical point of a difference field.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticalPoint {
    /// Position in the lexicographically sorted critical point list.
    pub id: usize,
    pub location: Point,
    pub index: usize,
    pub dim: usize,
    /// Hessian eigenvalues in ascending order.
    pub eigenvalues: [f64; 2],
    /// Unit eigenvectors matching `eigenvalues`.
    pub eigenvectors: [Point; 2],
    pub value: f64,
}

impl CriticalPoint {
    pub fn min_abs_eigenvalue(&self) -> f64 {
        self.eigenvalues[..self.dim]
            .iter()
            .fold(f64::INFINITY, |m, l| m.min(l.abs()))
    }
}

#[derive(Debug, Clone)]
pub struct FindOptions {
    /// Seeds per axis.
    pub resolution: usize,
    pub tol: f64,
    pub degeneracy: f64,
    pub fold_exclusion: f64,
}

impl Default for FindOptions {
    fn default() -> Self {
        FindOptions {
            resolution: 24,
            tol: 1e-10,
            degeneracy: 1e-6,
            fold_exclusion: 1e-3,
        }
    }
}

/// Symmetric eigen-decomposition (ascending eigenvalues, unit eigenvectors).
pub(crate) fn sym_eigen(h: &[[f64; 2]; 2], dim: usize) -> ([f64; 2], [Point; 2]) {
    if dim == 1 {
        return ([h[0][0], 0.0], [[1.0, 0.0], [0.0, 1.0]]);
    }
    let (a, b, d) = (h[0][0], h[0][1], h[1][1]);
    let mean = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let (l0, l1) = (mean - rad, mean + rad);
    let v0 = if b.abs() > 1e-300 {
        let v = [b, l0 - a];
        let n = norm(&v);
        [v[0] / n, v[1] / n]
    } else if a <= d {
        [1.0, 0.0]
    } else {
        [0.0, 1.0]
    };
    ([l0, l1], [v0, [-v0[1], v0[0]]])
}

fn solve2(h: &[[f64; 2]; 2], g: &Point, dim: usize) -> Option<Point> {
    if dim == 1 {
        return (h[0][0].abs() > 1e-300).then(|| [g[0] / h[0][0], 0.0]);
    }
    let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
    if det.abs() < 1e-300 {
        return None;
    }
    Some([
        (h[1][1] * g[0] - h[0][1] * g[1]) / det,
        (h[0][0] * g[1] - h[1][0] * g[0]) / det,
    ])
}

/// Damped Newton iteration on the gradient. Returns the converged point.
fn newton(field: &DifferenceField, seed: Point, tol: f64) -> Option<Point> {
    let dim = field.dim();
    let chart = field.chart();
    let span: f64 = (0..dim).map(|a| chart.bounds[a][1] - chart.bounds[a][0]).sum();
    let mut x = seed;
    let mut g = field.eval_extended(&x).1;
    for _ in 0..200 {
        let h = field.hessian_fd(&x);
        let dir = solve2(&h, &g, dim).unwrap_or(g);
        let gn = norm(&g);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand = [x[0] - alpha * dir[0], x[1] - alpha * dir[1]];
            let gc = field.eval_extended(&cand).1;
            if norm(&gc) < gn || gn == 0.0 {
                accepted = Some((cand, gc));
                break;
            }
            alpha *= 0.5;
        }
        let (cand, gc) = accepted?;
        let step = norm(&[cand[0] - x[0], cand[1] - x[1]]);
        x = chart.wrap(cand);
        g = gc;
        if !x.iter().all(|v| v.is_finite()) || chart.wall_margin(&x) < -span {
            return None;
        }
        if norm(&g) <= tol && step <= 1e-12 {
            return Some(x);
        }
    }
    (norm(&g) <= tol).then_some(x)
}

/// Locate, classify and sort the critical points of `field`.
pub fn find_critical_points(field: &DifferenceField, opts: &FindOptions) -> Result<Vec<CriticalPoint>> {
    let dim = field.dim();
    let chart = field.chart().clone();
    let domain = field.domain_box();
    let res = opts.resolution.max(2);
    let axis_seeds = |axis: usize| -> Vec<f64> {
        let [lo, hi] = domain[axis];
        (0..res)
            .map(|i| {
                let frac = if chart.periodic[axis] {
                    i as f64 / res as f64
                } else {
                    (i as f64 + 0.5) / res as f64
                };
                lo + frac * (hi - lo)
            })
            .collect()
    };
    let xs = axis_seeds(0);
    let ys = if dim == 2 { axis_seeds(1) } else { vec![0.0] };
    let dedup = 10.0 * opts.tol.max(1e-10);
    let mut found: Vec<Point> = Vec::new();
    for &x in &xs {
        for &y in &ys {
            let Some(p) = newton(field, [x, y], opts.tol) else {
                continue;
            };
            if !chart.contains(&p)
                || field
                    .bounding_folds()
                    .any(|f| f.signed_offset(&p) < opts.fold_exclusion)
            {
                continue;
            }
            if found.iter().any(|q| chart.dist(q, &p) <= dedup) {
                continue;
            }
            found.push(p);
        }
    }
    found.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let mut out = Vec::with_capacity(found.len());
    for (id, location) in found.into_iter().enumerate() {
        let h = field.hessian_fd(&location);
        let (eigenvalues, eigenvectors) = sym_eigen(&h, dim);
        let min_abs = eigenvalues[..dim].iter().fold(f64::INFINITY, |m, l| m.min(l.abs()));
        if min_abs < opts.degeneracy {
            return Err(Error::NonMorse {
                location,
                min_eigenvalue: min_abs,
            });
        }
        out.push(CriticalPoint {
            id,
            location,
            index: eigenvalues[..dim].iter().filter(|l| **l < 0.0).count(),
            dim,
            eigenvalues,
            eigenvectors,
            value: field.value(&location)?,
        });
    }
    Ok(out)
}

impl DifferenceField {
    /// Critical points with default search options, computed once per field.
    pub fn critical_points(&self) -> Result<&[CriticalPoint]> {
        let cached = self.crit_cache.get_or_init(|| {
            find_critical_points(self, &FindOptions::default()).map_err(|e| match e {
                Error::NonMorse {
                    location,
                    min_eigenvalue,
                } => (location, min_eigenvalue),
                other => panic!("critical point search failed: {other}"),
            })
        });
        match cached {
            Ok(v) => Ok(v),
            Err((location, min_eigenvalue)) => Err(Error::NonMorse {
                location: *location,
                min_eigenvalue: *min_eigenvalue,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryPart {
    PlusLevel,
    MinusLevel,
    Lateral,
    NotBoundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SphereKind {
    Stable,
    Unstable,
}

/// The region `-ε < Q < ε, ‖x₋‖²‖x₊‖² ≤ η(ε+η)` around a critical point, with
/// `Q = F - F(c)` and `x±` the Hessian eigenframe coordinates scaled so that
/// `Q ≈ ‖x₊‖² - ‖x₋‖²`.
#[derive(Debug, Clone)]
pub struct MorseNeighborhood {
    pub center: CriticalPoint,
    pub epsilon: f64,
    pub eta: f64,
    field: DifferenceField,
}

impl MorseNeighborhood {
    pub fn field(&self) -> &DifferenceField {
        &self.field
    }

    pub fn q(&self, x: &Point) -> f64 {
        self.field.value_extended(x) - self.center.value
    }

    /// `(‖x₋‖², ‖x₊‖²)` in the scaled eigenframe.
    pub fn split(&self, x: &Point) -> (f64, f64) {
        let c = &self.center;
        let d = self.field.chart().delta(&c.location, x);
        let (mut minus, mut plus) = (0.0, 0.0);
        for k in 0..c.dim {
            let v = c.eigenvectors[k];
            let proj = d[0] * v[0] + d[1] * v[1];
            let y2 = 0.5 * c.eigenvalues[k].abs() * proj * proj;
            if c.eigenvalues[k] < 0.0 {
                minus += y2;
            } else {
                plus += y2;
            }
        }
        (minus, plus)
    }

    /// Scaled eigenframe coordinates divided by `sqrt(ε)`; the level sets
    /// `Q = ±ε` meet these in approximately unit spheres.
    pub fn sphere_coords(&self, x: &Point) -> Point {
        let c = &self.center;
        let d = self.field.chart().delta(&c.location, x);
        let mut y = [0.0; 2];
        for k in 0..c.dim {
            let v = c.eigenvectors[k];
            let proj = d[0] * v[0] + d[1] * v[1];
            y[k] = (0.5 * c.eigenvalues[k].abs() / self.epsilon).sqrt() * proj;
        }
        y
    }

    /// Chart radius containing the whole neighborhood.
    pub fn radius_bound(&self) -> f64 {
        radius_bound(&self.center, self.epsilon, self.eta)
    }

    pub fn contains(&self, x: &Point) -> bool {
        let q = self.q(x);
        let (m, p) = self.split(x);
        let cap = 2.0 * (self.epsilon + self.eta);
        q.abs() < self.epsilon && m * p <= self.eta * (self.epsilon + self.eta) && m <= cap && p <= cap
    }

    pub fn classify_boundary(&self, x: &Point) -> BoundaryPart {
        let tol = 1e-8 * self.epsilon;
        let (eps, eta) = (self.epsilon, self.eta);
        let q = self.q(x);
        let (m, p) = self.split(x);
        let cap = 2.0 * (eps + eta);
        if m > cap || p > cap {
            return BoundaryPart::NotBoundary;
        }
        if (q - eps).abs() <= tol && m <= eta + tol {
            BoundaryPart::PlusLevel
        } else if (q + eps).abs() <= tol && p <= eta + tol {
            BoundaryPart::MinusLevel
        } else if (m * p - eta * (eps + eta)).abs() <= tol && q.abs() <= eps + tol {
            BoundaryPart::Lateral
        } else {
            BoundaryPart::NotBoundary
        }
    }

    /// Point where the ray `c + r·dir` first reaches `Q = target`.
    pub fn ray_to_level(&self, dir: &Point, target: f64) -> Option<Point> {
        let c = self.center.location;
        let at = |r: f64| [c[0] + r * dir[0], c[1] + r * dir[1]];
        let rmax = 2.0 * self.radius_bound();
        let n = 256;
        let mut lo = 0.0;
        let mut hi = None;
        for i in 1..=n {
            let r = rmax * i as f64 / n as f64;
            if self.q(&at(r)).abs() >= target.abs() {
                hi = Some(r);
                break;
            }
            lo = r;
        }
        let mut hi = hi?;
        if self.q(&at(hi)) * target < 0.0 {
            return None;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.q(&at(mid)).abs() < target.abs() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(self.field.chart().wrap(at(0.5 * (lo + hi))))
    }

    /// Points of `W^s(c) ∩ ∂V` (Stable) or `W^u(c) ∩ ∂V` (Unstable).
    pub fn sphere_samples(&self, which: SphereKind, k: usize) -> Result<Vec<Point>> {
        let c = &self.center;
        let n = c.dim;
        let sphere_dim = match which {
            SphereKind::Stable => n as i64 - c.index as i64 - 1,
            SphereKind::Unstable => c.index as i64 - 1,
        };
        let target = match which {
            SphereKind::Stable => self.epsilon,
            SphereKind::Unstable => -self.epsilon,
        };
        match sphere_dim {
            d if d < 0 => Ok(Vec::new()),
            1 => Ok((0..k)
                .filter_map(|j| {
                    let th = std::f64::consts::TAU * j as f64 / k as f64;
                    self.ray_to_level(&[th.cos(), th.sin()], target)
                })
                .collect()),
            _ => {
                let along = if (which == SphereKind::Stable) == (c.eigenvalues[0] > 0.0) {
                    c.eigenvectors[0]
                } else {
                    c.eigenvectors[1]
                };
                let mut out = Vec::new();
                for sign in [1.0, -1.0] {
                    let d = [sign * along[0], sign * along[1]];
                    let p = if n == 1 {
                        self.ray_to_level(&d, target)
                    } else {
                        self.shoot(which, &d, target)?
                    };
                    out.extend(p);
                }
                Ok(out)
            }
        }
    }

    /// Refine a linear guess for an S⁰ point in 2d onto the true invariant
    /// manifold by bisection on the transverse offset.
    fn shoot(&self, which: SphereKind, along: &Point, target: f64) -> Result<Option<Point>> {
        let c = self.center.location;
        let across = [-along[1], along[0]];
        let chart = self.field.chart().clone();
        let dir = match which {
            SphereKind::Stable => Direction::Descending,
            SphereKind::Unstable => Direction::Ascending,
        };
        let r0 = match self.ray_to_level(along, target) {
            Some(p) => chart.dist(&c, &p),
            None => return Ok(None),
        };
        let point_at = |w: f64| -> Option<Point> {
            let base = [c[0] + w * across[0], c[1] + w * across[1]];
            let q = |r: f64| self.q(&[base[0] + r * along[0], base[1] + r * along[1]]) - target;
            let (mut lo, mut hi) = (0.0, 2.0 * r0);
            if q(lo) * q(hi) > 0.0 {
                return None;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if q(lo) * q(mid) <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let r = 0.5 * (lo + hi);
            Some(chart.wrap([base[0] + r * along[0], base[1] + r * along[1]]))
        };
        let opts = FlowOptions::default();
        let exit_level = -0.5 * target;
        // +1/-1 for the side the flow leaves on, 0 when it reaches c.
        let side = |p: &Point| -> Result<i32> {
            let mut stop = |x: &Point| -> bool { (self.q(x) - exit_level) * target.signum() <= 0.0 };
            let half = trace(&self.field, *p, dir, &opts, Some(&mut stop), false)?;
            let end = match half.end {
                HalfEnd::Critical { id, .. } if id == self.center.id => return Ok(0),
                HalfEnd::Critical { point, .. }
                | HalfEnd::Stopped { point, .. }
                | HalfEnd::Fold { point, .. }
                | HalfEnd::Wall { point, .. } => point,
            };
            let d = chart.delta(&c, &end);
            Ok(if d[0] * across[0] + d[1] * across[1] >= 0.0 { 1 } else { -1 })
        };
        let w0 = 0.5 * r0;
        let (mut lo, mut hi) = (-w0, w0);
        let Some(mid_point) = point_at(0.0) else {
            return Ok(None);
        };
        if side(&mid_point)? == 0 {
            return Ok(Some(mid_point));
        }
        let (Some(pl), Some(ph)) = (point_at(lo), point_at(hi)) else {
            return Ok(Some(mid_point));
        };
        let (sl, sh) = (side(&pl)?, side(&ph)?);
        if sl == 0 {
            return Ok(Some(pl));
        }
        if sh == 0 || sl == sh {
            return Ok(Some(if sh == 0 { ph } else { mid_point }));
        }
        let mut best = mid_point;
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let Some(p) = point_at(mid) else { break };
            best = p;
            match side(&p)? {
                0 => return Ok(Some(p)),
                s if s == sl => lo = mid,
                _ => hi = mid,
            }
        }
        Ok(Some(best))
    }
}

fn radius_bound(c: &CriticalPoint, epsilon: f64, eta: f64) -> f64 {
    (8.0 * (epsilon + eta) / c.min_abs_eigenvalue()).sqrt()
}

/// Build `V(ε, η)` around `c`, rejecting sizes that reach the chart walls, a
/// fold, or the neighborhood of another critical point.
pub fn build_neighborhood(
    field: &DifferenceField,
    c: &CriticalPoint,
    epsilon: f64,
    eta: f64,
) -> Result<MorseNeighborhood> {
    if !(epsilon > 0.0 && eta > 0.0) {
        return Err(Error::TooLarge(format!(
            "epsilon and eta must be positive (got {epsilon}, {eta})"
        )));
    }
    let chart = field.chart();
    let r = radius_bound(c, epsilon, eta);
    let margin = chart.wall_margin(&c.location);
    if r >= margin {
        return Err(Error::TooLarge(format!(
            "radius {r:.4} around critical point {} reaches the chart boundary ({margin:.4} away)",
            c.id
        )));
    }
    for axis in 0..chart.dim {
        if chart.periodic[axis] && 2.0 * r >= chart.period(axis) {
            return Err(Error::TooLarge(format!(
                "radius {r:.4} wraps around periodic axis {}",
                axis + 1
            )));
        }
    }
    let (fold_d, fold_id) = field.scenario().fold_distance(&c.location);
    if r >= fold_d {
        return Err(Error::TooLarge(format!(
            "radius {r:.4} around critical point {} meets fold component {} ({fold_d:.4} away)",
            c.id,
            fold_id.unwrap_or(0)
        )));
    }
    for other in field.critical_points()? {
        if other.id == c.id {
            continue;
        }
        let d = chart.dist(&c.location, &other.location);
        let ro = radius_bound(other, epsilon, eta);
        if r + ro >= d {
            return Err(Error::TooLarge(format!(
                "neighborhoods of critical points {} and {} overlap ({:.4} + {:.4} >= {:.4})",
                c.id, other.id, r, ro, d
            )));
        }
    }
    Ok(MorseNeighborhood {
        center: c.clone(),
        epsilon,
        eta,
        field: field.clone(),
    })
}

/// Default neighborhoods of all critical points at a common size: `ε = 0.05`,
/// `η = ε/5`, halved until every neighborhood fits.
pub fn default_neighborhoods(field: &DifferenceField) -> Result<Vec<MorseNeighborhood>> {
    let cps = field.critical_points()?;
    let mut eps = 0.05;
    let mut last = String::new();
    'sizes: for _ in 0..30 {
        let mut out = Vec::with_capacity(cps.len());
        for c in cps {
            match build_neighborhood(field, c, eps, eps / 5.0) {
                Ok(n) => out.push(n),
                Err(Error::TooLarge(msg)) => {
                    last = msg;
                    eps *= 0.5;
                    continue 'sizes;
                }
                Err(e) => return Err(e),
            }
        }
        return Ok(out);
    }
    Err(Error::TooLarge(last))
}

pub fn default_neighborhood(field: &DifferenceField, c: &CriticalPoint) -> Result<MorseNeighborhood> {
    Ok(default_neighborhoods(field)?.swap_remove(c.id))
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
    fn double_well_points() {
        let f = field("double-well-1d", 1, 2);
        let cps = f.critical_points().unwrap();
        assert_eq!(cps.len(), 2);
        // Roots of x^2 - 1 and the sign of 2x.
        for (cp, (x, idx)) in cps.iter().zip([(-1.0, 1), (1.0, 0)]) {
            assert!((cp.location[0] - x).abs() < 1e-10);
            assert_eq!(cp.index, idx);
            assert!((cp.eigenvalues[0] - 2.0 * x).abs() < 1e-5);
        }
    }

    #[test]
    fn torus_points() {
        let f = field("torus-2d", 1, 2);
        let cps = f.critical_points().unwrap();
        let expect = [([0.0, 0.0], 2), ([0.0, 0.5], 1), ([0.5, 0.0], 1), ([0.5, 0.5], 0)];
        assert_eq!(cps.len(), 4);
        for (cp, (loc, idx)) in cps.iter().zip(expect) {
            assert!(f.chart().dist(&cp.location, &loc) < 1e-9, "{cp:?}");
            assert_eq!(cp.index, idx);
        }
    }

    #[test]
    fn cubic_is_degenerate() {
        let text = "[chart]\ndim = 1\nbounds = [[-1.0, 1.0]]\n[[sheets]]\nid = 1\nkind = \"smooth\"\nexpr = \"x1^3\"\n[[sheets]]\nid = 2\nkind = \"smooth\"\nexpr = \"0\"\n";
        let f = Arc::new(load_scenario(text).unwrap()).difference(1, 2).unwrap();
        match find_critical_points(&f, &FindOptions::default()) {
            Err(Error::NonMorse { location, .. }) => assert!(location[0].abs() < 1e-9),
            other => panic!("expected NonMorse, got {other:?}"),
        }
    }

    #[test]
    fn fold_fields_exclude_fold() {
        assert!(field("cusp-2d", 1, 2).critical_points().unwrap().is_empty());
        assert!(field("lip-1d", 2, 4).critical_points().unwrap().is_empty());
        let cps = field("fold-morse-1d", 1, 3).critical_points().unwrap().to_vec();
        assert_eq!(cps.len(), 1);
        assert!((cps[0].location[0] - 0.5).abs() < 1e-10);
        assert_eq!(cps[0].index, 1);
    }

    #[test]
    fn neighborhood_size_checks() {
        let f = field("fold-morse-1d", 1, 3);
        let c = f.critical_points().unwrap()[0].clone();
        assert!(matches!(build_neighborhood(&f, &c, 0.05, 0.01), Err(Error::TooLarge(_))));
        let v = default_neighborhood(&f, &c).unwrap();
        assert!(v.epsilon < 0.05);
    }

    #[test]
    fn boundary_parts() {
        let f = field("double-well-1d", 1, 2);
        let c = f.critical_points().unwrap()[1].clone();
        let v = build_neighborhood(&f, &c, 0.05, 0.01).unwrap();
        let pts = v.sphere_samples(SphereKind::Stable, 2).unwrap();
        assert_eq!(pts.len(), 2);
        for p in &pts {
            assert_eq!(v.classify_boundary(p), BoundaryPart::PlusLevel);
            // F - F(1) = (x-1)^2 (x+2)/3 for the cubic double well.
            let d = p[0] - 1.0;
            assert!((d * d * (p[0] + 2.0) / 3.0 - 0.05).abs() < 1e-12);
        }
        assert_eq!(v.classify_boundary(&c.location), BoundaryPart::NotBoundary);
        assert!(v.sphere_samples(SphereKind::Unstable, 4).unwrap().is_empty());

        let t = field("torus-2d", 1, 2);
        let saddle = t.critical_points().unwrap()[2].clone();
        let v = build_neighborhood(&t, &saddle, 0.05, 0.01).unwrap();
        let up = v.ray_to_level(&[0.0, 1.0], -0.05).unwrap();
        assert_eq!(v.classify_boundary(&up), BoundaryPart::MinusLevel);
        let right = v.ray_to_level(&[1.0, 0.0], 0.05).unwrap();
        assert_eq!(v.classify_boundary(&right), BoundaryPart::PlusLevel);
    }

    #[test]
    fn eigen_2x2() {
        let (l, v) = sym_eigen(&[[2.0, 1.0], [1.0, 2.0]], 2);
        assert!((l[0] - 1.0).abs() < 1e-14 && (l[1] - 3.0).abs() < 1e-14);
        assert!((v[0][0] + v[0][1]).abs() < 1e-14);
        assert!((v[1][0] - v[1][1]).abs() < 1e-14);
    }
}
