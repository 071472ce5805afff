//! Static SVG of the base projection: dashed fold lines, index-labelled
//! critical points and flow polylines. One-dimensional charts are drawn as
//! the graph `(x, F)`.

use std::fmt::Write;

use crate::morse::CriticalPoint;
use crate::scenario::Scenario;
use crate::Point;

const SIZE: f64 = 480.0;
const PAD: f64 = 24.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

pub struct Plot {
    dim: usize,
    bounds: [[f64; 2]; 2],
    folds: Vec<(usize, f64)>,
    critical: Vec<(Point, usize)>,
    paths: Vec<Vec<Point>>,
}

impl Plot {
    pub fn new(scenario: &Scenario) -> Plot {
        Plot {
            dim: scenario.dim(),
            bounds: scenario.chart.bounds,
            folds: scenario.folds.iter().map(|f| (f.axis, f.offset)).collect(),
            critical: Vec::new(),
            paths: Vec::new(),
        }
    }

    /// In one dimension pass `(x, F(x))` as the point.
    pub fn critical_point(&mut self, at: Point, c: &CriticalPoint) {
        self.critical.push((at, c.index));
    }

    /// Polylines are split where a periodic chart wraps around.
    pub fn path(&mut self, points: Vec<Point>) {
        let w = [self.bounds[0][1] - self.bounds[0][0], self.bounds[1][1] - self.bounds[1][0]];
        let mut piece: Vec<Point> = Vec::new();
        for p in points {
            if let Some(q) = piece.last() {
                let jump = (0..self.dim).any(|i| (p[i] - q[i]).abs() > 0.5 * w[i]);
                if jump {
                    self.paths.push(std::mem::take(&mut piece));
                }
            }
            piece.push(p);
        }
        if !piece.is_empty() {
            self.paths.push(piece);
        }
    }

    fn frame(&self) -> [[f64; 2]; 2] {
        let mut b = self.bounds;
        if self.dim == 1 {
            let ys = self
                .paths
                .iter()
                .flatten()
                .chain(self.critical.iter().map(|(p, _)| p))
                .map(|p| p[1]);
            let (lo, hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), y| (l.min(y), h.max(y)));
            let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (-1.0, 1.0) };
            let pad = 0.05 * (hi - lo).max(1e-9);
            b[1] = [lo - pad, hi + pad];
        }
        b
    }

    pub fn render(&self) -> String {
        let b = self.frame();
        let sx = (SIZE - 2.0 * PAD) / (b[0][1] - b[0][0]);
        let sy = (SIZE - 2.0 * PAD) / (b[1][1] - b[1][0]);
        let map = |p: &Point| (PAD + (p[0] - b[0][0]) * sx, SIZE - PAD - (p[1] - b[1][0]) * sy);
        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#);
        let _ = writeln!(
            s,
            r##"<rect x="{PAD}" y="{PAD}" width="{w}" height="{w}" fill="none" stroke="#999"/>"##,
            w = SIZE - 2.0 * PAD
        );
        for &(axis, offset) in &self.folds {
            let (a, c) = if axis == 0 {
                (map(&[offset, b[1][0]]), map(&[offset, b[1][1]]))
            } else {
                (map(&[b[0][0], offset]), map(&[b[0][1], offset]))
            };
            let _ = writeln!(
                s,
                r##"<line class="fold" x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="#444" stroke-dasharray="6 4"/>"##,
                a.0, a.1, c.0, c.1
            );
        }
        for (k, path) in self.paths.iter().enumerate() {
            let mut pts: Vec<String> = path
                .iter()
                .map(|p| {
                    let (x, y) = map(p);
                    format!("{x:.3},{y:.3}")
                })
                .collect();
            pts.dedup();
            let _ = writeln!(
                s,
                r#"<polyline class="flow" fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
                COLORS[k % COLORS.len()],
                pts.join(" ")
            );
        }
        for (p, index) in &self.critical {
            let (x, y) = map(p);
            let _ = writeln!(s, r#"<circle class="critical" cx="{x:.3}" cy="{y:.3}" r="4" fill="black"/>"#);
            let _ = writeln!(s, r#"<text x="{:.3}" y="{:.3}" font-size="12">{index}</text>"#, x + 6.0, y - 6.0);
        }
        s.push_str("</svg>\n");
        s
    }
}
