//! Reference-path geometry: arclength-parameterized polylines and
//! conversion between Cartesian and Frenet (s, d) coordinates.
//!
//! Paths are dense polylines (vertex spacing <= 0.5 m in generated maps)
//! with linear interpolation inside segments. Lateral offset d is positive
//! to the left of the direction of travel.

use serde::{Deserialize, Serialize};

use crate::types::Point;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferencePath {
    pub polyline: Vec<Point>,
    pub cumulative_arclength: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrenetState {
    /// Arclength along the path, clamped to [0, total length].
    pub s: f64,
    /// Signed lateral offset, positive left of travel.
    pub d: f64,
}

impl ReferencePath {
    /// Build from a polyline, computing cumulative arclengths. Consecutive
    /// duplicate points are dropped.
    pub fn new(polyline: Vec<Point>) -> Self {
        let mut pts: Vec<Point> = Vec::with_capacity(polyline.len());
        for p in polyline {
            if let Some(last) = pts.last() {
                if last.distance(&p) < 1e-12 {
                    continue;
                }
            }
            pts.push(p);
        }
        assert!(pts.len() >= 2, "reference path needs at least 2 points");
        let mut cum = Vec::with_capacity(pts.len());
        cum.push(0.0);
        for w in pts.windows(2) {
            let last = *cum.last().unwrap();
            cum.push(last + w[0].distance(&w[1]));
        }
        ReferencePath {
            polyline: pts,
            cumulative_arclength: cum,
        }
    }

    pub fn total_length(&self) -> f64 {
        *self.cumulative_arclength.last().unwrap()
    }

    /// Index of the segment containing arclength `s` (clamped), plus the
    /// parameter t in [0, 1] within that segment.
    fn locate(&self, s: f64) -> (usize, f64) {
        let s = s.clamp(0.0, self.total_length());
        // Binary search over cumulative arclengths.
        let idx = match self
            .cumulative_arclength
            .binary_search_by(|probe| probe.partial_cmp(&s).unwrap())
        {
            Ok(i) => i.min(self.polyline.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.polyline.len() - 2),
        };
        let seg_len = self.cumulative_arclength[idx + 1] - self.cumulative_arclength[idx];
        let t = if seg_len > 0.0 {
            (s - self.cumulative_arclength[idx]) / seg_len
        } else {
            0.0
        };
        (idx, t)
    }

    /// Unit tangent of segment idx.
    fn tangent(&self, idx: usize) -> (f64, f64) {
        let a = self.polyline[idx];
        let b = self.polyline[idx + 1];
        let len = a.distance(&b);
        ((b.x - a.x) / len, (b.y - a.y) / len)
    }

    /// Project a Cartesian point onto the path. Beyond the path ends, s is
    /// clamped. Ambiguous projections resolve to the smallest s.
    pub fn to_frenet(&self, p: Point) -> FrenetState {
        let mut best_dist2 = f64::INFINITY;
        let mut best = FrenetState { s: 0.0, d: 0.0 };
        for idx in 0..self.polyline.len() - 1 {
            let a = self.polyline[idx];
            let b = self.polyline[idx + 1];
            let abx = b.x - a.x;
            let aby = b.y - a.y;
            let seg_len2 = abx * abx + aby * aby;
            let t = (((p.x - a.x) * abx + (p.y - a.y) * aby) / seg_len2).clamp(0.0, 1.0);
            let fx = a.x + t * abx;
            let fy = a.y + t * aby;
            let dx = p.x - fx;
            let dy = p.y - fy;
            let dist2 = dx * dx + dy * dy;
            // Strict improvement keeps the smallest-s winner among ties.
            if dist2 < best_dist2 - 1e-15 {
                best_dist2 = dist2;
                let seg_len = seg_len2.sqrt();
                let s = self.cumulative_arclength[idx] + t * seg_len;
                // Signed distance: positive on the left of travel direction.
                let cross = (abx * dy - aby * dx) / seg_len;
                best = FrenetState { s, d: cross };
            }
        }
        best
    }

    /// Cartesian point at arclength s, offset d along the left normal of the
    /// containing segment.
    pub fn from_frenet(&self, state: FrenetState) -> Point {
        let (idx, t) = self.locate(state.s);
        let a = self.polyline[idx];
        let b = self.polyline[idx + 1];
        let px = a.x + t * (b.x - a.x);
        let py = a.y + t * (b.y - a.y);
        let (tx, ty) = self.tangent(idx);
        // Left normal of (tx, ty) is (-ty, tx).
        Point::new(px - state.d * ty, py + state.d * tx)
    }

    /// Interpolated path point at arclength s.
    pub fn point_at(&self, s: f64) -> Point {
        self.from_frenet(FrenetState { s, d: 0.0 })
    }

    /// Unit tangent direction at arclength s.
    pub fn tangent_at(&self, s: f64) -> (f64, f64) {
        let (idx, _) = self.locate(s);
        self.tangent(idx)
    }
}
