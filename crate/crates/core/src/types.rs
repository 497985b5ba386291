//! Domain types shared by every other module: trajectories, scenes,
//! segments, Gaussian predictions, datasets, and the ADE metric.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sampling interval used throughout: 100 ms per step.
pub const DT: f64 = 0.1;
/// Steps of observed history per scene.
pub const HISTORY_LEN: usize = 10;
/// Steps of future label per segment.
pub const LABEL_LEN: usize = 30;
/// Lower bound enforced on every predicted standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Timestamped 2-D position sequence with a fixed sampling interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<Point>,
    pub dt: f64,
}

impl Trajectory {
    pub fn new(points: Vec<Point>, dt: f64) -> Self {
        debug_assert!(dt > 0.0);
        debug_assert!(points.iter().all(|p| p.x.is_finite() && p.y.is_finite()));
        Trajectory { points, dt }
    }

    pub fn from_xy(xy: &[(f64, f64)], dt: f64) -> Self {
        Trajectory::new(xy.iter().map(|&(x, y)| Point::new(x, y)).collect(), dt)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Last point of the trajectory.
    pub fn final_position(&self) -> Result<Point> {
        self.points.last().copied().ok_or(Error::EmptyTrajectory)
    }

    /// Translate every point by (dx, dy).
    pub fn translated(&self, dx: f64, dy: f64) -> Trajectory {
        Trajectory {
            points: self
                .points
                .iter()
                .map(|p| Point::new(p.x + dx, p.y + dy))
                .collect(),
            dt: self.dt,
        }
    }

    /// Per-step speeds by forward finite difference; the last step reuses the
    /// previous speed so the result has the same length as the trajectory.
    pub fn speeds(&self) -> Vec<f64> {
        let n = self.len();
        if n < 2 {
            return vec![0.0; n];
        }
        let mut v: Vec<f64> = self
            .points
            .windows(2)
            .map(|w| w[0].distance(&w[1]) / self.dt)
            .collect();
        let last = *v.last().unwrap();
        v.push(last);
        v
    }
}

/// Identifier of a reference path inside a generated map.
pub type PathId = usize;

/// One prediction problem: the target agent's observed history plus context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub target_history: Trajectory,
    pub neighbor_histories: Vec<Trajectory>,
    pub reference_path: PathId,
    pub map_id: String,
    /// Stop sign positions in world coordinates (meters).
    pub stop_signs: Vec<Point>,
    pub speed_limit: f64,
}

/// A scene paired with its ground-truth future.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub scene: Scene,
    pub label: Trajectory,
    /// Set when test-time noise was injected into the histories.
    #[serde(default)]
    pub noisy: bool,
}

/// Per-step Gaussian over position: the probabilistic output of the
/// end-to-end predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianStep {
    pub mu_x: f64,
    pub mu_y: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianTrajectory {
    pub steps: Vec<GaussianStep>,
    pub dt: f64,
}

impl GaussianTrajectory {
    /// The per-step mean sequence (the mode of independent Gaussians).
    pub fn most_probable(&self) -> Trajectory {
        Trajectory {
            points: self
                .steps
                .iter()
                .map(|s| Point::new(s.mu_x, s.mu_y))
                .collect(),
            dt: self.dt,
        }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> GaussianTrajectory {
        GaussianTrajectory {
            steps: self
                .steps
                .iter()
                .map(|s| GaussianStep {
                    mu_x: s.mu_x + dx,
                    mu_y: s.mu_y + dy,
                    sigma_x: s.sigma_x,
                    sigma_y: s.sigma_y,
                })
                .collect(),
            dt: self.dt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub segments: Vec<Segment>,
    pub split: Split,
    pub provenance: String,
}

impl Dataset {
    pub fn new(segments: Vec<Segment>, split: Split, provenance: impl Into<String>) -> Self {
        Dataset {
            segments,
            split,
            provenance: provenance.into(),
        }
    }
}

/// Slide a (history + label) window along a track. Tracks shorter than one
/// window yield an empty list.
pub fn extract_segments_windows(
    track: &Trajectory,
    history_len: usize,
    label_len: usize,
    stride: usize,
) -> Vec<(Trajectory, Trajectory)> {
    assert!(stride >= 1, "stride must be >= 1");
    let window = history_len + label_len;
    let n = track.len();
    if n < window {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start + window <= n {
        let history = Trajectory {
            points: track.points[start..start + history_len].to_vec(),
            dt: track.dt,
        };
        let label = Trajectory {
            points: track.points[start + history_len..start + window].to_vec(),
            dt: track.dt,
        };
        out.push((history, label));
        start += stride;
    }
    out
}

/// Translate every coordinate in the scene so the target's most recent
/// history position becomes the origin. Idempotent.
pub fn center_on_target(scene: &Scene) -> Scene {
    let c = scene
        .target_history
        .final_position()
        .expect("target history must be nonempty");
    Scene {
        target_history: scene.target_history.translated(-c.x, -c.y),
        neighbor_histories: scene
            .neighbor_histories
            .iter()
            .map(|t| t.translated(-c.x, -c.y))
            .collect(),
        reference_path: scene.reference_path,
        map_id: scene.map_id.clone(),
        stop_signs: scene
            .stop_signs
            .iter()
            .map(|p| Point::new(p.x - c.x, p.y - c.y))
            .collect(),
        speed_limit: scene.speed_limit,
    }
}

/// Average distance error: mean Euclidean distance between corresponding
/// points.
pub fn ade(predicted: &Trajectory, truth: &Trajectory) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: truth.len(),
        });
    }
    if predicted.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let sum: f64 = predicted
        .points
        .iter()
        .zip(&truth.points)
        .map(|(a, b)| a.distance(b))
        .sum();
    Ok(sum / predicted.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(xy: &[(f64, f64)]) -> Trajectory {
        Trajectory::from_xy(xy, DT)
    }

    #[test]
    fn extract_exact_fit() {
        let t = traj(&(0..40).map(|i| (i as f64, 0.0)).collect::<Vec<_>>());
        let segs = extract_segments_windows(&t, 10, 30, 40);
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].0.len(), 10);
        assert_eq!(segs[0].1.len(), 30);
    }

    #[test]
    fn extract_too_short() {
        let t = traj(&(0..39).map(|i| (i as f64, 0.0)).collect::<Vec<_>>());
        assert!(extract_segments_windows(&t, 10, 30, 1).is_empty());
    }

    #[test]
    fn extract_strided_offsets() {
        // 50 points, stride 5: windows at offsets 0, 5, 10.
        let t = traj(&(0..50).map(|i| (i as f64, 0.0)).collect::<Vec<_>>());
        let segs = extract_segments_windows(&t, 10, 30, 5);
        assert_eq!(segs.len(), 3);
        for (k, seg) in segs.iter().enumerate() {
            assert_eq!(seg.0.points[0].x, (k * 5) as f64);
        }
    }

    #[test]
    fn extract_count_formula() {
        for len in 40..120 {
            for stride in [1, 5, 15] {
                let t = traj(&(0..len).map(|i| (i as f64, 0.0)).collect::<Vec<_>>());
                let expected = (len - 40) / stride + 1;
                assert_eq!(extract_segments_windows(&t, 10, 30, stride).len(), expected);
            }
        }
    }

    fn scene_for_center() -> Scene {
        Scene {
            target_history: traj(&[(4.0, 2.0), (5.0, 3.0)]),
            neighbor_histories: vec![traj(&[(6.0, 3.0), (6.0, 3.0)])],
            reference_path: 0,
            map_id: "m".into(),
            stop_signs: vec![Point::new(7.0, 3.0)],
            speed_limit: 8.0,
        }
    }

    #[test]
    fn center_moves_target_to_origin() {
        let c = center_on_target(&scene_for_center());
        let last = c.target_history.final_position().unwrap();
        assert_eq!((last.x, last.y), (0.0, 0.0));
        assert_eq!(c.neighbor_histories[0].points[1].x, 1.0);
        assert_eq!(c.neighbor_histories[0].points[1].y, 0.0);
        assert_eq!(c.stop_signs[0].x, 2.0);
    }

    #[test]
    fn center_is_idempotent() {
        let once = center_on_target(&scene_for_center());
        let twice = center_on_target(&once);
        assert_eq!(once, twice);
    }

    #[test]
    fn ade_identity_and_offset() {
        let a = traj(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]);
        assert_eq!(ade(&a, &a).unwrap(), 0.0);
        let b = a.translated(3.0, 4.0);
        assert!((ade(&a, &b).unwrap() - 5.0).abs() < 1e-12);
        let p = traj(&[(0.0, 0.0)]);
        let q = traj(&[(1.0, 0.0)]);
        assert_eq!(ade(&p, &q).unwrap(), 1.0);
    }

    #[test]
    fn ade_length_mismatch_is_error() {
        let a = traj(&[(0.0, 0.0)]);
        let b = traj(&[(0.0, 0.0), (1.0, 0.0)]);
        assert!(matches!(ade(&a, &b), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn final_position_cases() {
        let a = traj(&[(0.0, 0.0), (1.0, 1.0)]);
        let f = a.final_position().unwrap();
        assert_eq!((f.x, f.y), (1.0, 1.0));
        let single = traj(&[(2.0, 3.0)]);
        let f = single.final_position().unwrap();
        assert_eq!((f.x, f.y), (2.0, 3.0));
        let empty = Trajectory::new(vec![], DT);
        assert!(empty.final_position().is_err());
    }

    #[test]
    fn speeds_finite_difference() {
        // 1 m per 0.1 s step -> 10 m/s, last step repeated.
        let t = traj(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]);
        assert_eq!(t.speeds(), vec![10.0, 10.0, 10.0]);
    }
}
