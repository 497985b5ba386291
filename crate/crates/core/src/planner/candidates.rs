//! Candidate future generation: piecewise-constant longitudinal
//! acceleration profiles rolled out along the reference path, with the
//! current lateral offset decayed back to the lane center.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frenet::{FrenetState, ReferencePath};
use crate::types::{Scene, Trajectory};
#[cfg(test)]
use crate::types::LABEL_LEN;

/// Upper bound on the candidate set size, demo excluded.
pub const MAX_CANDIDATES: usize = 343;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CandidateFamily {
    /// Longitudinal accelerations available per phase, in m/s^2.
    pub accel_grid: Vec<f64>,
    /// Number of equal-length phases the horizon is divided into.
    pub phases: usize,
    /// Steps over which the initial lateral offset decays linearly to zero.
    pub lateral_decay_steps: usize,
}

impl Default for CandidateFamily {
    fn default() -> Self {
        CandidateFamily {
            accel_grid: vec![-2.0, -1.0, 0.0, 1.0, 2.0],
            phases: 3,
            lateral_decay_steps: 10,
        }
    }
}

impl CandidateFamily {
    pub fn count(&self) -> usize {
        self.accel_grid.len().pow(self.phases as u32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.accel_grid.is_empty() || self.phases == 0 {
            return Err(Error::invalid(
                "candidate family",
                "accel grid and phase count must be nonempty",
            ));
        }
        if self.count() > MAX_CANDIDATES {
            return Err(Error::invalid(
                "candidate family",
                format!("{} candidates exceed the cap of {MAX_CANDIDATES}", self.count()),
            ));
        }
        Ok(())
    }
}

/// Estimate current speed as the mean step speed over the whole history.
/// Averaging the full window keeps the estimate stable under per-point
/// measurement noise (adjacent step errors largely telescope away), at the
/// cost of lagging a hard acceleration by a fraction of the window.
pub fn estimate_speed(history: &Trajectory) -> f64 {
    let n = history.len();
    if n < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    for i in 0..(n - 1) {
        sum += history.points[i].distance(&history.points[i + 1]) / history.dt;
    }
    sum / (n - 1) as f64
}

/// Roll out every acceleration profile in the family from the end of the
/// scene's history, producing `count()` trajectories of `horizon` steps.
/// Profiles are enumerated in lexicographic grid order, so the output order
/// is deterministic.
pub fn sample_candidates(
    scene: &Scene,
    path: &ReferencePath,
    family: &CandidateFamily,
    horizon: usize,
) -> Result<Vec<Trajectory>> {
    family.validate()?;
    let start = scene.target_history.final_position()?;
    let f0 = path.to_frenet(start);
    let v0 = estimate_speed(&scene.target_history);
    let dt = scene.target_history.dt;
    let phase_len = horizon.div_ceil(family.phases);

    let k = family.accel_grid.len();
    let mut out = Vec::with_capacity(family.count());
    for combo in 0..family.count() {
        let mut accels = Vec::with_capacity(family.phases);
        let mut rem = combo;
        for _ in 0..family.phases {
            accels.push(family.accel_grid[rem % k]);
            rem /= k;
        }
        accels.reverse();

        let mut v = v0;
        let mut s = f0.s;
        let mut points = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let a = accels[(t / phase_len).min(family.phases - 1)];
            v = (v + a * dt).max(0.0);
            s += v * dt;
            let decay = if family.lateral_decay_steps == 0 {
                0.0
            } else {
                (1.0 - (t + 1) as f64 / family.lateral_decay_steps as f64).max(0.0)
            };
            points.push(path.from_frenet(FrenetState {
                s: s.min(path.total_length()),
                d: f0.d * decay,
            }));
        }
        out.push(Trajectory::new(points, dt));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Point, DT};

    fn straight_path() -> ReferencePath {
        ReferencePath::new(
            (0..=400)
                .map(|i| Point::new(i as f64 * 0.5, 0.0))
                .collect(),
        )
    }

    fn scene_on_path(d0: f64, speed: f64) -> Scene {
        let pts: Vec<(f64, f64)> = (0..10)
            .map(|i| (10.0 - (9 - i) as f64 * speed * DT, d0))
            .collect();
        Scene {
            target_history: Trajectory::from_xy(&pts, DT),
            neighbor_histories: vec![],
            reference_path: 0,
            map_id: "m".into(),
            stop_signs: vec![],
            speed_limit: 8.0,
        }
    }

    #[test]
    fn single_zero_accel_is_constant_speed() {
        let path = straight_path();
        let family = CandidateFamily {
            accel_grid: vec![0.0],
            phases: 1,
            lateral_decay_steps: 10,
        };
        let c = sample_candidates(&scene_on_path(0.0, 5.0), &path, &family, LABEL_LEN).unwrap();
        assert_eq!(c.len(), 1);
        let speeds = c[0].speeds();
        for v in speeds {
            assert!((v - 5.0).abs() < 1e-9);
        }
    }

    #[test]
    fn grid_enumeration_count() {
        let path = straight_path();
        let family = CandidateFamily {
            accel_grid: vec![-2.0, 0.0, 2.0],
            phases: 3,
            lateral_decay_steps: 10,
        };
        let c = sample_candidates(&scene_on_path(0.0, 5.0), &path, &family, LABEL_LEN).unwrap();
        assert_eq!(c.len(), 27);
        let def = CandidateFamily::default();
        assert_eq!(def.count(), 125);
    }

    #[test]
    fn candidate_cap_enforced() {
        let family = CandidateFamily {
            accel_grid: vec![0.0; 8],
            phases: 3,
            lateral_decay_steps: 10,
        };
        assert!(family.validate().is_err());
    }

    #[test]
    fn speed_never_negative() {
        let path = straight_path();
        let family = CandidateFamily::default();
        let c = sample_candidates(&scene_on_path(0.0, 1.0), &path, &family, LABEL_LEN).unwrap();
        for traj in &c {
            let mut prev = path.to_frenet(traj.points[0]).s;
            for p in &traj.points[1..] {
                let s = path.to_frenet(*p).s;
                assert!(s >= prev - 1e-9, "arclength went backwards");
                prev = s;
            }
        }
    }

    #[test]
    fn lateral_offset_decays_monotonically() {
        let path = straight_path();
        let family = CandidateFamily {
            accel_grid: vec![0.0],
            phases: 1,
            lateral_decay_steps: 10,
        };
        let c = sample_candidates(&scene_on_path(1.2, 5.0), &path, &family, LABEL_LEN).unwrap();
        let ds: Vec<f64> = c[0]
            .points
            .iter()
            .map(|p| path.to_frenet(*p).d.abs())
            .collect();
        for w in ds.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
        // Fully recentered after the decay window.
        assert!(ds[10] < 1e-9);
        assert!(ds[29] < 1e-9);
    }

    #[test]
    fn deterministic_order() {
        let path = straight_path();
        let family = CandidateFamily::default();
        let scene = scene_on_path(0.5, 4.0);
        let a = sample_candidates(&scene, &path, &family, LABEL_LEN).unwrap();
        let b = sample_candidates(&scene, &path, &family, LABEL_LEN).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn estimate_speed_mean_over_window() {
        let t = Trajectory::from_xy(
            &[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.1, 0.0), (4.3, 0.0)],
            DT,
        );
        // Step speeds: 10, 10, 11, 12 -> mean 10.75.
        assert!((estimate_speed(&t) - 10.75).abs() < 1e-9);
        assert_eq!(estimate_speed(&Trajectory::from_xy(&[(0.0, 0.0)], DT)), 0.0);
    }
}
