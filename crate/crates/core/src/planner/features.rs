//! The six cost features evaluated on (candidate or demonstrated)
//! trajectories: speed keeping, IDM gap tracking, acceleration, jerk,
//! proximity to other agents, and short-term goal pursuit.

use serde::{Deserialize, Serialize};

use crate::frenet::ReferencePath;
use crate::scenario::idm::{idm_desired_gap, IdmParams};
use crate::scenario::sim::CAR_LEN;
use crate::types::{Point, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    pub f_v: f64,
    pub f_idm: f64,
    pub f_acc: f64,
    pub f_jerk: f64,
    pub f_dist: f64,
    pub f_g: f64,
}

impl FeatureVector {
    pub fn to_array(self) -> [f64; 6] {
        [
            self.f_v, self.f_idm, self.f_acc, self.f_jerk, self.f_dist, self.f_g,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        FeatureVector {
            f_v: a[0],
            f_idm: a[1],
            f_acc: a[2],
            f_jerk: a[3],
            f_dist: a[4],
            f_g: a[5],
        }
    }
}

/// Geometry and limits a feature evaluation needs from the scene's world.
#[derive(Debug, Clone, Copy)]
pub struct SceneGeometry<'a> {
    pub path: &'a ReferencePath,
    pub stop_signs: &'a [Point],
    pub speed_limit: f64,
    pub lane_width: f64,
}

/// Sum of squared deviations of a speed profile from the speed limit.
pub fn speed_cost(speeds: &[f64], v_lim: f64) -> f64 {
    speeds.iter().map(|v| (v - v_lim).powi(2)).sum()
}

/// `speed_cost` over the trajectory's finite-difference speed profile.
pub fn feature_speed(traj: &Trajectory, v_lim: f64) -> f64 {
    speed_cost(&traj.speeds(), v_lim)
}

/// Sum of squared deviations of the actual headway (Frenet delta-s minus a
/// vehicle length) from the IDM-desired gap. Zero without a leader.
pub fn feature_idm(
    traj: &Trajectory,
    leader: Option<&Trajectory>,
    idm: &IdmParams,
    path: &ReferencePath,
) -> f64 {
    let leader = match leader {
        Some(l) => l,
        None => return 0.0,
    };
    let n = traj.len().min(leader.len());
    let own_speeds = traj.speeds();
    let leader_speeds = leader.speeds();
    let mut sum = 0.0;
    for t in 0..n {
        let own_s = path.to_frenet(traj.points[t]).s;
        let lead_s = path.to_frenet(leader.points[t]).s;
        let headway = lead_s - own_s - CAR_LEN;
        let desired = idm_desired_gap(own_speeds[t], own_speeds[t] - leader_speeds[t], idm);
        sum += (headway - desired).powi(2);
    }
    sum
}

/// (sum of squared accelerations, sum of squared jerks) for an
/// acceleration profile; jerks are finite differences of it.
pub fn kinematics_cost(accels: &[f64], dt: f64) -> (f64, f64) {
    let f_acc = accels.iter().map(|a| a * a).sum();
    let f_jerk = accels
        .windows(2)
        .map(|w| ((w[1] - w[0]) / dt).powi(2))
        .sum();
    (f_acc, f_jerk)
}

/// `kinematics_cost` over accelerations obtained by second finite
/// differences of the trajectory's speed profile.
pub fn feature_kinematics(traj: &Trajectory) -> (f64, f64) {
    let n = traj.len();
    if n < 3 {
        return (0.0, 0.0);
    }
    let speeds: Vec<f64> = traj
        .points
        .windows(2)
        .map(|w| w[0].distance(&w[1]) / traj.dt)
        .collect();
    let accels: Vec<f64> = speeds.windows(2).map(|w| (w[1] - w[0]) / traj.dt).collect();
    kinematics_cost(&accels, traj.dt)
}

/// Gaussian-bump proximity to other agents, evaluated in Frenet coordinates
/// of the target's path (x = s with scale l, y = d with scale w).
pub fn feature_distance(
    traj: &Trajectory,
    others: &[&Trajectory],
    l: f64,
    w: f64,
    path: &ReferencePath,
) -> f64 {
    let mut sum = 0.0;
    for t in 0..traj.len() {
        let own = path.to_frenet(traj.points[t]);
        for other in others {
            if t >= other.len() {
                continue;
            }
            let of = path.to_frenet(other.points[t]);
            let ds = own.s - of.s;
            let dd = own.d - of.d;
            sum += (-(ds * ds) / (l * l) - (dd * dd) / (w * w)).exp();
        }
    }
    sum
}

/// Per-step short-term goals: positions reached by traveling at the speed
/// limit from `s_start`, unless a stop sign lies within that horizon, in
/// which case the sign itself becomes the goal for every step.
pub fn goal_points(geometry: &SceneGeometry<'_>, s_start: f64, steps: usize, dt: f64) -> Vec<Point> {
    let horizon_end = s_start + geometry.speed_limit * dt * steps as f64;
    let half = geometry.lane_width / 2.0 + 0.5;
    let mut sign_goal: Option<(f64, Point)> = None;
    for sign in geometry.stop_signs {
        let f = geometry.path.to_frenet(*sign);
        if f.d.abs() <= half && f.s > s_start && f.s <= horizon_end {
            match sign_goal {
                Some((s, _)) if s <= f.s => {}
                _ => sign_goal = Some((f.s, *sign)),
            }
        }
    }
    if let Some((_, sign)) = sign_goal {
        return vec![sign; steps];
    }
    (0..steps)
        .map(|t| {
            let s = s_start + geometry.speed_limit * dt * (t + 1) as f64;
            geometry.path.point_at(s.min(geometry.path.total_length()))
        })
        .collect()
}

/// Sum of squared distances between trajectory points and the goal points.
pub fn feature_goal(traj: &Trajectory, goals: &[Point]) -> f64 {
    traj.points
        .iter()
        .zip(goals)
        .map(|(p, g)| p.distance(g).powi(2))
        .sum()
}
