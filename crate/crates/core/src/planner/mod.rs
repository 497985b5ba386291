//! The planning-based predictor: candidate futures along the reference
//! path scored by a learned six-feature cost, plus an iterative scheme that
//! predicts surrounding agents before the target.

pub mod candidates;
pub mod features;
pub mod irl;

pub use candidates::{estimate_speed, sample_candidates, CandidateFamily, MAX_CANDIDATES};
pub use features::{
    feature_distance, feature_goal, feature_idm, feature_kinematics, feature_speed, goal_points,
    kinematics_cost, speed_cost, FeatureVector, SceneGeometry,
};
pub use irl::{irl_loss, irl_train, irl_train_features, CostWeights, IrlConfig, IrlResult, SegmentFeatures};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frenet::{FrenetState, ReferencePath};
use crate::scenario::idm::{idm_acceleration, IdmParams};
use crate::scenario::map::World;
use crate::scenario::sim::CAR_LEN;
use crate::types::{Point, Scene, Segment, Trajectory, LABEL_LEN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanConfig {
    pub family: CandidateFamily,
    pub idm: IdmParams,
    /// Longitudinal scale of the proximity feature, meters.
    pub l: f64,
    /// Lateral scale of the proximity feature, meters.
    pub w: f64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            family: CandidateFamily::default(),
            idm: IdmParams::with_desired_speed(8.0),
            l: 4.0,
            w: 1.8,
        }
    }
}

fn reference_path<'a>(scene: &Scene, world: &'a World) -> Result<&'a ReferencePath> {
    world.paths.get(scene.reference_path).ok_or_else(|| {
        Error::invalid(
            "scene",
            format!(
                "reference path {} not in map {}",
                scene.reference_path, scene.map_id
            ),
        )
    })
}

/// Half-width of the corridor used to decide whether an agent is on the
/// reference path.
fn corridor_half(world: &World) -> f64 {
    world.lane_width() / 2.0 + 0.5
}

/// Evaluate all six features for a proposed future of the scene's target,
/// conditioned on predicted trajectories of the other agents.
pub fn compute_features(
    scene: &Scene,
    world: &World,
    config: &PlanConfig,
    traj: &Trajectory,
    others: &[&Trajectory],
) -> Result<FeatureVector> {
    let path = reference_path(scene, world)?;
    let start = scene.target_history.final_position()?;
    let s0 = path.to_frenet(start).s;

    // Speed and kinematics look at the transition from the current position
    // into the future, so prepend it.
    let mut extended_points = Vec::with_capacity(traj.len() + 1);
    extended_points.push(start);
    extended_points.extend_from_slice(&traj.points);
    let extended = Trajectory::new(extended_points, traj.dt);

    let f_v = feature_speed(&extended, scene.speed_limit);
    let (f_acc, f_jerk) = feature_kinematics(&extended);

    // Leader: nearest other agent ahead in the path corridor at the start.
    let half = corridor_half(world);
    let mut leader: Option<(f64, &Trajectory)> = None;
    for other in others {
        if other.is_empty() {
            continue;
        }
        let f = path.to_frenet(other.points[0]);
        let ds = f.s - s0;
        if f.d.abs() <= half && ds > 0.0 {
            match leader {
                Some((best, _)) if best <= ds => {}
                _ => leader = Some((ds, other)),
            }
        }
    }
    let f_idm = feature_idm(traj, leader.map(|(_, t)| t), &config.idm, path);
    let f_dist = feature_distance(traj, others, config.l, config.w, path);

    let geometry = SceneGeometry {
        path,
        stop_signs: &scene.stop_signs,
        speed_limit: scene.speed_limit,
        lane_width: world.lane_width(),
    };
    let goals = goal_points(&geometry, s0, traj.len(), traj.dt);
    let f_g = feature_goal(traj, &goals);

    Ok(FeatureVector {
        f_v,
        f_idm,
        f_acc,
        f_jerk,
        f_dist,
        f_g,
    })
}

/// Constant-speed straight-line extrapolation from the end of a history.
/// Heading comes from the whole window (first to last point) so per-point
/// measurement noise cannot swing the extrapolated direction; the last step
/// alone is used only when the window barely moved.
pub fn constant_speed_extrapolation(history: &Trajectory, horizon: usize) -> Result<Trajectory> {
    let last = history.final_position()?;
    let n = history.len();
    let (dir_x, dir_y) = if n >= 2 {
        let first = history.points[0];
        let prev = history.points[n - 2];
        let (anchor, len) = if first.distance(&last) > 1e-12 {
            (first, first.distance(&last))
        } else {
            (prev, prev.distance(&last))
        };
        if len > 1e-12 {
            ((last.x - anchor.x) / len, (last.y - anchor.y) / len)
        } else {
            (0.0, 0.0)
        }
    } else {
        (0.0, 0.0)
    };
    let v = estimate_speed(history);
    let step = v * history.dt;
    let points = (1..=horizon)
        .map(|i| Point::new(last.x + dir_x * step * i as f64, last.y + dir_y * step * i as f64))
        .collect();
    Ok(Trajectory::new(points, history.dt))
}

/// Pick the candidate future with minimal cost; ties break to the lower
/// candidate index.
pub fn predict_plan(
    scene: &Scene,
    world: &World,
    weights: &CostWeights,
    config: &PlanConfig,
    others_pred: &[Trajectory],
) -> Result<Trajectory> {
    let path = reference_path(scene, world)?;
    let candidates = sample_candidates(scene, path, &config.family, LABEL_LEN)?;
    let others: Vec<&Trajectory> = others_pred.iter().collect();
    let mut best: Option<(f64, usize)> = None;
    for (i, cand) in candidates.iter().enumerate() {
        let f = compute_features(scene, world, config, cand, &others)?;
        let c = weights.cost(f.to_array());
        match best {
            Some((bc, _)) if bc <= c => {}
            _ => best = Some((c, i)),
        }
    }
    let (_, idx) = best.ok_or_else(|| Error::invalid("candidate family", "no candidates"))?;
    Ok(candidates.into_iter().nth(idx).unwrap())
}

/// Feature matrices of one training segment: the demonstrated label against
/// the sampled candidates, neighbors extrapolated at constant speed.
pub fn segment_features(
    segment: &Segment,
    world: &World,
    config: &PlanConfig,
) -> Result<SegmentFeatures> {
    let scene = &segment.scene;
    let path = reference_path(scene, world)?;
    let horizon = segment.label.len().max(LABEL_LEN);
    let others_owned: Vec<Trajectory> = scene
        .neighbor_histories
        .iter()
        .filter(|h| !h.is_empty())
        .map(|h| constant_speed_extrapolation(h, horizon))
        .collect::<Result<_>>()?;
    let others: Vec<&Trajectory> = others_owned.iter().collect();

    let candidates = sample_candidates(scene, path, &config.family, LABEL_LEN)?;
    let mut cand_features = Vec::with_capacity(candidates.len());
    for cand in &candidates {
        cand_features.push(
            compute_features(scene, world, config, cand, &others)?.to_array(),
        );
    }
    let demo = compute_features(scene, world, config, &segment.label, &others)?.to_array();
    Ok(SegmentFeatures {
        demo,
        candidates: cand_features,
    })
}

#[derive(Debug, Clone)]
pub struct IterativePrediction {
    pub target: Trajectory,
    /// (neighbor index, predicted trajectory) in prediction order, which is
    /// descending distance from the target.
    pub neighbors: Vec<(usize, Trajectory)>,
}

/// Roll a follower forward with IDM behind an already-predicted leader.
fn idm_follow(
    history: &Trajectory,
    leader: &Trajectory,
    path: &ReferencePath,
    config: &PlanConfig,
    speed_limit: f64,
    horizon: usize,
) -> Result<Trajectory> {
    let start = history.final_position()?;
    let f0 = path.to_frenet(start);
    let mut idm = config.idm.clone();
    idm.v0 = speed_limit;
    let mut v = estimate_speed(history);
    let mut s = f0.s;
    let dt = history.dt;
    let leader_speeds = leader.speeds();
    let decay_steps = config.family.lateral_decay_steps;
    let mut points = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let li = t.min(leader.len().saturating_sub(1));
        let lead_s = path.to_frenet(leader.points[li]).s;
        let gap = lead_s - s - CAR_LEN;
        let dv = v - leader_speeds[li];
        let a = idm_acceleration(v, gap, dv, &idm);
        v = (v + a * dt).max(0.0);
        s += v * dt;
        let decay = if decay_steps == 0 {
            0.0
        } else {
            (1.0 - (t + 1) as f64 / decay_steps as f64).max(0.0)
        };
        points.push(path.from_frenet(FrenetState {
            s: s.min(path.total_length()),
            d: f0.d * decay,
        }));
    }
    Ok(Trajectory::new(points, dt))
}

/// Predict neighbors far-to-near, then the target, each conditioning on all
/// predictions made so far. The farthest neighbor keeps its current speed;
/// a neighbor in the path corridor behind an already-predicted corridor
/// agent follows IDM; other corridor neighbors plan; neighbors off the
/// corridor extrapolate at constant speed.
pub fn predict_iterative(
    scene: &Scene,
    world: &World,
    weights: &CostWeights,
    config: &PlanConfig,
    radius: f64,
) -> Result<IterativePrediction> {
    let path = reference_path(scene, world)?;
    let target_pos = scene.target_history.final_position()?;
    let half = corridor_half(world);

    let mut order: Vec<(usize, f64)> = Vec::new();
    for (i, h) in scene.neighbor_histories.iter().enumerate() {
        if let Ok(p) = h.final_position() {
            let dist = p.distance(&target_pos);
            if dist <= radius {
                order.push((i, dist));
            }
        }
    }
    order.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));

    let mut predicted: Vec<(usize, Trajectory)> = Vec::with_capacity(order.len());
    for (rank, &(idx, _)) in order.iter().enumerate() {
        let history = &scene.neighbor_histories[idx];
        let pred = if rank == 0 {
            constant_speed_extrapolation(history, LABEL_LEN)?
        } else {
            let pos = history.final_position()?;
            let f = path.to_frenet(pos);
            let in_corridor = f.d.abs() <= half;
            let leader = if in_corridor {
                predicted
                    .iter()
                    .filter_map(|(_, t)| {
                        let lf = path.to_frenet(t.points[0]);
                        let ds = lf.s - f.s;
                        (lf.d.abs() <= half && ds > 0.0).then_some((ds, t))
                    })
                    .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
                    .map(|(_, t)| t)
            } else {
                None
            };
            if let Some(leader) = leader {
                idm_follow(history, leader, path, config, scene.speed_limit, LABEL_LEN)?
            } else if in_corridor {
                let pseudo = Scene {
                    target_history: history.clone(),
                    neighbor_histories: vec![],
                    reference_path: scene.reference_path,
                    map_id: scene.map_id.clone(),
                    stop_signs: scene.stop_signs.clone(),
                    speed_limit: scene.speed_limit,
                };
                let others: Vec<Trajectory> =
                    predicted.iter().map(|(_, t)| t.clone()).collect();
                predict_plan(&pseudo, world, weights, config, &others)?
            } else {
                constant_speed_extrapolation(history, LABEL_LEN)?
            }
        };
        predicted.push((idx, pred));
    }

    let others: Vec<Trajectory> = predicted.iter().map(|(_, t)| t.clone()).collect();
    let target = predict_plan(scene, world, weights, config, &others)?;
    Ok(IterativePrediction {
        target,
        neighbors: predicted,
    })
}
