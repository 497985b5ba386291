//! IDM-driven traffic simulation over a generated map. Agents follow their
//! assigned reference path laterally and IDM longitudinally against the
//! nearest leader sharing their corridor; stop signs act as standing
//! leaders until a one-second dwell elapses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::frenet::FrenetState;
use crate::scenario::idm::{idm_acceleration, IdmParams};
use crate::scenario::map::World;
use crate::types::{PathId, Point, Trajectory, DT};

/// Nominal vehicle length used to convert center distances to bumper gaps.
pub const CAR_LEN: f64 = 4.0;
/// Dwell required at a stop sign before proceeding (steps).
const STOP_DWELL_STEPS: usize = 10;
/// Leaders further ahead than this are ignored.
const LEADER_HORIZON: f64 = 60.0;

#[derive(Debug, Clone)]
pub struct SimAgent {
    pub trajectory: Trajectory,
    pub path_id: PathId,
    /// Effective desired speed after the per-agent +-10% factor.
    pub desired_speed: f64,
}

struct AgentState {
    path_id: PathId,
    s: f64,
    d: f64,
    v: f64,
    desired_speed: f64,
    done: bool,
    /// Remaining unpassed stop signs as arclengths along this agent's path.
    pending_signs: Vec<f64>,
    dwell: usize,
    points: Vec<Point>,
    rng: ChaCha8Rng,
}

/// Arclengths of stop signs lying on the given path's corridor.
fn signs_on_path(world: &World, path_id: PathId) -> Vec<f64> {
    let path = &world.paths[path_id];
    let half = world.lane_width() / 2.0 + 0.5;
    let mut out: Vec<f64> = world
        .stop_signs
        .iter()
        .filter_map(|sign| {
            let f = path.to_frenet(*sign);
            // Exclude signs projected onto the path ends (off-corridor signs
            // clamp there).
            if f.d.abs() <= half && f.s > 0.5 && f.s < path.total_length() - 0.5 {
                Some(f.s)
            } else {
                None
            }
        })
        .collect();
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out
}

/// Deterministic multi-agent rollout. Agents are dropped from the rollout
/// once they reach the end of their path; their trajectories cover the
/// steps they were active.
pub fn simulate_tracks(
    world: &World,
    n_agents: usize,
    duration_steps: usize,
    idm: &IdmParams,
    seed: u64,
) -> Vec<SimAgent> {
    assert!(n_agents >= 1);
    let mut seeder = ChaCha8Rng::seed_from_u64(seed);
    let mut agents: Vec<AgentState> = (0..n_agents)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seeder.gen());
            let path_id = rng.gen_range(0..world.paths.len());
            let path = &world.paths[path_id];
            let factor = rng.gen_range(0.9..1.1);
            let desired_speed = idm.v0.min(world.speed_limit()) * factor;
            let start_span = (path.total_length() * 0.3).min(30.0);
            let s = rng.gen_range(0.0..start_span) + i as f64 * 2.0;
            let d = rng.gen_range(-0.4..0.4);
            let v = rng.gen_range(0.3..0.8) * desired_speed;
            AgentState {
                path_id,
                s,
                d,
                v,
                desired_speed,
                done: false,
                pending_signs: Vec::new(),
                dwell: 0,
                points: Vec::with_capacity(duration_steps),
                rng,
            }
        })
        .collect();

    // Enforce a collision-free start: within each path, push followers back
    // until bumper gaps are at least s0 + 2 m.
    for pid in 0..world.paths.len() {
        let mut idxs: Vec<usize> = (0..agents.len())
            .filter(|&i| agents[i].path_id == pid)
            .collect();
        idxs.sort_by(|&a, &b| agents[b].s.partial_cmp(&agents[a].s).unwrap());
        for w in 0..idxs.len().saturating_sub(1) {
            let lead_s = agents[idxs[w]].s;
            let min_gap = CAR_LEN + idm.s0 + 2.0;
            let follower = idxs[w + 1];
            if agents[follower].s > lead_s - min_gap {
                agents[follower].s = lead_s - min_gap;
            }
        }
        // Keep everyone on the path: shift the whole platoon forward if the
        // separation fix pushed anyone before the start.
        if let Some(&last) = idxs.last() {
            let min_s = agents[last].s;
            if min_s < 0.0 {
                for &i in &idxs {
                    agents[i].s -= min_s;
                }
            }
        }
    }
    for a in agents.iter_mut() {
        a.pending_signs = signs_on_path(world, a.path_id)
            .into_iter()
            .filter(|&sign_s| sign_s > a.s + 1.0)
            .collect();
    }

    for _ in 0..duration_steps {
        // Record current positions, then advance in index order.
        let positions: Vec<Option<(Point, f64)>> = agents
            .iter()
            .map(|a| {
                if a.done {
                    None
                } else {
                    let p = world.paths[a.path_id].from_frenet(FrenetState { s: a.s, d: a.d });
                    Some((p, a.v))
                }
            })
            .collect();
        for (i, pos) in positions.iter().enumerate() {
            if let Some((p, _)) = pos {
                agents[i].points.push(*p);
            }
        }

        for i in 0..agents.len() {
            if agents[i].done {
                continue;
            }
            let path = &world.paths[agents[i].path_id];
            let half = world.lane_width() / 2.0 + 0.5;
            // Most restrictive constraint wins: nearest projected leader on
            // this agent's corridor, plus any pending stop sign.
            let mut accel = {
                let mut p = *idm;
                p.v0 = agents[i].desired_speed;
                idm_acceleration(agents[i].v, f64::INFINITY, 0.0, &p)
            };
            let mut p_idm = *idm;
            p_idm.v0 = agents[i].desired_speed;
            for (j, pos) in positions.iter().enumerate() {
                if j == i {
                    continue;
                }
                if let Some((pj, vj)) = pos {
                    let f = path.to_frenet(*pj);
                    if f.d.abs() > half {
                        continue;
                    }
                    let ds = f.s - agents[i].s;
                    if ds <= 0.0 || ds > LEADER_HORIZON {
                        continue;
                    }
                    let gap = ds - CAR_LEN;
                    let a = idm_acceleration(agents[i].v, gap, agents[i].v - vj, &p_idm);
                    accel = accel.min(a);
                }
            }
            // Stop signs: standing leader until the dwell elapses.
            if let Some(&sign_s) = agents[i].pending_signs.first() {
                let ds = sign_s - agents[i].s;
                if ds <= LEADER_HORIZON {
                    let gap = ds - CAR_LEN / 2.0;
                    let a = idm_acceleration(agents[i].v, gap, agents[i].v, &p_idm);
                    accel = accel.min(a);
                    if agents[i].v < 0.15 && ds < CAR_LEN / 2.0 + 2.0 {
                        agents[i].dwell += 1;
                        if agents[i].dwell >= STOP_DWELL_STEPS {
                            agents[i].pending_signs.remove(0);
                            agents[i].dwell = 0;
                        }
                    }
                }
            }

            let a = &mut agents[i];
            a.v = (a.v + accel * DT).max(0.0);
            a.s += a.v * DT;
            let jitter: f64 = a.rng.gen_range(-0.03..0.03);
            a.d = (a.d * 0.97 + jitter).clamp(
                -(world.lane_width() / 2.0 - 0.2),
                world.lane_width() / 2.0 - 0.2,
            );
            if a.s >= path.total_length() {
                a.done = true;
            }
        }
    }

    agents
        .into_iter()
        .map(|a| SimAgent {
            trajectory: Trajectory::new(a.points, DT),
            path_id: a.path_id,
            desired_speed: a.desired_speed,
        })
        .collect()
}
