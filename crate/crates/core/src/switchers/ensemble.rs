//! Ensemble-disagreement detector: five end-to-end models differing only in
//! seed; the spread of their final predicted positions scores how far the
//! input is from the training distribution.

use crate::e2e::{train, E2EConfig, E2EModel};
use crate::error::{Error, Result};
use crate::scenario::experiment::derive_seed;
use crate::types::{Dataset, Scene};

use super::{decide, SwitchDecision, SwitchDirection};

pub const ENSEMBLE_SIZE: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub members: Vec<E2EModel>,
}

/// Worker cap for parallel sections, from HYBRID_PREDICT_THREADS when set.
pub fn worker_cap() -> usize {
    std::env::var("HYBRID_PREDICT_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

/// Train the five members with seeds derived from the base config's seed.
/// Members train in parallel (capped by HYBRID_PREDICT_THREADS); results
/// are ordered by member index, so parallelism never changes the output.
pub fn train_ensemble(data: &Dataset, base: &E2EConfig) -> Result<Ensemble> {
    let configs: Vec<E2EConfig> = (0..ENSEMBLE_SIZE)
        .map(|i| E2EConfig {
            seed: derive_seed(base.seed, 0xe5 + i as u64),
            ..base.clone()
        })
        .collect();
    let cap = worker_cap().max(1);
    let mut members: Vec<Option<Result<E2EModel>>> = (0..ENSEMBLE_SIZE).map(|_| None).collect();
    for chunk in (0..ENSEMBLE_SIZE).collect::<Vec<_>>().chunks(cap) {
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&i| {
                    let config = &configs[i];
                    (i, scope.spawn(move || train(data, config)))
                })
                .collect();
            for (i, h) in handles {
                members[i] = Some(h.join().expect("ensemble member thread panicked"));
            }
        });
    }
    let members: Result<Vec<E2EModel>> = members.into_iter().map(|m| m.unwrap()).collect();
    Ok(Ensemble { members: members? })
}

/// Population variance of final x and y across members; the score is the max.
pub fn disagreement_from_finals(xs: &[f64], ys: &[f64]) -> f64 {
    let var = |vals: &[f64]| {
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
    };
    var(xs).max(var(ys))
}

pub fn ensemble_disagreement(ensemble: &Ensemble, scene: &Scene) -> Result<f64> {
    if ensemble.members.len() != ENSEMBLE_SIZE {
        return Err(Error::invalid(
            "ensemble",
            format!("{} members, need {ENSEMBLE_SIZE}", ensemble.members.len()),
        ));
    }
    let mut xs = Vec::with_capacity(ENSEMBLE_SIZE);
    let mut ys = Vec::with_capacity(ENSEMBLE_SIZE);
    for m in &ensemble.members {
        let traj = m.predict(scene)?.most_probable();
        let f = traj.final_position()?;
        xs.push(f.x);
        ys.push(f.y);
    }
    Ok(disagreement_from_finals(&xs, &ys))
}

/// Switch when the disagreement is at least tau.
pub fn ensemble_switch(ensemble: &Ensemble, scene: &Scene, tau: f64) -> Result<SwitchDecision> {
    let score = ensemble_disagreement(ensemble, scene)?;
    Ok(SwitchDecision {
        score,
        decision: decide(score, tau, SwitchDirection::AboveOrEqual),
        threshold_used: tau,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Trajectory, DT};

    #[test]
    fn variance_hand_case() {
        // x finals [0,0,0,0,10]: mean 2, E[(x-2)^2] = (4*4 + 64)/5 = 16.
        let score = disagreement_from_finals(&[0.0, 0.0, 0.0, 0.0, 10.0], &[1.0; 5]);
        assert_eq!(score, 16.0);
    }

    #[test]
    fn identical_members_zero_disagreement() {
        let model = E2EModel::init(&E2EConfig {
            hidden_size: 4,
            ..E2EConfig::default()
        })
        .unwrap();
        let ens = Ensemble {
            members: vec![model; ENSEMBLE_SIZE],
        };
        let scene = Scene {
            target_history: Trajectory::from_xy(
                &(0..10).map(|i| (i as f64 * 0.5, 0.0)).collect::<Vec<_>>(),
                DT,
            ),
            neighbor_histories: vec![],
            reference_path: 0,
            map_id: "m".into(),
            stop_signs: vec![],
            speed_limit: 8.0,
        };
        assert_eq!(ensemble_disagreement(&ens, &scene).unwrap(), 0.0);
    }

    #[test]
    fn member_order_is_irrelevant() {
        let mk = |seed| {
            E2EModel::init(&E2EConfig {
                hidden_size: 4,
                seed,
                ..E2EConfig::default()
            })
            .unwrap()
        };
        let members: Vec<E2EModel> = (0..5).map(|i| mk(i)).collect();
        let scene = Scene {
            target_history: Trajectory::from_xy(
                &(0..10).map(|i| (i as f64 * 0.5, 0.2)).collect::<Vec<_>>(),
                DT,
            ),
            neighbor_histories: vec![],
            reference_path: 0,
            map_id: "m".into(),
            stop_signs: vec![],
            speed_limit: 8.0,
        };
        let a = ensemble_disagreement(
            &Ensemble {
                members: members.clone(),
            },
            &scene,
        )
        .unwrap();
        let mut rev = members;
        rev.reverse();
        let b = ensemble_disagreement(&Ensemble { members: rev }, &scene).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn wrong_member_count_is_error() {
        let model = E2EModel::init(&E2EConfig {
            hidden_size: 4,
            ..E2EConfig::default()
        })
        .unwrap();
        let ens = Ensemble {
            members: vec![model; 3],
        };
        let scene = Scene {
            target_history: Trajectory::from_xy(&[(0.0, 0.0); 10], DT),
            neighbor_histories: vec![],
            reference_path: 0,
            map_id: "m".into(),
            stop_signs: vec![],
            speed_limit: 8.0,
        };
        assert!(ensemble_disagreement(&ens, &scene).is_err());
    }

    #[test]
    fn switch_rule_direction() {
        let d = SwitchDecision {
            score: 2.0,
            decision: decide(2.0, 1.0, SwitchDirection::AboveOrEqual),
            threshold_used: 1.0,
        };
        assert_eq!(d.decision, 1);
        assert_eq!(decide(0.5, 1.0, SwitchDirection::AboveOrEqual), 0);
    }
}
