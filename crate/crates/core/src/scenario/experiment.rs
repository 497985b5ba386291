//! Experiment split construction: the three distribution-shift protocols
//! (held-out exit, new maps, test-time noise) built from simulated traffic.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::idm::IdmParams;
use crate::scenario::map::{generate_map, MapSpec, World};
use crate::scenario::sim::{simulate_tracks, SimAgent};
use crate::types::{
    extract_segments_windows, Dataset, Scene, Segment, Split, Trajectory, HISTORY_LEN, LABEL_LEN,
};

/// Additive Gaussian perturbation applied per coordinate of test-time
/// histories.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub mu: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            mu: 0.5,
            sigma: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExperimentId {
    I,
    II,
    III,
}

impl std::str::FromStr for ExperimentId {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "I" | "i" | "1" => Ok(ExperimentId::I),
            "II" | "ii" | "2" => Ok(ExperimentId::II),
            "III" | "iii" | "3" => Ok(ExperimentId::III),
            other => Err(format!("unknown experiment id '{other}' (expected I, II, or III)")),
        }
    }
}

impl std::fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExperimentId::I => write!(f, "I"),
            ExperimentId::II => write!(f, "II"),
            ExperimentId::III => write!(f, "III"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for ExperimentCounts {
    fn default() -> Self {
        ExperimentCounts {
            train: 2000,
            val: 400,
            test: 800,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub id: ExperimentId,
    pub train_maps: Vec<MapSpec>,
    pub test_maps: Vec<MapSpec>,
    /// Experiment I: keep only train/val trajectories exiting here.
    pub train_exit_filter: Option<usize>,
    /// Experiment III: noise injected into test histories.
    pub noise: Option<NoiseSpec>,
    pub counts: ExperimentCounts,
    pub seed: u64,
    pub n_agents: usize,
    pub duration_steps: usize,
    pub stride: usize,
    /// Neighbors further than this from the target at observation time are
    /// dropped from the scene.
    pub neighbor_radius: f64,
}

impl ExperimentSpec {
    pub fn default_for(id: ExperimentId, seed: u64) -> Self {
        let base = MapSpec::roundabout(15.0, 4);
        let (train_maps, test_maps, train_exit_filter, noise) = match id {
            ExperimentId::I => (vec![base.clone()], vec![base], Some(0), None),
            ExperimentId::II => (
                vec![base],
                vec![
                    MapSpec::curved_road(40.0, 120.0),
                    MapSpec::roundabout(22.0, 3),
                ],
                None,
                None,
            ),
            ExperimentId::III => {
                let pool = vec![
                    MapSpec::roundabout(15.0, 4),
                    MapSpec::curved_road(40.0, 120.0),
                    MapSpec::straight_road(150.0),
                ];
                (
                    pool.clone(),
                    pool,
                    None,
                    Some(NoiseSpec {
                        mu: 0.5,
                        sigma: 0.1,
                        seed,
                    }),
                )
            }
        };
        ExperimentSpec {
            id,
            train_maps,
            test_maps,
            train_exit_filter,
            noise,
            counts: ExperimentCounts::default(),
            seed,
            n_agents: 5,
            duration_steps: 400,
            stride: 15,
            neighbor_radius: 30.0,
        }
    }
}

/// The built experiment: datasets plus the worlds the scenes refer to.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub worlds: Vec<World>,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl ExperimentData {
    pub fn world(&self, map_id: &str) -> Option<&World> {
        self.worlds.iter().find(|w| w.map_id == map_id)
    }
}

/// Add an independent Normal(mu, sigma^2) draw to each coordinate of each
/// point. Degenerate sigma = 0 shifts by mu exactly.
pub fn add_noise(history: &Trajectory, noise: &NoiseSpec) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let points = if noise.sigma > 0.0 {
        let normal = Normal::new(noise.mu, noise.sigma).expect("sigma >= 0");
        history
            .points
            .iter()
            .map(|p| {
                let dx: f64 = normal.sample(&mut rng);
                let dy: f64 = normal.sample(&mut rng);
                crate::types::Point::new(p.x + dx, p.y + dy)
            })
            .collect()
    } else {
        history
            .points
            .iter()
            .map(|p| crate::types::Point::new(p.x + noise.mu, p.y + noise.mu))
            .collect()
    };
    Trajectory::new(points, history.dt)
}

/// splitmix64: cheap deterministic seed derivation.
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut z = base
        .wrapping_add(salt.wrapping_mul(0x9E3779B97F4A7C15))
        .wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Turn one simulated episode into segments with full scenes.
pub fn segments_from_episode(
    world: &World,
    agents: &[SimAgent],
    stride: usize,
    neighbor_radius: f64,
) -> Vec<Segment> {
    let mut out = Vec::new();
    for (ai, agent) in agents.iter().enumerate() {
        let windows = extract_segments_windows(&agent.trajectory, HISTORY_LEN, LABEL_LEN, stride);
        for (wi, (history, label)) in windows.into_iter().enumerate() {
            let t0 = wi * stride;
            let obs_end = t0 + HISTORY_LEN;
            let anchor = history.final_position().unwrap();
            let neighbors: Vec<Trajectory> = agents
                .iter()
                .enumerate()
                .filter(|(bi, other)| *bi != ai && other.trajectory.len() >= obs_end)
                .filter_map(|(_, other)| {
                    let pts = other.trajectory.points[t0..obs_end].to_vec();
                    let last = pts[pts.len() - 1];
                    if last.distance(&anchor) <= neighbor_radius {
                        Some(Trajectory::new(pts, other.trajectory.dt))
                    } else {
                        None
                    }
                })
                .collect();
            out.push(Segment {
                scene: Scene {
                    target_history: history,
                    neighbor_histories: neighbors,
                    reference_path: agent.path_id,
                    map_id: world.map_id.clone(),
                    stop_signs: world.stop_signs.clone(),
                    speed_limit: world.speed_limit(),
                },
                label,
                noisy: false,
            });
        }
    }
    out
}

fn collect_split(
    worlds: &[World],
    spec: &ExperimentSpec,
    split: Split,
    count: usize,
    exit_filter: Option<usize>,
    split_salt: u64,
) -> Result<Vec<Segment>> {
    // Each world fills an equal quota so split composition does not depend
    // on how many segments one episode happens to yield.
    let mut segments = Vec::with_capacity(count);
    for (wi, world) in worlds.iter().enumerate() {
        let quota = count / worlds.len() + usize::from(wi < count % worlds.len());
        let mut collected: Vec<Segment> = Vec::with_capacity(quota);
        // Bail out when consecutive episodes yield nothing: the spec is
        // infeasible (e.g. tracks shorter than one window, or a filter that
        // rejects everything).
        let max_barren_streak = 8;
        let mut barren_streak = 0usize;
        let mut episode = 0usize;
        while collected.len() < quota && barren_streak < max_barren_streak {
            let ep_seed = derive_seed(
                spec.seed,
                split_salt.wrapping_mul(1_000_003) + (wi as u64) * 1_000_033 + episode as u64,
            );
            let idm = IdmParams::with_desired_speed(world.speed_limit());
            let agents = simulate_tracks(world, spec.n_agents, spec.duration_steps, &idm, ep_seed);
            let mut segs = segments_from_episode(world, &agents, spec.stride, spec.neighbor_radius);
            if let Some(exit) = exit_filter {
                segs.retain(|s| world.path_exits[s.scene.reference_path] == exit);
            }
            if segs.is_empty() {
                barren_streak += 1;
            } else {
                barren_streak = 0;
            }
            collected.extend(segs);
            episode += 1;
        }
        collected.truncate(quota);
        segments.extend(collected);
    }
    if segments.len() < count {
        let split_name = match split {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        };
        return Err(Error::DatasetShortfall {
            split: split_name,
            requested: count,
            available: segments.len(),
        });
    }
    segments.truncate(count);
    Ok(segments)
}

/// Build the (train, val, test) datasets for one experiment spec.
///
/// Experiment I filters train/val to the selected exit and tests on all
/// exits of the same map; Experiment II tests on disjoint maps;
/// Experiment III shares the map pool but injects noise into test
/// histories. Validation is always drawn i.i.d. from the training
/// distribution (distinct seeds).
pub fn build_experiment(spec: &ExperimentSpec) -> Result<ExperimentData> {
    for m in spec.train_maps.iter().chain(&spec.test_maps) {
        m.validate().map_err(|why| Error::invalid("map spec", why))?;
    }
    // Identical specs share one world instance (and map id).
    let mut worlds: Vec<World> = Vec::new();
    let mut train_worlds = Vec::new();
    let mut test_worlds = Vec::new();
    for m in &spec.train_maps {
        let w = generate_map(m, spec.seed);
        if !worlds.iter().any(|x: &World| x.map_id == w.map_id) {
            worlds.push(w.clone());
        }
        train_worlds.push(w);
    }
    for m in &spec.test_maps {
        let w = generate_map(m, spec.seed);
        if !worlds.iter().any(|x: &World| x.map_id == w.map_id) {
            worlds.push(w.clone());
        }
        test_worlds.push(w);
    }

    let train_segs = collect_split(
        &train_worlds,
        spec,
        Split::Train,
        spec.counts.train,
        spec.train_exit_filter,
        1,
    )?;
    let val_segs = collect_split(
        &train_worlds,
        spec,
        Split::Val,
        spec.counts.val,
        spec.train_exit_filter,
        2,
    )?;
    let mut test_segs = collect_split(
        &test_worlds,
        spec,
        Split::Test,
        spec.counts.test,
        None,
        3,
    )?;

    if let Some(noise) = &spec.noise {
        for (i, seg) in test_segs.iter_mut().enumerate() {
            let seg_seed = derive_seed(noise.seed, 0xA0_0000 + i as u64);
            let n = NoiseSpec {
                seed: seg_seed,
                ..*noise
            };
            seg.scene.target_history = add_noise(&seg.scene.target_history, &n);
            seg.scene.neighbor_histories = seg
                .scene
                .neighbor_histories
                .iter()
                .enumerate()
                .map(|(k, h)| {
                    let hn = NoiseSpec {
                        seed: derive_seed(seg_seed, 1 + k as u64),
                        ..*noise
                    };
                    add_noise(h, &hn)
                })
                .collect();
            seg.noisy = true;
        }
    }

    let prov = |split: &str| format!("experiment {} seed {} {}", spec.id, spec.seed, split);
    Ok(ExperimentData {
        worlds,
        train: Dataset::new(train_segs, Split::Train, prov("train")),
        val: Dataset::new(val_segs, Split::Val, prov("val")),
        test: Dataset::new(test_segs, Split::Test, prov("test")),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::DT;

    fn small_spec(id: ExperimentId) -> ExperimentSpec {
        let mut spec = ExperimentSpec::default_for(id, 7);
        spec.counts = ExperimentCounts {
            train: 60,
            val: 20,
            test: 30,
        };
        spec
    }

    #[test]
    fn noise_identity_when_zero() {
        let t = Trajectory::from_xy(&[(0.0, 0.0), (1.0, 1.0)], DT);
        let n = NoiseSpec {
            mu: 0.0,
            sigma: 0.0,
            seed: 1,
        };
        assert_eq!(add_noise(&t, &n), t);
    }

    #[test]
    fn noise_pure_shift_when_sigma_zero() {
        let t = Trajectory::from_xy(&[(0.0, 0.0), (1.0, 1.0)], DT);
        let n = NoiseSpec {
            mu: 0.5,
            sigma: 0.0,
            seed: 1,
        };
        let out = add_noise(&t, &n);
        assert_eq!(out.points[0].x, 0.5);
        assert_eq!(out.points[1].y, 1.5);
    }

    #[test]
    fn noise_sample_mean_matches_mu() {
        let t = Trajectory::from_xy(&vec![(0.0, 0.0); 5000], DT);
        let n = NoiseSpec {
            mu: 0.5,
            sigma: 0.1,
            seed: 3,
        };
        let out = add_noise(&t, &n);
        let mean: f64 = out
            .points
            .iter()
            .map(|p| p.x + p.y)
            .sum::<f64>()
            / (2.0 * out.len() as f64);
        assert!((0.49..=0.51).contains(&mean), "sample mean {mean}");
    }

    #[test]
    fn experiment_i_exit_filter_holds() {
        let data = build_experiment(&small_spec(ExperimentId::I)).unwrap();
        let world = &data.worlds[0];
        for seg in &data.train.segments {
            assert_eq!(world.path_exits[seg.scene.reference_path], 0);
        }
        // Test covers more exits than train: strict superset.
        let test_exits: std::collections::BTreeSet<usize> = data
            .test
            .segments
            .iter()
            .map(|s| world.path_exits[s.scene.reference_path])
            .collect();
        assert!(test_exits.len() > 1);
        assert!(test_exits.contains(&0) || test_exits.len() > 1);
    }

    #[test]
    fn experiment_ii_maps_disjoint() {
        let data = build_experiment(&small_spec(ExperimentId::II)).unwrap();
        let train_ids: std::collections::BTreeSet<&str> = data
            .train
            .segments
            .iter()
            .map(|s| s.scene.map_id.as_str())
            .collect();
        let test_ids: std::collections::BTreeSet<&str> = data
            .test
            .segments
            .iter()
            .map(|s| s.scene.map_id.as_str())
            .collect();
        assert!(train_ids.is_disjoint(&test_ids));
    }

    #[test]
    fn experiment_iii_flags_noise() {
        let data = build_experiment(&small_spec(ExperimentId::III)).unwrap();
        assert!(data.test.segments.iter().all(|s| s.noisy));
        assert!(data.train.segments.iter().all(|s| !s.noisy));
        assert!(data.val.segments.iter().all(|s| !s.noisy));
    }

    #[test]
    fn infeasible_counts_error_names_shortfall() {
        let mut spec = small_spec(ExperimentId::I);
        // Episodes shorter than one 40-step window can never yield segments.
        spec.duration_steps = 30;
        match build_experiment(&spec) {
            Err(Error::DatasetShortfall { split, .. }) => assert_eq!(split, "train"),
            other => panic!("expected shortfall, got {other:?}"),
        }
    }

    #[test]
    fn build_is_deterministic() {
        let a = build_experiment(&small_spec(ExperimentId::I)).unwrap();
        let b = build_experiment(&small_spec(ExperimentId::I)).unwrap();
        assert_eq!(a.train.segments, b.train.segments);
        assert_eq!(a.test.segments, b.test.segments);
    }
}
