//! Synthetic world generation, traffic simulation, experiment split
//! construction, test-time noise injection, and external track ingestion.

pub mod experiment;
pub mod idm;
pub mod ingest;
pub mod io;
pub mod map;
pub mod sim;

pub use experiment::{
    add_noise, build_experiment, derive_seed, segments_from_episode, ExperimentCounts,
    ExperimentData, ExperimentId, ExperimentSpec, NoiseSpec,
};
pub use idm::{idm_acceleration, idm_desired_gap, IdmParams};
pub use ingest::ingest_csv;
pub use io::{read_dataset_jsonl, write_dataset_jsonl};
pub use map::{generate_map, MapKind, MapSpec, World};
pub use sim::{simulate_tracks, SimAgent, CAR_LEN};
