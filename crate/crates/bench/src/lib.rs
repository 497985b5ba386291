//! Shared fixtures for the criterion benchmarks.

use switchpred_core::e2e::{train, E2EConfig, E2EModel};
use switchpred_core::scenario::{
    build_experiment, ExperimentCounts, ExperimentId, ExperimentSpec, World,
};
use switchpred_core::types::Dataset;

/// A small deterministic dataset plus a trained model, built once per run.
pub struct Fixture {
    pub data: Dataset,
    pub worlds: Vec<World>,
    pub model: E2EModel,
}

pub fn fixture() -> Fixture {
    let mut spec = ExperimentSpec::default_for(ExperimentId::I, 11);
    spec.counts = ExperimentCounts {
        train: 60,
        val: 10,
        test: 10,
    };
    let data = build_experiment(&spec).expect("fixture data");
    let config = E2EConfig {
        hidden_size: 16,
        epochs: 2,
        ..E2EConfig::default()
    };
    let model = train(&data.train, &config).expect("fixture model");
    Fixture {
        worlds: data.worlds,
        data: data.train,
        model,
    }
}
