//! Shared fixtures for the benchmarks in `benches/`.

use pkgrec_core::data::{synthetic_dataset, Experiment, RunConfig, SyntheticSpec};
use pkgrec_core::model::{ModelConfig, ModelParams};

/// Profiled synthetic dataset with `users` users and half as many items,
/// plus freshly initialized parameters at the default model size.
pub struct Fixture {
    pub experiment: Experiment,
    pub config: RunConfig,
    pub model: ModelConfig,
    pub params: ModelParams,
}

pub fn fixture(users: usize) -> Fixture {
    let spec = SyntheticSpec {
        n_users: users,
        n_items: users / 2,
        ..Default::default()
    };
    let config = RunConfig::default();
    let ds = synthetic_dataset(&spec).expect("valid synthetic spec");
    let experiment = Experiment::prepare(&ds, &config, None).expect("profiling succeeds");
    let g = &experiment.train_graph;
    let model = config
        .train
        .model_config(experiment.profiled.embedding.dim());
    let params = ModelParams::init(&model, g.num_entities(), g.num_relations(), 0);
    Fixture {
        experiment,
        config,
        model,
        params,
    }
}
