//! Run configuration, datasets, data collection and experiment sweeps.

pub mod config;
pub mod dagger;
pub mod dataset;
pub mod experiment;
pub mod scenes;

pub use config::{PerceptionSpec, RunConfig, TrackSource, CONFIG_VERSION};
pub use dagger::{arbitrate, dagger_collect, Actor, DaggerConfig, DaggerOutcome, RoundStats, StopReason};
pub use dataset::{Dataset, Sample, DATASET_MAGIC};
pub use experiment::{
    ablation_rmse, gamma_grid, run_experiment, thread_pool, write_csv, ExperimentEnv, ExperimentSpec, Row, Sweep,
    System, CSV_HEADER,
};
pub use scenes::{Randomization, SceneSampler};
