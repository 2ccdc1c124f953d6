//! Experiment orchestration: configs, synthetic data, pipeline runs,
//! ablations, sweeps and reports.

pub mod config;
pub mod pipeline;
pub mod report;
pub mod sweep;
pub mod synthetic;

pub use config::{Ablation, DataSource, ExperimentConfig, Mode, Stage};
pub use pipeline::{
    evaluate_split, load_data, run_ablation, run_pipeline, run_pipeline_cached, run_seed, split_for_seed,
    train_seed, RunOptions, SeedOutcome, StageCache, TrainedSeed,
};
pub use report::{mean_std, RunReport, SweepReport};
pub use sweep::{grid, run_sweep, run_sweep_cached, SweepAxis, M_GRID, NOISE_GRID};
pub use synthetic::{
    class_profiles, inject_anomaly, make_synthetic, make_synthetic_series, AnomalyKind, ClassProfile, SyntheticSpec,
};
