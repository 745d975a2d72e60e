//! Experiment driver: point clouds, configuration, reports and sweeps.

pub mod config;
pub mod experiment;
pub mod io;
pub mod sampling;
pub mod sweep;

pub use config::{ExperimentConfig, Geometry, Resolution};
pub use experiment::{run_experiment, Report};
pub use io::{load_points, PointFormat};
pub use sampling::sample_sphere;
pub use sweep::{sweep, Sweep, SweepRow};
