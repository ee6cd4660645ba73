//! Offset-free mapping of microphone array timing measurements.
//!
//! Asynchronous arrays measure arrival times contaminated by an unknown
//! recording start time per microphone and an unknown emission time per
//! source. Subtracting a reference source column and then each column's mean
//! over microphones cancels both, and the result is the same whether the input
//! was TOA (needs the source waveform) or TDOA (microphone signals only).
//!
//! - [`scene`]: ground-truth geometry and random scene generation
//! - [`timing`]: TOA/TDOA synthesis
//! - [`mapping`]: the mapping, its closed form and the residual metric
//! - [`experiments`]: seeded Monte Carlo validation and histogram export
//! - [`ingest`]: CSV loading and offset injection for measured data
//! - [`localizer`]: geometry recovery from the mapped matrix

pub mod error;
pub mod experiments;
pub mod ingest;
pub mod localizer;
pub mod mapping;
pub mod matrix;
pub mod scene;
pub mod timing;

pub use error::{Error, Result};
pub use experiments::{
    histogram, run_monte_carlo, run_monte_carlo_with_samples, validate_toa, HistogramBin,
    TimingReport, TrialResult, ValidationReport, DEFAULT_TOLERANCE,
};
pub use ingest::{inject_offsets, load_toa_csv, CsvOptions, OffsetAudit, RealDataset};
pub use localizer::{
    model_f, objective_and_gradient, procrustes_rmse, solve, GeometryEstimate, Init, SolveOptions,
};
pub use mapping::{
    closed_form_map, column_means, derived_offsets, map_timing, residual, DerivedOffsets,
    MapSource, MappedMatrix,
};
pub use matrix::Matrix;
pub use scene::{generate_scene, normalize_scene, scene_diameter, Point, Scene, SceneConfig};
pub use timing::{add_noise, synth_tdoa, synth_toa, tdoa_from_toa, TimingKind, TimingMatrix};
