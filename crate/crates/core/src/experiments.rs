//! Monte Carlo validation of the mapping identity.
//!
//! Each trial draws a scene from `mix_seed(master_seed, trial_index)`, builds
//! TOA and TDOA matrices, maps both, evaluates the closed form, and records
//! worst-case discrepancies. Trials run on the ambient rayon pool; results are
//! collected in trial order and reduced with max/min, so a report depends only
//! on the configuration.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapping::{
    analytic_bound, closed_form_map, column_means, map_timing, residual, MappedMatrix,
};
use crate::scene::{generate_scene, mix_seed, SceneConfig};
use crate::timing::{synth_tdoa, synth_toa, tdoa_from_toa, TimingMatrix};

/// Acceptance tolerance on identity residuals and column means, seconds.
pub const DEFAULT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial_index: u64,
    pub seed: u64,
    /// `max |f(TOA) - f(TDOA)|`.
    pub max_abs_residual_toa_tdoa: f64,
    /// `max |f(TOA) - closed form|`.
    pub max_abs_residual_vs_closed_form: f64,
    pub max_abs_column_mean_toa: f64,
    pub max_abs_column_mean_tdoa: f64,
    /// Worst column mean over the TOA, TDOA and closed-form routes.
    pub max_abs_column_mean: f64,
    pub f_min: f64,
    pub f_max: f64,
    /// `2 * diameter / c` for this trial's scene.
    pub analytic_bound: f64,
}

impl TrialResult {
    pub fn within_bound(&self) -> bool {
        self.f_min.abs().max(self.f_max.abs()) <= self.analytic_bound
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub config: SceneConfig,
    pub num_trials: u64,
    pub tolerance: f64,
    pub total_data_points: u64,
    pub max_abs_residual_toa_tdoa: f64,
    pub max_abs_residual_vs_closed_form: f64,
    pub max_abs_column_mean: f64,
    pub max_abs_column_mean_toa: f64,
    pub max_abs_column_mean_tdoa: f64,
    pub f_min: f64,
    pub f_max: f64,
    /// Largest per-trial `2 * diameter / c`.
    pub max_analytic_bound: f64,
    /// Trials whose `max |f|` exceeded their own analytic bound.
    pub bound_violations: u64,
    /// Every aggregate residual and column mean is below `tolerance`.
    pub pass: bool,
}

/// Runs `num_trials` trials and aggregates them.
pub fn run_monte_carlo(
    config: &SceneConfig,
    num_trials: u64,
    tolerance: f64,
) -> Result<ValidationReport> {
    let trials = run_trials(config, num_trials, tolerance, false)?;
    Ok(aggregate(config, tolerance, trials.iter().map(|(t, _)| t)))
}

/// Like [`run_monte_carlo`], also returning every TOA-mapped value in trial order.
pub fn run_monte_carlo_with_samples(
    config: &SceneConfig,
    num_trials: u64,
    tolerance: f64,
) -> Result<(ValidationReport, Vec<f64>)> {
    let trials = run_trials(config, num_trials, tolerance, true)?;
    let report = aggregate(config, tolerance, trials.iter().map(|(t, _)| t));
    let samples = trials.into_iter().flat_map(|(_, v)| v).collect();
    Ok((report, samples))
}

/// Per-trial results, in trial order.
pub fn trial_results(config: &SceneConfig, num_trials: u64) -> Result<Vec<TrialResult>> {
    Ok(run_trials(config, num_trials, DEFAULT_TOLERANCE, false)?
        .into_iter()
        .map(|(t, _)| t)
        .collect())
}

fn run_trials(
    config: &SceneConfig,
    num_trials: u64,
    tolerance: f64,
    keep_values: bool,
) -> Result<Vec<(TrialResult, Vec<f64>)>> {
    config.validate()?;
    if num_trials == 0 {
        return Err(Error::Config("need at least one trial".into()));
    }
    if !(tolerance.is_finite() && tolerance > 0.0) {
        return Err(Error::Config(format!(
            "tolerance must be positive, got {tolerance}"
        )));
    }
    (0..num_trials)
        .into_par_iter()
        .map(|k| run_trial(config, k, keep_values))
        .collect()
}

/// One trial of the Monte Carlo run; `keep_values` also returns the TOA-mapped entries.
pub fn run_trial(
    config: &SceneConfig,
    trial_index: u64,
    keep_values: bool,
) -> Result<(TrialResult, Vec<f64>)> {
    let seed = mix_seed(config.seed, trial_index);
    let scene = generate_scene(&config.with_seed(seed))?;

    let f_toa = map_timing(&synth_toa(&scene), 0)?;
    let f_tdoa = map_timing(&synth_tdoa(&scene, 0)?, 0)?;
    let f_closed = closed_form_map(&scene, 0)?;

    let mean_toa = max_abs_column_mean(&f_toa);
    let mean_tdoa = max_abs_column_mean(&f_tdoa);
    let mean_closed = max_abs_column_mean(&f_closed);
    let (f_min, f_max) = f_toa.values.min_max().unwrap_or((0.0, 0.0));

    let result = TrialResult {
        trial_index,
        seed,
        max_abs_residual_toa_tdoa: residual(&f_toa, &f_tdoa)?.max_abs(),
        max_abs_residual_vs_closed_form: residual(&f_toa, &f_closed)?.max_abs(),
        max_abs_column_mean_toa: mean_toa,
        max_abs_column_mean_tdoa: mean_tdoa,
        max_abs_column_mean: mean_toa.max(mean_tdoa).max(mean_closed),
        f_min,
        f_max,
        analytic_bound: analytic_bound(&scene),
    };
    let values = if keep_values {
        f_toa.values.as_slice().to_vec()
    } else {
        Vec::new()
    };
    Ok((result, values))
}

fn max_abs_column_mean(m: &MappedMatrix) -> f64 {
    column_means(m)
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

fn aggregate<'a>(
    config: &SceneConfig,
    tolerance: f64,
    trials: impl Iterator<Item = &'a TrialResult>,
) -> ValidationReport {
    let mut report = ValidationReport {
        config: config.clone(),
        num_trials: 0,
        tolerance,
        total_data_points: 0,
        max_abs_residual_toa_tdoa: 0.0,
        max_abs_residual_vs_closed_form: 0.0,
        max_abs_column_mean: 0.0,
        max_abs_column_mean_toa: 0.0,
        max_abs_column_mean_tdoa: 0.0,
        f_min: f64::INFINITY,
        f_max: f64::NEG_INFINITY,
        max_analytic_bound: 0.0,
        bound_violations: 0,
        pass: false,
    };
    for t in trials {
        report.num_trials += 1;
        report.max_abs_residual_toa_tdoa = report
            .max_abs_residual_toa_tdoa
            .max(t.max_abs_residual_toa_tdoa);
        report.max_abs_residual_vs_closed_form = report
            .max_abs_residual_vs_closed_form
            .max(t.max_abs_residual_vs_closed_form);
        report.max_abs_column_mean = report.max_abs_column_mean.max(t.max_abs_column_mean);
        report.max_abs_column_mean_toa = report
            .max_abs_column_mean_toa
            .max(t.max_abs_column_mean_toa);
        report.max_abs_column_mean_tdoa = report
            .max_abs_column_mean_tdoa
            .max(t.max_abs_column_mean_tdoa);
        report.f_min = report.f_min.min(t.f_min);
        report.f_max = report.f_max.max(t.f_max);
        report.max_analytic_bound = report.max_analytic_bound.max(t.analytic_bound);
        if !t.within_bound() {
            report.bound_violations += 1;
        }
    }
    report.total_data_points = report.num_trials * config.num_mics as u64 * config.num_srcs as u64;
    report.pass = report.max_abs_residual_toa_tdoa < tolerance
        && report.max_abs_residual_vs_closed_form < tolerance
        && report.max_abs_column_mean < tolerance;
    report
}

/// Identity and zero-mean checks on a measured TOA matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub num_mics: usize,
    pub num_srcs: usize,
    pub total_data_points: u64,
    pub ref_mic: usize,
    pub ref_src: usize,
    pub tolerance: f64,
    pub max_abs_residual_toa_tdoa: f64,
    pub max_abs_column_mean_toa: f64,
    pub max_abs_column_mean_tdoa: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub pass: bool,
}

/// Derives TDOA from `toa`, maps both and compares.
pub fn validate_toa(
    toa: &TimingMatrix,
    ref_mic: usize,
    ref_src: usize,
    tolerance: f64,
) -> Result<TimingReport> {
    if !(tolerance.is_finite() && tolerance > 0.0) {
        return Err(Error::Config(format!(
            "tolerance must be positive, got {tolerance}"
        )));
    }
    let tdoa = tdoa_from_toa(toa, ref_mic)?;
    let f_toa = map_timing(toa, ref_src)?;
    let f_tdoa = map_timing(&tdoa, ref_src)?;
    let max_residual = residual(&f_toa, &f_tdoa)?.max_abs();
    let mean_toa = max_abs_column_mean(&f_toa);
    let mean_tdoa = max_abs_column_mean(&f_tdoa);
    let (f_min, f_max) = f_toa.values.min_max().unwrap_or((0.0, 0.0));
    Ok(TimingReport {
        num_mics: toa.num_mics(),
        num_srcs: toa.num_srcs(),
        total_data_points: (toa.num_mics() * toa.num_srcs()) as u64,
        ref_mic,
        ref_src,
        tolerance,
        max_abs_residual_toa_tdoa: max_residual,
        max_abs_column_mean_toa: mean_toa,
        max_abs_column_mean_tdoa: mean_tdoa,
        f_min,
        f_max,
        pass: max_residual < tolerance && mean_toa < tolerance && mean_tdoa < tolerance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_left: f64,
    pub bin_right: f64,
    pub count: u64,
}

/// Uniform-width histogram over the closed interval `[lo, hi]`.
///
/// Values outside the interval (and NaN) are dropped; `hi` itself lands in
/// the last bin.
pub fn histogram(
    values: &[f64],
    num_bins: usize,
    (lo, hi): (f64, f64),
) -> Result<Vec<HistogramBin>> {
    if num_bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::Config(format!(
            "invalid histogram range [{lo}, {hi}]"
        )));
    }
    let width = (hi - lo) / num_bins as f64;
    let mut counts = vec![0u64; num_bins];
    for &v in values {
        if !(lo..=hi).contains(&v) {
            continue;
        }
        let k = (((v - lo) / width) as usize).min(num_bins - 1);
        counts[k] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(k, count)| HistogramBin {
            bin_left: lo + k as f64 * width,
            bin_right: if k + 1 == num_bins {
                hi
            } else {
                lo + (k + 1) as f64 * width
            },
            count,
        })
        .collect())
}

/// Writes bins as CSV with header `bin_left,bin_right,count`.
pub fn write_histogram_csv(bins: &[HistogramBin], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    for bin in bins {
        writer.serialize(bin).map_err(|e| csv_io(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
