use anyhow::{ensure, Context, Result};
use tdoamap::experiments::{write_histogram_csv, write_json};
use tdoamap::ingest::{inject_offsets, load_mapped_csv, CsvOptions, RealDataset};
use tdoamap::localizer::{procrustes_rmse, solve, Init, SolveOptions};
use tdoamap::scene::mix_seed;
use tdoamap::{
    generate_scene, histogram, map_timing, run_monte_carlo, run_monte_carlo_with_samples,
    synth_toa, validate_toa, Scene, SceneConfig,
};

use crate::{IngestArgs, LocalizeArgs, SimulateArgs, ValidateArgs};

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

pub fn simulate(args: SimulateArgs) -> Result<bool> {
    let config = SceneConfig {
        num_mics: args.mics as usize,
        num_srcs: args.srcs as usize,
        room: args.room,
        offset_range: args.offset_range,
        speed: args.speed,
        seed: args.seed,
    };
    config.validate()?;

    let report = match &args.hist {
        Some(path) => {
            let (report, samples) = run_monte_carlo_with_samples(&config, args.trials, args.tol)?;
            let bins = histogram(
                &samples,
                args.bins as usize,
                (-args.hist_range, args.hist_range),
            )?;
            write_histogram_csv(&bins, path)?;
            report
        }
        None => run_monte_carlo(&config, args.trials, args.tol)?,
    };
    write_json(&report, &args.report)?;

    if args.scene_out.is_some() || args.toa_out.is_some() {
        let scene = generate_scene(&config.with_seed(mix_seed(config.seed, 0)))?;
        if let Some(path) = &args.scene_out {
            scene.write_json(path)?;
        }
        if let Some(path) = &args.toa_out {
            synth_toa(&scene).values.write_csv(path)?;
        }
    }

    println!(
        "simulate: {} trials, {} points, max|f(TOA)-f(TDOA)| {:.3e} s, max|f(TOA)-closed| {:.3e} s, \
         max|column mean| {:.3e} s, f in [{:.4}, {:.4}] s, tol {:e}: {}",
        report.num_trials,
        report.total_data_points,
        report.max_abs_residual_toa_tdoa,
        report.max_abs_residual_vs_closed_form,
        report.max_abs_column_mean,
        report.f_min,
        report.f_max,
        report.tolerance,
        verdict(report.pass)
    );
    Ok(report.pass)
}

pub fn validate(args: ValidateArgs) -> Result<bool> {
    let opts = CsvOptions {
        header: args.header,
        scale: args.scale,
    };
    let data = RealDataset::load(&args.toa, &opts)?;
    let report = validate_toa(&data.toa, args.ref_mic, args.ref_src, args.tol)?;
    write_json(&report, &args.report)?;
    if let Some(path) = &args.mapped_out {
        map_timing(&data.toa, args.ref_src)?
            .values
            .write_csv(path)?;
    }
    println!(
        "validate: {}x{} TOA matrix, {} points, max|f(TOA)-f(TDOA)| {:.3e} s, \
         max|column mean| {:.3e} s, f in [{:.4}, {:.4}] s, tol {:e}: {}",
        report.num_mics,
        report.num_srcs,
        report.total_data_points,
        report.max_abs_residual_toa_tdoa,
        report
            .max_abs_column_mean_toa
            .max(report.max_abs_column_mean_tdoa),
        report.f_min,
        report.f_max,
        report.tolerance,
        verdict(report.pass)
    );
    Ok(report.pass)
}

pub fn ingest(args: IngestArgs) -> Result<bool> {
    let opts = CsvOptions {
        header: args.header,
        scale: args.scale,
    };
    let data = RealDataset::load(&args.toa, &opts)?;
    let injected = inject_offsets(&data.toa, args.offset_range, args.seed)?;
    injected.toa.values.write_csv(&args.out)?;
    write_json(&injected.audit, &args.audit)?;
    println!(
        "ingest: {}x{} TOA matrix, offsets in [-{}, {}] s (seed {}) -> {}",
        data.toa.num_mics(),
        data.toa.num_srcs(),
        args.offset_range,
        args.offset_range,
        args.seed,
        args.out.display()
    );
    Ok(true)
}

pub fn localize(args: LocalizeArgs) -> Result<bool> {
    let f_obs = load_mapped_csv(&args.mapped)?;
    let init = match &args.init {
        Some(path) => {
            let scene = Scene::from_json_file(path)
                .with_context(|| format!("loading --init {}", path.display()))?;
            Init::Positions {
                mics: scene.mics,
                srcs: scene.srcs,
            }
        }
        None => Init::Random,
    };
    let opts = SolveOptions {
        max_iterations: args.max_iter as usize,
        num_restarts: args.restarts as usize,
        seed: args.seed,
        reference_source: args.ref_src,
        ..SolveOptions::default()
    };
    let est = solve(&f_obs, args.speed, &init, &opts)?;
    write_json(&est, &args.out)?;

    let mut summary = format!(
        "localize: {} mics, {} sources, cost {:.3e} s^2 after {} iterations (restart {}), converged {}",
        est.mics.len(),
        est.srcs.len(),
        est.final_cost,
        est.iterations,
        est.restart,
        est.converged
    );
    let mut pass = true;
    if let Some(path) = &args.truth {
        let truth = Scene::from_json_file(path)
            .with_context(|| format!("loading --truth {}", path.display()))?;
        ensure!(
            truth.num_mics() == est.mics.len() && truth.num_srcs() == est.srcs.len(),
            "truth scene has {}x{} points, estimate has {}x{}",
            truth.num_mics(),
            truth.num_srcs(),
            est.mics.len(),
            est.srcs.len()
        );
        let truth_points: Vec<_> = truth.mics.iter().chain(&truth.srcs).copied().collect();
        let rmse = procrustes_rmse(&est.points(), &truth_points)?;
        summary.push_str(&format!(", Procrustes RMSE {rmse:.3e} m"));
        if let Some(tol) = args.rmse_tol {
            pass = rmse <= tol;
            summary.push_str(&format!(" (tol {tol:e}): {}", verdict(pass)));
        }
    }
    println!("{summary}");
    Ok(pass)
}
