//! Geometry recovery from a mapped matrix alone.
//!
//! Fits microphone and source positions so that the closed-form mapping of the
//! candidate geometry matches an observed mapped matrix, using a damped
//! Gauss-Newton (Levenberg-Marquardt) iteration with an analytic Jacobian.
//! The mapping only sees pairwise distances, so estimates are defined up to
//! translation, rotation and reflection; compare them with [`procrustes_rmse`].
//!
//! Parameters are flattened as `[r_0.x, r_0.y, r_0.z, .., r_{M-1}.z, s_0.x, .., s_{N-1}.z]`.

use nalgebra::{DMatrix, DVector, Matrix3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapping::{closed_form_values, MapSource, MappedMatrix};
use crate::scene::{mix_seed, rng_from_seed, Point};
use crate::timing::check_index;

/// Distances below this are treated as coincident; their derivative is taken as zero.
pub const COINCIDENT_DISTANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryEstimate {
    pub mics: Vec<Point>,
    pub srcs: Vec<Point>,
    /// Sum of squared residuals, s^2.
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Index of the restart that produced this estimate.
    pub restart: usize,
}

impl GeometryEstimate {
    /// Microphones followed by sources.
    pub fn points(&self) -> Vec<Point> {
        self.mics.iter().chain(&self.srcs).copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub max_iterations: usize,
    /// Stop once the cost, or the decrease of an accepted step, is at most this (s^2).
    pub cost_tolerance: f64,
    /// Stop once a step is shorter than `step_tolerance * (|x| + step_tolerance)`.
    pub step_tolerance: f64,
    /// Initial damping relative to the largest diagonal entry of `J^T J`.
    pub initial_damping: f64,
    pub num_restarts: usize,
    pub seed: u64,
    /// Standard deviation (m) of the perturbation applied to explicit initial
    /// positions for restarts after the first.
    pub restart_jitter: f64,
    pub reference_source: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            cost_tolerance: 1e-24,
            step_tolerance: 1e-12,
            initial_damping: 1e-3,
            num_restarts: 1,
            seed: 0,
            restart_jitter: 0.5,
            reference_source: 0,
        }
    }
}

impl SolveOptions {
    fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if self.max_iterations == 0 || self.num_restarts == 0 {
            return Err(Error::Config(
                "max_iterations and num_restarts must be at least 1".into(),
            ));
        }
        if !(positive(self.cost_tolerance)
            && positive(self.step_tolerance)
            && positive(self.initial_damping))
        {
            return Err(Error::Config(
                "solver tolerances and damping must be positive".into(),
            ));
        }
        if !(self.restart_jitter.is_finite() && self.restart_jitter >= 0.0) {
            return Err(Error::Config("restart jitter must be non-negative".into()));
        }
        Ok(())
    }
}

/// Starting point for [`solve`].
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Positions {
        mics: Vec<Point>,
        srcs: Vec<Point>,
    },
    /// Uniform draws in a cube sized from the spread of the observations.
    Random,
}

/// The closed-form mapping of candidate positions.
pub fn model_f(mics: &[Point], srcs: &[Point], c: f64, ref_src: usize) -> Result<MappedMatrix> {
    if mics.is_empty() || srcs.is_empty() {
        return Err(Error::Shape(
            "need at least one microphone and one source".into(),
        ));
    }
    check_index("reference source", ref_src, srcs.len())?;
    Ok(MappedMatrix {
        values: closed_form_values(mics, srcs, c, ref_src),
        source: MapSource::ClosedForm,
    })
}

/// True when the mapped matrix has at least as many independent entries,
/// `(M-1)(N-1)`, as the geometry has degrees of freedom modulo rigid motion,
/// `3(M+N) - 6`.
pub fn is_identifiable(num_mics: usize, num_srcs: usize) -> bool {
    let available = num_mics.saturating_sub(1) * num_srcs.saturating_sub(1);
    let unknowns = (3 * (num_mics + num_srcs)).saturating_sub(6);
    available >= unknowns
}

pub fn flatten_positions(mics: &[Point], srcs: &[Point]) -> Vec<f64> {
    mics.iter()
        .chain(srcs)
        .flat_map(|p| [p.x, p.y, p.z])
        .collect()
}

pub fn unflatten_positions(params: &[f64], num_mics: usize) -> (Vec<Point>, Vec<Point>) {
    let points: Vec<Point> = params
        .chunks_exact(3)
        .map(|c| Point::new(c[0], c[1], c[2]))
        .collect();
    let srcs = points[num_mics..].to_vec();
    let mut mics = points;
    mics.truncate(num_mics);
    (mics, srcs)
}

struct Problem<'a> {
    f_obs: &'a MappedMatrix,
    c: f64,
    ref_src: usize,
}

impl Problem<'_> {
    fn num_mics(&self) -> usize {
        self.f_obs.num_mics()
    }

    fn num_srcs(&self) -> usize {
        self.f_obs.num_srcs()
    }

    fn num_params(&self) -> usize {
        3 * (self.num_mics() + self.num_srcs())
    }

    /// `model - f_obs`, row-major.
    fn errors(&self, params: &[f64]) -> DVector<f64> {
        let (mics, srcs) = unflatten_positions(params, self.num_mics());
        let model = closed_form_values(&mics, &srcs, self.c, self.ref_src);
        let diff = model
            .sub(&self.f_obs.values)
            .expect("shapes agree by construction");
        DVector::from_column_slice(diff.as_slice())
    }

    /// Jacobian of the model, one row per `(i, j)` entry in row-major order.
    fn jacobian(&self, params: &[f64]) -> DMatrix<f64> {
        let (m, n) = (self.num_mics(), self.num_srcs());
        let k = self.ref_src;
        let (mics, srcs) = unflatten_positions(params, m);
        let inv_c = 1.0 / self.c;
        let inv_m = 1.0 / m as f64;

        // unit vectors from source j to microphone i
        let mut unit = vec![Point::zeros(); m * n];
        for i in 0..m {
            for j in 0..n {
                let d = mics[i] - srcs[j];
                let len = d.norm();
                if len >= COINCIDENT_DISTANCE {
                    unit[i * n + j] = d / len;
                }
            }
        }
        let u = |i: usize, j: usize| unit[i * n + j];
        let mean_u: Vec<Point> = (0..n)
            .map(|j| (0..m).fold(Point::zeros(), |acc, l| acc + u(l, j)) * inv_m)
            .collect();

        let mut jac = DMatrix::zeros(m * n, self.num_params());
        let src_col = |j: usize| 3 * (m + j);
        for i in 0..m {
            for j in 0..n {
                let row = i * n + j;
                for l in 0..m {
                    let mut w = (u(l, j) - u(l, k)) * (-inv_m);
                    if l == i {
                        w += u(i, j) - u(i, k);
                    }
                    add_block(&mut jac, row, 3 * l, &(w * inv_c));
                }
                add_block(&mut jac, row, src_col(j), &((mean_u[j] - u(i, j)) * inv_c));
                add_block(&mut jac, row, src_col(k), &((u(i, k) - mean_u[k]) * inv_c));
            }
        }
        jac
    }
}

fn add_block(jac: &mut DMatrix<f64>, row: usize, col: usize, v: &Point) {
    for a in 0..3 {
        jac[(row, col + a)] += v[a];
    }
}

fn check_problem(f_obs: &MappedMatrix, c: f64, ref_src: usize) -> Result<()> {
    if f_obs.values.is_empty() {
        return Err(Error::Shape("empty mapped matrix".into()));
    }
    if !f_obs.values.all_finite() {
        return Err(Error::Numeric(
            "observed mapped matrix has non-finite entries".into(),
        ));
    }
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::Config(format!(
            "speed of sound must be positive, got {c}"
        )));
    }
    check_index("reference source", ref_src, f_obs.num_srcs())
}

/// Cost `sum (f_obs - model)^2` and its exact gradient with respect to the flattened positions.
pub fn objective_and_gradient(
    params: &[f64],
    f_obs: &MappedMatrix,
    c: f64,
    ref_src: usize,
) -> Result<(f64, Vec<f64>)> {
    check_problem(f_obs, c, ref_src)?;
    let problem = Problem { f_obs, c, ref_src };
    if params.len() != problem.num_params() {
        return Err(Error::Shape(format!(
            "expected {} parameters, got {}",
            problem.num_params(),
            params.len()
        )));
    }
    if params.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("NaN in parameters".into()));
    }
    let e = problem.errors(params);
    let jac = problem.jacobian(params);
    let grad = jac.tr_mul(&e) * 2.0;
    Ok((e.norm_squared(), grad.iter().copied().collect()))
}

/// Fits positions to `f_obs`.
///
/// With `num_restarts > 1` every restart runs independently (in parallel) and
/// the lowest final cost wins, ties going to the lowest restart index.
/// Running out of iterations is not an error; the best iterate comes back
/// with `converged == false`.
pub fn solve(
    f_obs: &MappedMatrix,
    c: f64,
    init: &Init,
    opts: &SolveOptions,
) -> Result<GeometryEstimate> {
    opts.validate()?;
    check_problem(f_obs, c, opts.reference_source)?;
    let (m, n) = (f_obs.num_mics(), f_obs.num_srcs());
    if let Init::Positions { mics, srcs } = init {
        if mics.len() != m || srcs.len() != n {
            return Err(Error::Shape(format!(
                "initial geometry has {}x{} points, observations are {m}x{n}",
                mics.len(),
                srcs.len()
            )));
        }
        if mics
            .iter()
            .chain(srcs)
            .any(|p| !p.iter().all(|v| v.is_finite()))
        {
            return Err(Error::Numeric("non-finite initial position".into()));
        }
    }
    if !is_identifiable(m, n) {
        log::warn!(
            "{m} microphones and {n} sources give {} independent observations for {} unknowns; \
             the geometry is not identifiable",
            (m - 1) * (n - 1),
            (3 * (m + n)).saturating_sub(6)
        );
    }

    let problem = Problem {
        f_obs,
        c,
        ref_src: opts.reference_source,
    };
    let spread = f_obs.values.min_max().map_or(0.0, |(lo, hi)| hi - lo);
    let cube = (c * spread).max(1.0);

    let runs: Vec<GeometryEstimate> = (0..opts.num_restarts)
        .into_par_iter()
        .map(|restart| {
            let x0 = starting_point(init, m, n, cube, restart, opts);
            let mut est = levenberg_marquardt(&problem, x0, opts);
            est.restart = restart;
            est
        })
        .collect();

    let mut best: Option<GeometryEstimate> = None;
    for run in runs {
        match &best {
            Some(b) if run.final_cost.total_cmp(&b.final_cost).is_ge() => {}
            _ => best = Some(run),
        }
    }
    Ok(best.expect("at least one restart"))
}

fn starting_point(
    init: &Init,
    m: usize,
    n: usize,
    cube: f64,
    restart: usize,
    opts: &SolveOptions,
) -> Vec<f64> {
    let mut rng = rng_from_seed(mix_seed(opts.seed, restart as u64));
    match init {
        Init::Positions { mics, srcs } => {
            let mut x = flatten_positions(mics, srcs);
            if restart > 0 {
                for v in &mut x {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v += opts.restart_jitter * z;
                }
            }
            x
        }
        Init::Random => (0..3 * (m + n))
            .map(|_| cube * rng.random::<f64>())
            .collect(),
    }
}

fn levenberg_marquardt(
    problem: &Problem<'_>,
    mut x: Vec<f64>,
    opts: &SolveOptions,
) -> GeometryEstimate {
    let finish = |x: &[f64], cost: f64, iterations: usize, converged: bool| {
        let (mics, srcs) = unflatten_positions(x, problem.num_mics());
        GeometryEstimate {
            mics,
            srcs,
            final_cost: cost,
            iterations,
            converged,
            restart: 0,
        }
    };

    let mut e = problem.errors(&x);
    let mut cost = e.norm_squared();
    if cost <= opts.cost_tolerance {
        return finish(&x, cost, 0, true);
    }

    let p = problem.num_params();
    let mut lambda: Option<f64> = None;
    let mut nu = 2.0;
    for iteration in 1..=opts.max_iterations {
        let jac = problem.jacobian(&x);
        let jtj = jac.tr_mul(&jac);
        let neg_grad = -jac.tr_mul(&e);
        let scale = jtj.diagonal().max().max(f64::MIN_POSITIVE);
        let lam = *lambda.get_or_insert(opts.initial_damping * scale);

        let mut damped = jtj.clone();
        for d in 0..p {
            damped[(d, d)] += lam;
        }
        let step = match damped.cholesky() {
            Some(chol) => chol.solve(&neg_grad),
            None => {
                lambda = Some(lam * nu);
                nu *= 2.0;
                continue;
            }
        };

        let x_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let small_step = step.norm() <= opts.step_tolerance * (x_norm + opts.step_tolerance);
        let candidate: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        let e_new = problem.errors(&candidate);
        let cost_new = e_new.norm_squared();

        if cost_new.is_finite() && cost_new < cost {
            let decrease = cost - cost_new;
            x = candidate;
            e = e_new;
            cost = cost_new;
            lambda = Some((lam / 3.0).max(scale * 1e-15));
            nu = 2.0;
            if cost <= opts.cost_tolerance || decrease <= opts.cost_tolerance || small_step {
                return finish(&x, cost, iteration, true);
            }
        } else {
            if small_step {
                // no downhill step left at this resolution
                return finish(&x, cost, iteration, true);
            }
            lambda = Some(lam * nu);
            nu *= 2.0;
        }
    }
    finish(&x, cost, opts.max_iterations, false)
}

/// RMSE between two point clouds after the best rigid alignment, reflections allowed.
///
/// Both clouds are centered; the orthogonal matrix comes from the SVD of their
/// cross-covariance.
pub fn procrustes_rmse(est: &[Point], truth: &[Point]) -> Result<f64> {
    if est.is_empty() || est.len() != truth.len() {
        return Err(Error::Shape(format!(
            "cannot align {} points onto {}",
            est.len(),
            truth.len()
        )));
    }
    let n = est.len() as f64;
    let est_mean = est.iter().sum::<Point>() / n;
    let truth_mean = truth.iter().sum::<Point>() / n;
    let cross: Matrix3<f64> = est
        .iter()
        .zip(truth)
        .map(|(e, t)| (t - truth_mean) * (e - est_mean).transpose())
        .sum();
    let svd = cross.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Numeric("SVD did not converge".into())),
    };
    let rotation = u * v_t;
    let sum_sq: f64 = est
        .iter()
        .zip(truth)
        .map(|(e, t)| (rotation * (e - est_mean) - (t - truth_mean)).norm_squared())
        .sum();
    Ok((sum_sq / n).sqrt())
}
