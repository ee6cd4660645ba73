//! The offset-cancelling mapping `f` and its closed form.
//!
//! For a timing matrix `m` (TOA or TDOA) and a reference source `k`,
//!
//! ```text
//! d[i][j] = m[i][j] - m[i][k]
//! f[i][j] = d[i][j] - (1/M) * sum_i d[i][j]
//! ```
//!
//! Subtracting the reference column removes every per-microphone offset,
//! subtracting the column mean removes every per-source offset. What is left
//! depends on geometry only:
//!
//! ```text
//! x[i]    = |r_i - s_k| / c
//! y[i][j] = |r_i - s_j| / c
//! f[i][j] = (y[i][j] - mean_i y[i][j]) - (x[i] - mean_i x[i])
//! ```
//!
//! and TOA and TDOA inputs produce the same `f`. [`map_timing`] implements the
//! first form, [`closed_form_map`] the second; the two share no code.
//!
//! All column means use sequential summation in row order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scene::{scene_diameter, Point, Scene};
use crate::timing::{check_index, TimingKind, TimingMatrix};

/// Which route produced a [`MappedMatrix`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapSource {
    FromToa,
    FromTdoa,
    ClosedForm,
    /// Read from a file; provenance unknown.
    Observed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappedMatrix {
    pub values: Matrix,
    pub source: MapSource,
}

impl MappedMatrix {
    pub fn num_mics(&self) -> usize {
        self.values.rows()
    }

    pub fn num_srcs(&self) -> usize {
        self.values.cols()
    }
}

/// Geometry-determined quantities that put `f` in TOA-like form:
/// `f[i][j] = y[i][j] - delta_dot[i] + eta_dot[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedOffsets {
    /// `|r_i - s_k| / c`.
    pub delta_dot: Vec<f64>,
    /// `mean_i (|r_i - s_k| - |r_i - s_j|) / c`.
    pub eta_dot: Vec<f64>,
    /// `|r_i - s_k| / c`, the same numbers as `delta_dot`.
    pub x: Vec<f64>,
    /// `|r_i - s_j| / c`.
    pub y: Matrix,
}

impl DerivedOffsets {
    /// `y[i][j] - delta_dot[i] + eta_dot[j]`.
    pub fn toa_like_form(&self) -> Matrix {
        Matrix::from_fn(self.y.rows(), self.y.cols(), |i, j| {
            self.y[(i, j)] - self.delta_dot[i] + self.eta_dot[j]
        })
    }
}

/// Applies `f` to a TOA or TDOA matrix using reference source `ref_src`.
pub fn map_timing(m: &TimingMatrix, ref_src: usize) -> Result<MappedMatrix> {
    let source = match m.kind {
        TimingKind::Toa => MapSource::FromToa,
        TimingKind::Tdoa { .. } => MapSource::FromTdoa,
    };
    Ok(MappedMatrix {
        values: map_values(&m.values, ref_src)?,
        source,
    })
}

/// The arithmetic of [`map_timing`] on a bare matrix.
pub fn map_values(t: &Matrix, ref_src: usize) -> Result<Matrix> {
    let (rows, cols) = t.shape();
    if rows == 0 || cols == 0 {
        return Err(Error::Shape(format!(
            "cannot map an empty {rows}x{cols} matrix"
        )));
    }
    check_index("reference source", ref_src, cols)?;

    let diff = Matrix::from_fn(rows, cols, |i, j| t[(i, j)] - t[(i, ref_src)]);
    let means = column_means_of(&diff);
    Ok(Matrix::from_fn(rows, cols, |i, j| diff[(i, j)] - means[j]))
}

/// `(y[i][j] - mean_i y[i][j]) - (x[i] - mean_i x[i])`, from positions alone.
pub fn closed_form_map(scene: &Scene, ref_src: usize) -> Result<MappedMatrix> {
    check_index("reference source", ref_src, scene.num_srcs())?;
    Ok(MappedMatrix {
        values: closed_form_values(&scene.mics, &scene.srcs, scene.c, ref_src),
        source: MapSource::ClosedForm,
    })
}

pub(crate) fn closed_form_values(mics: &[Point], srcs: &[Point], c: f64, ref_src: usize) -> Matrix {
    let (m, n) = (mics.len(), srcs.len());
    let y = range_times(mics, srcs, c);
    let y_mean = column_means_of(&y);
    let x: Vec<f64> = (0..m).map(|i| y[(i, ref_src)]).collect();
    let x_mean = y_mean[ref_src];
    Matrix::from_fn(m, n, |i, j| (y[(i, j)] - y_mean[j]) - (x[i] - x_mean))
}

fn range_times(mics: &[Point], srcs: &[Point], c: f64) -> Matrix {
    Matrix::from_fn(mics.len(), srcs.len(), |i, j| {
        (mics[i] - srcs[j]).norm() / c
    })
}

pub fn derived_offsets(scene: &Scene, ref_src: usize) -> Result<DerivedOffsets> {
    check_index("reference source", ref_src, scene.num_srcs())?;
    let y = range_times(&scene.mics, &scene.srcs, scene.c);
    let (m, n) = y.shape();
    let x: Vec<f64> = (0..m).map(|i| y[(i, ref_src)]).collect();
    let eta_dot = (0..n)
        .map(|j| {
            let mut sum = 0.0;
            for i in 0..m {
                sum += x[i] - y[(i, j)];
            }
            sum / m as f64
        })
        .collect();
    Ok(DerivedOffsets {
        delta_dot: x.clone(),
        eta_dot,
        x,
        y,
    })
}

/// `a - b` elementwise.
pub fn residual(a: &MappedMatrix, b: &MappedMatrix) -> Result<Matrix> {
    a.values.sub(&b.values)
}

pub fn column_means(m: &MappedMatrix) -> Vec<f64> {
    column_means_of(&m.values)
}

/// Per-column mean with sequential summation from row 0 down.
pub fn column_means_of(m: &Matrix) -> Vec<f64> {
    let (rows, cols) = m.shape();
    let mut sums = vec![0.0; cols];
    for row in m.iter_rows() {
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v;
        }
    }
    let scale = rows as f64;
    sums.into_iter().map(|s| s / scale).collect()
}

/// Upper bound on `max |f|` for a scene: `2 * diameter / c`.
pub fn analytic_bound(scene: &Scene) -> f64 {
    2.0 * scene_diameter(scene) / scene.c
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;
    use crate::scene::{generate_scene, normalize_scene, SceneConfig};
    use crate::timing::{synth_tdoa, synth_toa};

    // 1 - 1/sqrt(2): column 1 of the hand scene after mapping
    const F01: f64 = 0.292_893_218_813_452_5;

    fn hand_scene(delta: [f64; 2], eta: [f64; 2]) -> Scene {
        Scene {
            mics: vec![Point::zeros(), Point::new(1.0, 0.0, 0.0)],
            srcs: vec![Point::zeros(), Point::new(0.0, 1.0, 0.0)],
            delta: delta.to_vec(),
            eta: eta.to_vec(),
            c: 1.0,
        }
    }

    fn assert_hand_mapping(m: &Matrix, tol: f64) {
        assert_eq!(m.shape(), (2, 2));
        assert_eq!(m[(0, 0)], 0.0);
        assert_eq!(m[(1, 0)], 0.0);
        assert_abs_diff_eq!(m[(0, 1)], F01, epsilon = tol);
        assert_abs_diff_eq!(m[(1, 1)], -F01, epsilon = tol);
    }

    #[test]
    fn hand_oracle_all_routes() {
        let zero = TimingMatrix::toa(
            Matrix::from_rows(&[[0.0, 1.0], [1.0, std::f64::consts::SQRT_2]]).unwrap(),
        )
        .unwrap();
        let mapped = map_timing(&zero, 0).unwrap();
        assert_eq!(mapped.source, MapSource::FromToa);
        assert_hand_mapping(&mapped.values, 1e-15);

        // rounded inputs, so only 1e-8 agreement is expected
        let shifted =
            TimingMatrix::toa(Matrix::from_rows(&[[0.2, 0.8], [1.7, 1.71421356]]).unwrap())
                .unwrap();
        assert_hand_mapping(&map_timing(&shifted, 0).unwrap().values, 1e-8);

        let tdoa = TimingMatrix::tdoa(
            Matrix::from_rows(&[[0.0, 0.0], [1.5, 0.91421356]]).unwrap(),
            0,
        )
        .unwrap();
        let mapped = map_timing(&tdoa, 0).unwrap();
        assert_eq!(mapped.source, MapSource::FromTdoa);
        assert_hand_mapping(&mapped.values, 1e-8);

        let scene = hand_scene([0.3, -0.2], [0.5, 0.1]);
        assert_hand_mapping(&closed_form_map(&scene, 0).unwrap().values, 1e-15);
        assert_hand_mapping(&map_timing(&synth_toa(&scene), 0).unwrap().values, 1e-15);
        assert_hand_mapping(
            &map_timing(&synth_tdoa(&scene, 0).unwrap(), 0)
                .unwrap()
                .values,
            1e-15,
        );
    }

    #[test]
    fn ref_src_out_of_range() {
        let scene = hand_scene([0.0; 2], [0.0; 2]);
        assert!(matches!(
            map_timing(&synth_toa(&scene), 2),
            Err(Error::Index {
                what: "reference source",
                ..
            })
        ));
        assert!(closed_form_map(&scene, 5).is_err());
        assert!(derived_offsets(&scene, 2).is_err());
    }

    #[test]
    fn derived_offsets_hand_oracle() {
        let d = derived_offsets(&hand_scene([0.0; 2], [0.0; 2]), 0).unwrap();
        assert_eq!(d.delta_dot, vec![0.0, 1.0]);
        assert_eq!(d.eta_dot[0], 0.0);
        assert_abs_diff_eq!(
            d.eta_dot[1],
            -std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-15
        );
        let toa_like = d.y[(0, 1)] - d.delta_dot[0] + d.eta_dot[1];
        assert_abs_diff_eq!(toa_like, F01, epsilon = 1e-15);
    }

    #[test]
    fn derived_offsets_invariants() {
        let scene = generate_scene(&SceneConfig::paper(4)).unwrap();
        for k in [0, 9] {
            let d = derived_offsets(&scene, k).unwrap();
            assert_eq!(d.eta_dot[k], 0.0);
            for i in 0..scene.num_mics() {
                assert_eq!(d.delta_dot[i], d.x[i]);
                assert_eq!(d.delta_dot[i], d.y[(i, k)]);
            }
            let closed = closed_form_map(&scene, k).unwrap();
            let diff = d.toa_like_form().sub(&closed.values).unwrap();
            assert!(diff.max_abs() < 1e-12);
        }
    }

    #[test]
    fn single_mic_maps_to_zero() {
        let scene = Scene::synchronous(
            vec![Point::new(1.0, 2.0, 0.5)],
            vec![
                Point::zeros(),
                Point::new(3.0, 1.0, 2.0),
                Point::new(0.0, 9.0, 1.0),
            ],
            340.0,
        )
        .unwrap();
        let closed = closed_form_map(&scene, 0).unwrap();
        assert!(closed.values.as_slice().iter().all(|&v| v == 0.0));
        let mapped = map_timing(&synth_toa(&scene), 0).unwrap();
        assert!(mapped.values.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn residual_and_column_means() {
        let scene = generate_scene(&SceneConfig::paper(8)).unwrap();
        let a = map_timing(&synth_toa(&scene), 0).unwrap();
        let self_diff = residual(&a, &a).unwrap();
        assert!(self_diff.as_slice().iter().all(|&v| v == 0.0));

        let b = map_timing(&synth_tdoa(&scene, 0).unwrap(), 0).unwrap();
        assert!(residual(&a, &b).unwrap().max_abs() < 1e-12);

        let small = closed_form_map(&hand_scene([0.0; 2], [0.0; 2]), 0).unwrap();
        assert!(matches!(residual(&a, &small), Err(Error::Shape(_))));
        let means = column_means(&small);
        assert_eq!(means.len(), 2);
        assert!(means.iter().all(|m| m.abs() < 1e-15));

        let zeros = MappedMatrix {
            values: Matrix::zeros(3, 4),
            source: MapSource::Observed,
        };
        assert_eq!(column_means(&zeros), vec![0.0; 4]);
    }

    #[test]
    fn translation_does_not_change_mapping() {
        let scene = generate_scene(&SceneConfig::paper(21)).unwrap();
        let a = closed_form_map(&scene, 0).unwrap();
        let b = closed_form_map(&normalize_scene(&scene), 0).unwrap();
        assert!(residual(&a, &b).unwrap().max_abs() < 1e-12);
        let c = map_timing(&synth_toa(&normalize_scene(&scene)), 0).unwrap();
        assert!(residual(&a, &c).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn analytic_bound_holds() {
        for seed in 0..50 {
            let scene = generate_scene(&SceneConfig::paper(seed)).unwrap();
            let f = closed_form_map(&scene, 0).unwrap();
            assert!(f.values.max_abs() <= analytic_bound(&scene));
        }
    }
}
