//! TOA/TDOA matrix synthesis.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scene::{rng_from_seed, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum TimingKind {
    Toa,
    /// Differences against the row of `ref_mic`.
    Tdoa {
        ref_mic: usize,
    },
}

impl TimingKind {
    pub fn name(&self) -> &'static str {
        match self {
            TimingKind::Toa => "TOA",
            TimingKind::Tdoa { .. } => "TDOA",
        }
    }
}

/// M x N timing matrix in seconds; rows are microphones, columns sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingMatrix {
    pub kind: TimingKind,
    pub values: Matrix,
}

impl TimingMatrix {
    pub fn toa(values: Matrix) -> Result<Self> {
        let m = Self {
            kind: TimingKind::Toa,
            values,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn tdoa(values: Matrix, ref_mic: usize) -> Result<Self> {
        let m = Self {
            kind: TimingKind::Tdoa { ref_mic },
            values,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn num_mics(&self) -> usize {
        self.values.rows()
    }

    pub fn num_srcs(&self) -> usize {
        self.values.cols()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.values.all_finite() {
            return Err(Error::Numeric(
                "timing matrix has non-finite entries".into(),
            ));
        }
        if let TimingKind::Tdoa { ref_mic } = self.kind {
            check_index("reference microphone", ref_mic, self.num_mics())?;
            if self.values.row(ref_mic).iter().any(|&v| v != 0.0) {
                return Err(Error::Numeric(format!(
                    "TDOA row of reference microphone {ref_mic} is not zero"
                )));
            }
        }
        Ok(())
    }
}

pub(crate) fn check_index(what: &'static str, index: usize, len: usize) -> Result<()> {
    if index < len {
        Ok(())
    } else {
        Err(Error::Index { what, index, len })
    }
}

/// `t[i][j] = |r_i - s_j| / c + eta_j - delta_i`.
pub fn synth_toa(scene: &Scene) -> TimingMatrix {
    let values = Matrix::from_fn(scene.num_mics(), scene.num_srcs(), |i, j| {
        (scene.mics[i] - scene.srcs[j]).norm() / scene.c + scene.eta[j] - scene.delta[i]
    });
    TimingMatrix {
        kind: TimingKind::Toa,
        values,
    }
}

/// `tau[i][j] = |r_i - s_j| / c - |r_k - s_j| / c + delta_k - delta_i` for reference mic `k`.
///
/// Emission times never enter the expression, and row `k` is exactly zero.
pub fn synth_tdoa(scene: &Scene, ref_mic: usize) -> Result<TimingMatrix> {
    check_index("reference microphone", ref_mic, scene.num_mics())?;
    let c = scene.c;
    let r_ref = &scene.mics[ref_mic];
    let values = Matrix::from_fn(scene.num_mics(), scene.num_srcs(), |i, j| {
        let s = &scene.srcs[j];
        let propagation = (scene.mics[i] - s).norm() / c - (r_ref - s).norm() / c;
        propagation + (scene.delta[ref_mic] - scene.delta[i])
    });
    Ok(TimingMatrix {
        kind: TimingKind::Tdoa { ref_mic },
        values,
    })
}

/// Subtracts the reference microphone's row from every row of a TOA matrix.
pub fn tdoa_from_toa(toa: &TimingMatrix, ref_mic: usize) -> Result<TimingMatrix> {
    if toa.kind != TimingKind::Toa {
        return Err(Error::Kind {
            expected: "TOA",
            found: toa.kind.name(),
        });
    }
    check_index("reference microphone", ref_mic, toa.num_mics())?;
    let t = &toa.values;
    let values = Matrix::from_fn(t.rows(), t.cols(), |i, j| t[(i, j)] - t[(ref_mic, j)]);
    Ok(TimingMatrix {
        kind: TimingKind::Tdoa { ref_mic },
        values,
    })
}

/// Adds i.i.d. zero-mean Gaussian noise with standard deviation `sigma` seconds.
///
/// The reference row of a TDOA matrix is perturbed too, so the result is
/// tagged with the same kind but no longer satisfies the zero-row invariant
/// unless `sigma == 0`.
pub fn add_noise(m: &TimingMatrix, sigma: f64, seed: u64) -> Result<TimingMatrix> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::Config(format!(
            "noise standard deviation must be non-negative, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(m.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = rng_from_seed(seed);
    Ok(TimingMatrix {
        kind: m.kind,
        values: m.values.map(|v| v + normal.sample(&mut rng)),
    })
}
