//! Loading measured TOA matrices and injecting synthetic clock offsets.
//!
//! Input files are plain numeric CSV: comma separated, period decimal point,
//! one microphone per row, one source per column, optional trailing newline.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapping::{MapSource, MappedMatrix};
use crate::matrix::Matrix;
use crate::scene::{draw_offsets, rng_from_seed};
use crate::timing::{TimingKind, TimingMatrix};

/// Shape of the public office recording: 12 microphones, 65 loudspeaker positions.
pub const REAL_DATA_SHAPE: (usize, usize) = (12, 65);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsvOptions {
    /// Skip the first line.
    pub header: bool,
    /// Multiplier applied to every parsed value.
    pub scale: f64,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            header: false,
            scale: 1.0,
        }
    }
}

/// Reads a rectangular numeric CSV file. Rows and columns in errors are 1-based
/// and count physical lines, so a skipped header is line 1.
pub fn read_matrix_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<Matrix> {
    let path = path.as_ref();
    if !(opts.scale.is_finite() && opts.scale != 0.0) {
        return Err(Error::Config(format!(
            "invalid scale factor {}",
            opts.scale
        )));
    }
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(opts.header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let parse_err = |row: usize, column: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        column,
        message,
    };

    let mut cols = None;
    let mut rows = 0;
    let mut data = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let row = e.position().map_or(0, |p| p.line() as usize);
            parse_err(row, 0, e.to_string())
        })?;
        let line = record.position().map_or(rows + 1, |p| p.line() as usize);
        // blank lines come through as a single empty field
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match cols {
            None => cols = Some(record.len()),
            Some(n) if n != record.len() => {
                return Err(parse_err(
                    line,
                    record.len().min(n) + 1,
                    format!("expected {n} columns, found {}", record.len()),
                ));
            }
            Some(_) => {}
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, j + 1, format!("not a number: {field:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(
                    line,
                    j + 1,
                    format!("non-finite value {field:?}"),
                ));
            }
            data.push(v * opts.scale);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| parse_err(1, 0, "file contains no data rows".into()))?;
    Matrix::from_row_major(rows, cols, data)
}

/// Reads a TOA matrix with default CSV options.
pub fn load_toa_csv(path: impl AsRef<Path>) -> Result<TimingMatrix> {
    load_toa_csv_with(path, &CsvOptions::default())
}

pub fn load_toa_csv_with(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<TimingMatrix> {
    TimingMatrix::toa(read_matrix_csv(path, opts)?)
}

/// Reads a mapped matrix written by [`Matrix::write_csv`].
pub fn load_mapped_csv(path: impl AsRef<Path>) -> Result<MappedMatrix> {
    Ok(MappedMatrix {
        values: read_matrix_csv(path, &CsvOptions::default())?,
        source: MapSource::Observed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealDataset {
    pub toa: TimingMatrix,
    pub source_path: PathBuf,
}

impl RealDataset {
    pub fn load(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<Self> {
        let path = path.as_ref();
        Ok(Self {
            toa: load_toa_csv_with(path, opts)?,
            source_path: path.to_path_buf(),
        })
    }

    pub fn has_reference_shape(&self) -> bool {
        self.toa.values.shape() == REAL_DATA_SHAPE
    }
}

/// Offsets drawn by [`inject_offsets`], kept for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetAudit {
    pub delta: Vec<f64>,
    pub eta: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InjectedToa {
    pub toa: TimingMatrix,
    pub audit: OffsetAudit,
}

/// `out[i][j] = toa[i][j] + eta[j] - delta[i]` with `delta`, `eta` drawn
/// uniformly from `[-offset_range, offset_range]` (start times first).
pub fn inject_offsets(toa: &TimingMatrix, offset_range: f64, seed: u64) -> Result<InjectedToa> {
    if toa.kind != TimingKind::Toa {
        return Err(Error::Kind {
            expected: "TOA",
            found: toa.kind.name(),
        });
    }
    if !(offset_range.is_finite() && offset_range >= 0.0) {
        return Err(Error::Config(format!(
            "offset range must be finite and non-negative, got {offset_range}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let delta = draw_offsets(&mut rng, toa.num_mics(), offset_range);
    let eta = draw_offsets(&mut rng, toa.num_srcs(), offset_range);
    let t = &toa.values;
    let values = Matrix::from_fn(t.rows(), t.cols(), |i, j| t[(i, j)] + eta[j] - delta[i]);
    Ok(InjectedToa {
        toa: TimingMatrix {
            kind: TimingKind::Toa,
            values,
        },
        audit: OffsetAudit { delta, eta, seed },
    })
}
