//! Sample and residual covariance matrices.

use num_complex::Complex64;
use thiserror::Error;

use crate::linalg::{CMatrix, LinalgError};
use crate::scene::ObservationSet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CovarianceError {
    #[error("observation set has no snapshots")]
    Empty,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// `R = (1/DQ) Σ y y†` together with the number of snapshots averaged.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleCovariance {
    pub matrix: CMatrix,
    pub num_snapshots: usize,
}

impl SampleCovariance {
    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }
}

/// Averages snapshot outer products. The result is exactly Hermitian: only
/// the upper triangle is accumulated and mirrored.
pub fn sample_covariance(obs: &ObservationSet) -> Result<SampleCovariance, CovarianceError> {
    let m = obs.num_antennas;
    let n = obs.num_snapshots();
    if n == 0 || m == 0 || obs.snapshots.len() != n * m {
        return Err(CovarianceError::Empty);
    }
    let mut acc = vec![Complex64::new(0.0, 0.0); m * m];
    for y in obs.iter_snapshots() {
        for i in 0..m {
            let yi = y[i];
            let row = &mut acc[i * m..(i + 1) * m];
            for j in i..m {
                row[j] += yi * y[j].conj();
            }
        }
    }
    let inv = 1.0 / n as f64;
    let mut matrix = CMatrix::zeros(m, m);
    for i in 0..m {
        matrix[(i, i)] = Complex64::new(acc[i * m + i].re * inv, 0.0);
        for j in (i + 1)..m {
            let v = acc[i * m + j] * inv;
            matrix[(i, j)] = v;
            matrix[(j, i)] = v.conj();
        }
    }
    Ok(SampleCovariance {
        matrix,
        num_snapshots: n,
    })
}

/// `P⊥ R P⊥`, symmetrised to remove rounding asymmetry.
pub fn residual_covariance(
    r: &SampleCovariance,
    p_perp: &CMatrix,
) -> Result<CMatrix, CovarianceError> {
    let m = r.dim();
    if p_perp.rows() != m || p_perp.cols() != m {
        return Err(LinalgError::Dimension {
            expected: format!("{m}x{m} projector"),
            got: format!("{}x{}", p_perp.rows(), p_perp.cols()),
        }
        .into());
    }
    let mut out = &(p_perp * &r.matrix) * p_perp;
    out.symmetrize();
    Ok(out)
}
