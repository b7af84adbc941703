use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

/// Relative jitter ladder, as multiples of mean(diag K). The factorization is
/// tried without jitter first.
const JITTER_LADDER: [f64; 5] = [1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

/// Cholesky factor of a symmetric positive-definite matrix together with the
/// diagonal jitter that had to be added to obtain it.
#[derive(Clone, Debug)]
pub struct JitteredCholesky {
    pub factor: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

impl JitteredCholesky {
    pub fn new(matrix: &DMatrix<f64>) -> Result<Self> {
        if let Some(factor) = Cholesky::new(matrix.clone()) {
            return Ok(Self { factor, jitter: 0.0 });
        }
        let n = matrix.nrows().max(1);
        let mean_diag = (matrix.diagonal().sum() / n as f64).abs().max(f64::MIN_POSITIVE);
        let mut jitter = 0.0;
        for rel in JITTER_LADDER {
            jitter = rel * mean_diag;
            let mut m = matrix.clone();
            for i in 0..m.nrows() {
                m[(i, i)] += jitter;
            }
            if let Some(factor) = Cholesky::new(m) {
                return Ok(Self { factor, jitter });
            }
        }
        Err(Error::Conditioning { jitter })
    }

    pub fn l(&self) -> DMatrix<f64> {
        self.factor.l()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.factor.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}
