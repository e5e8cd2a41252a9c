use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::stats::LN_2PI;

/// Multivariate normal with mean, covariance, and cached precision, Cholesky
/// factor, and log determinant. Construction fails unless the matrix is
/// symmetric positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLaw {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    precision: DMatrix<f64>,
    chol_lower: DMatrix<f64>,
    log_det_cov: f64,
}

const SYMMETRY_TOL: f64 = 1e-10;

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    let scale = m.diagonal().amax().max(1.0);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::NotPositiveDefinite);
            }
        }
    }
    Ok(())
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (m + m.transpose())
}

impl GaussianLaw {
    pub fn from_mean_cov(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let k = mean.len();
        if covariance.nrows() != k || covariance.ncols() != k {
            return Err(Error::Dimension {
                expected: k,
                got: covariance.nrows(),
            });
        }
        check_symmetric(&covariance)?;
        let covariance = symmetrize(&covariance);
        let chol = Cholesky::new(covariance.clone()).ok_or(Error::NotPositiveDefinite)?;
        let log_det_cov = chol_log_det(&chol);
        let precision = chol.inverse();
        Ok(GaussianLaw {
            mean,
            chol_lower: chol.unpack(),
            covariance,
            precision,
            log_det_cov,
        })
    }

    pub fn from_mean_precision(mean: DVector<f64>, precision: DMatrix<f64>) -> Result<Self> {
        let k = mean.len();
        if precision.nrows() != k || precision.ncols() != k {
            return Err(Error::Dimension {
                expected: k,
                got: precision.nrows(),
            });
        }
        check_symmetric(&precision)?;
        let precision = symmetrize(&precision);
        let prec_chol = Cholesky::new(precision.clone()).ok_or(Error::NotPositiveDefinite)?;
        let covariance = symmetrize(&prec_chol.inverse());
        let chol = Cholesky::new(covariance.clone()).ok_or(Error::NotPositiveDefinite)?;
        let log_det_cov = -chol_log_det(&prec_chol);
        Ok(GaussianLaw {
            mean,
            chol_lower: chol.unpack(),
            covariance,
            precision,
            log_det_cov,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn log_det_cov(&self) -> f64 {
        self.log_det_cov
    }

    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        let d = x - &self.mean;
        let quad = (&self.precision * &d).dot(&d);
        -0.5 * (self.dim() as f64 * LN_2PI + self.log_det_cov + quad)
    }

    pub fn sample(&self, rng: &mut Stream) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| StandardNormal.sample(rng));
        &self.mean + &self.chol_lower * z
    }

    /// Largest entry of |cov * prec - I|, used by consistency tests.
    pub fn inverse_residual(&self) -> f64 {
        let k = self.dim();
        let r = &self.covariance * &self.precision - DMatrix::<f64>::identity(k, k);
        r.amax()
    }
}

fn chol_log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}
