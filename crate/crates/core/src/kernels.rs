//! Tensor-product Matérn covariance kernels and constant mean functions.

use faer::Mat;

use crate::designs::Design;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelFamily {
    /// Matérn with smoothness 3/2.
    Matern32,
    /// Matérn with smoothness 5/2.
    Matern52,
}

impl KernelFamily {
    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Matern32 => "matern32",
            KernelFamily::Matern52 => "matern52",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "matern32" | "matern3_2" => Ok(KernelFamily::Matern32),
            "matern52" | "matern5_2" => Ok(KernelFamily::Matern52),
            other => Err(Error::InvalidArgument(format!("unknown kernel family {other}"))),
        }
    }

    /// One-dimensional correlation at scaled distance `h >= 0`.
    #[inline]
    pub fn correlation(self, h: f64) -> f64 {
        match self {
            KernelFamily::Matern32 => {
                let s = 3f64.sqrt() * h;
                (1.0 + s) * (-s).exp()
            }
            KernelFamily::Matern52 => {
                let s = 5f64.sqrt() * h;
                (1.0 + s + s * s / 3.0) * (-s).exp()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    family: KernelFamily,
    variance: f64,
    lengthscales: Vec<f64>,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, variance: f64, lengthscales: Vec<f64>) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::InvalidArgument(format!("kernel variance must be positive, got {variance}")));
        }
        if lengthscales.is_empty() {
            return Err(Error::InvalidArgument("kernel needs at least one lengthscale".into()));
        }
        if let Some(t) = lengthscales.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return Err(Error::InvalidArgument(format!("lengthscale must be positive, got {t}")));
        }
        Ok(Self { family, variance, lengthscales })
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// Same correlation structure with a different variance.
    pub fn with_variance(&self, variance: f64) -> Result<Self> {
        Self::new(self.family, variance, self.lengthscales.clone())
    }

    /// Correlation (unit variance); dimensions are not checked.
    #[inline]
    pub fn corr(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut prod = 1.0;
        for ((a, b), t) in x.iter().zip(y).zip(&self.lengthscales) {
            prod *= self.family.correlation((a - b).abs() / t);
        }
        prod
    }

    /// Covariance; dimensions are not checked.
    #[inline]
    pub fn cov(&self, x: &[f64], y: &[f64]) -> f64 {
        self.variance * self.corr(x, y)
    }
}

/// Constant mean. `estimated` marks an unknown constant profiled out by
/// ordinary kriging; otherwise the value is treated as known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSpec {
    pub constant: f64,
    pub estimated: bool,
}

impl MeanSpec {
    pub fn known(constant: f64) -> Self {
        Self { constant, estimated: false }
    }

    pub fn unknown() -> Self {
        Self { constant: 0.0, estimated: true }
    }
}

pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    check_dim(spec.dim(), x.len())?;
    check_dim(spec.dim(), y.len())?;
    Ok(spec.cov(x, y))
}

pub fn kernel_matrix(spec: &KernelSpec, a: &Design, b: &Design) -> Result<Mat<f64>> {
    check_dim(spec.dim(), a.dim())?;
    check_dim(spec.dim(), b.dim())?;
    Ok(Mat::from_fn(a.len(), b.len(), |i, j| spec.cov(a.point(i), b.point(j))))
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
