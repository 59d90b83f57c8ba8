//! Analytic benchmarks on the unit cube.
//!
//! Constants are the standard ones from Dixon & Szegö as tabulated by
//! Jones, Schonlau & Welch (1998) "Efficient global optimization of expensive
//! black-box functions".

use std::f64::consts::PI;

use crate::criterion::ExcursionSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BenchmarkName {
    BraninNeg,
    Hartmann6Log,
}

impl BenchmarkName {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "branin" | "branin_neg" => Ok(BenchmarkName::BraninNeg),
            "hartmann6" | "hartmann6_log" | "hartman6" => Ok(BenchmarkName::Hartmann6Log),
            other => Err(Error::InvalidArgument(format!("unknown benchmark {other}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BenchmarkName::BraninNeg => "branin_neg",
            BenchmarkName::Hartmann6Log => "hartmann6_log",
        }
    }
}

/// A test function together with its default experiment fixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Benchmark {
    pub name: BenchmarkName,
    pub dim: usize,
    pub threshold: ExcursionSpec,
    pub n_obs: usize,
}

impl Benchmark {
    pub fn branin() -> Self {
        Self { name: BenchmarkName::BraninNeg, dim: 2, threshold: ExcursionSpec::above(-10.0), n_obs: 20 }
    }

    pub fn hartmann() -> Self {
        Self { name: BenchmarkName::Hartmann6Log, dim: 6, threshold: ExcursionSpec::above(6.0), n_obs: 60 }
    }

    pub fn by_name(name: BenchmarkName) -> Self {
        match name {
            BenchmarkName::BraninNeg => Self::branin(),
            BenchmarkName::Hartmann6Log => Self::hartmann(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: x.len() });
        }
        match self.name {
            BenchmarkName::BraninNeg => Ok(branin_neg([x[0], x[1]])),
            BenchmarkName::Hartmann6Log => hartmann6_log(x.try_into().expect("length checked")),
        }
    }
}

/// Branin-Hoo on its usual domain `[-5, 10] x [0, 15]`.
pub fn branin(x1: f64, x2: f64) -> f64 {
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let t = 1.0 / (8.0 * PI);
    let q = x2 - b * x1 * x1 + c * x1 - 6.0;
    q * q + 10.0 * (1.0 - t) * x1.cos() + 10.0
}

/// Negated Branin-Hoo with the domain mapped onto `[0, 1]^2`.
pub fn branin_neg(u: [f64; 2]) -> f64 {
    -branin(15.0 * u[0] - 5.0, 15.0 * u[1])
}

const H6_ALPHA: [f64; 4] = [1.0, 1.2, 3.0, 3.2];
const H6_A: [[f64; 6]; 4] = [
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
];
const H6_P: [[f64; 6]; 4] = [
    [0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886],
    [0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991],
    [0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650],
    [0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381],
];

/// Six-dimensional Hartmann function (negative everywhere, minimum -3.32237).
pub fn hartmann6(x: &[f64; 6]) -> f64 {
    -H6_ALPHA
        .iter()
        .zip(H6_A.iter().zip(&H6_P))
        .map(|(alpha, (a, p))| {
            let inner: f64 = (0..6).map(|j| a[j] * (x[j] - p[j]) * (x[j] - p[j])).sum();
            alpha * (-inner).exp()
        })
        .sum::<f64>()
}

/// `-log(-hartmann6(x))`.
pub fn hartmann6_log(x: &[f64; 6]) -> Result<f64> {
    let h = hartmann6(x);
    if h >= 0.0 {
        return Err(Error::Domain(format!("Hartmann value {h} is not negative")));
    }
    Ok(-(-h).ln())
}
