//! Dense factorization helpers shared by the GP and simulation code.

use faer::linalg::triangular_solve::solve_lower_triangular_in_place;
use faer::{Mat, MatRef, Par, Side};

use crate::error::{Error, Result};

/// Relative diagonal jitter ladder (multiplied by the prior variance).
pub const JITTER_LADDER: [f64; 3] = [1e-8, 1e-6, 1e-4];

/// Lower Cholesky factor of `a + jitter * scale * I`, escalating through
/// [`JITTER_LADDER`]. Returns the factor and the absolute jitter used.
pub fn cholesky_jittered(a: MatRef<'_, f64>, scale: f64) -> Result<(Mat<f64>, f64)> {
    let n = a.nrows();
    let mut last = 0.0;
    for rel in JITTER_LADDER {
        let jitter = rel * scale;
        last = jitter;
        let mut m = a.to_owned();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Ok(llt) = m.llt(Side::Lower) {
            return Ok((llt.L().to_owned(), jitter));
        }
    }
    Err(Error::NotPositiveDefinite { size: n, jitter: last })
}

/// Solves `L x = b` in place for a single right-hand side.
pub fn forward_solve(l: MatRef<'_, f64>, b: &mut [f64]) {
    let n = b.len();
    for i in 0..n {
        let mut s = b[i];
        for j in 0..i {
            s -= l[(i, j)] * b[j];
        }
        b[i] = s / l[(i, i)];
    }
}

/// Solves `L^T x = b` in place.
pub fn backward_solve_transposed(l: MatRef<'_, f64>, b: &mut [f64]) {
    let n = b.len();
    for i in (0..n).rev() {
        let mut s = b[i];
        for j in i + 1..n {
            s -= l[(j, i)] * b[j];
        }
        b[i] = s / l[(i, i)];
    }
}

/// `L^{-1} B` for a matrix right-hand side.
pub fn forward_solve_mat(l: MatRef<'_, f64>, mut b: Mat<f64>) -> Mat<f64> {
    solve_lower_triangular_in_place(l, b.as_mut(), Par::Seq);
    b
}

/// Lower-triangular Cholesky factor stored row by row, grown one point at a time.
///
/// Row `i` holds `L[i][0..=i]`. Cloning is cheap enough for the small
/// simulation designs this is used for.
#[derive(Debug, Clone, Default)]
pub struct GrowingCholesky {
    rows: Vec<Vec<f64>>,
}

impl GrowingCholesky {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.rows[i][i]
    }

    /// `L^{-1} b` for the current factor.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        for (i, row) in self.rows.iter().enumerate() {
            let s: f64 = row[..i].iter().zip(&x[..i]).map(|(a, b)| a * b).sum();
            x[i] = (x[i] - s) / row[i];
        }
    }

    /// Appends a point given `l = L^{-1} k(E, e)` and its Schur complement
    /// `k(e, e) - |l|^2`, which must exceed `min_pivot`.
    pub fn push(&mut self, mut l: Vec<f64>, schur: f64, min_pivot: f64) -> Result<()> {
        if !(schur > min_pivot) {
            return Err(Error::DegenerateUpdate { variance: schur });
        }
        l.push(schur.sqrt());
        self.rows.push(l);
        Ok(())
    }

    /// Dense copy of the factor.
    pub fn to_mat(&self) -> Mat<f64> {
        let n = self.len();
        Mat::from_fn(n, n, |i, j| if j <= i { self.rows[i][j] } else { 0.0 })
    }
}
