//! Dense row-major factor matrices and small `z × z` sampling routines.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng as _;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// A dense row-major matrix with one row per entity.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Contract(format!(
                "{} values cannot fill a {rows}×{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>, cols: usize) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Contract("ragged rows".into()));
            }
            data.extend(r);
        }
        Ok(Self {
            rows: n,
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

/// `Σ_k x_k y_k w_k`.
#[inline]
pub fn triple_dot(x: &[f64], y: &[f64], w: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .zip(w)
        .map(|((a, b), c)| a * b * c)
        .sum()
}

/// Cholesky factorization with one jitter retry of `1e-10 · trace · I`.
pub fn cholesky_jitter(m: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite(format!("{what} has non-finite entries")));
    }
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let n = m.nrows();
    let jitter = 1e-10 * m.trace().abs().max(f64::MIN_POSITIVE);
    let jittered = m + DMatrix::identity(n, n) * jitter;
    Cholesky::new(jittered).ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

/// Inverse of an SPD matrix.
pub fn spd_inverse(m: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    Ok(cholesky_jitter(m, what)?.inverse())
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn standard_normal_vector(n: usize, rng: &mut Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Draws from Wishart(`scale`, `nu`) with the Bartlett decomposition.
pub fn sample_wishart(scale: &DMatrix<f64>, nu: f64, rng: &mut Rng) -> Result<DMatrix<f64>> {
    let z = scale.nrows();
    if nu <= (z as f64) - 1.0 {
        return Err(Error::Config(format!(
            "Wishart degrees of freedom {nu} must exceed z - 1 = {}",
            z - 1
        )));
    }
    let l = cholesky_jitter(scale.clone(), "Wishart scale")?.l();
    let mut a = DMatrix::<f64>::zeros(z, z);
    for i in 0..z {
        let chi = ChiSquared::new(nu - i as f64).map_err(|e| Error::Config(e.to_string()))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let la = l * a;
    let mut out = &la * la.transpose();
    symmetrize(&mut out);
    Ok(out)
}

/// Draws `x ~ N(P^{-1} h, P^{-1})` given the precision `P` and `h = P μ`.
pub fn sample_mvn_precision(
    precision: DMatrix<f64>,
    h: &DVector<f64>,
    rng: &mut Rng,
    what: &str,
) -> Result<DVector<f64>> {
    let n = precision.nrows();
    let chol = cholesky_jitter(precision, what)?;
    let mean = chol.solve(h);
    let eps = standard_normal_vector(n, rng);
    let noise = chol
        .l()
        .transpose()
        .solve_upper_triangular(&eps)
        .ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))?;
    Ok(mean + noise)
}
