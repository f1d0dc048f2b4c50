//! Small dense matrices for coefficient values and covariances.
//!
//! Dimensions up to three are stored inline and inverted with closed-form
//! cofactor expressions; larger matrices go through a Cholesky factorization.

use smallvec::SmallVec;

pub type Point = SmallVec<[f64; 3]>;

pub fn point(coords: &[f64]) -> Point {
    SmallVec::from_slice(coords)
}

/// Row-major square matrix. Every constructor in this crate produces a
/// symmetric matrix; `symmetrize` absorbs rounding asymmetry.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: SmallVec<[f64; 9]>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: SmallVec::from_elem(0.0, dim * dim),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn scaled_identity(dim: usize, c: f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = c;
        }
        m
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, v) in diag.iter().enumerate() {
            m.set(i, i, *v);
        }
        m
    }

    /// Builds from rows; the result is symmetrized.
    pub fn from_rows(rows: &[Vec<f64>]) -> Option<Self> {
        let dim = rows.len();
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return None;
        }
        let mut m = Self::zeros(dim);
        for (i, r) in rows.iter().enumerate() {
            for (j, v) in r.iter().enumerate() {
                m.data[i * dim + j] = *v;
            }
        }
        m.symmetrize();
        Some(m)
    }

    /// Builds from the upper triangle listed row by row (a11, a12, ..., a22, ...).
    pub fn from_upper(dim: usize, upper: &[f64]) -> Option<Self> {
        if upper.len() != dim * (dim + 1) / 2 {
            return None;
        }
        let mut m = Self::zeros(dim);
        let mut k = 0;
        for i in 0..dim {
            for j in i..dim {
                m.set(i, j, upper[k]);
                m.set(j, i, upper[k]);
                k += 1;
            }
        }
        Some(m)
    }

    pub fn upper(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim * (self.dim + 1) / 2);
        for i in 0..self.dim {
            for j in i..self.dim {
                out.push(self.get(i, j));
            }
        }
        out
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn symmetrize(&mut self) {
        let d = self.dim;
        for i in 0..d {
            for j in (i + 1)..d {
                let m = 0.5 * (self.data[i * d + j] + self.data[j * d + i]);
                self.data[i * d + j] = m;
                self.data[j * d + i] = m;
            }
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= c);
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        debug_assert_eq!(self.dim, other.dim);
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(other.data.iter()) {
            *a += *b;
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        debug_assert_eq!(self.dim, other.dim);
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(other.data.iter()) {
            *a -= *b;
        }
        out
    }

    pub fn add_scaled(&mut self, other: &Self, c: f64) {
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += c * *b;
        }
    }

    /// Entrywise maximum absolute value; the norm used for all moduli.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// Frobenius inner product sum_ij a_ij b_ij.
    pub fn contract(&self, other: &Self) -> f64 {
        self.data.iter().zip(other.data.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn mat_vec(&self, z: &[f64]) -> Point {
        let d = self.dim;
        let mut out = Point::from_elem(0.0, d);
        for i in 0..d {
            let mut acc = 0.0;
            for j in 0..d {
                acc += self.data[i * d + j] * z[j];
            }
            out[i] = acc;
        }
        out
    }

    pub fn quad_form(&self, z: &[f64]) -> f64 {
        let d = self.dim;
        let mut acc = 0.0;
        for i in 0..d {
            let mut row = 0.0;
            for j in 0..d {
                row += self.data[i * d + j] * z[j];
            }
            acc += z[i] * row;
        }
        acc
    }

    pub fn determinant(&self) -> f64 {
        let a = &self.data;
        match self.dim {
            0 => 1.0,
            1 => a[0],
            2 => a[0] * a[3] - a[1] * a[2],
            3 => {
                a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6])
                    + a[2] * (a[3] * a[7] - a[4] * a[6])
            }
            _ => match self.cholesky() {
                Some(chol) => chol.l().diagonal().iter().map(|v| v * v).product(),
                None => self.to_nalgebra().determinant(),
            },
        }
    }

    /// Inverse of a symmetric positive-definite matrix. Returns `None` when
    /// the matrix is singular (or, for d > 3, not positive definite).
    pub fn inverse(&self) -> Option<Self> {
        let a = &self.data;
        let d = self.dim;
        let det = self.determinant();
        if d <= 3 && (det == 0.0 || !det.is_finite()) {
            return None;
        }
        let mut out = Self::zeros(d);
        match d {
            1 => out.data[0] = 1.0 / a[0],
            2 => {
                out.data[0] = a[3] / det;
                out.data[1] = -a[1] / det;
                out.data[2] = -a[2] / det;
                out.data[3] = a[0] / det;
            }
            3 => {
                out.data[0] = (a[4] * a[8] - a[5] * a[7]) / det;
                out.data[1] = (a[2] * a[7] - a[1] * a[8]) / det;
                out.data[2] = (a[1] * a[5] - a[2] * a[4]) / det;
                out.data[3] = (a[5] * a[6] - a[3] * a[8]) / det;
                out.data[4] = (a[0] * a[8] - a[2] * a[6]) / det;
                out.data[5] = (a[2] * a[3] - a[0] * a[5]) / det;
                out.data[6] = (a[3] * a[7] - a[4] * a[6]) / det;
                out.data[7] = (a[1] * a[6] - a[0] * a[7]) / det;
                out.data[8] = (a[0] * a[4] - a[1] * a[3]) / det;
            }
            _ => {
                let inv = self.cholesky()?.inverse();
                for i in 0..d {
                    for j in 0..d {
                        out.data[i * d + j] = inv[(i, j)];
                    }
                }
            }
        }
        out.symmetrize();
        Some(out)
    }

    fn to_nalgebra(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.dim, self.dim, &self.data)
    }

    fn cholesky(&self) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        self.to_nalgebra().cholesky()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sample(d: usize) -> SymMatrix {
        let mut m = SymMatrix::scaled_identity(d, 2.0 + d as f64);
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    m.set(i, j, 0.3 / (1.0 + (i + j) as f64));
                }
            }
        }
        m
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        for d in 1..=5 {
            let m = sample(d);
            let inv = m.inverse().unwrap();
            for i in 0..d {
                for j in 0..d {
                    let v: f64 = (0..d).map(|k| m.get(i, k) * inv.get(k, j)).sum();
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert_relative_eq!(v, expect, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn determinant_paths_agree() {
        for d in 1..=5 {
            let m = sample(d);
            assert_relative_eq!(
                m.determinant(),
                m.to_nalgebra().determinant(),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn singular_matrix_has_no_inverse() {
        let m = SymMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(m.inverse().is_none());
    }

    #[test]
    fn upper_round_trip() {
        let m = SymMatrix::from_upper(2, &[1.0, 0.5, 3.0]).unwrap();
        assert_eq!(m.get(1, 0), 0.5);
        assert_eq!(m.upper(), vec![1.0, 0.5, 3.0]);
    }
}
