//! Dense complex matrix used for every channel, combiner and factor matrix.
//!
//! Storage is delegated to `faer`; the JSON form is row-major:
//! `{"rows": r, "cols": c, "data": [[re, im], ...]}`.

use std::fmt::Write as _;
use std::ops::{Mul, Sub};

use faer::Mat;
use num_complex::Complex64;
use serde::de::Error as _;
use serde::ser::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::value::RawValue;

use crate::error::{dim_err, Result, WaxError};

pub type C64 = Complex64;

/// Formats a float with 17 significant digits, as used by every writer in the crate.
pub fn full_precision(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix(Mat<C64>);

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self(Mat::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        Self(Mat::identity(n, n))
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> C64) -> Self {
        Self(Mat::from_fn(rows, cols, f))
    }

    /// Builds a matrix from row-major entries.
    pub fn from_row_major(rows: usize, cols: usize, data: &[C64]) -> Result<Self> {
        if data.len() != rows * cols {
            return dim_err(format!(
                "{} entries supplied for a {rows}x{cols} matrix",
                data.len()
            ));
        }
        Ok(Self::from_fn(rows, cols, |i, j| data[i * cols + j]))
    }

    /// Builds a real-valued matrix from row slices. Panics on ragged input.
    pub fn from_real_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        assert!(rows.iter().all(|r| r.as_ref().len() == cols), "ragged rows");
        Self::from_fn(rows.len(), cols, |i, j| C64::new(rows[i].as_ref()[j], 0.0))
    }

    /// Inverse of [`CMatrix::vec`]: fills a matrix column by column.
    pub fn from_col_major(rows: usize, cols: usize, data: &[C64]) -> Result<Self> {
        if data.len() != rows * cols {
            return dim_err(format!(
                "{} entries supplied for a {rows}x{cols} matrix",
                data.len()
            ));
        }
        Ok(Self::from_fn(rows, cols, |i, j| data[j * rows + i]))
    }

    pub fn from_faer(m: Mat<C64>) -> Self {
        Self(m)
    }

    pub fn as_faer(&self) -> &Mat<C64> {
        &self.0
    }

    pub fn into_faer(self) -> Mat<C64> {
        self.0
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows(), self.cols())
    }

    pub fn is_empty(&self) -> bool {
        self.rows() == 0 || self.cols() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.0[(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        self.0[(i, j)] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.row_major()
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub(crate) fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(WaxError::InvalidInput(format!(
                "{what} contains NaN or Inf entries"
            )))
        }
    }

    pub fn row_major(&self) -> Vec<C64> {
        let mut out = Vec::with_capacity(self.rows() * self.cols());
        for i in 0..self.rows() {
            for j in 0..self.cols() {
                out.push(self.get(i, j));
            }
        }
        out
    }

    /// Column-stacking vectorization.
    pub fn vec(&self) -> Vec<C64> {
        let mut out = Vec::with_capacity(self.rows() * self.cols());
        for j in 0..self.cols() {
            for i in 0..self.rows() {
                out.push(self.get(i, j));
            }
        }
        out
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint().to_owned())
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose().to_owned())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm_l2()
    }

    pub fn scale(&self, c: C64) -> Self {
        Self::from_fn(self.rows(), self.cols(), |i, j| c * self.get(i, j))
    }

    /// Matrix product with a shape check.
    pub fn try_mul(&self, rhs: &CMatrix) -> Result<CMatrix> {
        if self.cols() != rhs.rows() {
            return dim_err(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows(),
                self.cols(),
                rhs.rows(),
                rhs.cols()
            ));
        }
        Ok(Self(&self.0 * &rhs.0))
    }

    /// Rows `start..start + count`.
    pub fn row_block(&self, start: usize, count: usize) -> CMatrix {
        Self(self.0.subrows(start, count).to_owned())
    }

    pub fn select_rows(&self, rows: &[usize]) -> CMatrix {
        Self::from_fn(rows.len(), self.cols(), |i, j| self.get(rows[i], j))
    }

    pub fn select_cols(&self, cols: &[usize]) -> CMatrix {
        Self::from_fn(self.rows(), cols.len(), |i, j| self.get(i, cols[j]))
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn vstack(parts: &[CMatrix]) -> Result<CMatrix> {
        let cols = parts.first().map_or(0, CMatrix::cols);
        if parts.iter().any(|p| p.cols() != cols) {
            return dim_err("vstack operands have different column counts");
        }
        let rows: usize = parts.iter().map(CMatrix::rows).sum();
        let mut out = CMatrix::zeros(rows, cols);
        let mut offset = 0;
        for p in parts {
            for i in 0..p.rows() {
                for j in 0..cols {
                    out.set(offset + i, j, p.get(i, j));
                }
            }
            offset += p.rows();
        }
        Ok(out)
    }

    /// Relative Frobenius distance `‖self − other‖ / ‖other‖`.
    pub fn relative_error(&self, reference: &CMatrix) -> f64 {
        let denom = reference.frobenius_norm();
        let diff = (self - reference).frobenius_norm();
        if denom == 0.0 {
            diff
        } else {
            diff / denom
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = String::with_capacity(48 * self.rows() * self.cols() + 48);
        let _ = write!(
            s,
            "{{\"rows\": {}, \"cols\": {}, \"data\": [",
            self.rows(),
            self.cols()
        );
        for (idx, z) in self.row_major().iter().enumerate() {
            if idx > 0 {
                s.push_str(", ");
            }
            let _ = write!(s, "[{}, {}]", full_precision(z.re), full_precision(z.im));
        }
        s.push_str("]}");
        s
    }

    pub fn from_json(text: &str) -> Result<CMatrix> {
        Ok(serde_json::from_str(text)?)
    }
}

impl Mul for &CMatrix {
    type Output = CMatrix;

    /// Panics on a shape mismatch; use [`CMatrix::try_mul`] for checked products.
    fn mul(self, rhs: &CMatrix) -> CMatrix {
        CMatrix(&self.0 * &rhs.0)
    }
}

impl Sub for &CMatrix {
    type Output = CMatrix;

    fn sub(self, rhs: &CMatrix) -> CMatrix {
        CMatrix(&self.0 - &rhs.0)
    }
}

#[derive(Deserialize)]
struct MatrixJson {
    rows: usize,
    cols: usize,
    data: Vec<[f64; 2]>,
}

impl Serialize for CMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if !self.is_finite() {
            return Err(S::Error::custom("matrix contains non-finite entries"));
        }
        let raw = RawValue::from_string(self.to_json()).map_err(S::Error::custom)?;
        raw.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for CMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = MatrixJson::deserialize(deserializer)?;
        if raw.data.len() != raw.rows * raw.cols {
            return Err(D::Error::custom(format!(
                "matrix declares {}x{} but carries {} entries",
                raw.rows,
                raw.cols,
                raw.data.len()
            )));
        }
        if raw.data.iter().flatten().any(|x| !x.is_finite()) {
            return Err(D::Error::custom("matrix entries must be finite"));
        }
        let data: Vec<C64> = raw.data.iter().map(|[re, im]| C64::new(*re, *im)).collect();
        CMatrix::from_row_major(raw.rows, raw.cols, &data).map_err(D::Error::custom)
    }
}
