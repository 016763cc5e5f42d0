//! Small dense linear algebra: row-major `f64` matrices and rank-3 tensors.
//!
//! Sizes in this crate are at most a few hundred per side, so everything is
//! plain loops over contiguous storage.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatRepr", into = "MatRepr")]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MatRepr {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<MatRepr> for Mat {
    type Error = Error;

    fn try_from(r: MatRepr) -> Result<Self> {
        Mat::new(r.rows, r.cols, r.data)
    }
}

impl From<Mat> for MatRepr {
    fn from(m: Mat) -> Self {
        MatRepr {
            rows: m.rows,
            cols: m.cols,
            data: m.data,
        }
    }
}

impl Mat {
    /// Builds a matrix from row-major data. Rejects wrong lengths and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return shape_err(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite entry at flat index {pos}")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Convenience constructor from nested rows; panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        let data = rows.iter().flat_map(|row| row.iter().copied()).collect();
        Self {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Mat {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Mat) -> Result<Mat> {
        self.check_same(other, "add")?;
        Ok(self.zip(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &Mat) -> Result<Mat> {
        self.check_same(other, "sub")?;
        Ok(self.zip(other, |a, b| a - b))
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Mat) -> Result<()> {
        self.check_same(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    fn zip(&self, other: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    fn check_same(&self, other: &Mat, op: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return shape_err(format!(
                "{op}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            ));
        }
        Ok(())
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

pub fn matmul(a: &Mat, b: &Mat) -> Result<Mat> {
    if a.cols != b.rows {
        return shape_err(format!(
            "matmul: {:?} x {:?}",
            a.shape(),
            b.shape()
        ));
    }
    let mut out = Mat::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (p, &aip) in a.row(i).iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            for (o, &bpj) in out_row.iter_mut().zip(b.row(p)) {
                *o += aip * bpj;
            }
        }
    }
    Ok(out)
}

pub fn hadamard(a: &Mat, b: &Mat) -> Result<Mat> {
    a.check_same(b, "hadamard")?;
    Ok(a.zip(b, |x, y| x * y))
}

/// Column sums, one per column.
pub fn colsum(a: &Mat) -> Vec<f64> {
    let mut out = vec![0.0; a.cols];
    for i in 0..a.rows {
        for (o, v) in out.iter_mut().zip(a.row(i)) {
            *o += v;
        }
    }
    out
}

/// `<a, b>_F = tr(a^T b)`.
pub fn frobenius_inner(a: &Mat, b: &Mat) -> Result<f64> {
    a.check_same(b, "frobenius_inner")?;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum())
}

/// K stacked `rows x cols` matrices, linearized as (k, i, j) row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Tensor3Repr", into = "Tensor3Repr")]
pub struct Tensor3 {
    k: usize,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Tensor3Repr {
    k: usize,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<Tensor3Repr> for Tensor3 {
    type Error = Error;

    fn try_from(r: Tensor3Repr) -> Result<Self> {
        Tensor3::new(r.k, r.rows, r.cols, r.data)
    }
}

impl From<Tensor3> for Tensor3Repr {
    fn from(t: Tensor3) -> Self {
        Tensor3Repr {
            k: t.k,
            rows: t.rows,
            cols: t.cols,
            data: t.data,
        }
    }
}

impl Tensor3 {
    pub fn new(k: usize, rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != k * rows * cols {
            return shape_err(format!(
                "{} values for a {k}x{rows}x{cols} tensor",
                data.len()
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite entry at flat index {pos}")));
        }
        Ok(Self {
            k,
            rows,
            cols,
            data,
        })
    }

    pub fn zeros(k: usize, rows: usize, cols: usize) -> Self {
        Self::filled(k, rows, cols, 0.0)
    }

    pub fn filled(k: usize, rows: usize, cols: usize, value: f64) -> Self {
        Self {
            k,
            rows,
            cols,
            data: vec![value; k * rows * cols],
        }
    }

    pub fn from_fn(
        k: usize,
        rows: usize,
        cols: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(k * rows * cols);
        for kk in 0..k {
            for i in 0..rows {
                for j in 0..cols {
                    data.push(f(kk, i, j));
                }
            }
        }
        Self {
            k,
            rows,
            cols,
            data,
        }
    }

    /// Stacks equally-shaped matrices.
    pub fn from_mats(mats: &[Mat]) -> Result<Self> {
        let Some(first) = mats.first() else {
            return shape_err("cannot stack zero matrices");
        };
        let (rows, cols) = first.shape();
        let mut data = Vec::with_capacity(mats.len() * rows * cols);
        for m in mats {
            if m.shape() != (rows, cols) {
                return shape_err(format!(
                    "stacking {:?} onto {:?}",
                    m.shape(),
                    (rows, cols)
                ));
            }
            data.extend_from_slice(m.data());
        }
        Ok(Self {
            k: mats.len(),
            rows,
            cols,
            data,
        })
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.k, self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn offset(&self, k: usize, i: usize, j: usize) -> usize {
        (k * self.rows + i) * self.cols + j
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.data[self.offset(k, i, j)]
    }

    #[inline]
    pub fn set(&mut self, k: usize, i: usize, j: usize, v: f64) {
        let o = self.offset(k, i, j);
        self.data[o] = v;
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        let m = self.rows * self.cols;
        &self.data[k * m..(k + 1) * m]
    }

    pub fn slice_mut(&mut self, k: usize) -> &mut [f64] {
        let m = self.rows * self.cols;
        &mut self.data[k * m..(k + 1) * m]
    }

    /// Copy of the k-th matrix.
    pub fn mat(&self, k: usize) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.slice(k).to_vec(),
        }
    }

    pub fn mats(&self) -> Vec<Mat> {
        (0..self.k).map(|k| self.mat(k)).collect()
    }

    pub fn set_mat(&mut self, k: usize, m: &Mat) -> Result<()> {
        if m.shape() != (self.rows, self.cols) {
            return shape_err(format!(
                "set_mat: {:?} into {:?}",
                m.shape(),
                (self.rows, self.cols)
            ));
        }
        self.slice_mut(k).copy_from_slice(m.data());
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor3 {
        Tensor3 {
            k: self.k,
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn hadamard(&self, other: &Tensor3) -> Result<Tensor3> {
        self.check_same(other, "hadamard")?;
        Ok(Tensor3 {
            k: self.k,
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a * b)
                .collect(),
        })
    }

    pub fn check_same(&self, other: &Tensor3, op: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return shape_err(format!(
                "{op}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            ));
        }
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(pos) => Err(Error::Input(format!("non-finite entry at flat index {pos}"))),
            None => Ok(()),
        }
    }
}
