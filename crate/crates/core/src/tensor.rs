//! Dense row-major storage and the row/column p-norm primitives used by the
//! balancer.
//!
//! Reshapes between 4-D convolution kernels and 2-D matrices are defined by
//! index arithmetic only, so they never depend on how memory happens to be
//! laid out by a caller.

use crate::error::{Error, Result};
use crate::exec;

/// `|x|^p`, with the common `p = 2` case kept exact.
#[inline]
pub fn abs_pow(x: f64, p: f64) -> f64 {
    if p == 2.0 {
        x * x
    } else if p == 1.0 {
        x.abs()
    } else {
        x.abs().powf(p)
    }
}

/// Inverse of [`abs_pow`] for a non-negative sum.
#[inline]
pub fn pow_root(sum: f64, p: f64) -> f64 {
    if p == 2.0 {
        sum.sqrt()
    } else if p == 1.0 {
        sum
    } else {
        sum.powf(1.0 / p)
    }
}

pub(crate) fn check_p(p: f64) -> Result<()> {
    if p.is_finite() && p > 0.0 {
        Ok(())
    } else {
        Err(Error::NumericDomain(format!("norm order p must be positive, got {p}")))
    }
}

fn check_finite(data: &[f64], what: &str) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::NumericDomain(format!(
            "{what} has non-finite entry {} at index {i}",
            data[i]
        ))),
    }
}

/// Row-major real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        check_finite(&data, "matrix")?;
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Reinterprets the same row-major entries under new dimensions.
    pub fn reshaped(&self, rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, self.data.clone())
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        Ok(out)
    }

    /// Per-column `|x|^p` sums.
    pub fn col_pow_sums(&self, p: f64) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (s, &v) in sums.iter_mut().zip(self.row(r)) {
                *s += abs_pow(v, p);
            }
        }
        sums
    }

    /// Per-row `|x|^p` sums.
    pub fn row_pow_sums(&self, p: f64) -> Vec<f64> {
        exec::map_range(self.rows, |r| self.row(r).iter().map(|&v| abs_pow(v, p)).sum())
    }
}

/// Column p-norms: `out[j] = (sum_i |m[i,j]|^p)^(1/p)`.
pub fn pnorm_cols(m: &Matrix, p: f64) -> Result<Vec<f64>> {
    check_p(p)?;
    check_finite(&m.data, "matrix")?;
    if m.data.is_empty() {
        return Err(Error::Shape("p-norm of an empty matrix".into()));
    }
    Ok(m.col_pow_sums(p).into_iter().map(|s| pow_root(s, p)).collect())
}

/// Row p-norms: `out[i] = (sum_j |m[i,j]|^p)^(1/p)`.
pub fn pnorm_rows(m: &Matrix, p: f64) -> Result<Vec<f64>> {
    check_p(p)?;
    check_finite(&m.data, "matrix")?;
    if m.data.is_empty() {
        return Err(Error::Shape("p-norm of an empty matrix".into()));
    }
    Ok(m.row_pow_sums(p).into_iter().map(|s| pow_root(s, p)).collect())
}

/// `out[i,j] = m[i,j] * d[j]` (right multiplication by `diag(d)`).
pub fn scale_cols(m: &Matrix, d: &[f64]) -> Result<Matrix> {
    if d.len() != m.cols {
        return Err(Error::Shape(format!(
            "column scaling of length {} for a matrix with {} columns",
            d.len(),
            m.cols
        )));
    }
    let mut out = m.clone();
    scale_cols_in_place(&mut out, d);
    Ok(out)
}

/// `out[i,j] = m[i,j] * d[i]` (left multiplication by `diag(d)`).
pub fn scale_rows(m: &Matrix, d: &[f64]) -> Result<Matrix> {
    if d.len() != m.rows {
        return Err(Error::Shape(format!(
            "row scaling of length {} for a matrix with {} rows",
            d.len(),
            m.rows
        )));
    }
    let mut out = m.clone();
    scale_row_groups_in_place(&mut out, d, 1);
    Ok(out)
}

pub(crate) fn scale_cols_in_place(m: &mut Matrix, d: &[f64]) {
    debug_assert_eq!(d.len(), m.cols);
    if m.cols == 0 {
        return;
    }
    let cols = m.cols;
    exec::for_each_chunk_mut(&mut m.data, cols, |_, row| {
        for (v, s) in row.iter_mut().zip(d) {
            *v *= s;
        }
    });
}

/// Multiplies rows `g*group .. (g+1)*group` by `d[g]`.
pub(crate) fn scale_row_groups_in_place(m: &mut Matrix, d: &[f64], group: usize) {
    debug_assert_eq!(d.len() * group, m.rows);
    if m.cols == 0 {
        return;
    }
    let cols = m.cols;
    exec::for_each_chunk_mut(&mut m.data, cols, |r, row| {
        let s = d[r / group];
        row.iter_mut().for_each(|v| *v *= s);
    });
}

/// Convolution kernel of shape `out_channels x in_channels x kernel_h x kernel_w`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    out_channels: usize,
    in_channels: usize,
    kernel_h: usize,
    kernel_w: usize,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        let n = out_channels * in_channels * kernel_h * kernel_w;
        if data.len() != n {
            return Err(Error::Shape(format!(
                "kernel {out_channels}x{in_channels}x{kernel_h}x{kernel_w} needs {n} entries, got {}",
                data.len()
            )));
        }
        check_finite(&data, "kernel")?;
        Ok(Self {
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            data,
        })
    }

    pub fn zeros(out_channels: usize, in_channels: usize, kernel_h: usize, kernel_w: usize) -> Self {
        Self {
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            data: vec![0.0; out_channels * in_channels * kernel_h * kernel_w],
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn kernel_h(&self) -> usize {
        self.kernel_h
    }

    pub fn kernel_w(&self) -> usize {
        self.kernel_w
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Number of coefficients in one `(out, in)` kernel slice.
    pub fn kernel_len(&self) -> usize {
        self.kernel_h * self.kernel_w
    }

    /// Number of coefficients in one output filter.
    pub fn filter_len(&self) -> usize {
        self.in_channels * self.kernel_len()
    }

    #[inline]
    pub fn index(&self, o: usize, i: usize, y: usize, x: usize) -> usize {
        ((o * self.in_channels + i) * self.kernel_h + y) * self.kernel_w + x
    }

    #[inline]
    pub fn get(&self, o: usize, i: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(o, i, y, x)]
    }

    pub fn out_channel_pow_sums(&self, p: f64) -> Vec<f64> {
        let len = self.filter_len();
        exec::map_range(self.out_channels, |o| {
            self.data[o * len..(o + 1) * len]
                .iter()
                .map(|&v| abs_pow(v, p))
                .sum()
        })
    }

    pub fn in_channel_pow_sums(&self, p: f64) -> Vec<f64> {
        let k = self.kernel_len();
        let mut sums = vec![0.0; self.in_channels];
        for o in 0..self.out_channels {
            for (i, s) in sums.iter_mut().enumerate() {
                let start = (o * self.in_channels + i) * k;
                *s += self.data[start..start + k]
                    .iter()
                    .map(|&v| abs_pow(v, p))
                    .sum::<f64>();
            }
        }
        sums
    }

    pub(crate) fn scale_out_channels(&mut self, d: &[f64]) {
        debug_assert_eq!(d.len(), self.out_channels);
        let len = self.filter_len();
        if len == 0 {
            return;
        }
        exec::for_each_chunk_mut(&mut self.data, len, |o, filt| {
            filt.iter_mut().for_each(|v| *v *= d[o]);
        });
    }

    pub(crate) fn scale_in_channels(&mut self, d: &[f64]) {
        debug_assert_eq!(d.len(), self.in_channels);
        let k = self.kernel_len();
        if k == 0 {
            return;
        }
        let cin = self.in_channels;
        exec::for_each_chunk_mut(&mut self.data, k, |slice, ker| {
            let s = d[slice % cin];
            ker.iter_mut().for_each(|v| *v *= s);
        });
    }
}

/// Reshapes a kernel into the `(C_in * kh * kw) x C_out` matrix whose column `o`
/// lists every coefficient of output filter `o`.
pub fn conv_to_left_matrix(t: &Tensor4) -> Matrix {
    let rows = t.filter_len();
    let cols = t.out_channels;
    let mut m = Matrix::zeros(rows, cols);
    for o in 0..cols {
        for r in 0..rows {
            m.data[r * cols + o] = t.data[o * rows + r];
        }
    }
    m
}

/// Inverse of [`conv_to_left_matrix`].
pub fn conv_from_left_matrix(
    m: &Matrix,
    in_channels: usize,
    kernel_h: usize,
    kernel_w: usize,
) -> Result<Tensor4> {
    let rows = in_channels * kernel_h * kernel_w;
    if m.rows != rows {
        return Err(Error::Shape(format!(
            "left matrix has {} rows, kernel geometry needs {rows}",
            m.rows
        )));
    }
    let out_channels = m.cols;
    let mut data = vec![0.0; rows * out_channels];
    for o in 0..out_channels {
        for r in 0..rows {
            data[o * rows + r] = m.data[r * out_channels + o];
        }
    }
    Tensor4::new(out_channels, in_channels, kernel_h, kernel_w, data)
}

/// Reshapes a kernel into the `C_in x (C_out * kh * kw)` matrix whose row `i`
/// lists every coefficient reading input channel `i`.
pub fn conv_to_right_matrix(t: &Tensor4) -> Matrix {
    let k = t.kernel_len();
    let rows = t.in_channels;
    let cols = t.out_channels * k;
    let mut m = Matrix::zeros(rows, cols);
    for o in 0..t.out_channels {
        for i in 0..rows {
            for s in 0..k {
                m.data[i * cols + o * k + s] = t.data[(o * rows + i) * k + s];
            }
        }
    }
    m
}

/// Inverse of [`conv_to_right_matrix`].
pub fn conv_from_right_matrix(
    m: &Matrix,
    out_channels: usize,
    kernel_h: usize,
    kernel_w: usize,
) -> Result<Tensor4> {
    let k = kernel_h * kernel_w;
    if m.cols != out_channels * k {
        return Err(Error::Shape(format!(
            "right matrix has {} columns, kernel geometry needs {}",
            m.cols,
            out_channels * k
        )));
    }
    let in_channels = m.rows;
    let mut data = vec![0.0; out_channels * in_channels * k];
    for o in 0..out_channels {
        for i in 0..in_channels {
            for s in 0..k {
                data[(o * in_channels + i) * k + s] = m.data[i * m.cols + o * k + s];
            }
        }
    }
    Tensor4::new(out_channels, in_channels, kernel_h, kernel_w, data)
}
