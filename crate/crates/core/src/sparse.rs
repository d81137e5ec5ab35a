//! Compressed sparse row storage for square real matrices.

use std::io::Write;

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds an `n x n` matrix from `(row, col, value)` triplets; duplicates
    /// are summed and columns are sorted within each row.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(Error::InvalidParams(format!(
                    "entry ({i}, {j}) outside a {n} x {n} matrix"
                )));
            }
            rows[i].push((j, v));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(j, _)| j);
            for (j, v) in row {
                if col_idx.len() > *row_ptr.last().unwrap() && *col_idx.last().unwrap() == j {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            n,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map(|k| vals[k]).unwrap_or(0.0)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// `y = (A + shift I) x`.
    pub fn mul_shifted_into(&self, shift: f64, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            let mut acc = shift * x[i];
            for (&j, &a) in cols.iter().zip(vals) {
                acc += a * x[j];
            }
            *yi = acc;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n, x.len())?;
        let mut y = vec![0.0; self.n];
        self.mul_shifted_into(0.0, x, &mut y);
        Ok(y)
    }

    /// `x^T A y` without forming `A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        (0..self.n)
            .map(|i| {
                let (cols, vals) = self.row(i);
                let row: f64 = cols.iter().zip(vals).map(|(&j, &a)| a * y[j]).sum();
                x[i] * row
            })
            .sum()
    }

    /// Exact structural and numerical symmetry.
    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).all(|(&j, &a)| self.get(j, i) == a)
        })
    }

    /// Principal submatrix on the sorted index set `keep`, renumbered in order.
    pub fn principal_submatrix(&self, keep: &[usize]) -> Result<Self> {
        let mut local = vec![usize::MAX; self.n];
        for (k, &i) in keep.iter().enumerate() {
            if i >= self.n {
                return Err(Error::ShapeMismatch {
                    expected: self.n,
                    found: i + 1,
                });
            }
            local[i] = k;
        }
        let mut triplets = Vec::new();
        for (k, &i) in keep.iter().enumerate() {
            let (cols, vals) = self.row(i);
            for (&j, &a) in cols.iter().zip(vals) {
                if local[j] != usize::MAX {
                    triplets.push((k, local[j], a));
                }
            }
        }
        Self::from_triplets(keep.len(), &triplets)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &a) in cols.iter().zip(vals) {
                m[(i, j)] = a;
            }
        }
        m
    }

    /// MatrixMarket coordinate format, general real, 17 significant digits.
    pub fn write_matrix_market<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(out, "{} {} {}", self.n, self.n, self.nnz())?;
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &a) in cols.iter().zip(vals) {
                writeln!(out, "{} {} {:.16e}", i + 1, j + 1, a)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed() {
        let m = CsrMatrix::from_triplets(2, &[(0, 1, 1.0), (0, 1, 2.0), (1, 0, 3.0), (0, 0, -1.0)])
            .unwrap();
        assert_eq!(m.get(0, 1), 3.0);
        assert_eq!(m.get(0, 0), -1.0);
        assert_eq!(m.nnz(), 3);
        assert!(m.is_symmetric());
        assert_eq!(m.mul_vec(&[1.0, 1.0]).unwrap(), vec![2.0, 3.0]);
    }

    #[test]
    fn out_of_range_entry() {
        assert!(CsrMatrix::from_triplets(2, &[(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn matrix_market_round_trip() {
        let v = 0.1 + 0.2;
        let m = CsrMatrix::from_triplets(2, &[(0, 0, v), (1, 1, 1.0 / 3.0)]).unwrap();
        let mut buf = Vec::new();
        m.write_matrix_market(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let line = text.lines().nth(2).unwrap();
        let parsed: f64 = line.split_whitespace().nth(2).unwrap().parse().unwrap();
        assert_eq!(parsed, v);
    }
}
