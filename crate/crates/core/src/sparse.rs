//! Compressed-row binary incidence matrix.
//!
//! Every stored entry is an implicit `1.0`; only column indices are kept.

use serde::{Deserialize, Serialize};

/// Binary sparse matrix in compressed row layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Incidence {
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    n_cols: usize,
}

impl Incidence {
    /// Builds from per-row column lists. Columns must be `< n_cols`; this is
    /// checked by the callers that know how to name the offending row.
    pub fn from_rows<R: AsRef<[usize]>>(rows: &[R], n_cols: usize) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for r in rows {
            col_idx.extend_from_slice(r.as_ref());
            row_ptr.push(col_idx.len());
        }
        Self {
            row_ptr,
            col_idx,
            n_cols,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[usize]> + '_ {
        (0..self.n_rows()).map(move |i| self.row(i))
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.row(i).contains(&j)
    }

    /// Dense copy, row-major. Intended for tests and small dumps.
    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        self.rows()
            .map(|r| {
                let mut d = vec![0u8; self.n_cols];
                for &j in r {
                    d[j] = 1;
                }
                d
            })
            .collect()
    }

    /// `y = A x` where `x` has `n_cols` rows and `cols` columns (row-major).
    pub fn mul(&self, x: &[f64], cols: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n_cols * cols);
        let mut y = vec![0.0; self.n_rows() * cols];
        for (i, r) in self.rows().enumerate() {
            let out = &mut y[i * cols..(i + 1) * cols];
            for &j in r {
                for (o, v) in out.iter_mut().zip(&x[j * cols..(j + 1) * cols]) {
                    *o += v;
                }
            }
        }
        y
    }

    /// `y = Aᵀ x` where `x` has `n_rows` rows and `cols` columns (row-major).
    pub fn tmul(&self, x: &[f64], cols: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n_rows() * cols);
        let mut y = vec![0.0; self.n_cols * cols];
        for (i, r) in self.rows().enumerate() {
            let src = &x[i * cols..(i + 1) * cols];
            for &j in r {
                for (o, v) in y[j * cols..(j + 1) * cols].iter_mut().zip(src) {
                    *o += v;
                }
            }
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn products_match_dense() {
        let a = Incidence::from_rows(&[vec![0, 2], vec![1], vec![]], 3);
        assert_eq!(a.nnz(), 3);
        assert_eq!(a.to_dense(), vec![vec![1, 0, 1], vec![0, 1, 0], vec![0, 0, 0]]);
        assert_eq!(a.mul(&[1.0, 2.0, 3.0], 1), vec![4.0, 2.0, 0.0]);
        assert_eq!(a.tmul(&[1.0, 2.0, 5.0], 1), vec![1.0, 2.0, 1.0]);
        // two columns
        assert_eq!(
            a.mul(&[1.0, 10.0, 2.0, 20.0, 3.0, 30.0], 2),
            vec![4.0, 40.0, 2.0, 20.0, 0.0, 0.0]
        );
    }
}
