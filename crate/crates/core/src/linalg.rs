//! Banded LU for the sparse Jacobians and small dense helpers.

use nalgebra::DMatrix;
use nalgebra_sparse::CsrMatrix;

use crate::error::{Error, Result};

/// Square band matrix, row-major band storage.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        BandMatrix { n, kl, ku, data: vec![0.0; n * (kl + ku + 1)] }
    }

    /// Extracts the block `csr[rows, rows]` where `rows[k]` is the CSR row
    /// (and column) of block index `k`; `pos` is the inverse of `rows`.
    pub fn from_csr_block(csr: &CsrMatrix<f64>, rows: &[usize], pos: &[Option<usize>]) -> Self {
        let n = rows.len();
        let (mut kl, mut ku) = (0, 0);
        for (r, &row) in rows.iter().enumerate() {
            let lane = csr.row(row);
            for &c in lane.col_indices() {
                if let Some(c) = pos[c] {
                    if c < r {
                        kl = kl.max(r - c);
                    } else {
                        ku = ku.max(c - r);
                    }
                }
            }
        }
        let mut band = BandMatrix::zeros(n, kl, ku);
        for (r, &row) in rows.iter().enumerate() {
            let lane = csr.row(row);
            for (&c, &v) in lane.col_indices().iter().zip(lane.values()) {
                if let Some(c) = pos[c] {
                    *band.entry_mut(r, c) += v;
                }
            }
        }
        band
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.ku);
        i * (self.kl + self.ku + 1) + (j + self.kl - i)
    }

    #[inline]
    pub fn entry_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        let k = self.idx(i, j);
        &mut self.data[k]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.ku {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    /// In-place LU without pivoting. The Jacobians assembled here are column
    /// diagonally dominant (lumped reaction plus an M-matrix stiffness scaled
    /// by non-negative column factors), so elimination is stable without
    /// row exchanges.
    pub fn factorize(mut self) -> Result<BandLu> {
        let n = self.n;
        let scale = self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if !scale.is_finite() {
            return Err(Error::NonFinite("band factorization"));
        }
        let tiny = scale * 1e-15;
        for k in 0..n {
            let pivot = self.data[self.idx(k, k)];
            if !(pivot.abs() > tiny) {
                return Err(Error::SingularJacobian(format!("pivot {k} is {pivot:e}")));
            }
            let last_row = (k + self.kl).min(n - 1);
            let last_col = (k + self.ku).min(n - 1);
            for i in k + 1..=last_row {
                let ik = self.idx(i, k);
                if self.data[ik] == 0.0 {
                    continue;
                }
                let l = self.data[ik] / pivot;
                self.data[ik] = l;
                for j in k + 1..=last_col {
                    let kj = self.data[self.idx(k, j)];
                    let ij = self.idx(i, j);
                    self.data[ij] -= l * kj;
                }
            }
        }
        Ok(BandLu { lu: self })
    }
}

/// Factorized band matrix.
#[derive(Debug, Clone)]
pub struct BandLu {
    lu: BandMatrix,
}

impl BandLu {
    pub fn dim(&self) -> usize {
        self.lu.n
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let m = &self.lu;
        let n = m.n;
        for i in 0..n {
            let first = i.saturating_sub(m.kl);
            let mut s = b[i];
            for j in first..i {
                s -= m.data[m.idx(i, j)] * b[j];
            }
            b[i] = s;
        }
        for i in (0..n).rev() {
            let last = (i + m.ku).min(n - 1);
            let mut s = b[i];
            for j in i + 1..=last {
                s -= m.data[m.idx(i, j)] * b[j];
            }
            b[i] = s / m.data[m.idx(i, i)];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Dense block `csr[rows, cols]`.
pub fn dense_block(csr: &CsrMatrix<f64>, rows: &[usize], col_pos: &[Option<usize>], ncols: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows.len(), ncols);
    for (r, &row) in rows.iter().enumerate() {
        let lane = csr.row(row);
        for (&c, &v) in lane.col_indices().iter().zip(lane.values()) {
            if let Some(c) = col_pos[c] {
                out[(r, c)] += v;
            }
        }
    }
    out
}

/// Inverse of an index list over `0..size`.
pub fn positions(indices: &[usize], size: usize) -> Vec<Option<usize>> {
    let mut pos = vec![None; size];
    for (k, &j) in indices.iter().enumerate() {
        pos[j] = Some(k);
    }
    pos
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Solves the dense system `a x = b` by LU with partial pivoting.
pub fn dense_solve(a: DMatrix<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let lu = a.lu();
    lu.solve(&nalgebra::DVector::from_column_slice(b))
        .map(|x| x.as_slice().to_vec())
        .ok_or_else(|| Error::SingularJacobian("dense LU failed".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra_sparse::CooMatrix;

    fn tridiag(n: usize) -> CsrMatrix<f64> {
        let mut coo = CooMatrix::new(n, n);
        for i in 0..n {
            coo.push(i, i, 4.0 + i as f64 * 0.1);
            if i > 0 {
                coo.push(i, i - 1, -1.0);
            }
            if i + 2 < n {
                coo.push(i, i + 2, -0.5);
            }
        }
        CsrMatrix::from(&coo)
    }

    #[test]
    fn band_lu_matches_dense_solve() {
        let n = 9;
        let csr = tridiag(n);
        let rows: Vec<usize> = (0..n).collect();
        let pos = positions(&rows, n);
        let band = BandMatrix::from_csr_block(&csr, &rows, &pos);
        assert_eq!(band.bandwidths(), (1, 2));
        let dense = dense_block(&csr, &rows, &pos, n);
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin() + 1.0).collect();
        let x = band.factorize().unwrap().solve(&b);
        let y = dense_solve(dense, &b).unwrap();
        for (a, c) in x.iter().zip(&y) {
            assert!((a - c).abs() < 1e-13);
        }
    }

    #[test]
    fn sub_block_extraction() {
        let csr = tridiag(6);
        let rows = vec![1, 3, 4];
        let pos = positions(&rows, 6);
        let band = BandMatrix::from_csr_block(&csr, &rows, &pos);
        assert_eq!(band.get(0, 0), 4.1);
        assert_eq!(band.get(1, 2), 0.0);
        assert_eq!(band.get(2, 1), -1.0);
    }

    #[test]
    fn zero_pivot_is_reported() {
        let mut m = BandMatrix::zeros(2, 1, 1);
        *m.entry_mut(0, 0) = 0.0;
        *m.entry_mut(0, 1) = 1.0;
        *m.entry_mut(1, 0) = 1.0;
        assert!(matches!(m.factorize(), Err(Error::SingularJacobian(_))));
    }
}
