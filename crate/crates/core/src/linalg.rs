//! Banded LU factorization with partial pivoting, plus a bordered-system
//! helper for banded matrices augmented by a small dense coupling block.
//!
//! Storage follows the LAPACK general-band convention: `A[i, j]` lives at
//! row `kl + ku + i - j` of column `j` in a `(2 kl + ku + 1) x n` array,
//! with `kl` spare superdiagonal rows absorbing pivoting fill.

use nalgebra::DMatrix;

use crate::error::{IbfdError, Result};

/// General band matrix in LAPACK band storage.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    ab: Vec<f64>,
}

impl BandMatrix {
    pub fn new(n: usize, kl: usize, ku: usize) -> Self {
        let ldab = 2 * kl + ku + 1;
        BandMatrix {
            n,
            kl,
            ku,
            ldab,
            ab: vec![0.0; ldab * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.n && j < self.n);
        debug_assert!(
            i + self.ku >= j && j + self.kl >= i,
            "entry ({i}, {j}) outside band kl={}, ku={}",
            self.kl,
            self.ku
        );
        j * self.ldab + (self.kl + self.ku + i - j)
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.ab[s] += v;
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.ab[s] = v;
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i + self.ku < j || j + self.kl < i {
            return 0.0;
        }
        self.ab[self.slot(i, j)]
    }

    /// Multiply by a vector; used for residual checks.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for j in 0..self.n {
            let i_lo = j.saturating_sub(self.ku);
            let i_hi = (j + self.kl).min(self.n - 1);
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            for i in i_lo..=i_hi {
                y[i] += self.ab[j * self.ldab + (self.kl + self.ku + i - j)] * xj;
            }
        }
        y
    }

    /// Factor in place with partial pivoting.
    pub fn factor(mut self) -> Result<BandLu> {
        let (n, kl, ku, ldab) = (self.n, self.kl, self.ku, self.ldab);
        let kv = kl + ku; // superdiagonal count in the factored band
        let mut ipiv = vec![0usize; n];
        let mut ju = 0usize;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            // pivot search in column j, rows j..=j+km
            let (mut jp, mut pmax) = (0usize, 0.0f64);
            for k in 0..=km {
                let v = self.ab[j * ldab + kv + k].abs();
                if v > pmax {
                    pmax = v;
                    jp = k;
                }
            }
            ipiv[j] = j + jp;
            if pmax == 0.0 {
                return Err(IbfdError::Factorization(format!(
                    "zero pivot at column {j} of banded matrix (n = {n})"
                )));
            }
            ju = ju.max((j + ku + jp).min(n - 1));
            if jp != 0 {
                // swap rows j and j+jp across columns j..=ju
                for col in j..=ju {
                    let a = col * ldab + kv + j - col;
                    let b = col * ldab + kv + j + jp - col;
                    self.ab.swap(a, b);
                }
            }
            if km > 0 {
                let piv = self.ab[j * ldab + kv];
                for k in 1..=km {
                    self.ab[j * ldab + kv + k] /= piv;
                }
                for col in j + 1..=ju {
                    let f = self.ab[col * ldab + kv + j - col];
                    if f != 0.0 {
                        for k in 1..=km {
                            self.ab[col * ldab + kv + j + k - col] -=
                                f * self.ab[j * ldab + kv + k];
                        }
                    }
                }
            }
        }
        Ok(BandLu {
            n,
            kl,
            ldab,
            kv,
            ab: self.ab,
            ipiv,
        })
    }
}

/// Factored band matrix.
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ldab: usize,
    kv: usize,
    ab: Vec<f64>,
    ipiv: Vec<usize>,
}

impl BandLu {
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        let (n, kl, ldab, kv) = (self.n, self.kl, self.ldab, self.kv);
        if kl > 0 {
            for j in 0..n - 1 {
                let p = self.ipiv[j];
                if p != j {
                    b.swap(j, p);
                }
                let km = kl.min(n - 1 - j);
                let bj = b[j];
                if bj != 0.0 {
                    for k in 1..=km {
                        b[j + k] -= self.ab[j * ldab + kv + k] * bj;
                    }
                }
            }
        }
        for j in (0..n).rev() {
            let bj = b[j] / self.ab[j * ldab + kv];
            b[j] = bj;
            if bj != 0.0 {
                let i_lo = j.saturating_sub(kv);
                for i in i_lo..j {
                    b[i] -= self.ab[j * ldab + kv + i - j] * bj;
                }
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Solver for the bordered system
///
/// ```text
/// [ M   B ] [x]   [f]
/// [ C   D ] [y] = [g]
/// ```
///
/// with `M` banded (factored once) and a small dense border, via the Schur
/// complement `S = D - C M^{-1} B`.
pub struct BorderedSolver {
    m_lu: BandLu,
    b_cols: Vec<Vec<f64>>,
    c_rows: Vec<Vec<f64>>,
    minv_b: Vec<Vec<f64>>,
    schur_lu: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    /// Tikhonov shift added to make the Schur block invertible, if any.
    pub regularization: Option<f64>,
}

impl BorderedSolver {
    /// `b_cols[k]` is the k-th border column of length n; `c_rows[k]` the
    /// k-th border row; `d` the dense corner block. When the Schur block is
    /// numerically singular and `auto_regularize` is set, `-eps I` is added
    /// and reported through [`BorderedSolver::regularization`].
    pub fn new(
        m: BandMatrix,
        b_cols: Vec<Vec<f64>>,
        c_rows: Vec<Vec<f64>>,
        d: DMatrix<f64>,
        auto_regularize: Option<f64>,
    ) -> Result<Self> {
        let nb = b_cols.len();
        assert_eq!(c_rows.len(), nb);
        assert_eq!(d.nrows(), nb);
        let n = m.n();
        let m_lu = m.factor()?;
        let mut minv_b = Vec::with_capacity(nb);
        for col in &b_cols {
            assert_eq!(col.len(), n);
            minv_b.push(m_lu.solve(col));
        }
        let mut schur = d.clone();
        for (k, row) in c_rows.iter().enumerate() {
            assert_eq!(row.len(), n);
            for (l, mb) in minv_b.iter().enumerate() {
                let dot: f64 = row.iter().zip(mb.iter()).map(|(a, b)| a * b).sum();
                schur[(k, l)] -= dot;
            }
        }
        let mut regularization = None;
        let schur_lu = if nb > 0 {
            let mut lu = schur.clone().lu();
            if !lu_is_invertible(&lu) {
                let eps = auto_regularize.ok_or_else(|| {
                    IbfdError::Factorization(
                        "bordered Schur complement is singular; widen the marker spacing".into(),
                    )
                })?;
                let mut reg = schur;
                for k in 0..nb {
                    reg[(k, k)] -= eps;
                }
                lu = reg.lu();
                regularization = Some(eps);
                if !lu_is_invertible(&lu) {
                    return Err(IbfdError::Factorization(
                        "bordered Schur complement is singular even after regularization; \
                         widen the marker spacing"
                            .into(),
                    ));
                }
            }
            Some(lu)
        } else {
            None
        };
        Ok(BorderedSolver {
            m_lu,
            b_cols,
            c_rows,
            minv_b,
            schur_lu,
            regularization,
        })
    }

    pub fn solve(&self, f: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let nb = self.b_cols.len();
        let minv_f = self.m_lu.solve(f);
        let mut rhs = nalgebra::DVector::from_row_slice(g);
        for (k, row) in self.c_rows.iter().enumerate() {
            let dot: f64 = row.iter().zip(minv_f.iter()).map(|(a, b)| a * b).sum();
            rhs[k] -= dot;
        }
        let y = match &self.schur_lu {
            Some(lu) => lu.solve(&rhs).expect("factored Schur must solve"),
            None => rhs,
        };
        let mut x = minv_f;
        for (l, mb) in self.minv_b.iter().enumerate() {
            let yl = y[l];
            if yl != 0.0 {
                for (xi, mbi) in x.iter_mut().zip(mb.iter()) {
                    *xi -= yl * mbi;
                }
            }
        }
        (x, y.iter().copied().collect())
    }
}

fn lu_is_invertible(lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>) -> bool {
    let u = lu.u();
    let n = u.nrows();
    let mut max_diag = 0.0f64;
    for k in 0..n {
        max_diag = max_diag.max(u[(k, k)].abs());
    }
    if max_diag == 0.0 {
        return n == 0;
    }
    (0..n).all(|k| u[(k, k)].abs() > 1e-14 * max_diag)
}
