//! Small dense kernels that nalgebra does not expose in the form needed
//! here: Cholesky reporting the failing pivot, triangular inversion, and
//! rank-revealing factorizations.

use nalgebra::DMatrix;

use crate::scalar::Real;

/// Lower Cholesky factor of a symmetric positive-definite matrix (only the
/// lower triangle of `a` is read). On failure returns the index of the first
/// non-positive pivot.
pub fn cholesky_lower<T: Real>(mut a: DMatrix<T>) -> Result<DMatrix<T>, usize> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "Cholesky needs a square matrix");
    let data = a.as_mut_slice();
    for j in 0..n {
        let (done, rest) = data.split_at_mut(j * n);
        let col_j = &mut rest[..n];
        for k in 0..j {
            let col_k = &done[k * n..(k + 1) * n];
            let ljk = col_k[j];
            if ljk == T::zero() {
                continue;
            }
            for i in j..n {
                col_j[i] -= ljk * col_k[i];
            }
        }
        let pivot = col_j[j];
        if !(pivot > T::zero()) || !pivot.finite() {
            return Err(j);
        }
        let root = pivot.sqrt();
        col_j[j] = root;
        let inv = T::one() / root;
        for v in &mut col_j[j + 1..] {
            *v *= inv;
        }
    }
    for j in 1..n {
        for i in 0..j {
            a[(i, j)] = T::zero();
        }
    }
    Ok(a)
}

/// Inverse of a lower-triangular matrix with nonzero diagonal.
pub fn lower_inverse<T: Real>(l: &DMatrix<T>) -> DMatrix<T> {
    let n = l.nrows();
    let mut x = DMatrix::zeros(n, n);
    let ls = l.as_slice();
    let xs = x.as_mut_slice();
    for j in 0..n {
        let col = &mut xs[j * n..(j + 1) * n];
        col[j] = T::one();
        for k in j..n {
            let lk = &ls[k * n..(k + 1) * n];
            let xk = col[k] / lk[k];
            col[k] = xk;
            if xk == T::zero() {
                continue;
            }
            for i in k + 1..n {
                col[i] -= xk * lk[i];
            }
        }
    }
    x
}

/// Index of the first column of a Gram matrix that is (numerically) a linear
/// combination of the preceding ones, judged by the relative size of its
/// Cholesky pivot.
pub fn first_dependent_column<T: Real>(gram: &DMatrix<T>, rel_tol: T) -> Option<usize> {
    let n = gram.nrows();
    let mut l = DMatrix::<T>::zeros(n, n);
    for j in 0..n {
        let scale = gram[(j, j)];
        let mut pivot = scale;
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if !(scale > T::zero()) || !(pivot > rel_tol * scale) {
            return Some(j);
        }
        let root = pivot.sqrt();
        l[(j, j)] = root;
        for i in j + 1..n {
            let mut v = gram[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / root;
        }
    }
    None
}

/// Numerical rank of a symmetric positive-semidefinite matrix via Cholesky
/// with diagonal pivoting; stops once the largest remaining pivot falls below
/// `rel_tol` times the largest diagonal entry.
pub fn psd_rank<T: Real>(a: &DMatrix<T>, rel_tol: T) -> usize {
    let n = a.nrows();
    let mut w = a.clone();
    let top = (0..n).map(|i| w[(i, i)]).fold(T::zero(), |m, v| m.max(v));
    if !(top > T::zero()) {
        return 0;
    }
    let tol = rel_tol * top;
    let mut perm: Vec<usize> = (0..n).collect();
    for r in 0..n {
        let (best, val) = (r + 1..n)
            .map(|i| (i, w[(perm[i], perm[i])]))
            .fold((r, w[(perm[r], perm[r])]), |acc, x| if x.1 > acc.1 { x } else { acc });
        if !(val > tol) {
            return r;
        }
        perm.swap(r, best);
        let p = perm[r];
        let root = val.sqrt();
        // Schur update of the remaining submatrix with the pivot row/column.
        let col: Vec<T> = perm[r + 1..].iter().map(|&i| w[(i, p)] / root).collect();
        for (a_idx, &i) in perm[r + 1..].iter().enumerate() {
            for (b_idx, &j) in perm[r + 1..].iter().enumerate() {
                w[(i, j)] -= col[a_idx] * col[b_idx];
            }
        }
    }
    n
}
