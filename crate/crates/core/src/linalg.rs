//! Small dense and sparse linear-algebra kernels.
//!
//! Everything here is deliberately plain: row-major dense storage, CSR for
//! constraint matrices, in-place Cholesky/LDL factorizations, and a
//! banded-plus-border Cholesky used by the QP solver when the caller declares
//! which columns couple globally. No external linear-algebra crate is pulled
//! in; problem sizes stay in the hundreds and the access patterns are simple
//! enough that straightforward loops vectorize well.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Plane vector.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Real> Vec2<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn zero() -> Self {
        Self {
            x: T::zero(),
            y: T::zero(),
        }
    }

    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y
    }

    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    pub fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }

    pub fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }

    pub fn scale(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s)
    }

    /// Unit vector in the same direction, or an error when the norm is below
    /// `tol`.
    pub fn unit(self, tol: T) -> Result<Self> {
        let n = self.norm();
        if n <= tol {
            return Err(Error::CoincidentPoints);
        }
        Ok(self.scale(n.recip()))
    }

    /// Rotate by `angle` radians counter-clockwise.
    pub fn rotate(self, angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DMat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> DMat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_rows(rows: &[&[T]]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut m = Self::zeros(r, c);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), c);
            m.row_mut(i).copy_from_slice(row);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] += v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn fill_zero(&mut self) {
        self.data.fill(T::zero());
    }

    /// `y = self * x`.
    pub fn matvec(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.cols);
        assert_eq!(y.len(), self.rows);
        for i in 0..self.rows {
            y[i] = dot(self.row(i), x);
        }
    }

    /// Two disjoint row views, `i != j`.
    fn two_rows(&mut self, i: usize, j: usize) -> (&mut [T], &mut [T]) {
        assert_ne!(i, j);
        let c = self.cols;
        if i < j {
            let (a, b) = self.data.split_at_mut(j * c);
            (&mut a[i * c..i * c + c], &mut b[..c])
        } else {
            let (a, b) = self.data.split_at_mut(i * c);
            let bj = &mut a[j * c..j * c + c];
            (&mut b[..c], bj)
        }
    }
}

/// Unrolled dot product; the hot inner kernel of every factorization here.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (mut s0, mut s1, mut s2, mut s3) = (T::zero(), T::zero(), T::zero(), T::zero());
    let chunks = n / 4;
    for k in 0..chunks {
        let i = 4 * k;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut s = (s0 + s1) + (s2 + s3);
    for i in 4 * chunks..n {
        s += a[i] * b[i];
    }
    s
}

/// `y += alpha * x`.
#[inline]
pub fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm_inf<T: Real>(v: &[T]) -> T {
    // Float max ignores NaN operands, which would let a poisoned vector
    // report a zero norm; keep NaN sticky instead.
    v.iter().fold(T::zero(), |m, &x| {
        let a = x.abs();
        if a != a || a > m {
            a
        } else {
            m
        }
    })
}

/// In-place lower Cholesky factorization of a symmetric positive-definite
/// matrix. Only the lower triangle is referenced; on success it holds `L`
/// with `A = L L^T`.
pub fn cholesky_in_place<T: Real>(a: &mut DMat<T>) -> Result<()> {
    let n = a.rows();
    assert_eq!(n, a.cols());
    for i in 0..n {
        for j in 0..i {
            let (rj, ri) = a.two_rows(j, i);
            let s = ri[j] - dot(&ri[..j], &rj[..j]);
            ri[j] = s / rj[j];
        }
        let ri = a.row(i);
        let s = ri[i] - dot(&ri[..i], &ri[..i]);
        if s <= T::zero() {
            return Err(Error::Singular);
        }
        a.set(i, i, s.sqrt());
    }
    Ok(())
}

/// Solve `L L^T x = b` in place given the factor from [`cholesky_in_place`].
pub fn cholesky_solve<T: Real>(l: &DMat<T>, b: &mut [T]) {
    let n = l.rows();
    assert_eq!(b.len(), n);
    for i in 0..n {
        let s = dot(&l.row(i)[..i], &b[..i]);
        b[i] = (b[i] - s) / l.get(i, i);
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l.get(k, i) * b[k];
        }
        b[i] = s / l.get(i, i);
    }
}

/// In-place LDL^T factorization without pivoting. Intended for symmetric
/// quasi-definite matrices (positive block, negative block), where the
/// factorization exists with a sign-indefinite diagonal. `d` receives the
/// diagonal; the strictly lower triangle of `a` receives unit-lower `L`.
pub fn ldl_in_place<T: Real>(a: &mut DMat<T>, d: &mut Vec<T>) -> Result<()> {
    let n = a.rows();
    assert_eq!(n, a.cols());
    d.clear();
    d.resize(n, T::zero());
    let mut work = vec![T::zero(); n];
    for j in 0..n {
        for k in 0..j {
            work[k] = a.get(j, k) * d[k];
        }
        let dj = a.get(j, j) - dot(&a.row(j)[..j], &work[..j]);
        if dj.abs() < T::epsilon() * T::from_f64(1e2).unwrap() {
            return Err(Error::Singular);
        }
        d[j] = dj;
        for i in j + 1..n {
            let v = a.get(i, j) - dot(&a.row(i)[..j], &work[..j]);
            a.set(i, j, v / dj);
        }
    }
    Ok(())
}

/// Solve `L D L^T x = b` in place given the factors from [`ldl_in_place`].
pub fn ldl_solve<T: Real>(l: &DMat<T>, d: &[T], b: &mut [T]) {
    let n = l.rows();
    for i in 0..n {
        let s = dot(&l.row(i)[..i], &b[..i]);
        b[i] -= s;
    }
    for i in 0..n {
        b[i] /= d[i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l.get(k, i) * b[k];
        }
        b[i] = s;
    }
}

/// Solve a general square system by LU with partial pivoting. `a` is consumed
/// as workspace; `b` holds the solution on return.
pub fn lu_solve<T: Real>(a: &mut DMat<T>, b: &mut [T]) -> Result<()> {
    let n = a.rows();
    assert_eq!(n, a.cols());
    assert_eq!(b.len(), n);
    let mut piv: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let mut p = k;
        let mut best = a.get(k, k).abs();
        for i in k + 1..n {
            let v = a.get(i, k).abs();
            if v > best {
                best = v;
                p = i;
            }
        }
        if best < T::epsilon() * T::from_f64(16.0).unwrap() {
            return Err(Error::Singular);
        }
        if p != k {
            piv.swap(p, k);
            let (rk, rp) = a.two_rows(k, p);
            rk.swap_with_slice(rp);
            b.swap(k, p);
        }
        let pivot = a.get(k, k);
        for i in k + 1..n {
            let m = a.get(i, k) / pivot;
            a.set(i, k, m);
            if m != T::zero() {
                let (rk, ri) = a.two_rows(k, i);
                for j in k + 1..n {
                    ri[j] = ri[j] - m * rk[j];
                }
            }
        }
    }
    for i in 0..n {
        let s = dot(&a.row(i)[..i], &b[..i]);
        b[i] -= s;
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for j in i + 1..n {
            s -= a.get(i, j) * b[j];
        }
        b[i] = s / a.get(i, i);
    }
    Ok(())
}

/// Solve a 3x3 system; small convenience wrapper over [`lu_solve`].
pub fn solve3<T: Real>(a: [[T; 3]; 3], b: [T; 3]) -> Result<[T; 3]> {
    let mut m = DMat::zeros(3, 3);
    for (i, row) in a.iter().enumerate() {
        m.row_mut(i).copy_from_slice(row);
    }
    let mut rhs = b.to_vec();
    lu_solve(&mut m, &mut rhs)?;
    Ok([rhs[0], rhs[1], rhs[2]])
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr<T> {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Csr<T> {
    /// Build from (row, col, value) triplets. Duplicate entries are summed;
    /// columns within each row come out sorted.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, T)],
    ) -> Result<Self> {
        for &(r, c, _) in triplets {
            if r >= nrows || c >= ncols {
                return Err(Error::Dimension(format!(
                    "triplet ({r},{c}) outside {nrows}x{ncols}"
                )));
            }
        }
        let mut per_row: Vec<Vec<(usize, T)>> = vec![Vec::new(); nrows];
        for &(r, c, v) in triplets {
            per_row[r].push((c, v));
        }
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        for row in &mut per_row {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for &(c, v) in row.iter() {
                if last == Some(c) {
                    let d = data.last_mut().unwrap();
                    *d += v;
                } else {
                    indices.push(c);
                    data.push(v);
                    last = Some(c);
                }
            }
            indptr.push(indices.len());
        }
        Ok(Self {
            nrows,
            ncols,
            indptr,
            indices,
            data,
        })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[T]) {
        let a = self.indptr[i];
        let b = self.indptr[i + 1];
        (&self.indices[a..b], &self.data[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let (idx, val) = self.row(i);
        match idx.binary_search(&j) {
            Ok(k) => val[k],
            Err(_) => T::zero(),
        }
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for i in 0..self.nrows {
            let (idx, val) = self.row(i);
            let mut s = T::zero();
            for (&j, &v) in idx.iter().zip(val) {
                s += v * x[j];
            }
            y[i] = s;
        }
    }

    /// `y = A^T x`.
    pub fn matvec_t(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.nrows);
        assert_eq!(y.len(), self.ncols);
        y.fill(T::zero());
        for i in 0..self.nrows {
            let (idx, val) = self.row(i);
            let xi = x[i];
            if xi != T::zero() {
                for (&j, &v) in idx.iter().zip(val) {
                    y[j] += v * xi;
                }
            }
        }
    }

    /// `into += A^T diag(w) A`, exploiting row sparsity.
    pub fn add_ata_weighted(&self, w: &[T], into: &mut DMat<T>) {
        assert_eq!(w.len(), self.nrows);
        assert_eq!(into.rows(), self.ncols);
        for i in 0..self.nrows {
            let (idx, val) = self.row(i);
            let wi = w[i];
            for (a, &ja) in idx.iter().enumerate() {
                let va = wi * val[a];
                for (b, &jb) in idx.iter().enumerate() {
                    into.add_at(ja, jb, va * val[b]);
                }
            }
        }
    }

    /// Scatter the full matrix into dense storage, accumulating.
    pub fn add_to_dense(&self, into: &mut DMat<T>) {
        for i in 0..self.nrows {
            let (idx, val) = self.row(i);
            for (&j, &v) in idx.iter().zip(val) {
                into.add_at(i, j, v);
            }
        }
    }

    /// Maximum absolute value in row `i` (zero for an empty row).
    pub fn row_norm_inf(&self, i: usize) -> T {
        let (_, val) = self.row(i);
        norm_inf(val)
    }

    /// Multiply every entry of row `i` by `s`.
    pub fn scale_row(&mut self, i: usize, s: T) {
        for v in &mut self.data[self.indptr[i]..self.indptr[i + 1]] {
            *v *= s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn cholesky_recovers_known_solution() {
        // A = [[4,2],[2,3]], x = [1, 2] -> b = [8, 8].
        let mut a = DMat::from_rows(&[&[4.0, 2.0], &[2.0, 3.0]]);
        cholesky_in_place(&mut a).unwrap();
        let mut b = vec![8.0, 8.0];
        cholesky_solve(&a, &mut b);
        approx(b[0], 1.0, 1e-12);
        approx(b[1], 2.0, 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut a = DMat::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]);
        assert!(cholesky_in_place(&mut a).is_err());
    }

    #[test]
    fn ldl_handles_quasi_definite() {
        // [[2, 1], [1, -3]] is quasi-definite; solve against a known rhs.
        let mut a = DMat::from_rows(&[&[2.0, 1.0], &[1.0, -3.0]]);
        let mut d = Vec::new();
        ldl_in_place(&mut a, &mut d).unwrap();
        let mut b = vec![3.0, -2.0]; // x = [1, 1]
        ldl_solve(&a, &d, &mut b);
        approx(b[0], 1.0, 1e-12);
        approx(b[1], 1.0, 1e-12);
    }

    #[test]
    fn lu_solves_permuted_system() {
        let mut a = DMat::from_rows(&[&[0.0, 2.0, 1.0], &[1.0, 0.0, 0.0], &[3.0, 0.0, 1.0]]);
        let mut b = vec![5.0, 1.0, 6.0]; // x = [1, 1, 3]
        lu_solve(&mut a, &mut b).unwrap();
        approx(b[0], 1.0, 1e-12);
        approx(b[1], 1.0, 1e-12);
        approx(b[2], 3.0, 1e-12);
    }

    #[test]
    fn solve3_matches_substitution() {
        let a = [[2.0, 0.0, 0.0], [0.0, 3.0, 0.0], [1.0, 0.0, 1.0]];
        let x = solve3(a, [4.0, 9.0, 5.0]).unwrap();
        approx(x[0], 2.0, 1e-12);
        approx(x[1], 3.0, 1e-12);
        approx(x[2], 3.0, 1e-12);
    }

    #[test]
    fn csr_matvec_and_ata() {
        let a = Csr::from_triplets(2, 3, &[(0, 0, 1.0), (0, 2, 2.0), (1, 1, -1.0), (0, 2, 1.0)])
            .unwrap();
        assert_eq!(a.nnz(), 3); // duplicate (0,2) summed
        let mut y = vec![0.0; 2];
        a.matvec(&[1.0, 2.0, 3.0], &mut y);
        assert_eq!(y, vec![10.0, -2.0]);
        let mut yt = vec![0.0; 3];
        a.matvec_t(&[1.0, 1.0], &mut yt);
        assert_eq!(yt, vec![1.0, -1.0, 3.0]);

        let mut h = DMat::zeros(3, 3);
        a.add_ata_weighted(&[1.0, 2.0], &mut h);
        // A^T diag([1,2]) A by hand.
        assert_eq!(h.get(0, 0), 1.0);
        assert_eq!(h.get(0, 2), 3.0);
        assert_eq!(h.get(2, 2), 9.0);
        assert_eq!(h.get(1, 1), 2.0);
    }

    #[test]
    fn vec2_rotation_and_unit() {
        let v = Vec2::new(1.0, 0.0).rotate(std::f64::consts::FRAC_PI_2);
        approx(v.x, 0.0, 1e-12);
        approx(v.y, 1.0, 1e-12);
        assert!(Vec2::new(0.0, 0.0).unit(1e-9).is_err());
    }
}
