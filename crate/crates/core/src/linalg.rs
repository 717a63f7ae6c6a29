//! Small dense matrices and a nonsymmetric eigenvalue solver.
//!
//! The eigenvalue path is the classical one: diagonal balancing, reduction
//! to upper Hessenberg form by stabilized elementary similarity transforms,
//! then the Francis double-shift QR iteration.

use std::ops::{Index, IndexMut};

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::Config("ragged matrix rows".into()));
        }
        Ok(Self {
            rows: n,
            cols: c,
            data: rows.concat(),
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Row-major entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data
            .chunks(self.cols.max(1))
            .map(<[f64]>::to_vec)
            .collect()
    }

    pub fn mul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "dimension mismatch");
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self[(i, j)] * x[j]).sum())
            .collect()
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "dimension mismatch"
        );
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Determinant by LU factorization with partial pivoting.
    pub fn det(&self) -> f64 {
        assert!(self.is_square(), "determinant of a non-square matrix");
        let n = self.rows;
        let mut a = self.clone();
        let mut det = 1.0;
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| a[(i, k)].abs().total_cmp(&a[(j, k)].abs()))
                .unwrap_or(k);
            if a[(p, k)] == 0.0 {
                return 0.0;
            }
            if p != k {
                for j in 0..n {
                    a.data.swap(k * n + j, p * n + j);
                }
                det = -det;
            }
            let pivot = a[(k, k)];
            det *= pivot;
            for i in k + 1..n {
                let f = a[(i, k)] / pivot;
                for j in k + 1..n {
                    a[(i, j)] -= f * a[(k, j)];
                }
            }
        }
        det
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

const MAX_SWEEPS_PER_EIGENVALUE: usize = 60;

fn balance(a: &mut Matrix) {
    const RADIX: f64 = 2.0;
    let n = a.rows;
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let (mut r, mut c) = (0.0, 0.0);
            for j in 0..n {
                if j != i {
                    c += a[(j, i)].abs();
                    r += a[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut g = r / RADIX;
            while c < g {
                f *= RADIX;
                c *= RADIX * RADIX;
            }
            g = r * RADIX;
            while c > g {
                f /= RADIX;
                c /= RADIX * RADIX;
            }
            if (c + r) / f < 0.95 * s {
                done = false;
                for j in 0..n {
                    a[(i, j)] /= f;
                    a[(j, i)] *= f;
                }
            }
        }
    }
}

fn to_hessenberg(a: &mut Matrix) {
    let n = a.rows;
    for m in 1..n.saturating_sub(1) {
        let mut x = 0.0f64;
        let mut piv = m;
        for j in m..n {
            if a[(j, m - 1)].abs() > x.abs() {
                x = a[(j, m - 1)];
                piv = j;
            }
        }
        if piv != m {
            for j in m - 1..n {
                a.data.swap(piv * n + j, m * n + j);
            }
            for j in 0..n {
                a.data.swap(j * n + piv, j * n + m);
            }
        }
        if x != 0.0 {
            for i in m + 1..n {
                let mut y = a[(i, m - 1)];
                if y != 0.0 {
                    y /= x;
                    a[(i, m - 1)] = y;
                    for j in m..n {
                        a[(i, j)] -= y * a[(m, j)];
                    }
                    for j in 0..n {
                        a[(j, m)] += y * a[(j, i)];
                    }
                }
            }
        }
    }
    for i in 2..n {
        for j in 0..i - 1 {
            a[(i, j)] = 0.0;
        }
    }
}

/// Eigenvalues of an upper Hessenberg matrix (destroys `a`).
fn hessenberg_qr(a: &mut Matrix) -> Result<Vec<Complex64>> {
    let n = a.rows as isize;
    let mut w = vec![Complex64::new(0.0, 0.0); a.rows];
    let at = |a: &Matrix, i: isize, j: isize| a[(i as usize, j as usize)];
    let mut anorm = 0.0;
    for i in 0..n {
        for j in (i - 1).max(0)..n {
            anorm += at(a, i, j).abs();
        }
    }
    let eps = f64::EPSILON;
    let mut nn = n - 1;
    let mut t = 0.0;
    let (mut p, mut q, mut r) = (0.0, 0.0, 0.0);
    let mut total_sweeps = 0;
    while nn >= 0 {
        let mut its = 0;
        loop {
            let mut l = nn;
            while l >= 1 {
                let mut s = at(a, l - 1, l - 1).abs() + at(a, l, l).abs();
                if s == 0.0 {
                    s = anorm;
                }
                if at(a, l, l - 1).abs() <= eps * s {
                    a[(l as usize, l as usize - 1)] = 0.0;
                    break;
                }
                l -= 1;
            }
            let mut x = at(a, nn, nn);
            if l == nn {
                w[nn as usize] = Complex64::new(x + t, 0.0);
                nn -= 1;
                break;
            }
            let mut y = at(a, nn - 1, nn - 1);
            let mut wv = at(a, nn, nn - 1) * at(a, nn - 1, nn);
            if l == nn - 1 {
                p = 0.5 * (y - x);
                q = p * p + wv;
                let mut z = q.abs().sqrt();
                x += t;
                if q >= 0.0 {
                    z = p + z.copysign(p);
                    w[nn as usize - 1] = Complex64::new(x + z, 0.0);
                    w[nn as usize] = Complex64::new(x + z, 0.0);
                    if z != 0.0 {
                        w[nn as usize] = Complex64::new(x - wv / z, 0.0);
                    }
                } else {
                    w[nn as usize - 1] = Complex64::new(x + p, z);
                    w[nn as usize] = Complex64::new(x + p, -z);
                }
                nn -= 2;
                break;
            }
            if its == MAX_SWEEPS_PER_EIGENVALUE {
                return Err(Error::NoConvergence {
                    iterations: total_sweeps,
                });
            }
            if its == 10 || its == 20 {
                // Exceptional shift.
                t += x;
                for i in 0..=nn {
                    a[(i as usize, i as usize)] -= x;
                }
                let s = at(a, nn, nn - 1).abs() + at(a, nn - 1, nn - 2).abs();
                x = 0.75 * s;
                y = x;
                wv = -0.4375 * s * s;
            }
            its += 1;
            total_sweeps += 1;
            let mut m = nn - 2;
            while m >= l {
                let z = at(a, m, m);
                r = x - z;
                let s = y - z;
                p = (r * s - wv) / at(a, m + 1, m) + at(a, m, m + 1);
                q = at(a, m + 1, m + 1) - z - r - s;
                r = at(a, m + 2, m + 1);
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = at(a, m, m - 1).abs() * (q.abs() + r.abs());
                let v = p.abs() * (at(a, m - 1, m - 1).abs() + z.abs() + at(a, m + 1, m + 1).abs());
                if u <= eps * v {
                    break;
                }
                m -= 1;
            }
            for i in m + 2..=nn {
                a[(i as usize, i as usize - 2)] = 0.0;
                if i != m + 2 {
                    a[(i as usize, i as usize - 3)] = 0.0;
                }
            }
            let mut k = m;
            while k < nn {
                if k != m {
                    p = at(a, k, k - 1);
                    q = at(a, k + 1, k - 1);
                    r = 0.0;
                    if k + 1 != nn {
                        r = at(a, k + 2, k - 1);
                    }
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = (p * p + q * q + r * r).sqrt().copysign(p);
                if s != 0.0 {
                    let (ku, lu, nu) = (k as usize, l as usize, nn as usize);
                    if k == m {
                        if l != m {
                            a[(ku, ku - 1)] = -a[(ku, ku - 1)];
                        }
                    } else {
                        a[(ku, ku - 1)] = -s * x;
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    let z = r / s;
                    q /= p;
                    r /= p;
                    for j in ku..=nu {
                        let mut pp = a[(ku, j)] + q * a[(ku + 1, j)];
                        if k + 1 != nn {
                            pp += r * a[(ku + 2, j)];
                            a[(ku + 2, j)] -= pp * z;
                        }
                        a[(ku + 1, j)] -= pp * y;
                        a[(ku, j)] -= pp * x;
                    }
                    let mmin = if nn < k + 3 { nu } else { ku + 3 };
                    for i in lu..=mmin {
                        let mut pp = x * a[(i, ku)] + y * a[(i, ku + 1)];
                        if k + 1 != nn {
                            pp += z * a[(i, ku + 2)];
                            a[(i, ku + 2)] -= pp * r;
                        }
                        a[(i, ku + 1)] -= pp * q;
                        a[(i, ku)] -= pp;
                    }
                }
                k += 1;
            }
        }
    }
    Ok(w)
}

/// All eigenvalues of a real square matrix, sorted by decreasing modulus
/// (ties by decreasing real part, then decreasing imaginary part).
pub fn eigenvalues(m: &Matrix) -> Result<Vec<Complex64>> {
    if !m.is_square() {
        return Err(Error::Config(format!(
            "eigenvalues of a {}x{} matrix",
            m.rows, m.cols
        )));
    }
    if m.data.iter().any(|x| !x.is_finite()) {
        return Err(Error::Config("matrix has non-finite entries".into()));
    }
    let mut a = m.clone();
    if a.rows == 0 {
        return Ok(Vec::new());
    }
    balance(&mut a);
    to_hessenberg(&mut a);
    let mut w = hessenberg_qr(&mut a)?;
    sort_by_modulus(&mut w);
    Ok(w)
}

pub fn sort_by_modulus(w: &mut [Complex64]) {
    w.sort_by(|a, b| {
        b.norm()
            .total_cmp(&a.norm())
            .then(b.re.total_cmp(&a.re))
            .then(b.im.total_cmp(&a.im))
    });
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &Matrix) -> Result<f64> {
    Ok(eigenvalues(m)?.first().map_or(0.0, |z| z.norm()))
}

fn solve_complex(mut a: Vec<Vec<Complex64>>, mut b: Vec<Complex64>) -> Option<Vec<Complex64>> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].norm().total_cmp(&a[j][k].norm()))?;
        if a[p][k].norm() == 0.0 {
            return None;
        }
        a.swap(k, p);
        b.swap(k, p);
        #[allow(clippy::needless_range_loop)]
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                let akj = a[k][j];
                a[i][j] -= f * akj;
            }
            let bk = b[k];
            b[i] -= f * bk;
        }
    }
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    for i in (0..n).rev() {
        let s: Complex64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Some(x)
}

/// Approximate eigenvector of `m` for the eigenvalue `mu`, by inverse
/// iteration with a slightly perturbed shift.
pub fn eigenvector(m: &Matrix, mu: Complex64) -> Vec<Complex64> {
    let n = m.rows;
    let scale = m.max_abs().max(1.0);
    let shift = mu + Complex64::new(1e-10 * scale, 1e-10 * scale);
    let shifted: Vec<Vec<Complex64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let d = if i == j {
                        shift
                    } else {
                        Complex64::new(0.0, 0.0)
                    };
                    Complex64::new(m[(i, j)], 0.0) - d
                })
                .collect()
        })
        .collect();
    let mut x: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(1.0 + 0.1 * i as f64, 0.0))
        .collect();
    for _ in 0..3 {
        let Some(y) = solve_complex(shifted.clone(), x.clone()) else {
            break;
        };
        let norm = y.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            break;
        }
        x = y.into_iter().map(|z| z / norm).collect();
    }
    x
}

/// `‖m x - μ x‖ / (‖m‖ ‖x‖)` for the inverse-iteration eigenvector of `μ`.
pub fn eigen_residual(m: &Matrix, mu: Complex64) -> f64 {
    let x = eigenvector(m, mu);
    let n = m.rows;
    let mut res = 0.0;
    for i in 0..n {
        let mut acc = -mu * x[i];
        for j in 0..n {
            acc += m[(i, j)] * x[j];
        }
        res += acc.norm_sqr();
    }
    let xn = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    res.sqrt() / (m.norm().max(f64::MIN_POSITIVE) * xn)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol * b.norm().max(1.0)
    }

    #[test]
    fn products_and_det() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let i = Matrix::identity(2);
        assert_eq!(a.mul(&i), a);
        assert_eq!(a.mul(&a).as_slice(), &[7.0, 10.0, 15.0, 22.0]);
        assert!((a.det() + 2.0).abs() < 1e-15);
        assert_eq!(a.sub(&a).max_abs(), 0.0);
        assert_eq!(a.trace(), 5.0);
        assert_eq!(a.mul_vec(&[1.0, 1.0]), vec![3.0, 7.0]);
        let p = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(p.det(), -1.0);
    }

    #[test]
    fn two_by_two_matches_quadratic_formula() {
        for (a, b, c, d) in [
            (1.0, 2.0, 3.0, 4.0),
            (0.0, -1.0, 1.0, 0.0),
            (0.5, 0.2, -0.7, 0.1),
        ] {
            let m = Matrix::from_rows(&[vec![a, b], vec![c, d]]).unwrap();
            let tr = a + d;
            let det = a * d - b * c;
            let disc = Complex64::new(tr * tr - 4.0 * det, 0.0).sqrt();
            let mut expected = vec![
                (Complex64::new(tr, 0.0) + disc) / 2.0,
                (Complex64::new(tr, 0.0) - disc) / 2.0,
            ];
            sort_by_modulus(&mut expected);
            let got = eigenvalues(&m).unwrap();
            for (g, e) in got.iter().zip(&expected) {
                assert!(close(*g, *e, 1e-14), "{g} vs {e}");
            }
        }
    }

    #[test]
    fn triangular_and_companion() {
        let m = Matrix::from_rows(&[
            vec![3.0, 1.0, 7.0],
            vec![0.0, -2.0, 5.0],
            vec![0.0, 0.0, 0.5],
        ])
        .unwrap();
        let w = eigenvalues(&m).unwrap();
        let re: Vec<f64> = w.iter().map(|z| z.re).collect();
        assert_eq!(re, vec![3.0, -2.0, 0.5]);
        // x^4 - 10x^3 + 35x^2 - 50x + 24 = (x-1)(x-2)(x-3)(x-4)
        let c = Matrix::from_rows(&[
            vec![10.0, -35.0, 50.0, -24.0],
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
        ])
        .unwrap();
        let w = eigenvalues(&c).unwrap();
        for (z, e) in w.iter().zip([4.0, 3.0, 2.0, 1.0]) {
            assert!((z.re - e).abs() < 1e-10 && z.im.abs() < 1e-10);
        }
    }

    #[test]
    fn rotation_has_unit_complex_pair() {
        let th = 0.3f64;
        let m = Matrix::from_rows(&[
            vec![th.cos(), -th.sin(), 0.0],
            vec![th.sin(), th.cos(), 0.0],
            vec![0.0, 0.0, 0.2],
        ])
        .unwrap();
        let w = eigenvalues(&m).unwrap();
        assert!((w[0].norm() - 1.0).abs() < 1e-14);
        assert!((w[0].im.abs() - th.sin()).abs() < 1e-14);
        assert!((w[0] - w[1].conj()).norm() < 1e-14);
        assert!((w[2].re - 0.2).abs() < 1e-15);
        for z in &w {
            assert!(eigen_residual(&m, *z) < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(eigenvalues(&Matrix::zeros(2, 3)).is_err());
        let mut m = Matrix::identity(2);
        m[(0, 1)] = f64::NAN;
        assert!(eigenvalues(&m).is_err());
        assert!(eigenvalues(&Matrix::zeros(0, 0)).unwrap().is_empty());
    }

    fn random_matrix(n: usize, seed: u64) -> Matrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn agrees_with_nalgebra() {
        for (n, seed) in [(1, 1), (2, 2), (3, 3), (5, 4), (8, 5), (12, 6), (20, 7)] {
            let m = random_matrix(n, seed);
            let ours = eigenvalues(&m).unwrap();
            let na = nalgebra::DMatrix::from_row_slice(n, n, m.as_slice());
            let mut theirs: Vec<Complex64> = na
                .complex_eigenvalues()
                .iter()
                .map(|z| Complex64::new(z.re, z.im))
                .collect();
            sort_by_modulus(&mut theirs);
            // Pair each of ours with the nearest reference eigenvalue.
            for z in &ours {
                let d = theirs
                    .iter()
                    .map(|t| (t - z).norm())
                    .fold(f64::INFINITY, f64::min);
                assert!(d < 1e-10, "n = {n}: {z} has no partner (distance {d})");
            }
            let det: Complex64 = ours.iter().product();
            assert!((det.re - m.det()).abs() < 1e-10 * m.det().abs().max(1.0));
            assert!(det.im.abs() < 1e-10);
            let tr: f64 = ours.iter().map(|z| z.re).sum();
            assert!((tr - m.trace()).abs() < 1e-12 * n as f64);
        }
    }

    proptest! {
        #[test]
        fn residuals_are_small(seed in 0u64..10_000, n in 1usize..10) {
            let m = random_matrix(n, seed);
            let w = eigenvalues(&m).unwrap();
            prop_assert_eq!(w.len(), n);
            for z in &w {
                prop_assert!(eigen_residual(&m, *z) < 1e-8);
            }
        }
    }
}
