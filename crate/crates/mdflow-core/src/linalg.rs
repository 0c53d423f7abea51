//! Fixed-size point arithmetic and a few scalar helpers that `core` lacks.

pub const MAX_DIM: usize = 3;

/// A point or vector in up to three dimensions; unused trailing components are zero.
pub type Vecd = [f64; MAX_DIM];

pub const ZERO: Vecd = [0.0; MAX_DIM];

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}
#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}
#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}
#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}
#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}
#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}
#[inline]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}
#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}
#[inline]
pub fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}
#[inline]
pub fn round(x: f64) -> f64 {
    libm::round(x)
}

pub fn vec_from(xs: &[f64]) -> Vecd {
    let mut v = ZERO;
    v[..xs.len()].copy_from_slice(xs);
    v
}

#[inline]
pub fn dot(a: &Vecd, b: &Vecd) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
#[inline]
pub fn norm(a: &Vecd) -> f64 {
    sqrt(dot(a, a))
}
#[inline]
pub fn norm2(a: &Vecd) -> f64 {
    dot(a, a)
}
#[inline]
pub fn add(a: &Vecd, b: &Vecd) -> Vecd {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}
#[inline]
pub fn sub(a: &Vecd, b: &Vecd) -> Vecd {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
#[inline]
pub fn scale(a: &Vecd, s: f64) -> Vecd {
    [a[0] * s, a[1] * s, a[2] * s]
}
/// `a + s * b`
#[inline]
pub fn axpy(a: &Vecd, s: f64, b: &Vecd) -> Vecd {
    [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]]
}
#[inline]
pub fn dist(a: &Vecd, b: &Vecd) -> f64 {
    norm(&sub(a, b))
}
#[inline]
pub fn dist2(a: &Vecd, b: &Vecd) -> f64 {
    norm2(&sub(a, b))
}

/// Solves the symmetric positive definite system `a x = b` in place (dense Cholesky).
/// Returns `false` when the matrix is not numerically positive definite.
pub fn cholesky_solve(a: &mut [f64], n: usize, b: &mut [f64]) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if d <= 0.0 || d.is_nan() {
            return false;
        }
        let d = sqrt(d);
        a[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * n + k] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= a[k * n + i] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    true
}

/// Solves a symmetric tridiagonal system with diagonal `d` and off-diagonal `e`
/// (`e[i]` couples unknowns `i` and `i+1`). Overwrites `rhs` with the solution.
/// Returns `false` on a non-positive pivot.
pub fn tridiag_solve(d: &[f64], e: &[f64], rhs: &mut [f64]) -> bool {
    let n = d.len();
    if n == 0 {
        return true;
    }
    let mut piv = alloc::vec![0.0; n];
    let mut l = alloc::vec![0.0; n];
    piv[0] = d[0];
    if !(piv[0] > 0.0) {
        return false;
    }
    for i in 1..n {
        l[i] = e[i - 1] / piv[i - 1];
        piv[i] = d[i] - l[i] * e[i - 1];
        if !(piv[i] > 0.0) {
            return false;
        }
        rhs[i] -= l[i] * rhs[i - 1];
    }
    rhs[n - 1] /= piv[n - 1];
    for i in (0..n - 1).rev() {
        rhs[i] = (rhs[i] - e[i] * rhs[i + 1]) / piv[i];
    }
    true
}

/// Kahan-compensated sum.
pub fn ksum<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    let mut s = 0.0;
    let mut c = 0.0;
    for x in it {
        let y = x - c;
        let t = s + y;
        c = (t - s) - y;
        s = t;
    }
    s
}
