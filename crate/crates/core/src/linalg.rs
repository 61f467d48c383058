//! Dense helpers that nalgebra does not ship: Kronecker-based Sylvester and
//! Lyapunov solves, ordered complex Schur subspaces and spectral summaries.

use nalgebra::{Complex, DMatrix, DVector, Schur};

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex<f64>>;

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Column-major vectorization.
pub fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

pub fn unvec(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}

fn solve_dense(m: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let lu = m.lu();
    lu.solve(rhs)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Numerical("singular Kronecker system".into()))
}

/// Solves `a X + X b = c`.
pub fn solve_sylvester(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (m, n) = c.shape();
    let op = kron(&DMatrix::identity(n, n), a) + kron(&b.transpose(), &DMatrix::identity(m, m));
    Ok(unvec(&solve_dense(op, &vec_of(c))?, m, n))
}

/// Matrix of the map `X -> aᵀX + X a + cᵀ X c` acting on column-major vec(X).
pub fn lyapunov_operator(a: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let i = DMatrix::<f64>::identity(n, n);
    let at = a.transpose();
    let ct = c.transpose();
    kron(&i, &at) + kron(&at, &i) + kron(&ct, &ct)
}

/// Solves `aᵀX + X a + cᵀ X c + w = 0`.
pub fn solve_generalized_lyapunov(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    w: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let x = solve_dense(lyapunov_operator(a, c), &(-vec_of(w)))?;
    Ok(unvec(&x, n, n))
}

pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    m.complex_eigenvalues().iter().copied().collect()
}

/// Largest real part of the spectrum.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

pub fn min_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    s.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn max_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    s.symmetric_eigenvalues().iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// 2-norm condition number from singular values.
pub fn condition_number<T: nalgebra::ComplexField<RealField = f64>>(m: &DMatrix<T>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub fn to_complex(m: &DMatrix<f64>) -> CMatrix {
    m.map(|v| Complex::new(v, 0.0))
}

/// Unitary similarity on rows/columns `k, k+1` of `t` and columns of `u`.
fn apply_rotation(t: &mut CMatrix, u: &mut CMatrix, k: usize, z: [[Complex<f64>; 2]; 2]) {
    let n = t.nrows();
    for j in 0..n {
        let a = t[(k, j)];
        let b = t[(k + 1, j)];
        t[(k, j)] = z[0][0].conj() * a + z[1][0].conj() * b;
        t[(k + 1, j)] = z[0][1].conj() * a + z[1][1].conj() * b;
    }
    for m in [&mut *t, &mut *u] {
        for i in 0..m.nrows() {
            let a = m[(i, k)];
            let b = m[(i, k + 1)];
            m[(i, k)] = a * z[0][0] + b * z[1][0];
            m[(i, k + 1)] = a * z[0][1] + b * z[1][1];
        }
    }
}

/// Unitary basis whose first column is the unit vector `v`.
fn basis_from(v0: Complex<f64>, v1: Complex<f64>) -> [[Complex<f64>; 2]; 2] {
    let nrm = (v0.norm_sqr() + v1.norm_sqr()).sqrt();
    let (a, b) = (v0 / nrm, v1 / nrm);
    [[a, -b.conj()], [b, a.conj()]]
}

/// Removes any 2×2 bump left on the subdiagonal.
fn triangularize(t: &mut CMatrix, u: &mut CMatrix) {
    let n = t.nrows();
    let scale = t.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
    for k in 0..n.saturating_sub(1) {
        if t[(k + 1, k)].norm() <= 1e-15 * scale {
            t[(k + 1, k)] = Complex::new(0.0, 0.0);
            continue;
        }
        let (p, q, r, s) = (t[(k, k)], t[(k, k + 1)], t[(k + 1, k)], t[(k + 1, k + 1)]);
        let half_tr = (p + s) * 0.5;
        let disc = ((p - s) * 0.5 * ((p - s) * 0.5) + q * r).sqrt();
        let lam = half_tr + disc;
        // eigenvector of [[p,q],[r,s]] for lam
        let (v0, v1) = if (lam - p).norm() > (lam - s).norm() {
            (q, lam - p)
        } else {
            (lam - s, r)
        };
        apply_rotation(t, u, k, basis_from(v0, v1));
        t[(k + 1, k)] = Complex::new(0.0, 0.0);
    }
}

/// Swaps diagonal entries `k` and `k+1` of an upper triangular `t`.
fn swap_diagonal(t: &mut CMatrix, u: &mut CMatrix, k: usize) {
    let a = t[(k, k)];
    let b = t[(k + 1, k + 1)];
    let c = t[(k, k + 1)];
    let (v0, v1) = (c, b - a);
    if v0.norm() == 0.0 && v1.norm() == 0.0 {
        return;
    }
    apply_rotation(t, u, k, basis_from(v0, v1));
    t[(k + 1, k)] = Complex::new(0.0, 0.0);
}

/// Complex Schur form `m = U T Uᴴ` with the eigenvalues satisfying `first` moved
/// to the leading diagonal positions. Returns `(U, T, count)` where `count` is
/// the number of selected eigenvalues.
pub fn ordered_schur(
    m: &DMatrix<f64>,
    first: impl Fn(Complex<f64>) -> bool,
) -> Result<(CMatrix, CMatrix, usize)> {
    let n = m.nrows();
    let schur = Schur::try_new(to_complex(m), 1e-15, 10_000)
        .ok_or_else(|| Error::Numerical("Schur iteration did not converge".into()))?;
    let (mut u, mut t) = schur.unpack();
    triangularize(&mut t, &mut u);
    // bubble selected eigenvalues upward; stable for the small sizes used here
    let mut placed = 0;
    for j in 0..n {
        if first(t[(j, j)]) {
            let mut k = j;
            while k > placed {
                swap_diagonal(&mut t, &mut u, k - 1);
                k -= 1;
            }
            placed += 1;
        }
    }
    Ok((u, t, placed))
}

/// Real solution `X = U₂ U₁⁻¹` from the stable invariant subspace of `h` (2n×2n).
/// Returns the solution and the condition number of `U₁`.
pub fn stable_subspace_solution(h: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let n2 = h.nrows();
    let n = n2 / 2;
    let (u, _t, count) = ordered_schur(h, |z| z.re < 0.0)?;
    if count != n {
        return Err(Error::NoStabilizingSolution(format!(
            "{count} stable eigenvalues, expected {n}"
        )));
    }
    let u1 = u.view((0, 0), (n, n)).into_owned();
    let u2 = u.view((n, 0), (n, n)).into_owned();
    let cond = condition_number(&u1);
    let inv = u1
        .try_inverse()
        .ok_or_else(|| Error::NoStabilizingSolution("U11 singular".into()))?;
    let x = u2 * inv;
    Ok((x.map(|z| z.re), cond))
}
