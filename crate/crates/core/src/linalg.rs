//! Dense linear-algebra kernels: symmetric spectra and matrix functions,
//! matrix exponentials, resolvents and a Lyapunov solver.
//!
//! Decompositions are delegated to `nalgebra`; everything here adds the
//! symmetry/stability contracts the engines rely on.

use nalgebra::{Complex, DMatrix, DVector, Schur, SymmetricEigen, SVD};

use crate::error::{Error, Result};
use crate::scalar::{from_usize, lit, to_f64, Real};

pub type ComplexMatrix<T> = DMatrix<Complex<T>>;

/// Relative asymmetry accepted before symmetrizing.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Largest real part an eigenvalue may have for a drift to count as stable.
pub const STABILITY_TOL: f64 = 1e-12;
/// Above this size the Kronecker Lyapunov solve is refused (memory is O(n^4)).
pub const KRONECKER_MAX_DIM: usize = 64;

/// Eigendecomposition `V = Q diag(eigenvalues) Q^T` of a real symmetric
/// matrix, eigenvalues ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricSpectrum<T: Real> {
    pub eigenvalues: DVector<T>,
    pub eigenvectors: DMatrix<T>,
}

impl<T: Real> SymmetricSpectrum<T> {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn min_eigenvalue(&self) -> T {
        self.eigenvalues[0]
    }

    pub fn max_eigenvalue(&self) -> T {
        self.eigenvalues[self.dim() - 1]
    }

    pub fn reconstruct(&self) -> DMatrix<T> {
        self.map(|x| x)
    }

    /// `Q f(Λ) Q^T` without domain checks.
    fn map(&self, f: impl Fn(T) -> T) -> DMatrix<T> {
        let q = &self.eigenvectors;
        let mut scaled = q.clone();
        for (mut col, &lambda) in scaled.column_iter_mut().zip(self.eigenvalues.iter()) {
            col *= f(lambda);
        }
        symmetrize(&(scaled * q.transpose()))
    }
}

pub fn ensure_square<T: Real>(m: &DMatrix<T>) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(m.nrows())
}

pub fn max_abs<T: Real>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, x| acc.max(x.abs()))
}

pub fn is_finite<T: Real>(m: &DMatrix<T>) -> bool {
    m.iter().all(|x| x.is_finite())
}

pub fn asymmetry<T: Real>(m: &DMatrix<T>) -> T {
    let n = m.nrows();
    let mut worst = T::zero();
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * lit::<T>(0.5)
}

/// `max_i sum_j |M(i,j)|`.
pub fn inf_norm<T: Real>(m: &DMatrix<T>) -> T {
    m.row_iter()
        .map(|row| row.iter().fold(T::zero(), |acc, x| acc + x.abs()))
        .fold(T::zero(), |acc, x| acc.max(x))
}

/// Largest singular value.
pub fn norm2<T: Real>(m: &DMatrix<T>) -> T {
    if m.is_empty() {
        return T::zero();
    }
    SVD::new(m.clone(), false, false)
        .singular_values
        .iter()
        .fold(T::zero(), |acc, &s| acc.max(s))
}

pub fn sym_eig<T: Real>(v: &DMatrix<T>) -> Result<SymmetricSpectrum<T>> {
    ensure_square(v)?;
    let scale = T::one().max(max_abs(v));
    let asym = asymmetry(v);
    if asym > lit::<T>(SYMMETRY_TOL) * scale {
        return Err(Error::NonSymmetric {
            asymmetry: to_f64(asym),
        });
    }
    let eig = SymmetricEigen::try_new(symmetrize(v), T::default_epsilon(), 0)
        .ok_or(Error::ConvergenceFailure("symmetric eigendecomposition"))?;

    let n = v.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(SymmetricSpectrum {
        eigenvalues,
        eigenvectors,
    })
}

/// `Q f(Λ) Q^T`; fails if `f` is not finite at some eigenvalue.
pub fn matrix_function<T: Real>(
    spec: &SymmetricSpectrum<T>,
    f: impl Fn(T) -> T,
) -> Result<DMatrix<T>> {
    for &lambda in spec.eigenvalues.iter() {
        if !f(lambda).is_finite() {
            return Err(Error::DomainError {
                eigenvalue: to_f64(lambda),
            });
        }
    }
    Ok(spec.map(f))
}

/// Like [`matrix_function`] for functions of `sqrt(λ)`: rejects any
/// eigenvalue that is not strictly positive.
pub fn matrix_function_of_sqrt<T: Real>(
    spec: &SymmetricSpectrum<T>,
    f: impl Fn(T) -> T,
) -> Result<DMatrix<T>> {
    if let Some(&bad) = spec.eigenvalues.iter().find(|&&x| x <= T::zero()) {
        return Err(Error::DomainError {
            eigenvalue: to_f64(bad),
        });
    }
    matrix_function(spec, |lambda| f(lambda.sqrt()))
}

/// `e^{tM}` by scaling and squaring with a Padé approximant.
pub fn expm<T: Real>(m: &DMatrix<T>, t: T) -> Result<DMatrix<T>> {
    let n = ensure_square(m)?;
    if t == T::zero() {
        return Ok(DMatrix::identity(n, n));
    }
    let scaled = m * t;
    if !is_finite(&scaled) {
        return Err(Error::Overflow);
    }
    let e = scaled.exp();
    if !is_finite(&e) {
        return Err(Error::Overflow);
    }
    Ok(e)
}

pub fn complexify<T: Real>(m: &DMatrix<T>) -> ComplexMatrix<T> {
    m.map(|x| Complex::new(x, T::zero()))
}

fn one_norm_c<T: Real>(m: &ComplexMatrix<T>) -> T {
    m.column_iter()
        .map(|c| c.iter().fold(T::zero(), |acc, z| acc + z.re.hypot(z.im)))
        .fold(T::zero(), |acc, x| acc.max(x))
}

/// Inverse of a complex matrix, refusing numerically singular input
/// (1-norm condition number beyond `1 / (100 eps)`).
pub fn invert_complex<T: Real>(m: ComplexMatrix<T>) -> Option<ComplexMatrix<T>> {
    let norm = one_norm_c(&m);
    let inv = m.lu().try_inverse()?;
    if !inv.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        return None;
    }
    let cond = norm * one_norm_c(&inv);
    if cond * lit::<T>(100.0) * T::default_epsilon() >= T::one() {
        return None;
    }
    Some(inv)
}

/// `R_A(z) = (A - z)^{-1}`.
pub fn resolvent<T: Real>(a: &DMatrix<T>, z: Complex<T>) -> Result<ComplexMatrix<T>> {
    let n = ensure_square(a)?;
    let mut shifted = complexify(a);
    for i in 0..n {
        shifted[(i, i)] -= z;
    }
    invert_complex(shifted).ok_or(Error::SingularShift {
        re: to_f64(z.re),
        im: to_f64(z.im),
    })
}

/// Complex Schur form `A = U T U^H` with `T` upper triangular.
pub fn complex_schur<T: Real>(a: &DMatrix<T>) -> Result<(ComplexMatrix<T>, ComplexMatrix<T>)> {
    ensure_square(a)?;
    let schur = Schur::try_new(complexify(a), T::default_epsilon(), 0)
        .ok_or(Error::ConvergenceFailure("complex Schur decomposition"))?;
    let (u, mut t) = schur.unpack();
    // Clear round-off below the diagonal so back substitution sees a
    // triangular matrix.
    let n = t.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            t[(i, j)] = Complex::new(T::zero(), T::zero());
        }
    }
    Ok((u, t))
}

/// Eigenvalues of a general real square matrix.
pub fn eigenvalues<T: Real>(a: &DMatrix<T>) -> Result<Vec<Complex<T>>> {
    let n = ensure_square(a)?;
    if n == 0 {
        return Ok(Vec::new());
    }
    let (_, t) = complex_schur(a)?;
    Ok((0..n).map(|i| t[(i, i)]).collect())
}

/// Largest real part over the spectrum.
pub fn spectral_abscissa<T: Real>(a: &DMatrix<T>) -> Result<T> {
    Ok(eigenvalues(a)?
        .iter()
        .fold(T::min_value().unwrap(), |acc, z| acc.max(z.re)))
}

/// Solves `A X + X A^T = -rhs` for symmetric `rhs` (Bartels-Stewart on the
/// complex Schur form, O(n^3)).
pub fn solve_lyapunov<T: Real>(a: &DMatrix<T>, rhs: &DMatrix<T>) -> Result<DMatrix<T>> {
    let n = ensure_square(a)?;
    if rhs.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "lyapunov rhs {:?} vs drift {n}x{n}",
            rhs.shape()
        )));
    }
    let rhs = checked_symmetric(rhs)?;
    let (u, t) = complex_schur(a)?;
    let worst = (0..n).fold(T::min_value().unwrap(), |acc, i| acc.max(t[(i, i)].re));
    if worst >= -lit::<T>(STABILITY_TOL) {
        return Err(Error::UnstableDrift {
            real_part: to_f64(worst),
        });
    }

    let x = schur_lyapunov(&u, &t, &rhs);
    // One refinement step: the solve is backward stable, but near-undamped
    // drifts make it ill-conditioned, and correcting against the residual
    // recovers the lost digits.
    let residual = a * &x + &x * a.transpose() + &rhs;
    let correction = schur_lyapunov(&u, &t, &symmetrize(&residual));
    Ok(symmetrize(&(x + correction)))
}

/// Solves `A X + X Aᵀ = -rhs` given the complex Schur form `A = U T U*`.
fn schur_lyapunov<T: Real>(
    u: &ComplexMatrix<T>,
    t: &ComplexMatrix<T>,
    rhs: &DMatrix<T>,
) -> DMatrix<T> {
    let n = t.nrows();
    let f = -(u.adjoint() * complexify(rhs) * u);
    let mut y = ComplexMatrix::<T>::zeros(n, n);
    for j in (0..n).rev() {
        let mut col = f.column(j).into_owned();
        for k in (j + 1)..n {
            let coeff = t[(j, k)].conj();
            col -= y.column(k) * coeff;
        }
        let shift = t[(j, j)].conj();
        // (T + shift I) y_j = col, upper triangular.
        for i in (0..n).rev() {
            let mut acc = col[i];
            for k in (i + 1)..n {
                acc -= t[(i, k)] * col[k];
            }
            col[i] = acc / (t[(i, i)] + shift);
        }
        y.set_column(j, &col);
    }
    symmetrize(&(u * y * u.adjoint()).map(|z| z.re))
}

/// Reference Lyapunov solve through the `n^2 x n^2` Kronecker system.
/// Cost O(n^6); refused above [`KRONECKER_MAX_DIM`].
pub fn solve_lyapunov_kronecker<T: Real>(a: &DMatrix<T>, rhs: &DMatrix<T>) -> Result<DMatrix<T>> {
    let n = ensure_square(a)?;
    if n > KRONECKER_MAX_DIM {
        return Err(Error::SizeCap {
            n,
            cap: KRONECKER_MAX_DIM,
        });
    }
    let rhs = checked_symmetric(rhs)?;
    let worst = spectral_abscissa(a)?;
    if worst >= -lit::<T>(STABILITY_TOL) {
        return Err(Error::UnstableDrift {
            real_part: to_f64(worst),
        });
    }
    let eye = DMatrix::<T>::identity(n, n);
    let system = eye.kronecker(a) + a.kronecker(&eye);
    let b = DVector::from_iterator(n * n, rhs.iter().map(|&x| -x));
    let sol = system
        .lu()
        .solve(&b)
        .ok_or(Error::ConvergenceFailure("kronecker lyapunov solve"))?;
    Ok(symmetrize(&DMatrix::from_column_slice(
        n,
        n,
        sol.as_slice(),
    )))
}

fn checked_symmetric<T: Real>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    let scale = T::one().max(max_abs(m));
    let asym = asymmetry(m);
    if asym > lit::<T>(SYMMETRY_TOL) * scale {
        return Err(Error::NonSymmetric {
            asymmetry: to_f64(asym),
        });
    }
    Ok(symmetrize(m))
}

/// Frobenius residual `||A X + X A^T + rhs||_F / ||rhs||_F`.
pub fn lyapunov_residual<T: Real>(a: &DMatrix<T>, x: &DMatrix<T>, rhs: &DMatrix<T>) -> T {
    let r = a * x + x * a.transpose() + rhs;
    let scale = rhs.norm();
    if scale > T::zero() {
        r.norm() / scale
    } else {
        r.norm()
    }
}

/// `||A - B||_F / max(||B||_F, tiny)`.
pub fn rel_frobenius<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    let diff = (a - b).norm();
    let scale = b.norm();
    if scale > T::zero() {
        diff / scale
    } else {
        diff
    }
}

/// Average of `n` values, used for trace-based scales.
pub fn mean_diagonal<T: Real>(m: &DMatrix<T>) -> T {
    let n = m.nrows().min(m.ncols());
    if n == 0 {
        return T::zero();
    }
    m.trace() / from_usize(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn chain2() -> DMatrix<f64> {
        dmatrix![2.0, -1.0; -1.0, 2.0]
    }

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &g * g.transpose() + DMatrix::identity(n, n) * 0.5
    }

    fn random_stable(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let shift = spectral_abscissa(&g).unwrap() + 0.3;
        g - DMatrix::identity(n, n) * shift
    }

    // Truncated Taylor series of cos(sqrt(V) t) = sum (-1)^k t^{2k} V^k / (2k)!.
    fn cos_sqrt_taylor(v: &DMatrix<f64>, t: f64, terms: usize) -> DMatrix<f64> {
        let n = v.nrows();
        let mut sum = DMatrix::zeros(n, n);
        let mut power = DMatrix::identity(n, n);
        let mut coeff = 1.0;
        for k in 0..terms {
            sum += &power * coeff;
            power = &power * v;
            coeff *= -t * t / (((2 * k + 1) * (2 * k + 2)) as f64);
        }
        sum
    }

    #[test]
    fn identity_spectrum() {
        let spec = sym_eig(&DMatrix::<f64>::identity(3, 3)).unwrap();
        for &x in spec.eigenvalues.iter() {
            assert!((x - 1.0).abs() < 1e-14);
        }
        let q = &spec.eigenvectors;
        assert!((q.transpose() * q - DMatrix::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn diagonal_spectrum_ascending() {
        let spec = sym_eig::<f64>(&dmatrix![4.0, 0.0; 0.0, 1.0]).unwrap();
        assert_eq!(spec.eigenvalues.as_slice(), &[1.0, 4.0]);
        assert!((spec.eigenvectors[(1, 0)].abs() - 1.0f64).abs() < 1e-14);
    }

    #[test]
    fn chain_eigenvalues_match_characteristic_polynomial() {
        // det([[2-x,-1],[-1,2-x]]) = (x-1)(x-3)
        let spec = sym_eig(&chain2()).unwrap();
        assert!((spec.eigenvalues[0] - 1.0).abs() < 1e-13);
        assert!((spec.eigenvalues[1] - 3.0).abs() < 1e-13);
    }

    #[test]
    fn rejects_asymmetric() {
        let m = dmatrix![1.0, 0.5; 0.0, 1.0];
        assert!(matches!(sym_eig(&m), Err(Error::NonSymmetric { .. })));
    }

    #[test]
    fn reconstruction_and_orthonormality() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..8 {
            let v = random_spd(n, &mut rng);
            let spec = sym_eig(&v).unwrap();
            assert!((spec.reconstruct() - &v).norm() / v.norm() < 1e-12);
            let q = &spec.eigenvectors;
            assert!((q.transpose() * q - DMatrix::identity(n, n)).norm() < 1e-12);
        }
    }

    #[test]
    fn inverse_of_diagonal() {
        let spec = sym_eig(&dmatrix![2.0, 0.0; 0.0, 5.0]).unwrap();
        let inv = matrix_function(&spec, |x| 1.0 / x).unwrap();
        assert!((inv - dmatrix![0.5, 0.0; 0.0, 0.2]).norm() < 1e-15);
    }

    #[test]
    fn cos_sqrt_matches_taylor() {
        let spec = sym_eig(&chain2()).unwrap();
        let f = matrix_function_of_sqrt(&spec, |w| w.cos()).unwrap();
        let oracle = cos_sqrt_taylor(&chain2(), 1.0, 30);
        assert!((f - oracle).amax() < 1e-10);
    }

    #[test]
    fn sqrt_of_negative_is_domain_error() {
        let spec = sym_eig(&dmatrix![-1.0, 0.0; 0.0, 1.0]).unwrap();
        assert!(matches!(
            matrix_function_of_sqrt(&spec, |w| w),
            Err(Error::DomainError { .. })
        ));
        assert!(matches!(
            matrix_function(&spec, |x: f64| x.ln()),
            Err(Error::DomainError { .. })
        ));
    }

    #[test]
    fn expm_zero_time_is_identity() {
        let m = dmatrix![1.0, 2.0; 3.0, 4.0];
        assert_eq!(expm(&m, 0.0).unwrap(), DMatrix::identity(2, 2));
    }

    #[test]
    fn expm_semigroup() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_stable(4, &mut rng);
        let lhs = expm(&m, 0.7).unwrap() * expm(&m, 1.3).unwrap();
        let rhs = expm(&m, 2.0).unwrap();
        assert!((lhs - &rhs).norm() / rhs.norm() < 1e-9);
    }

    #[test]
    fn expm_overflow() {
        let m = dmatrix![1e300, 0.0; 0.0, 1.0];
        assert_eq!(expm(&m, 10.0), Err(Error::Overflow));
    }

    #[test]
    fn resolvent_of_minus_identity() {
        let a = -DMatrix::<f64>::identity(2, 2);
        let r = resolvent(&a, Complex::new(1.0, 0.0)).unwrap();
        for i in 0..2 {
            assert!((r[(i, i)] - Complex::new(-0.5, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn resolvent_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_stable(5, &mut rng);
        let z = Complex::new(0.0, 0.7);
        let r = resolvent(&a, z).unwrap();
        let mut shifted = complexify(&a);
        for i in 0..5 {
            shifted[(i, i)] -= z;
        }
        let res = shifted * r - ComplexMatrix::<f64>::identity(5, 5);
        assert!(res.iter().all(|x| x.norm() < 1e-10));
    }

    #[test]
    fn resolvent_on_spectrum_is_singular() {
        let a = dmatrix![0.0, 1.0; -1.0, 0.0];
        assert!(matches!(
            resolvent(&a, Complex::new(0.0, 1.0)),
            Err(Error::SingularShift { .. })
        ));
    }

    #[test]
    fn lyapunov_identity_case() {
        let a = -DMatrix::<f64>::identity(3, 3);
        let x = solve_lyapunov(&a, &(DMatrix::identity(3, 3) * 2.0)).unwrap();
        assert!((x - DMatrix::identity(3, 3)).norm() < 1e-14);
    }

    #[test]
    fn lyapunov_rejects_unstable() {
        let a = dmatrix![0.0, 1.0; -1.0, 0.0];
        assert!(matches!(
            solve_lyapunov(&a, &DMatrix::identity(2, 2)),
            Err(Error::UnstableDrift { .. })
        ));
    }

    #[test]
    fn lyapunov_schur_matches_kronecker() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [1, 2, 5, 9] {
            let a = random_stable(n, &mut rng);
            let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let rhs = &g * g.transpose();
            let x = solve_lyapunov(&a, &rhs).unwrap();
            let xk = solve_lyapunov_kronecker(&a, &rhs).unwrap();
            assert!(lyapunov_residual(&a, &x, &rhs) < 1e-9);
            assert!((&x - &xk).norm() / xk.norm() < 1e-9);
            assert!(asymmetry(&x) == 0.0);
        }
    }

    #[test]
    fn f32_instantiation() {
        let v: DMatrix<f32> = dmatrix![2.0, -1.0; -1.0, 2.0];
        let spec = sym_eig(&v).unwrap();
        assert!((spec.eigenvalues[0] - 1.0).abs() < 1e-5);
        let e = expm(&v, 0.1f32).unwrap();
        assert!(e[(0, 0)] > 1.0);
    }
}
