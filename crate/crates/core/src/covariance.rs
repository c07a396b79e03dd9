//! Stationary and lagged covariance of the forced system.
//!
//! Four analytic engines compute the same object:
//!
//! * **time domain**: `C(s) = W(s) C_G + C_G W(-s)ᵀ` with
//!   `W(s) = ∫_0^∞ e^{τA} C_f(τ + s) dτ`;
//! * **spectral**: `C = -∫ a(λ) (R(iλ) C_G + C_G R(iλ)ᵀ) dλ`, where
//!   `R(z) = (A - z)⁻¹`;
//! * **Q-block**: the same λ-integral assembled from the `N×N` blocks of
//!   `R(z) C_G = Q(z) / 2α`;
//! * **Lyapunov**: white noise only, `A X + X Aᵀ = -σ² D₂`.
//!
//! Lags follow `C(s) = ⟨ψ(t) ψ(t+s)ᵀ⟩`. For white noise this gives
//! `C(s) = σ² C_G e^{sAᵀ}` when `s ≥ 0`.
//!
//! The frequency engines integrate over `[0, ∞)` and double the real part,
//! which is exact because `a` is even and `R(-iλ) = conj R(iλ)`.

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    self, complexify, expm, invert_complex, max_abs, norm2, rel_frobenius, resolvent, symmetrize,
    ComplexMatrix,
};
use crate::model::{block_diag, build_drift, spd_inverse, DriftMatrix, HamiltonianModel};
use crate::noise::{NoiseKind, NoiseModel};
use crate::quadrature::{integrate, integrate_to_infinity, QuadratureOptions, QuadratureResult};
use crate::reachability::SPECTRAL_TOL;
use crate::scalar::{cplx, from_usize, lit, to_f64, Real};

/// Largest admissible quadrature error estimate.
pub const QUADRATURE_FAILURE: f64 = 1e-6;
/// Relative tolerance of the Lyapunov solution against `σ² C_G`.
pub const LYAPUNOV_GIBBS_TOL: f64 = 1e-9;
/// Threshold of the Gibbs verdict.
pub const GIBBS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    TimeDomain,
    Spectral,
    Lyapunov,
    QBlock,
    MonteCarlo,
}

impl Engine {
    pub const ANALYTIC: [Engine; 4] = [
        Engine::TimeDomain,
        Engine::Spectral,
        Engine::QBlock,
        Engine::Lyapunov,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Engine::TimeDomain => "time_domain",
            Engine::Spectral => "spectral",
            Engine::Lyapunov => "lyapunov",
            Engine::QBlock => "q_block",
            Engine::MonteCarlo => "monte_carlo",
        }
    }
}

impl std::str::FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.replace('-', "_").as_str() {
            "time_domain" | "time" => Engine::TimeDomain,
            "spectral" => Engine::Spectral,
            "lyapunov" => Engine::Lyapunov,
            "q_block" | "qblock" => Engine::QBlock,
            "monte_carlo" | "mc" => Engine::MonteCarlo,
            other => return Err(Error::BadConfig(format!("unknown engine `{other}`"))),
        })
    }
}

/// How an engine's number was obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureMeta<T> {
    pub error_estimate: T,
    pub evaluations: usize,
    pub panels: usize,
    pub converged: bool,
    /// Upper end of a truncated integration range.
    pub truncation: Option<T>,
    pub breakpoints: Vec<T>,
}

impl<T: Real> QuadratureMeta<T> {
    /// Metadata of a closed-form or direct solve.
    pub fn exact() -> Self {
        Self {
            error_estimate: T::zero(),
            evaluations: 0,
            panels: 0,
            converged: true,
            truncation: None,
            breakpoints: Vec::new(),
        }
    }

    fn from_result(
        r: &QuadratureResult<T>,
        scale: T,
        truncation: Option<T>,
        breakpoints: Vec<T>,
    ) -> Self {
        Self {
            error_estimate: r.error * scale,
            evaluations: r.evaluations,
            panels: r.panels,
            converged: r.converged,
            truncation,
            breakpoints,
        }
    }

    fn merge(mut self, other: &Self) -> Self {
        self.error_estimate += other.error_estimate;
        self.evaluations += other.evaluations;
        self.panels += other.panels;
        self.converged &= other.converged;
        self
    }
}

/// Covariance `C(s)` split into `N×N` blocks; `c_qp[(i, j)] = ⟨q_i(t) p_j(t+s)⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceResult<T: Real> {
    pub c_qq: DMatrix<T>,
    pub c_qp: DMatrix<T>,
    pub c_pq: DMatrix<T>,
    pub c_pp: DMatrix<T>,
    pub lag: T,
    pub engine: Engine,
    pub meta: QuadratureMeta<T>,
}

impl<T: Real> CovarianceResult<T> {
    pub fn from_full(full: &DMatrix<T>, lag: T, engine: Engine, meta: QuadratureMeta<T>) -> Self {
        let n = full.nrows() / 2;
        Self {
            c_qq: full.view((0, 0), (n, n)).into_owned(),
            c_qp: full.view((0, n), (n, n)).into_owned(),
            c_pq: full.view((n, 0), (n, n)).into_owned(),
            c_pp: full.view((n, n), (n, n)).into_owned(),
            lag,
            engine,
            meta,
        }
    }

    pub fn n(&self) -> usize {
        self.c_qq.nrows()
    }

    /// The `2N×2N` matrix.
    pub fn full(&self) -> DMatrix<T> {
        let n = self.n();
        let mut out = DMatrix::zeros(2 * n, 2 * n);
        out.view_mut((0, 0), (n, n)).copy_from(&self.c_qq);
        out.view_mut((0, n), (n, n)).copy_from(&self.c_qp);
        out.view_mut((n, 0), (n, n)).copy_from(&self.c_pq);
        out.view_mut((n, n), (n, n)).copy_from(&self.c_pp);
        out
    }

    /// `max |C(q_i, p_j)|` over both mixed blocks.
    pub fn max_qp(&self) -> T {
        max_abs(&self.c_qp).max(max_abs(&self.c_pq))
    }

    pub fn max_pp(&self) -> T {
        max_abs(&self.c_pp)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EngineOptions<T> {
    pub quadrature: QuadratureOptions<T>,
    /// Time-domain truncation: the neglected tail of `‖e^{τA}‖ |C_f|` is
    /// below this fraction of its peak.
    pub tail_tol: T,
    /// Spectral engine: integrate over the whole line and check that the
    /// imaginary parts cancel, instead of doubling the half line.
    pub full_line: bool,
}

impl<T: Real> Default for EngineOptions<T> {
    fn default() -> Self {
        Self {
            quadrature: QuadratureOptions {
                abs_tol: lit(1e-12),
                rel_tol: lit(1e-10),
                max_panels: 20_000,
                parallel: true,
            },
            tail_tol: lit(1e-13),
            full_line: false,
        }
    }
}

fn require_dissipative<T: Real>(drift: &DriftMatrix<T>) -> Result<()> {
    if drift.spectral_abscissa() < -lit::<T>(SPECTRAL_TOL) {
        Ok(())
    } else {
        Err(Error::NotDissipative {
            abscissa: to_f64(drift.spectral_abscissa()),
        })
    }
}

fn check_quadrature<T: Real>(r: &QuadratureResult<T>, scale: T) -> Result<()> {
    let err = r.error * scale;
    if !r.value.iter().all(|x| x.is_finite()) {
        return Err(Error::Overflow);
    }
    if err > lit(QUADRATURE_FAILURE) {
        return Err(Error::QuadratureFailure {
            estimate: to_f64(err),
            tolerance: QUADRATURE_FAILURE,
        });
    }
    Ok(())
}

fn nan_vec<T: Real>(len: usize) -> Vec<T> {
    vec![lit(f64::NAN); len]
}

/// Positive imaginary parts of the spectrum of `A`: the resonance peaks
/// of the λ-integrands.
fn resonance_frequencies<T: Real>(drift: &DriftMatrix<T>) -> Vec<T> {
    let mut f: Vec<T> = drift
        .eigenvalues()
        .iter()
        .map(|z| z.im)
        .filter(|&w| w > lit(1e-12))
        .collect();
    f.sort_by(|a, b| a.partial_cmp(b).unwrap());
    f.dedup_by(|a, b| (*a - *b).abs() <= lit::<T>(1e-12) * b.abs());
    f
}

fn noise_frequency_scale<T: Real>(noise: &NoiseModel<T>) -> Option<T> {
    match *noise.kind() {
        NoiseKind::White { .. } => None,
        NoiseKind::OrnsteinUhlenbeck { mu, .. } => Some(mu),
        NoiseKind::GaussianCov { tau_c, .. } => Some(T::one() / tau_c),
        NoiseKind::BandLimited { b, .. } => Some(b),
    }
}

/// `∫_0^∞ f(λ) dλ`, or `∫_0^b` for band-limited noise, with breakpoints at
/// the resonances of `A` and at the noise scale.
fn integrate_frequency<T, F>(
    f: F,
    drift: &DriftMatrix<T>,
    noise: &NoiseModel<T>,
    opts: &QuadratureOptions<T>,
) -> (QuadratureResult<T>, Vec<T>)
where
    T: Real,
    F: Fn(T) -> Vec<T> + Sync,
{
    let mut breaks = resonance_frequencies(drift);
    if let Some(b) = noise.support_bound() {
        breaks.retain(|&x| x < b);
        let mut points = vec![T::zero()];
        points.extend(breaks.iter().copied());
        points.push(b);
        (integrate(f, &points, opts), breaks)
    } else {
        if let Some(w) = noise_frequency_scale(noise) {
            breaks.push(w);
            breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        }
        (integrate_to_infinity(f, T::zero(), &breaks, opts), breaks)
    }
}

// ---------------------------------------------------------------------------
// time domain

/// Smallest doubling of `1/|abscissa|` with `‖e^{tA}‖₂ <= tol`.
fn decay_horizon<T: Real>(drift: &DriftMatrix<T>, tol: T) -> Result<T> {
    let rate = -drift.spectral_abscissa();
    let mut t = T::one() / rate;
    let cap = lit::<T>(1e6) / rate;
    while norm2(&expm(drift.a(), t)?) > tol {
        t *= lit(2.0);
        if t > cap {
            return Err(Error::ConvergenceFailure("decay horizon of e^{tA}"));
        }
    }
    Ok(t)
}

/// Closed form of `W(s)` for white noise `σ² δ`: `σ² e^{-sA}` for `s < 0`,
/// `σ²/2` at `s = 0` (half the delta mass sits at the endpoint), zero for
/// `s > 0`.
pub fn w_matrix_white<T: Real>(drift: &DriftMatrix<T>, sigma2: T, s: T) -> Result<DMatrix<T>> {
    let dim = drift.a().nrows();
    if s > T::zero() {
        Ok(DMatrix::zeros(dim, dim))
    } else if s == T::zero() {
        Ok(DMatrix::identity(dim, dim) * (sigma2 * lit(0.5)))
    } else {
        Ok(expm(drift.a(), -s)? * sigma2)
    }
}

/// `W(s) = ∫_0^∞ e^{τA} C_f(τ + s) dτ` by adaptive quadrature.
pub fn w_matrix<T: Real>(
    drift: &DriftMatrix<T>,
    noise: &NoiseModel<T>,
    s: T,
) -> Result<DMatrix<T>> {
    w_matrix_detailed(drift, noise, s, &EngineOptions::default()).map(|(w, _)| w)
}

pub fn w_matrix_detailed<T: Real>(
    drift: &DriftMatrix<T>,
    noise: &NoiseModel<T>,
    s: T,
    opts: &EngineOptions<T>,
) -> Result<(DMatrix<T>, QuadratureMeta<T>)> {
    require_dissipative(drift)?;
    if noise.is_white() {
        return Err(Error::DistributionalNoise);
    }
    let dim = drift.a().nrows();
    let shift = (-s).max(T::zero());
    let t_a = decay_horizon(drift, opts.tail_tol)?;
    let t_f = noise
        .covariance_cutoff(opts.tail_tol)
        .expect("non-white noise has a pointwise covariance");
    let horizon = t_a.min(t_f + shift);
    if horizon <= T::zero() {
        return Ok((DMatrix::zeros(dim, dim), QuadratureMeta::exact()));
    }

    // Resolve the fastest oscillation present with the initial panels.
    let omega = resonance_frequencies(drift)
        .last()
        .copied()
        .unwrap_or(T::zero())
        .max(noise_frequency_scale(noise).unwrap_or(T::zero()));
    let panels = to_f64(horizon * omega / T::pi()).ceil().clamp(8.0, 2000.0) as usize;
    let mut points: Vec<T> = (0..=panels)
        .map(|k| horizon * from_usize::<T>(k) / from_usize::<T>(panels))
        .collect();
    if shift > T::zero() && shift < horizon {
        points.push(shift);
        if let NoiseKind::GaussianCov { tau_c, .. } = *noise.kind() {
            for k in [-3.0, -1.0, 1.0, 3.0] {
                let p = shift + tau_c * lit(k);
                if p > T::zero() && p < horizon {
                    points.push(p);
                }
            }
        }
    }
    points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    points.dedup();

    let a = drift.a();
    let len = dim * dim;
    let integrand = |tau: T| -> Vec<T> {
        let cf = match noise.covariance(tau + s) {
            Ok(c) => c,
            Err(_) => return nan_vec(len),
        };
        match expm(a, tau) {
            Ok(e) => e.iter().map(|&x| x * cf).collect(),
            Err(_) => nan_vec(len),
        }
    };
    let r = integrate(integrand, &points, &opts.quadrature);
    check_quadrature(&r, T::one())?;
    let breakpoints = if shift > T::zero() {
        vec![shift]
    } else {
        Vec::new()
    };
    let meta = QuadratureMeta::from_result(&r, T::one(), Some(horizon), breakpoints);
    Ok((DMatrix::from_column_slice(dim, dim, &r.value), meta))
}

fn w_any<T: Real>(
    drift: &DriftMatrix<T>,
    noise: &NoiseModel<T>,
    s: T,
    opts: &EngineOptions<T>,
) -> Result<(DMatrix<T>, QuadratureMeta<T>)> {
    match *noise.kind() {
        NoiseKind::White { sigma2 } => {
            require_dissipative(drift)?;
            Ok((w_matrix_white(drift, sigma2, s)?, QuadratureMeta::exact()))
        }
        _ => w_matrix_detailed(drift, noise, s, opts),
    }
}

/// `C(s) = W(s) C_G + C_G W(-s)ᵀ`.
pub fn stationary_cov_time<T: Real>(
    drift: &DriftMatrix<T>,
    noise: &NoiseModel<T>,
    s: T,
) -> Result<CovarianceResult<T>> {
    stationary_cov_time_with(drift, noise, s, &EngineOptions::default())
}

pub fn stationary_cov_time_with<T: Real>(
    drift: &DriftMatrix<T>,
    noise: &NoiseModel<T>,
    s: T,
    opts: &EngineOptions<T>,
) -> Result<CovarianceResult<T>> {
    let c_g = drift.c_g();
    let (full, meta) = if s == T::zero() {
        let (w, meta) = w_any(drift, noise, s, opts)?;
        let x = &w * c_g;
        (&x + x.transpose(), meta)
    } else {
        let (w_plus, m1) = w_any(drift, noise, s, opts)?;
        let (w_minus, m2) = w_any(drift, noise, -s, opts)?;
        (&w_plus * c_g + c_g * w_minus.transpose(), m1.merge(&m2))
    };
    Ok(CovarianceResult::from_full(
        &full,
        s,
        Engine::TimeDomain,
        meta,
    ))
}

/// `C(s)` for every lag in `s_grid`.
pub fn lagged_cov<T: Real>(
    drift: &DriftMatrix<T>,
    noise: &NoiseModel<T>,
    s_grid: &[T],
) -> Result<Vec<CovarianceResult<T>>> {
    s_grid
        .iter()
        .map(|&s| stationary_cov_time(drift, noise, s))
        .collect()
}

// ---------------------------------------------------------------------------
// spectral

pub fn stationary_cov_spectral<T: Real>(
    drift: &DriftMatrix<T>,
    noise: &NoiseModel<T>,
) -> Result<CovarianceResult<T>> {
    stationary_cov_spectral_with(drift, noise, &EngineOptions::default())
}

pub fn stationary_cov_spectral_with<T: Real>(
    drift: &DriftMatrix<T>,
    noise: &NoiseModel<T>,
    opts: &EngineOptions<T>,
) -> Result<CovarianceResult<T>> {
    require_dissipative(drift)?;
    let dim = drift.a().nrows();
    let len = dim * dim;
    let a = drift.a();
    let c_g = complexify(drift.c_g());
    let with_imag = opts.full_line;
    // a(λ) (R C_G + C_G Rᵀ) at λ·sign, real part then (optionally) imaginary.
    let integrand = |sign: T| {
        let c_g = &c_g;
        move |lam: T| -> Vec<T> {
            let lam = lam * sign;
            let weight = noise.spectral_density(lam);
            let r = match resolvent(a, cplx(T::zero(), lam)) {
                Ok(r) => r,
                Err(_) => return nan_vec(if with_imag { 2 * len } else { len }),
            };
            let x = r * c_g;
            let sym = &x + x.transpose();
            let mut out: Vec<T> = sym.iter().map(|z| z.re * weight).collect();
            if with_imag {
                out.extend(sym.iter().map(|z| z.im * weight));
            }
            out
        }
    };

    let (full, meta) = if opts.full_line {
        let (pos, breaks) =
            integrate_frequency(integrand(T::one()), drift, noise, &opts.quadrature);
        let (neg, _) = integrate_frequency(integrand(-T::one()), drift, noise, &opts.quadrature);
        check_quadrature(&pos, T::one())?;
        check_quadrature(&neg, T::one())?;
        let total: Vec<T> = pos
            .value
            .iter()
            .zip(&neg.value)
            .map(|(x, y)| -(*x + *y))
            .collect();
        let re = DMatrix::from_column_slice(dim, dim, &total[..len]);
        let im = DMatrix::from_column_slice(dim, dim, &total[len..]);
        let imag = max_abs(&im);
        if imag > lit::<T>(1e-9) * max_abs(&re).max(T::one()) {
            return Err(Error::QuadratureFailure {
                estimate: to_f64(imag),
                tolerance: 1e-9,
            });
        }
        let meta = QuadratureMeta::from_result(&pos, T::one(), None, breaks).merge(
            &QuadratureMeta::from_result(&neg, T::one(), None, Vec::new()),
        );
        (re, meta)
    } else {
        let two = lit::<T>(2.0);
        let (r, breaks) = integrate_frequency(integrand(T::one()), drift, noise, &opts.quadrature);
        check_quadrature(&r, two)?;
        let full = DMatrix::from_column_slice(dim, dim, &r.value) * (-two);
        (full, QuadratureMeta::from_result(&r, two, None, breaks))
    };
    Ok(CovarianceResult::from_full(
        &symmetrize(&full),
        T::zero(),
        Engine::Spectral,
        meta,
    ))
}

// ---------------------------------------------------------------------------
// Lyapunov

/// White-noise stationary covariance from `A X + X Aᵀ = -σ² D₂`, checked
/// against `σ² C_G`.
pub fn stationary_cov_lyapunov<T: Real>(
    drift: &DriftMatrix<T>,
    sigma2: T,
) -> Result<CovarianceResult<T>> {
    if drift.spectral_abscissa() >= -lit::<T>(SPECTRAL_TOL) {
        return Err(Error::UnstableDrift {
            real_part: to_f64(drift.spectral_abscissa()),
        });
    }
    let x = linalg::solve_lyapunov(drift.a(), &(drift.d2() * sigma2))?;
    let expected = drift.c_g() * sigma2;
    let relative = rel_frobenius(&x, &expected);
    if relative > lit(LYAPUNOV_GIBBS_TOL) {
        return Err(Error::GibbsMismatch {
            relative: to_f64(relative),
        });
    }
    let mut meta = QuadratureMeta::exact();
    meta.error_estimate = relative;
    Ok(CovarianceResult::from_full(
        &symmetrize(&x),
        T::zero(),
        Engine::Lyapunov,
        meta,
    ))
}

// ---------------------------------------------------------------------------
// Q-blocks

/// Blocks of `R(z) C_G = Q(z) / 2α` and the auxiliary objects:
/// `ρ = (V + z²)⁻¹`, `κ = êᵀ ρ ê`, `τ = E + α z κ`, `T = α ê τ⁻¹ êᵀ`,
/// `θ = ρ T ρ`.
#[derive(Debug, Clone)]
pub struct QBlocks<T: Real> {
    pub z: Complex<T>,
    pub rho: ComplexMatrix<T>,
    pub kappa: ComplexMatrix<T>,
    pub tau: ComplexMatrix<T>,
    pub t: ComplexMatrix<T>,
    pub theta: ComplexMatrix<T>,
    pub q11: ComplexMatrix<T>,
    pub q12: ComplexMatrix<T>,
    pub q21: ComplexMatrix<T>,
    pub q22: ComplexMatrix<T>,
}

impl<T: Real> QBlocks<T> {
    /// The `2N×2N` matrix `Q(z)`.
    pub fn assemble(&self) -> ComplexMatrix<T> {
        let n = self.q11.nrows();
        let mut q = ComplexMatrix::zeros(2 * n, 2 * n);
        q.view_mut((0, 0), (n, n)).copy_from(&self.q11);
        q.view_mut((0, n), (n, n)).copy_from(&self.q12);
        q.view_mut((n, 0), (n, n)).copy_from(&self.q21);
        q.view_mut((n, n), (n, n)).copy_from(&self.q22);
        q
    }
}

/// Max-abs residuals of the identities satisfied by the Q-blocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QBlockResiduals<T> {
    /// `ρ (V + z²) - E`
    pub rho: T,
    /// `V⁻¹ - Q21 + z Q11`, `V Q11 + (αD + zE) Q21`, `Q22 - z Q12`,
    /// `E + V Q12 + (αD + zE) Q22`
    pub equations: [T; 4],
    /// `z α D ρ T - αD + T`
    pub damping_identity: T,
    /// `R(z) C_G - Q / 2α`
    pub resolvent: T,
}

impl<T: Real> QBlockResiduals<T> {
    pub fn max(&self) -> T {
        self.equations.iter().fold(
            self.rho.max(self.damping_identity).max(self.resolvent),
            |a, &b| a.max(b),
        )
    }
}

fn cmax_abs<T: Real>(m: &ComplexMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, z| acc.max(z.re.hypot(z.im)))
}

fn boundary_embedding<T: Real>(n: usize, m: usize) -> ComplexMatrix<T> {
    let mut e = ComplexMatrix::zeros(n, m);
    for k in 0..m {
        e[(n - m + k, k)] = Complex::new(T::one(), T::zero());
    }
    e
}

pub fn q_blocks<T: Real>(model: &HamiltonianModel<T>, z: Complex<T>) -> Result<QBlocks<T>> {
    let n = model.n();
    let m = model.boundary_size();
    let alpha = Complex::new(model.alpha(), T::zero());
    let mut shifted = complexify(model.v());
    for i in 0..n {
        shifted[(i, i)] += z * z;
    }
    let singular_rho = Error::SingularRho {
        re: to_f64(z.re),
        im: to_f64(z.im),
    };
    let rho = invert_complex(shifted).ok_or(singular_rho)?;
    let e_hat = boundary_embedding::<T>(n, m);
    let kappa = e_hat.transpose() * &rho * &e_hat;
    let tau = ComplexMatrix::identity(m, m) + &kappa * (alpha * z);
    let tau_inv = invert_complex(tau.clone()).ok_or(Error::SingularTau {
        re: to_f64(z.re),
        im: to_f64(z.im),
    })?;
    let t = &e_hat * tau_inv * e_hat.transpose() * alpha;
    let theta = &rho * &t * &rho;
    let v_inv = complexify(&spd_inverse(model.v())?);
    let q11 = -(&rho * &v_inv) * z - &theta;
    let q12 = -&rho + &theta * z;
    let q21 = &q11 * z + &v_inv;
    let q22 = &q12 * z;
    Ok(QBlocks {
        z,
        rho,
        kappa,
        tau,
        t,
        theta,
        q11,
        q12,
        q21,
        q22,
    })
}

pub fn q_block_residuals<T: Real>(
    model: &HamiltonianModel<T>,
    drift: &DriftMatrix<T>,
    q: &QBlocks<T>,
) -> Result<QBlockResiduals<T>> {
    let n = model.n();
    let z = q.z;
    let alpha = Complex::new(model.alpha(), T::zero());
    let eye = ComplexMatrix::<T>::identity(n, n);
    let v = complexify(model.v());
    let v_inv = complexify(drift.v_inv());
    let d = complexify(drift.d());
    let damping = &d * alpha + &eye * z;

    let rho = cmax_abs(&(&q.rho * (&v + &eye * (z * z)) - &eye));
    let equations = [
        cmax_abs(&(&v_inv - &q.q21 + &q.q11 * z)),
        cmax_abs(&(&v * &q.q11 + &damping * &q.q21)),
        cmax_abs(&(&q.q22 - &q.q12 * z)),
        cmax_abs(&(&eye + &v * &q.q12 + &damping * &q.q22)),
    ];
    let damping_identity = cmax_abs(&(&d * &q.rho * &q.t * (z * alpha) - &d * alpha + &q.t));
    let r = resolvent(drift.a(), z)?;
    let lhs = r * complexify(drift.c_g());
    let rhs = q.assemble() / (alpha + alpha);
    let resolvent = cmax_abs(&(lhs - rhs));
    Ok(QBlockResiduals {
        rho,
        equations,
        damping_identity,
        resolvent,
    })
}

pub fn stationary_cov_qblock<T: Real>(
    model: &HamiltonianModel<T>,
    noise: &NoiseModel<T>,
) -> Result<CovarianceResult<T>> {
    let drift = build_drift(model)?;
    stationary_cov_qblock_with(model, &drift, noise, &EngineOptions::default())
}

/// Q-block engine. With `G(z) = (V + z² + αzD)⁻¹ = ρ - zθ` the blocks read
/// `Q21 = G`, `Q12 = -G`, `Q22 = -zG` and `-Q11 V = G (z + αD)`.
///
/// The integrand is evaluated in the eigenbasis `V = P Λ Pᵀ`, where `ρ` is
/// diagonal and `zθ = αz W τ⁻¹ Wᵀ` with `W = ρ Pᵀ ê`, so a node costs
/// `O(N² m)`; the integrals are rotated back once. Nodes where some
/// `λ_k - λ²` nearly vanishes fall back to a dense solve, since the two
/// terms of `ρ - zθ` cancel there.
pub fn stationary_cov_qblock_with<T: Real>(
    model: &HamiltonianModel<T>,
    drift: &DriftMatrix<T>,
    noise: &NoiseModel<T>,
    opts: &EngineOptions<T>,
) -> Result<CovarianceResult<T>> {
    require_dissipative(drift)?;
    let n = model.n();
    let m = model.boundary_size();
    let len = n * n;
    let alpha = model.alpha();
    let spec = linalg::sym_eig(model.v())?;
    let p = &spec.eigenvectors;
    let v = &spec.eigenvalues;
    let v_max = spec.max_eigenvalue();
    let u = DMatrix::from_fn(n, m, |k, b| p[(n - m + b, k)]);
    let uc = complexify(&u);
    let uut = complexify(&(&u * u.transpose()));

    let integrand = |lam: T| -> Vec<T> {
        let weight = noise.spectral_density(lam);
        let z = cplx(T::zero(), lam);
        let az = z * alpha;
        let lam2 = lam * lam;
        let delta: Vec<T> = v.iter().map(|&x| x - lam2).collect();
        let near_singular = delta
            .iter()
            .any(|d| d.abs() < lit::<T>(1e-10) * v_max.max(lam2));
        let g = if near_singular {
            let mut k = &uut * az;
            for i in 0..n {
                k[(i, i)] += Complex::new(delta[i], T::zero());
            }
            invert_complex(k)
        } else {
            let w = DMatrix::from_fn(n, m, |k, b| u[(k, b)] / delta[k]);
            let kappa = complexify(&(u.transpose() * &w));
            let tau = ComplexMatrix::identity(m, m) + kappa * az;
            invert_complex(tau).map(|tau_inv| {
                let wc = complexify(&w);
                let mut g = &wc * tau_inv * wc.transpose() * (-az);
                for i in 0..n {
                    g[(i, i)] += Complex::new(T::one() / delta[i], T::zero());
                }
                g
            })
        };
        let Some(g) = g else {
            return nan_vec(3 * len);
        };
        let gu = &g * &uc;
        let mut out = Vec::with_capacity(3 * len);
        // -Q11 V = zG + α G U Uᵀ, -Q22 = zG, -(Q12 + Q21ᵀ) = G - Gᵀ
        let q11 = &g * z + gu * uc.transpose() * Complex::new(alpha, T::zero());
        out.extend(q11.iter().map(|c| c.re * weight));
        out.extend(g.iter().map(|c| (*c * z).re * weight));
        for j in 0..n {
            for i in 0..n {
                out.push((g[(i, j)] - g[(j, i)]).re * weight);
            }
        }
        out
    };
    let (r, breaks) = integrate_frequency(integrand, drift, noise, &opts.quadrature);
    // C = (2/α) ∫_0^∞ Re(...) for the symmetric blocks, (1/α) for the mixed one.
    let scale = lit::<T>(2.0) / alpha;
    check_quadrature(&r, scale)?;
    let block = |k: usize| DMatrix::from_column_slice(n, n, &r.value[k * len..(k + 1) * len]);
    let inv_eig = DMatrix::from_diagonal(&v.map(|x| T::one() / x));
    let rotate = |x: DMatrix<T>| p * x * p.transpose();
    let c_qq = symmetrize(&rotate(block(0) * inv_eig * scale));
    let c_pp = symmetrize(&rotate(block(1) * scale));
    let c_qp = rotate(block(2) / alpha);
    let meta = QuadratureMeta::from_result(&r, scale, None, breaks);
    Ok(CovarianceResult {
        c_pq: c_qp.transpose(),
        c_qq,
        c_qp,
        c_pp,
        lag: T::zero(),
        engine: Engine::QBlock,
        meta,
    })
}

/// Runs one analytic engine on `(model, noise)` at lag zero.
pub fn stationary_cov<T: Real>(
    model: &HamiltonianModel<T>,
    drift: &DriftMatrix<T>,
    noise: &NoiseModel<T>,
    engine: Engine,
    opts: &EngineOptions<T>,
) -> Result<CovarianceResult<T>> {
    match engine {
        Engine::TimeDomain => stationary_cov_time_with(drift, noise, T::zero(), opts),
        Engine::Spectral => stationary_cov_spectral_with(drift, noise, opts),
        Engine::QBlock => stationary_cov_qblock_with(model, drift, noise, opts),
        Engine::Lyapunov => match *noise.kind() {
            NoiseKind::White { sigma2 } => stationary_cov_lyapunov(drift, sigma2),
            _ => Err(Error::WrongNoiseKind(
                "the Lyapunov engine needs white noise",
            )),
        },
        Engine::MonteCarlo => Err(Error::BadConfig(
            "Monte Carlo estimates come from the simulate module".into(),
        )),
    }
}

// ---------------------------------------------------------------------------
// Gibbs diagnostics

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GibbsVerdict {
    Gibbs,
    NonGibbs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GibbsDiagnostics<T> {
    pub max_qp: T,
    pub max_offdiag_pp: T,
    /// Least-squares `β` of `C_qq ≈ β⁻¹ V⁻¹`, `C_pp ≈ β⁻¹ E`; `None` when
    /// the fitted temperature is not positive.
    pub beta_fit: Option<T>,
    pub gibbs_residual: T,
    pub verdict: GibbsVerdict,
}

pub fn gibbs_diagnostics<T: Real>(
    result: &CovarianceResult<T>,
    model: &HamiltonianModel<T>,
) -> GibbsDiagnostics<T> {
    let n = model.n();
    let v_inv = spd_inverse(model.v()).expect("model potential is positive definite");
    let eye = DMatrix::<T>::identity(n, n);

    let max_qp = result.max_qp();
    let mut max_offdiag_pp = T::zero();
    for j in 0..n {
        for i in 0..n {
            if i != j {
                max_offdiag_pp = max_offdiag_pp.max(result.c_pp[(i, j)].abs());
            }
        }
    }

    // unweighted least squares over both diagonal blocks
    let numerator = result.c_qq.dot(&v_inv) + result.c_pp.trace();
    let denominator = v_inv.norm_squared() + from_usize::<T>(n);
    let temperature = numerator / denominator;

    let full = result.full();
    let scale = full.norm();
    let reference = block_diag(&v_inv, &eye) * temperature.max(T::zero());
    let gibbs_residual = if scale > T::zero() {
        (&full - reference).norm() / scale
    } else {
        T::zero()
    };
    let beta_fit = (temperature > T::zero()).then(|| T::one() / temperature);
    let trace_scale = full.trace().abs() / from_usize::<T>(2 * n);
    let tol = lit::<T>(GIBBS_TOL);
    let verdict = if beta_fit.is_some() && gibbs_residual <= tol && max_qp <= tol * trace_scale {
        GibbsVerdict::Gibbs
    } else {
        GibbsVerdict::NonGibbs
    };
    GibbsDiagnostics {
        max_qp,
        max_offdiag_pp,
        beta_fit,
        gibbs_residual,
        verdict,
    }
}
