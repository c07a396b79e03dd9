//! Dissipative subspace `L₋ = l_V ⊕ l_V` and its complement `L₀`.
//!
//! `l_V` is the Krylov space spanned by `V^k e_i` over boundary vertices
//! `i`. Every mode outside it oscillates forever without touching the
//! boundary; when `l_V = ℝᴺ` the drift is strictly stable.

use nalgebra::{DMatrix, DVector, SVD};

use crate::error::{Error, Result};
use crate::linalg::{expm, norm2};
use crate::model::{build_drift, DriftMatrix, HamiltonianModel};
use crate::scalar::{from_usize, lit, to_f64, Real};

/// Relative threshold below which Krylov directions count as dependent.
pub const KRYLOV_RANK_TOL: f64 = 1e-10;
/// Relative (Hadamard-normalised) threshold for the determinant criterion.
pub const DET_TOL: f64 = 1e-10;
/// Real-part tolerance separating damped from undamped eigenvalues.
pub const SPECTRAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct SubspaceReport<T: Real> {
    pub dim_lv: usize,
    pub dim_l0: usize,
    pub krylov_rank_tolerance: T,
    pub spectral_abscissa: T,
    /// Orthonormal columns spanning `l_V`.
    pub basis_lv: DMatrix<T>,
}

impl<T: Real> SubspaceReport<T> {
    pub fn is_dissipative(&self) -> bool {
        self.dim_l0 == 0
    }

    /// Orthogonal projector onto `L₋` in phase space.
    pub fn l_minus_projector(&self) -> DMatrix<T> {
        let p = &self.basis_lv * self.basis_lv.transpose();
        let n = p.nrows();
        let mut out = DMatrix::zeros(2 * n, 2 * n);
        out.view_mut((0, 0), (n, n)).copy_from(&p);
        out.view_mut((n, n), (n, n)).copy_from(&p);
        out
    }
}

/// Orthonormal basis of `span{V^k e_i : i in boundary, k >= 0}`, built by
/// block Krylov iteration with two-pass Gram-Schmidt and deflation.
pub fn krylov_subspace<T: Real>(model: &HamiltonianModel<T>) -> Result<SubspaceReport<T>> {
    let drift = build_drift(model)?;
    Ok(krylov_with_drift(model, &drift))
}

pub(crate) fn krylov_with_drift<T: Real>(
    model: &HamiltonianModel<T>,
    drift: &DriftMatrix<T>,
) -> SubspaceReport<T> {
    let n = model.n();
    let v = model.v();
    let tol = lit::<T>(KRYLOV_RANK_TOL);
    let scale = norm2(v).max(T::one());

    let mut basis: Vec<DVector<T>> = Vec::with_capacity(n);
    let mut frontier: Vec<DVector<T>> = Vec::new();
    for i in model.boundary() {
        let mut e = DVector::zeros(n);
        e[i] = T::one();
        basis.push(e.clone());
        frontier.push(e);
    }
    while !frontier.is_empty() && basis.len() < n {
        let mut next = Vec::new();
        for q in &frontier {
            let mut w = v * q;
            for _ in 0..2 {
                for b in &basis {
                    let c = b.dot(&w);
                    w.axpy(-c, b, T::one());
                }
            }
            let norm = w.norm();
            if norm > tol * scale {
                w /= norm;
                basis.push(w.clone());
                next.push(w);
                if basis.len() == n {
                    break;
                }
            }
        }
        frontier = next;
    }

    let dim_lv = basis.len();
    let basis_lv = if basis.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&basis)
    };
    SubspaceReport {
        dim_lv,
        dim_l0: 2 * (n - dim_lv),
        krylov_rank_tolerance: tol,
        spectral_abscissa: drift.spectral_abscissa(),
        basis_lv,
    }
}

/// Rank of the raw Krylov matrix `[V^k e_i]`, `k = 0..N-1`, columns
/// normalised, singular values below `KRYLOV_RANK_TOL · σ_max` dropped.
/// Reliable only for small, well-conditioned instances.
pub fn krylov_matrix_rank<T: Real>(model: &HamiltonianModel<T>) -> usize {
    let n = model.n();
    let mut cols = Vec::new();
    for i in model.boundary() {
        let mut x = DVector::zeros(n);
        x[i] = T::one();
        for _ in 0..n {
            let norm = x.norm();
            cols.push(&x / norm);
            x = model.v() * &x;
        }
    }
    let k = DMatrix::from_columns(&cols);
    let sv = SVD::new(k, false, false).singular_values;
    let smax = sv.iter().fold(T::zero(), |a, &s| a.max(s));
    sv.iter()
        .filter(|&&s| s > lit::<T>(KRYLOV_RANK_TOL) * smax)
        .count()
}

/// `Σ(V)` with columns `V^k e_N`, `k = 1..N`.
pub fn sigma_matrix<T: Real>(model: &HamiltonianModel<T>) -> Result<DMatrix<T>> {
    let n = model.n();
    if model.boundary_size() != 1 {
        return Err(Error::BoundaryNotSingleton {
            m: model.boundary_size(),
        });
    }
    let mut x = DVector::zeros(n);
    x[n - 1] = T::one();
    let mut cols = Vec::with_capacity(n);
    for _ in 0..n {
        x = model.v() * &x;
        cols.push(x.clone());
    }
    Ok(DMatrix::from_columns(&cols))
}

/// `det Σ(V)`; nonzero exactly when `dim L₀ = 0` (single boundary vertex).
pub fn det_criterion<T: Real>(model: &HamiltonianModel<T>) -> Result<T> {
    Ok(sigma_matrix(model)?.determinant())
}

/// Zero/nonzero classification of `det Σ(V)` relative to the Hadamard
/// bound `Π ||column||`.
pub fn det_criterion_nonzero<T: Real>(model: &HamiltonianModel<T>) -> Result<bool> {
    let sigma = sigma_matrix(model)?;
    let hadamard = sigma.column_iter().fold(T::one(), |acc, c| acc * c.norm());
    let det = sigma.determinant();
    Ok(det.abs() > lit::<T>(DET_TOL) * hadamard)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SpectralVerdict<T> {
    /// Every eigenvalue of `A` in the open left half-plane; `‖e^{tA}‖₂`
    /// decays at the fitted exponential rate.
    Dissipative { abscissa: T, decay_rate: T },
    /// Undamped oscillations remain (`dim L₀ > 0`).
    MixedSpectrum {
        abscissa: T,
        undamped_eigenvalues: usize,
    },
}

/// Checks the spectral consequences of a subspace report against the drift.
pub fn spectral_check<T: Real>(
    drift: &DriftMatrix<T>,
    report: &SubspaceReport<T>,
) -> Result<SpectralVerdict<T>> {
    let abscissa = drift.spectral_abscissa();
    let tol = lit::<T>(SPECTRAL_TOL);
    if report.dim_l0 == 0 {
        if abscissa >= -tol {
            return Err(Error::InconsistentReport(format!(
                "dim L0 = 0 but spectral abscissa is {:e}",
                to_f64(abscissa)
            )));
        }
        let decay_rate = fit_decay_rate(drift.a(), abscissa)?;
        if !(decay_rate > T::zero()) {
            return Err(Error::InconsistentReport(
                "propagator norm does not decay".into(),
            ));
        }
        Ok(SpectralVerdict::Dissipative {
            abscissa,
            decay_rate,
        })
    } else {
        let undamped = drift
            .eigenvalues()
            .iter()
            .filter(|z| z.re.abs() <= tol)
            .count();
        if undamped == 0 {
            return Err(Error::InconsistentReport(format!(
                "dim L0 = {} but no eigenvalue lies on the imaginary axis",
                report.dim_l0
            )));
        }
        Ok(SpectralVerdict::MixedSpectrum {
            abscissa,
            undamped_eigenvalues: undamped,
        })
    }
}

/// Least-squares slope of `ln ||e^{tA}||₂` over `t ∈ [0, 20/|abscissa|]`,
/// returned with its sign flipped.
fn fit_decay_rate<T: Real>(a: &DMatrix<T>, abscissa: T) -> Result<T> {
    let samples = 21usize;
    let horizon = (lit::<T>(20.0) / abscissa.abs()).min(lit(1e6));
    let mut ts = Vec::with_capacity(samples);
    let mut ys = Vec::with_capacity(samples);
    for k in 0..samples {
        let t = horizon * from_usize::<T>(k) / from_usize::<T>(samples - 1);
        let norm = norm2(&expm(a, t)?);
        ts.push(t);
        ys.push(norm.ln());
    }
    let count = from_usize::<T>(samples);
    let t_mean = ts.iter().fold(T::zero(), |a, &b| a + b) / count;
    let y_mean = ys.iter().fold(T::zero(), |a, &b| a + b) / count;
    let (mut sxy, mut sxx) = (T::zero(), T::zero());
    for (&t, &y) in ts.iter().zip(&ys) {
        sxy += (t - t_mean) * (y - y_mean);
        sxx += (t - t_mean) * (t - t_mean);
    }
    Ok(-(sxy / sxx))
}

/// `||(I - P) A P||_F` for the projector onto `L₋`; zero when `L₋` is
/// `A`-invariant.
pub fn invariance_defect<T: Real>(drift: &DriftMatrix<T>, report: &SubspaceReport<T>) -> T {
    let p = report.l_minus_projector();
    let eye = DMatrix::<T>::identity(p.nrows(), p.nrows());
    ((eye - &p) * drift.a() * &p).norm()
}

/// Convenience wrapper bundling model, drift and subspace report.
pub fn analyze<T: Real>(
    model: &HamiltonianModel<T>,
) -> Result<(DriftMatrix<T>, SubspaceReport<T>)> {
    let drift = build_drift(model)?;
    let report = krylov_with_drift(model, &drift);
    Ok((drift, report))
}
