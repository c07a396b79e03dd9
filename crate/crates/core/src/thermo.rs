//! Large-system behaviour: the bulk covariance, the boundary remainder and
//! convergence along a growing sequence of graphs.
//!
//! The bulk covariance is `C_V = (π/α) diag(a(√V) V⁻¹, a(√V))`; the remainder
//! `Y = C_ψ - C_V` is what the boundary adds. For band-limited forcing
//! supported in `[-b, b]` and a `γ`-local `V` with `‖V‖_∞ ≤ B`, every entry
//! between sites farther than `η` from the boundary obeys
//! `|Y| ≤ K₀ (K/η)^{2η/γ}` with
//!
//! ```text
//! c = B + α,   c₁ = √B + c,
//! K  = (α/2) γ c₁ b e^{1 + γ/2},
//! K₀ = (α/c₁) max|C_f| e^{c₁ b}           (momenta)
//! K₀ = α (c₁ b)⁴ max|C_f| e^{c₁ b}        (coordinates)
//! ```
//!
//! where the maximum of `|C_f|` is taken over `[0, b]`.

use nalgebra::DMatrix;

use crate::covariance::{stationary_cov_qblock_with, CovarianceResult, EngineOptions};
use crate::error::{Error, Result};
use crate::linalg::{matrix_function_of_sqrt, sym_eig};
use crate::model::{block_diag, build_drift, build_model, HamiltonianModel, InteractionGraph};
use crate::noise::NoiseModel;
use crate::scalar::{from_usize, lit, to_f64, Real};

/// Values below this are reported as zero by the growing-graph experiment.
pub const NONZERO_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct BulkCovariance<T: Real> {
    pub c_qq: DMatrix<T>,
    pub c_pp: DMatrix<T>,
}

impl<T: Real> BulkCovariance<T> {
    pub fn full(&self) -> DMatrix<T> {
        block_diag(&self.c_qq, &self.c_pp)
    }
}

pub fn bulk_covariance<T: Real>(
    model: &HamiltonianModel<T>,
    noise: &NoiseModel<T>,
) -> Result<BulkCovariance<T>> {
    let spec = sym_eig(model.v())?;
    let scale = T::pi() / model.alpha();
    let c_pp = matrix_function_of_sqrt(&spec, |w| noise.spectral_density(w))? * scale;
    let c_qq = matrix_function_of_sqrt(&spec, |w| noise.spectral_density(w) / (w * w))? * scale;
    Ok(BulkCovariance { c_qq, c_pp })
}

/// `‖A_V C_V + C_V A_Vᵀ‖_F / ‖C_V‖_F`: the bulk state is stationary under
/// the undamped, unforced flow.
pub fn bulk_invariance_residual<T: Real>(
    model: &HamiltonianModel<T>,
    bulk: &BulkCovariance<T>,
) -> Result<T> {
    let drift = build_drift(model)?;
    let c = bulk.full();
    let a_v = drift.a_v();
    let lhs = a_v * &c + &c * a_v.transpose();
    Ok(lhs.norm() / c.norm())
}

/// Constants of the band-limited remainder bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConstants<T> {
    pub b: T,
    pub big_b: T,
    pub alpha: T,
    pub gamma: usize,
    pub c: T,
    pub c1: T,
    pub max_cf: T,
    pub k: T,
    pub k0_pp: T,
    pub k0_qq: T,
}

impl<T: Real> BoundConstants<T> {
    pub fn new(b: T, big_b: T, alpha: T, gamma: usize, max_cf: T) -> Self {
        let gamma_t = from_usize::<T>(gamma.max(1));
        let c = big_b + alpha;
        let c1 = big_b.sqrt() + c;
        let growth = (c1 * b).exp();
        let half = lit::<T>(0.5);
        let k = half * alpha * gamma_t * c1 * b * (T::one() + half * gamma_t).exp();
        let k0_pp = alpha / c1 * max_cf * growth;
        let k0_qq = alpha * (c1 * b).powi(4) * max_cf * growth;
        Self {
            b,
            big_b,
            alpha,
            gamma: gamma.max(1),
            c,
            c1,
            max_cf,
            k,
            k0_pp,
            k0_qq,
        }
    }

    /// `(K/η)^{2η/γ}`.
    pub fn decay_factor(&self, eta: T) -> T {
        (self.k / eta).powf(lit::<T>(2.0) * eta / from_usize::<T>(self.gamma))
    }

    pub fn bound_pp(&self, eta: T) -> T {
        self.k0_pp * self.decay_factor(eta)
    }

    pub fn bound_qq(&self, eta: T) -> T {
        self.k0_qq * self.decay_factor(eta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairRemainder<T> {
    pub i: usize,
    pub j: usize,
    /// `min(r(i), r(j))`, distances to the boundary.
    pub distance: usize,
    pub y_qq: T,
    pub y_pp: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemainderReport<T: Real> {
    pub y_qq: DMatrix<T>,
    pub y_pp: DMatrix<T>,
    pub eta: T,
    /// Pairs `i ≤ j` with both sites farther than `η` from the boundary.
    pub pairs: Vec<PairRemainder<T>>,
    /// Present for band-limited noise only.
    pub constants: Option<BoundConstants<T>>,
    pub bound_pp: Option<T>,
    pub bound_qq: Option<T>,
    pub max_interior_y_pp: T,
    pub max_interior_y_qq: T,
}

impl<T: Real> RemainderReport<T> {
    /// Every interior pair satisfies the bound (vacuously `true` when no
    /// bound is available).
    pub fn within_bound(&self) -> bool {
        let pp = self.bound_pp.is_none_or(|b| self.max_interior_y_pp <= b);
        let qq = self.bound_qq.is_none_or(|b| self.max_interior_y_qq <= b);
        pp && qq
    }

    /// `bound - max |Y_pp|`.
    pub fn margin_pp(&self) -> Option<T> {
        self.bound_pp.map(|b| b - self.max_interior_y_pp)
    }

    /// `(d, max |Y_pp|)` over pairs with `min(r(i), r(j)) = d`.
    pub fn decay_profile(&self) -> Vec<(usize, T)> {
        let mut profile: Vec<(usize, T)> = Vec::new();
        let mut sorted: Vec<&PairRemainder<T>> = self.pairs.iter().collect();
        sorted.sort_by_key(|p| p.distance);
        for p in sorted {
            match profile.last_mut() {
                Some((d, v)) if *d == p.distance => *v = v.max(p.y_pp.abs()),
                _ => profile.push((p.distance, p.y_pp.abs())),
            }
        }
        profile
    }

    /// Least-squares slope `k` of `ln max|Y_pp| ≈ c - k ln d` over the decay
    /// profile (nonzero entries only). The observable counterpart of a
    /// polynomial bound `C(k) η^{-k}` whose constant is not available.
    pub fn power_law_exponent(&self) -> Option<T> {
        let points: Vec<(T, T)> = self
            .decay_profile()
            .into_iter()
            .filter(|&(d, y)| d > 0 && y > T::zero())
            .map(|(d, y)| (from_usize::<T>(d).ln(), y.ln()))
            .collect();
        if points.len() < 2 {
            return None;
        }
        let n = from_usize::<T>(points.len());
        let mx = points.iter().fold(T::zero(), |a, p| a + p.0) / n;
        let my = points.iter().fold(T::zero(), |a, p| a + p.1) / n;
        let sxx = points
            .iter()
            .fold(T::zero(), |a, p| a + (p.0 - mx) * (p.0 - mx));
        let sxy = points
            .iter()
            .fold(T::zero(), |a, p| a + (p.0 - mx) * (p.1 - my));
        (sxx > T::zero()).then(|| -sxy / sxx)
    }
}

/// `η = max(ln m, 2γ)` rounded up.
pub fn default_eta<T: Real>(model: &HamiltonianModel<T>) -> T {
    let ln_m = (model.boundary_size() as f64).ln();
    let two_gamma = 2.0 * model.gamma().unwrap_or(1).max(1) as f64;
    lit(ln_m.max(two_gamma).ceil())
}

pub fn remainder<T: Real>(
    model: &HamiltonianModel<T>,
    noise: &NoiseModel<T>,
    cov: &CovarianceResult<T>,
    eta: T,
) -> Result<RemainderReport<T>> {
    if cov.n() != model.n() {
        return Err(Error::DimensionMismatch(format!(
            "covariance of size {} for a model of size {}",
            cov.n(),
            model.n()
        )));
    }
    let bulk = bulk_covariance(model, noise)?;
    let y_qq = &cov.c_qq - &bulk.c_qq;
    let y_pp = &cov.c_pp - &bulk.c_pp;

    let interior: Vec<usize> = (0..model.n())
        .filter(|&i| from_usize::<T>(model.boundary_distance(i)) > eta)
        .collect();
    let mut pairs = Vec::new();
    for (a, &i) in interior.iter().enumerate() {
        for &j in &interior[a..] {
            pairs.push(PairRemainder {
                i,
                j,
                distance: model.boundary_distance(i).min(model.boundary_distance(j)),
                y_qq: y_qq[(i, j)],
                y_pp: y_pp[(i, j)],
            });
        }
    }
    if pairs.is_empty() {
        return Err(Error::NoInteriorPairs { eta: to_f64(eta) });
    }
    let max_interior_y_pp = pairs.iter().fold(T::zero(), |m, p| m.max(p.y_pp.abs()));
    let max_interior_y_qq = pairs.iter().fold(T::zero(), |m, p| m.max(p.y_qq.abs()));

    let constants = match noise.support_bound() {
        Some(b) => {
            let max_cf = noise.max_abs_covariance(b)?;
            let gamma = model.gamma().unwrap_or(1);
            Some(BoundConstants::new(
                b,
                model.norm_inf(),
                model.alpha(),
                gamma,
                max_cf,
            ))
        }
        None => None,
    };
    Ok(RemainderReport {
        y_qq,
        y_pp,
        eta,
        bound_pp: constants.map(|c| c.bound_pp(eta)),
        bound_qq: constants.map(|c| c.bound_qq(eta)),
        constants,
        pairs,
        max_interior_y_pp,
        max_interior_y_qq,
    })
}

/// Translation-invariant chain operator `V = onsite·E + bond·L` on `ℤ`,
/// with `L` the nearest-neighbour Laplacian (`2` on the diagonal, `-1` off
/// it). Restrictions keep the entries, so the diagonal is `onsite + 2 bond`
/// at every site, ends included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainOperator<T> {
    pub onsite: T,
    pub bond: T,
}

impl<T: Real> ChainOperator<T> {
    pub fn entry(&self, i: i64, j: i64) -> T {
        match (i - j).abs() {
            0 => self.onsite + self.bond * lit(2.0),
            1 => -self.bond,
            _ => T::zero(),
        }
    }

    /// Restriction to `{-half_width, ..., half_width}`; index `k` is site
    /// `k - half_width`.
    pub fn restrict(&self, half_width: usize) -> DMatrix<T> {
        let n = 2 * half_width + 1;
        let h = half_width as i64;
        DMatrix::from_fn(n, n, |a, b| self.entry(a as i64 - h, b as i64 - h))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowingGraphRow<T> {
    pub half_width: usize,
    pub size: usize,
    pub value: T,
    pub bulk_value: T,
    /// Shift `ε` added to the diagonal to make the restriction positive
    /// definite (zero when none was needed).
    pub shift: T,
    /// `|value - previous value|`, absent for the first row.
    pub difference: Option<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Negative,
    Zero,
    Positive,
}

impl Sign {
    pub fn of<T: Real>(x: T, threshold: T) -> Self {
        if x.abs() <= threshold {
            Sign::Zero
        } else if x > T::zero() {
            Sign::Positive
        } else {
            Sign::Negative
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowingGraphTable<T> {
    /// Target sites relative to the centre of the chain.
    pub target: (i64, i64),
    pub rows: Vec<GrowingGraphRow<T>>,
    pub differences_decreasing: bool,
    pub final_value: T,
    pub final_sign: Sign,
    /// Sign of the leading small-coupling term `-c V(i, j)` of `a(√V)(i, j)`
    /// for off-diagonal targets.
    pub expected_sign: Sign,
}

impl<T: Real> GrowingGraphTable<T> {
    pub fn sign_matches(&self) -> bool {
        self.final_sign == self.expected_sign
    }
}

fn repair_positive_definite<T: Real>(v: &DMatrix<T>) -> Result<(DMatrix<T>, T)> {
    let spec = sym_eig(v)?;
    let floor = lit::<T>(crate::model::PD_FLOOR) * spec.max_eigenvalue().abs();
    if spec.min_eigenvalue() > floor {
        return Ok((v.clone(), T::zero()));
    }
    let mut eps = floor.max(lit(1e-12));
    for _ in 0..200 {
        if spec.min_eigenvalue() + eps > floor {
            let n = v.nrows();
            return Ok((v + DMatrix::identity(n, n) * eps, eps));
        }
        eps *= lit(2.0);
    }
    Err(Error::NotPositiveDefinite {
        min_eigenvalue: to_f64(spec.min_eigenvalue()),
    })
}

/// `C_ψ(p_i, p_j)` for the restrictions of `operator` to growing centred
/// segments, boundary at the right end, OU-type `noise`.
pub fn growing_graph_experiment<T: Real>(
    operator: &ChainOperator<T>,
    half_widths: &[usize],
    noise: &NoiseModel<T>,
    target: (i64, i64),
    alpha: T,
) -> Result<GrowingGraphTable<T>> {
    if half_widths.is_empty() {
        return Err(Error::BadConfig("no sizes given".into()));
    }
    let mut rows: Vec<GrowingGraphRow<T>> = Vec::with_capacity(half_widths.len());
    for &hw in half_widths {
        let h = hw as i64;
        let (i, j) = (target.0 + h, target.1 + h);
        let n = 2 * hw + 1;
        if i < 0 || j < 0 || i as usize >= n || j as usize >= n {
            return Err(Error::BadConfig(format!(
                "target {target:?} outside the segment of half width {hw}"
            )));
        }
        let (i, j) = (i as usize, j as usize);
        let (v, shift) = repair_positive_definite(&operator.restrict(hw))?;
        let model = build_model(v, InteractionGraph::path(n)?, 1, alpha)?;
        let ln_m = 0.0; // one boundary site
        if (model.boundary_distance(i).min(model.boundary_distance(j)) as f64) <= ln_m {
            return Err(Error::BadConfig("target touches the boundary".into()));
        }
        let drift = build_drift(&model)?;
        let cov = stationary_cov_qblock_with(&model, &drift, noise, &EngineOptions::default())?;
        let bulk = bulk_covariance(&model, noise)?;
        let value = cov.c_pp[(i, j)];
        let difference = rows.last().map(|r| (value - r.value).abs());
        rows.push(GrowingGraphRow {
            half_width: hw,
            size: n,
            value,
            bulk_value: bulk.c_pp[(i, j)],
            shift,
            difference,
        });
    }
    let diffs: Vec<T> = rows.iter().filter_map(|r| r.difference).collect();
    let differences_decreasing = diffs.windows(2).all(|w| w[1] < w[0]);
    let final_value = rows.last().unwrap().value;
    let threshold = lit::<T>(NONZERO_THRESHOLD);
    let c_sign = noise.spectral_density(T::zero());
    let expected_sign = if target.0 == target.1 {
        Sign::Positive
    } else {
        Sign::of(-(c_sign * operator.entry(target.0, target.1)), T::zero())
    };
    Ok(GrowingGraphTable {
        target,
        rows,
        differences_decreasing,
        final_value,
        final_sign: Sign::of(final_value, threshold),
        expected_sign: if noise.is_white() {
            Sign::Zero
        } else {
            expected_sign
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{stationary_cov_lyapunov, stationary_cov_qblock};
    use crate::linalg::rel_frobenius;
    use crate::model::{harmonic_chain, random_model};
    use crate::noise::{make_bandlimited, make_ou, make_white};
    use nalgebra::dmatrix;
    use std::f64::consts::PI;

    #[test]
    fn scalar_bulk() {
        let model =
            build_model(dmatrix![2.25], InteractionGraph::path(1).unwrap(), 1, 0.5).unwrap();
        let ou = make_ou(1.0, 2.0).unwrap();
        let bulk = bulk_covariance(&model, &ou).unwrap();
        assert!((bulk.c_pp[(0, 0)] - PI / 0.5 * ou.spectral_density(1.5)).abs() < 1e-14);
        assert!((bulk.c_qq[(0, 0)] - bulk.c_pp[(0, 0)] / 2.25).abs() < 1e-14);
    }

    #[test]
    fn white_bulk_is_gibbs() {
        let model = random_model::<f64>(5, 2, 0.8, 4).unwrap();
        let drift = build_drift(&model).unwrap();
        let sigma2 = 1.7;
        let bulk = bulk_covariance(&model, &make_white(sigma2).unwrap()).unwrap();
        assert!(rel_frobenius(&bulk.full(), &(drift.c_g() * sigma2)) < 1e-12);
    }

    #[test]
    fn diagonal_potential_is_entrywise() {
        let v = dmatrix![1.0, 0.0, 0.0; 0.0, 4.0, 0.0; 0.0, 0.0, 9.0];
        let model = build_model(v, InteractionGraph::path(3).unwrap(), 1, 1.0).unwrap();
        let ou = make_ou(1.0, 1.0).unwrap();
        let bulk = bulk_covariance(&model, &ou).unwrap();
        for k in 0..3 {
            let w = (k + 1) as f64;
            assert!((bulk.c_pp[(k, k)] - PI * ou.spectral_density(w)).abs() < 1e-14);
        }
        assert!(bulk.c_pp[(0, 1)].abs() < 1e-15);
    }

    #[test]
    fn bulk_is_invariant_under_pure_dynamics() {
        let model = random_model::<f64>(6, 1, 1.0, 8).unwrap();
        let bulk = bulk_covariance(&model, &make_ou(1.0, 1.5).unwrap()).unwrap();
        assert!(bulk_invariance_residual(&model, &bulk).unwrap() < 1e-10);
        assert!(sym_eig(&bulk.c_pp).unwrap().min_eigenvalue() >= 0.0);
    }

    #[test]
    fn white_remainder_vanishes() {
        let model = harmonic_chain::<f64>(12, 0.5, 0.5, 1, 1.0).unwrap();
        let drift = build_drift(&model).unwrap();
        let cov = stationary_cov_lyapunov(&drift, 1.0).unwrap();
        let report = remainder(&model, &make_white(1.0).unwrap(), &cov, 2.0).unwrap();
        assert!(report.y_pp.amax() < 1e-12 && report.y_qq.amax() < 1e-12);
        assert!(report.bound_pp.is_none());
    }

    #[test]
    fn eta_beyond_diameter_has_no_pairs() {
        let model = harmonic_chain::<f64>(6, 0.5, 0.5, 1, 1.0).unwrap();
        let drift = build_drift(&model).unwrap();
        let cov = stationary_cov_lyapunov(&drift, 1.0).unwrap();
        let err = remainder(&model, &make_white(1.0).unwrap(), &cov, 10.0).unwrap_err();
        assert_eq!(err, Error::NoInteriorPairs { eta: 10.0 });
    }

    #[test]
    fn bandlimited_remainder_decays_and_is_bounded() {
        let model = harmonic_chain::<f64>(24, 0.5, 0.5, 1, 1.0).unwrap();
        let noise = make_bandlimited(2.0, 1.0).unwrap();
        let cov = stationary_cov_qblock(&model, &noise).unwrap();
        let r4 = remainder(&model, &noise, &cov, 4.0).unwrap();
        let r8 = remainder(&model, &noise, &cov, 8.0).unwrap();
        assert!(r4.within_bound() && r8.within_bound());
        assert!(r8.max_interior_y_pp < r4.max_interior_y_pp);
        let c = r4.constants.unwrap();
        assert_eq!(c.big_b, 5.0);
        assert!((c.c1 - (5f64.sqrt() + 6.0)).abs() < 1e-14);
    }

    #[test]
    fn bound_constants_by_hand() {
        let c = BoundConstants::new(2.0, 4.0, 1.0, 1, 3.0);
        assert_eq!(c.c, 5.0);
        assert_eq!(c.c1, 7.0);
        assert!((c.k - 0.5 * 7.0 * 2.0 * 1.5f64.exp()).abs() < 1e-12);
        assert!((c.k0_pp - 3.0 / 7.0 * 14f64.exp()).abs() < 1e-6);
        assert!(
            (c.bound_pp(4.0) - c.k0_pp * (c.k / 4.0).powf(8.0)).abs() <= 1e-9 * c.bound_pp(4.0)
        );
    }

    #[test]
    fn growing_chain_converges_with_predicted_sign() {
        let op = ChainOperator {
            onsite: 1.0f64,
            bond: 0.1,
        };
        let ou = make_ou(1.0, 3.0).unwrap();
        // the boundary sits two sites from the target in the smallest segment
        let table = growing_graph_experiment(&op, &[7, 8, 16], &ou, (5, 6), 1.0).unwrap();
        assert!(table.differences_decreasing, "{:?}", table.rows);
        assert_eq!(table.expected_sign, Sign::Positive);
        assert!(table.sign_matches());
        // leading order of the bulk term: -(π/α) c V(0,1) / (μ² + onsite + 2 bond)²
        let lead = PI * 0.1 / (9.0f64 + 1.2).powi(2);
        assert!((table.rows[2].bulk_value - lead).abs() < 0.2 * lead);
    }

    #[test]
    fn growing_chain_white_noise_is_flat_zero() {
        let op = ChainOperator {
            onsite: 1.0f64,
            bond: 0.1,
        };
        let w = make_white(1.0).unwrap();
        let table = growing_graph_experiment(&op, &[4, 8, 16], &w, (0, 1), 1.0).unwrap();
        assert!(table.rows.iter().all(|r| r.value.abs() < 1e-8f64));
        assert_eq!(table.final_sign, Sign::Zero);
        assert!(table.sign_matches());
    }

    #[test]
    fn gaussian_forcing_remainder_decays_faster_than_polynomially() {
        let model = harmonic_chain(24, 0.5f64, 0.5, 1, 1.0).unwrap();
        let noise = crate::noise::make_gaussian(1.0, 1.0).unwrap();
        let cov = stationary_cov_qblock(&model, &noise).unwrap();
        let r = remainder(&model, &noise, &cov, 1.0).unwrap();
        assert!(r.bound_pp.is_none());
        let k = r.power_law_exponent().unwrap();
        assert!(k > 4.0, "fitted exponent {k}");
    }

    #[test]
    fn indefinite_restriction_is_repaired() {
        let op = ChainOperator {
            onsite: -0.2f64,
            bond: 0.1,
        };
        let (v, eps) = repair_positive_definite(&op.restrict(3)).unwrap();
        assert!(eps > 0.0);
        assert!(sym_eig(&v).unwrap().min_eigenvalue() > 0.0);
    }
}
