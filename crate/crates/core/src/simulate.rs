//! Monte Carlo integration of the forced dynamics and ensemble statistics.
//!
//! Both forcings are simulated as linear-Gaussian recursions
//! `x_{n+1} = Φ x_n + L ξ_n` with `ξ_n` standard normal:
//!
//! * white noise, exact: `Φ = e^{hA}`, `L Lᵀ = σ² (C_G - Φ C_G Φᵀ)`;
//! * Ornstein-Uhlenbeck forcing: the state is augmented by one OU
//!   component per boundary site, `df = -μ f dt + √(2μ v) dW` with
//!   `v = π c / μ`, and the augmented system is discretized exactly
//!   (Van Loan);
//! * Euler-Maruyama, `Φ = E + hA`, for cross-checks only.
//!
//! Every ensemble member draws from its own ChaCha8 stream selected by the
//! member index, so the statistics do not depend on the thread count.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{expm, sym_eig, symmetrize};
use crate::model::DriftMatrix;
use crate::noise::{NoiseKind, NoiseModel};
use crate::reachability::SPECTRAL_TOL;
use crate::scalar::{from_usize, lit, to_f64, Real};

/// Negative eigenvalues of a discretized noise covariance down to this
/// fraction of its largest eigenvalue are clipped to zero.
pub const PSD_CLIP: f64 = 1e-12;
/// Minimum number of batches for batch-means standard errors.
pub const MIN_BATCHES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    ExactDiscretization,
    EulerMaruyama,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition<T: Real> {
    Zero,
    /// A draw from `β⁻¹ diag(V⁻¹, E)`.
    Gibbs {
        beta: T,
    },
    Given(DVector<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig<T: Real> {
    pub step: T,
    /// Total simulated time, burn-in included.
    pub horizon: T,
    pub ensemble: usize,
    /// Discarded initial stretch; `None` means ten relaxation times.
    pub burn_in: Option<T>,
    pub seed: u64,
    pub scheme: Scheme,
    pub initial: InitialCondition<T>,
    /// Lags (in time units, rounded to whole steps) of the lagged covariances.
    pub lags: Vec<T>,
    /// Each member's recorded window is cut into this many batches;
    /// `None` picks enough to reach [`MIN_BATCHES`] in total.
    pub batches_per_member: Option<usize>,
    pub parallel: bool,
}

impl<T: Real> SimulationConfig<T> {
    pub fn new(step: T, horizon: T, ensemble: usize, seed: u64) -> Self {
        Self {
            step,
            horizon,
            ensemble,
            burn_in: None,
            seed,
            scheme: Scheme::ExactDiscretization,
            initial: InitialCondition::Zero,
            lags: vec![T::zero()],
            batches_per_member: None,
            parallel: true,
        }
    }

    fn batches(&self) -> usize {
        self.batches_per_member
            .unwrap_or_else(|| MIN_BATCHES.div_ceil(self.ensemble.max(1)))
            .max(1)
    }

    fn lag_steps(&self) -> Vec<usize> {
        self.lags
            .iter()
            .map(|&l| (to_f64(l / self.step)).round().max(0.0) as usize)
            .collect()
    }

    /// `(burn-in steps, total steps)` after validation.
    fn steps(&self, drift: &DriftMatrix<T>) -> Result<(usize, usize)> {
        let bad = |msg: String| Err(Error::BadConfig(msg));
        if !(self.step > T::zero()) {
            return bad("step must be positive".into());
        }
        if self.ensemble < 2 {
            return bad(format!(
                "ensemble size must be at least 2, got {}",
                self.ensemble
            ));
        }
        let burn = self
            .burn_in
            .unwrap_or_else(|| default_burn_in(drift, self.horizon));
        if !(self.step < burn && burn < self.horizon) {
            return bad(format!(
                "need step < burn_in < horizon, got {} / {} / {}",
                to_f64(self.step),
                to_f64(burn),
                to_f64(self.horizon)
            ));
        }
        let burn_steps = to_f64(burn / self.step).ceil() as usize;
        let total = to_f64(self.horizon / self.step).round() as usize;
        let max_lag = self.lag_steps().into_iter().max().unwrap_or(0);
        if total <= burn_steps + max_lag {
            return bad("recorded window shorter than the largest lag".into());
        }
        Ok((burn_steps, total))
    }
}

/// Ten relaxation times `10 / |spectral abscissa|`, or half the horizon
/// when the drift has undamped modes.
pub fn default_burn_in<T: Real>(drift: &DriftMatrix<T>, horizon: T) -> T {
    let a = drift.spectral_abscissa();
    if a < -lit::<T>(SPECTRAL_TOL) {
        lit::<T>(10.0) / -a
    } else {
        horizon * lit(0.5)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForcingStats<T> {
    pub lags: Vec<T>,
    /// Autocovariance of the forcing averaged over boundary sites.
    pub autocovariance: Vec<T>,
    pub standard_errors: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats<T: Real> {
    pub mean: DVector<T>,
    pub covariance: DMatrix<T>,
    pub standard_errors: DMatrix<T>,
    /// Time step between samples; lags are `lag_steps[k] * step`.
    pub step: T,
    pub lag_steps: Vec<usize>,
    /// `⟨ψ(t) ψ(t + ℓ)ᵀ⟩ - μ μᵀ` per lag.
    pub lagged: Vec<DMatrix<T>>,
    pub lagged_standard_errors: Vec<DMatrix<T>>,
    pub batches: usize,
    pub samples: usize,
    pub forcing: Option<ForcingStats<T>>,
}

impl<T: Real> EnsembleStats<T> {
    pub fn lags(&self) -> Vec<T> {
        self.lag_steps
            .iter()
            .map(|&l| from_usize::<T>(l) * self.step)
            .collect()
    }

    /// Largest `|estimate - reference| / SE` over entries with a positive
    /// standard error; entries with zero SE must match exactly.
    pub fn max_z_score(&self, reference: &DMatrix<T>) -> T {
        z_score(&self.covariance, &self.standard_errors, reference)
    }
}

/// Largest `|est - reference| / se` entrywise; see [`EnsembleStats::max_z_score`].
pub fn z_score<T: Real>(est: &DMatrix<T>, se: &DMatrix<T>, reference: &DMatrix<T>) -> T {
    let mut worst = T::zero();
    for ((e, s), r) in est.iter().zip(se.iter()).zip(reference.iter()) {
        let dev = (*e - *r).abs();
        let z = if *s > T::zero() {
            dev / *s
        } else if dev == T::zero() {
            T::zero()
        } else {
            lit(f64::INFINITY)
        };
        worst = worst.max(z);
    }
    worst
}

/// `x ↦ Φ x + L ξ`.
#[derive(Debug, Clone)]
pub struct Stepper<T: Real> {
    pub phi: DMatrix<T>,
    pub factor: DMatrix<T>,
}

impl<T: Real> Stepper<T> {
    fn step(&self, x: &DVector<T>, rng: &mut ChaCha8Rng) -> DVector<T> {
        let xi = DVector::from_fn(self.factor.ncols(), |_, _| gaussian::<T>(rng));
        &self.phi * x + &self.factor * xi
    }

    /// Stationary covariance of the recursion, `X = Φ X Φᵀ + L Lᵀ`, by
    /// repeated squaring.
    pub fn stationary_covariance(&self) -> Result<DMatrix<T>> {
        let mut x = &self.factor * self.factor.transpose();
        let mut phi = self.phi.clone();
        for _ in 0..64 {
            let increment = &phi * &x * phi.transpose();
            x += &increment;
            phi = &phi * &phi;
            if increment.amax() <= lit::<T>(1e-16) * x.amax() {
                return Ok(symmetrize(&x));
            }
        }
        Err(Error::ConvergenceFailure("discrete Lyapunov doubling"))
    }
}

fn gaussian<T: Real>(rng: &mut ChaCha8Rng) -> T {
    let z: f64 = StandardNormal.sample(rng);
    lit(z)
}

/// `L` with `L Lᵀ = q` from the eigendecomposition, clipping tiny negative
/// eigenvalues.
pub fn psd_factor<T: Real>(q: &DMatrix<T>) -> Result<DMatrix<T>> {
    let spec = sym_eig(&symmetrize(q))?;
    let top = spec.max_eigenvalue().max(T::zero());
    let floor = -lit::<T>(PSD_CLIP) * top;
    let mut factor = spec.eigenvectors.clone();
    for (k, &lam) in spec.eigenvalues.iter().enumerate() {
        if lam < floor {
            return Err(Error::NotPositiveDefinite {
                min_eigenvalue: to_f64(lam),
            });
        }
        let s = lam.max(T::zero()).sqrt();
        factor.column_mut(k).scale_mut(s);
    }
    Ok(factor)
}

pub fn white_stepper<T: Real>(
    drift: &DriftMatrix<T>,
    sigma2: T,
    h: T,
    scheme: Scheme,
) -> Result<Stepper<T>> {
    let dim = drift.a().nrows();
    match scheme {
        Scheme::ExactDiscretization => {
            let phi = expm(drift.a(), h)?;
            let c_g = drift.c_g();
            let q = (c_g - &phi * c_g * phi.transpose()) * sigma2;
            Ok(Stepper {
                factor: psd_factor(&q)?,
                phi,
            })
        }
        Scheme::EulerMaruyama => {
            let phi = DMatrix::identity(dim, dim) + drift.a() * h;
            let factor = drift.d2() * (sigma2 * h).sqrt();
            Ok(Stepper { phi, factor })
        }
    }
}

/// Stepper of the state `(ψ, f)` with OU forcing on the boundary momenta.
pub fn ou_stepper<T: Real>(
    drift: &DriftMatrix<T>,
    c: T,
    mu: T,
    h: T,
    scheme: Scheme,
) -> Result<Stepper<T>> {
    let n = drift.n();
    let m = drift.boundary_size();
    let dim = 2 * n + m;
    let variance = T::pi() * c / mu;
    let mut a = DMatrix::<T>::zeros(dim, dim);
    a.view_mut((0, 0), (2 * n, 2 * n)).copy_from(drift.a());
    for k in 0..m {
        a[(2 * n - m + k, 2 * n + k)] = T::one();
        a[(2 * n + k, 2 * n + k)] = -mu;
    }
    let mut g = DMatrix::<T>::zeros(dim, dim);
    for k in 0..m {
        g[(2 * n + k, 2 * n + k)] = lit::<T>(2.0) * mu * variance;
    }
    match scheme {
        Scheme::ExactDiscretization => {
            // Van Loan: exp([[-A, G], [0, Aᵀ]] h) = [[·, F12], [0, F22]],
            // Φ = F22ᵀ, Q = Φ F12.
            let mut vl = DMatrix::<T>::zeros(2 * dim, 2 * dim);
            vl.view_mut((0, 0), (dim, dim)).copy_from(&(-&a));
            vl.view_mut((0, dim), (dim, dim)).copy_from(&g);
            vl.view_mut((dim, dim), (dim, dim))
                .copy_from(&a.transpose());
            let e = expm(&vl, h)?;
            let phi = e.view((dim, dim), (dim, dim)).transpose();
            let q = &phi * e.view((0, dim), (dim, dim));
            Ok(Stepper {
                factor: psd_factor(&q)?,
                phi,
            })
        }
        Scheme::EulerMaruyama => {
            let phi = DMatrix::identity(dim, dim) + a * h;
            let factor = g.map(|x| (x * h).sqrt());
            Ok(Stepper { phi, factor })
        }
    }
}

fn initial_state<T: Real>(
    drift: &DriftMatrix<T>,
    initial: &InitialCondition<T>,
    rng: &mut ChaCha8Rng,
) -> Result<DVector<T>> {
    let dim = drift.a().nrows();
    match initial {
        InitialCondition::Zero => Ok(DVector::zeros(dim)),
        InitialCondition::Gibbs { beta } => {
            if !(*beta > T::zero()) {
                return Err(Error::BadConfig(
                    "Gibbs initial condition needs beta > 0".into(),
                ));
            }
            let factor = psd_factor(&(drift.c_g() * (lit::<T>(2.0) * drift.alpha() / *beta)))?;
            let xi = DVector::from_fn(dim, |_, _| gaussian::<T>(rng));
            Ok(factor * xi)
        }
        InitialCondition::Given(x) => {
            if x.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "initial condition has length {}, expected {dim}",
                    x.len()
                )));
            }
            Ok(x.clone())
        }
    }
}

fn member_rng(seed: u64, member: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(member as u64);
    rng
}

/// Recorded states (one column per step after burn-in) of one member.
#[allow(clippy::too_many_arguments)]
fn run_member<T: Real>(
    drift: &DriftMatrix<T>,
    stepper: &Stepper<T>,
    forcing_dim: usize,
    forcing_variance: T,
    config: &SimulationConfig<T>,
    member: usize,
    burn: usize,
    total: usize,
) -> Result<DMatrix<T>> {
    let mut rng = member_rng(config.seed, member);
    let psi0 = initial_state(drift, &config.initial, &mut rng)?;
    let dim = psi0.len() + forcing_dim;
    let mut x = DVector::zeros(dim);
    x.rows_mut(0, psi0.len()).copy_from(&psi0);
    let sd = forcing_variance.sqrt();
    for k in 0..forcing_dim {
        x[psi0.len() + k] = gaussian::<T>(&mut rng) * sd;
    }
    let mut out = DMatrix::zeros(dim, total + 1 - burn);
    for step in 0..=total {
        if step >= burn {
            out.set_column(step - burn, &x);
        }
        if step < total {
            x = stepper.step(&x, &mut rng);
        }
    }
    Ok(out)
}

/// Raw second moments of one batch.
#[derive(Debug, Clone)]
struct BatchMoments<T: Real> {
    count: usize,
    sum: DVector<T>,
    products: Vec<DMatrix<T>>,
    pair_counts: Vec<usize>,
}

fn batch_moments<T: Real>(
    traj: &DMatrix<T>,
    lags: &[usize],
    batches: usize,
) -> Vec<BatchMoments<T>> {
    let (dim, len) = traj.shape();
    let size = len / batches;
    (0..batches)
        .map(|b| {
            let start = b * size;
            let end = if b + 1 == batches { len } else { start + size };
            let mut sum = DVector::zeros(dim);
            for t in start..end {
                sum += traj.column(t);
            }
            let mut products = Vec::with_capacity(lags.len());
            let mut pair_counts = Vec::with_capacity(lags.len());
            for &lag in lags {
                let mut acc = DMatrix::zeros(dim, dim);
                let mut count = 0;
                for t in start..end.min(len.saturating_sub(lag)) {
                    acc.ger(T::one(), &traj.column(t), &traj.column(t + lag), T::one());
                    count += 1;
                }
                products.push(acc);
                pair_counts.push(count);
            }
            BatchMoments {
                count: end - start,
                sum,
                products,
                pair_counts,
            }
        })
        .collect()
}

struct Reduced<T: Real> {
    mean: DVector<T>,
    lagged: Vec<DMatrix<T>>,
    errors: Vec<DMatrix<T>>,
    samples: usize,
}

/// Pools batches; standard errors are the spread of per-batch estimates
/// over `√B`.
fn reduce<T: Real>(batches: &[BatchMoments<T>]) -> Result<Reduced<T>> {
    let used: Vec<&BatchMoments<T>> = batches
        .iter()
        .filter(|b| b.count > 0 && b.pair_counts.iter().all(|&c| c > 0))
        .collect();
    if used.len() < MIN_BATCHES {
        return Err(Error::InsufficientData {
            batches: used.len(),
            required: MIN_BATCHES,
        });
    }
    let dim = used[0].sum.len();
    let lags = used[0].products.len();
    let samples: usize = used.iter().map(|b| b.count).sum();
    let mean =
        used.iter().fold(DVector::zeros(dim), |acc, b| acc + &b.sum) / from_usize::<T>(samples);
    let outer = &mean * mean.transpose();
    let count_b = from_usize::<T>(used.len());
    let mut lagged = Vec::with_capacity(lags);
    let mut errors = Vec::with_capacity(lags);
    for l in 0..lags {
        let pairs: usize = used.iter().map(|b| b.pair_counts[l]).sum();
        let pooled = used
            .iter()
            .fold(DMatrix::zeros(dim, dim), |acc, b| acc + &b.products[l])
            / from_usize::<T>(pairs)
            - &outer;
        let estimates: Vec<DMatrix<T>> = used
            .iter()
            .map(|b| {
                let mu = &b.sum / from_usize::<T>(b.count);
                &b.products[l] / from_usize::<T>(b.pair_counts[l]) - &mu * mu.transpose()
            })
            .collect();
        let avg = estimates
            .iter()
            .fold(DMatrix::zeros(dim, dim), |acc, e| acc + e)
            / count_b;
        let var = estimates.iter().fold(DMatrix::zeros(dim, dim), |acc, e| {
            let d = e - &avg;
            acc + d.component_mul(&d)
        }) / (count_b - T::one());
        errors.push(var.map(|v| (v / count_b).sqrt()));
        lagged.push(pooled);
    }
    Ok(Reduced {
        mean,
        lagged,
        errors,
        samples,
    })
}

fn lag_zero_index(lags: &mut Vec<usize>) -> usize {
    match lags.iter().position(|&l| l == 0) {
        Some(i) => i,
        None => {
            lags.insert(0, 0);
            0
        }
    }
}

/// Ensemble and time averages of the given trajectories (one column per
/// time step). Each trajectory is cut into `batches_per_trajectory`
/// contiguous batches for the standard errors.
pub fn estimate_covariance<T: Real>(
    trajectories: &[DMatrix<T>],
    lag_steps: &[usize],
    batches_per_trajectory: usize,
) -> Result<EnsembleStats<T>> {
    let mut lags = lag_steps.to_vec();
    let zero = lag_zero_index(&mut lags);
    let batches: Vec<BatchMoments<T>> = trajectories
        .iter()
        .flat_map(|t| batch_moments(t, &lags, batches_per_trajectory.max(1)))
        .collect();
    let r = reduce(&batches)?;
    Ok(EnsembleStats {
        covariance: symmetrize(&r.lagged[zero]),
        standard_errors: symmetrize(&r.errors[zero]),
        mean: r.mean,
        step: T::one(),
        lag_steps: lags,
        lagged: r.lagged,
        lagged_standard_errors: r.errors,
        batches: batches.len(),
        samples: r.samples,
        forcing: None,
    })
}

fn simulate_with<T: Real>(
    drift: &DriftMatrix<T>,
    stepper: &Stepper<T>,
    forcing_dim: usize,
    forcing_variance: T,
    config: &SimulationConfig<T>,
) -> Result<EnsembleStats<T>> {
    let (burn, total) = config.steps(drift)?;
    let mut lags = config.lag_steps();
    let zero = lag_zero_index(&mut lags);
    let psi_dim = drift.a().nrows();
    let per_member = config.batches();

    type MemberMoments<T> = (Vec<BatchMoments<T>>, Vec<BatchMoments<T>>);
    let member = |k: usize| -> Result<MemberMoments<T>> {
        let traj = run_member(
            drift,
            stepper,
            forcing_dim,
            forcing_variance,
            config,
            k,
            burn,
            total,
        )?;
        let psi = traj.rows(0, psi_dim).into_owned();
        let state = batch_moments(&psi, &lags, per_member);
        let forcing = if forcing_dim > 0 {
            let f = traj.rows(psi_dim, forcing_dim).into_owned();
            batch_moments(&f, &lags, per_member)
        } else {
            Vec::new()
        };
        Ok((state, forcing))
    };
    let results: Vec<Result<_>> = if config.parallel {
        (0..config.ensemble).into_par_iter().map(member).collect()
    } else {
        (0..config.ensemble).map(member).collect()
    };
    let mut state = Vec::new();
    let mut forcing = Vec::new();
    for r in results {
        let (s, f) = r?;
        state.extend(s);
        forcing.extend(f);
    }
    let r = reduce(&state)?;
    let forcing_stats = if forcing_dim > 0 {
        let f = reduce(&forcing)?;
        let scale = from_usize::<T>(forcing_dim);
        let times = lags
            .iter()
            .map(|&l| from_usize::<T>(l) * config.step)
            .collect();
        Some(ForcingStats {
            lags: times,
            autocovariance: f.lagged.iter().map(|m| m.trace() / scale).collect(),
            standard_errors: f
                .errors
                .iter()
                .map(|e| (e.diagonal().map(|x| x * x).sum()).sqrt() / scale)
                .collect(),
        })
    } else {
        None
    };
    Ok(EnsembleStats {
        covariance: symmetrize(&r.lagged[zero]),
        standard_errors: symmetrize(&r.errors[zero]),
        mean: r.mean,
        step: config.step,
        lag_steps: lags,
        lagged: r.lagged,
        lagged_standard_errors: r.errors,
        batches: state.len(),
        samples: r.samples,
        forcing: forcing_stats,
    })
}

/// White-noise forcing of intensity `σ²` on the boundary momenta.
/// `σ² = 0` gives the damped deterministic flow.
pub fn simulate_white<T: Real>(
    drift: &DriftMatrix<T>,
    sigma2: T,
    config: &SimulationConfig<T>,
) -> Result<EnsembleStats<T>> {
    if sigma2 < T::zero() {
        return Err(Error::BadConfig("sigma^2 must be nonnegative".into()));
    }
    let stepper = white_stepper(drift, sigma2, config.step, config.scheme)?;
    simulate_with(drift, &stepper, 0, T::zero(), config)
}

/// Ornstein-Uhlenbeck forcing, started from its stationary law.
pub fn simulate_ou<T: Real>(
    drift: &DriftMatrix<T>,
    noise: &NoiseModel<T>,
    config: &SimulationConfig<T>,
) -> Result<EnsembleStats<T>> {
    let NoiseKind::OrnsteinUhlenbeck { c, mu } = *noise.kind() else {
        return Err(Error::WrongNoiseKind(
            "simulate_ou needs Ornstein-Uhlenbeck noise",
        ));
    };
    let stepper = ou_stepper(drift, c, mu, config.step, config.scheme)?;
    let variance = T::pi() * c / mu;
    simulate_with(drift, &stepper, drift.boundary_size(), variance, config)
}

/// Dispatches on the noise kind; band-limited and Gaussian-covariance
/// forcing have no finite Markov realization.
pub fn simulate<T: Real>(
    drift: &DriftMatrix<T>,
    noise: &NoiseModel<T>,
    config: &SimulationConfig<T>,
) -> Result<EnsembleStats<T>> {
    match *noise.kind() {
        NoiseKind::White { sigma2 } => simulate_white(drift, sigma2, config),
        NoiseKind::OrnsteinUhlenbeck { .. } => simulate_ou(drift, noise, config),
        _ => Err(Error::WrongNoiseKind(
            "only white and Ornstein-Uhlenbeck forcing can be simulated",
        )),
    }
}

/// One white-noise path (all steps, burn-in included), every `stride`-th
/// state kept.
pub fn white_path<T: Real>(
    drift: &DriftMatrix<T>,
    sigma2: T,
    config: &SimulationConfig<T>,
    member: usize,
    stride: usize,
) -> Result<DMatrix<T>> {
    let stepper = white_stepper(drift, sigma2, config.step, config.scheme)?;
    let total = to_f64(config.horizon / config.step).round() as usize;
    let traj = run_member(drift, &stepper, 0, T::zero(), config, member, 0, total)?;
    let stride = stride.max(1);
    let cols: Vec<usize> = (0..traj.ncols()).step_by(stride).collect();
    Ok(traj.select_columns(&cols))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::stationary_cov_qblock;
    use crate::linalg::rel_frobenius;
    use crate::model::{build_drift, build_model, InteractionGraph};
    use crate::noise::make_ou;
    use nalgebra::dmatrix;

    fn single(omega2: f64, alpha: f64) -> DriftMatrix<f64> {
        let m = build_model(
            dmatrix![omega2],
            InteractionGraph::path(1).unwrap(),
            1,
            alpha,
        )
        .unwrap();
        build_drift(&m).unwrap()
    }

    fn chain2() -> (crate::model::HamiltonianModel<f64>, DriftMatrix<f64>) {
        let v = dmatrix![4.0, -2.0; -2.0, 4.0];
        let m = build_model(v, InteractionGraph::path(2).unwrap(), 1, 1.0).unwrap();
        let d = build_drift(&m).unwrap();
        (m, d)
    }

    #[test]
    fn exact_scheme_preserves_gibbs_law() {
        let (_, drift) = chain2();
        let s = white_stepper(&drift, 1.5, 0.1, Scheme::ExactDiscretization).unwrap();
        let x = s.stationary_covariance().unwrap();
        assert!(rel_frobenius(&x, &(drift.c_g() * 1.5)) < 1e-10);
    }

    #[test]
    fn euler_maruyama_bias_is_first_order() {
        let drift = single(1.0, 1.0);
        let exact = drift.c_g().clone();
        let bias = |h: f64| {
            let s = white_stepper(&drift, 1.0, h, Scheme::EulerMaruyama).unwrap();
            (s.stationary_covariance().unwrap() - &exact).amax()
        };
        let ratio = bias(0.02) / bias(0.01);
        assert!((ratio - 2.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn increment_covariance_small_step() {
        let (_, drift) = chain2();
        let h = 1e-4;
        let s = white_stepper(&drift, 2.0, h, Scheme::ExactDiscretization).unwrap();
        let q = &s.factor * s.factor.transpose();
        let leading = drift.d2() * (2.0 * h);
        assert!((q - leading).amax() < 10.0 * h * h);
    }

    #[test]
    fn augmented_ou_has_stationary_forcing_and_analytic_covariance() {
        let (model, drift) = chain2();
        let noise = make_ou(1.0, 2.0).unwrap();
        let s = ou_stepper(&drift, 1.0, 2.0, 0.05, Scheme::ExactDiscretization).unwrap();
        let x = s.stationary_covariance().unwrap();
        assert!((x[(4, 4)] - std::f64::consts::PI / 2.0).abs() < 1e-10);
        let analytic = stationary_cov_qblock(&model, &noise).unwrap().full();
        assert!(rel_frobenius(&x.view((0, 0), (4, 4)).into_owned(), &analytic) < 1e-9);
    }

    #[test]
    fn single_oscillator_variances() {
        let (alpha, w2, sigma2) = (1.0, 2.0, 1.0);
        let drift = single(w2, alpha);
        let mut cfg = SimulationConfig::new(0.05, 200.0 / alpha, 64, 7);
        cfg.initial = InitialCondition::Gibbs {
            beta: 2.0 * alpha / sigma2,
        };
        cfg.burn_in = Some(1.0);
        let stats = simulate_white(&drift, sigma2, &cfg).unwrap();
        let reference = drift.c_g() * sigma2;
        assert!(
            stats.max_z_score(&reference) < 3.0,
            "{}",
            stats.max_z_score(&reference)
        );
        assert!(stats.standard_errors.iter().all(|&s| s > 0.0));
    }

    #[test]
    fn reproducible_and_thread_independent() {
        let (_, drift) = chain2();
        let mut cfg = SimulationConfig::new(0.1, 30.0, 12, 42);
        cfg.burn_in = Some(5.0);
        cfg.lags = vec![0.0, 1.0];
        let a = simulate_white(&drift, 1.0, &cfg).unwrap();
        let b = simulate_white(&drift, 1.0, &cfg).unwrap();
        cfg.parallel = false;
        let c = simulate_white(&drift, 1.0, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn zero_noise_energy_decays() {
        let (model, drift) = chain2();
        let mut cfg = SimulationConfig::new(0.05, 200.0, 2, 0);
        let psi0 = DVector::from_vec(vec![1.0, -0.5, 0.3, 0.2]);
        cfg.initial = InitialCondition::Given(psi0);
        let path = white_path(&drift, 0.0, &cfg, 0, 1).unwrap();
        let energy: Vec<f64> = path
            .column_iter()
            .map(|c| model.hamiltonian(&c.into_owned()))
            .collect();
        assert!(energy.windows(2).all(|w| w[1] <= w[0] + 1e-10));
        assert!(energy.last().unwrap() < &(1e-6 * energy[0]));
    }

    #[test]
    fn ou_forcing_autocovariance() {
        let (_, drift) = chain2();
        let (c, mu) = (1.0, 2.0);
        let noise = make_ou(c, mu).unwrap();
        let mut cfg = SimulationConfig::new(0.05, 100.0, 32, 3);
        cfg.burn_in = Some(10.0);
        cfg.lags = vec![0.0, 1.0 / mu, 2.0 / mu];
        let stats = simulate_ou(&drift, &noise, &cfg).unwrap();
        let f = stats.forcing.unwrap();
        for (k, &lag) in f.lags.iter().enumerate() {
            let expected = noise.covariance(lag).unwrap();
            let z = (f.autocovariance[k] - expected).abs() / f.standard_errors[k];
            assert!(z < 3.0, "lag {lag}: z = {z}");
        }
    }

    #[test]
    fn constant_trajectories_have_zero_covariance() {
        let traj: Vec<DMatrix<f64>> = (0..4)
            .map(|_| DMatrix::from_fn(3, 50, |i, _| i as f64 + 0.5))
            .collect();
        let stats = estimate_covariance(&traj, &[0, 3], 4).unwrap();
        assert!(stats.covariance.amax() < 1e-12);
        assert!(stats.lagged[1].amax() < 1e-12);
        assert_eq!(
            stats.lagged[0],
            stats.lagged[stats.lag_steps.iter().position(|&l| l == 0).unwrap()]
        );
    }

    #[test]
    fn iid_gaussian_covariance_recovered() {
        let target = dmatrix![2.0, 0.6; 0.6, 1.0];
        let l = target.clone().cholesky().unwrap().unpack();
        let traj: Vec<DMatrix<f64>> = (0..20)
            .map(|k| {
                let mut rng = member_rng(99, k);
                let z = DMatrix::from_fn(2, 500, |_, _| gaussian::<f64>(&mut rng));
                &l * z
            })
            .collect();
        let stats = estimate_covariance(&traj, &[0], 1).unwrap();
        assert!(stats.max_z_score(&target) < 3.0);
    }

    #[test]
    fn too_few_batches_rejected() {
        let traj = vec![DMatrix::from_fn(1, 100, |_, j| j as f64)];
        assert!(matches!(
            estimate_covariance(&traj, &[0], 4),
            Err(Error::InsufficientData {
                batches: 4,
                required: 10
            })
        ));
    }

    #[test]
    fn bad_configs_rejected() {
        let (_, drift) = chain2();
        let cfg = SimulationConfig::new(0.1, 1.0, 8, 0);
        assert!(matches!(
            simulate_white(&drift, 1.0, &cfg),
            Err(Error::BadConfig(_))
        ));
        let mut cfg = SimulationConfig::new(0.1, 100.0, 1, 0);
        cfg.burn_in = Some(1.0);
        assert!(matches!(
            simulate_white(&drift, 1.0, &cfg),
            Err(Error::BadConfig(_))
        ));
        let white = crate::noise::make_white(1.0).unwrap();
        let cfg = SimulationConfig::new(0.1, 100.0, 8, 0);
        assert!(matches!(
            simulate_ou(&drift, &white, &cfg),
            Err(Error::WrongNoiseKind(_))
        ));
    }
}
