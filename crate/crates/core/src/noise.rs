//! Stationary Gaussian forcing as `(C_f, a)` pairs.
//!
//! The Fourier convention is
//!
//! ```text
//! a(λ) = (1/2π) ∫ e^{-itλ} C_f(t) dt,      C_f(t) = ∫ e^{itλ} a(λ) dλ.
//! ```
//!
//! | kind            | `C_f(s)`                          | `a(λ)`                        |
//! |-----------------|-----------------------------------|-------------------------------|
//! | white           | `σ² δ(s)`                         | `σ² / 2π`                     |
//! | Ornstein-Uhlenbeck | `(π c / μ) e^{-μ|s|}`          | `c / (μ² + λ²)`               |
//! | Gaussian        | `c / (√(2π) τ) e^{-s²/2τ²}`       | `(c / 2π) e^{-τ²λ²/2}`        |
//! | band-limited    | numerical inverse transform       | `A exp(1 - 1/(1 - (λ/b)²))`, `|λ| < b` |
//!
//! The Gaussian kind carries total mass `∫ C_f = c`, so it tends to white
//! noise with `σ² = c` as `τ → 0`.

use std::sync::OnceLock;

use nalgebra::Complex;

use crate::error::{Error, Result};
use crate::quadrature::composite_rule;
use crate::scalar::{from_usize, lit, to_f64, Real};

/// Number of equal λ-panels on `[0, b]` used for the band-limited transform.
pub const BAND_LAMBDA_PANELS: usize = 512;
/// Grid points per unit of `b·s` in the band-limited covariance cache.
pub const BAND_GRID_PER_UNIT: usize = 64;
/// The cache covers `b·s ∈ [0, BAND_CACHE_EXTENT]`.
pub const BAND_CACHE_EXTENT: f64 = 400.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseKind<T> {
    White { sigma2: T },
    OrnsteinUhlenbeck { c: T, mu: T },
    GaussianCov { c: T, tau_c: T },
    BandLimited { b: T, amplitude: T },
}

impl<T> NoiseKind<T> {
    pub fn name(&self) -> &'static str {
        match self {
            NoiseKind::White { .. } => "white",
            NoiseKind::OrnsteinUhlenbeck { .. } => "ou",
            NoiseKind::GaussianCov { .. } => "gaussian",
            NoiseKind::BandLimited { .. } => "band_limited",
        }
    }
}

/// Cubic-Hermite table of the band-limited covariance and its derivative.
#[derive(Debug, Clone)]
struct BandCache<T> {
    step: T,
    values: Vec<T>,
    slopes: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct NoiseModel<T: Real> {
    kind: NoiseKind<T>,
    band: OnceLock<BandCache<T>>,
}

impl<T: Real> PartialEq for NoiseModel<T> {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

fn positive<T: Real>(x: T, what: &str) -> Result<()> {
    if x > T::zero() && x.is_finite() {
        Ok(())
    } else {
        Err(Error::BadConfig(format!(
            "{what} must be positive, got {}",
            to_f64(x)
        )))
    }
}

pub fn make_white<T: Real>(sigma2: T) -> Result<NoiseModel<T>> {
    positive(sigma2, "sigma^2")?;
    Ok(NoiseModel::from_kind(NoiseKind::White { sigma2 }))
}

pub fn make_ou<T: Real>(c: T, mu: T) -> Result<NoiseModel<T>> {
    positive(c, "c")?;
    positive(mu, "mu")?;
    Ok(NoiseModel::from_kind(NoiseKind::OrnsteinUhlenbeck {
        c,
        mu,
    }))
}

pub fn make_gaussian<T: Real>(c: T, tau_c: T) -> Result<NoiseModel<T>> {
    positive(c, "c")?;
    positive(tau_c, "tau_c")?;
    Ok(NoiseModel::from_kind(NoiseKind::GaussianCov { c, tau_c }))
}

pub fn make_bandlimited<T: Real>(b: T, amplitude: T) -> Result<NoiseModel<T>> {
    positive(b, "b")?;
    positive(amplitude, "amplitude")?;
    Ok(NoiseModel::from_kind(NoiseKind::BandLimited {
        b,
        amplitude,
    }))
}

impl<T: Real> NoiseModel<T> {
    /// Builds a model from an already validated kind.
    pub fn from_kind(kind: NoiseKind<T>) -> Self {
        Self {
            kind,
            band: OnceLock::new(),
        }
    }

    pub fn kind(&self) -> &NoiseKind<T> {
        &self.kind
    }

    pub fn is_white(&self) -> bool {
        matches!(self.kind, NoiseKind::White { .. })
    }

    /// `a(λ)`.
    pub fn spectral_density(&self, lambda: T) -> T {
        let two_pi = T::two_pi();
        match self.kind {
            NoiseKind::White { sigma2 } => sigma2 / two_pi,
            NoiseKind::OrnsteinUhlenbeck { c, mu } => c / (mu * mu + lambda * lambda),
            NoiseKind::GaussianCov { c, tau_c } => {
                let x = tau_c * lambda;
                c / two_pi * (-(x * x) * lit::<T>(0.5)).exp()
            }
            NoiseKind::BandLimited { b, amplitude } => bump(lambda / b) * amplitude,
        }
    }

    /// `C_f(s)`; white noise has no pointwise value.
    pub fn covariance(&self, s: T) -> Result<T> {
        let s = s.abs();
        Ok(match self.kind {
            NoiseKind::White { .. } => return Err(Error::Distributional),
            NoiseKind::OrnsteinUhlenbeck { c, mu } => T::pi() * c / mu * (-mu * s).exp(),
            NoiseKind::GaussianCov { c, tau_c } => {
                let x = s / tau_c;
                c / (T::two_pi().sqrt() * tau_c) * (-(x * x) * lit::<T>(0.5)).exp()
            }
            NoiseKind::BandLimited { b, .. } => self.band_covariance(s, b),
        })
    }

    /// `C_f(0)`, or `None` for white noise.
    pub fn variance(&self) -> Option<T> {
        match self.kind {
            NoiseKind::White { .. } => None,
            NoiseKind::BandLimited { b, amplitude } => Some(band_mass(b, amplitude)),
            _ => self.covariance(T::zero()).ok(),
        }
    }

    /// White-noise intensity `σ²`, or `∫ C_f` for the other kinds.
    pub fn total_mass(&self) -> T {
        // ∫ C_f = 2π a(0)
        T::two_pi() * self.spectral_density(T::zero())
    }

    /// `b` such that `a(λ) = 0` for `|λ| > b`.
    pub fn support_bound(&self) -> Option<T> {
        match self.kind {
            NoiseKind::BandLimited { b, .. } => Some(b),
            _ => None,
        }
    }

    /// Points where `C_f` is not smooth.
    pub fn covariance_kinks(&self) -> Vec<T> {
        match self.kind {
            NoiseKind::OrnsteinUhlenbeck { .. } => vec![T::zero()],
            _ => Vec::new(),
        }
    }

    /// A lag beyond which `|C_f(s)| <= rel · C_f(0)`. For band-limited
    /// noise this is capped at the end of the cached grid.
    pub fn covariance_cutoff(&self, rel: T) -> Option<T> {
        let log_inv = (T::one() / rel).ln();
        match self.kind {
            NoiseKind::White { .. } => None,
            NoiseKind::OrnsteinUhlenbeck { mu, .. } => Some(log_inv / mu),
            NoiseKind::GaussianCov { tau_c, .. } => Some(tau_c * (lit::<T>(2.0) * log_inv).sqrt()),
            NoiseKind::BandLimited { b, .. } => {
                let cache = self.cache(b);
                let floor = rel * cache.values[0];
                let last = cache
                    .values
                    .iter()
                    .rposition(|v| v.abs() > floor)
                    .unwrap_or(0);
                let k = (last + 1).min(cache.values.len() - 1);
                Some(cache.step * from_usize::<T>(k))
            }
        }
    }

    /// A frequency beyond which `a(λ) <= rel · a(0)`; `None` for white noise.
    pub fn spectral_cutoff(&self, rel: T) -> Option<T> {
        match self.kind {
            NoiseKind::White { .. } => None,
            NoiseKind::OrnsteinUhlenbeck { mu, .. } => {
                Some(mu * (T::one() / rel - T::one()).max(T::zero()).sqrt())
            }
            NoiseKind::GaussianCov { tau_c, .. } => {
                Some((lit::<T>(2.0) * (T::one() / rel).ln()).sqrt() / tau_c)
            }
            NoiseKind::BandLimited { b, .. } => Some(b),
        }
    }

    /// `max_{0 <= s <= t} |C_f(s)|`, sampled on a fine grid.
    pub fn max_abs_covariance(&self, t: T) -> Result<T> {
        let samples = 2001;
        let mut best = T::zero();
        for k in 0..samples {
            let s = t * from_usize::<T>(k) / from_usize::<T>(samples - 1);
            best = best.max(self.covariance(s)?.abs());
        }
        Ok(best)
    }

    fn cache(&self, b: T) -> &BandCache<T> {
        let amplitude = match self.kind {
            NoiseKind::BandLimited { amplitude, .. } => amplitude,
            _ => unreachable!("cache requested for non band-limited noise"),
        };
        self.band.get_or_init(|| build_band_cache(b, amplitude))
    }

    fn band_covariance(&self, s: T, b: T) -> T {
        let cache = self.cache(b);
        let x = s / cache.step;
        let last = cache.values.len() - 1;
        let k = x.floor().to_usize().unwrap_or(usize::MAX);
        if k >= last {
            let amplitude = match self.kind {
                NoiseKind::BandLimited { amplitude, .. } => amplitude,
                _ => unreachable!(),
            };
            return band_transform_direct(b, amplitude, s);
        }
        let u = x - from_usize::<T>(k);
        let h = cache.step;
        let (one, two, three) = (T::one(), lit::<T>(2.0), lit::<T>(3.0));
        let u2 = u * u;
        let u3 = u2 * u;
        let h00 = two * u3 - three * u2 + one;
        let h10 = u3 - two * u2 + u;
        let h01 = -two * u3 + three * u2;
        let h11 = u3 - u2;
        h00 * cache.values[k]
            + h10 * h * cache.slopes[k]
            + h01 * cache.values[k + 1]
            + h11 * h * cache.slopes[k + 1]
    }
}

/// `exp(1 - 1/(1 - x²))` on `|x| < 1`, zero elsewhere; equals 1 at 0.
fn bump<T: Real>(x: T) -> T {
    let y = T::one() - x * x;
    if y <= T::zero() {
        T::zero()
    } else {
        (T::one() - T::one() / y).exp()
    }
}

fn band_nodes<T: Real>(b: T, amplitude: T) -> (Vec<T>, Vec<T>) {
    let (nodes, weights) = composite_rule(T::zero(), b, BAND_LAMBDA_PANELS);
    let weights = nodes
        .iter()
        .zip(weights)
        .map(|(&l, w)| w * bump(l / b) * amplitude)
        .collect();
    (nodes, weights)
}

fn band_mass<T: Real>(b: T, amplitude: T) -> T {
    let (_, w) = band_nodes(b, amplitude);
    lit::<T>(2.0) * w.iter().fold(T::zero(), |a, &x| a + x)
}

/// `C_f(s) = 2 ∫_0^b a(λ) cos(λ s) dλ` by the composite rule.
fn band_transform_direct<T: Real>(b: T, amplitude: T, s: T) -> T {
    let (nodes, weights) = band_nodes(b, amplitude);
    let two = lit::<T>(2.0);
    nodes
        .iter()
        .zip(&weights)
        .fold(T::zero(), |acc, (&l, &w)| acc + w * (l * s).cos())
        * two
}

fn build_band_cache<T: Real>(b: T, amplitude: T) -> BandCache<T> {
    let (nodes, weights) = band_nodes(b, amplitude);
    let points = (BAND_CACHE_EXTENT as usize) * BAND_GRID_PER_UNIT + 1;
    let step = T::one() / (b * from_usize::<T>(BAND_GRID_PER_UNIT));
    let two = lit::<T>(2.0);
    let mut values = vec![T::zero(); points];
    let mut slopes = vec![T::zero(); points];
    // e^{iλ s_k} by repeated rotation, re-anchored periodically.
    let anchor = 256;
    for (&l, &w) in nodes.iter().zip(&weights) {
        let rot = Complex::new((l * step).cos(), (l * step).sin());
        let mut z = Complex::new(T::one(), T::zero());
        for k in 0..points {
            if k % anchor == 0 {
                let s = step * from_usize::<T>(k);
                z = Complex::new((l * s).cos(), (l * s).sin());
            }
            values[k] += w * z.re;
            slopes[k] -= w * l * z.im;
            z *= rot;
        }
    }
    for (v, d) in values.iter_mut().zip(slopes.iter_mut()) {
        *v *= two;
        *d *= two;
    }
    BandCache {
        step,
        values,
        slopes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{integrate, QuadratureOptions};
    use std::f64::consts::PI;

    /// (1/π) ∫_0^T C_f(t) cos(λ t) dt by adaptive quadrature.
    fn density_from_covariance(
        noise: &NoiseModel<f64>,
        lambda: f64,
        horizon: f64,
        kinks: &[f64],
    ) -> f64 {
        let mut points = vec![0.0];
        points.extend(kinks.iter().copied().filter(|&k| k > 0.0 && k < horizon));
        // enough panels to resolve the oscillation
        let panels = ((lambda.abs() * horizon / PI).ceil() as usize).max(8);
        for p in 1..panels {
            points.push(horizon * p as f64 / panels as f64);
        }
        points.push(horizon);
        points.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let opts = QuadratureOptions {
            abs_tol: 1e-14,
            rel_tol: 1e-12,
            max_panels: 20000,
            parallel: false,
        };
        let r = integrate(
            |t| vec![noise.covariance(t).unwrap() * (lambda * t).cos()],
            &points,
            &opts,
        );
        r.value[0] / PI
    }

    #[test]
    fn ou_closed_forms() {
        let (c, mu) = (1.5, 2.0);
        let ou = make_ou::<f64>(c, mu).unwrap();
        assert_eq!(ou.spectral_density(0.0), c / (mu * mu));
        assert!((ou.covariance(0.0).unwrap() - PI * c / mu).abs() < 1e-15);
        assert_eq!(ou.covariance(0.7).unwrap(), ou.covariance(-0.7).unwrap());
        // ∫ a = π c / μ = C_f(0)
        let r = crate::quadrature::integrate_to_infinity(
            |l| vec![ou.spectral_density(l)],
            0.0,
            &[1.0, 5.0],
            &QuadratureOptions::default(),
        );
        assert!((2.0 * r.value[0] - ou.covariance(0.0).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn ou_fourier_consistency() {
        let ou = make_ou(1.0, 2.0).unwrap();
        let horizon = ou.covariance_cutoff(1e-16).unwrap();
        let a0 = ou.spectral_density(0.0);
        for k in 0..=20 {
            let lambda = -50.0 + 5.0 * k as f64;
            let est = density_from_covariance(&ou, lambda, horizon, &[]);
            assert!(
                (est - ou.spectral_density(lambda)).abs() <= 1e-6 * a0,
                "λ={lambda}"
            );
        }
    }

    #[test]
    fn gaussian_fourier_consistency_and_mass() {
        let g = make_gaussian(2.0f64, 0.3).unwrap();
        assert!((g.total_mass() - 2.0).abs() < 1e-14);
        let horizon = g.covariance_cutoff(1e-18).unwrap();
        let a0 = g.spectral_density(0.0);
        for lambda in [0.0, 1.0, 3.0, 10.0, -7.0] {
            let est = density_from_covariance(&g, lambda, horizon, &[]);
            assert!((est - g.spectral_density(lambda)).abs() <= 1e-6 * a0);
        }
    }

    #[test]
    fn white_noise_contract() {
        let w = make_white(0.8).unwrap();
        for l in [0.0, 1.0, 10.0] {
            assert_eq!(w.spectral_density(l), 0.8 / (2.0 * PI));
        }
        assert_eq!(w.covariance(0.0), Err(Error::Distributional));
        assert!(w.is_white());
        assert_eq!(w.variance(), None);
        // σ² = 2α T gives temperature T: β⁻¹ = σ²/2α
        let (alpha, temp) = (0.7f64, 1.3f64);
        let w = make_white(2.0f64 * alpha * temp).unwrap();
        assert!((w.total_mass() / (2.0 * alpha) - temp).abs() < 1e-15);
    }

    #[test]
    fn bandlimited_support_and_mass() {
        let b = 2.0f64;
        let noise = make_bandlimited(b, 0.5).unwrap();
        assert_eq!(noise.spectral_density(b), 0.0);
        assert_eq!(noise.spectral_density(-b), 0.0);
        assert_eq!(noise.spectral_density(2.5), 0.0);
        assert_eq!(noise.spectral_density(0.0), 0.5);
        let c0 = noise.covariance(0.0).unwrap();
        let mass = crate::quadrature::integrate(
            |l| vec![noise.spectral_density(l)],
            &[-b, 0.0, b],
            &QuadratureOptions::default(),
        );
        assert!(c0 > 0.0);
        assert!((c0 - mass.value[0]).abs() < 1e-10);
        assert!((noise.variance().unwrap() - c0).abs() < 1e-12);
    }

    #[test]
    fn bandlimited_interpolation_is_accurate_and_even() {
        let b = 2.0f64;
        let noise = make_bandlimited(b, 1.0).unwrap();
        for s in [0.013, 0.77, 3.3, 10.0, 25.1, 63.9] {
            let interp = noise.covariance(s).unwrap();
            let direct = band_transform_direct(b, 1.0, s);
            assert!(
                (interp - direct).abs() < 1e-10,
                "s={s}: {interp} vs {direct}"
            );
            assert!((noise.covariance(-s).unwrap() - interp).abs() <= 1e-10);
        }
    }

    #[test]
    fn bandlimited_covariance_decays_fast() {
        let noise = make_bandlimited(2.0f64, 1.0).unwrap();
        let c0 = noise.covariance(0.0).unwrap();
        // envelope over [s, 2s], weighted by s^4, must keep shrinking
        let envelope = |s: f64| {
            (0..=400)
                .map(|k| {
                    noise
                        .covariance(s * (1.0 + k as f64 / 400.0))
                        .unwrap()
                        .abs()
                })
                .fold(0.0f64, f64::max)
                * s.powi(4)
        };
        assert!(envelope(10.0) < 1e-2 * c0 * 1e4);
        assert!(envelope(80.0) < envelope(40.0));
        assert!(envelope(40.0) < envelope(20.0));
    }

    #[test]
    fn bandlimited_fourier_consistency() {
        let noise = make_bandlimited(2.0, 1.0).unwrap();
        let horizon = noise.covariance_cutoff(1e-13).unwrap();
        for lambda in [0.0, 0.5, 1.0, 1.7, 1.99, 2.5, 5.0] {
            let est = density_from_covariance(&noise, lambda, horizon, &[]);
            assert!(
                (est - noise.spectral_density(lambda)).abs() <= 1e-6,
                "λ={lambda}: {est} vs {}",
                noise.spectral_density(lambda)
            );
        }
    }

    #[test]
    fn rejects_nonpositive_parameters() {
        assert!(make_ou(0.0, 1.0).is_err());
        assert!(make_white(-1.0).is_err());
        assert!(make_bandlimited(1.0, f64::NAN).is_err());
        assert!(make_gaussian(1.0, 0.0).is_err());
    }
}
