//! Globally adaptive Gauss-Kronrod (7/15) quadrature for vector-valued
//! integrands.
//!
//! Panels are refined by bisecting the one with the largest error estimate.
//! Node evaluations inside a panel may run on the rayon pool; the final sum
//! is always taken over panels sorted by their left endpoint, so the result
//! does not depend on the number of worker threads.

use rayon::prelude::*;

use crate::scalar::{lit, Real};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadratureOptions<T> {
    pub abs_tol: T,
    pub rel_tol: T,
    pub max_panels: usize,
    /// Evaluate the 15 nodes of a panel in parallel.
    pub parallel: bool,
}

impl<T: Real> Default for QuadratureOptions<T> {
    fn default() -> Self {
        Self {
            abs_tol: lit(1e-13),
            rel_tol: lit(1e-11),
            max_panels: 4000,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QuadratureResult<T> {
    pub value: Vec<T>,
    /// Sum over panels of `max_k |K15_k - G7_k|`.
    pub error: T,
    pub evaluations: usize,
    pub panels: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
struct Panel<T> {
    a: T,
    b: T,
    value: Vec<T>,
    error: T,
}

/// Fixed 15-point Kronrod rule with its embedded 7-point Gauss estimate.
fn gk15<T, F>(f: &F, a: T, b: T, parallel: bool) -> Panel<T>
where
    T: Real,
    F: Fn(T) -> Vec<T> + Sync,
{
    let center = (a + b) * lit::<T>(0.5);
    let half = (b - a) * lit::<T>(0.5);
    // Node order: center, then (-x_k, +x_k) for k = 0..7.
    let nodes: Vec<T> = std::iter::once(center)
        .chain((0..7).flat_map(|k| {
            let dx = half * lit::<T>(XGK[k]);
            [center - dx, center + dx]
        }))
        .collect();
    let values: Vec<Vec<T>> = if parallel {
        nodes.par_iter().map(|&x| f(x)).collect()
    } else {
        nodes.iter().map(|&x| f(x)).collect()
    };
    let dim = values[0].len();
    let mut kronrod = vec![T::zero(); dim];
    let mut gauss = vec![T::zero(); dim];
    for d in 0..dim {
        let mut k = values[0][d] * lit::<T>(WGK[7]);
        let mut g = values[0][d] * lit::<T>(WG[3]);
        for j in 0..7 {
            let pair = values[1 + 2 * j][d] + values[2 + 2 * j][d];
            k += pair * lit::<T>(WGK[j]);
            if j % 2 == 1 {
                g += pair * lit::<T>(WG[j / 2]);
            }
        }
        kronrod[d] = k * half;
        gauss[d] = g * half;
    }
    let error = kronrod
        .iter()
        .zip(&gauss)
        .fold(T::zero(), |acc, (k, g)| acc.max((*k - *g).abs()));
    Panel {
        a,
        b,
        value: kronrod,
        error,
    }
}

/// Integrates `f` over `[points[0], points[last]]`, starting from the panels
/// delimited by `points` (sorted, at least two entries). Place breakpoints at
/// kinks and peaks of the integrand.
pub fn integrate<T, F>(f: F, points: &[T], opts: &QuadratureOptions<T>) -> QuadratureResult<T>
where
    T: Real,
    F: Fn(T) -> Vec<T> + Sync,
{
    assert!(points.len() >= 2, "need at least one panel");
    let mut panels: Vec<Panel<T>> = points
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| gk15(&f, w[0], w[1], opts.parallel))
        .collect();
    assert!(!panels.is_empty(), "breakpoints span an empty interval");
    let mut evaluations = 15 * panels.len();
    let dim = panels[0].value.len();

    // Running totals drive the stopping rule; the returned value is summed
    // afresh in left-endpoint order so it does not depend on refinement
    // history.
    let mut running = vec![T::zero(); dim];
    for p in &panels {
        for (v, x) in running.iter_mut().zip(&p.value) {
            *v += *x;
        }
    }
    let finish = |mut panels: Vec<Panel<T>>, evaluations: usize, converged: bool| {
        panels.sort_by(|p, q| p.a.partial_cmp(&q.a).unwrap());
        let mut value = vec![T::zero(); dim];
        let mut error = T::zero();
        for p in &panels {
            for (v, x) in value.iter_mut().zip(&p.value) {
                *v += *x;
            }
            error += p.error;
        }
        QuadratureResult {
            value,
            error,
            evaluations,
            panels: panels.len(),
            converged,
        }
    };

    loop {
        let error = panels.iter().fold(T::zero(), |acc, p| acc + p.error);
        let scale = running.iter().fold(T::zero(), |acc, x| acc.max(x.abs()));
        let tol = opts.abs_tol.max(opts.rel_tol * scale);
        let converged = error <= tol;
        if converged || panels.len() >= opts.max_panels {
            return finish(panels, evaluations, converged);
        }
        let worst = panels
            .iter()
            .enumerate()
            .max_by(|(_, p), (_, q)| p.error.partial_cmp(&q.error).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let p = panels.swap_remove(worst);
        let mid = (p.a + p.b) * lit::<T>(0.5);
        if !(mid > p.a && mid < p.b) {
            // Panel cannot be split further in this precision.
            panels.push(Panel {
                error: T::zero(),
                ..p
            });
            continue;
        }
        let left = gk15(&f, p.a, mid, opts.parallel);
        let right = gk15(&f, mid, p.b, opts.parallel);
        for (k, r) in running.iter_mut().enumerate() {
            *r += left.value[k] + right.value[k] - p.value[k];
        }
        panels.push(left);
        panels.push(right);
        evaluations += 30;
    }
}

/// Integrates `f` over `[a, ∞)` through `x = a + t / (1 - t)`.
/// `breakpoints` are given in the original variable.
pub fn integrate_to_infinity<T, F>(
    f: F,
    a: T,
    breakpoints: &[T],
    opts: &QuadratureOptions<T>,
) -> QuadratureResult<T>
where
    T: Real,
    F: Fn(T) -> Vec<T> + Sync,
{
    let to_t = |x: T| {
        let u = x - a;
        u / (T::one() + u)
    };
    let mut points = vec![T::zero()];
    points.extend(breakpoints.iter().filter(|&&x| x > a).map(|&x| to_t(x)));
    points.push(T::one());
    points.sort_by(|p, q| p.partial_cmp(q).unwrap());
    points.dedup();
    let g = |t: T| {
        let s = T::one() - t;
        let x = a + t / s;
        let jac = T::one() / (s * s);
        let mut v = f(x);
        for e in v.iter_mut() {
            *e *= jac;
        }
        v
    };
    integrate(g, &points, opts)
}

/// Non-adaptive composite 15-point Kronrod rule on `panels` equal panels.
/// Returns `(nodes, weights)`.
pub fn composite_rule<T: Real>(a: T, b: T, panels: usize) -> (Vec<T>, Vec<T>) {
    let h = (b - a) / lit::<T>(panels as f64);
    let mut nodes = Vec::with_capacity(15 * panels);
    let mut weights = Vec::with_capacity(15 * panels);
    for p in 0..panels {
        let lo = a + h * lit::<T>(p as f64);
        let center = lo + h * lit::<T>(0.5);
        let half = h * lit::<T>(0.5);
        nodes.push(center);
        weights.push(half * lit::<T>(WGK[7]));
        for k in 0..7 {
            let dx = half * lit::<T>(XGK[k]);
            nodes.push(center - dx);
            nodes.push(center + dx);
            weights.push(half * lit::<T>(WGK[k]));
            weights.push(half * lit::<T>(WGK[k]));
        }
    }
    (nodes, weights)
}
