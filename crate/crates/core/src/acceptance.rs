//! The end-to-end acceptance suite, shared by the `acceptance` test target
//! and `openham validate`.
//!
//! Each criterion runs independently and reports pass/fail with a one-line
//! detail; failures inside a criterion are reported, never propagated.

use std::time::Instant;

use nalgebra::{dmatrix, DMatrix};
use serde::{Deserialize, Serialize};

use crate::covariance::{
    stationary_cov, stationary_cov_lyapunov, CovarianceResult, Engine, EngineOptions,
};
use crate::error::Result;
use crate::linalg::rel_frobenius;
use crate::model::{
    build_drift, build_model, harmonic_chain, perturb, random_model, HamiltonianModel,
    InteractionGraph,
};
use crate::noise::{make_bandlimited, make_ou};
use crate::reachability::{det_criterion_nonzero, krylov_subspace};
use crate::simulate::{
    default_burn_in, simulate_ou, simulate_white, InitialCondition, SimulationConfig,
};
use crate::thermo::{
    bulk_covariance, bulk_invariance_residual, growing_graph_experiment, remainder, ChainOperator,
    Sign,
};

/// `C_ψ(p₁, p₂)` of the two-site chain `V = [[4,-2],[-2,4]]`, `α = 1`,
/// `m = 1` under OU forcing `c = 1`, `μ = 2`, from an independent
/// extended-precision quadrature.
pub const OU_CHAIN_ORACLE: f64 = 0.08267349088394193;

pub const CRITERIA: [(u8, &str); 9] = [
    (1, "white-noise Lyapunov covariance is Gibbs"),
    (2, "time-domain, spectral and Q-block engines agree"),
    (3, "no coordinate-velocity correlations"),
    (4, "two-site chain velocity correlation matches oracle"),
    (5, "Monte Carlo reproduces analytic covariances"),
    (6, "band-limited remainder obeys the decay bound"),
    (7, "dissipative subspace: rank, genericity, determinant"),
    (8, "bulk covariance is invariant"),
    (9, "growing-graph convergence and sign"),
];

/// Thresholds of the suite. Exposed so harness behaviour can be tested by
/// corrupting one of them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub gibbs_rel: f64,
    pub engine_rel: f64,
    pub qp_ratio: f64,
    pub oracle_floor: f64,
    /// Three significant digits.
    pub oracle_rel: f64,
    pub z_max: f64,
    pub bulk_rel: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            gibbs_rel: 1e-9,
            engine_rel: 1e-6,
            qp_ratio: 1e-8,
            oracle_floor: 1e-4,
            oracle_rel: 5e-4,
            z_max: 3.0,
            bulk_rel: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SuiteOptions {
    pub tolerances: Tolerances,
    /// Offset added to every Monte Carlo seed.
    pub seed: u64,
    pub parallel: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionReport {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CriterionReport {
    pub fn line(&self) -> String {
        format!(
            "[{}] criterion {}: {} ({})",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail
        )
    }
}

pub fn run_all(opts: &SuiteOptions) -> Vec<CriterionReport> {
    CRITERIA.iter().map(|&(id, _)| run(id, opts)).collect()
}

/// Runs criterion `id` (1 to 9).
pub fn run(id: u8, opts: &SuiteOptions) -> CriterionReport {
    let name = CRITERIA
        .iter()
        .find(|c| c.0 == id)
        .map_or("unknown criterion", |c| c.1);
    let start = Instant::now();
    let tol = &opts.tolerances;
    let outcome = match id {
        1 => white_noise_gibbs(tol),
        2 => engine_agreement(tol, opts.parallel),
        3 => no_qp_correlations(tol, opts.parallel),
        4 => chain_oracle(tol, opts.parallel),
        5 => monte_carlo(tol, opts.seed, opts.parallel),
        6 => remainder_bound(opts.parallel),
        7 => reachability_suite(),
        8 => bulk_invariance(tol),
        9 => growing_graph(),
        _ => Ok((false, format!("no criterion {id}"))),
    };
    let (passed, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    CriterionReport {
        id,
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

type Outcome = Result<(bool, String)>;

/// Ten seeded random models with `N ≤ 6`, `m ∈ {1, 2}` and no undamped
/// subspace.
pub fn random_suite() -> Vec<HamiltonianModel<f64>> {
    let mut out = Vec::new();
    let mut seed = 0u64;
    while out.len() < 10 {
        let n = 2 + (seed % 5) as usize;
        let m = 1 + (seed % 2) as usize;
        let alpha = 0.5 + 0.25 * (seed % 3) as f64;
        if let Ok(model) = random_model::<f64>(n, m, alpha, 1000 + seed) {
            if krylov_subspace(&model).is_ok_and(|r| r.dim_l0 == 0) {
                out.push(model);
            }
        }
        seed += 1;
    }
    out
}

pub fn two_site_chain() -> HamiltonianModel<f64> {
    build_model(
        dmatrix![4.0, -2.0; -2.0, 4.0],
        InteractionGraph::path(2).expect("path graph"),
        1,
        1.0,
    )
    .expect("two-site chain is valid")
}

fn options(parallel: bool) -> EngineOptions<f64> {
    let mut o = EngineOptions::default();
    o.quadrature.parallel = parallel;
    o
}

fn lyapunov_suite() -> Result<Vec<(CovarianceResult<f64>, DMatrix<f64>)>> {
    let mut out = Vec::new();
    for model in random_suite() {
        let drift = build_drift(&model)?;
        for sigma2 in [0.5, 2.0] {
            let r = stationary_cov_lyapunov(&drift, sigma2)?;
            out.push((r, drift.c_g() * sigma2));
        }
    }
    Ok(out)
}

const PAIR_ENGINES: [Engine; 3] = [Engine::TimeDomain, Engine::Spectral, Engine::QBlock];

fn ou_engine_suite(parallel: bool) -> Result<Vec<[CovarianceResult<f64>; 3]>> {
    let opts = options(parallel);
    let mut out = Vec::new();
    for model in random_suite() {
        let drift = build_drift(&model)?;
        for mu in [1.0, 3.0] {
            let noise = make_ou(1.0, mu)?;
            let run = |e| stationary_cov(&model, &drift, &noise, e, &opts);
            out.push([
                run(PAIR_ENGINES[0])?,
                run(PAIR_ENGINES[1])?,
                run(PAIR_ENGINES[2])?,
            ]);
        }
    }
    Ok(out)
}

fn white_noise_gibbs(tol: &Tolerances) -> Outcome {
    let worst = lyapunov_suite()?
        .iter()
        .map(|(r, expected)| rel_frobenius(&r.full(), expected))
        .fold(0.0, f64::max);
    Ok((
        worst <= tol.gibbs_rel,
        format!(
            "20 cases, max relative error {worst:.2e} (limit {:.0e})",
            tol.gibbs_rel
        ),
    ))
}

fn engine_agreement(tol: &Tolerances, parallel: bool) -> Outcome {
    let mut worst = 0.0f64;
    let results = ou_engine_suite(parallel)?;
    for triple in &results {
        let full: Vec<DMatrix<f64>> = triple.iter().map(CovarianceResult::full).collect();
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            worst = worst.max(rel_frobenius(&full[a], &full[b]));
        }
    }
    Ok((
        worst <= tol.engine_rel,
        format!(
            "{} cases x 3 pairs, max relative difference {worst:.2e} (limit {:.0e})",
            results.len(),
            tol.engine_rel
        ),
    ))
}

fn no_qp_correlations(tol: &Tolerances, parallel: bool) -> Outcome {
    let mut ratios: Vec<f64> = lyapunov_suite()?
        .iter()
        .map(|(r, _)| r.max_qp() / r.max_pp())
        .collect();
    for triple in ou_engine_suite(parallel)? {
        ratios.extend(triple.iter().map(|r| r.max_qp() / r.max_pp()));
    }
    let worst = ratios.iter().copied().fold(0.0, f64::max);
    Ok((
        worst <= tol.qp_ratio,
        format!(
            "{} results, max |C_qp|/|C_pp| = {worst:.2e} (limit {:.0e})",
            ratios.len(),
            tol.qp_ratio
        ),
    ))
}

fn chain_oracle(tol: &Tolerances, parallel: bool) -> Outcome {
    let model = two_site_chain();
    let drift = build_drift(&model)?;
    let noise = make_ou(1.0, 2.0)?;
    let r = stationary_cov(&model, &drift, &noise, Engine::QBlock, &options(parallel))?;
    let value = r.c_pp[(0, 1)];
    let rel = (value - OU_CHAIN_ORACLE).abs() / OU_CHAIN_ORACLE.abs();
    Ok((
        value.abs() > tol.oracle_floor && rel <= tol.oracle_rel,
        format!(
            "C(p1,p2) = {value:.10e}, oracle {OU_CHAIN_ORACLE:.10e}, relative deviation {rel:.1e}"
        ),
    ))
}

fn monte_carlo(tol: &Tolerances, seed: u64, parallel: bool) -> Outcome {
    let alpha = 1.0;
    let single = build_model(dmatrix![1.0], InteractionGraph::path(1)?, 1, alpha)?;
    let chain = two_site_chain();
    let sigma2 = 1.0;
    let window = 200.0 / alpha;
    let mut details = Vec::new();
    let mut passed = true;

    for (label, model) in [("N=1", &single), ("chain", &chain)] {
        let drift = build_drift(model)?;
        let mut cfg = SimulationConfig::new(0.05, window + 1.0, 64, seed + 11);
        cfg.burn_in = Some(1.0);
        cfg.initial = InitialCondition::Gibbs {
            beta: 2.0 * alpha / sigma2,
        };
        cfg.parallel = parallel;
        let stats = simulate_white(&drift, sigma2, &cfg)?;
        let z = stats.max_z_score(&(drift.c_g() * sigma2));
        passed &= z <= tol.z_max;
        details.push(format!("white {label} max z {z:.2}"));
    }

    let drift = build_drift(&chain)?;
    let noise = make_ou(1.0, 2.0)?;
    let reference = stationary_cov(&chain, &drift, &noise, Engine::QBlock, &options(parallel))?;
    let burn = default_burn_in(&drift, window);
    let mut cfg = SimulationConfig::new(0.05, window + burn, 64, seed + 12);
    cfg.burn_in = Some(burn);
    cfg.parallel = parallel;
    let stats = simulate_ou(&drift, &noise, &cfg)?;
    let (p1, p2) = (2, 3);
    let z = (stats.covariance[(p1, p2)] - reference.c_pp[(0, 1)]).abs()
        / stats.standard_errors[(p1, p2)];
    passed &= z <= tol.z_max;
    details.push(format!("OU chain C(p1,p2) z {z:.2}"));
    Ok((
        passed,
        format!("{} (limit {})", details.join(", "), tol.z_max),
    ))
}

fn remainder_bound(parallel: bool) -> Outcome {
    let model = harmonic_chain(64, 0.5, 0.5, 1, 1.0)?;
    let drift = build_drift(&model)?;
    let noise = make_bandlimited(2.0, 1.0)?;
    let cov = stationary_cov(&model, &drift, &noise, Engine::QBlock, &options(parallel))?;
    let mut passed = true;
    let mut maxima = Vec::new();
    let mut details = Vec::new();
    for eta in [4.0, 8.0] {
        let report = remainder(&model, &noise, &cov, eta)?;
        let bound = report.bound_pp.unwrap_or(f64::NAN);
        let ok = report.pairs.iter().all(|p| p.y_pp.abs() <= bound);
        passed &= ok;
        maxima.push(report.max_interior_y_pp);
        details.push(format!(
            "eta {eta}: max |Y_pp| {:.2e} <= {bound:.2e}",
            report.max_interior_y_pp
        ));
    }
    let decreasing = maxima[1] < maxima[0];
    passed &= decreasing;
    details.push(format!("decreasing: {decreasing}"));
    Ok((passed, details.join(", ")))
}

fn reachability_suite() -> Outcome {
    let uncoupled = build_model(
        dmatrix![1.0, 0.0; 0.0, 2.0],
        InteractionGraph::path(2)?,
        1,
        1.0,
    )?;
    let base = krylov_subspace(&uncoupled)?.dim_l0;
    let mut dissipative = 0;
    let mut agree = 0;
    for trial in 0..50u64 {
        let model = perturb(&uncoupled, 0.01, trial)?;
        let zero_l0 = krylov_subspace(&model)?.dim_l0 == 0;
        dissipative += usize::from(zero_l0);
        agree += usize::from(det_criterion_nonzero(&model)? == zero_l0);
    }
    Ok((
        base == 2 && dissipative == 50 && agree == 50,
        format!("unperturbed dim L0 = {base}, dim L0 = 0 in {dissipative}/50, determinant agrees in {agree}/50"),
    ))
}

fn bulk_invariance(tol: &Tolerances) -> Outcome {
    let mut worst = 0.0f64;
    let mut cases = 0;
    for model in random_suite() {
        for noise in [
            make_ou(1.0, 1.0)?,
            make_ou(1.0, 3.0)?,
            make_bandlimited(2.0, 1.0)?,
        ] {
            let bulk = bulk_covariance(&model, &noise)?;
            worst = worst.max(bulk_invariance_residual(&model, &bulk)?);
            cases += 1;
        }
    }
    Ok((
        worst <= tol.bulk_rel,
        format!(
            "{cases} cases, max relative residual {worst:.2e} (limit {:.0e})",
            tol.bulk_rel
        ),
    ))
}

fn growing_graph() -> Outcome {
    let op = ChainOperator {
        onsite: 1.0,
        bond: 0.1,
    };
    let noise = make_ou(1.0, 3.0)?;
    let table = growing_graph_experiment(&op, &[8, 16, 32], &noise, (6, 7), 1.0)?;
    let diffs: Vec<String> = table
        .rows
        .iter()
        .filter_map(|r| r.difference)
        .map(|d| format!("{d:.2e}"))
        .collect();
    let passed =
        table.differences_decreasing && table.final_sign != Sign::Zero && table.sign_matches();
    Ok((
        passed,
        format!(
            "N = 17, 33, 65, differences [{}], final {:.10e} ({:?}, expected {:?})",
            diffs.join(", "),
            table.final_value,
            table.final_sign,
            table.expected_sign
        ),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_models_are_dissipative_and_small() {
        let suite = random_suite();
        assert_eq!(suite.len(), 10);
        assert!(suite
            .iter()
            .all(|m| m.n() <= 6 && (1..=2).contains(&m.boundary_size())));
        assert!(suite.iter().any(|m| m.boundary_size() == 2));
    }

    #[test]
    fn unknown_criterion_fails_cleanly() {
        let r = run(42, &SuiteOptions::default());
        assert!(!r.passed);
    }

    #[test]
    fn corrupted_tolerance_fails_its_row() {
        let mut opts = SuiteOptions::default();
        opts.tolerances.gibbs_rel = 0.0;
        opts.tolerances.bulk_rel = -1.0;
        assert!(!run(8, &opts).passed);
        assert!(run(7, &opts).passed);
    }
}
