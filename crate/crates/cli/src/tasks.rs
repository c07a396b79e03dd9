//! The six tasks. Each computes everything in memory and returns the
//! artifacts; nothing touches the disk here.

use nalgebra::DMatrix;
use openham::acceptance::{self, SuiteOptions, CRITERIA};
use openham::covariance::{
    gibbs_diagnostics, stationary_cov, stationary_cov_time_with, CovarianceResult, Engine,
    GibbsDiagnostics,
};
use openham::io::{matrix_csv, matrix_rows, table_csv, NoiseSpec};
use openham::linalg::rel_frobenius;
use openham::model::{build_drift, perturb};
use openham::noise::NoiseKind;
use openham::reachability::{
    self, det_criterion, det_criterion_nonzero, invariance_defect, spectral_check, SpectralVerdict,
};
use openham::simulate::{self, default_burn_in, InitialCondition, Scheme};
use openham::thermo::{
    bulk_covariance, bulk_invariance_residual, default_eta, growing_graph_experiment, remainder,
    ChainOperator,
};
use openham::{Drift, EngineOptions, Model};
use serde_json::{json, Map, Value};

use crate::config::{InitialSpec, Plan, SchemeSpec, Task};
use crate::CliError;

/// In-memory outputs of a task.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub payload: Map<String, Value>,
    pub csv: Vec<(String, String)>,
    /// `false` only when `validate` saw a failing criterion.
    pub passed: bool,
    /// Lines for the terminal.
    pub summary: Vec<String>,
}

impl Artifacts {
    fn new() -> Self {
        Self {
            passed: true,
            ..Self::default()
        }
    }

    fn put(&mut self, key: &str, value: Value) {
        self.payload.insert(key.into(), value);
    }

    fn csv(&mut self, name: impl Into<String>, body: String) {
        self.csv.push((name.into(), body));
    }
}

trait Op<T> {
    fn op(self, operation: &'static str) -> Result<T, CliError>;
}

impl<T> Op<T> for openham::Result<T> {
    fn op(self, operation: &'static str) -> Result<T, CliError> {
        self.map_err(|e| CliError::compute(operation, e))
    }
}

pub fn run(plan: &Plan) -> Result<Artifacts, CliError> {
    match plan.task {
        Task::Analyze => analyze(plan),
        Task::Covariance => covariance(plan),
        Task::Simulate => simulate(plan),
        Task::Thermo => thermo(plan),
        Task::GibbsTest => gibbs_test(plan),
        Task::Validate => validate(plan),
    }
}

fn engine_options(plan: &Plan) -> EngineOptions {
    let mut opts = EngineOptions::default();
    opts.quadrature.parallel = plan.parallel();
    opts
}

fn model_json(model: &Model) -> Value {
    json!({
        "n": model.n(),
        "m": model.boundary_size(),
        "alpha": model.alpha(),
        "gamma": model.gamma(),
        "norm_inf": model.norm_inf(),
        "min_eigenvalue": model.min_eigenvalue(),
    })
}

fn covariance_json(r: &CovarianceResult<f64>) -> Value {
    json!({
        "engine": r.engine,
        "lag": r.lag,
        "c_qq": matrix_rows(&r.c_qq),
        "c_qp": matrix_rows(&r.c_qp),
        "c_pq": matrix_rows(&r.c_pq),
        "c_pp": matrix_rows(&r.c_pp),
        "quadrature": {
            "error_estimate": r.meta.error_estimate,
            "evaluations": r.meta.evaluations,
            "panels": r.meta.panels,
            "converged": r.meta.converged,
            "truncation": r.meta.truncation,
        },
    })
}

fn block_csvs(art: &mut Artifacts, prefix: &str, r: &CovarianceResult<f64>) {
    for (block, m) in [
        ("c_qq", &r.c_qq),
        ("c_qp", &r.c_qp),
        ("c_pq", &r.c_pq),
        ("c_pp", &r.c_pp),
    ] {
        art.csv(format!("{prefix}_{block}.csv"), matrix_csv(m));
    }
}

fn gibbs_json(g: &GibbsDiagnostics<f64>) -> Value {
    json!({
        "verdict": g.verdict,
        "beta_fit": g.beta_fit,
        "gibbs_residual": g.gibbs_residual,
        "max_qp": g.max_qp,
        "max_offdiag_pp": g.max_offdiag_pp,
    })
}

fn drift(plan: &Plan) -> Result<Drift, CliError> {
    build_drift(plan.model()).op("model::build_drift")
}

fn run_engines(plan: &Plan, drift: &Drift) -> Result<Vec<CovarianceResult<f64>>, CliError> {
    let opts = engine_options(plan);
    plan.engines
        .iter()
        .map(|&e| {
            stationary_cov(plan.model(), drift, plan.noise(), e, &opts)
                .op("covariance::stationary_cov")
        })
        .collect()
}

fn agreement_json(results: &[CovarianceResult<f64>]) -> Value {
    let full: Vec<DMatrix<f64>> = results.iter().map(CovarianceResult::full).collect();
    let mut pairs = Vec::new();
    let mut worst = 0.0f64;
    for a in 0..full.len() {
        for b in (a + 1)..full.len() {
            let rel = rel_frobenius(&full[a], &full[b]);
            worst = worst.max(rel);
            pairs.push(json!({
                "engines": [results[a].engine, results[b].engine],
                "relative_frobenius": rel,
            }));
        }
    }
    json!({ "pairs": pairs, "max_relative_frobenius": worst })
}

fn analyze(plan: &Plan) -> Result<Artifacts, CliError> {
    let model = plan.model();
    let mut art = Artifacts::new();
    let (drift, report) = reachability::analyze(model).op("reachability::analyze")?;
    let verdict = spectral_check(&drift, &report).op("reachability::spectral_check")?;
    art.put("model", model_json(model));
    art.put(
        "subspace",
        json!({
            "dim_lV": report.dim_lv,
            "dim_L0": report.dim_l0,
            "krylov_rank_tolerance": report.krylov_rank_tolerance,
            "spectral_abscissa": report.spectral_abscissa,
            "invariance_defect": invariance_defect(&drift, &report),
            "basis_lV": matrix_rows(&report.basis_lv),
        }),
    );
    art.put(
        "spectrum",
        match verdict {
            SpectralVerdict::Dissipative {
                abscissa,
                decay_rate,
            } => json!({
                "verdict": "dissipative", "abscissa": abscissa, "decay_rate": decay_rate,
            }),
            SpectralVerdict::MixedSpectrum {
                abscissa,
                undamped_eigenvalues,
            } => json!({
                "verdict": "mixed_spectrum", "abscissa": abscissa,
                "undamped_eigenvalues": undamped_eigenvalues,
            }),
        },
    );
    if model.boundary_size() == 1 {
        let det = det_criterion(model).op("reachability::det_criterion")?;
        let nonzero = det_criterion_nonzero(model).op("reachability::det_criterion")?;
        art.put(
            "det_criterion",
            json!({ "value": det, "nonzero": nonzero, "agrees_with_rank": nonzero == (report.dim_l0 == 0) }),
        );
    }
    let eig: Vec<Vec<String>> = drift
        .eigenvalues()
        .iter()
        .map(|z| vec![format!("{:?}", z.re), format!("{:?}", z.im)])
        .collect();
    art.csv("eigenvalues.csv", table_csv(&["re", "im"], &eig));

    if let Some(p) = plan
        .config
        .analyze
        .as_ref()
        .and_then(|a| a.perturbation.as_ref())
    {
        let mut rows = Vec::new();
        let (mut dissipative, mut agree) = (0, 0);
        for trial in 0..p.trials {
            let seed = plan.config.seed.wrapping_add(trial as u64);
            let m = perturb(model, p.eps, seed).op("model::perturb")?;
            let dim_l0 = reachability::krylov_subspace(&m)
                .op("reachability::krylov_subspace")?
                .dim_l0;
            dissipative += usize::from(dim_l0 == 0);
            let det = if m.boundary_size() == 1 {
                let nz = det_criterion_nonzero(&m).op("reachability::det_criterion")?;
                agree += usize::from(nz == (dim_l0 == 0));
                nz.to_string()
            } else {
                String::new()
            };
            rows.push(vec![
                trial.to_string(),
                seed.to_string(),
                dim_l0.to_string(),
                det,
            ]);
        }
        art.csv(
            "perturbation.csv",
            table_csv(&["trial", "seed", "dim_L0", "det_nonzero"], &rows),
        );
        art.put(
            "perturbation",
            json!({
                "eps": p.eps, "trials": p.trials, "dissipative": dissipative,
                "det_agrees": (model.boundary_size() == 1).then_some(agree),
            }),
        );
        art.summary.push(format!(
            "perturbed: dim_L0 = 0 in {dissipative}/{}",
            p.trials
        ));
    }
    art.summary.insert(
        0,
        format!("dim_lV = {}, dim_L0 = {}", report.dim_lv, report.dim_l0),
    );
    Ok(art)
}

fn covariance(plan: &Plan) -> Result<Artifacts, CliError> {
    let drift = drift(plan)?;
    let results = run_engines(plan, &drift)?;
    let mut art = Artifacts::new();
    art.put("model", model_json(plan.model()));
    art.put("noise", json!(NoiseSpec::of(plan.noise())));
    for r in &results {
        block_csvs(&mut art, r.engine.name(), r);
        art.summary.push(format!(
            "{:<12} max|C_qp| = {:.3e}, max|C_pp| = {:.6e}",
            r.engine.name(),
            r.max_qp(),
            r.max_pp()
        ));
    }
    art.put(
        "results",
        Value::Array(results.iter().map(covariance_json).collect()),
    );
    if results.len() > 1 {
        let agreement = agreement_json(&results);
        art.summary.push(format!(
            "engine agreement: max relative difference {:.2e}",
            agreement["max_relative_frobenius"]
                .as_f64()
                .unwrap_or(f64::NAN)
        ));
        art.put("agreement", agreement);
    }
    let gibbs = gibbs_diagnostics(&results[0], plan.model());
    art.summary.push(format!(
        "Gibbs verdict ({}): {:?}",
        results[0].engine.name(),
        gibbs.verdict
    ));
    art.put("gibbs", gibbs_json(&gibbs));

    // File indices follow the configured lag list; zero lag is the result above.
    let lags: Vec<(usize, f64)> = plan
        .config
        .lags
        .iter()
        .copied()
        .enumerate()
        .filter(|&(_, s)| s != 0.0)
        .collect();
    if !lags.is_empty() {
        let opts = engine_options(plan);
        let mut lagged = Vec::new();
        for &(k, s) in &lags {
            let r = stationary_cov_time_with(&drift, plan.noise(), s, &opts)
                .op("covariance::lagged_cov")?;
            art.csv(format!("lag{k}_full.csv"), matrix_csv(&r.full()));
            lagged.push(covariance_json(&r));
        }
        art.put("lagged", Value::Array(lagged));
    }
    Ok(art)
}

fn gibbs_test(plan: &Plan) -> Result<Artifacts, CliError> {
    let drift = drift(plan)?;
    let results = run_engines(plan, &drift)?;
    let model = plan.model();
    let mut art = Artifacts::new();
    let predicted = match *plan.noise().kind() {
        NoiseKind::White { sigma2 } => Some(2.0 * model.alpha() / sigma2),
        _ => None,
    };
    let mut rows = Vec::new();
    for r in &results {
        let g = gibbs_diagnostics(r, model);
        let mut entry = gibbs_json(&g);
        entry["engine"] = json!(r.engine);
        if let (Some(p), Some(fit)) = (predicted, g.beta_fit) {
            entry["beta_relative_error"] = json!((fit - p).abs() / p);
        }
        art.summary.push(format!(
            "{:<12} {:?}: residual {:.2e}, beta fit {}",
            r.engine.name(),
            g.verdict,
            g.gibbs_residual,
            g.beta_fit.map_or("none".into(), |b| format!("{b:.6}"))
        ));
        art.csv(format!("{}_c_pp.csv", r.engine.name()), matrix_csv(&r.c_pp));
        rows.push(entry);
    }
    let verdict = gibbs_diagnostics(&results[0], model).verdict;
    art.put("model", model_json(model));
    art.put("noise", json!(NoiseSpec::of(plan.noise())));
    art.put("predicted_beta", json!(predicted));
    art.put("verdict", json!(verdict));
    art.put("engines", Value::Array(rows));
    Ok(art)
}

fn simulate(plan: &Plan) -> Result<Artifacts, CliError> {
    let spec = plan.config.simulation.as_ref().expect("validated");
    let drift = drift(plan)?;
    let noise = plan.noise();
    let burn = spec
        .burn_in
        .unwrap_or_else(|| default_burn_in(&drift, spec.horizon));
    let mut cfg = openham::SimulationConfig::new(
        spec.step,
        spec.horizon + burn,
        spec.ensemble,
        plan.config.seed,
    );
    cfg.burn_in = Some(burn);
    cfg.scheme = match spec.scheme {
        SchemeSpec::Exact => Scheme::ExactDiscretization,
        SchemeSpec::EulerMaruyama => Scheme::EulerMaruyama,
    };
    cfg.initial = match (spec.initial, noise.kind()) {
        (InitialSpec::Zero, _) => InitialCondition::Zero,
        (InitialSpec::Gibbs, NoiseKind::White { sigma2 }) => InitialCondition::Gibbs {
            beta: 2.0 * drift.alpha() / sigma2,
        },
        (InitialSpec::Gibbs, _) => {
            return Err(CliError::config(
                "config::validate",
                "a Gibbs initial condition needs white noise",
            ))
        }
    };
    cfg.lags = spec.lags.clone();
    cfg.batches_per_member = spec.batches_per_member;
    cfg.parallel = plan.parallel();
    let stats = simulate::simulate(&drift, noise, &cfg).op("simulate::simulate")?;

    let reference = match noise.kind() {
        NoiseKind::White { .. } | NoiseKind::OrnsteinUhlenbeck { .. } => {
            let engine = if noise.is_white() {
                Engine::Lyapunov
            } else {
                Engine::QBlock
            };
            let r = stationary_cov(plan.model(), &drift, noise, engine, &engine_options(plan))
                .op("covariance::stationary_cov")?;
            Some(r.full())
        }
        _ => None,
    };

    let mut art = Artifacts::new();
    art.put("model", model_json(plan.model()));
    art.put("noise", json!(NoiseSpec::of(noise)));
    art.put(
        "simulation",
        json!({
            "step": spec.step, "window": spec.horizon, "burn_in": burn, "ensemble": spec.ensemble,
            "seed": plan.config.seed, "batches": stats.batches, "samples": stats.samples,
        }),
    );
    art.put("mean", json!(stats.mean.iter().collect::<Vec<_>>()));
    art.put("covariance", json!(matrix_rows(&stats.covariance)));
    art.put(
        "standard_errors",
        json!(matrix_rows(&stats.standard_errors)),
    );
    art.csv("covariance.csv", matrix_csv(&stats.covariance));
    art.csv("standard_errors.csv", matrix_csv(&stats.standard_errors));
    let lagged: Vec<Value> = stats
        .lags()
        .iter()
        .zip(&stats.lagged)
        .zip(&stats.lagged_standard_errors)
        .enumerate()
        .map(|(k, ((lag, c), se))| {
            art.csv(format!("lag{k}_covariance.csv"), matrix_csv(c));
            art.csv(format!("lag{k}_standard_errors.csv"), matrix_csv(se));
            json!({ "lag": lag, "covariance": matrix_rows(c), "standard_errors": matrix_rows(se) })
        })
        .collect();
    art.put("lagged", Value::Array(lagged));
    if let Some(f) = &stats.forcing {
        let rows: Vec<Vec<String>> = (0..f.lags.len())
            .map(|k| {
                vec![
                    format!("{:?}", f.lags[k]),
                    format!("{:?}", f.autocovariance[k]),
                    format!("{:?}", f.standard_errors[k]),
                ]
            })
            .collect();
        art.csv(
            "forcing.csv",
            table_csv(&["lag", "autocovariance", "standard_error"], &rows),
        );
    }
    if let Some(reference) = reference {
        let z = stats.max_z_score(&reference);
        art.put("analytic", json!(matrix_rows(&reference)));
        art.put("max_z_score", json!(z));
        art.summary
            .push(format!("max |estimate - analytic| / SE = {z:.3}"));
    }
    if let Some(stride) = spec.path_stride {
        if let NoiseKind::White { sigma2 } = *noise.kind() {
            let path =
                simulate::white_path(&drift, sigma2, &cfg, 0, stride).op("simulate::white_path")?;
            art.csv("path.csv", matrix_csv(&path.transpose()));
        }
    }
    art.summary.insert(
        0,
        format!(
            "{} members, {} batches, {} samples",
            spec.ensemble, stats.batches, stats.samples
        ),
    );
    Ok(art)
}

fn thermo(plan: &Plan) -> Result<Artifacts, CliError> {
    let model = plan.model();
    let noise = plan.noise();
    let drift = drift(plan)?;
    let engine = plan.engines[0];
    let cov = stationary_cov(model, &drift, noise, engine, &engine_options(plan))
        .op("covariance::stationary_cov")?;
    let bulk = bulk_covariance(model, noise).op("thermo::bulk_covariance")?;
    let residual = bulk_invariance_residual(model, &bulk).op("thermo::bulk_invariance_residual")?;
    let mut art = Artifacts::new();
    art.put("model", model_json(model));
    art.put("noise", json!(NoiseSpec::of(noise)));
    art.put("engine", json!(engine));
    art.put(
        "bulk",
        json!({ "c_qq": matrix_rows(&bulk.c_qq), "c_pp": matrix_rows(&bulk.c_pp), "invariance_residual": residual }),
    );
    art.csv("bulk_c_qq.csv", matrix_csv(&bulk.c_qq));
    art.csv("bulk_c_pp.csv", matrix_csv(&bulk.c_pp));
    art.summary
        .push(format!("bulk invariance residual {residual:.2e}"));

    let thermo = plan.config.thermo.clone().unwrap_or_default();
    let etas = if thermo.eta.is_empty() {
        vec![default_eta(model)]
    } else {
        thermo.eta
    };
    let mut reports = Vec::new();
    for (k, &eta) in etas.iter().enumerate() {
        let r = remainder(model, noise, &cov, eta).op("thermo::remainder")?;
        if k == 0 {
            art.csv("y_pp.csv", matrix_csv(&r.y_pp));
            art.csv("y_qq.csv", matrix_csv(&r.y_qq));
        }
        let profile: Vec<Vec<String>> = r
            .decay_profile()
            .iter()
            .map(|(d, y)| vec![d.to_string(), format!("{y:?}")])
            .collect();
        art.csv(
            format!("decay_eta{k}.csv"),
            table_csv(&["distance", "max_abs_y_pp"], &profile),
        );
        art.summary.push(format!(
            "eta {eta}: max interior |Y_pp| {:.3e}, bound {}",
            r.max_interior_y_pp,
            r.bound_pp.map_or("n/a".into(), |b| format!("{b:.3e}"))
        ));
        reports.push(json!({
            "eta": eta,
            "interior_pairs": r.pairs.len(),
            "max_interior_y_pp": r.max_interior_y_pp,
            "max_interior_y_qq": r.max_interior_y_qq,
            "bound_pp": r.bound_pp,
            "bound_qq": r.bound_qq,
            "within_bound": r.within_bound(),
            "power_law_exponent": r.power_law_exponent(),
            "constants": r.constants.map(|c| json!({
                "b": c.b, "B": c.big_b, "alpha": c.alpha, "gamma": c.gamma, "c": c.c, "c1": c.c1,
                "max_abs_cf": c.max_cf, "K": c.k, "K0_pp": c.k0_pp, "K0_qq": c.k0_qq,
            })),
        }));
    }
    art.put("remainder", Value::Array(reports));

    if let Some(g) = &thermo.growing {
        let op = ChainOperator {
            onsite: g.onsite,
            bond: g.bond,
        };
        let table = growing_graph_experiment(&op, &g.half_widths, noise, g.target, g.alpha)
            .op("thermo::growing_graph_experiment")?;
        let rows: Vec<Vec<String>> = table
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.half_width.to_string(),
                    r.size.to_string(),
                    format!("{:?}", r.value),
                    format!("{:?}", r.bulk_value),
                    format!("{:?}", r.shift),
                    r.difference.map_or(String::new(), |d| format!("{d:?}")),
                ]
            })
            .collect();
        art.csv(
            "growing.csv",
            table_csv(
                &[
                    "half_width",
                    "size",
                    "value",
                    "bulk_value",
                    "shift",
                    "difference",
                ],
                &rows,
            ),
        );
        art.put(
            "growing",
            json!({
                "target": [table.target.0, table.target.1],
                "sizes": table.rows.iter().map(|r| r.size).collect::<Vec<_>>(),
                "values": table.rows.iter().map(|r| r.value).collect::<Vec<_>>(),
                "differences_decreasing": table.differences_decreasing,
                "final_value": table.final_value,
                "final_sign": format!("{:?}", table.final_sign).to_lowercase(),
                "expected_sign": format!("{:?}", table.expected_sign).to_lowercase(),
                "sign_matches": table.sign_matches(),
            }),
        );
        art.summary.push(format!(
            "growing graph: final {:.6e} ({:?}), decreasing differences: {}",
            table.final_value, table.final_sign, table.differences_decreasing
        ));
    }
    Ok(art)
}

fn validate(plan: &Plan) -> Result<Artifacts, CliError> {
    let spec = plan.config.validate.clone().unwrap_or_default();
    let opts = SuiteOptions {
        tolerances: spec.tolerances,
        seed: plan.config.seed,
        parallel: plan.parallel(),
    };
    let ids: Vec<u8> = if spec.criteria.is_empty() {
        CRITERIA.iter().map(|c| c.0).collect()
    } else {
        spec.criteria.clone()
    };
    let mut art = Artifacts::new();
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for id in ids {
        let r = acceptance::run(id, &opts);
        art.passed &= r.passed;
        art.summary.push(r.line());
        eprintln!("criterion {} finished in {:.1}s", r.id, r.seconds);
        records.push(vec![
            r.id.to_string(),
            r.name.to_string(),
            r.passed.to_string(),
        ]);
        rows.push(json!({ "id": r.id, "name": r.name, "passed": r.passed, "detail": r.detail }));
    }
    art.csv(
        "validate.csv",
        table_csv(&["criterion", "name", "passed"], &records),
    );
    art.put("criteria", Value::Array(rows));
    art.put("all_passed", json!(art.passed));
    Ok(art)
}
