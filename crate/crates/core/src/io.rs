//! JSON and CSV representations of models, noise and matrices.
//!
//! Floats are written in the shortest form that parses back to the same
//! bits, so every document round-trips exactly.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{build_model, HamiltonianModel, InteractionGraph};
use crate::noise::{make_bandlimited, make_gaussian, make_ou, make_white, NoiseKind, NoiseModel};
use crate::scalar::{lit, to_f64, Real};

pub const MODEL_FORMAT: &str = "openham-model/1";

/// On-disk form of a [`HamiltonianModel`]. `v` is dense row-major and
/// `edges` lists each non-loop edge once with `i < j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub format: String,
    pub n: usize,
    pub m: usize,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<usize>,
    pub edges: Vec<(usize, usize)>,
    pub v: Vec<f64>,
}

impl ModelDocument {
    pub fn from_model<T: Real>(model: &HamiltonianModel<T>) -> Self {
        let n = model.n();
        let v = model.v();
        Self {
            format: MODEL_FORMAT.into(),
            n,
            m: model.boundary_size(),
            alpha: to_f64(model.alpha()),
            gamma: model.gamma(),
            edges: model
                .graph()
                .edges()
                .into_iter()
                .filter(|(i, j)| i != j)
                .collect(),
            v: (0..n)
                .flat_map(|i| (0..n).map(move |j| to_f64(v[(i, j)])))
                .collect(),
        }
    }

    pub fn to_model<T: Real>(&self) -> Result<HamiltonianModel<T>> {
        if self.format != MODEL_FORMAT {
            return Err(Error::Serialization(format!(
                "unsupported model format {:?}, expected {MODEL_FORMAT:?}",
                self.format
            )));
        }
        if self.v.len() != self.n * self.n {
            return Err(Error::Serialization(format!(
                "v has {} entries, expected {}",
                self.v.len(),
                self.n * self.n
            )));
        }
        let v = DMatrix::from_row_iterator(self.n, self.n, self.v.iter().map(|&x| lit::<T>(x)));
        let graph = InteractionGraph::new(self.n, self.edges.iter().copied())?;
        let model = build_model(v, graph, self.m, lit(self.alpha))?;
        match self.gamma {
            Some(g) => model.with_locality(g),
            None => Ok(model),
        }
    }
}

pub fn model_to_json<T: Real>(model: &HamiltonianModel<T>) -> String {
    serde_json::to_string_pretty(&ModelDocument::from_model(model))
        .expect("model document serializes")
}

pub fn model_from_json<T: Real>(text: &str) -> Result<HamiltonianModel<T>> {
    let doc: ModelDocument =
        serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))?;
    doc.to_model()
}

pub fn read_model<T: Real>(path: &Path) -> Result<HamiltonianModel<T>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Serialization(format!("{}: {e}", path.display())))?;
    model_from_json(&text)
}

/// Noise as written in configs: a `kind` tag plus parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    White {
        sigma2: f64,
    },
    #[serde(alias = "ornstein_uhlenbeck")]
    Ou {
        c: f64,
        mu: f64,
    },
    #[serde(alias = "gaussian_cov")]
    Gaussian {
        c: f64,
        tau_c: f64,
    },
    BandLimited {
        b: f64,
        amplitude: f64,
    },
}

impl NoiseSpec {
    pub fn build<T: Real>(&self) -> Result<NoiseModel<T>> {
        match *self {
            NoiseSpec::White { sigma2 } => make_white(lit(sigma2)),
            NoiseSpec::Ou { c, mu } => make_ou(lit(c), lit(mu)),
            NoiseSpec::Gaussian { c, tau_c } => make_gaussian(lit(c), lit(tau_c)),
            NoiseSpec::BandLimited { b, amplitude } => make_bandlimited(lit(b), lit(amplitude)),
        }
    }

    pub fn of<T: Real>(noise: &NoiseModel<T>) -> Self {
        match *noise.kind() {
            NoiseKind::White { sigma2 } => NoiseSpec::White {
                sigma2: to_f64(sigma2),
            },
            NoiseKind::OrnsteinUhlenbeck { c, mu } => NoiseSpec::Ou {
                c: to_f64(c),
                mu: to_f64(mu),
            },
            NoiseKind::GaussianCov { c, tau_c } => NoiseSpec::Gaussian {
                c: to_f64(c),
                tau_c: to_f64(tau_c),
            },
            NoiseKind::BandLimited { b, amplitude } => NoiseSpec::BandLimited {
                b: to_f64(b),
                amplitude: to_f64(amplitude),
            },
        }
    }
}

/// Row-major nested vectors, the JSON layout of every matrix we emit.
pub fn matrix_rows<T: Real>(m: &DMatrix<T>) -> Vec<Vec<f64>> {
    m.row_iter()
        .map(|r| r.iter().map(|&x| to_f64(x)).collect())
        .collect()
}

pub fn matrix_from_rows<T: Real>(rows: &[Vec<f64>]) -> Result<DMatrix<T>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Serialization("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| lit(rows[i][j])))
}

/// Headerless CSV, one matrix row per line.
pub fn matrix_csv<T: Real>(m: &DMatrix<T>) -> String {
    let mut out = String::new();
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|&x| format!("{:?}", to_f64(x))).collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}

/// CSV with a header line; every record must have `header.len()` cells.
pub fn table_csv(header: &[&str], records: &[Vec<String>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in records {
        debug_assert_eq!(r.len(), header.len());
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::random_model;

    #[test]
    fn model_round_trip_is_bit_exact() {
        for seed in 0..5 {
            let model = random_model::<f64>(5, 2, 0.7 + seed as f64 / 3.0, seed).unwrap();
            let text = model_to_json(&model);
            let back: HamiltonianModel<f64> = model_from_json(&text).unwrap();
            assert_eq!(back, model);
            assert_eq!(model_to_json(&back), text);
        }
    }

    #[test]
    fn locality_survives_round_trip() {
        let model = random_model::<f64>(4, 1, 1.0, 3)
            .unwrap()
            .with_locality(3)
            .unwrap();
        let back: HamiltonianModel<f64> = model_from_json(&model_to_json(&model)).unwrap();
        assert_eq!(back.gamma(), Some(3));
    }

    #[test]
    fn rejects_bad_documents() {
        let model = random_model::<f64>(3, 1, 1.0, 1).unwrap();
        let mut doc = ModelDocument::from_model(&model);
        doc.format = "other/2".into();
        assert!(matches!(
            doc.to_model::<f64>(),
            Err(Error::Serialization(_))
        ));
        let mut doc = ModelDocument::from_model(&model);
        doc.v.pop();
        assert!(matches!(
            doc.to_model::<f64>(),
            Err(Error::Serialization(_))
        ));
        assert!(model_from_json::<f64>("{\"n\": 2}").is_err());
    }

    #[test]
    fn noise_spec_tags() {
        let spec: NoiseSpec =
            serde_json::from_str(r#"{"kind": "ou", "c": 1.0, "mu": 2.0}"#).unwrap();
        assert_eq!(spec, NoiseSpec::Ou { c: 1.0, mu: 2.0 });
        let noise = spec.build::<f64>().unwrap();
        assert_eq!(NoiseSpec::of(&noise), spec);
        let band: NoiseSpec =
            serde_json::from_str(r#"{"kind": "band_limited", "b": 2, "amplitude": 1}"#).unwrap();
        assert!(band.build::<f64>().unwrap().support_bound().is_some());
        assert!(serde_json::from_str::<NoiseSpec>(r#"{"kind": "pink"}"#).is_err());
        assert!(NoiseSpec::White { sigma2: -1.0 }.build::<f64>().is_err());
    }

    #[test]
    fn csv_round_trips_floats() {
        let m = DMatrix::from_row_slice(2, 2, &[0.1, -1e-300, 1.0 / 3.0, 5.0]);
        let csv = matrix_csv(&m);
        let parsed: Vec<f64> = csv
            .lines()
            .flat_map(|l| {
                l.split(',')
                    .map(|c| c.parse::<f64>().unwrap())
                    .collect::<Vec<_>>()
            })
            .collect();
        assert_eq!(parsed, vec![0.1, -1e-300, 1.0 / 3.0, 5.0]);
        let rows = matrix_rows(&m);
        assert_eq!(matrix_from_rows::<f64>(&rows).unwrap(), m);
    }
}
