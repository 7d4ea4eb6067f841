//! Result files: every number is tagged with where it came from.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use pcsft::montecarlo::McEstimate;
use serde::Serialize;

use crate::config::ExperimentConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    /// Deterministic computation (closed form, linear algebra or a fixed-step integrator).
    Exact,
    /// Monte Carlo estimate; `n_samples` and `standard_error` are set.
    Mc,
    /// Independent textbook formula used as the reference.
    ReferenceOracle,
}

#[derive(Clone, Debug, Serialize)]
pub struct Quantity {
    pub name: String,
    pub value: f64,
    pub provenance: Provenance,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub standard_error: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckKind {
    /// Failing makes the run fail.
    Check,
    /// Reported only.
    Target,
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub kind: CheckKind,
    pub passed: bool,
    pub criterion: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Results {
    pub experiment: String,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub values: Vec<Quantity>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub labels: BTreeMap<String, String>,
}

impl Results {
    pub fn new(experiment: &str) -> Self {
        Results {
            experiment: experiment.to_string(),
            passed: true,
            checks: Vec::new(),
            values: Vec::new(),
            labels: BTreeMap::new(),
        }
    }

    pub fn exact(&mut self, name: impl Into<String>, value: f64) {
        self.push(name, value, Provenance::Exact, None, None);
    }

    pub fn oracle(&mut self, name: impl Into<String>, value: f64) {
        self.push(name, value, Provenance::ReferenceOracle, None, None);
    }

    pub fn mc(&mut self, name: impl Into<String>, value: f64, n_samples: u64, standard_error: f64) {
        self.push(name, value, Provenance::Mc, Some(n_samples), Some(standard_error));
    }

    pub fn estimate(&mut self, name: impl Into<String>, est: &McEstimate) {
        self.mc(name, est.mean, est.n_samples, est.standard_error);
    }

    fn push(&mut self, name: impl Into<String>, value: f64, provenance: Provenance, n: Option<u64>, se: Option<f64>) {
        self.values.push(Quantity { name: name.into(), value, provenance, n_samples: n, standard_error: se });
    }

    pub fn check(&mut self, name: impl Into<String>, passed: bool, criterion: impl Into<String>) {
        self.passed &= passed;
        self.checks.push(Check { name: name.into(), kind: CheckKind::Check, passed, criterion: criterion.into() });
    }

    pub fn target(&mut self, name: impl Into<String>, reached: bool, criterion: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            kind: CheckKind::Target,
            passed: reached,
            criterion: criterion.into(),
        });
    }

    pub fn label(&mut self, name: impl Into<String>, value: impl Into<String>) {
        self.labels.insert(name.into(), value.into());
    }
}

/// Files produced by one run, besides `results.json` and `manifest.json`.
#[derive(Default)]
pub struct Artifacts {
    pub files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    experiment: String,
    seed: u64,
    config: &'a ExperimentConfig,
    artifacts: Vec<String>,
}

fn to_json<T: Serialize>(value: &T) -> io::Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(io::Error::other)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Writes every artifact, then `results.json` and `manifest.json`, into `dir`.
pub fn write_all(dir: &Path, config: &ExperimentConfig, results: &Results, artifacts: &Artifacts) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    for (name, bytes) in &artifacts.files {
        fs::write(dir.join(name), bytes)?;
    }
    fs::write(dir.join("results.json"), to_json(results)?)?;
    let mut names: Vec<String> = artifacts.files.iter().map(|(n, _)| n.clone()).collect();
    names.push("results.json".into());
    names.sort();
    let manifest = Manifest {
        tool: "pcsft",
        version: env!("CARGO_PKG_VERSION"),
        experiment: config.kind.to_string(),
        seed: config.seed,
        config,
        artifacts: names,
    };
    fs::write(dir.join("manifest.json"), to_json(&manifest)?)
}
