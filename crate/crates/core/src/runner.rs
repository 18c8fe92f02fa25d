//! Experiment orchestration: configuration, data generation, parallel chains
//! and output files.
//!
//! An experiment is one JSON document:
//!
//! ```json
//! {
//!   "output_dir": "out/groundwater",
//!   "baseline": "pCN",
//!   "prior": { "kind": "cosine_2d", "alpha": 0.0, "sigma2": 1.0, "s": 1.1, "cap": 10 },
//!   "model": { "kind": "groundwater", "mesh": 20, "data_mesh": 40,
//!              "stations": 33, "sigma_y2": 1e-4, "data_seed": 2017 },
//!   "chains": [
//!     { "algorithm": "pcn", "step": 0.02, "iterations": 11000, "burn_in": 1000,
//!       "seed": 1, "adapt": {} },
//!     { "algorithm": "mhmc", "step": 0.5, "max_leapfrog": 4, "block": { "square": 5 },
//!       "iterations": 11000, "burn_in": 1000, "seed": 7 }
//!   ]
//! }
//! ```
//!
//! `run` writes into the output directory:
//!
//! * `manifest.json`: the resolved configuration together with stations,
//!   truth, data and per-chain blocks. It is itself a valid input to `run`.
//! * `traces/<NN>_<slug>.csv`: one row per iteration, no timing.
//! * `samples/<NN>_<slug>.csv`: post-burn-in states, if `dump_samples` is set.
//! * `stats/<NN>_<slug>.json`: per-coordinate ESS, counts and timing.
//! * `summary.csv` and `summary.json`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{self, ChainRecord, ChainStats, DiagnosticsError, SummaryRow};
use crate::geometry::BlockSpec;
use crate::model::{
    circle_stations, generate_data, truth_coefficients, ForwardModel, GaussianNoise,
    GroundwaterModel, GroundwaterSolver, LinearGaussianModel, Mesh, ModelError, SyntheticData,
};
use crate::prior::{Basis, Hyper, KLPrior, PriorError};
use crate::samplers::{run_chain, Algorithm, ChainOptions, InitialState, SamplerConfig, StepAdapter, StepFailure};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("{key}: {message}")]
    Config { key: String, message: String },
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("data generation failed: {0}")]
    Data(ModelError),
    #[error("chain {label:?} could not start: {source}")]
    Chain { label: String, source: StepFailure },
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("thread pool: {0}")]
    Pool(String),
}

fn config_error(key: impl Into<String>, message: impl Into<String>) -> RunnerError {
    RunnerError::Config {
        key: key.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum PriorSpec {
    /// Cosine modes on the unit square, `cap` per axis.
    #[serde(rename = "cosine_2d")]
    Cosine2d(SquarePrior),
    #[serde(rename = "cosine_1d")]
    Cosine1d(IntervalPrior),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SquarePrior {
    pub alpha: f64,
    pub sigma2: f64,
    pub s: f64,
    pub cap: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntervalPrior {
    pub alpha: f64,
    pub sigma2: f64,
    pub s: f64,
    pub cap: usize,
    #[serde(default = "unit_interval")]
    pub domain: (f64, f64),
}

fn unit_interval() -> (f64, f64) {
    (0.0, 1.0)
}

impl PriorSpec {
    pub fn build(&self) -> Result<KLPrior, PriorError> {
        match *self {
            PriorSpec::Cosine2d(SquarePrior { alpha, sigma2, s, cap }) => {
                KLPrior::unit_square(Hyper { alpha, sigma2, s }, cap)
            }
            PriorSpec::Cosine1d(IntervalPrior {
                alpha,
                sigma2,
                s,
                cap,
                domain,
            }) => KLPrior::cosine_1d(Hyper { alpha, sigma2, s }, cap, domain),
        }
    }

    /// Config key most likely responsible for `err`.
    fn key_for(err: &PriorError) -> &'static str {
        match err {
            PriorError::NonPositiveScale(_) => "prior.sigma2",
            PriorError::NegativeShift(_) | PriorError::SingularZeroMode => "prior.alpha",
            PriorError::NotTraceClass { .. } => "prior.s",
            PriorError::EmptyCap => "prior.cap",
            PriorError::EmptyDomain(..) => "prior.domain",
            _ => "prior",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    LinearGaussian(LinearSpec),
    Groundwater(GroundwaterSpec),
}

/// Point observations of the random field itself: `observations` midpoints
/// of a 1D domain, or that many stations on the circle in 2D. The truth is a
/// prior draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSpec {
    pub observations: usize,
    pub noise_variance: f64,
    pub data_seed: u64,
}

/// Pressure observations of the Darcy flow problem; data are generated on
/// `data_mesh` from the fixed truth field and inference runs on `mesh`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundwaterSpec {
    pub mesh: usize,
    pub data_mesh: usize,
    #[serde(default = "default_stations")]
    pub stations: usize,
    pub sigma_y2: f64,
    pub data_seed: u64,
}

fn default_stations() -> usize {
    33
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptSpec {
    #[serde(default = "default_target")]
    pub target: f64,
    #[serde(default = "default_floor")]
    pub floor: f64,
    /// Defaults to 4 for `h` (pCN, MALA family) and 2 for `ε` (HMC family),
    /// the value matching `h = 4` under `ε = √h`.
    #[serde(default)]
    pub ceiling: Option<f64>,
}

fn default_target() -> f64 {
    StepAdapter::DEFAULT_TARGET
}

fn default_floor() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    /// Reporting name; defaults to the algorithm label.
    #[serde(default)]
    pub label: Option<String>,
    pub algorithm: Algorithm,
    pub step: f64,
    #[serde(default = "one")]
    pub max_leapfrog: usize,
    #[serde(default = "no_block")]
    pub block: BlockSpec,
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    #[serde(default)]
    pub adapt: Option<AdaptSpec>,
    #[serde(default = "zero_init")]
    pub init: InitialState,
    #[serde(default)]
    pub dump_samples: bool,
}

fn one() -> usize {
    1
}

fn no_block() -> BlockSpec {
    BlockSpec::None
}

fn zero_init() -> InitialState {
    InitialState::Zero
}

impl ChainSpec {
    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            algorithm: self.algorithm,
            step: self.step,
            max_leapfrog: self.max_leapfrog,
            block: self.block,
        }
    }

    pub fn label(&self, prior: &KLPrior) -> String {
        self.label.clone().unwrap_or_else(|| {
            let block = if self.algorithm.is_geometric() {
                self.block.resolve(prior).len()
            } else {
                0
            };
            self.algorithm.label(block, prior.dim())
        })
    }

    fn adapter(&self) -> Option<StepAdapter> {
        self.adapt.map(|a| {
            let ceiling = a
                .ceiling
                .unwrap_or(if self.algorithm.is_hmc_family() { 2.0 } else { 4.0 });
            StepAdapter::new(self.step, a.target, a.floor, ceiling)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    #[serde(default = "default_baseline")]
    pub baseline: String,
    pub prior: PriorSpec,
    pub model: ModelSpec,
    pub chains: Vec<ChainSpec>,
}

fn default_baseline() -> String {
    "pCN".into()
}

/// Reads a configuration, or the `config` member of a manifest.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, RunnerError> {
    let text = fs::read_to_string(path).map_err(|source| RunnerError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text).map_err(|message| RunnerError::Parse {
        path: path.to_path_buf(),
        message,
    })
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, String> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let (value, prefix) = match value.get("config") {
        Some(inner) if value.get("manifest_version").is_some() => (inner.clone(), "config."),
        _ => (value, ""),
    };
    serde_path_to_error::deserialize::<_, ExperimentConfig>(value.clone()).map_err(|e| {
        let path = e.path().to_string();
        let section = path.split('.').next().unwrap_or("");
        let detail = match section {
            "prior" | "model" => value.get(section).and_then(|v| diagnose_tagged(section, v)),
            _ => None,
        };
        match detail {
            Some(d) => format!("{prefix}{d}"),
            None if path == "." => e.inner().to_string(),
            None => format!("{prefix}{path}: {}", e.inner()),
        }
    })
}

/// Tagged sections lose the path of an error inside their body; re-parse
/// the body as the variant named by `kind` to recover it.
fn diagnose_tagged(section: &str, value: &serde_json::Value) -> Option<String> {
    let mut body = value.as_object()?.clone();
    let kind = body.remove("kind")?;
    let body = serde_json::Value::Object(body);
    fn check<T: serde::de::DeserializeOwned>(section: &str, body: serde_json::Value) -> Option<String> {
        serde_path_to_error::deserialize::<_, T>(body)
            .err()
            .map(|e| format!("{section}.{}: {}", e.path(), e.inner()))
    }
    match (section, kind.as_str()?) {
        ("prior", "cosine_2d") => check::<SquarePrior>(section, body),
        ("prior", "cosine_1d") => check::<IntervalPrior>(section, body),
        ("model", "linear_gaussian") => check::<LinearSpec>(section, body),
        ("model", "groundwater") => check::<GroundwaterSpec>(section, body),
        _ => None,
    }
}

/// Non-fatal findings of [`validate`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub warnings: Vec<String>,
    pub labels: Vec<String>,
}

/// Checks every invariant that `run` relies on without running anything.
pub fn validate(config: &ExperimentConfig) -> Result<Report, RunnerError> {
    let prior = config
        .prior
        .build()
        .map_err(|e| config_error(PriorSpec::key_for(&e), e.to_string()))?;
    let mut report = Report::default();

    match &config.model {
        ModelSpec::LinearGaussian(LinearSpec {
            observations,
            noise_variance,
            ..
        }) => {
            if *observations == 0 {
                return Err(config_error("model.observations", "must be at least 1"));
            }
            if !(*noise_variance > 0.0 && noise_variance.is_finite()) {
                return Err(config_error("model.noise_variance", "must be positive and finite"));
            }
        }
        ModelSpec::Groundwater(GroundwaterSpec {
            mesh,
            data_mesh,
            stations,
            sigma_y2,
            ..
        }) => {
            if !matches!(prior.basis(), Basis::Cosine2D { .. }) {
                return Err(config_error("prior.kind", "groundwater model needs a cosine_2d prior"));
            }
            if *mesh < 2 {
                return Err(config_error("model.mesh", "need at least 2 cells per side"));
            }
            if *data_mesh < 2 {
                return Err(config_error("model.data_mesh", "need at least 2 cells per side"));
            }
            if *data_mesh == *mesh {
                report
                    .warnings
                    .push("model.data_mesh equals model.mesh: inverse crime".into());
            }
            if *stations == 0 {
                return Err(config_error("model.stations", "must be at least 1"));
            }
            if !(*sigma_y2 > 0.0 && sigma_y2.is_finite()) {
                return Err(config_error("model.sigma_y2", "must be positive and finite"));
            }
        }
    }

    if config.chains.is_empty() {
        return Err(config_error("chains", "at least one chain is required"));
    }
    for (i, c) in config.chains.iter().enumerate() {
        let key = |field: &str| format!("chains[{i}].{field}");
        if !(c.step > 0.0 && c.step.is_finite()) {
            return Err(config_error(key("step"), "must be positive and finite"));
        }
        if !c.algorithm.is_hmc_family() && c.step > 4.0 {
            report
                .warnings
                .push(format!("{}: h > 4 gives a negative autoregression coefficient", key("step")));
        }
        if c.max_leapfrog == 0 {
            return Err(config_error(key("max_leapfrog"), "must be at least 1"));
        }
        if !c.algorithm.is_hmc_family() && c.max_leapfrog != 1 {
            report
                .warnings
                .push(format!("{} is ignored by {:?}", key("max_leapfrog"), c.algorithm));
        }
        if c.iterations <= c.burn_in {
            return Err(config_error(key("burn_in"), "must be smaller than iterations"));
        }
        if c.iterations - c.burn_in < 2 {
            return Err(config_error(key("iterations"), "need at least 2 post-burn-in iterations"));
        }
        match c.block {
            BlockSpec::Square(t) => match prior.basis() {
                Basis::Cosine2D { caps, .. } if t > caps.0.min(caps.1) => {
                    return Err(config_error(key("block"), format!("square({t}) exceeds the mode cap")));
                }
                _ => {}
            },
            BlockSpec::Leading(d) if d > prior.dim() => {
                return Err(config_error(
                    key("block"),
                    format!("leading({d}) exceeds the {} modes", prior.dim()),
                ));
            }
            _ => {}
        }
        if !c.algorithm.is_geometric() && c.block != BlockSpec::None {
            report
                .warnings
                .push(format!("{} is ignored by {:?}", key("block"), c.algorithm));
        }
        if let Some(a) = c.adapt {
            if !(a.target > 0.0 && a.target < 1.0) {
                return Err(config_error(key("adapt.target"), "must lie in (0, 1)"));
            }
            let ceiling = a.ceiling.unwrap_or(f64::INFINITY);
            if !(a.floor > 0.0 && a.floor <= ceiling) {
                return Err(config_error(key("adapt.floor"), "need 0 < floor <= ceiling"));
            }
            if c.burn_in == 0 {
                report
                    .warnings
                    .push(format!("{}: no burn-in, so no adaptation", key("adapt")));
            }
        }
        if let InitialState::Given(v) = &c.init {
            if v.len() != prior.dim() {
                return Err(config_error(
                    key("init"),
                    format!("has {} values, prior has {} modes", v.len(), prior.dim()),
                ));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(config_error(key("init"), "values must be finite"));
            }
        }
        let label = c.label(&prior);
        if report.labels.contains(&label) {
            return Err(config_error(key("label"), format!("duplicate label {label:?}")));
        }
        report.labels.push(label);
    }
    if !report.labels.contains(&config.baseline) {
        return Err(config_error(
            "baseline",
            format!("{:?} is not the label of any chain", config.baseline),
        ));
    }
    Ok(report)
}

/// The observed problem, shared read-only by all chains.
pub enum Problem {
    Linear(LinearGaussianModel),
    Groundwater(GroundwaterModel),
}

impl Problem {
    /// A model with its own solve counter.
    pub fn fresh(&self) -> Box<dyn ForwardModel> {
        match self {
            Problem::Linear(m) => Box::new(m.fresh()),
            Problem::Groundwater(m) => Box::new(m.fresh()),
        }
    }
}

/// Everything needed to re-derive the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataRecord {
    LinearGaussian {
        locations: Vec<(f64, f64)>,
        truth: Vec<f64>,
        data: Vec<f64>,
        noise_variance: f64,
    },
    Groundwater {
        inference_mesh: Mesh,
        #[serde(flatten)]
        synthetic: SyntheticData,
    },
}

fn observation_points(prior: &KLPrior, count: usize) -> Vec<(f64, f64)> {
    match prior.basis() {
        Basis::Cosine1D { domain, .. } => {
            let (a, b) = *domain;
            (0..count)
                .map(|k| (a + (b - a) * (k as f64 + 0.5) / count as f64, 0.0))
                .collect()
        }
        Basis::Cosine2D { .. } => circle_stations(count),
    }
}

/// Generates data and builds the inference model.
pub fn build_problem(config: &ExperimentConfig, prior: &KLPrior) -> Result<(Problem, DataRecord), RunnerError> {
    match config.model {
        ModelSpec::LinearGaussian(LinearSpec {
            observations,
            noise_variance,
            data_seed,
        }) => {
            let locations = observation_points(prior, observations);
            let design = prior
                .basis_matrix(&locations)
                .map_err(|e| RunnerError::Data(e.into()))?;
            let mut rng = ChaCha20Rng::seed_from_u64(data_seed);
            let truth = prior.sample(&mut rng);
            let clean = &design * &truth;
            let sd = noise_variance.sqrt();
            let data = DVector::from_fn(clean.len(), |i, _| {
                let z: f64 = rng.sample(StandardNormal);
                clean[i] + sd * z
            });
            let noise = GaussianNoise::isotropic(data.clone(), noise_variance).map_err(RunnerError::Data)?;
            let model = LinearGaussianModel::new(design, noise).map_err(RunnerError::Data)?;
            Ok((
                Problem::Linear(model),
                DataRecord::LinearGaussian {
                    locations,
                    truth: truth.iter().copied().collect(),
                    data: data.iter().copied().collect(),
                    noise_variance,
                },
            ))
        }
        ModelSpec::Groundwater(GroundwaterSpec {
            mesh,
            data_mesh,
            stations,
            sigma_y2,
            data_seed,
        }) => {
            let stations = circle_stations(stations);
            let truth = truth_coefficients(prior);
            let data_solver =
                GroundwaterSolver::new(Mesh::square(data_mesh), prior, &stations).map_err(RunnerError::Data)?;
            let mut rng = ChaCha20Rng::seed_from_u64(data_seed);
            let synthetic =
                generate_data(&data_solver, &truth, sigma_y2.sqrt(), &mut rng).map_err(RunnerError::Data)?;
            let inference_mesh = Mesh::square(mesh);
            let solver = GroundwaterSolver::new(inference_mesh, prior, &stations).map_err(RunnerError::Data)?;
            let noise = GaussianNoise::isotropic(DVector::from_column_slice(&synthetic.data), sigma_y2)
                .map_err(RunnerError::Data)?;
            let model = GroundwaterModel::new(Arc::new(solver), noise).map_err(RunnerError::Data)?;
            Ok((
                Problem::Groundwater(model),
                DataRecord::Groundwater {
                    inference_mesh,
                    synthetic,
                },
            ))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainManifest {
    pub label: String,
    pub file_stem: String,
    pub seed: u64,
    /// Resolved block indices (empty for non-geometric methods).
    pub block: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub config: ExperimentConfig,
    pub prior_eigenvalues: Vec<f64>,
    pub data: DataRecord,
    pub chains: Vec<ChainManifest>,
}

/// Overrides applied on top of a configuration.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub output_dir: Option<PathBuf>,
    /// Worker threads for chains; `None` uses the rayon default.
    pub jobs: Option<usize>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub summary: Vec<SummaryRow>,
    pub stats: Vec<ChainStats>,
    pub warnings: Vec<String>,
    pub seconds: f64,
}

fn file_stem(index: usize, label: &str) -> String {
    let slug: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect();
    format!("{index:02}_{}", slug.trim_matches('-'))
}

/// Validates, generates data and runs every chain, writing all artifacts.
pub fn run(config: &ExperimentConfig, options: &RunOptions) -> Result<RunOutcome, RunnerError> {
    let started = Instant::now();
    let report = validate(config)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    let mut config = config.clone();
    if let Some(dir) = &options.output_dir {
        config.output_dir = dir.clone();
    }
    let out = config.output_dir.clone();
    for sub in ["traces", "stats", "samples"] {
        fs::create_dir_all(out.join(sub))?;
    }

    let prior = config
        .prior
        .build()
        .map_err(|e| config_error(PriorSpec::key_for(&e), e.to_string()))?;
    let (problem, data) = build_problem(&config, &prior)?;

    let chains: Vec<ChainManifest> = config
        .chains
        .iter()
        .zip(&report.labels)
        .enumerate()
        .map(|(i, (c, label))| ChainManifest {
            label: label.clone(),
            file_stem: file_stem(i, label),
            seed: c.seed,
            block: if c.algorithm.is_geometric() {
                c.block.resolve(&prior)
            } else {
                Vec::new()
            },
        })
        .collect();
    let manifest = Manifest {
        manifest_version: 1,
        config: config.clone(),
        prior_eigenvalues: prior.eigenvalues().iter().copied().collect(),
        data,
        chains: chains.clone(),
    };
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;

    let work = || -> Result<Vec<ChainStats>, RunnerError> {
        config
            .chains
            .par_iter()
            .zip(chains.par_iter())
            .map(|(spec, meta)| {
                let model = problem.fresh();
                let options = ChainOptions {
                    iterations: spec.iterations,
                    burn_in: spec.burn_in,
                    seed: spec.seed,
                    adapt: spec.adapter(),
                    initial: spec.init.clone(),
                    keep_samples: true,
                };
                log::info!("{}: {} iterations", meta.label, spec.iterations);
                let mut record = run_chain(&spec.sampler(), &options, model.as_ref(), &prior).map_err(
                    |source| RunnerError::Chain {
                        label: meta.label.clone(),
                        source,
                    },
                )?;
                record.label = meta.label.clone();
                write_chain(&out, meta, spec, &record)
            })
            .collect()
    };
    let stats = match options.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| RunnerError::Pool(e.to_string()))?
            .install(work)?,
        None => work()?,
    };

    let summary = diagnostics::summarize_stats(&stats, &config.baseline)?;
    diagnostics::write_summary(&summary, &out)?;
    Ok(RunOutcome {
        output_dir: out,
        summary,
        stats,
        warnings: report.warnings,
        seconds: started.elapsed().as_secs_f64(),
    })
}

fn write_chain(
    out: &Path,
    meta: &ChainManifest,
    spec: &ChainSpec,
    record: &ChainRecord,
) -> Result<ChainStats, RunnerError> {
    let stem = &meta.file_stem;
    record.write_trace(fs::File::create(out.join("traces").join(format!("{stem}.csv")))?)?;
    if spec.dump_samples {
        record.write_samples(fs::File::create(out.join("samples").join(format!("{stem}.csv")))?)?;
    }
    let stats = ChainStats::from_record(record)?;
    fs::write(
        out.join("stats").join(format!("{stem}.json")),
        serde_json::to_string_pretty(&stats)? + "\n",
    )?;
    if stats.failures > 0 {
        log::warn!("{}: {} proposals rejected after solver failures", meta.label, stats.failures);
    }
    Ok(stats)
}

/// Rebuilds the summary of a finished run from its manifest and stats files.
pub fn summarize_dir(dir: &Path, baseline: Option<&str>) -> Result<Vec<SummaryRow>, RunnerError> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path).map_err(|source| RunnerError::Read {
        path: manifest_path.clone(),
        source,
    })?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| RunnerError::Parse {
        path: manifest_path,
        message: e.to_string(),
    })?;
    let mut stats = Vec::with_capacity(manifest.chains.len());
    for chain in &manifest.chains {
        let path = dir.join("stats").join(format!("{}.json", chain.file_stem));
        let text = fs::read_to_string(&path).map_err(|source| RunnerError::Read {
            path: path.clone(),
            source,
        })?;
        stats.push(serde_json::from_str(&text).map_err(|e| RunnerError::Parse {
            path,
            message: e.to_string(),
        })?);
    }
    let baseline = baseline.unwrap_or(&manifest.config.baseline);
    let summary = diagnostics::summarize_stats(&stats, baseline)?;
    diagnostics::write_summary(&summary, dir)?;
    Ok(summary)
}

/// Fixed-width rendering of a summary for terminals.
pub fn format_summary(rows: &[SummaryRow]) -> String {
    let mut s = format!(
        "{:<18} {:>6} {:>10} {:>9} {:>9} {:>9} {:>10} {:>8} {:>10}\n",
        "method", "ap", "s/iter", "ess_min", "ess_med", "ess_max", "minESS/s", "speedup", "solves"
    );
    for r in rows {
        s += &format!(
            "{:<18} {:>6.3} {:>10.2e} {:>9.1} {:>9.1} {:>9.1} {:>10.3} {:>8.2} {:>10}\n",
            r.method, r.ap, r.sec_per_iter, r.ess_min, r.ess_med, r.ess_max, r.min_ess_per_sec, r.speedup, r.pde_solves
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_config() -> ExperimentConfig {
        parse_config(
            r#"{
                "output_dir": "unused",
                "prior": { "kind": "cosine_1d", "alpha": 1.0, "sigma2": 1.0, "s": 1.0, "cap": 6 },
                "model": { "kind": "linear_gaussian", "observations": 4,
                           "noise_variance": 0.1, "data_seed": 3 },
                "chains": [ { "algorithm": "pcn", "step": 0.5, "iterations": 200,
                              "burn_in": 50, "seed": 1 } ]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn defaults_are_filled() {
        let c = linear_config();
        assert_eq!(c.baseline, "pCN");
        assert_eq!(c.chains[0].max_leapfrog, 1);
        assert_eq!(c.chains[0].block, BlockSpec::None);
        assert_eq!(c.chains[0].init, InitialState::Zero);
        assert!(validate(&c).is_ok());
    }

    #[test]
    fn parse_errors_name_the_key() {
        let err = parse_config(
            r#"{ "output_dir": "x", "prior": { "kind": "cosine_1d", "alpha": 1.0, "sigma2": 1.0,
                 "s": 1.0, "cap": "ten" }, "model": { "kind": "linear_gaussian",
                 "observations": 4, "noise_variance": 0.1, "data_seed": 3 }, "chains": [] }"#,
        )
        .unwrap_err();
        assert!(err.starts_with("prior.cap"), "{err}");
        let err = parse_config(r#"{ "output_dir": "x", "prior": 1 "#).unwrap_err();
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn invalid_values_name_the_key() {
        let mut c = linear_config();
        c.chains[0].burn_in = 200;
        let e = validate(&c).unwrap_err().to_string();
        assert!(e.starts_with("chains[0].burn_in"), "{e}");

        let mut c = linear_config();
        c.baseline = "nothing".into();
        assert!(validate(&c).unwrap_err().to_string().starts_with("baseline"));

        let mut c = linear_config();
        c.prior = PriorSpec::Cosine2d(SquarePrior {
            alpha: 0.0,
            sigma2: 1.0,
            s: 0.9,
            cap: 10,
        });
        assert!(validate(&c).unwrap_err().to_string().starts_with("prior.s"));

        let mut c = linear_config();
        c.chains[0].step = -1.0;
        assert!(validate(&c).unwrap_err().to_string().starts_with("chains[0].step"));
    }

    #[test]
    fn stems_are_filesystem_safe() {
        assert_eq!(file_stem(3, "Split inf-mHMC"), "03_split-inf-mhmc");
        assert_eq!(file_stem(0, "pCN"), "00_pcn");
    }
}
