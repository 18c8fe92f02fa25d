//! One-step transition kernels.
//!
//! All kernels share one random-number discipline so that different
//! algorithms can be replayed on identical draws. Per step, in order:
//!
//! 1. `n` standard normals, one per KL mode in index order (proposal noise
//!    or initial velocity);
//! 2. HMC family with `max_leapfrog > 1` only: the leapfrog count, uniform
//!    on `1..=max_leapfrog`;
//! 3. one uniform on `[0, 1)` for the accept/reject decision, drawn even when
//!    the proposal could not be evaluated.
//!
//! The split methods are the geometric kernels with a partial block: `D₀ = 0`
//! reproduces the prior-preconditioned kernels, `D₀ = n` gives the full
//! geometric ones.

mod adapt;
mod chain;
mod hmc;
mod mala;
mod mmala;
mod pcn;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BlockSpec, MetricError, SplitMetric};
use crate::model::{EvalRequest, ForwardModel, ModelError, SolveCounts};
use crate::prior::{Coefficients, KLPrior};

pub use adapt::StepAdapter;
pub use chain::{run_chain, ChainOptions, InitialState};
pub use hmc::{
    energy, hmc_leapfrog, hmc_step, hmc_step_with, mhmc_leapfrog, mhmc_step, mhmc_step_with,
    LeapfrogStep, Trajectory,
};
pub use mala::{mala_log_ratio, mala_step};
pub use mmala::{mmala_log_ratio, mmala_step, sn_proposal_mean};
pub use pcn::{pcn_step, pcn_step_h};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepFailure {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Pcn,
    Mala,
    Hmc,
    Mmala,
    Mhmc,
}

impl Algorithm {
    pub fn is_hmc_family(&self) -> bool {
        matches!(self, Algorithm::Hmc | Algorithm::Mhmc)
    }

    pub fn is_geometric(&self) -> bool {
        matches!(self, Algorithm::Mmala | Algorithm::Mhmc)
    }

    /// Default reporting name; geometric methods with a partial block are
    /// labelled "Split".
    pub fn label(&self, block: usize, dim: usize) -> String {
        let base = match self {
            Algorithm::Pcn => return "pCN".into(),
            Algorithm::Mala => return "inf-MALA".into(),
            Algorithm::Hmc => return "inf-HMC".into(),
            Algorithm::Mmala => "inf-mMALA",
            Algorithm::Mhmc => "inf-mHMC",
        };
        if block < dim {
            format!("Split {base}")
        } else {
            base.into()
        }
    }
}

/// Kernel parameters. `step` is `h` for pCN and the MALA family (pCN uses
/// `ρ = (1 − h/4)/(1 + h/4)`), and `ε` for the HMC family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub algorithm: Algorithm,
    pub step: f64,
    #[serde(default = "one")]
    pub max_leapfrog: usize,
    #[serde(default = "no_block")]
    pub block: BlockSpec,
}

fn one() -> usize {
    1
}

fn no_block() -> BlockSpec {
    BlockSpec::None
}

/// `ρ = (1 − h/4)/(1 + h/4)` and `√(1 − ρ²) = √h/(1 + h/4)`.
///
/// `h > 4` gives `ρ < 0`; the kernel is still valid and callers may warn.
pub fn rho_of_h(h: f64) -> Option<(f64, f64)> {
    if !(h > 0.0) || !h.is_finite() {
        return None;
    }
    let q = 1.0 + h / 4.0;
    Some(((1.0 - h / 4.0) / q, h.sqrt() / q))
}

/// Kick and rotation steps under which one mHMC leapfrog reproduces an
/// mMALA move with step `h`: `ε₁ = √h`, `cos ε₂ = (1 − h/4)/(1 + h/4)`,
/// `sin ε₂ = √h/(1 + h/4)`.
pub fn step_map(h: f64) -> Option<(f64, f64, f64)> {
    let (rho, s) = rho_of_h(h)?;
    Some((h.sqrt(), rho, s))
}

/// Cached quantities at one position of the chain.
#[derive(Debug, Clone)]
pub struct Point {
    pub u: Coefficients,
    pub potential: f64,
    pub gradient: Option<Coefficients>,
    pub metric: Option<SplitMetric>,
    /// `g(u)`; present whenever `metric` is.
    pub natural_gradient: Option<Coefficients>,
}

/// What an evaluation must provide.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Need<'a> {
    Potential,
    Gradient,
    Metric(&'a [usize]),
}

impl Point {
    pub fn evaluate<M: ForwardModel + ?Sized>(
        model: &M,
        prior: &KLPrior,
        u: Coefficients,
        need: Need<'_>,
    ) -> Result<Self, StepFailure> {
        let request = match need {
            Need::Potential => EvalRequest::Potential,
            Need::Gradient => EvalRequest::Gradient,
            Need::Metric(block) if block.is_empty() => EvalRequest::Gradient,
            Need::Metric(block) => EvalRequest::Metric(block),
        };
        let eval = model.evaluate(&u, request)?;
        if !eval.potential.is_finite() {
            return Err(ModelError::SolverFailure("non-finite potential".into()).into());
        }
        let (metric, natural_gradient) = match need {
            Need::Metric(block) => {
                let metric = match eval.fisher {
                    Some(f) if !block.is_empty() => SplitMetric::new(prior, block.to_vec(), f)?,
                    _ => SplitMetric::prior(prior),
                };
                let grad = eval.gradient.as_ref().expect("gradient requested");
                let g = metric.natural_gradient(&u, grad);
                (Some(metric), Some(g))
            }
            _ => (None, None),
        };
        Ok(Self {
            u,
            potential: eval.potential,
            gradient: eval.gradient,
            metric,
            natural_gradient,
        })
    }

    pub(crate) fn grad(&self) -> &Coefficients {
        self.gradient
            .as_ref()
            .expect("kernel requires a gradient at the current point")
    }

    pub(crate) fn metric(&self) -> &SplitMetric {
        self.metric
            .as_ref()
            .expect("kernel requires a metric at the current point")
    }

    pub(crate) fn natural(&self) -> &Coefficients {
        self.natural_gradient
            .as_ref()
            .expect("kernel requires g(u) at the current point")
    }
}

/// Outcome of one kernel application.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub proposed: Coefficients,
    pub log_accept_ratio: f64,
    pub accepted: bool,
    pub solver_failed: bool,
    pub leapfrog_steps: usize,
    pub solve_counts: SolveCounts,
}

impl Transition {
    /// `1 ∧ exp(log ratio)`, zero on failure.
    pub fn accept_probability(&self) -> f64 {
        if self.solver_failed || self.log_accept_ratio.is_nan() {
            0.0
        } else {
            self.log_accept_ratio.min(0.0).exp()
        }
    }
}

/// A transition and, if the proposal could be evaluated, its cached point.
#[derive(Debug, Clone)]
pub struct Step {
    pub transition: Transition,
    pub proposal: Option<Point>,
}

impl Step {
    /// The point the chain moves to: the proposal if accepted, else `current`.
    pub fn into_next(self, current: Point) -> (Transition, Point) {
        match (self.transition.accepted, self.proposal) {
            (true, Some(p)) => (self.transition, p),
            _ => (self.transition, current),
        }
    }
}

pub(crate) fn standard_normals<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Draws the MH uniform and builds the transition.
pub(crate) fn decide<R: Rng + ?Sized>(
    rng: &mut R,
    proposed: Coefficients,
    log_ratio: Option<f64>,
    proposal: Option<Point>,
    leapfrog_steps: usize,
    counts: SolveCounts,
) -> Step {
    let uniform: f64 = rng.random();
    let (log_accept_ratio, solver_failed) = match log_ratio {
        Some(r) => (r, false),
        None => (f64::NEG_INFINITY, true),
    };
    let accepted = !solver_failed && uniform.ln() < log_accept_ratio;
    Step {
        transition: Transition {
            proposed,
            log_accept_ratio,
            accepted,
            solver_failed,
            leapfrog_steps,
            solve_counts: counts,
        },
        proposal,
    }
}

/// Dispatches one step of `config` from `current`.
pub fn step<M: ForwardModel + ?Sized, R: Rng + ?Sized>(
    config: &SamplerConfig,
    block: &[usize],
    current: &Point,
    model: &M,
    prior: &KLPrior,
    rng: &mut R,
) -> Step {
    match config.algorithm {
        Algorithm::Pcn => pcn_step_h(current, model, prior, config.step, rng),
        Algorithm::Mala => mala_step(current, model, prior, config.step, rng),
        Algorithm::Hmc => hmc_step(current, model, prior, config.step, config.max_leapfrog, rng),
        Algorithm::Mmala => mmala_step(current, model, prior, config.step, block, rng),
        Algorithm::Mhmc => mhmc_step(
            current,
            model,
            prior,
            config.step,
            config.max_leapfrog,
            block,
            rng,
        ),
    }
}

/// What the kernel of `algorithm` needs cached at each point.
pub fn need_for<'a>(algorithm: Algorithm, block: &'a [usize]) -> Need<'a> {
    match algorithm {
        Algorithm::Pcn => Need::Potential,
        Algorithm::Mala | Algorithm::Hmc => Need::Gradient,
        Algorithm::Mmala | Algorithm::Mhmc => Need::Metric(block),
    }
}
