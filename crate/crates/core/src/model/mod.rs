//! Forward-model contract and the built-in models.
//!
//! A model maps KL coordinates `u` to predicted observations `G(u)`; together
//! with Gaussian noise this gives the data misfit
//! `Φ(u) = ½ (y − G(u))ᵀ Σ⁻¹ (y − G(u))`, its gradient `DΦ(u)`, and the
//! Gauss-Newton (Fisher) block `JᵀΣ⁻¹J` restricted to a set of modes.

pub mod banded;
mod groundwater;
mod linear;

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prior::{Coefficients, PriorError};

pub use groundwater::{
    circle_stations, generate_data, truth_coefficients, GroundwaterModel, GroundwaterSolver,
    Mesh, ObservationOperator, PressureField, SyntheticData,
};
pub use linear::LinearGaussianModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("forward solver failed: {0}")]
    SolverFailure(String),
    #[error("non-finite input coefficient at index {0}")]
    NonFinite(usize),
    #[error("block index {index} out of range for dimension {dim}")]
    BlockOutOfRange { index: usize, dim: usize },
    #[error("station ({0}, {1}) is outside the interpolation region of the mesh")]
    StationOutsideMesh(f64, f64),
    #[error("noise covariance is not symmetric positive definite")]
    BadNoiseCovariance,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Prior(#[from] PriorError),
}

/// Per-kind linear-solve totals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolveCounts {
    pub forward: u64,
    pub adjoint: u64,
    pub tangent: u64,
}

impl SolveCounts {
    pub fn total(&self) -> u64 {
        self.forward + self.adjoint + self.tangent
    }
}

impl std::ops::Sub for SolveCounts {
    type Output = SolveCounts;

    fn sub(self, rhs: Self) -> Self {
        SolveCounts {
            forward: self.forward - rhs.forward,
            adjoint: self.adjoint - rhs.adjoint,
            tangent: self.tangent - rhs.tangent,
        }
    }
}

impl std::ops::Add for SolveCounts {
    type Output = SolveCounts;

    fn add(self, rhs: Self) -> Self {
        SolveCounts {
            forward: self.forward + rhs.forward,
            adjoint: self.adjoint + rhs.adjoint,
            tangent: self.tangent + rhs.tangent,
        }
    }
}

/// Thread-safe solve counter owned by a model instance.
#[derive(Debug, Default)]
pub struct SolveCounter {
    forward: AtomicU64,
    adjoint: AtomicU64,
    tangent: AtomicU64,
}

impl SolveCounter {
    pub fn forward(&self) {
        self.forward.fetch_add(1, Ordering::Relaxed);
    }

    pub fn adjoint(&self, k: u64) {
        self.adjoint.fetch_add(k, Ordering::Relaxed);
    }

    pub fn tangent(&self, k: u64) {
        self.tangent.fetch_add(k, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> SolveCounts {
        SolveCounts {
            forward: self.forward.load(Ordering::Relaxed),
            adjoint: self.adjoint.load(Ordering::Relaxed),
            tangent: self.tangent.load(Ordering::Relaxed),
        }
    }
}

impl Clone for SolveCounter {
    fn clone(&self) -> Self {
        let c = self.snapshot();
        Self {
            forward: AtomicU64::new(c.forward),
            adjoint: AtomicU64::new(c.adjoint),
            tangent: AtomicU64::new(c.tangent),
        }
    }
}

/// Observed data with a Gaussian noise model `η ~ N(0, Σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianNoise {
    data: DVector<f64>,
    covariance: DMatrix<f64>,
    precision: DMatrix<f64>,
}

impl GaussianNoise {
    pub fn new(data: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self, ModelError> {
        let m = data.len();
        if covariance.nrows() != m || covariance.ncols() != m {
            return Err(ModelError::DimensionMismatch {
                expected: m,
                got: covariance.nrows(),
            });
        }
        if (&covariance - covariance.transpose()).amax() > 1e-12 * covariance.amax() {
            return Err(ModelError::BadNoiseCovariance);
        }
        let chol = covariance
            .clone()
            .cholesky()
            .ok_or(ModelError::BadNoiseCovariance)?;
        let precision = chol.inverse();
        Ok(Self {
            data,
            covariance,
            precision,
        })
    }

    /// `Σ = σ_y² I`.
    pub fn isotropic(data: DVector<f64>, variance: f64) -> Result<Self, ModelError> {
        if !(variance > 0.0) {
            return Err(ModelError::BadNoiseCovariance);
        }
        let m = data.len();
        let covariance = DMatrix::from_diagonal_element(m, m, variance);
        let precision = DMatrix::from_diagonal_element(m, m, 1.0 / variance);
        Ok(Self {
            data,
            covariance,
            precision,
        })
    }

    pub fn data(&self) -> &DVector<f64> {
        &self.data
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `½ |y − g|²_Σ`.
    pub fn misfit(&self, predicted: &DVector<f64>) -> f64 {
        let r = predicted - &self.data;
        0.5 * r.dot(&(&self.precision * &r)).max(0.0)
    }

    /// `Σ⁻¹ (g − y)`.
    pub fn weighted_residual(&self, predicted: &DVector<f64>) -> DVector<f64> {
        &self.precision * (predicted - &self.data)
    }
}

/// Which derivative information a single evaluation should return.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EvalRequest<'a> {
    Potential,
    Gradient,
    /// Gradient plus the Fisher block on the given modes.
    Metric(&'a [usize]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub potential: f64,
    pub gradient: Option<Coefficients>,
    pub fisher: Option<DMatrix<f64>>,
}

/// Forward-model contract consumed by the samplers.
///
/// `potential`, `gradient` and `fisher_block` each perform their own forward
/// solve. `evaluate` may share a single forward solve across the requested
/// quantities; models with an expensive forward map should override it.
pub trait ForwardModel: Send + Sync {
    /// Number of KL coordinates the model is parameterised by.
    fn dim(&self) -> usize;

    fn obs_count(&self) -> usize;

    fn noise(&self) -> &GaussianNoise;

    /// Predicted observations `G(u)`.
    fn forward_map(&self, u: &Coefficients) -> Result<DVector<f64>, ModelError>;

    fn potential(&self, u: &Coefficients) -> Result<f64, ModelError> {
        Ok(self.noise().misfit(&self.forward_map(u)?))
    }

    fn gradient(&self, u: &Coefficients) -> Result<Coefficients, ModelError>;

    /// `JᵀΣ⁻¹J` on the modes in `block`, symmetrised.
    fn fisher_block(&self, u: &Coefficients, block: &[usize]) -> Result<DMatrix<f64>, ModelError>;

    fn evaluate(&self, u: &Coefficients, request: EvalRequest<'_>) -> Result<Evaluation, ModelError> {
        let potential = self.potential(u)?;
        let gradient = match request {
            EvalRequest::Potential => None,
            _ => Some(self.gradient(u)?),
        };
        let fisher = match request {
            EvalRequest::Metric(block) if !block.is_empty() => Some(self.fisher_block(u, block)?),
            EvalRequest::Metric(_) => Some(DMatrix::zeros(0, 0)),
            _ => None,
        };
        Ok(Evaluation {
            potential,
            gradient,
            fisher,
        })
    }

    fn solve_counts(&self) -> SolveCounts;
}

pub(crate) fn check_input(u: &Coefficients, dim: usize) -> Result<(), ModelError> {
    if u.len() != dim {
        return Err(ModelError::DimensionMismatch {
            expected: dim,
            got: u.len(),
        });
    }
    if let Some(j) = u.iter().position(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite(j));
    }
    Ok(())
}

pub(crate) fn check_block(block: &[usize], dim: usize) -> Result<(), ModelError> {
    match block.iter().find(|&&j| j >= dim) {
        Some(&index) => Err(ModelError::BlockOutOfRange { index, dim }),
        None => Ok(()),
    }
}

/// Linear solves needed for an `m × block` Jacobian: one tangent solve per
/// column, or one adjoint solve per row when there are fewer rows.
pub fn incremental_solves(block: usize, obs: usize) -> u64 {
    block.min(obs) as u64
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// The prior-only target: `Φ ≡ 0`, no observations.
#[derive(Debug, Clone)]
pub struct PriorOnly {
    dim: usize,
    noise: GaussianNoise,
    counter: SolveCounter,
}

impl PriorOnly {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            noise: GaussianNoise::isotropic(DVector::zeros(0), 1.0).expect("empty noise"),
            counter: SolveCounter::default(),
        }
    }
}

impl ForwardModel for PriorOnly {
    fn dim(&self) -> usize {
        self.dim
    }

    fn obs_count(&self) -> usize {
        0
    }

    fn noise(&self) -> &GaussianNoise {
        &self.noise
    }

    fn forward_map(&self, u: &Coefficients) -> Result<DVector<f64>, ModelError> {
        check_input(u, self.dim)?;
        self.counter.forward();
        Ok(DVector::zeros(0))
    }

    fn potential(&self, u: &Coefficients) -> Result<f64, ModelError> {
        self.forward_map(u)?;
        Ok(0.0)
    }

    fn gradient(&self, u: &Coefficients) -> Result<Coefficients, ModelError> {
        self.forward_map(u)?;
        self.counter.adjoint(1);
        Ok(DVector::zeros(self.dim))
    }

    fn fisher_block(&self, u: &Coefficients, block: &[usize]) -> Result<DMatrix<f64>, ModelError> {
        check_block(block, self.dim)?;
        self.forward_map(u)?;
        self.counter.tangent(incremental_solves(block.len(), 0));
        Ok(DMatrix::zeros(block.len(), block.len()))
    }

    fn evaluate(&self, u: &Coefficients, request: EvalRequest<'_>) -> Result<Evaluation, ModelError> {
        self.forward_map(u)?;
        let gradient = match request {
            EvalRequest::Potential => None,
            _ => {
                self.counter.adjoint(1);
                Some(DVector::zeros(self.dim))
            }
        };
        let fisher = match request {
            EvalRequest::Metric(block) => {
                check_block(block, self.dim)?;
                Some(DMatrix::zeros(block.len(), block.len()))
            }
            _ => None,
        };
        Ok(Evaluation {
            potential: 0.0,
            gradient,
            fisher,
        })
    }

    fn solve_counts(&self) -> SolveCounts {
        self.counter.snapshot()
    }
}
