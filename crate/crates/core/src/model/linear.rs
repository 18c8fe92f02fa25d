use nalgebra::{DMatrix, DVector};

use super::{
    check_block, check_input, incremental_solves, symmetrize, EvalRequest, Evaluation,
    ForwardModel, GaussianNoise, ModelError, SolveCounter, SolveCounts,
};
use crate::prior::{Coefficients, KLPrior};

/// `G(u) = A u` with Gaussian noise. The posterior is Gaussian with precision
/// `C⁻¹ + AᵀΣ⁻¹A`, which makes this model an exact oracle for the samplers.
#[derive(Debug, Clone)]
pub struct LinearGaussianModel {
    design: DMatrix<f64>,
    noise: GaussianNoise,
    counter: SolveCounter,
}

impl LinearGaussianModel {
    pub fn new(design: DMatrix<f64>, noise: GaussianNoise) -> Result<Self, ModelError> {
        if design.nrows() != noise.len() {
            return Err(ModelError::DimensionMismatch {
                expected: noise.len(),
                got: design.nrows(),
            });
        }
        Ok(Self {
            design,
            noise,
            counter: SolveCounter::default(),
        })
    }

    /// Same design and data with the solve counter reset.
    pub fn fresh(&self) -> Self {
        Self {
            design: self.design.clone(),
            noise: self.noise.clone(),
            counter: SolveCounter::default(),
        }
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    /// Exact posterior `(mean, covariance)` under `prior`.
    pub fn posterior(&self, prior: &KLPrior) -> (DVector<f64>, DMatrix<f64>) {
        let at_prec = self.design.transpose() * self.noise.precision();
        let mut h = &at_prec * &self.design;
        for j in 0..prior.dim() {
            h[(j, j)] += 1.0 / prior.eigenvalues()[j];
        }
        let h = symmetrize(h);
        let chol = h.cholesky().expect("posterior precision is SPD");
        let mean = chol.solve(&(at_prec * self.noise.data()));
        (mean, chol.inverse())
    }

    fn fisher_unchecked(&self, block: &[usize]) -> DMatrix<f64> {
        let j = self.design.select_columns(block.iter());
        symmetrize(j.transpose() * self.noise.precision() * &j)
    }
}

impl ForwardModel for LinearGaussianModel {
    fn dim(&self) -> usize {
        self.design.ncols()
    }

    fn obs_count(&self) -> usize {
        self.design.nrows()
    }

    fn noise(&self) -> &GaussianNoise {
        &self.noise
    }

    fn forward_map(&self, u: &Coefficients) -> Result<DVector<f64>, ModelError> {
        check_input(u, self.dim())?;
        self.counter.forward();
        Ok(&self.design * u)
    }

    fn gradient(&self, u: &Coefficients) -> Result<Coefficients, ModelError> {
        let g = self.forward_map(u)?;
        self.counter.adjoint(1);
        Ok(self.design.transpose() * self.noise.weighted_residual(&g))
    }

    fn fisher_block(&self, u: &Coefficients, block: &[usize]) -> Result<DMatrix<f64>, ModelError> {
        check_block(block, self.dim())?;
        self.forward_map(u)?;
        self.counter
            .tangent(incremental_solves(block.len(), self.obs_count()));
        Ok(self.fisher_unchecked(block))
    }

    fn evaluate(&self, u: &Coefficients, request: EvalRequest<'_>) -> Result<Evaluation, ModelError> {
        let g = self.forward_map(u)?;
        let potential = self.noise.misfit(&g);
        let gradient = match request {
            EvalRequest::Potential => None,
            _ => {
                self.counter.adjoint(1);
                Some(self.design.transpose() * self.noise.weighted_residual(&g))
            }
        };
        let fisher = match request {
            EvalRequest::Metric(block) => {
                check_block(block, self.dim())?;
                self.counter
                    .tangent(incremental_solves(block.len(), self.obs_count()));
                Some(self.fisher_unchecked(block))
            }
            _ => None,
        };
        Ok(Evaluation {
            potential,
            gradient,
            fisher,
        })
    }

    fn solve_counts(&self) -> SolveCounts {
        self.counter.snapshot()
    }
}
