//! Karhunen-Loève priors built from cosine eigenfunctions of the Laplacian.
//!
//! The covariance is `σ²(αI − Δ)^{−s}` restricted to a finite set of modes. A
//! prior is fully described by its eigenvalues `λ_j²` (marginal variances of
//! the KL coordinates) and a basis descriptor that maps coordinates back to a
//! field on the physical domain.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// KL coordinates `{u_j}` of a field. Length always equals the owning prior's
/// dimension.
pub type Coefficients = DVector<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PriorError {
    #[error("σ² must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("α must be non-negative, got {0}")]
    NegativeShift(f64),
    #[error("covariance is not trace-class: s = {s} must exceed {bound}")]
    NotTraceClass { s: f64, bound: f64 },
    #[error("mode cap must be at least 1")]
    EmptyCap,
    #[error("1D spectrum with α = 0 is singular at index 0")]
    SingularZeroMode,
    #[error("domain [{0}, {1}] is empty")]
    EmptyDomain(f64, f64),
    #[error("point ({x}, {y}) lies outside the basis domain")]
    OutsideDomain { x: f64, y: f64 },
    #[error("coefficient vector has length {got}, prior dimension is {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Hyper-parameters of `σ²(αI − Δ)^{−s}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub alpha: f64,
    pub sigma2: f64,
    pub s: f64,
}

impl Hyper {
    fn check(&self, trace_bound: f64) -> Result<(), PriorError> {
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            return Err(PriorError::NonPositiveScale(self.sigma2));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(PriorError::NegativeShift(self.alpha));
        }
        if !(self.s > trace_bound) {
            return Err(PriorError::NotTraceClass {
                s: self.s,
                bound: trace_bound,
            });
        }
        Ok(())
    }
}

/// Cosine eigenbasis descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Basis {
    /// Tensor cosines on `[k1,k2]×[l1,l2]`; mode `j` has index pair
    /// `indices[j]`, enumerated row-major (`i1` outer, `i2` inner).
    Cosine2D {
        x_range: (f64, f64),
        y_range: (f64, f64),
        caps: (usize, usize),
        indices: Vec<(usize, usize)>,
    },
    /// Cosines `cos(πix)` on a 1D interval mapped onto `[-1, 1]`.
    Cosine1D { domain: (f64, f64), cap: usize },
}

/// `λ_i² = σ²{α + π²((i₁+½)² + (i₂+½)²)}^{−s}` for `0 ≤ i₁ < caps.0`,
/// `0 ≤ i₂ < caps.1`, row-major.
pub fn spectrum_2d(
    hyper: Hyper,
    caps: (usize, usize),
) -> Result<(Vec<f64>, Vec<(usize, usize)>), PriorError> {
    hyper.check(1.0)?;
    if caps.0 == 0 || caps.1 == 0 {
        return Err(PriorError::EmptyCap);
    }
    let mut eigenvalues = Vec::with_capacity(caps.0 * caps.1);
    let mut indices = Vec::with_capacity(caps.0 * caps.1);
    for i1 in 0..caps.0 {
        for i2 in 0..caps.1 {
            let a = i1 as f64 + 0.5;
            let b = i2 as f64 + 0.5;
            let base = hyper.alpha + PI * PI * (a * a + b * b);
            eigenvalues.push(hyper.sigma2 * base.powf(-hyper.s));
            indices.push((i1, i2));
        }
    }
    Ok((eigenvalues, indices))
}

/// `λ_i² = 2^{δ[i=0]} σ²{α + (πi)²}^{−s}` for `0 ≤ i < cap`.
pub fn spectrum_1d(hyper: Hyper, cap: usize) -> Result<Vec<f64>, PriorError> {
    hyper.check(0.5)?;
    if cap == 0 {
        return Err(PriorError::EmptyCap);
    }
    if hyper.alpha == 0.0 {
        return Err(PriorError::SingularZeroMode);
    }
    Ok((0..cap)
        .map(|i| {
            let k = PI * i as f64;
            let doubling = if i == 0 { 2.0 } else { 1.0 };
            doubling * hyper.sigma2 * (hyper.alpha + k * k).powf(-hyper.s)
        })
        .collect())
}

/// Trace-class Gaussian prior in KL coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KLPrior {
    hyper: Hyper,
    basis: Basis,
    eigenvalues: DVector<f64>,
    std_devs: DVector<f64>,
}

impl KLPrior {
    pub fn cosine_2d(
        hyper: Hyper,
        caps: (usize, usize),
        x_range: (f64, f64),
        y_range: (f64, f64),
    ) -> Result<Self, PriorError> {
        for r in [x_range, y_range] {
            if !(r.1 > r.0) {
                return Err(PriorError::EmptyDomain(r.0, r.1));
            }
        }
        let (eigenvalues, indices) = spectrum_2d(hyper, caps)?;
        Ok(Self::from_parts(
            hyper,
            Basis::Cosine2D {
                x_range,
                y_range,
                caps,
                indices,
            },
            eigenvalues,
        ))
    }

    /// Square-capped prior on the unit square, `n = cap²`.
    pub fn unit_square(hyper: Hyper, cap: usize) -> Result<Self, PriorError> {
        Self::cosine_2d(hyper, (cap, cap), (0.0, 1.0), (0.0, 1.0))
    }

    pub fn cosine_1d(hyper: Hyper, cap: usize, domain: (f64, f64)) -> Result<Self, PriorError> {
        if !(domain.1 > domain.0) {
            return Err(PriorError::EmptyDomain(domain.0, domain.1));
        }
        let eigenvalues = spectrum_1d(hyper, cap)?;
        Ok(Self::from_parts(
            hyper,
            Basis::Cosine1D { domain, cap },
            eigenvalues,
        ))
    }

    fn from_parts(hyper: Hyper, basis: Basis, eigenvalues: Vec<f64>) -> Self {
        let eigenvalues = DVector::from_vec(eigenvalues);
        let std_devs = eigenvalues.map(f64::sqrt);
        Self {
            hyper,
            basis,
            eigenvalues,
            std_devs,
        }
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn hyper(&self) -> Hyper {
        self.hyper
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    /// Marginal variances `λ_j²`.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Marginal standard deviations `λ_j`.
    pub fn std_devs(&self) -> &DVector<f64> {
        &self.std_devs
    }

    /// 2D index pair of mode `j`, if the basis is two-dimensional.
    pub fn index_pair(&self, j: usize) -> Option<(usize, usize)> {
        match &self.basis {
            Basis::Cosine2D { indices, .. } => indices.get(j).copied(),
            Basis::Cosine1D { .. } => None,
        }
    }

    pub fn check_len(&self, u: &Coefficients) -> Result<(), PriorError> {
        if u.len() != self.dim() {
            return Err(PriorError::DimensionMismatch {
                expected: self.dim(),
                got: u.len(),
            });
        }
        Ok(())
    }

    /// Independent draws `u_j ~ N(0, λ_j²)`, one standard normal per mode in
    /// index order.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Coefficients {
        DVector::from_fn(self.dim(), |j, _| {
            let z: f64 = rng.sample(StandardNormal);
            self.std_devs[j] * z
        })
    }

    /// Componentwise `(λ_j²)^power · u_j`: `C u`, `C⁻¹ u`, `C^{±1/2} u`.
    pub fn apply_spectral(&self, power: f64, u: &Coefficients) -> Coefficients {
        debug_assert_eq!(u.len(), self.dim());
        if power == 1.0 {
            u.component_mul(&self.eigenvalues)
        } else if power == -1.0 {
            u.component_div(&self.eigenvalues)
        } else if power == 0.5 {
            u.component_mul(&self.std_devs)
        } else if power == -0.5 {
            u.component_div(&self.std_devs)
        } else {
            DVector::from_fn(self.dim(), |j, _| self.eigenvalues[j].powf(power) * u[j])
        }
    }

    /// `⟨a, C⁻¹ b⟩`.
    pub fn precision_inner(&self, a: &Coefficients, b: &Coefficients) -> f64 {
        a.iter()
            .zip(b.iter())
            .zip(self.eigenvalues.iter())
            .map(|((x, y), l)| x * y / l)
            .sum()
    }

    /// Value of basis function `j` at a physical point. For a 1D basis only
    /// `x` is used.
    pub fn basis_value(&self, j: usize, x: f64, y: f64) -> Result<f64, PriorError> {
        match &self.basis {
            Basis::Cosine2D {
                x_range,
                y_range,
                indices,
                ..
            } => {
                let (xi, eta) = map_unit_square(*x_range, *y_range, x, y)?;
                let area = (x_range.1 - x_range.0) * (y_range.1 - y_range.0);
                let (i1, i2) = indices[j];
                Ok(2.0 / area.sqrt()
                    * (PI * (i1 as f64 + 0.5) * xi).cos()
                    * (PI * (i2 as f64 + 0.5) * eta).cos())
            }
            Basis::Cosine1D { domain, .. } => {
                let t = map_symmetric(*domain, x)?;
                let len = domain.1 - domain.0;
                let norm = (2.0 / len).sqrt();
                let zero = if j == 0 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
                Ok(norm * zero * (PI * j as f64 * t).cos())
            }
        }
    }

    /// Matrix `B` with `B[(p, j)] = φ_j(points[p])`, so that a field at the
    /// points is `B u`.
    pub fn basis_matrix(&self, points: &[(f64, f64)]) -> Result<DMatrix<f64>, PriorError> {
        let mut b = DMatrix::zeros(points.len(), self.dim());
        for (p, &(x, y)) in points.iter().enumerate() {
            for j in 0..self.dim() {
                b[(p, j)] = self.basis_value(j, x, y)?;
            }
        }
        Ok(b)
    }

    /// `Σ_j u_j φ_j` evaluated on a rectangular lattice; output is row-major
    /// with `xs` varying fastest.
    pub fn synthesize_field(
        &self,
        u: &Coefficients,
        grid: &Lattice,
    ) -> Result<Vec<f64>, PriorError> {
        self.check_len(u)?;
        let points = grid.points();
        let b = self.basis_matrix(&points)?;
        Ok((b * u).iter().copied().collect())
    }
}

/// Rectangular lattice of evaluation points.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl Lattice {
    pub fn uniform(x: (f64, f64), y: (f64, f64), nx: usize, ny: usize) -> Self {
        let axis = |(a, b): (f64, f64), n: usize| -> Vec<f64> {
            if n == 1 {
                return vec![a];
            }
            (0..n)
                .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
                .collect()
        };
        Self {
            xs: axis(x, nx),
            ys: axis(y, ny),
        }
    }

    pub fn points(&self) -> Vec<(f64, f64)> {
        self.ys
            .iter()
            .flat_map(|&y| self.xs.iter().map(move |&x| (x, y)))
            .collect()
    }
}

const DOMAIN_SLACK: f64 = 1e-12;

fn map_unit_square(
    xr: (f64, f64),
    yr: (f64, f64),
    x: f64,
    y: f64,
) -> Result<(f64, f64), PriorError> {
    let xi = (x - xr.0) / (xr.1 - xr.0);
    let eta = (y - yr.0) / (yr.1 - yr.0);
    let inside = |t: f64| t.is_finite() && (-DOMAIN_SLACK..=1.0 + DOMAIN_SLACK).contains(&t);
    if !inside(xi) || !inside(eta) {
        return Err(PriorError::OutsideDomain { x, y });
    }
    Ok((xi, eta))
}

fn map_symmetric(domain: (f64, f64), x: f64) -> Result<f64, PriorError> {
    let t = 2.0 * (x - domain.0) / (domain.1 - domain.0) - 1.0;
    if !t.is_finite() || !(-1.0 - DOMAIN_SLACK..=1.0 + DOMAIN_SLACK).contains(&t) {
        return Err(PriorError::OutsideDomain { x, y: 0.0 });
    }
    Ok(t)
}
