//! Split position-dependent preconditioner `K(u)⁻¹ = F̃(u) + C⁻¹`.
//!
//! `F̃` is non-zero only on a finite block of modes, so `K(u)` equals the prior
//! covariance on the tail and is a dense `D₀ × D₀` matrix on the block. The
//! block is factored through `M = I + ΛF̃Λ` (with `Λ = diag(λ_j)` on the
//! block): `{Kᵗ}⁻¹ = Λ⁻¹ M Λ⁻¹`, and `M = L Lᵀ` gives both
//! `log|C^{1/2}K^{−1/2}| = Σ log L_ii` and a triangular factor
//! `Λ⁻¹ L` of the block precision. With `F̃ = 0` every operation reduces to
//! the corresponding prior operation exactly.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ForwardModel, ModelError};
use crate::prior::{Basis, Coefficients, KLPrior};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("block precision is not positive definite after jitter")]
    NotPositiveDefinite,
    #[error("Fisher block is {got}×{got}, block has {expected} modes")]
    BlockSize { expected: usize, got: usize },
    #[error("block index {0} is out of range or repeated")]
    BadIndex(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Which modes carry the Fisher block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockSpec {
    /// `D₀ = 0`: the metric is the prior covariance.
    None,
    /// Modes with `i₁ < t` and `i₂ < t` (2D), or the first `t` modes (1D).
    Square(usize),
    /// The first `d` modes in enumeration order.
    Leading(usize),
    /// Every mode.
    All,
}

impl BlockSpec {
    pub fn resolve(&self, prior: &KLPrior) -> Vec<usize> {
        let n = prior.dim();
        match *self {
            BlockSpec::None => Vec::new(),
            BlockSpec::All => (0..n).collect(),
            BlockSpec::Leading(d) => (0..d.min(n)).collect(),
            BlockSpec::Square(t) => match prior.basis() {
                Basis::Cosine2D { indices, .. } => indices
                    .iter()
                    .enumerate()
                    .filter(|(_, &(i1, i2))| i1 < t && i2 < t)
                    .map(|(j, _)| j)
                    .collect(),
                Basis::Cosine1D { .. } => (0..t.min(n)).collect(),
            },
        }
    }
}

const JITTER: f64 = 1e-10;

/// `K(u)` in split form, built at one position.
#[derive(Debug, Clone)]
pub struct SplitMetric {
    block: Vec<usize>,
    in_block: Vec<bool>,
    fisher: DMatrix<f64>,
    /// λ_j on the block, in block order.
    block_std: DVector<f64>,
    /// Cholesky factor of `I + ΛF̃Λ`.
    chol: Cholesky<f64, Dyn>,
    half_logdet: f64,
    eigenvalues: DVector<f64>,
}

impl SplitMetric {
    /// The metric `K = C` (no block).
    pub fn prior(prior: &KLPrior) -> Self {
        Self::new(prior, Vec::new(), DMatrix::zeros(0, 0)).expect("empty block is valid")
    }

    /// Builds `K` from a Fisher block `F̃` on `block` (symmetric PSD).
    pub fn new(prior: &KLPrior, block: Vec<usize>, fisher: DMatrix<f64>) -> Result<Self, MetricError> {
        let d0 = block.len();
        if fisher.nrows() != d0 || fisher.ncols() != d0 {
            return Err(MetricError::BlockSize {
                expected: d0,
                got: fisher.nrows(),
            });
        }
        let mut in_block = vec![false; prior.dim()];
        for &j in &block {
            if j >= prior.dim() || in_block[j] {
                return Err(MetricError::BadIndex(j));
            }
            in_block[j] = true;
        }
        let block_std = DVector::from_iterator(d0, block.iter().map(|&j| prior.std_devs()[j]));
        let mut m = DMatrix::from_fn(d0, d0, |a, b| block_std[a] * fisher[(a, b)] * block_std[b]);
        for a in 0..d0 {
            m[(a, a)] += 1.0;
        }
        let chol = match m.clone().cholesky() {
            Some(c) => c,
            None => {
                let bump = JITTER * m.trace() / d0.max(1) as f64;
                for a in 0..d0 {
                    m[(a, a)] += bump;
                }
                m.cholesky().ok_or(MetricError::NotPositiveDefinite)?
            }
        };
        let half_logdet = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
        Ok(Self {
            block,
            in_block,
            fisher,
            block_std,
            chol,
            half_logdet,
            eigenvalues: prior.eigenvalues().clone(),
        })
    }

    pub fn block(&self) -> &[usize] {
        &self.block
    }

    pub fn block_size(&self) -> usize {
        self.block.len()
    }

    pub fn is_in_block(&self, j: usize) -> bool {
        self.in_block[j]
    }

    pub fn fisher(&self) -> &DMatrix<f64> {
        &self.fisher
    }

    /// `log|C^{1/2}K^{−1/2}| = ½ log det(I + ΛF̃Λ)`.
    pub fn half_logdet(&self) -> f64 {
        self.half_logdet
    }

    /// `{Kᵗ}⁻¹ = F̃ + diag(1/λ_j²)` on the block.
    pub fn block_precision(&self) -> DMatrix<f64> {
        let d0 = self.block.len();
        DMatrix::from_fn(d0, d0, |a, b| {
            let diag = if a == b {
                1.0 / (self.block_std[a] * self.block_std[a])
            } else {
                0.0
            };
            self.fisher[(a, b)] + diag
        })
    }

    /// Lower-triangular factor of the block precision, `Λ⁻¹ L`.
    pub fn block_chol(&self) -> DMatrix<f64> {
        let l = self.chol.l();
        DMatrix::from_fn(l.nrows(), l.ncols(), |a, b| l[(a, b)] / self.block_std[a])
    }

    /// `Kᵗ = Λ M⁻¹ Λ` on the block.
    pub fn block_covariance(&self) -> DMatrix<f64> {
        let minv = self.chol.inverse();
        let d0 = self.block.len();
        DMatrix::from_fn(d0, d0, |a, b| self.block_std[a] * minv[(a, b)] * self.block_std[b])
    }

    /// Dense `n × n` covariance `K(u)`; for testing and small problems.
    pub fn covariance_dense(&self) -> DMatrix<f64> {
        let n = self.eigenvalues.len();
        let mut k = DMatrix::from_diagonal(&self.eigenvalues);
        let kb = self.block_covariance();
        for (a, &i) in self.block.iter().enumerate() {
            for (b, &j) in self.block.iter().enumerate() {
                k[(i, j)] = kb[(a, b)];
            }
        }
        debug_assert_eq!(k.nrows(), n);
        k
    }

    fn gather(&self, v: &Coefficients) -> DVector<f64> {
        DVector::from_iterator(self.block.len(), self.block.iter().map(|&j| v[j]))
    }

    /// `Kᵗ r` on block vectors.
    fn block_solve(&self, r: &DVector<f64>) -> DVector<f64> {
        let scaled = r.component_mul(&self.block_std);
        self.chol.solve(&scaled).component_mul(&self.block_std)
    }

    /// `⟨vᵗ, F̃ wᵗ⟩`, which equals `⟨v, (K⁻¹ − C⁻¹) w⟩`.
    pub fn fisher_form(&self, v: &Coefficients, w: &Coefficients) -> f64 {
        if self.block.is_empty() {
            return 0.0;
        }
        let vb = self.gather(v);
        let wb = self.gather(w);
        vb.dot(&(&self.fisher * wb))
    }

    /// `⟨a, C⁻¹ b⟩`.
    pub fn prior_inner(&self, a: &Coefficients, b: &Coefficients) -> f64 {
        a.iter()
            .zip(b.iter())
            .zip(self.eigenvalues.iter())
            .map(|((x, y), l)| x * y / l)
            .sum()
    }

    /// `⟨a, K⁻¹ b⟩ = ⟨a, C⁻¹ b⟩ + ⟨aᵗ, F̃ bᵗ⟩`.
    pub fn precision_inner(&self, a: &Coefficients, b: &Coefficients) -> f64 {
        self.prior_inner(a, b) + self.fisher_form(a, b)
    }

    /// `g(u) = −K(u){(C⁻¹ − K⁻¹(u))u + DΦ(u)}`: on the block
    /// `Kᵗ(F̃uᵗ − DΦᵗ)`, on the tail `−λ_j² DΦ_j`.
    pub fn natural_gradient(&self, u: &Coefficients, dphi: &Coefficients) -> Coefficients {
        let mut g = DVector::from_fn(u.len(), |j, _| -self.eigenvalues[j] * dphi[j]);
        if !self.block.is_empty() {
            let rhs = &self.fisher * self.gather(u) - self.gather(dphi);
            let gb = self.block_solve(&rhs);
            for (a, &j) in self.block.iter().enumerate() {
                g[j] = gb[a];
            }
        }
        g
    }

    /// Draw from `N(0, K(u))` using one standard normal per mode in index
    /// order: block part `(Λ⁻¹L)⁻ᵀ z`, tail part `λ_j z_j`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Coefficients {
        let z = DVector::from_fn(self.eigenvalues.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        self.transform_noise(&z)
    }

    /// Maps standard normal `z` to a `N(0, K)` draw.
    pub fn transform_noise(&self, z: &DVector<f64>) -> Coefficients {
        let mut v = DVector::from_fn(z.len(), |j, _| self.eigenvalues[j].sqrt() * z[j]);
        if !self.block.is_empty() {
            let mut zb = self.gather(z);
            self.chol
                .l_dirty()
                .tr_solve_lower_triangular_mut(&mut zb);
            for (a, &j) in self.block.iter().enumerate() {
                v[j] = self.block_std[a] * zb[a];
            }
        }
        v
    }

    /// `log λ(w; u)`: density of `N(√h/2 g, K)` against `N(0, C)` at `w`.
    pub fn lambda_log(&self, g: &Coefficients, w: &Coefficients, h: f64) -> f64 {
        let gkg = self.precision_inner(g, g);
        let gkw = self.precision_inner(g, w);
        -h / 8.0 * gkg + h.sqrt() / 2.0 * gkw - 0.5 * self.fisher_form(w, w) + self.half_logdet
    }
}

/// Assembles `F̃` on `block` at `u` and factors the split metric.
pub fn build_metric<M: ForwardModel + ?Sized>(
    model: &M,
    prior: &KLPrior,
    u: &Coefficients,
    block: &[usize],
) -> Result<SplitMetric, MetricError> {
    let fisher = if block.is_empty() {
        DMatrix::zeros(0, 0)
    } else {
        model.fisher_block(u, block)?
    };
    SplitMetric::new(prior, block.to_vec(), fisher)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::Hyper;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn unit_prior(n: usize) -> KLPrior {
        // σ² = 0.5 makes mode 0 unit-variance.
        KLPrior::cosine_1d(
            Hyper {
                alpha: 1.0,
                sigma2: 0.5,
                s: 1.0,
            },
            n,
            (-1.0, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn two_by_two_hand_case() {
        // Mode 0 has unit variance; F̃ = diag(3, 0) only touches mode 0.
        let prior = unit_prior(2);
        assert_eq!(prior.eigenvalues()[0], 1.0);
        let fisher = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 0.0]);
        let metric = SplitMetric::new(&prior, vec![0, 1], fisher).unwrap();
        let prec = metric.block_precision();
        assert_eq!(prec[(0, 0)], 4.0);
        assert!((prec[(1, 1)] * prior.eigenvalues()[1] - 1.0).abs() < 1e-15);
        assert!((metric.half_logdet() - 0.693_147_180_559_945_3).abs() < 1e-15);
        let w = DVector::from_vec(vec![1.0, 0.0]);
        let g = DVector::zeros(2);
        let expected = -0.806_852_819_440_054_7;
        assert!((metric.lambda_log(&g, &w, 0.7) - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_fisher_is_prior() {
        let prior = unit_prior(6);
        let metric = SplitMetric::new(&prior, vec![1, 3, 4], DMatrix::zeros(3, 3)).unwrap();
        assert_eq!(metric.half_logdet(), 0.0);
        let bc = metric.block_chol();
        for (a, &j) in [1usize, 3, 4].iter().enumerate() {
            assert_eq!(bc[(a, a)], 1.0 / prior.std_devs()[j]);
        }
        let u = prior.sample(&mut ChaCha20Rng::seed_from_u64(1));
        let dphi = prior.sample(&mut ChaCha20Rng::seed_from_u64(2));
        let g = metric.natural_gradient(&u, &dphi);
        let expected = -prior.apply_spectral(1.0, &dphi);
        assert!((g - expected).amax() < 1e-15);
        let a = metric.sample(&mut ChaCha20Rng::seed_from_u64(5));
        let b = prior.sample(&mut ChaCha20Rng::seed_from_u64(5));
        assert_eq!(a, b);
        let w = prior.sample(&mut ChaCha20Rng::seed_from_u64(6));
        assert_eq!(metric.lambda_log(&DVector::zeros(6), &w, 1.0), 0.0);
    }

    #[test]
    fn scalar_natural_gradient() {
        let prior = unit_prior(1);
        let metric = SplitMetric::new(&prior, vec![0], DMatrix::from_element(1, 1, 1.0)).unwrap();
        let (u, y) = (0.8, 1.7);
        let g = metric.natural_gradient(&DVector::from_vec(vec![u]), &DVector::from_vec(vec![u - y]));
        assert!((g[0] - y / 2.0).abs() < 1e-15);
    }

    #[test]
    fn block_selection() {
        let prior = KLPrior::unit_square(
            Hyper {
                alpha: 0.0,
                sigma2: 1.0,
                s: 1.1,
            },
            10,
        )
        .unwrap();
        let sq = BlockSpec::Square(5).resolve(&prior);
        assert_eq!(sq.len(), 25);
        assert!(sq.iter().all(|&j| {
            let (a, b) = prior.index_pair(j).unwrap();
            a < 5 && b < 5
        }));
        assert_eq!(BlockSpec::Leading(25).resolve(&prior), (0..25).collect::<Vec<_>>());
        assert!(BlockSpec::None.resolve(&prior).is_empty());
        assert_eq!(BlockSpec::All.resolve(&prior).len(), 100);
    }

    #[test]
    fn bad_blocks() {
        let prior = unit_prior(3);
        assert_eq!(
            SplitMetric::new(&prior, vec![0, 0], DMatrix::zeros(2, 2)).unwrap_err(),
            MetricError::BadIndex(0)
        );
        assert!(matches!(
            SplitMetric::new(&prior, vec![0], DMatrix::zeros(2, 2)),
            Err(MetricError::BlockSize { .. })
        ));
    }
}
