//! Steady groundwater flow `−∇·(e^{u}∇p) = 0` on the unit square.
//!
//! Dirichlet data `p = x₁` on `x₂ = 0` and `p = 1 − x₁` on `x₂ = 1`, no-flux on
//! `x₁ ∈ {0, 1}`. The discretization is cell-centered finite differences with
//! harmonic averaging of the permeability on interior faces; the resulting
//! matrix is a symmetric M-matrix stored in band form (bandwidth `nx`).
//!
//! The discrete residual is `R(p, k) = A(k) p − b(k)`. Both `A` and `b` depend
//! on the cell permeabilities `k_c = exp(u(x_c))`, so sensitivities are taken
//! of the full residual.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::banded::{BandedCholesky, BandedSpd};
use super::{
    check_block, check_input, incremental_solves, symmetrize, EvalRequest, Evaluation,
    ForwardModel, GaussianNoise, ModelError, SolveCounter, SolveCounts,
};
use crate::prior::{Coefficients, KLPrior};

/// Uniform `nx × ny` cell mesh on `[0, 1]²`. Cell `(i, j)` has index
/// `j * nx + i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mesh {
    pub nx: usize,
    pub ny: usize,
}

impl Mesh {
    pub fn new(nx: usize, ny: usize) -> Self {
        assert!(nx >= 2 && ny >= 2, "mesh needs at least 2×2 cells");
        Self { nx, ny }
    }

    pub fn square(n: usize) -> Self {
        Self::new(n, n)
    }

    pub fn hx(&self) -> f64 {
        1.0 / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        1.0 / self.ny as f64
    }

    pub fn cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn center(&self, c: usize) -> (f64, f64) {
        let (i, j) = (c % self.nx, c / self.nx);
        ((i as f64 + 0.5) * self.hx(), (j as f64 + 0.5) * self.hy())
    }

    pub fn centers(&self) -> Vec<(f64, f64)> {
        (0..self.cells()).map(|c| self.center(c)).collect()
    }
}

/// Bilinear interpolation from cell centers to observation stations.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationOperator {
    stations: Vec<(f64, f64)>,
    stencils: Vec<[(usize, f64); 4]>,
}

impl ObservationOperator {
    pub fn new(mesh: &Mesh, stations: &[(f64, f64)]) -> Result<Self, ModelError> {
        let stencils = stations
            .iter()
            .map(|&(x, y)| {
                let fx = x / mesh.hx() - 0.5;
                let fy = y / mesh.hy() - 0.5;
                let eps = 1e-12;
                if !(fx >= -eps && fx <= mesh.nx as f64 - 1.0 + eps)
                    || !(fy >= -eps && fy <= mesh.ny as f64 - 1.0 + eps)
                {
                    return Err(ModelError::StationOutsideMesh(x, y));
                }
                let i0 = (fx.floor().max(0.0) as usize).min(mesh.nx - 2);
                let j0 = (fy.floor().max(0.0) as usize).min(mesh.ny - 2);
                let tx = fx - i0 as f64;
                let ty = fy - j0 as f64;
                Ok([
                    (mesh.index(i0, j0), (1.0 - tx) * (1.0 - ty)),
                    (mesh.index(i0 + 1, j0), tx * (1.0 - ty)),
                    (mesh.index(i0, j0 + 1), (1.0 - tx) * ty),
                    (mesh.index(i0 + 1, j0 + 1), tx * ty),
                ])
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            stations: stations.to_vec(),
            stencils,
        })
    }

    pub fn stations(&self) -> &[(f64, f64)] {
        &self.stations
    }

    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }

    pub fn apply(&self, field: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.stencils.len(),
            self.stencils
                .iter()
                .map(|st| st.iter().map(|&(c, w)| w * field[c]).sum()),
        )
    }

    /// `Oᵀ w` as a cell vector.
    pub fn apply_transpose(&self, weights: &DVector<f64>, cells: usize) -> Vec<f64> {
        let mut out = vec![0.0; cells];
        for (st, &w) in self.stencils.iter().zip(weights.iter()) {
            for &(c, a) in st {
                out[c] += a * w;
            }
        }
        out
    }

    fn row(&self, k: usize, cells: usize) -> Vec<f64> {
        let mut out = vec![0.0; cells];
        for &(c, a) in &self.stencils[k] {
            out[c] += a;
        }
        out
    }
}

/// `33` (or `count`) stations equally spaced in angle on the circle of radius
/// `0.25` centred at `(0.5, 0.5)`, starting at angle 0.
pub fn circle_stations(count: usize) -> Vec<(f64, f64)> {
    (0..count)
        .map(|k| {
            let theta = 2.0 * PI * k as f64 / count as f64;
            (0.5 + 0.25 * theta.cos(), 0.5 + 0.25 * theta.sin())
        })
        .collect()
}

/// Truth field `u†_j = λ_j sin((i₁+½)² + (i₂+½)²)` on a 2D cosine prior.
pub fn truth_coefficients(prior: &KLPrior) -> Coefficients {
    DVector::from_fn(prior.dim(), |j, _| {
        let (i1, i2) = prior
            .index_pair(j)
            .expect("truth field is defined for 2D priors");
        let a = i1 as f64 + 0.5;
        let b = i2 as f64 + 0.5;
        prior.std_devs()[j] * (a * a + b * b).sin()
    })
}

/// Discrete pressure at the cell centers of a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct PressureField {
    pub mesh: Mesh,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Face {
    a: usize,
    b: usize,
    w: f64,
}

#[derive(Debug, Clone, Copy)]
struct BoundaryFace {
    c: usize,
    w: f64,
    value: f64,
}

struct ForwardState {
    k: Vec<f64>,
    p: Vec<f64>,
    chol: BandedCholesky,
}

/// Immutable discretization of the PDE for one mesh, prior and station set.
#[derive(Debug, Clone)]
pub struct GroundwaterSolver {
    mesh: Mesh,
    basis: DMatrix<f64>,
    faces: Vec<Face>,
    boundary: Vec<BoundaryFace>,
    obs: ObservationOperator,
}

impl GroundwaterSolver {
    pub fn new(mesh: Mesh, prior: &KLPrior, stations: &[(f64, f64)]) -> Result<Self, ModelError> {
        let basis = prior.basis_matrix(&mesh.centers())?;
        let obs = ObservationOperator::new(&mesh, stations)?;
        let (hx, hy) = (mesh.hx(), mesh.hy());
        let mut faces = Vec::new();
        for j in 0..mesh.ny {
            for i in 0..mesh.nx {
                let c = mesh.index(i, j);
                if i + 1 < mesh.nx {
                    faces.push(Face {
                        a: c,
                        b: mesh.index(i + 1, j),
                        w: hy / hx,
                    });
                }
                if j + 1 < mesh.ny {
                    faces.push(Face {
                        a: c,
                        b: mesh.index(i, j + 1),
                        w: hx / hy,
                    });
                }
            }
        }
        let mut boundary = Vec::new();
        for i in 0..mesh.nx {
            let x = (i as f64 + 0.5) * hx;
            boundary.push(BoundaryFace {
                c: mesh.index(i, 0),
                w: 2.0 * hx / hy,
                value: x,
            });
            boundary.push(BoundaryFace {
                c: mesh.index(i, mesh.ny - 1),
                w: 2.0 * hx / hy,
                value: 1.0 - x,
            });
        }
        Ok(Self {
            mesh,
            basis,
            faces,
            boundary,
            obs,
        })
    }

    pub fn mesh(&self) -> Mesh {
        self.mesh
    }

    pub fn observation_operator(&self) -> &ObservationOperator {
        &self.obs
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Log-permeability `u(x_c)` at cell centers.
    pub fn log_permeability(&self, u: &Coefficients) -> DVector<f64> {
        &self.basis * u
    }

    /// Assembled stiffness matrix and right-hand side for permeabilities `k`.
    pub fn assemble(&self, k: &[f64]) -> (BandedSpd, Vec<f64>) {
        let mut a = BandedSpd::zeros(self.mesh.cells(), self.mesh.nx);
        let mut rhs = vec![0.0; self.mesh.cells()];
        for f in &self.faces {
            let t = f.w * harmonic(k[f.a], k[f.b]);
            a.add(f.a, f.a, t);
            a.add(f.b, f.b, t);
            a.add(f.a, f.b, -t);
        }
        for bf in &self.boundary {
            let t = bf.w * k[bf.c];
            a.add(bf.c, bf.c, t);
            rhs[bf.c] += t * bf.value;
        }
        (a, rhs)
    }

    fn permeability(&self, u: &Coefficients) -> Result<Vec<f64>, ModelError> {
        let k: Vec<f64> = self.log_permeability(u).iter().map(|v| v.exp()).collect();
        if let Some(c) = k.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(ModelError::SolverFailure(format!(
                "permeability {} at cell {c} is not positive finite",
                k[c]
            )));
        }
        Ok(k)
    }

    fn forward(&self, u: &Coefficients) -> Result<ForwardState, ModelError> {
        let k = self.permeability(u)?;
        let (a, rhs) = self.assemble(&k);
        let chol = a
            .factor()
            .map_err(|e| ModelError::SolverFailure(e.to_string()))?;
        let p = chol.solve(&rhs);
        if p.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::SolverFailure("non-finite pressure".into()));
        }
        Ok(ForwardState { k, p, chol })
    }

    pub fn solve(&self, u: &Coefficients) -> Result<PressureField, ModelError> {
        Ok(PressureField {
            mesh: self.mesh,
            values: self.forward(u)?.p,
        })
    }

    pub fn observe(&self, field: &PressureField) -> Result<DVector<f64>, ModelError> {
        if field.mesh != self.mesh || field.values.len() != self.mesh.cells() {
            return Err(ModelError::DimensionMismatch {
                expected: self.mesh.cells(),
                got: field.values.len(),
            });
        }
        Ok(self.obs.apply(&field.values))
    }

    /// `s_c = μᵀ ∂R/∂k_c` for a cell vector `μ`.
    fn cell_sensitivity(&self, st: &ForwardState, mu: &[f64]) -> Vec<f64> {
        let (k, p) = (&st.k, &st.p);
        let mut s = vec![0.0; self.mesh.cells()];
        for f in &self.faces {
            let (ka, kb) = (k[f.a], k[f.b]);
            let denom = (ka + kb) * (ka + kb);
            let d = (mu[f.a] - mu[f.b]) * (p[f.a] - p[f.b]);
            s[f.a] += f.w * 2.0 * kb * kb / denom * d;
            s[f.b] += f.w * 2.0 * ka * ka / denom * d;
        }
        for bf in &self.boundary {
            s[bf.c] += bf.w * mu[bf.c] * (p[bf.c] - bf.value);
        }
        s
    }

    /// `(∂R/∂k) δk` as a cell vector.
    fn residual_direction(&self, st: &ForwardState, dk: &[f64]) -> Vec<f64> {
        let (k, p) = (&st.k, &st.p);
        let mut q = vec![0.0; self.mesh.cells()];
        for f in &self.faces {
            let (ka, kb) = (k[f.a], k[f.b]);
            let denom = (ka + kb) * (ka + kb);
            let dt = f.w * 2.0 * (kb * kb * dk[f.a] + ka * ka * dk[f.b]) / denom;
            let flux = dt * (p[f.a] - p[f.b]);
            q[f.a] += flux;
            q[f.b] -= flux;
        }
        for bf in &self.boundary {
            q[bf.c] += bf.w * dk[bf.c] * (p[bf.c] - bf.value);
        }
        q
    }

    /// `dΦ/du = −Bᵀ(s ∘ k)` with `s` from the adjoint state.
    fn adjoint_gradient(&self, st: &ForwardState, weighted: &DVector<f64>) -> Coefficients {
        let mut adj = self.obs.apply_transpose(weighted, self.mesh.cells());
        st.chol.solve_in_place(&mut adj);
        let s = self.cell_sensitivity(st, &adj);
        let sk = DVector::from_iterator(s.len(), s.iter().zip(&st.k).map(|(a, b)| -a * b));
        self.basis.tr_mul(&sk)
    }

    /// `m × |block|` Jacobian of `G` on the block modes.
    fn jacobian(&self, st: &ForwardState, block: &[usize]) -> DMatrix<f64> {
        let m = self.obs.len();
        let cells = self.mesh.cells();
        let mut jac = DMatrix::zeros(m, block.len());
        if m < block.len() {
            for r in 0..m {
                let mut mu = self.obs.row(r, cells);
                st.chol.solve_in_place(&mut mu);
                let s = self.cell_sensitivity(st, &mu);
                for (col, &j) in block.iter().enumerate() {
                    let mut acc = 0.0;
                    for c in 0..cells {
                        acc += s[c] * st.k[c] * self.basis[(c, j)];
                    }
                    jac[(r, col)] = -acc;
                }
            }
        } else {
            for (col, &j) in block.iter().enumerate() {
                let dk: Vec<f64> = (0..cells).map(|c| st.k[c] * self.basis[(c, j)]).collect();
                let mut dp = self.residual_direction(st, &dk);
                st.chol.solve_in_place(&mut dp);
                let dg = self.obs.apply(&dp);
                for r in 0..m {
                    jac[(r, col)] = -dg[r];
                }
            }
        }
        jac
    }
}

fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// Groundwater inverse problem: PDE solver plus observed data.
#[derive(Debug, Clone)]
pub struct GroundwaterModel {
    solver: Arc<GroundwaterSolver>,
    noise: GaussianNoise,
    counter: SolveCounter,
}

impl GroundwaterModel {
    pub fn new(solver: Arc<GroundwaterSolver>, noise: GaussianNoise) -> Result<Self, ModelError> {
        if noise.len() != solver.obs.len() {
            return Err(ModelError::DimensionMismatch {
                expected: solver.obs.len(),
                got: noise.len(),
            });
        }
        Ok(Self {
            solver,
            noise,
            counter: SolveCounter::default(),
        })
    }

    pub fn solver(&self) -> &GroundwaterSolver {
        &self.solver
    }

    /// Same solver and data with the solve counter reset.
    pub fn fresh(&self) -> Self {
        Self {
            solver: Arc::clone(&self.solver),
            noise: self.noise.clone(),
            counter: SolveCounter::default(),
        }
    }

    pub fn solve_forward(&self, u: &Coefficients) -> Result<PressureField, ModelError> {
        check_input(u, self.dim())?;
        self.counter.forward();
        self.solver.solve(u)
    }

    pub fn observe(&self, field: &PressureField) -> Result<DVector<f64>, ModelError> {
        self.solver.observe(field)
    }

    fn forward_counted(&self, u: &Coefficients) -> Result<ForwardState, ModelError> {
        check_input(u, self.dim())?;
        self.counter.forward();
        self.solver.forward(u)
    }

    fn fisher_from(&self, st: &ForwardState, block: &[usize]) -> DMatrix<f64> {
        self.counter
            .tangent(incremental_solves(block.len(), self.obs_count()));
        let jac = self.solver.jacobian(st, block);
        symmetrize(jac.transpose() * self.noise.precision() * jac)
    }
}

impl ForwardModel for GroundwaterModel {
    fn dim(&self) -> usize {
        self.solver.dim()
    }

    fn obs_count(&self) -> usize {
        self.solver.obs.len()
    }

    fn noise(&self) -> &GaussianNoise {
        &self.noise
    }

    fn forward_map(&self, u: &Coefficients) -> Result<DVector<f64>, ModelError> {
        let st = self.forward_counted(u)?;
        Ok(self.solver.obs.apply(&st.p))
    }

    fn gradient(&self, u: &Coefficients) -> Result<Coefficients, ModelError> {
        let st = self.forward_counted(u)?;
        let g = self.solver.obs.apply(&st.p);
        self.counter.adjoint(1);
        Ok(self
            .solver
            .adjoint_gradient(&st, &self.noise.weighted_residual(&g)))
    }

    fn fisher_block(&self, u: &Coefficients, block: &[usize]) -> Result<DMatrix<f64>, ModelError> {
        check_block(block, self.dim())?;
        let st = self.forward_counted(u)?;
        Ok(self.fisher_from(&st, block))
    }

    fn evaluate(&self, u: &Coefficients, request: EvalRequest<'_>) -> Result<Evaluation, ModelError> {
        if let EvalRequest::Metric(block) = request {
            check_block(block, self.dim())?;
        }
        let st = self.forward_counted(u)?;
        let g = self.solver.obs.apply(&st.p);
        let potential = self.noise.misfit(&g);
        let gradient = match request {
            EvalRequest::Potential => None,
            _ => {
                self.counter.adjoint(1);
                Some(
                    self.solver
                        .adjoint_gradient(&st, &self.noise.weighted_residual(&g)),
                )
            }
        };
        let fisher = match request {
            EvalRequest::Metric(block) => Some(self.fisher_from(&st, block)),
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

/// Synthetic data set: truth, stations, clean and noisy observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticData {
    pub mesh: Mesh,
    pub stations: Vec<(f64, f64)>,
    pub truth: Vec<f64>,
    pub clean: Vec<f64>,
    pub data: Vec<f64>,
    pub sigma_y2: f64,
}

/// Runs the forward map at `truth` on `solver`'s mesh and adds iid
/// `N(0, σ_y²)` noise, one normal per station in order.
pub fn generate_data<R: Rng + ?Sized>(
    solver: &GroundwaterSolver,
    truth: &Coefficients,
    sigma_y: f64,
    rng: &mut R,
) -> Result<SyntheticData, ModelError> {
    if !(sigma_y >= 0.0) || !sigma_y.is_finite() {
        return Err(ModelError::BadNoiseCovariance);
    }
    check_input(truth, solver.dim())?;
    let clean = solver.obs.apply(&solver.forward(truth)?.p);
    let data = clean
        .iter()
        .map(|&g| {
            let z: f64 = rng.sample(StandardNormal);
            g + sigma_y * z
        })
        .collect();
    Ok(SyntheticData {
        mesh: solver.mesh,
        stations: solver.obs.stations().to_vec(),
        truth: truth.iter().copied().collect(),
        clean: clean.iter().copied().collect(),
        data,
        sigma_y2: sigma_y * sigma_y,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::Hyper;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn prior(cap: usize) -> KLPrior {
        KLPrior::unit_square(
            Hyper {
                alpha: 0.0,
                sigma2: 1.0,
                s: 1.1,
            },
            cap,
        )
        .unwrap()
    }

    #[test]
    fn stations_on_circle() {
        let st = circle_stations(33);
        assert_eq!(st.len(), 33);
        assert!((st[0].0 - 0.75).abs() < 1e-15 && (st[0].1 - 0.5).abs() < 1e-15);
        for (x, y) in st {
            let r = ((x - 0.5).powi(2) + (y - 0.5).powi(2)).sqrt();
            assert!((r - 0.25).abs() < 1e-14);
        }
    }

    #[test]
    fn observation_reproduces_constants_and_linears() {
        let mesh = Mesh::square(12);
        let st = circle_stations(33);
        let obs = ObservationOperator::new(&mesh, &st).unwrap();
        let constant = vec![2.5; mesh.cells()];
        assert!(obs.apply(&constant).iter().all(|v| (v - 2.5).abs() < 1e-14));
        let linear: Vec<f64> = mesh.centers().iter().map(|c| c.0).collect();
        for (v, s) in obs.apply(&linear).iter().zip(&st) {
            assert!((v - s.0).abs() < 1e-14);
        }
    }

    #[test]
    fn station_outside_rejected() {
        let mesh = Mesh::square(4);
        assert!(matches!(
            ObservationOperator::new(&mesh, &[(0.05, 0.5)]),
            Err(ModelError::StationOutsideMesh(..))
        ));
    }

    #[test]
    fn maximum_principle() {
        let p = prior(3);
        let solver = GroundwaterSolver::new(Mesh::square(16), &p, &circle_stations(33)).unwrap();
        let u = p.sample(&mut ChaCha20Rng::seed_from_u64(2));
        for u in [DVector::zeros(p.dim()), u] {
            let f = solver.solve(&u).unwrap();
            assert!(f.values.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn noiseless_truth_has_zero_misfit() {
        let p = prior(4);
        let solver = Arc::new(
            GroundwaterSolver::new(Mesh::square(10), &p, &circle_stations(33)).unwrap(),
        );
        let truth = truth_coefficients(&p);
        let d = generate_data(&solver, &truth, 0.0, &mut ChaCha20Rng::seed_from_u64(0)).unwrap();
        assert_eq!(d.data, d.clean);
        let noise = GaussianNoise::isotropic(DVector::from_vec(d.data), 1e-4).unwrap();
        let model = GroundwaterModel::new(solver, noise).unwrap();
        assert_eq!(model.potential(&truth).unwrap(), 0.0);
        assert!(model.gradient(&truth).unwrap().norm() < 1e-12);
    }

    #[test]
    fn evaluate_shares_forward_solve() {
        let p = prior(3);
        let solver = Arc::new(
            GroundwaterSolver::new(Mesh::square(8), &p, &circle_stations(33)).unwrap(),
        );
        let noise = GaussianNoise::isotropic(DVector::from_element(33, 0.5), 1e-2).unwrap();
        let model = GroundwaterModel::new(solver, noise).unwrap();
        let u = p.sample(&mut ChaCha20Rng::seed_from_u64(4));
        let e = model.evaluate(&u, EvalRequest::Metric(&[0, 1, 3])).unwrap();
        assert_eq!(
            model.solve_counts(),
            SolveCounts {
                forward: 1,
                adjoint: 1,
                tangent: 3
            }
        );
        assert_eq!(e.potential, model.potential(&u).unwrap());
        let g = model.gradient(&u).unwrap();
        assert!((e.gradient.unwrap() - g).norm() < 1e-14);
        let f = model.fisher_block(&u, &[0, 1, 3]).unwrap();
        assert!((e.fisher.unwrap() - f).norm() < 1e-14);
    }

    #[test]
    fn rows_and_columns_agree() {
        let p = prior(6);
        let stations = circle_stations(5);
        let solver = GroundwaterSolver::new(Mesh::square(8), &p, &stations).unwrap();
        let u = p.sample(&mut ChaCha20Rng::seed_from_u64(9));
        let st = solver.forward(&u).unwrap();
        let block: Vec<usize> = (0..8).collect();
        // 5 rows < 8 columns: adjoint rows
        let rows = solver.jacobian(&st, &block);
        let mut cols = DMatrix::zeros(5, 8);
        for (c, &j) in block.iter().enumerate() {
            cols.set_column(c, &solver.jacobian(&st, &[j]).column(0));
        }
        assert!((rows - cols).amax() < 1e-12);
    }
}
