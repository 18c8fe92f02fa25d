mod common;

use std::sync::Arc;

use common::{groundwater_prior, groundwater_problem};
use geomcmc::geometry::BlockSpec;
use geomcmc::model::{
    circle_stations, generate_data, truth_coefficients, ForwardModel, GaussianNoise,
    GroundwaterModel, GroundwaterSolver, Mesh,
};
use geomcmc::prior::Coefficients;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn point(seed: u64, scale: f64, prior: &geomcmc::prior::KLPrior) -> Coefficients {
    prior.sample(&mut ChaCha20Rng::seed_from_u64(seed)) * scale
}

#[test]
fn adjoint_gradient_matches_central_differences() {
    let (prior, model) = groundwater_problem(10, 20, 3);
    let u = point(1, 1.0, &prior);
    let g = model.gradient(&u).unwrap();
    let step = 1e-6;
    let mut worst: f64 = 0.0;
    for j in 0..prior.dim() {
        let mut up = u.clone();
        up[j] += step;
        let mut dn = u.clone();
        dn[j] -= step;
        let fd = (model.potential(&up).unwrap() - model.potential(&dn).unwrap()) / (2.0 * step);
        let rel = (g[j] - fd).abs() / fd.abs().max(g[j].abs());
        worst = worst.max(rel);
    }
    assert!(worst < 1e-5, "worst relative error {worst:.2e}");
}

#[test]
fn fisher_block_matches_differenced_jacobian() {
    let (prior, model) = groundwater_problem(10, 20, 3);
    let u = point(2, 1.0, &prior);
    let block = BlockSpec::Square(5).resolve(&prior);
    let f = model.fisher_block(&u, &block).unwrap();
    let step = 1e-6;
    let cols: Vec<_> = block
        .iter()
        .map(|&j| {
            let mut up = u.clone();
            up[j] += step;
            let mut dn = u.clone();
            dn[j] -= step;
            (model.forward_map(&up).unwrap() - model.forward_map(&dn).unwrap()) / (2.0 * step)
        })
        .collect();
    let jac = DMatrix::from_columns(&cols);
    let oracle = jac.transpose() * model.noise().precision() * &jac;
    let err = (&f - &oracle).abs().max() / oracle.abs().max();
    assert!(err < 1e-6, "relative error {err:.2e}");
}

/// Dense five-point system for unit permeability, built cell by cell from
/// neighbour lists and solved by LU.
fn dense_unit_permeability(n: usize) -> DVector<f64> {
    let h = 1.0 / n as f64;
    let mut a = DMatrix::zeros(n * n, n * n);
    let mut b = DVector::zeros(n * n);
    let idx = |i: usize, j: usize| j * n + i;
    for j in 0..n {
        for i in 0..n {
            let c = idx(i, j);
            let x = (i as f64 + 0.5) * h;
            let neighbours = [
                (i > 0).then(|| idx(i - 1, j)),
                (i + 1 < n).then(|| idx(i + 1, j)),
                (j > 0).then(|| idx(i, j - 1)),
                (j + 1 < n).then(|| idx(i, j + 1)),
            ];
            for nb in neighbours.into_iter().flatten() {
                a[(c, c)] += 1.0;
                a[(c, nb)] -= 1.0;
            }
            // Dirichlet rows sit half a cell from the boundary.
            if j == 0 {
                a[(c, c)] += 2.0;
                b[c] += 2.0 * x;
            }
            if j == n - 1 {
                a[(c, c)] += 2.0;
                b[c] += 2.0 * (1.0 - x);
            }
        }
    }
    a.lu().solve(&b).unwrap()
}

#[test]
fn unit_permeability_matches_dense_oracle() {
    let prior = groundwater_prior();
    let solver = GroundwaterSolver::new(Mesh::square(10), &prior, &circle_stations(33)).unwrap();
    let p = solver.solve(&Coefficients::zeros(prior.dim())).unwrap();
    let oracle = dense_unit_permeability(10);
    let err = p.values.iter().zip(oracle.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-10, "max error {err:.2e}");
}

#[test]
fn stations_match_nearest_cell_within_mesh_width() {
    let prior = groundwater_prior();
    let mesh = Mesh::square(40);
    let solver = GroundwaterSolver::new(mesh, &prior, &circle_stations(33)).unwrap();
    let field = solver.solve(&Coefficients::zeros(prior.dim())).unwrap();
    let obs = solver.observe(&field).unwrap();
    let centers = mesh.centers();
    for (k, &(x, y)) in circle_stations(33).iter().enumerate() {
        let nearest = (0..mesh.cells())
            .min_by(|&a, &b| {
                let d = |c: usize| (centers[c].0 - x).powi(2) + (centers[c].1 - y).powi(2);
                d(a).total_cmp(&d(b))
            })
            .unwrap();
        // |∇p| ≤ √2 for unit permeability; the nearest centre is within h/√2.
        assert!((obs[k] - field.values[nearest]).abs() <= mesh.hx(), "station {k}");
    }
}

#[test]
fn station_values_converge_under_refinement() {
    let prior = groundwater_prior();
    let truth = truth_coefficients(&prior);
    let observed: Vec<DVector<f64>> = [20, 40, 80]
        .iter()
        .map(|&n| {
            let solver = GroundwaterSolver::new(Mesh::square(n), &prior, &circle_stations(33)).unwrap();
            solver.observe(&solver.solve(&truth).unwrap()).unwrap()
        })
        .collect();
    let coarse = (&observed[0] - &observed[1]).amax();
    let fine = (&observed[1] - &observed[2]).amax();
    // Second order would give a ratio near 4.
    let ratio = coarse / fine;
    assert!(coarse < 1e-2 && ratio > 2.5, "differences {coarse:.2e}, {fine:.2e}");
}

#[test]
fn fisher_equals_hessian_at_zero_misfit() {
    let prior = groundwater_prior();
    let solver = Arc::new(GroundwaterSolver::new(Mesh::square(10), &prior, &circle_stations(33)).unwrap());
    let u = point(3, 0.5, &prior);
    let clean = solver.observe(&solver.solve(&u).unwrap()).unwrap();
    let model = GroundwaterModel::new(solver, GaussianNoise::isotropic(clean, 1e-4).unwrap()).unwrap();
    assert!(model.potential(&u).unwrap() < 1e-20);
    let block = BlockSpec::Square(2).resolve(&prior);
    let fisher = model.fisher_block(&u, &block).unwrap();
    let step = 1e-5;
    let hessian = DMatrix::from_fn(block.len(), block.len(), |a, b| {
        let mut up = u.clone();
        up[block[b]] += step;
        let mut dn = u.clone();
        dn[block[b]] -= step;
        (model.gradient(&up).unwrap()[block[a]] - model.gradient(&dn).unwrap()[block[a]]) / (2.0 * step)
    });
    let err = (&hessian - &fisher).amax() / fisher.amax();
    assert!(err < 1e-5, "relative error {err:.2e}");
}

#[test]
fn fisher_block_is_psd() {
    let (prior, model) = groundwater_problem(10, 20, 3);
    let block = BlockSpec::Square(5).resolve(&prior);
    for seed in 0..3 {
        let f = model.fisher_block(&point(seed, 1.0, &prior), &block).unwrap();
        let min = f.clone().symmetric_eigenvalues().min();
        assert!(min >= -1e-10 * f.trace(), "min eigenvalue {min}");
    }
}

#[test]
fn data_noise_has_requested_variance() {
    let prior = groundwater_prior();
    let solver = GroundwaterSolver::new(Mesh::square(10), &prior, &circle_stations(33)).unwrap();
    let truth = truth_coefficients(&prior);
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let sigma = 1e-2;
    let (mut sum, mut count) = (0.0, 0usize);
    for _ in 0..10_000 {
        let d = generate_data(&solver, &truth, sigma, &mut rng).unwrap();
        for (y, g) in d.data.iter().zip(&d.clean) {
            sum += (y - g).powi(2);
            count += 1;
        }
    }
    let var = sum / count as f64;
    assert!((var / (sigma * sigma) - 1.0).abs() < 0.05, "variance {var:.3e}");

    let again = generate_data(&solver, &truth, sigma, &mut ChaCha20Rng::seed_from_u64(1)).unwrap();
    let same = generate_data(&solver, &truth, sigma, &mut ChaCha20Rng::seed_from_u64(1)).unwrap();
    assert_eq!(again, same);
    let exact = generate_data(&solver, &truth, 0.0, &mut rng).unwrap();
    assert_eq!(exact.data, exact.clean);
}

#[test]
fn solve_counts_follow_the_contract() {
    let (prior, model) = groundwater_problem(10, 20, 3);
    let u = point(4, 0.5, &prior);
    let block = BlockSpec::Square(5).resolve(&prior);
    let before = model.solve_counts();
    model.potential(&u).unwrap();
    model.gradient(&u).unwrap();
    model.fisher_block(&u, &block).unwrap();
    let used = model.solve_counts() - before;
    assert_eq!(used.forward, 3);
    assert_eq!(used.adjoint, 1);
    assert_eq!(used.tangent, 25);
}
