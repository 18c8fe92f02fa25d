#![allow(dead_code)]

use std::sync::Arc;

use geomcmc::geometry::BlockSpec;
use geomcmc::model::{
    circle_stations, generate_data, truth_coefficients, GaussianNoise, GroundwaterModel,
    GroundwaterSolver, LinearGaussianModel, Mesh,
};
use geomcmc::prior::{Hyper, KLPrior};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

/// n = 10 cosine prior on [0, 1] observed through point evaluations at eight
/// locations with noise variance 0.05.
pub fn linear_problem() -> (KLPrior, LinearGaussianModel) {
    let prior = KLPrior::cosine_1d(
        Hyper {
            alpha: 1.0,
            sigma2: 1.0,
            s: 1.0,
        },
        10,
        (0.0, 1.0),
    )
    .unwrap();
    let points: Vec<(f64, f64)> = (0..8).map(|k| ((k as f64 + 0.5) / 8.0, 0.0)).collect();
    let design = prior.basis_matrix(&points).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let truth = prior.sample(&mut rng);
    let clean = &design * truth;
    let y = clean.map(|v| {
        let z: f64 = rng.sample(StandardNormal);
        v + 0.05f64.sqrt() * z
    });
    let noise = GaussianNoise::isotropic(y, 0.05).unwrap();
    (prior, LinearGaussianModel::new(design, noise).unwrap())
}

pub fn groundwater_prior() -> KLPrior {
    KLPrior::unit_square(
        Hyper {
            alpha: 0.0,
            sigma2: 1.0,
            s: 1.1,
        },
        10,
    )
    .unwrap()
}

/// Groundwater problem with data from a `data_mesh` solve of the truth field
/// and inference on `mesh`.
pub fn groundwater_problem(mesh: usize, data_mesh: usize, seed: u64) -> (KLPrior, GroundwaterModel) {
    let prior = groundwater_prior();
    let stations = circle_stations(33);
    let truth = truth_coefficients(&prior);
    let data_solver = GroundwaterSolver::new(Mesh::square(data_mesh), &prior, &stations).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let data = generate_data(&data_solver, &truth, 1e-2, &mut rng).unwrap();
    let solver = GroundwaterSolver::new(Mesh::square(mesh), &prior, &stations).unwrap();
    let noise = GaussianNoise::isotropic(data.data.into(), data.sigma_y2).unwrap();
    (prior, GroundwaterModel::new(Arc::new(solver), noise).unwrap())
}

pub fn full_block(prior: &KLPrior) -> Vec<usize> {
    BlockSpec::All.resolve(prior)
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}
