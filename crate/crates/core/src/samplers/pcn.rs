use rand::Rng;

use super::{decide, rho_of_h, standard_normals, Need, Point, Step};
use crate::model::ForwardModel;
use crate::prior::KLPrior;

/// pCN: `u′ = ρu + √(1−ρ²) ξ`, `ξ ~ N(0, C)`, accepted with
/// `1 ∧ exp{Φ(u) − Φ(u′)}`. A failed forward solve at `u′` is a rejection.
pub fn pcn_step<M: ForwardModel + ?Sized, R: Rng + ?Sized>(
    current: &Point,
    model: &M,
    prior: &KLPrior,
    rho: f64,
    rng: &mut R,
) -> Step {
    assert!((-1.0..1.0).contains(&rho), "need |ρ| < 1");
    propose(current, model, prior, rho, (1.0 - rho * rho).sqrt(), rng)
}

/// pCN parameterised by `h` as the MALA family, with `√(1−ρ²)` in the stable
/// form `√h/(1 + h/4)`.
pub fn pcn_step_h<M: ForwardModel + ?Sized, R: Rng + ?Sized>(
    current: &Point,
    model: &M,
    prior: &KLPrior,
    h: f64,
    rng: &mut R,
) -> Step {
    let (rho, s) = rho_of_h(h).expect("step size must be positive");
    propose(current, model, prior, rho, s, rng)
}

fn propose<M: ForwardModel + ?Sized, R: Rng + ?Sized>(
    current: &Point,
    model: &M,
    prior: &KLPrior,
    rho: f64,
    s: f64,
    rng: &mut R,
) -> Step {
    let before = model.solve_counts();
    let z = standard_normals(prior.dim(), rng);
    let xi = z.component_mul(prior.std_devs());
    let proposed = &current.u * rho + xi * s;
    let proposal = Point::evaluate(model, prior, proposed.clone(), Need::Potential).ok();
    let log_ratio = proposal
        .as_ref()
        .map(|p| current.potential - p.potential);
    let counts = model.solve_counts() - before;
    decide(rng, proposed, log_ratio, proposal, 0, counts)
}
