use nalgebra::DVector;
use rand::Rng;

use super::{decide, rho_of_h, standard_normals, Need, Point, Step};
use crate::model::ForwardModel;
use crate::prior::{Coefficients, KLPrior};

/// `−C DΦ(u)`.
pub(crate) fn prior_drift(prior: &KLPrior, dphi: &Coefficients) -> Coefficients {
    let ev = prior.eigenvalues();
    DVector::from_fn(dphi.len(), |j, _| -ev[j] * dphi[j])
}

/// `log κ(u, u′)` up to the reference Gaussian, with `w = (u′ − ρu)/s`.
fn log_kappa(prior: &KLPrior, point: &Point, w: &Coefficients, h: f64) -> f64 {
    let dphi = point.grad();
    let ev = prior.eigenvalues();
    let c_norm: f64 = dphi.iter().zip(ev.iter()).map(|(d, l)| l * d * d).sum();
    -point.potential - h / 8.0 * c_norm - h.sqrt() / 2.0 * dphi.dot(w)
}

/// `log κ(u′, u) − log κ(u, u′)` for points carrying gradients.
pub fn mala_log_ratio(prior: &KLPrior, from: &Point, to: &Point, h: f64) -> f64 {
    let (rho, s) = rho_of_h(h).expect("step size must be positive");
    let w = (&to.u - &from.u * rho) / s;
    let w_back = (&from.u - &to.u * rho) / s;
    log_kappa(prior, to, &w_back, h) - log_kappa(prior, from, &w, h)
}

/// ∞-MALA: `u′ = ρu + s(ξ − (√h/2) C DΦ(u))` with `ξ ~ N(0, C)`.
pub fn mala_step<M: ForwardModel + ?Sized, R: Rng + ?Sized>(
    current: &Point,
    model: &M,
    prior: &KLPrior,
    h: f64,
    rng: &mut R,
) -> Step {
    let (rho, s) = rho_of_h(h).expect("step size must be positive");
    let before = model.solve_counts();
    let z = standard_normals(prior.dim(), rng);
    let xi = z.component_mul(prior.std_devs());
    let drift = prior_drift(prior, current.grad());
    let proposed = &current.u * rho + (xi + drift * (h.sqrt() / 2.0)) * s;
    let proposal = Point::evaluate(model, prior, proposed.clone(), Need::Gradient).ok();
    let log_ratio = proposal.as_ref().map(|p| mala_log_ratio(prior, current, p, h));
    let counts = model.solve_counts() - before;
    decide(rng, proposed, log_ratio, proposal, 0, counts)
}
