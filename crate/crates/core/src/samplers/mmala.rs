use rand::Rng;

use super::{decide, rho_of_h, standard_normals, Need, Point, Step};
use crate::geometry::SplitMetric;
use crate::model::ForwardModel;
use crate::prior::{Coefficients, KLPrior};

/// ∞-mMALA: `u′ = ρu + s(ξ + (√h/2) g(u))` with `ξ ~ N(0, K(u))`.
///
/// `block` must be the block the cached metric of `current` was built on.
pub fn mmala_step<M: ForwardModel + ?Sized, R: Rng + ?Sized>(
    current: &Point,
    model: &M,
    prior: &KLPrior,
    h: f64,
    block: &[usize],
    rng: &mut R,
) -> Step {
    let (rho, s) = rho_of_h(h).expect("step size must be positive");
    let before = model.solve_counts();
    let z = standard_normals(prior.dim(), rng);
    let metric = current.metric();
    let xi = metric.transform_noise(&z);
    let proposed = &current.u * rho + (xi + current.natural() * (h.sqrt() / 2.0)) * s;
    let proposal = Point::evaluate(model, prior, proposed.clone(), Need::Metric(block)).ok();
    let log_ratio = proposal.as_ref().map(|p| mmala_log_ratio(current, p, h));
    let counts = model.solve_counts() - before;
    decide(rng, proposed, log_ratio, proposal, 0, counts)
}

/// `log κ(u′, u) − log κ(u, u′)` for points carrying their metrics, where
/// `κ(u, u′) = exp{−Φ(u)} λ(w; u)` and `w = (u′ − ρu)/√(1 − ρ²)`.
pub fn mmala_log_ratio(from: &Point, to: &Point, h: f64) -> f64 {
    let (rho, s) = rho_of_h(h).expect("step size must be positive");
    let w = (&to.u - &from.u * rho) / s;
    let w_back = (&from.u - &to.u * rho) / s;
    let forward = -from.potential + from.metric().lambda_log(from.natural(), &w, h);
    let backward = -to.potential + to.metric().lambda_log(to.natural(), &w_back, h);
    backward - forward
}

/// Mean of the simplified-Newton proposal `u − K(C⁻¹u + DΦ)`, computed
/// densely. At `h = 4` the mMALA proposal is `N(` this `, K)`.
pub fn sn_proposal_mean(
    prior: &KLPrior,
    metric: &SplitMetric,
    u: &Coefficients,
    dphi: &Coefficients,
) -> Coefficients {
    let k = metric.covariance_dense();
    let r = prior.apply_spectral(-1.0, u) + dphi;
    u - k * r
}
