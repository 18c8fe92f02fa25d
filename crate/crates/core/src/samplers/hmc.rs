use rand::Rng;

use super::mala::prior_drift;
use super::{decide, standard_normals, Need, Point, Step, StepFailure};
use crate::geometry::SplitMetric;
use crate::model::ForwardModel;
use crate::prior::{Coefficients, KLPrior};

/// One leapfrog step: half-kicks of `kick/2` around a rotation by the angle
/// with the given cosine and sine. [`LeapfrogStep::new`] ties both to a
/// single `ε`; [`LeapfrogStep::from_h`] gives the step under which one mHMC
/// step reproduces mMALA.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeapfrogStep {
    pub kick: f64,
    pub cos: f64,
    pub sin: f64,
}

impl LeapfrogStep {
    pub fn new(eps: f64) -> Self {
        Self {
            kick: eps,
            cos: eps.cos(),
            sin: eps.sin(),
        }
    }

    pub fn from_h(h: f64) -> Option<Self> {
        let (kick, cos, sin) = super::step_map(h)?;
        Some(Self { kick, cos, sin })
    }

    fn rotate(&self, u: &Coefficients, v: &Coefficients) -> (Coefficients, Coefficients) {
        (u * self.cos + v * self.sin, v * self.cos - u * self.sin)
    }
}

/// End of a leapfrog trajectory with the energy change accumulated along it.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub end: Point,
    pub velocity: Coefficients,
    pub delta_h: f64,
}

/// `H(u, v) = Φ(u) + ½⟨u, C⁻¹u⟩ + ½⟨v, K⁻¹(u)v⟩ − log|C^{1/2}K^{−1/2}(u)|`.
///
/// Without a cached metric `K = C`. Only finite in finite dimensions; used to
/// check the accumulated energy change.
pub fn energy(prior: &KLPrior, point: &Point, v: &Coefficients) -> f64 {
    let base = point.potential + 0.5 * prior.precision_inner(&point.u, &point.u);
    match &point.metric {
        Some(m) => base + 0.5 * m.precision_inner(v, v) - m.half_logdet(),
        None => base + 0.5 * prior.precision_inner(v, v),
    }
}

/// ∞-HMC trajectory of `steps` leapfrog steps from `(start, v)`.
pub fn hmc_leapfrog<M: ForwardModel + ?Sized>(
    model: &M,
    prior: &KLPrior,
    start: &Point,
    v: Coefficients,
    step: LeapfrogStep,
    steps: usize,
) -> Result<Trajectory, StepFailure> {
    let half = step.kick / 2.0;
    let c_norm = |p: &Point| {
        let d = p.grad();
        d.iter()
            .zip(prior.eigenvalues().iter())
            .map(|(x, l)| l * x * x)
            .sum::<f64>()
    };
    let mut point = start.clone();
    let mut v = v;
    let mut cross = 0.0;
    for _ in 0..steps {
        cross += v.dot(point.grad());
        let v_minus = &v + prior_drift(prior, point.grad()) * half;
        let (u_next, v_plus) = step.rotate(&point.u, &v_minus);
        point = Point::evaluate(model, prior, u_next, Need::Gradient)?;
        v = v_plus + prior_drift(prior, point.grad()) * half;
        cross += v.dot(point.grad());
    }
    let delta_h = point.potential - start.potential
        - step.kick * step.kick / 8.0 * (c_norm(&point) - c_norm(start))
        - half * cross;
    Ok(Trajectory {
        end: point,
        velocity: v,
        delta_h,
    })
}

/// ∞-mHMC trajectory: kicks along `g(u)`, velocity energy measured in `K(u)`.
pub fn mhmc_leapfrog<M: ForwardModel + ?Sized>(
    model: &M,
    prior: &KLPrior,
    block: &[usize],
    start: &Point,
    v: Coefficients,
    step: LeapfrogStep,
    steps: usize,
) -> Result<Trajectory, StepFailure> {
    let half = step.kick / 2.0;
    let g_norm = |p: &Point| p.metric().prior_inner(p.natural(), p.natural());
    let v_fisher = |m: &SplitMetric, v: &Coefficients| m.fisher_form(v, v);
    let mut point = start.clone();
    let mut v = v;
    let start_fisher = v_fisher(start.metric(), &v);
    let mut cross = 0.0;
    for _ in 0..steps {
        cross += point.metric().prior_inner(point.natural(), &v);
        let v_minus = &v + point.natural() * half;
        let (u_next, v_plus) = step.rotate(&point.u, &v_minus);
        point = Point::evaluate(model, prior, u_next, Need::Metric(block))?;
        v = v_plus + point.natural() * half;
        cross += point.metric().prior_inner(point.natural(), &v);
    }
    let delta_h = point.potential - start.potential
        + 0.5 * (v_fisher(point.metric(), &v) - start_fisher)
        - (point.metric().half_logdet() - start.metric().half_logdet())
        - step.kick * step.kick / 8.0 * (g_norm(&point) - g_norm(start))
        + half * cross;
    Ok(Trajectory {
        end: point,
        velocity: v,
        delta_h,
    })
}

fn leapfrog_count<R: Rng + ?Sized>(max_leapfrog: usize, rng: &mut R) -> usize {
    if max_leapfrog > 1 {
        rng.random_range(1..=max_leapfrog)
    } else {
        1
    }
}

/// ∞-HMC with `ε` tied to both kick and rotation.
pub fn hmc_step<M: ForwardModel + ?Sized, R: Rng + ?Sized>(
    current: &Point,
    model: &M,
    prior: &KLPrior,
    eps: f64,
    max_leapfrog: usize,
    rng: &mut R,
) -> Step {
    hmc_step_with(current, model, prior, LeapfrogStep::new(eps), max_leapfrog, rng)
}

pub fn hmc_step_with<M: ForwardModel + ?Sized, R: Rng + ?Sized>(
    current: &Point,
    model: &M,
    prior: &KLPrior,
    step: LeapfrogStep,
    max_leapfrog: usize,
    rng: &mut R,
) -> Step {
    let before = model.solve_counts();
    let z = standard_normals(prior.dim(), rng);
    let v = z.component_mul(prior.std_devs());
    let steps = leapfrog_count(max_leapfrog, rng);
    finish(
        rng,
        model,
        before,
        steps,
        hmc_leapfrog(model, prior, current, v, step, steps),
    )
}

/// ∞-mHMC. `block` must match the cached metric of `current`.
pub fn mhmc_step<M: ForwardModel + ?Sized, R: Rng + ?Sized>(
    current: &Point,
    model: &M,
    prior: &KLPrior,
    eps: f64,
    max_leapfrog: usize,
    block: &[usize],
    rng: &mut R,
) -> Step {
    mhmc_step_with(current, model, prior, LeapfrogStep::new(eps), max_leapfrog, block, rng)
}

pub fn mhmc_step_with<M: ForwardModel + ?Sized, R: Rng + ?Sized>(
    current: &Point,
    model: &M,
    prior: &KLPrior,
    step: LeapfrogStep,
    max_leapfrog: usize,
    block: &[usize],
    rng: &mut R,
) -> Step {
    let before = model.solve_counts();
    let z = standard_normals(prior.dim(), rng);
    let v = current.metric().transform_noise(&z);
    let steps = leapfrog_count(max_leapfrog, rng);
    finish(
        rng,
        model,
        before,
        steps,
        mhmc_leapfrog(model, prior, block, current, v, step, steps),
    )
}

fn finish<M: ForwardModel + ?Sized, R: Rng + ?Sized>(
    rng: &mut R,
    model: &M,
    before: crate::model::SolveCounts,
    steps: usize,
    trajectory: Result<Trajectory, StepFailure>,
) -> Step {
    let counts = model.solve_counts() - before;
    match trajectory {
        Ok(t) if t.delta_h.is_finite() => {
            let proposed = t.end.u.clone();
            decide(rng, proposed, Some(-t.delta_h), Some(t.end), steps, counts)
        }
        Ok(t) => decide(rng, t.end.u.clone(), None, None, steps, counts),
        Err(_) => {
            let dim = model.dim();
            decide(rng, Coefficients::from_element(dim, f64::NAN), None, None, steps, counts)
        }
    }
}
