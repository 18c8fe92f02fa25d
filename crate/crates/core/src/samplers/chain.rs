use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{need_for, step, Point, SamplerConfig, StepAdapter, StepFailure};
use crate::diagnostics::ChainRecord;
use crate::model::ForwardModel;
use crate::prior::{Coefficients, KLPrior};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    Zero,
    /// A prior draw made with the chain's own generator before the first step.
    Prior,
    Given(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOptions {
    /// Total number of transitions, burn-in included.
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// Adapt the step during burn-in.
    pub adapt: Option<StepAdapter>,
    pub initial: InitialState,
    /// Keep post-burn-in coefficient vectors.
    pub keep_samples: bool,
}

impl ChainOptions {
    pub fn new(iterations: usize, burn_in: usize, seed: u64) -> Self {
        Self {
            iterations,
            burn_in,
            seed,
            adapt: None,
            initial: InitialState::Zero,
            keep_samples: true,
        }
    }
}

/// Runs one chain. Only a failure at the initial state is an error; failed
/// proposals are rejections flagged in the record.
pub fn run_chain<M: ForwardModel + ?Sized>(
    config: &SamplerConfig,
    options: &ChainOptions,
    model: &M,
    prior: &KLPrior,
) -> Result<ChainRecord, StepFailure> {
    let mut rng = ChaCha20Rng::seed_from_u64(options.seed);
    let block = if config.algorithm.is_geometric() {
        config.block.resolve(prior)
    } else {
        Vec::new()
    };
    let label = config.algorithm.label(block.len(), prior.dim());
    let u0 = match &options.initial {
        InitialState::Zero => Coefficients::zeros(prior.dim()),
        InitialState::Prior => prior.sample(&mut rng),
        InitialState::Given(v) => Coefficients::from_column_slice(v),
    };
    let counts_start = model.solve_counts();
    let mut current = Point::evaluate(model, prior, u0, need_for(config.algorithm, &block))?;
    let mut cfg = *config;
    let mut adapter = options.adapt;
    if let Some(a) = adapter.as_ref() {
        cfg.step = a.step();
    }
    assert!(
        cfg.step > 0.0 && cfg.step.is_finite(),
        "step must be positive and finite"
    );
    if !cfg.algorithm.is_hmc_family() && cfg.step > 4.0 {
        log::warn!("{label}: h = {} > 4 gives a negative autoregression coefficient", cfg.step);
    }

    let n_iter = options.iterations;
    let mut record = ChainRecord::new(label, cfg, options.seed, options.burn_in);
    record.reserve(n_iter);
    let mut timer = Instant::now();
    let mut burn_seconds = 0.0;
    for t in 0..n_iter {
        if t == options.burn_in {
            burn_seconds = timer.elapsed().as_secs_f64();
            timer = Instant::now();
        }
        let outcome = step(&cfg, &block, &current, model, prior, &mut rng);
        let (transition, next) = outcome.into_next(current);
        current = next;
        if t < options.burn_in {
            if let Some(a) = adapter.as_mut() {
                cfg.step = a.update(transition.accept_probability());
            }
        }
        record.push(
            current.potential,
            &transition,
            (t >= options.burn_in && options.keep_samples).then_some(&current.u),
        );
    }
    let elapsed = timer.elapsed().as_secs_f64();
    if options.burn_in >= n_iter {
        record.burn_in_seconds = elapsed;
        record.sampling_seconds = 0.0;
    } else {
        record.burn_in_seconds = burn_seconds;
        record.sampling_seconds = elapsed;
    }
    record.final_step = cfg.step;
    record.solve_counts = model.solve_counts() - counts_start;
    Ok(record)
}
