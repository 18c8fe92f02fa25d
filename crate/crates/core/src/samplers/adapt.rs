use serde::{Deserialize, Serialize};

/// Robbins–Monro tuning of the step on the log scale during burn-in:
/// `log step += t^(−0.6) (α_t − target)`, clamped to `[floor, ceiling]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepAdapter {
    pub target: f64,
    pub floor: f64,
    pub ceiling: f64,
    log_step: f64,
    updates: u64,
}

impl StepAdapter {
    pub const DEFAULT_TARGET: f64 = 0.65;

    pub fn new(step: f64, target: f64, floor: f64, ceiling: f64) -> Self {
        assert!(floor > 0.0 && floor <= ceiling, "bad adaptation bounds");
        Self {
            target,
            floor,
            ceiling,
            log_step: step.clamp(floor, ceiling).ln(),
            updates: 0,
        }
    }

    pub fn step(&self) -> f64 {
        self.log_step.exp().clamp(self.floor, self.ceiling)
    }

    /// Feeds the acceptance probability of the latest transition.
    pub fn update(&mut self, accept_probability: f64) -> f64 {
        self.updates += 1;
        let gain = (self.updates as f64).powf(-0.6);
        self.log_step += gain * (accept_probability - self.target);
        self.log_step = self.log_step.clamp(self.floor.ln(), self.ceiling.ln());
        self.step()
    }
}
