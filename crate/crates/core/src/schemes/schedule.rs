use serde::{Deserialize, Serialize};

/// Per-epoch increment of the curriculum variable.
pub const LAMBDA_STEP: f64 = 1.1 * 0.009;

/// Upper/lower similarity thresholds driven by a curriculum variable:
/// `u = 0.95 − λ`, `l = 0.455 + 0.1·λ`. Training ends once `u ≤ l`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ThresholdSchedule {
    lambda_t: f64,
    steps: u32,
}

impl ThresholdSchedule {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn lambda_t(&self) -> f64 {
        self.lambda_t
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    pub fn upper(&self) -> f64 {
        0.95 - self.lambda_t
    }

    pub fn lower(&self) -> f64 {
        0.455 + 0.1 * self.lambda_t
    }

    pub fn is_active(&self) -> bool {
        self.upper() > self.lower()
    }

    /// `u − l`, added to the loss of every semi-supervised batch.
    pub fn penalty(&self) -> f64 {
        self.upper() - self.lower()
    }

    #[must_use]
    pub fn step(self) -> Self {
        Self {
            lambda_t: self.lambda_t + LAMBDA_STEP,
            steps: self.steps + 1,
        }
    }
}
