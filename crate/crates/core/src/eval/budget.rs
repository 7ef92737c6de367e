use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Control signal: the input-token budget cannot cover the next model call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("token budget exhausted: {used} used of {l_max}, {requested} more requested")]
pub struct BudgetExhausted {
    pub l_max: u64,
    pub used: u64,
    pub requested: u64,
}

/// Input tokens consumed across all rollouts of one question, capped at
/// `l_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub l_max: u64,
    pub used: u64,
}

impl Budget {
    pub fn new(l_max: u64) -> Self {
        Self { l_max, used: 0 }
    }

    /// Charges `tokens` if they fit; otherwise leaves `used` unchanged.
    pub fn charge(&mut self, tokens: u64) -> Result<(), BudgetExhausted> {
        match self.used.checked_add(tokens) {
            Some(total) if total <= self.l_max => {
                self.used = total;
                Ok(())
            }
            _ => Err(BudgetExhausted {
                l_max: self.l_max,
                used: self.used,
                requested: tokens,
            }),
        }
    }

    pub fn remaining(&self) -> u64 {
        self.l_max - self.used
    }
}

impl Default for Budget {
    fn default() -> Self {
        Self::new(128_000)
    }
}
