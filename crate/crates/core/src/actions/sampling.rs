use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ActionKind;

/// Per-call sampling parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingPolicy {
    /// Output sequences per call.
    pub n: u32,
    pub top_p: f64,
    pub top_k: u32,
    pub temperature: f64,
}

impl Default for SamplingPolicy {
    fn default() -> Self {
        Self {
            n: 1,
            top_p: 0.8,
            top_k: 50,
            temperature: 0.7,
        }
    }
}

impl SamplingPolicy {
    pub fn with_n(n: u32) -> Self {
        Self { n, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n == 0 {
            return Err("sampling n must be at least 1".into());
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(format!("top_p must be in (0, 1], got {}", self.top_p));
        }
        if self.top_k == 0 {
            return Err("top_k must be positive".into());
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(format!("temperature must be nonnegative, got {}", self.temperature));
        }
        Ok(())
    }
}

/// Output-count presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NPreset {
    /// n = 1 for every action.
    #[default]
    UniformN1,
    /// n = 3 for every action.
    UniformN3,
    /// n = 3 for SAY and QT, n = 1 for DA, RA and SA.
    Optimal,
}

impl NPreset {
    pub fn policies(self) -> BTreeMap<ActionKind, SamplingPolicy> {
        ActionKind::ALL
            .into_iter()
            .map(|kind| {
                let n = match (self, kind) {
                    (NPreset::UniformN1, _) => 1,
                    (NPreset::UniformN3, _) => 3,
                    (NPreset::Optimal, ActionKind::Say | ActionKind::Qt) => 3,
                    (NPreset::Optimal, _) => 1,
                };
                (kind, SamplingPolicy::with_n(n))
            })
            .collect()
    }
}

impl std::str::FromStr for NPreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform_n1" => Ok(Self::UniformN1),
            "uniform_n3" => Ok(Self::UniformN3),
            "optimal" => Ok(Self::Optimal),
            other => Err(format!("unknown n preset `{other}`")),
        }
    }
}
