//! Network scenarios and the loss model.
//!
//! A scenario fixes the impairment the proxy applies independently to each
//! direction of every connection: a base one-way latency, a jitter standard
//! deviation, and a segment loss probability. The three built-in presets
//! model increasingly poor overlay networks; custom scenarios come from the
//! plan file.

use serde::{Deserialize, Serialize};

/// Per-direction impairment parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Mean one-way delay added to every chunk, in milliseconds.
    pub latency_ms: f64,
    /// Standard deviation of the delay (normal, truncated at zero).
    pub jitter_ms: f64,
    /// Probability, in percent, that a single 1460-byte segment is lost.
    pub loss_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScenarioError {
    #[error("scenario {name:?}: {problem}")]
    Invalid { name: String, problem: String },
}

impl Scenario {
    pub fn new(name: &str, latency_ms: f64, jitter_ms: f64, loss_pct: f64) -> Scenario {
        Scenario { name: name.to_owned(), latency_ms, jitter_ms, loss_pct }
    }

    /// No impairment; the measurement baseline.
    pub fn local() -> Scenario {
        Scenario::new("local", 0.0, 0.0, 0.0)
    }

    /// A well-behaved overlay link.
    pub fn optimal() -> Scenario {
        Scenario::new("optimal", 2.5, 0.5, 0.04)
    }

    /// A degraded overlay link.
    pub fn worst() -> Scenario {
        Scenario::new("worst", 6.25, 1.25, 0.1)
    }

    pub fn presets() -> Vec<Scenario> {
        vec![Scenario::local(), Scenario::optimal(), Scenario::worst()]
    }

    pub fn preset(name: &str) -> Option<Scenario> {
        Scenario::presets().into_iter().find(|s| s.name == name)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let fail = |problem: &str| {
            Err(ScenarioError::Invalid { name: self.name.clone(), problem: problem.to_owned() })
        };
        if self.name.is_empty() {
            return fail("name must not be empty");
        }
        if !self.latency_ms.is_finite() || self.latency_ms < 0.0 {
            return fail("latency_ms must be finite and nonnegative");
        }
        if !self.jitter_ms.is_finite() || self.jitter_ms < 0.0 {
            return fail("jitter_ms must be finite and nonnegative");
        }
        if !self.loss_pct.is_finite() || !(0.0..=100.0).contains(&self.loss_pct) {
            return fail("loss_pct must lie in [0, 100]");
        }
        Ok(())
    }
}

/// How segment loss is folded into delay.
///
/// TCP hides loss from the application as a retransmission stall, so the
/// proxy models a lost segment as a delay penalty on the whole chunk rather
/// than dropping bytes: each chunk is split into virtual segments of
/// `segment_bytes`, each is lost independently with the scenario's
/// probability, and any loss delays the chunk by
/// `max(min_penalty_ms, rtt_multiplier * 2 * latency_ms)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossModel {
    /// Virtual segment size; the conventional Ethernet TCP MSS by default.
    pub segment_bytes: usize,
    /// Retransmission stall as a multiple of the round trip.
    pub rtt_multiplier: f64,
    /// Floor so loss is visible even on near-zero-latency links.
    pub min_penalty_ms: f64,
}

impl Default for LossModel {
    fn default() -> LossModel {
        LossModel { segment_bytes: 1460, rtt_multiplier: 1.5, min_penalty_ms: 1.0 }
    }
}

impl LossModel {
    /// The stall applied to a chunk when at least one segment was lost.
    pub fn penalty_ms(&self, latency_ms: f64) -> f64 {
        (self.rtt_multiplier * 2.0 * latency_ms).max(self.min_penalty_ms)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let fail = |problem: &str| {
            Err(ScenarioError::Invalid { name: "loss_model".to_owned(), problem: problem.to_owned() })
        };
        if self.segment_bytes == 0 {
            return fail("segment_bytes must be positive");
        }
        if !self.rtt_multiplier.is_finite() || self.rtt_multiplier < 0.0 {
            return fail("rtt_multiplier must be finite and nonnegative");
        }
        if !self.min_penalty_ms.is_finite() || self.min_penalty_ms < 0.0 {
            return fail("min_penalty_ms must be finite and nonnegative");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_parameters_are_fixed() {
        let local = Scenario::local();
        assert_eq!((local.latency_ms, local.jitter_ms, local.loss_pct), (0.0, 0.0, 0.0));
        let optimal = Scenario::optimal();
        assert_eq!(
            (optimal.latency_ms, optimal.jitter_ms, optimal.loss_pct),
            (2.5, 0.5, 0.04)
        );
        let worst = Scenario::worst();
        assert_eq!((worst.latency_ms, worst.jitter_ms, worst.loss_pct), (6.25, 1.25, 0.1));
    }

    #[test]
    fn presets_resolve_by_name() {
        assert_eq!(Scenario::preset("optimal"), Some(Scenario::optimal()));
        assert_eq!(Scenario::preset("lan"), None);
    }

    #[test]
    fn penalty_floor_applies_at_low_latency() {
        let model = LossModel::default();
        assert_eq!(model.penalty_ms(0.0), 1.0);
        assert_eq!(model.penalty_ms(2.5), 7.5);
        assert_eq!(model.penalty_ms(6.25), 18.75);
    }

    #[test]
    fn validation_rejects_out_of_range() {
        let mut s = Scenario::local();
        s.loss_pct = 101.0;
        assert!(s.validate().is_err());
        s.loss_pct = 0.0;
        s.latency_ms = -1.0;
        assert!(s.validate().is_err());
        s.latency_ms = f64::NAN;
        assert!(s.validate().is_err());
    }
}
