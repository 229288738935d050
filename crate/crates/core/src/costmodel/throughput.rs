use serde::{Deserialize, Serialize};

use crate::domain::{SimTime, Tokens};
use crate::error::{Result, SimError};

/// A measured (tokens, duration) prefill sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefillAnchor {
    pub tokens: Tokens,
    pub duration_us: u64,
}

impl PrefillAnchor {
    pub fn duration(&self) -> SimTime {
        SimTime::from_micros(self.duration_us)
    }
}

/// The 128K and 8K prefill measurements.
pub fn reference_prefill_anchors() -> Vec<PrefillAnchor> {
    vec![
        PrefillAnchor {
            tokens: 131_072,
            duration_us: 8_800_000,
        },
        PrefillAnchor {
            tokens: 8192,
            duration_us: 400_400,
        },
    ]
}

/// Running prefill throughput, weighted by busy time: the ratio of all tokens
/// processed to all time spent processing them.
///
/// Estimates are computed with integer arithmetic, so predicted durations are
/// exact and platform independent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PrefillThroughputEstimator {
    total_tokens: u128,
    total_busy_us: u128,
}

impl PrefillThroughputEstimator {
    /// Seeds the estimator from profiled samples. An empty or zero seed leaves
    /// the throughput undefined and is rejected.
    pub fn seeded(anchors: &[PrefillAnchor]) -> Result<Self> {
        let total_tokens: u128 = anchors.iter().map(|a| a.tokens as u128).sum();
        let total_busy_us: u128 = anchors.iter().map(|a| a.duration_us as u128).sum();
        if total_tokens == 0 || total_busy_us == 0 {
            return Err(SimError::config(
                "prefill throughput estimator needs a seed with positive tokens and duration",
            ));
        }
        Ok(PrefillThroughputEstimator {
            total_tokens,
            total_busy_us,
        })
    }

    pub fn from_rate(tokens: Tokens, duration: SimTime) -> Result<Self> {
        Self::seeded(&[PrefillAnchor {
            tokens,
            duration_us: duration.as_micros(),
        }])
    }

    pub fn total_tokens(&self) -> u128 {
        self.total_tokens
    }

    pub fn total_busy(&self) -> SimTime {
        SimTime::from_micros(u64::try_from(self.total_busy_us).expect("busy time overflow"))
    }

    /// Tokens per second.
    pub fn throughput(&self) -> f64 {
        self.total_tokens as f64 / (self.total_busy_us as f64 / 1e6)
    }

    /// `tokens / throughput`, rounded up to the microsecond.
    pub fn estimate_duration(&self, tokens: Tokens) -> SimTime {
        let num = tokens as u128 * self.total_busy_us;
        let us = num.div_ceil(self.total_tokens);
        SimTime::from_micros(u64::try_from(us).expect("prefill estimate overflow"))
    }

    pub fn update(&mut self, tokens: Tokens, duration: SimTime) {
        assert!(duration > SimTime::ZERO, "prefill step duration must be positive");
        self.total_tokens += tokens as u128;
        self.total_busy_us += duration.as_micros() as u128;
    }
}

/// Ground-truth prefill cost used by the engine to time a step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PrefillCost {
    /// Constant rate: `tokens` take `duration_us`.
    Linear { tokens: Tokens, duration_us: u64 },
    /// Cumulative cost of prefilling a prompt up to position `n` is piecewise
    /// linear through the origin and these anchors (extrapolated past the
    /// last one). A chunk covering positions `[p, p + len)` costs
    /// `F(p + len) - F(p)`, so later chunks of long prompts are slower.
    Piecewise { anchors: Vec<PrefillAnchor> },
}

impl Default for PrefillCost {
    fn default() -> Self {
        PrefillCost::Linear {
            tokens: 131_072,
            duration_us: 8_800_000,
        }
    }
}

/// One chunk of a prefill step: `len` tokens starting at prompt position
/// `start`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChunkSpan {
    pub start: Tokens,
    pub len: Tokens,
}

impl PrefillCost {
    pub fn validate(&self) -> Result<()> {
        match self {
            PrefillCost::Linear { tokens, duration_us } => {
                if *tokens == 0 || *duration_us == 0 {
                    return Err(SimError::config(
                        "linear prefill cost needs positive tokens and duration",
                    ));
                }
            }
            PrefillCost::Piecewise { anchors } => {
                let pts = Self::knots(anchors);
                if pts.len() < 2 {
                    return Err(SimError::config("piecewise prefill cost needs at least one anchor"));
                }
                if pts.windows(2).any(|w| w[0].0 >= w[1].0 || w[0].1 >= w[1].1) {
                    return Err(SimError::config(
                        "piecewise prefill anchors must be strictly increasing in tokens and duration",
                    ));
                }
            }
        }
        Ok(())
    }

    fn knots(anchors: &[PrefillAnchor]) -> Vec<(f64, f64)> {
        let mut pts: Vec<(f64, f64)> = std::iter::once((0.0, 0.0))
            .chain(anchors.iter().map(|a| (a.tokens as f64, a.duration_us as f64)))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts
    }

    fn cumulative_us(pts: &[(f64, f64)], n: f64) -> f64 {
        let hi = pts.partition_point(|p| p.0 <= n).clamp(1, pts.len() - 1);
        let (x0, y0) = pts[hi - 1];
        let (x1, y1) = pts[hi];
        y0 + (y1 - y0) * (n - x0) / (x1 - x0)
    }

    /// Wall-clock duration of one prefill step made of `chunks`.
    pub fn step_duration(&self, chunks: &[ChunkSpan]) -> SimTime {
        match self {
            PrefillCost::Linear { tokens, duration_us } => {
                let total: u128 = chunks.iter().map(|c| c.len as u128).sum();
                let us = (total * *duration_us as u128).div_ceil(*tokens as u128);
                SimTime::from_micros(u64::try_from(us).expect("prefill duration overflow"))
            }
            PrefillCost::Piecewise { anchors } => {
                let pts = Self::knots(anchors);
                let us: f64 = chunks
                    .iter()
                    .map(|c| {
                        let a = (c.start) as f64;
                        let b = (c.start + c.len) as f64;
                        Self::cumulative_us(&pts, b) - Self::cumulative_us(&pts, a)
                    })
                    .sum();
                super::lut::ceil_us(us)
            }
        }
    }
}
