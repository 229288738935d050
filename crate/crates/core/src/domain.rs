//! Core value types shared by the schedulers, the engine and the reports.
//!
//! All timestamps are [`SimTime`], an integer count of microseconds since the
//! start of the simulation. Seconds only show up when reading or writing files.

use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Token counts (prompt lengths, chunk sizes, KV footprints).
pub type Tokens = u64;

/// Microseconds since simulation start. Arithmetic panics instead of wrapping.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000)
    }

    /// Converts seconds to the nearest microsecond. Negative or non-finite
    /// input is rejected.
    pub fn from_secs_f64(s: f64) -> Result<Self> {
        if !s.is_finite() || s < 0.0 {
            return Err(SimError::config(format!("invalid time {s} s")));
        }
        let us = (s * 1e6).round();
        if us > u64::MAX as f64 {
            return Err(SimError::config(format!("time {s} s overflows")));
        }
        Ok(SimTime(us as u64))
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / 1e3
    }

    /// `self - earlier`, or `None` if `earlier` is later than `self`.
    pub fn checked_sub(self, earlier: SimTime) -> Option<SimTime> {
        self.0.checked_sub(earlier.0).map(SimTime)
    }

    /// Signed difference `self - other` in microseconds.
    pub fn signed_diff(self, other: SimTime) -> i64 {
        i64::try_from(self.0 as i128 - other.0 as i128).expect("time difference overflows i64")
    }
}

impl Add for SimTime {
    type Output = SimTime;

    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.checked_add(rhs.0).expect("SimTime overflow"))
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        *self = *self + rhs;
    }
}

impl Sub for SimTime {
    type Output = SimTime;

    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.checked_sub(rhs.0).expect("SimTime underflow"))
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

/// Latency targets for the two serving phases.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SloConfig {
    /// Time-to-first-token target.
    pub ttft_slo: SimTime,
    /// Target for the mean time per output token.
    pub tpot_slo: SimTime,
}

impl Default for SloConfig {
    fn default() -> Self {
        SloConfig {
            ttft_slo: SimTime::from_secs(8),
            tpot_slo: SimTime::from_millis(50),
        }
    }
}

impl SloConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ttft_slo == SimTime::ZERO || self.tpot_slo == SimTime::ZERO {
            return Err(SimError::config("SLO targets must be strictly positive"));
        }
        Ok(())
    }
}

/// Dense request index. Assigned in arrival order, so it doubles as the
/// deterministic tie-breaker everywhere.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RequestId(pub u64);

impl fmt::Display for RequestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Lifecycle phase. Variants are declared in lifecycle order; a request only
/// ever moves forward.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    Queued,
    Prefilling,
    Transferring,
    DecodeWaiting,
    Decoding,
    Finished,
}

/// One inference job and everything the simulation learns about it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: RequestId,
    /// External identifier from the trace file.
    pub label: String,
    pub arrival_time: SimTime,
    pub input_len: Tokens,
    /// Ground-truth output length. Only the engine reads this; schedulers
    /// decide without it.
    pub output_len: Tokens,
    /// Prompt tokens already covered by the prefix cache.
    pub prefix_hit_len: Tokens,
    pub prefill_done_tokens: Tokens,
    /// Tokens produced by decode steps (the first token comes from prefill).
    pub n_gen: Tokens,
    pub t_prefill_start: Option<SimTime>,
    pub t_prefill_finish: Option<SimTime>,
    pub t_first_token: Option<SimTime>,
    pub token_timestamps: Vec<SimTime>,
    pub phase: Phase,
}

impl Request {
    pub fn new(
        id: RequestId,
        label: impl Into<String>,
        arrival_time: SimTime,
        input_len: Tokens,
        output_len: Tokens,
    ) -> Result<Self> {
        Self::with_prefix_hit(id, label, arrival_time, input_len, output_len, 0)
    }

    pub fn with_prefix_hit(
        id: RequestId,
        label: impl Into<String>,
        arrival_time: SimTime,
        input_len: Tokens,
        output_len: Tokens,
        prefix_hit_len: Tokens,
    ) -> Result<Self> {
        let label = label.into();
        if input_len == 0 || output_len == 0 {
            return Err(SimError::config(format!(
                "request {label:?}: input and output lengths must be >= 1"
            )));
        }
        if prefix_hit_len >= input_len {
            return Err(SimError::config(format!(
                "request {label:?}: prefix hit {prefix_hit_len} must be < input length {input_len}"
            )));
        }
        Ok(Request {
            id,
            label,
            arrival_time,
            input_len,
            output_len,
            prefix_hit_len,
            prefill_done_tokens: 0,
            n_gen: 0,
            t_prefill_start: None,
            t_prefill_finish: None,
            t_first_token: None,
            token_timestamps: Vec::new(),
            phase: Phase::Queued,
        })
    }

    pub fn remaining_prefill_tokens(&self) -> Tokens {
        self.input_len - self.prefix_hit_len - self.prefill_done_tokens
    }

    /// Current KV-cache footprint: the prompt plus every decoded token.
    pub fn seq_len(&self) -> Tokens {
        self.input_len + self.n_gen
    }

    /// KV tokens reserved for the whole lifetime of the request.
    pub fn kv_reservation(&self) -> Tokens {
        self.input_len + self.output_len
    }

    pub fn ttft(&self) -> Option<SimTime> {
        self.t_first_token.map(|t| t - self.arrival_time)
    }

    pub fn is_finished(&self) -> bool {
        self.phase == Phase::Finished
    }

    /// True once every token has been produced.
    pub fn decode_complete(&self) -> bool {
        self.t_first_token.is_some() && self.n_gen + 1 >= self.output_len
    }

    pub fn set_phase(&mut self, next: Phase) {
        assert!(
            next >= self.phase,
            "request {} cannot move from {:?} back to {:?}",
            self.id,
            self.phase,
            next
        );
        self.phase = next;
    }

    /// Records the first token (produced by prefill).
    pub fn record_first_token(&mut self, at: SimTime) {
        assert!(
            self.t_first_token.is_none(),
            "first token recorded twice for {}",
            self.id
        );
        assert!(at >= self.arrival_time, "first token before arrival for {}", self.id);
        self.t_first_token = Some(at);
        self.token_timestamps.push(at);
    }

    /// Records one decode-produced token.
    pub fn record_decode_token(&mut self, at: SimTime) {
        let last = *self.token_timestamps.last().expect("decode token before first token");
        assert!(at > last, "token timestamps must strictly increase for {}", self.id);
        assert!(
            self.n_gen + 1 < self.output_len,
            "request {} decoded past its output length",
            self.id
        );
        self.n_gen += 1;
        self.token_timestamps.push(at);
    }
}
