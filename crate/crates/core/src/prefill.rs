//! Prefill-side scheduling.
//!
//! Every step the urgency scheduler re-predicts when each queued request would
//! finish if the queue were served first-come-first-served, turns the
//! remaining TTFT budget into an urgency score, and fills the chunk budget in
//! descending score order. FCFS and SJF packers are provided as baselines.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::costmodel::PrefillThroughputEstimator;
use crate::domain::{Phase, Request, RequestId, SimTime, SloConfig, Tokens};
use crate::error::SimError;

/// Requests still waiting for prefill work, in FCFS order `(arrival, id)`.
#[derive(Clone, Debug)]
pub struct PrefillQueue<'a> {
    items: Vec<&'a Request>,
}

impl<'a> PrefillQueue<'a> {
    pub fn new(items: impl IntoIterator<Item = &'a Request>) -> Self {
        let mut items: Vec<&Request> = items.into_iter().collect();
        items.sort_by_key(|r| (r.arrival_time, r.id));
        debug_assert!(items
            .iter()
            .all(|r| matches!(r.phase, Phase::Queued | Phase::Prefilling)));
        debug_assert!(items.windows(2).all(|w| w[0].id != w[1].id));
        PrefillQueue { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &'a Request> + '_ {
        self.items.iter().copied()
    }

    pub fn total_remaining(&self) -> Tokens {
        self.items.iter().map(|r| r.remaining_prefill_tokens()).sum()
    }
}

/// One selected chunk.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefillChunk {
    pub id: RequestId,
    pub len: Tokens,
}

/// Chunks to execute in one prefill step.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefillBatch {
    pub entries: Vec<PrefillChunk>,
}

impl PrefillBatch {
    pub fn total_tokens(&self) -> Tokens {
        self.entries.iter().map(|c| c.len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<RequestId> {
        self.entries.iter().map(|c| c.id).collect()
    }
}

/// Predicted FCFS finish time of every request in the queue, in queue order.
///
/// One pass over the queue: the cursor after request `i` is exactly the
/// finish time of a serial FCFS walk over the prefix ending at `i`.
pub fn predict_all_finish_times(
    queue: &PrefillQueue<'_>,
    t_now: SimTime,
    est: &PrefillThroughputEstimator,
) -> Vec<SimTime> {
    let mut cursor = t_now;
    queue
        .iter()
        .map(|r| {
            cursor = cursor.max(r.arrival_time) + est.estimate_duration(r.remaining_prefill_tokens());
            cursor
        })
        .collect()
}

/// Predicted prefill finish time of `id` under serial FCFS service starting
/// at `t_now`.
///
/// Panics if `id` is not queued.
pub fn predict_prefill_finish_time(
    queue: &PrefillQueue<'_>,
    id: RequestId,
    t_now: SimTime,
    est: &PrefillThroughputEstimator,
) -> SimTime {
    let mut cursor = t_now;
    for r in queue.iter() {
        cursor = cursor.max(r.arrival_time) + est.estimate_duration(r.remaining_prefill_tokens());
        if r.id == id {
            return cursor;
        }
    }
    panic!("request {id} is not in the prefill queue");
}

/// Fraction of the TTFT budget left at the predicted finish time. Negative
/// once the prediction overshoots the target.
pub fn urgency(r: &Request, predicted_finish: SimTime, slo: &SloConfig) -> f64 {
    let ttft = predicted_finish.signed_diff(r.arrival_time) as f64;
    let budget = slo.ttft_slo.as_micros() as f64;
    (budget - ttft) / budget
}

/// Urgency per prompt token.
pub fn normalized_urgency(r: &Request, predicted_finish: SimTime, slo: &SloConfig) -> f64 {
    urgency(r, predicted_finish, slo) / r.input_len as f64
}

/// How urgency is normalized by prompt length before ranking.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UrgencyNormalization {
    /// Always divide by the prompt length. For requests already predicted to
    /// miss, this ranks long requests above short ones.
    Literal,
    /// Divide by the length when the urgency is non-negative and multiply by
    /// it otherwise, so shorter prompts rank higher on both sides of zero.
    LengthMonotone,
}

impl UrgencyNormalization {
    pub fn score(self, r: &Request, predicted_finish: SimTime, slo: &SloConfig) -> f64 {
        let u = urgency(r, predicted_finish, slo);
        let len = r.input_len as f64;
        match self {
            UrgencyNormalization::Literal => u / len,
            UrgencyNormalization::LengthMonotone if u >= 0.0 => u / len,
            UrgencyNormalization::LengthMonotone => u * len,
        }
    }
}

/// Greedily fills `budget` tokens, taking requests in the given order. The
/// entry that exhausts the budget may be partial and ends the batch.
fn pack<'a>(order: impl IntoIterator<Item = &'a Request>, budget: Tokens) -> PrefillBatch {
    let mut left = budget;
    let mut entries = Vec::new();
    for r in order {
        if left == 0 {
            break;
        }
        let take = r.remaining_prefill_tokens().min(left);
        if take == 0 {
            continue;
        }
        entries.push(PrefillChunk { id: r.id, len: take });
        left -= take;
    }
    PrefillBatch { entries }
}

/// Urgency-ranked chunk selection with the given normalization.
pub fn select_prefill_batch_with(
    queue: &PrefillQueue<'_>,
    budget: Tokens,
    t_now: SimTime,
    est: &PrefillThroughputEstimator,
    slo: &SloConfig,
    norm: UrgencyNormalization,
) -> PrefillBatch {
    assert!(budget >= 1, "chunk budget must be >= 1");
    let finishes = predict_all_finish_times(queue, t_now, est);
    let scored = queue
        .iter()
        .zip(finishes)
        .map(|(r, f)| (norm.score(r, f, slo), r))
        .collect();
    pack(rank_by_score(scored), budget)
}

/// Descending score; ties go to the earlier arrival, then the smaller id.
fn rank_by_score(mut scored: Vec<(f64, &Request)>) -> Vec<&Request> {
    scored.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| a.1.arrival_time.cmp(&b.1.arrival_time))
            .then_with(|| a.1.id.cmp(&b.1.id))
    });
    scored.into_iter().map(|(_, r)| r).collect()
}

/// Urgency-ranked selection using the length-monotone normalization.
pub fn select_prefill_batch(
    queue: &PrefillQueue<'_>,
    budget: Tokens,
    t_now: SimTime,
    est: &PrefillThroughputEstimator,
    slo: &SloConfig,
) -> PrefillBatch {
    select_prefill_batch_with(queue, budget, t_now, est, slo, UrgencyNormalization::LengthMonotone)
}

pub fn fcfs_select_prefill(queue: &PrefillQueue<'_>, budget: Tokens) -> PrefillBatch {
    assert!(budget >= 1, "chunk budget must be >= 1");
    pack(queue.iter(), budget)
}

pub fn sjf_select_prefill(queue: &PrefillQueue<'_>, budget: Tokens) -> PrefillBatch {
    assert!(budget >= 1, "chunk budget must be >= 1");
    let mut order: Vec<&Request> = queue.iter().collect();
    order.sort_by(|a, b| {
        a.remaining_prefill_tokens()
            .cmp(&b.remaining_prefill_tokens())
            .then_with(|| a.arrival_time.cmp(&b.arrival_time))
            .then_with(|| a.id.cmp(&b.id))
    });
    pack(order, budget)
}

/// Prefill policy, selected by name in configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PrefillPolicy {
    #[serde(rename = "kairos-urgency")]
    KairosUrgency,
    #[serde(rename = "kairos-urgency-literal")]
    KairosUrgencyLiteral,
    #[serde(rename = "fcfs")]
    Fcfs,
    #[serde(rename = "sjf")]
    Sjf,
}

impl PrefillPolicy {
    pub const ALL: [PrefillPolicy; 4] = [
        PrefillPolicy::KairosUrgency,
        PrefillPolicy::KairosUrgencyLiteral,
        PrefillPolicy::Fcfs,
        PrefillPolicy::Sjf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PrefillPolicy::KairosUrgency => "kairos-urgency",
            PrefillPolicy::KairosUrgencyLiteral => "kairos-urgency-literal",
            PrefillPolicy::Fcfs => "fcfs",
            PrefillPolicy::Sjf => "sjf",
        }
    }

    pub fn select(
        self,
        queue: &PrefillQueue<'_>,
        budget: Tokens,
        t_now: SimTime,
        est: &PrefillThroughputEstimator,
        slo: &SloConfig,
    ) -> PrefillBatch {
        match self {
            PrefillPolicy::KairosUrgency => {
                select_prefill_batch_with(queue, budget, t_now, est, slo, UrgencyNormalization::LengthMonotone)
            }
            PrefillPolicy::KairosUrgencyLiteral => {
                select_prefill_batch_with(queue, budget, t_now, est, slo, UrgencyNormalization::Literal)
            }
            PrefillPolicy::Fcfs => fcfs_select_prefill(queue, budget),
            PrefillPolicy::Sjf => sjf_select_prefill(queue, budget),
        }
    }
}

impl fmt::Display for PrefillPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PrefillPolicy {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| SimError::config(format!("unknown prefill policy {s:?}")))
    }
}
