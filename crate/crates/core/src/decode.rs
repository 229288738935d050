//! Decode-side scheduling.
//!
//! The slack scheduler computes, for every active request, how much time is
//! left before its next token deadline once its own step time is accounted
//! for. Requests are then scanned shortest-sequence first and packed into the
//! step while the step fits inside the tightest slack and each addition raises
//! tokens per second. Everything not packed sits this step out. If nothing
//! fits, the whole active set is decoded together.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::costmodel::DecodeStepLut;
use crate::domain::{Request, RequestId, SimTime, SloConfig, Tokens};
use crate::error::SimError;

/// Slack of one request, in signed microseconds, assuming it runs in a step
/// of `bsz` requests.
pub fn compute_slack_at(r: &Request, t_now: SimTime, slo: &SloConfig, lut: &DecodeStepLut, bsz: u64) -> i64 {
    let first = r
        .t_first_token
        .unwrap_or_else(|| panic!("slack requested for {} before its first token", r.id));
    let budget = slo.tpot_slo.as_micros() as i128 * (r.n_gen as i128 + 1);
    let elapsed = t_now.signed_diff(first) as i128;
    let step = lut.lookup(bsz, r.seq_len()).as_micros() as i128;
    i64::try_from(budget - elapsed - step).expect("slack overflows i64")
}

/// Slack against the request's solo step time.
pub fn compute_slack(r: &Request, t_now: SimTime, slo: &SloConfig, lut: &DecodeStepLut) -> i64 {
    compute_slack_at(r, t_now, slo, lut, 1)
}

/// Which batch size the per-request slack charges for the request's own step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlackBatch {
    /// Solo step time, `LUT[1, seq_len]`.
    Solo,
    /// Step time in a batch the size of the whole active set, which is what
    /// the decode-everything fallback costs.
    Active,
}

/// Scheduler view of one active request.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecodeCandidate {
    pub id: RequestId,
    pub seq_len: Tokens,
    pub slack_us: i64,
}

/// One admission made during the greedy scan.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Admission {
    pub id: RequestId,
    pub seq_len: Tokens,
    /// Predicted step time with this request added.
    pub step_time: SimTime,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeSelection {
    /// Requests decoded this step, in admission order (ascending seq_len).
    pub batch: Vec<RequestId>,
    /// Requests withheld this step.
    pub delayed: Vec<RequestId>,
    pub predicted_step_time: SimTime,
    /// True when no request fit the slack and the whole set was batched.
    pub fallback: bool,
    /// Minimum slack over the active set (absent for continuous batching).
    pub min_slack_us: Option<i64>,
    /// Scan trace; empty for fallback and continuous selections.
    pub admissions: Vec<Admission>,
}

/// Greedy slack-guided packing over precomputed slacks.
///
/// Panics on an empty candidate set.
pub fn select_by_slack(cands: &[DecodeCandidate], lut: &DecodeStepLut) -> DecodeSelection {
    assert!(!cands.is_empty(), "decode selection needs a non-empty active set");
    let s_min = cands.iter().map(|c| c.slack_us).min().expect("non-empty");
    let mut order: Vec<&DecodeCandidate> = cands.iter().collect();
    order.sort_by_key(|c| (c.seq_len, c.id));

    let mut admissions: Vec<Admission> = Vec::new();
    let mut delayed = Vec::new();
    let mut t_cur = SimTime::ZERO;
    for c in order {
        let n = admissions.len() as u128;
        let t = lut.lookup(n as u64 + 1, c.seq_len);
        let fits = t.as_micros() as i128 <= s_min as i128;
        // (n + 1) / t > n / t_cur, cross-multiplied.
        let gains = n == 0 || (n + 1) * t_cur.as_micros() as u128 > n * t.as_micros() as u128;
        if fits && gains {
            admissions.push(Admission {
                id: c.id,
                seq_len: c.seq_len,
                step_time: t,
            });
            t_cur = t;
        } else {
            delayed.push(c.id);
        }
    }

    if admissions.is_empty() {
        let max_seq = cands.iter().map(|c| c.seq_len).max().expect("non-empty");
        let mut batch: Vec<&DecodeCandidate> = cands.iter().collect();
        batch.sort_by_key(|c| (c.seq_len, c.id));
        return DecodeSelection {
            batch: batch.into_iter().map(|c| c.id).collect(),
            delayed: Vec::new(),
            predicted_step_time: lut.lookup(cands.len() as u64, max_seq),
            fallback: true,
            min_slack_us: Some(s_min),
            admissions: Vec::new(),
        };
    }

    // The scan is ascending in seq_len, so the last admission carries the
    // batch maximum and t_cur is the step time of the whole batch.
    debug_assert_eq!(
        t_cur,
        lut.lookup(admissions.len() as u64, admissions.last().map_or(0, |a| a.seq_len))
    );
    DecodeSelection {
        batch: admissions.iter().map(|a| a.id).collect(),
        delayed,
        predicted_step_time: t_cur,
        fallback: false,
        min_slack_us: Some(s_min),
        admissions,
    }
}

/// Slack-guided selection with the given slack accounting.
pub fn select_decode_batch_with(
    active: &[&Request],
    t_now: SimTime,
    slo: &SloConfig,
    lut: &DecodeStepLut,
    slack_batch: SlackBatch,
) -> DecodeSelection {
    let bsz = match slack_batch {
        SlackBatch::Solo => 1,
        SlackBatch::Active => active.len() as u64,
    };
    let cands: Vec<DecodeCandidate> = active
        .iter()
        .map(|r| DecodeCandidate {
            id: r.id,
            seq_len: r.seq_len(),
            slack_us: compute_slack_at(r, t_now, slo, lut, bsz),
        })
        .collect();
    select_by_slack(&cands, lut)
}

/// Slack-guided selection charging each request the active-set step time.
pub fn select_decode_batch(
    active: &[&Request],
    t_now: SimTime,
    slo: &SloConfig,
    lut: &DecodeStepLut,
) -> DecodeSelection {
    select_decode_batch_with(active, t_now, slo, lut, SlackBatch::Active)
}

/// Baseline: every active request decodes every step.
pub fn continuous_batching_select(active: &[&Request], lut: &DecodeStepLut) -> DecodeSelection {
    assert!(!active.is_empty(), "decode selection needs a non-empty active set");
    let mut batch: Vec<&Request> = active.to_vec();
    batch.sort_by_key(|r| (r.seq_len(), r.id));
    let max_seq = batch.last().map(|r| r.seq_len()).expect("non-empty");
    DecodeSelection {
        batch: batch.iter().map(|r| r.id).collect(),
        delayed: Vec::new(),
        predicted_step_time: lut.lookup(batch.len() as u64, max_seq),
        fallback: false,
        min_slack_us: None,
        admissions: Vec::new(),
    }
}

/// Decode policy, selected by name in configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DecodePolicy {
    #[serde(rename = "kairos-slack")]
    KairosSlack,
    #[serde(rename = "kairos-slack-solo")]
    KairosSlackSolo,
    #[serde(rename = "continuous")]
    Continuous,
}

impl DecodePolicy {
    pub const ALL: [DecodePolicy; 3] = [
        DecodePolicy::KairosSlack,
        DecodePolicy::KairosSlackSolo,
        DecodePolicy::Continuous,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DecodePolicy::KairosSlack => "kairos-slack",
            DecodePolicy::KairosSlackSolo => "kairos-slack-solo",
            DecodePolicy::Continuous => "continuous",
        }
    }

    pub fn select(self, active: &[&Request], t_now: SimTime, slo: &SloConfig, lut: &DecodeStepLut) -> DecodeSelection {
        match self {
            DecodePolicy::KairosSlack => select_decode_batch_with(active, t_now, slo, lut, SlackBatch::Active),
            DecodePolicy::KairosSlackSolo => select_decode_batch_with(active, t_now, slo, lut, SlackBatch::Solo),
            DecodePolicy::Continuous => continuous_batching_select(active, lut),
        }
    }
}

impl fmt::Display for DecodePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DecodePolicy {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| SimError::config(format!("unknown decode policy {s:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costmodel::{reference_anchors, synth_profile_from_anchors};

    fn lut(gamma: f64) -> DecodeStepLut {
        synth_profile_from_anchors(&reference_anchors(), gamma).unwrap()
    }

    fn decoding(id: u64, input: Tokens, n_gen: Tokens, first_ms: u64) -> Request {
        let mut r = Request::new(RequestId(id), format!("r{id}"), SimTime::ZERO, input, 1000).unwrap();
        r.record_first_token(SimTime::from_millis(first_ms));
        r.n_gen = n_gen;
        r
    }

    fn const_lut(ms: u64) -> DecodeStepLut {
        let mut l = DecodeStepLut::empty(vec![1], vec![1]).unwrap();
        l.set_entry(0, 0, (ms * 1000) as f64, 1).unwrap();
        l
    }

    #[test]
    fn slack_examples() {
        let slo = SloConfig::default();
        let r = decoding(0, 8192, 3, 0);
        assert_eq!(
            compute_slack(&r, SimTime::from_millis(120), &slo, &const_lut(11)),
            69_000
        );
        let r = decoding(0, 8192, 0, 5);
        assert_eq!(compute_slack(&r, SimTime::from_millis(5), &slo, &lut(0.03)), 39_000);
        // seq 131072 (input 131071 plus one decoded token) hits the 40.3 ms anchor.
        let r = decoding(0, 131_071, 1, 0);
        assert_eq!(compute_slack(&r, SimTime::from_millis(150), &slo, &lut(0.03)), -90_300);
    }

    #[test]
    #[should_panic(expected = "before its first token")]
    fn slack_before_first_token_panics() {
        let r = Request::new(RequestId(0), "a", SimTime::ZERO, 10, 10).unwrap();
        compute_slack(&r, SimTime::ZERO, &SloConfig::default(), &const_lut(1));
    }

    #[test]
    fn slack_with_active_batch_size() {
        let slo = SloConfig::default();
        let r = decoding(0, 131_072, 0, 0);
        assert_eq!(
            compute_slack_at(&r, SimTime::ZERO, &slo, &lut(0.03), 2),
            50_000 - 41_509
        );
    }

    #[test]
    fn straggler_is_delayed() {
        let l = lut(0.03);
        let cands = [
            DecodeCandidate {
                id: RequestId(0),
                seq_len: 8192,
                slack_us: 30_000,
            },
            DecodeCandidate {
                id: RequestId(1),
                seq_len: 131_072,
                slack_us: 45_000,
            },
        ];
        let sel = select_by_slack(&cands, &l);
        assert_eq!(sel.batch, vec![RequestId(0)]);
        assert_eq!(sel.delayed, vec![RequestId(1)]);
        assert_eq!(sel.predicted_step_time, SimTime::from_micros(11_000));
        assert!(!sel.fallback);
        assert_eq!(sel.min_slack_us, Some(30_000));
    }

    #[test]
    fn equal_short_requests_are_packed() {
        let l = lut(0.03);
        assert_eq!(l.lookup(2, 8192), SimTime::from_micros(11_330));
        let cands = [
            DecodeCandidate {
                id: RequestId(0),
                seq_len: 8192,
                slack_us: 30_000,
            },
            DecodeCandidate {
                id: RequestId(1),
                seq_len: 8192,
                slack_us: 30_000,
            },
        ];
        let sel = select_by_slack(&cands, &l);
        assert_eq!(sel.batch, vec![RequestId(0), RequestId(1)]);
        assert_eq!(sel.predicted_step_time, SimTime::from_micros(11_330));
    }

    #[test]
    fn no_slack_falls_back_to_everything() {
        let l = lut(0.03);
        let cands = [DecodeCandidate {
            id: RequestId(3),
            seq_len: 8192,
            slack_us: -5_000,
        }];
        let sel = select_by_slack(&cands, &l);
        assert!(sel.fallback);
        assert_eq!(sel.batch, vec![RequestId(3)]);
        assert!(sel.delayed.is_empty());
        assert_eq!(sel.predicted_step_time, SimTime::from_micros(11_000));
    }

    #[test]
    fn continuous_batches_everything() {
        let l = lut(0.03);
        let s = decoding(0, 8192, 0, 0);
        let long = decoding(1, 131_072, 0, 0);
        let sel = continuous_batching_select(&[&long, &s], &l);
        assert_eq!(sel.batch, vec![RequestId(0), RequestId(1)]);
        assert_eq!(sel.predicted_step_time, SimTime::from_micros(41_509));
        // The short request idles for the difference to its own solo step.
        let idle = sel.predicted_step_time - l.lookup(1, 8192);
        assert!((29_000..=31_000).contains(&idle.as_micros()));
        let sel = continuous_batching_select(&[&s], &l);
        assert_eq!(sel.batch, vec![RequestId(0)]);
    }

    #[test]
    fn slack_and_continuous_agree_on_uniform_sequences() {
        let l = lut(0.03);
        let reqs: Vec<Request> = (0..4).map(|i| decoding(i, 8192, 0, 0)).collect();
        let refs: Vec<&Request> = reqs.iter().collect();
        let a = select_decode_batch(&refs, SimTime::ZERO, &SloConfig::default(), &l);
        let b = continuous_batching_select(&refs, &l);
        assert_eq!(a.batch, b.batch);
        assert_eq!(a.predicted_step_time, b.predicted_step_time);
    }

    #[test]
    fn policy_names_round_trip() {
        for p in DecodePolicy::ALL {
            assert_eq!(p.name().parse::<DecodePolicy>().unwrap(), p);
        }
        assert!("greedy".parse::<DecodePolicy>().is_err());
    }
}
