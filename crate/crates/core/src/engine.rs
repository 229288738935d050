//! Discrete-event simulation of one prefill pool feeding one decode pool.
//!
//! Requests arrive, are prefilled in chunks, transfer their KV cache, wait
//! for KV capacity on the decode side and then decode one token per step
//! until their output length is reached. The two pools run independently.
//!
//! Events at the same instant are all applied before any scheduling decision
//! is made, in the order Arrival, TransferDone, PrefillStepDone,
//! DecodeStepDone (then insertion order). After the instant is drained the
//! engine admits waiting requests to decode, and starts a prefill or decode
//! step on whichever pool is idle.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};
use std::io::Write;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::costmodel::{
    ceil_us, reference_prefill_anchors, ChunkSpan, DecodeStepLut, PrefillAnchor, PrefillCost,
    PrefillThroughputEstimator, ProfileFile, SynthProfile,
};
use crate::decode::DecodePolicy;
use crate::domain::{Phase, Request, RequestId, SimTime, SloConfig, Tokens};
use crate::error::{Result, SimError};
use crate::metrics::{report_from_requests, MetricsReport};
use crate::prefill::{PrefillBatch, PrefillPolicy, PrefillQueue};

/// Where the decode step-time table comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecodeProfile {
    Synth(SynthProfile),
    Table(ProfileFile),
    Path { path: PathBuf },
}

impl Default for DecodeProfile {
    fn default() -> Self {
        DecodeProfile::Synth(SynthProfile::default())
    }
}

impl DecodeProfile {
    /// Builds the table and returns the profile's own prefill sample, if any.
    pub fn resolve(&self) -> Result<(DecodeStepLut, Option<PrefillAnchor>)> {
        match self {
            DecodeProfile::Synth(s) => Ok((s.build()?, None)),
            DecodeProfile::Table(t) => Ok((t.to_lut()?, Some(t.prefill_anchor))),
            DecodeProfile::Path { path } => {
                let t = ProfileFile::load(path)?;
                Ok((t.to_lut()?, Some(t.prefill_anchor)))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    /// Prefill chunk budget per step, in tokens.
    pub chunk_budget: Tokens,
    /// Decode-side KV capacity. Each admitted request reserves
    /// `input_len + output_len` tokens until it finishes.
    pub kv_capacity_tokens: Tokens,
    pub transfer_base_us: u64,
    pub transfer_per_token_us: f64,
    pub prefill_policy: PrefillPolicy,
    pub decode_policy: DecodePolicy,
    pub slo: SloConfig,
    /// Samples that seed the prefill throughput estimator. When empty, the
    /// decode profile's prefill sample is used.
    pub prefill_seed: Vec<PrefillAnchor>,
    /// Ground-truth prefill cost.
    pub prefill_cost: PrefillCost,
    pub decode_profile: DecodeProfile,
    /// Half-width of the uniform multiplicative noise on ground-truth decode
    /// step times.
    pub decode_noise: f64,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            chunk_budget: 8192,
            kv_capacity_tokens: 1_000_000,
            transfer_base_us: 0,
            transfer_per_token_us: 0.0,
            prefill_policy: PrefillPolicy::KairosUrgency,
            decode_policy: DecodePolicy::KairosSlack,
            slo: SloConfig::default(),
            prefill_seed: reference_prefill_anchors(),
            prefill_cost: PrefillCost::default(),
            decode_profile: DecodeProfile::default(),
            decode_noise: 0.0,
            seed: 0,
        }
    }
}

impl ClusterConfig {
    pub fn with_policies(mut self, prefill: PrefillPolicy, decode: DecodePolicy) -> Self {
        self.prefill_policy = prefill;
        self.decode_policy = decode;
        self
    }

    pub fn policy_pair(&self) -> String {
        format!("{}+{}", self.prefill_policy, self.decode_policy)
    }

    pub fn validate(&self) -> Result<()> {
        if self.chunk_budget == 0 {
            return Err(SimError::config("chunk_budget must be >= 1"));
        }
        if self.kv_capacity_tokens == 0 {
            return Err(SimError::config("kv_capacity_tokens must be >= 1"));
        }
        if !(self.transfer_per_token_us.is_finite() && self.transfer_per_token_us >= 0.0) {
            return Err(SimError::config("transfer_per_token_us must be >= 0"));
        }
        if !(self.decode_noise.is_finite() && (0.0..1.0).contains(&self.decode_noise)) {
            return Err(SimError::config("decode_noise must be in [0, 1)"));
        }
        self.slo.validate()?;
        self.prefill_cost.validate()
    }

    fn transfer_delay(&self, input_len: Tokens) -> SimTime {
        let per = (self.transfer_per_token_us * input_len as f64).ceil() as u64;
        SimTime::from_micros(self.transfer_base_us) + SimTime::from_micros(per)
    }
}

/// What happened at an event. Declaration order is the processing order for
/// events sharing a timestamp.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum EventKind {
    Arrival(RequestId),
    TransferDone(RequestId),
    PrefillStepDone,
    DecodeStepDone,
}

impl EventKind {
    fn priority(self) -> u8 {
        match self {
            EventKind::Arrival(_) => 0,
            EventKind::TransferDone(_) => 1,
            EventKind::PrefillStepDone => 2,
            EventKind::DecodeStepDone => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SimEvent {
    pub time: SimTime,
    pub kind: EventKind,
    pub seq: u64,
}

impl SimEvent {
    fn key(&self) -> (SimTime, u8, u64) {
        (self.time, self.kind.priority(), self.seq)
    }
}

impl Ord for SimEvent {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key().cmp(&other.key())
    }
}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// One line of the optional event log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub t_us: u64,
    pub kind: String,
    pub req: Option<String>,
    pub detail: serde_json::Value,
}

pub fn write_event_log(mut out: impl Write, log: &[LogEntry]) -> Result<()> {
    for e in log {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineStats {
    pub events: u64,
    pub prefill_steps: u64,
    pub decode_steps: u64,
    pub fallback_steps: u64,
    pub delayed_request_steps: u64,
}

/// Everything a finished simulation produced.
#[derive(Clone, Debug)]
pub struct SimOutcome {
    pub requests: Vec<Request>,
    pub report: MetricsReport,
    pub log: Vec<LogEntry>,
    pub stats: EngineStats,
    /// Decode LUT after all online updates.
    pub lut: DecodeStepLut,
}

struct InflightPrefill {
    batch: PrefillBatch,
    started: SimTime,
}

struct InflightDecode {
    batch: Vec<RequestId>,
    max_seq: Tokens,
    started: SimTime,
}

pub struct Simulation {
    cfg: ClusterConfig,
    requests: Vec<Request>,
    lut: DecodeStepLut,
    truth: DecodeStepLut,
    est: PrefillThroughputEstimator,
    events: BinaryHeap<Reverse<SimEvent>>,
    next_seq: u64,
    now: SimTime,
    prefill_queue: Vec<RequestId>,
    prefill_inflight: Option<InflightPrefill>,
    /// Transferred requests waiting for KV capacity, by prefill finish time.
    decode_waiting: BTreeSet<(SimTime, RequestId)>,
    active: Vec<RequestId>,
    kv_reserved: Tokens,
    decode_inflight: Option<InflightDecode>,
    rng: ChaCha8Rng,
    log: Option<Vec<LogEntry>>,
    stats: EngineStats,
}

impl Simulation {
    /// Validates the configuration and workload and prepares the event queue.
    ///
    /// The workload must be sorted by arrival time, numbered `0..n` in that
    /// order, and untouched by any previous run.
    pub fn new(cfg: ClusterConfig, workload: Vec<Request>) -> Result<Self> {
        cfg.validate()?;
        let (lut, profile_anchor) = cfg.decode_profile.resolve()?;
        lut.ensure_populated()?;
        let seed: Vec<PrefillAnchor> = if cfg.prefill_seed.is_empty() {
            profile_anchor.into_iter().collect()
        } else {
            cfg.prefill_seed.clone()
        };
        let est = PrefillThroughputEstimator::seeded(&seed)?;

        for (i, r) in workload.iter().enumerate() {
            if r.id != RequestId(i as u64) {
                return Err(SimError::config(format!(
                    "workload ids must be 0..n in arrival order; position {i} holds {}",
                    r.id
                )));
            }
            if i > 0 && workload[i - 1].arrival_time > r.arrival_time {
                return Err(SimError::config("workload must be sorted by arrival time"));
            }
            if r.phase != Phase::Queued || r.prefill_done_tokens != 0 || !r.token_timestamps.is_empty() {
                return Err(SimError::config(format!(
                    "request {:?} has already been simulated",
                    r.label
                )));
            }
            if r.kv_reservation() > cfg.kv_capacity_tokens {
                return Err(SimError::config(format!(
                    "request {:?} needs {} KV tokens but capacity is {}",
                    r.label,
                    r.kv_reservation(),
                    cfg.kv_capacity_tokens
                )));
            }
        }

        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut sim = Simulation {
            truth: lut.clone(),
            lut,
            est,
            events: BinaryHeap::new(),
            next_seq: 0,
            now: SimTime::ZERO,
            prefill_queue: Vec::new(),
            prefill_inflight: None,
            decode_waiting: BTreeSet::new(),
            active: Vec::new(),
            kv_reserved: 0,
            decode_inflight: None,
            rng,
            log: None,
            stats: EngineStats::default(),
            requests: workload,
            cfg,
        };
        for i in 0..sim.requests.len() {
            let r = &sim.requests[i];
            sim.push(r.arrival_time, EventKind::Arrival(r.id));
        }
        Ok(sim)
    }

    /// Records every event in a JSON-lines friendly log.
    pub fn with_event_log(mut self) -> Self {
        self.log = Some(Vec::new());
        self
    }

    fn push(&mut self, time: SimTime, kind: EventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.events.push(Reverse(SimEvent { time, kind, seq }));
    }

    fn log(&mut self, kind: &str, req: Option<RequestId>, detail: serde_json::Value) {
        if let Some(log) = self.log.as_mut() {
            log.push(LogEntry {
                t_us: self.now.as_micros(),
                kind: kind.to_string(),
                req: req.map(|id| self.requests[id.0 as usize].label.clone()),
                detail,
            });
        }
    }

    fn req(&self, id: RequestId) -> &Request {
        &self.requests[id.0 as usize]
    }

    fn req_mut(&mut self, id: RequestId) -> &mut Request {
        &mut self.requests[id.0 as usize]
    }

    fn labels(&self, ids: &[RequestId]) -> Vec<String> {
        ids.iter().map(|id| self.req(*id).label.clone()).collect()
    }

    /// Drives the event loop until nothing is left to do.
    pub fn run(mut self) -> Result<SimOutcome> {
        while let Some(Reverse(ev)) = self.events.pop() {
            debug_assert!(ev.time >= self.now, "time went backwards");
            self.now = ev.time;
            self.handle(ev);
            while self.events.peek().is_some_and(|Reverse(next)| next.time == self.now) {
                let Reverse(next) = self.events.pop().expect("peeked");
                self.handle(next);
            }
            self.schedule();
        }

        if let Some(r) = self.requests.iter().find(|r| !r.is_finished()) {
            return Err(SimError::config(format!(
                "simulation stalled with request {:?} in phase {:?}",
                r.label, r.phase
            )));
        }
        let report = report_from_requests(&self.requests, &self.cfg.slo, self.cfg.seed, Some(self.cfg.clone()));
        Ok(SimOutcome {
            requests: self.requests,
            report,
            log: self.log.unwrap_or_default(),
            stats: self.stats,
            lut: self.lut,
        })
    }

    fn handle(&mut self, ev: SimEvent) {
        self.stats.events += 1;
        match ev.kind {
            EventKind::Arrival(id) => {
                self.prefill_queue.push(id);
                self.log("arrival", Some(id), json!({}));
            }
            EventKind::TransferDone(id) => self.on_transfer_done(id),
            EventKind::PrefillStepDone => self.on_prefill_done(),
            EventKind::DecodeStepDone => self.on_decode_done(),
        }
    }

    fn schedule(&mut self) {
        self.admit_to_decode();
        if self.prefill_inflight.is_none() && !self.prefill_queue.is_empty() {
            self.start_prefill();
        }
        if self.decode_inflight.is_none() && !self.active.is_empty() {
            self.start_decode();
        }
        debug_assert!(self.prefill_queue.is_empty() || self.prefill_inflight.is_some());
    }

    fn start_prefill(&mut self) {
        let batch = {
            let queue = PrefillQueue::new(self.prefill_queue.iter().map(|id| &self.requests[id.0 as usize]));
            self.cfg
                .prefill_policy
                .select(&queue, self.cfg.chunk_budget, self.now, &self.est, &self.cfg.slo)
        };
        assert!(
            !batch.is_empty(),
            "prefill policy returned an empty batch for a non-empty queue"
        );
        let spans: Vec<ChunkSpan> = batch
            .entries
            .iter()
            .map(|c| {
                let r = self.req(c.id);
                ChunkSpan {
                    start: r.prefix_hit_len + r.prefill_done_tokens,
                    len: c.len,
                }
            })
            .collect();
        let duration = self.cfg.prefill_cost.step_duration(&spans).max(SimTime::from_micros(1));
        let now = self.now;
        for c in &batch.entries {
            let r = self.req_mut(c.id);
            r.t_prefill_start.get_or_insert(now);
            if r.phase == Phase::Queued {
                r.set_phase(Phase::Prefilling);
            }
        }
        let chunks: Vec<_> = batch
            .entries
            .iter()
            .map(|c| json!([self.req(c.id).label, c.len]))
            .collect();
        self.log(
            "prefill_step_start",
            None,
            json!({"chunks": chunks, "duration_us": duration.as_micros()}),
        );
        self.stats.prefill_steps += 1;
        self.prefill_inflight = Some(InflightPrefill { batch, started: now });
        self.push(now + duration, EventKind::PrefillStepDone);
    }

    fn on_prefill_done(&mut self) {
        let InflightPrefill { batch, started } = self.prefill_inflight.take().expect("no prefill step in flight");
        let now = self.now;
        let mut completed = Vec::new();
        for c in &batch.entries {
            let r = self.req_mut(c.id);
            r.prefill_done_tokens += c.len;
            if r.remaining_prefill_tokens() == 0 {
                r.t_prefill_finish = Some(now);
                r.set_phase(Phase::Transferring);
                completed.push(c.id);
            }
        }
        self.est.update(batch.total_tokens(), now - started);
        self.prefill_queue.retain(|id| !completed.contains(id));
        let labels = self.labels(&completed);
        self.log(
            "prefill_step_done",
            None,
            json!({"tokens": batch.total_tokens(), "completed": labels, "throughput": self.est.throughput()}),
        );
        for id in completed {
            let delay = self.cfg.transfer_delay(self.req(id).input_len);
            self.push(now + delay, EventKind::TransferDone(id));
        }
    }

    fn on_transfer_done(&mut self, id: RequestId) {
        let now = self.now;
        let r = self.req_mut(id);
        r.record_first_token(now);
        if r.decode_complete() {
            r.set_phase(Phase::Finished);
            self.log("transfer_done", Some(id), json!({"finished": true}));
            return;
        }
        r.set_phase(Phase::DecodeWaiting);
        let key = (r.t_prefill_finish.expect("transferred before prefill finished"), id);
        self.decode_waiting.insert(key);
        self.log("transfer_done", Some(id), json!({"finished": false}));
    }

    /// Admits waiting requests in prefill-finish order while their
    /// reservations fit. Stops at the first one that does not.
    fn admit_to_decode(&mut self) {
        while let Some(&(t, id)) = self.decode_waiting.first() {
            let need = self.req(id).kv_reservation();
            if self.kv_reserved + need > self.cfg.kv_capacity_tokens {
                break;
            }
            self.decode_waiting.remove(&(t, id));
            self.kv_reserved += need;
            self.req_mut(id).set_phase(Phase::Decoding);
            self.active.push(id);
            self.log("admit", Some(id), json!({"kv_reserved": self.kv_reserved}));
        }
        assert!(self.kv_reserved <= self.cfg.kv_capacity_tokens);
    }

    fn start_decode(&mut self) {
        let selection = {
            let active: Vec<&Request> = self.active.iter().map(|id| &self.requests[id.0 as usize]).collect();
            self.cfg
                .decode_policy
                .select(&active, self.now, &self.cfg.slo, &self.lut)
        };
        let batch = selection.batch;
        let max_seq = batch
            .iter()
            .map(|id| self.req(*id).seq_len())
            .max()
            .expect("empty decode batch");
        let base = self.truth.lookup_us(batch.len() as u64, max_seq);
        let actual = if self.cfg.decode_noise > 0.0 {
            let eps = self.cfg.decode_noise;
            let u: f64 = self.rng.random_range(-eps..=eps);
            ceil_us(base * (1.0 + u))
        } else {
            ceil_us(base)
        }
        .max(SimTime::from_micros(1));

        self.stats.decode_steps += 1;
        if selection.fallback {
            self.stats.fallback_steps += 1;
        }
        self.stats.delayed_request_steps += selection.delayed.len() as u64;
        let detail = json!({
            "batch": self.labels(&batch),
            "delayed": self.labels(&selection.delayed),
            "predicted_us": selection.predicted_step_time.as_micros(),
            "actual_us": actual.as_micros(),
            "fallback": selection.fallback,
        });
        self.log("decode_step_start", None, detail);
        let now = self.now;
        self.decode_inflight = Some(InflightDecode {
            batch,
            max_seq,
            started: now,
        });
        self.push(now + actual, EventKind::DecodeStepDone);
    }

    fn on_decode_done(&mut self) {
        let InflightDecode {
            batch,
            max_seq,
            started,
        } = self.decode_inflight.take().expect("no decode step in flight");
        let now = self.now;
        self.lut.update(batch.len() as u64, max_seq, now - started);
        let mut finished = Vec::new();
        for &id in &batch {
            let r = self.req_mut(id);
            r.record_decode_token(now);
            if r.decode_complete() {
                r.set_phase(Phase::Finished);
                finished.push(id);
            }
        }
        for &id in &finished {
            self.kv_reserved -= self.req(id).kv_reservation();
        }
        self.active.retain(|id| !finished.contains(id));
        let detail = json!({"batch": self.labels(&batch), "finished": self.labels(&finished)});
        self.log("decode_step_done", None, detail);
    }
}

/// Runs one simulation to completion and returns its metrics.
pub fn run(config: ClusterConfig, workload: Vec<Request>) -> Result<MetricsReport> {
    Ok(Simulation::new(config, workload)?.run()?.report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costmodel::LutAnchor;

    fn const_profile(ms: u64) -> DecodeProfile {
        DecodeProfile::Synth(SynthProfile {
            anchors: vec![LutAnchor {
                bsz: 1,
                seq_len: 1,
                step_time: SimTime::from_millis(ms),
            }],
            batch_growth: 0.0,
            ..SynthProfile::default()
        })
    }

    fn simple_cfg() -> ClusterConfig {
        ClusterConfig {
            prefill_seed: vec![PrefillAnchor {
                tokens: 10_000,
                duration_us: 1_000_000,
            }],
            prefill_cost: PrefillCost::Linear {
                tokens: 10_000,
                duration_us: 1_000_000,
            },
            decode_profile: const_profile(10),
            ..ClusterConfig::default()
        }
    }

    fn one(input: Tokens, output: Tokens) -> Vec<Request> {
        vec![Request::new(RequestId(0), "a", SimTime::ZERO, input, output).unwrap()]
    }

    #[test]
    fn single_request_timeline() {
        let out = Simulation::new(simple_cfg(), one(100, 2)).unwrap().run().unwrap();
        let r = &out.requests[0];
        assert_eq!(r.t_prefill_finish, Some(SimTime::from_millis(10)));
        assert_eq!(r.t_first_token, Some(SimTime::from_millis(10)));
        assert_eq!(
            r.token_timestamps,
            vec![SimTime::from_millis(10), SimTime::from_millis(20)]
        );
        let row = &out.report.rows[0];
        assert_eq!(row.ttft_us, 10_000);
        assert_eq!(row.mean_tpot_us, 10_000.0);
    }

    #[test]
    fn empty_workload() {
        let out = Simulation::new(simple_cfg(), Vec::new()).unwrap().run().unwrap();
        assert_eq!(out.stats.events, 0);
        assert!(out.report.summary.empty);
        assert!(out.report.rows.is_empty());
    }

    #[test]
    fn long_request_alone_misses_ttft() {
        let cfg = ClusterConfig {
            decode_profile: const_profile(10),
            ..ClusterConfig::default()
        };
        let rep = run(cfg, one(131_072, 2)).unwrap();
        assert_eq!(rep.rows[0].ttft_us, 8_800_000);
        assert!(!rep.rows[0].ttft_met);
    }

    #[test]
    fn capacity_smaller_than_request_is_rejected() {
        let cfg = ClusterConfig {
            kv_capacity_tokens: 101,
            ..simple_cfg()
        };
        assert!(matches!(Simulation::new(cfg, one(100, 2)), Err(SimError::Config(_))));
        let cfg = ClusterConfig {
            kv_capacity_tokens: 102,
            ..simple_cfg()
        };
        assert!(Simulation::new(cfg, one(100, 2)).is_ok());
    }

    #[test]
    fn empty_lut_refuses_to_start() {
        let lut = DecodeStepLut::empty(vec![1], vec![1]).unwrap();
        let table = ProfileFile::from_lut(
            &lut,
            PrefillAnchor {
                tokens: 1,
                duration_us: 1,
            },
        );
        let cfg = ClusterConfig {
            decode_profile: DecodeProfile::Table(table),
            ..simple_cfg()
        };
        assert!(matches!(Simulation::new(cfg, one(10, 2)), Err(SimError::Config(_))));
    }

    #[test]
    fn unsorted_or_misnumbered_workloads_are_rejected() {
        let mut w = vec![
            Request::new(RequestId(0), "a", SimTime::from_secs(1), 10, 2).unwrap(),
            Request::new(RequestId(1), "b", SimTime::ZERO, 10, 2).unwrap(),
        ];
        assert!(Simulation::new(simple_cfg(), w.clone()).is_err());
        w.swap(0, 1);
        assert!(Simulation::new(simple_cfg(), w).is_err());
    }

    #[test]
    fn prefill_step_duration_at_reference_rate() {
        let cfg = ClusterConfig {
            decode_profile: const_profile(10),
            ..ClusterConfig::default()
        };
        let out = Simulation::new(cfg, one(8192, 1))
            .unwrap()
            .with_event_log()
            .run()
            .unwrap();
        let start = out.log.iter().find(|e| e.kind == "prefill_step_start").unwrap();
        assert_eq!(start.detail["duration_us"], 550_000);
        assert_eq!(out.requests[0].t_prefill_finish, Some(SimTime::from_millis(550)));
        // Single-token request finishes without any decode step.
        assert_eq!(out.stats.decode_steps, 0);
        assert!(out.report.rows[0].tpot_met);
    }

    #[test]
    fn delayed_request_keeps_its_timestamps() {
        let cfg = ClusterConfig {
            decode_policy: DecodePolicy::KairosSlack,
            // One prefill step covers both prompts so they start decoding together.
            chunk_budget: 200_000,
            prefill_seed: vec![PrefillAnchor {
                tokens: 1_000_000,
                duration_us: 1,
            }],
            prefill_cost: PrefillCost::Linear {
                tokens: 1_000_000_000,
                duration_us: 1,
            },
            ..ClusterConfig::default()
        };
        let w = vec![
            Request::new(RequestId(0), "S", SimTime::ZERO, 8192, 50).unwrap(),
            Request::new(RequestId(1), "L", SimTime::ZERO, 131_072, 50).unwrap(),
        ];
        let out = Simulation::new(cfg, w).unwrap().with_event_log().run().unwrap();
        let s = &out.requests[0];
        let l = &out.requests[1];
        assert!(out.stats.delayed_request_steps > 0);
        // The short request advanced further than the long one at some point.
        assert!(s.token_timestamps.last() < l.token_timestamps.last());
        assert_eq!(out.report.summary.total_deadline_misses, 0);
    }

    #[test]
    fn transfer_delay_and_kv_admission() {
        let cfg = ClusterConfig {
            transfer_base_us: 1_000,
            transfer_per_token_us: 10.0,
            kv_capacity_tokens: 150,
            ..simple_cfg()
        };
        let w = vec![
            Request::new(RequestId(0), "a", SimTime::ZERO, 100, 3).unwrap(),
            Request::new(RequestId(1), "b", SimTime::ZERO, 100, 3).unwrap(),
        ];
        let out = Simulation::new(cfg, w).unwrap().run().unwrap();
        let a = &out.requests[0];
        let b = &out.requests[1];
        // 200 tokens prefill in one 20 ms step, then 1 ms + 1 ms of transfer.
        assert_eq!(a.t_prefill_finish, Some(SimTime::from_millis(20)));
        assert_eq!(a.t_first_token, Some(SimTime::from_millis(22)));
        // b cannot be admitted until a frees its 103-token reservation.
        assert_eq!(a.token_timestamps[2], SimTime::from_millis(42));
        assert_eq!(b.token_timestamps[1], SimTime::from_millis(52));
    }

    #[test]
    fn noisy_runs_are_reproducible() {
        let cfg = ClusterConfig {
            decode_noise: 0.2,
            seed: 9,
            ..ClusterConfig::default()
        };
        let w = crate::workload::gen_longtail(&crate::workload::LongTailSpec {
            n_requests: 40,
            ..Default::default()
        })
        .unwrap();
        let a = Simulation::new(cfg.clone(), w.clone())
            .unwrap()
            .with_event_log()
            .run()
            .unwrap();
        let b = Simulation::new(cfg, w).unwrap().with_event_log().run().unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.report, b.report);
    }

    #[test]
    fn event_ordering_at_equal_times() {
        let mk = |t, kind, seq| SimEvent {
            time: SimTime::from_micros(t),
            kind,
            seq,
        };
        let mut v = [
            mk(5, EventKind::DecodeStepDone, 0),
            mk(5, EventKind::PrefillStepDone, 1),
            mk(5, EventKind::TransferDone(RequestId(0)), 2),
            mk(5, EventKind::Arrival(RequestId(1)), 3),
            mk(4, EventKind::DecodeStepDone, 4),
        ];
        v.sort();
        let kinds: Vec<u8> = v.iter().map(|e| e.kind.priority()).collect();
        assert_eq!(v[0].time, SimTime::from_micros(4));
        assert_eq!(kinds[1..], [0, 1, 2, 3]);
    }
}
