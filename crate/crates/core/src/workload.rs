//! Trace files and synthetic long-tail workloads.
//!
//! Traces are JSON Lines, one request per line:
//!
//! ```text
//! {"id":"a","arrival_s":0.0,"input_tokens":8192,"output_tokens":100}
//! {"id":"b","arrival_s":0.25,"input_tokens":131072,"output_tokens":40,"prefix_hit_tokens":4096}
//! ```

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Deserializer, Serialize};

use crate::domain::{Request, RequestId, SimTime, Tokens};
use crate::error::{Result, SimError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    #[serde(deserialize_with = "string_or_number")]
    pub id: String,
    pub arrival_s: f64,
    pub input_tokens: Tokens,
    pub output_tokens: Tokens,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub prefix_hit_tokens: Tokens,
}

fn is_zero(v: &Tokens) -> bool {
    *v == 0
}

fn string_or_number<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Id {
        S(String),
        N(serde_json::Number),
    }
    Ok(match Id::deserialize(d)? {
        Id::S(s) => s,
        Id::N(n) => n.to_string(),
    })
}

impl TraceRecord {
    pub fn from_request(r: &Request) -> Self {
        TraceRecord {
            id: r.label.clone(),
            arrival_s: r.arrival_time.as_secs_f64(),
            input_tokens: r.input_len,
            output_tokens: r.output_len,
            prefix_hit_tokens: r.prefix_hit_len,
        }
    }
}

/// Turns records into requests sorted by arrival (stable with respect to
/// input order) and numbers them in that order.
pub fn requests_from_records(records: Vec<TraceRecord>) -> Result<Vec<Request>> {
    let mut seen = HashSet::with_capacity(records.len());
    let mut timed = Vec::with_capacity(records.len());
    for rec in records {
        if !seen.insert(rec.id.clone()) {
            return Err(SimError::DuplicateId(rec.id));
        }
        let t = SimTime::from_secs_f64(rec.arrival_s)?;
        timed.push((t, rec));
    }
    timed.sort_by_key(|(t, _)| *t);
    timed
        .into_iter()
        .enumerate()
        .map(|(i, (t, rec))| {
            Request::with_prefix_hit(
                RequestId(i as u64),
                rec.id,
                t,
                rec.input_tokens,
                rec.output_tokens,
                rec.prefix_hit_tokens,
            )
        })
        .collect()
}

pub fn load_trace(path: &Path) -> Result<Vec<Request>> {
    let file = std::fs::File::open(path)?;
    read_trace(BufReader::new(file), &path.display().to_string())
}

/// Parses JSONL from any reader. Blank lines are skipped; anything else that
/// fails to parse aborts with its 1-based line number.
pub fn read_trace(reader: impl BufRead, source: &str) -> Result<Vec<Request>> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| SimError::Parse {
            path: source.to_string(),
            line: i + 1,
            message,
        };
        let rec: TraceRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if !(rec.arrival_s.is_finite() && rec.arrival_s >= 0.0) {
            return Err(parse_err(format!("arrival_s must be >= 0, got {}", rec.arrival_s)));
        }
        if rec.input_tokens == 0 || rec.output_tokens == 0 {
            return Err(parse_err("input_tokens and output_tokens must be >= 1".into()));
        }
        if rec.prefix_hit_tokens >= rec.input_tokens {
            return Err(parse_err("prefix_hit_tokens must be < input_tokens".into()));
        }
        records.push(rec);
    }
    requests_from_records(records)
}

pub fn write_trace(mut out: impl Write, requests: &[Request]) -> Result<()> {
    for r in requests {
        serde_json::to_writer(&mut out, &TraceRecord::from_request(r))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Parametric long-tail workload: a lognormal body of ordinary prompts plus a
/// uniform tail of very long ones, with Poisson arrivals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LongTailSpec {
    pub qps: f64,
    pub n_requests: usize,
    pub short_len_log_mean: f64,
    pub short_len_log_sigma: f64,
    pub p_long: f64,
    pub long_len_min: Tokens,
    pub long_len_max: Tokens,
    pub output_log_mean: f64,
    pub output_log_sigma: f64,
    /// Upper clamp for body prompt lengths.
    pub max_input_len: Tokens,
    pub max_output_len: Tokens,
    pub seed: u64,
}

impl Default for LongTailSpec {
    fn default() -> Self {
        LongTailSpec {
            qps: 2.0,
            n_requests: 1000,
            short_len_log_mean: 2048f64.ln(),
            short_len_log_sigma: 1.0,
            p_long: 0.05,
            long_len_min: 65_536,
            long_len_max: 131_072,
            output_log_mean: 150f64.ln(),
            output_log_sigma: 0.8,
            max_input_len: 131_072,
            max_output_len: 2048,
            seed: 42,
        }
    }
}

impl LongTailSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SimError::config(format!("long-tail spec: {m}")));
        if !(self.qps.is_finite() && self.qps > 0.0) {
            return bad("qps must be > 0");
        }
        if !(0.0..=1.0).contains(&self.p_long) {
            return bad("p_long must be in [0, 1]");
        }
        if self.long_len_min == 0 || self.long_len_min > self.long_len_max {
            return bad("need 1 <= long_len_min <= long_len_max");
        }
        if !(self.short_len_log_sigma >= 0.0 && self.output_log_sigma >= 0.0) {
            return bad("log sigmas must be >= 0");
        }
        if !(self.short_len_log_mean.is_finite() && self.output_log_mean.is_finite()) {
            return bad("log means must be finite");
        }
        if self.max_input_len == 0 || self.max_output_len == 0 {
            return bad("length caps must be >= 1");
        }
        Ok(())
    }
}

fn clamp_len(x: f64, max: Tokens) -> Tokens {
    (x.round() as Tokens).clamp(1, max)
}

/// Generates a workload; identical specs give identical workloads. The first
/// request arrives at time zero.
pub fn gen_longtail(spec: &LongTailSpec) -> Result<Vec<Request>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let gaps = Exp::new(spec.qps).map_err(|e| SimError::config(e.to_string()))?;
    let body = LogNormal::new(spec.short_len_log_mean, spec.short_len_log_sigma)
        .map_err(|e| SimError::config(e.to_string()))?;
    let outputs =
        LogNormal::new(spec.output_log_mean, spec.output_log_sigma).map_err(|e| SimError::config(e.to_string()))?;

    let mut t = 0.0f64;
    let mut out = Vec::with_capacity(spec.n_requests);
    for i in 0..spec.n_requests {
        if i > 0 {
            t += gaps.sample(&mut rng);
        }
        let input = if rng.random::<f64>() < spec.p_long {
            rng.random_range(spec.long_len_min..=spec.long_len_max)
        } else {
            clamp_len(body.sample(&mut rng), spec.max_input_len)
        };
        let output = clamp_len(outputs.sample(&mut rng), spec.max_output_len);
        out.push(Request::new(
            RequestId(i as u64),
            format!("r{i:06}"),
            SimTime::from_secs_f64(t)?,
            input,
            output,
        )?);
    }
    Ok(out)
}

/// Observed arrival rate `(n - 1) / span`.
pub fn observed_qps(workload: &[Request]) -> Option<f64> {
    let first = workload.first()?.arrival_time;
    let last = workload.last()?.arrival_time;
    let span = last.checked_sub(first)?.as_secs_f64();
    (span > 0.0).then(|| (workload.len() - 1) as f64 / span)
}

/// Stretches or compresses arrival times so the observed rate becomes
/// `target_qps`. Lengths and order are untouched.
pub fn rescale_qps(workload: &[Request], target_qps: f64) -> Result<Vec<Request>> {
    if !(target_qps.is_finite() && target_qps > 0.0) {
        return Err(SimError::config(format!("target qps must be > 0, got {target_qps}")));
    }
    let original = observed_qps(workload)
        .ok_or_else(|| SimError::config("cannot rescale a workload with fewer than two distinct arrival times"))?;
    let factor = original / target_qps;
    workload
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.arrival_time = SimTime::from_secs_f64(r.arrival_time.as_secs_f64() * factor)?;
            Ok(r)
        })
        .collect()
}
